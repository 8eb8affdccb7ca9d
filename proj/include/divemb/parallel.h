// Copyright 2026 The divemb Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef DIVEMB_PARALLEL_H_
#define DIVEMB_PARALLEL_H_

#include <cstddef>
#include <functional>

namespace divemb {

// Worker count used when a caller passes 0.
size_t DefaultWorkers();

// Calls fn(i) for i in [0, n) on up to `workers` threads (0 = default).
// Indices are dealt round-robin, so callers that write results by index get
// output independent of the worker count. The first exception (by worker)
// is rethrown after all workers finish.
void ParallelFor(size_t n, size_t workers, const std::function<void(size_t)>& fn);

}  // namespace divemb

#endif  // DIVEMB_PARALLEL_H_
