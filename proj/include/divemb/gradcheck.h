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

#ifndef DIVEMB_GRADCHECK_H_
#define DIVEMB_GRADCHECK_H_

#include <cstdint>
#include <string>
#include <vector>

namespace divemb {

struct GradcheckRow {
  std::string name;
  size_t cases = 0;
  double max_rel_err = 0.0;
  double threshold = 0.0;
  bool pass() const { return max_rel_err < threshold; }
};

struct GradcheckOptions {
  uint64_t seed = 7;
  // Empty runs everything; otherwise a similarity name ("smooth-chamfer",
  // "chamfer", "mil", "mp") or "end-to-end".
  std::string only;
  size_t pairs = 200;   // random set pairs per similarity kind
  size_t probes = 20;   // parameter probes for the end-to-end check
};

// Closed-form similarity gradients against the tape and central differences
// (rel-err < 1e-6), plus the end-to-end predictor + loss gradient against
// central differences on random parameter probes (rel-err < 1e-4).
std::vector<GradcheckRow> RunGradcheck(const GradcheckOptions& options);

}  // namespace divemb

#endif  // DIVEMB_GRADCHECK_H_
