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

#ifndef DIVEMB_JSON_H_
#define DIVEMB_JSON_H_

#include "json.hpp"

namespace divemb {

// Insertion-ordered so that echoed configs and reports are stable.
using Json = nlohmann::ordered_json;

}  // namespace divemb

#endif  // DIVEMB_JSON_H_
