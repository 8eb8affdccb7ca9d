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

#include "divemb/log.h"

#include <atomic>
#include <iostream>
#include <mutex>

namespace divemb {
namespace {

std::atomic<bool> g_enabled{true};
std::mutex g_mutex;

}  // namespace

void LogWarning(std::string_view message) {
  if (!g_enabled.load()) return;
  std::lock_guard<std::mutex> lock(g_mutex);
  std::cerr << "warning: " << message << '\n';
}

void SetWarningsEnabled(bool enabled) { g_enabled.store(enabled); }

}  // namespace divemb
