// src/core.cc

// Copyright 2026  The ssikit Authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

#include "ssikit/core.h"

#include <atomic>
#include <iostream>
#include <mutex>

namespace ssikit {

namespace {
std::atomic<bool> g_verbose{true};
std::mutex g_log_mutex;
}  // namespace

void SetVerbose(bool verbose) { g_verbose = verbose; }

void LogWarning(std::string_view msg) {
  std::lock_guard<std::mutex> lock(g_log_mutex);
  std::cerr << "WARNING: " << msg << '\n';
}

void LogInfo(std::string_view msg) {
  if (!g_verbose) return;
  std::lock_guard<std::mutex> lock(g_log_mutex);
  std::cerr << "LOG: " << msg << '\n';
}

}  // namespace ssikit
