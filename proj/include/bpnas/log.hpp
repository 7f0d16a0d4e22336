// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdlib>
#include <iostream>
#include <mutex>
#include <string_view>

namespace bpnas::logging {

enum class Level { warn = 1, info = 2, debug = 3 };

/// Verbosity from BPNAS_VERBOSITY: 0 silent, 1 warnings (default), 2 info, 3 debug.
inline int verbosity() {
  static const int v = [] {
    const char* env = std::getenv("BPNAS_VERBOSITY");
    return env ? std::atoi(env) : 1;
  }();
  return v;
}

inline void write(Level level, std::string_view msg) {
  if (static_cast<int>(level) > verbosity()) return;
  static std::mutex mu;
  std::lock_guard lock(mu);
  const char* tag = level == Level::warn ? "warning" : level == Level::info ? "info" : "debug";
  std::cerr << "[bpnas " << tag << "] " << msg << '\n';
}

inline void warn(std::string_view msg) { write(Level::warn, msg); }
inline void info(std::string_view msg) { write(Level::info, msg); }
inline void debug(std::string_view msg) { write(Level::debug, msg); }

}  // namespace bpnas::logging
