#pragma once

#include <atomic>
#include <iostream>
#include <string>

namespace rime {

enum class LogLevel { debug = 0, info = 1, warn = 2, silent = 3 };

inline std::atomic<LogLevel>& log_level() {
  static std::atomic<LogLevel> level{LogLevel::info};
  return level;
}

inline void log(LogLevel level, const std::string& msg) {
  if (level < log_level().load()) return;
  static const char* tags[] = {"debug", "info", "warn"};
  std::cerr << "[rime:" << tags[static_cast<int>(level)] << "] " << msg << '\n';
}

inline void log_info(const std::string& msg) { log(LogLevel::info, msg); }
inline void log_warn(const std::string& msg) { log(LogLevel::warn, msg); }

}  // namespace rime
