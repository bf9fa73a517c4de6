#pragma once

// JSON-lines logging to stderr.

#include <chrono>
#include <iostream>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace eigenshot::cli {

enum class LogLevel { kDebug = 0, kInfo = 1, kWarn = 2, kError = 3 };

inline LogLevel& log_threshold() {
  static LogLevel level = LogLevel::kInfo;
  return level;
}

inline std::string_view level_name(LogLevel level) {
  switch (level) {
    case LogLevel::kDebug: return "debug";
    case LogLevel::kInfo: return "info";
    case LogLevel::kWarn: return "warn";
    case LogLevel::kError: return "error";
  }
  return "info";
}

inline void log(LogLevel level, std::string_view message, nlohmann::json fields = nlohmann::json::object()) {
  if (level < log_threshold()) return;
  const auto now = std::chrono::duration_cast<std::chrono::milliseconds>(
      std::chrono::system_clock::now().time_since_epoch());
  fields["ts_ms"] = now.count();
  fields["level"] = level_name(level);
  fields["msg"] = message;
  std::cerr << fields.dump() << '\n';
}

inline void log_info(std::string_view msg, nlohmann::json fields = nlohmann::json::object()) {
  log(LogLevel::kInfo, msg, std::move(fields));
}
inline void log_warn(std::string_view msg, nlohmann::json fields = nlohmann::json::object()) {
  log(LogLevel::kWarn, msg, std::move(fields));
}
inline void log_error(std::string_view msg, nlohmann::json fields = nlohmann::json::object()) {
  log(LogLevel::kError, msg, std::move(fields));
}

}  // namespace eigenshot::cli
