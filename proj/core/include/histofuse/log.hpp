#pragma once

#include <functional>
#include <string>
#include <string_view>

namespace histofuse {

enum class LogLevel { debug, info, warning };

using LogSink = std::function<void(LogLevel, std::string_view)>;

/// Replaces the process-wide sink (stderr by default) and returns the old one.
LogSink set_log_sink(LogSink sink);
void set_log_level(LogLevel min_level);

void log(LogLevel level, std::string_view message);
inline void log_info(std::string_view message) { log(LogLevel::info, message); }
inline void log_warning(std::string_view message) {
  log(LogLevel::warning, message);
}

}  // namespace histofuse
