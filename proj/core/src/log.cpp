#include "histofuse/log.hpp"

#include <iostream>
#include <mutex>

namespace histofuse {

namespace {

std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

LogSink& current_sink() {
  static LogSink sink = [](LogLevel level, std::string_view message) {
    const char* tag = level == LogLevel::warning ? "warning" : level == LogLevel::info ? "info" : "debug";
    std::cerr << "[" << tag << "] " << message << '\n';
  };
  return sink;
}

LogLevel& min_level() {
  static LogLevel level = LogLevel::info;
  return level;
}

}  // namespace

LogSink set_log_sink(LogSink sink) {
  std::lock_guard lock(sink_mutex());
  LogSink old = std::move(current_sink());
  current_sink() = std::move(sink);
  return old;
}

void set_log_level(LogLevel level) {
  std::lock_guard lock(sink_mutex());
  min_level() = level;
}

void log(LogLevel level, std::string_view message) {
  std::lock_guard lock(sink_mutex());
  if (level < min_level() || !current_sink()) return;
  current_sink()(level, message);
}

}  // namespace histofuse
