#include "tpc/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace tpc {

namespace {
std::atomic<LogLevel> g_level{LogLevel::quiet};
std::mutex g_mutex;
}  // namespace

void set_log_level(LogLevel level) { g_level.store(level); }
LogLevel log_level() { return g_level.load(); }

void log_info(std::string_view message) {
  if (g_level.load() < LogLevel::info) return;
  std::lock_guard lock(g_mutex);
  std::cerr << "[info] " << message << '\n';
}

void log_debug(std::string_view message) {
  if (g_level.load() < LogLevel::debug) return;
  std::lock_guard lock(g_mutex);
  std::cerr << "[debug] " << message << '\n';
}

}  // namespace tpc
