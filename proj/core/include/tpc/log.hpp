#pragma once

#include <string_view>

namespace tpc {

enum class LogLevel { quiet = 0, info = 1, debug = 2 };

void set_log_level(LogLevel level);
LogLevel log_level();

void log_info(std::string_view message);
void log_debug(std::string_view message);

}  // namespace tpc
