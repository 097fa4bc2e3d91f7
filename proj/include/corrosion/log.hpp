#pragma once

#include <json.hpp>
#include <string_view>

namespace corrosion {

enum class LogLevel { kDebug = 0, kInfo = 1, kWarn = 2, kError = 3, kOff = 4 };

void set_log_level(LogLevel level);
LogLevel log_level();

// One JSON object per line on stderr: {"ts", "level", "event", ...fields}.
void log_event(LogLevel level, std::string_view event, nlohmann::json fields = nlohmann::json::object());

}  // namespace corrosion
