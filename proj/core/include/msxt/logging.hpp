#pragma once

#include <string>

// Leveled stderr logging. The level comes from the MOMENT_LOG_LEVEL
// environment variable (error|info|debug, default info) the first time it is
// queried; set_level overrides it explicitly.

namespace msxt::logging {

enum class Level { kError = 0, kInfo = 1, kDebug = 2 };

// Throws ConfigError on anything but "error", "info", "debug".
Level parse_level(const std::string& name);

Level level();
void set_level(Level lvl);

void error(const std::string& msg);
void info(const std::string& msg);
void debug(const std::string& msg);

}  // namespace msxt::logging
