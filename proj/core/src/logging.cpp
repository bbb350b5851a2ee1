#include "msxt/logging.hpp"

#include <cstdlib>
#include <iostream>
#include <mutex>
#include <optional>

#include "msxt/errors.hpp"

namespace msxt::logging {

namespace {

std::mutex g_mutex;
std::optional<Level> g_level;

Level level_from_env() {
    const char* env = std::getenv("MOMENT_LOG_LEVEL");
    if (!env || !*env) return Level::kInfo;
    return parse_level(env);
}

void emit(Level lvl, const char* tag, const std::string& msg) {
    std::lock_guard<std::mutex> lock(g_mutex);
    if (!g_level) g_level = level_from_env();
    if (static_cast<int>(lvl) > static_cast<int>(*g_level)) return;
    std::cerr << "[" << tag << "] " << msg << "\n";
}

}  // namespace

Level parse_level(const std::string& name) {
    if (name == "error") return Level::kError;
    if (name == "info") return Level::kInfo;
    if (name == "debug") return Level::kDebug;
    throw ConfigError("MOMENT_LOG_LEVEL must be one of error|info|debug, got \"" + name + "\"");
}

Level level() {
    std::lock_guard<std::mutex> lock(g_mutex);
    if (!g_level) g_level = level_from_env();
    return *g_level;
}

void set_level(Level lvl) {
    std::lock_guard<std::mutex> lock(g_mutex);
    g_level = lvl;
}

void error(const std::string& msg) { emit(Level::kError, "error", msg); }
void info(const std::string& msg) { emit(Level::kInfo, "info", msg); }
void debug(const std::string& msg) { emit(Level::kDebug, "debug", msg); }

}  // namespace msxt::logging
