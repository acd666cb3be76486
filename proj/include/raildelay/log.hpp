#pragma once

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>

namespace raildelay::log {

enum class Level { quiet = 0, warn = 1, info = 2, debug = 3 };

// Verbosity comes from RAILDELAY_LOG (quiet|warn|info|debug), default info.
inline Level& threshold() {
  static Level lvl = [] {
    const char* env = std::getenv("RAILDELAY_LOG");
    if (env == nullptr) return Level::info;
    if (std::strcmp(env, "quiet") == 0) return Level::quiet;
    if (std::strcmp(env, "warn") == 0) return Level::warn;
    if (std::strcmp(env, "debug") == 0) return Level::debug;
    return Level::info;
  }();
  return lvl;
}

inline void emit(Level lvl, const char* tag, const std::string& msg) {
  if (lvl <= threshold()) std::fprintf(stderr, "[%s] %s\n", tag, msg.c_str());
}

inline void warn(const std::string& msg) { emit(Level::warn, "warn", msg); }
inline void info(const std::string& msg) { emit(Level::info, "info", msg); }
inline void debug(const std::string& msg) { emit(Level::debug, "debug", msg); }

}  // namespace raildelay::log
