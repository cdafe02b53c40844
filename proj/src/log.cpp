#include "tvmerge/log.hpp"

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <mutex>

namespace tvmerge::log {

static Level parse_env() {
    const char* v = std::getenv("MERGE_LOG");
    if (!v) return Level::Warn;
    if (std::strcmp(v, "error") == 0) return Level::Error;
    if (std::strcmp(v, "warn") == 0) return Level::Warn;
    if (std::strcmp(v, "info") == 0) return Level::Info;
    if (std::strcmp(v, "debug") == 0) return Level::Debug;
    return Level::Warn;
}

Level threshold() {
    static const Level level = parse_env();
    return level;
}

void emit(Level level, const std::string& msg) {
    if (level > threshold()) return;
    static const char* names[] = {"error", "warn", "info", "debug"};
    static std::mutex mu;
    std::lock_guard<std::mutex> lock(mu);
    std::fprintf(stderr, "[%s] %s\n", names[static_cast<int>(level)], msg.c_str());
}

}  // namespace tvmerge::log
