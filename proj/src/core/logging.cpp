#include "core/logging.hpp"

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <mutex>

namespace spanforge::logging {

namespace {

Level parse_level(const char* s) {
    if (s == nullptr) return Level::kInfo;
    if (std::strcmp(s, "debug") == 0) return Level::kDebug;
    if (std::strcmp(s, "info") == 0) return Level::kInfo;
    if (std::strcmp(s, "warn") == 0) return Level::kWarn;
    if (std::strcmp(s, "error") == 0) return Level::kError;
    if (std::strcmp(s, "off") == 0) return Level::kOff;
    return Level::kInfo;
}

Level& threshold_ref() {
    static Level level = parse_level(std::getenv("SPANFORGE_LOG"));
    return level;
}

const char* tag(Level level) {
    switch (level) {
        case Level::kDebug: return "debug";
        case Level::kInfo: return "info";
        case Level::kWarn: return "warn";
        case Level::kError: return "error";
        default: return "?";
    }
}

std::mutex g_mutex;

}  // namespace

Level threshold() { return threshold_ref(); }

void set_threshold(Level level) { threshold_ref() = level; }

bool enabled(Level level) { return level >= threshold_ref() && level != Level::kOff; }

void logf(Level level, const char* fmt, ...) {
    if (!enabled(level)) return;
    char buf[2048];
    va_list ap;
    va_start(ap, fmt);
    std::vsnprintf(buf, sizeof(buf), fmt, ap);
    va_end(ap);
    std::lock_guard<std::mutex> lock(g_mutex);
    std::fprintf(stderr, "spanforge [%s] %s\n", tag(level), buf);
}

}  // namespace spanforge::logging
