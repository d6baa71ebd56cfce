#pragma once

#include <cstdarg>
#include <string>

namespace spanforge::logging {

enum class Level { kDebug = 0, kInfo = 1, kWarn = 2, kError = 3, kOff = 4 };

// Threshold comes from SPANFORGE_LOG (debug|info|warn|error|off), read once.
Level threshold();

// Overrides the environment-derived threshold (used by tests).
void set_threshold(Level level);

bool enabled(Level level);

void logf(Level level, const char* fmt, ...)
#if defined(__GNUC__)
    __attribute__((format(printf, 2, 3)))
#endif
    ;

inline void debugf(const char* fmt, auto... args) { logf(Level::kDebug, fmt, args...); }
inline void infof(const char* fmt, auto... args) { logf(Level::kInfo, fmt, args...); }
inline void warnf(const char* fmt, auto... args) { logf(Level::kWarn, fmt, args...); }
inline void errorf(const char* fmt, auto... args) { logf(Level::kError, fmt, args...); }

}  // namespace spanforge::logging
