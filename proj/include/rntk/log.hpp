#pragma once

#include <functional>
#include <iostream>
#include <string>

namespace rntk {

using LogSink = std::function<void(const std::string&)>;

/// Destination of warnings; stderr unless replaced (tests capture it).
inline LogSink& warning_sink() {
    static LogSink sink = [](const std::string& msg) { std::cerr << "warning: " << msg << '\n'; };
    return sink;
}

inline void warn(const std::string& msg) {
    if (warning_sink()) warning_sink()(msg);
}

}  // namespace rntk
