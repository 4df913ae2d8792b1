#pragma once

#include <functional>
#include <iostream>
#include <string>

namespace afc::log {

using Sink = std::function<void(const std::string&)>;

inline Sink& warn_sink() {
    static Sink sink = [](const std::string& msg) { std::cerr << "[afc] warning: " << msg << "\n"; };
    return sink;
}

inline void set_warn_sink(Sink s) { warn_sink() = std::move(s); }

inline void warn(const std::string& msg) { warn_sink()(msg); }

}  // namespace afc::log
