#pragma once

#include <charconv>
#include <string>
#include <system_error>

#include "changeforge/errors.hpp"

namespace changeforge {

/// Shortest round-trip decimal form; keeps CSV output byte-stable across runs.
inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    if (res.ec != std::errc())
        throw numeric_error("failed to format floating-point value");
    return std::string(buf, res.ptr);
}

} // namespace changeforge
