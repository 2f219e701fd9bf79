#pragma once

#include <stdexcept>
#include <string>

namespace changeforge {

/// Bad user input: malformed config, invalid flag combination.
struct config_error : std::runtime_error {
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Bad data: missing files, header/payload mismatch, shape mismatch, NaN payloads.
struct data_error : std::runtime_error {
    explicit data_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Numerical failure: non-finite loss, Cholesky breakdown, log of non-positive score.
struct numeric_error : std::runtime_error {
    explicit numeric_error(const std::string& msg) : std::runtime_error(msg) {}
};

} // namespace changeforge
