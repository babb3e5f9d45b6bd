// Exception hierarchy shared by all components.
#pragma once

#include <stdexcept>
#include <string>

namespace dfba {

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad tensor geometry: mismatched shapes, invalid axes, impossible conv sizes.
struct ShapeError : Error {
    using Error::Error;
};

// Numeric contract violations (division by zero, out-of-range labels, ...).
struct ValueError : Error {
    using Error::Error;
};

// Invalid or inconsistent experiment configuration.
struct ConfigError : Error {
    using Error::Error;
};

// Checkpoint / metrics / filesystem failures.
struct IoError : Error {
    using Error::Error;
};

struct OracleError : Error {
    using Error::Error;
};

// Transport-level failure talking to a remote oracle (after retries).
struct OracleUnreachable : OracleError {
    using OracleError::OracleError;
};

// The remote oracle answered, but not with a valid protocol message.
struct OracleProtocolError : OracleError {
    using OracleError::OracleError;
};

} // namespace dfba
