#pragma once

#include <stdexcept>
#include <string>

namespace raaf {

// Bad configuration, bad arguments, mismatched shapes. CLI exit code 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : ConfigError {
    using ConfigError::ConfigError;
};

// Unreadable or malformed input data. CLI exit code 3.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite values or failed numeric invariants. CLI exit code 4.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// API misuse, e.g. backward without a cached forward.
struct StateError : std::logic_error {
    using std::logic_error::logic_error;
};

}  // namespace raaf
