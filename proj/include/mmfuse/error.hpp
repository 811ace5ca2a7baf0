#pragma once

#include <stdexcept>
#include <string>

namespace mmfuse {

/// Bad input: malformed files, shape mismatches, invalid configuration.
/// The CLI maps this to exit code 2.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Numeric failure at runtime (divergence, non-finite values). Exit code 3.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace mmfuse
