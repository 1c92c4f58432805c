#pragma once

#include <stdexcept>
#include <string>

namespace dtg {

// Error categories map one-to-one onto process exit codes (see dtg.h).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape mismatches surface as data errors: they arise from inconsistent
// inputs, not from the math itself.
struct ShapeError : DataError {
    explicit ShapeError(const std::string& msg) : DataError(msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace dtg
