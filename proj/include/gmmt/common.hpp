#pragma once

#include <stdexcept>
#include <string>

namespace gmmt {

// Scalar type for all tensor data. Gradient checks and acceptance runs
// require the 64-bit build; -DGMMT_REAL32 switches training math to floats.
#ifdef GMMT_REAL32
using real = float;
#else
using real = double;
#endif

// Error taxonomy; the CLI maps these to distinct exit codes.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeError : ConfigError {
    using ConfigError::ConfigError;
};

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace gmmt
