#pragma once

#include <stdexcept>
#include <string>

namespace sghf {

// Shape/rank violations on tensor operations.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Invalid or inconsistent run configuration.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Missing/corrupt datasets, checkpoints or run directories.
struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite values encountered during training.
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace sghf
