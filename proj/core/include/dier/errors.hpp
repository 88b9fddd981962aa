#pragma once

#include <stdexcept>
#include <string>

namespace dier {

// Error taxonomy mirrors the CLI exit codes:
//   usage 1, config 2, data 3, numeric 4, checkpoint 5.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Shape/broadcast contract violations inside the tensor library.
struct DimensionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Out-of-range timestep or element access.
struct IndexError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace dier
