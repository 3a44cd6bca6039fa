#pragma once

#include <stdexcept>
#include <string>

namespace maunet {

// Base for every error raised by the library. CLI maps subclasses to exit codes.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor shapes disagree (names the offending axis where possible).
struct ShapeError : Error {
    using Error::Error;
};

// An operation or model was configured with invalid hyperparameters.
struct ConfigError : Error {
    using Error::Error;
};

// Input data violates its contract (bad masks, orphan files, size mismatches).
struct DataError : Error {
    using Error::Error;
};

// Filesystem or encoding problem.
struct IoError : Error {
    using Error::Error;
};

// NaN/Inf surfaced by a kernel, a failed gradient check, or a diverged loss.
struct NumericError : Error {
    using Error::Error;
};

// Checkpoint file carries an unknown magic/version.
struct VersionError : IoError {
    using IoError::IoError;
};

// Checkpoint file is truncated or malformed.
struct CorruptionError : IoError {
    using IoError::IoError;
};

// Checkpoint tensors do not fit the rebuilt model (names the tensor).
struct IncompatibilityError : DataError {
    using DataError::DataError;
};

// API misuse (e.g. backward from a non-scalar node).
struct UsageError : Error {
    using Error::Error;
};

}  // namespace maunet
