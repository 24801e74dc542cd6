#pragma once

#include <stdexcept>
#include <string>

namespace instab {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor shapes do not compose.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A documented precondition on argument values was violated.
class ContractError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration (CLI exit code 2).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// NaN/Inf encountered in a loss, gradient or objective (CLI exit code 3).
class NumericalError : public Error {
public:
    using Error::Error;
};

/// API misuse, e.g. backward without a recorded forward trace.
class UsageError : public Error {
public:
    using Error::Error;
};

/// Correlation undefined because an argument has zero variance.
class DegenerateSampleError : public Error {
public:
    using Error::Error;
};

/// Filesystem or serialization failure.
class IoError : public Error {
public:
    using Error::Error;
};

} // namespace instab
