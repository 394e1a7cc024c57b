#pragma once

#include <stdexcept>
#include <string>

namespace ceseg {

/// Base of every error raised by the library. `exit_code()` is what the CLI
/// returns when the error escapes a command.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual int exit_code() const noexcept { return 4; }
};

/// Invalid hyperparameters, unknown config keys, inconsistent parameter shapes.
class ConfigError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 2; }
};

/// Shape or cardinality mismatch between arguments.
class InputError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 3; }
};

/// Malformed volume sidecar, checkpoint or manifest.
class FormatError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 3; }
};

/// A surface-based metric was asked for on an empty mask.
class EmptyMaskError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 3; }
};

/// Paired test where every difference is zero.
class DegenerateSampleError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 3; }
};

/// Zero variance during z-score normalization.
class NormalizationError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 3; }
};

/// Non-finite loss and other failures that happen mid-computation.
class RuntimeError : public Error {
public:
    using Error::Error;
};

}  // namespace ceseg
