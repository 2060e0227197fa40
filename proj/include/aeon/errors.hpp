#pragma once

#include <stdexcept>
#include <string>

namespace aeon {

/// Base of every error the library raises. `exit_code()` maps the failure
/// class onto the CLI's process exit status.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual int exit_code() const noexcept { return 1; }
};

/// Invalid or inconsistent configuration.
class ConfigError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 2; }
};

/// Malformed or unreadable dataset / checkpoint.
class DataError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 3; }
};

/// Non-finite loss or gradient during training.
class NumericError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 4; }
};

/// Argument outside a primitive's mathematical domain (log of a non-positive
/// value, erfinv outside (-1, 1), probability outside (0, 1)).
class DomainError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 4; }
};

/// Shape mismatch, empty batch, broken graph.
class StructuralError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 3; }
};

} // namespace aeon
