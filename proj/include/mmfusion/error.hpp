#pragma once

#include <stdexcept>
#include <string>

namespace mmfusion {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible with the requested operation.
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Caller-supplied data violates a precondition (bad label, empty batch, ...).
class InputError : public Error {
public:
    using Error::Error;
};

/// Operation invoked in a state where it is not defined.
class UsageError : public Error {
public:
    using Error::Error;
};

/// A computation produced NaN or Inf.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Failure while decoding a feature file or checkpoint.
class LoadError : public Error {
public:
    enum class Kind {
        Io,
        BadMagic,
        VersionMismatch,
        Truncated,
        DimInconsistent,
        InvalidRecord,
        VariantMismatch,
    };

    LoadError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

    [[nodiscard]] Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

const char* to_string(LoadError::Kind kind) noexcept;

}  // namespace mmfusion
