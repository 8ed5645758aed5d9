#pragma once
#include <stdexcept>
#include <string>

namespace hnpipe {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed argument or violated precondition.
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// Operands with incompatible shapes or dimensions.
class ShapeMismatch : public Error {
public:
    using Error::Error;
};

/// File missing, unreadable, or with a malformed payload.
class IoError : public Error {
public:
    using Error::Error;
};

/// Input that makes the computation undefined (zero variance, empty masks, ...).
class DegenerateInput : public Error {
public:
    using Error::Error;
};

/// Iterative fit that failed to reach its tolerance.
class ConvergenceError : public Error {
public:
    using Error::Error;
};

} // namespace hnpipe
