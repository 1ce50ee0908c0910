#pragma once

#include <stdexcept>
#include <string>

namespace loclab {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shapes or indices that do not agree (table lengths, agent counts, matrix sizes).
class DimensionError : public Error {
public:
    using Error::Error;
};

/// Input that violates a documented precondition (ranges, distributions, scopes).
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// The instance is too large for exhaustive enumeration under the configured cap.
class CapExceeded : public Error {
public:
    using Error::Error;
};

/// The policy-induced chain is reducible or periodic, so no unique stationary law exists.
class ChainError : public Error {
public:
    using Error::Error;
};

/// A dense solve did not reach its residual target.
class NumericalError : public Error {
public:
    using Error::Error;
};

} // namespace loclab
