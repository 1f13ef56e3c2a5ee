#pragma once

#include <stdexcept>
#include <string>

namespace adherence {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input file or mapping does not match the canonical schema.
class SchemaError : public Error {
 public:
  using Error::Error;
};

/// A record or request violates a domain invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Shapes or dimensions disagree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values reached a place where they must not.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace adherence
