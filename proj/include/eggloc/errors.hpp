#pragma once

#include <stdexcept>
#include <string>

namespace eggloc {

// Base class for everything this library throws on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A value or argument violates a documented invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// A box collapsed to zero area (typically after clamping).
class DegenerateBoxError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// An input document does not match the expected schema.
class SchemaError : public Error {
 public:
  using Error::Error;
};

// Filesystem / decoding failure; the message carries the path.
class IoError : public Error {
 public:
  using Error::Error;
};

// A backend was asked for an operation it does not support.
class CapabilityError : public Error {
 public:
  using Error::Error;
};

// Test-double misuse (e.g. stub script exhausted).
class HarnessError : public Error {
 public:
  using Error::Error;
};

}  // namespace eggloc
