#pragma once

#include <stdexcept>
#include <string>

namespace vqa {

// Error taxonomy shared across the toolkit. The CLI maps each category onto a
// distinct exit code, so new error types should derive from one of these.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad configuration: unknown backbone kind, malformed manifest, missing model file.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Input data fails a declared contract (duplicate ids, out-of-range MOS, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Matrix/vector dimensions do not match the declared model shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain of an operation (empty sequence, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A correlation is requested on data for which it is undefined (constant vector).
class UndefinedCorrelationError : public DomainError {
 public:
  using DomainError::DomainError;
};

/// Non-finite value produced mid-computation.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Video or frame could not be decoded.
class DecodeError : public Error {
 public:
  using Error::Error;
};

/// Filesystem-level failure.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Requested record does not exist.
class NotFoundError : public IoError {
 public:
  using IoError::IoError;
};

/// Stored record exists but its header and payload disagree.
class CorruptionError : public IoError {
 public:
  using IoError::IoError;
};

/// Training aborted (non-finite loss, invalid run setup).
class TrainError : public Error {
 public:
  using Error::Error;
};

}  // namespace vqa
