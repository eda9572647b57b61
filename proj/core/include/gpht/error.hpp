#pragma once

#include <stdexcept>
#include <string>

namespace gpht {

// Every library failure derives from Error so callers can catch one type.
// The CLI maps each subclass to a stable exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible array shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid hyperparameters, split ratios, protocol settings, config keys.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// API misuse, e.g. backward on a non-scalar or an optimizer step without a gradient.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Unreadable or malformed input data (CSV cells, missing files, short lookbacks).
class DataError : public Error {
 public:
  using Error::Error;
};

// Corrupt checkpoint bytes.
class FormatError : public DataError {
 public:
  using DataError::DataError;
};

// Checkpoint written by an unsupported format version.
class VersionError : public DataError {
 public:
  using DataError::DataError;
};

// Non-finite loss during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Evaluation protocol violated (zero-shot on a pretraining source).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

}  // namespace gpht
