#pragma once

#include <stdexcept>
#include <string>

namespace gem {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller passed an argument that violates an operation's precondition.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Tensor or model shapes do not line up.
class StructuralError : public Error {
 public:
  using Error::Error;
};

/// A NaN or infinity showed up where only finite values are allowed.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A required file could not be opened or read.
class IngestionError : public Error {
 public:
  using Error::Error;
};

/// A file was readable but its contents are malformed.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Training diverged.
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace gem
