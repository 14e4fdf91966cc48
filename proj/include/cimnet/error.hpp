#pragma once

#include <stdexcept>
#include <string>

namespace cimnet {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or dimension contract violated by an operator call.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// An operator produced NaN or Inf.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

// Invalid model/train/crossbar configuration. Maps to CLI exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or unreadable data on disk. Maps to CLI exit code 3.
class FormatError : public Error {
 public:
  using Error::Error;
};

class BadMagicError : public FormatError {
 public:
  using FormatError::FormatError;
};

class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class DuplicateNameError : public FormatError {
 public:
  using FormatError::FormatError;
};

class LengthError : public FormatError {
 public:
  using FormatError::FormatError;
};

}  // namespace cimnet
