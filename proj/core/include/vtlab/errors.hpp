#pragma once

#include <stdexcept>
#include <string>

namespace vtlab {

/// Base of every error raised by the library.
///
/// The CLI maps subclasses of UserError to exit code 1 and anything else to
/// exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Errors caused by bad input (configuration, files, arguments).
class UserError : public Error {
 public:
  using Error::Error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class GeometryError : public UserError {
 public:
  using UserError::UserError;
};

class ConfigError : public UserError {
 public:
  using UserError::UserError;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

/// A NaN or Inf was produced by an operation.
class NumericError : public Error {
 public:
  using Error::Error;
};

class FormatError : public UserError {
 public:
  using UserError::UserError;
};

class TransferError : public UserError {
 public:
  using UserError::UserError;
};

class LookupError : public UserError {
 public:
  using UserError::UserError;
};

class ReportError : public UserError {
 public:
  using UserError::UserError;
};

}  // namespace vtlab
