#pragma once

#include <stdexcept>
#include <string>

namespace pinncast {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor or field shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A configuration value violates its invariant.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf produced where finite values are required.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// The adaptive integrator could not reach the end of the interval.
class IntegrationError : public NumericalError {
 public:
  IntegrationError(const std::string& what, double t_reached)
      : NumericalError(what), t_reached_(t_reached) {}

  double t_reached() const noexcept { return t_reached_; }

 private:
  double t_reached_;
};

/// Malformed on-disk data (bad magic, header, checksum).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A binary payload is shorter or longer than its header promises.
class LengthError : public FormatError {
 public:
  using FormatError::FormatError;
};

/// Filesystem failure; the message always carries the offending path.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace pinncast
