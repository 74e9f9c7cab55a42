#pragma once

#include <stdexcept>
#include <string>

namespace invasion {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inconsistent or missing settings (resolutions, layer names, config keys).
class ConfigurationError : public Error {
 public:
  using Error::Error;
};

/// A value lies outside the domain of an operation (mask, sign, range).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A raster header does not line up with the expected grid.
class AlignmentError : public Error {
 public:
  using Error::Error;
};

/// Malformed text input (raster cells, CSV fields, dates).
class ParseError : public Error {
 public:
  using Error::Error;
};

/// A sample date is not covered by the solved time window.
class CoverageError : public Error {
 public:
  using Error::Error;
};

/// The explicit scheme produced a non-finite or overflowing value.
class NumericalBlowup : public Error {
 public:
  NumericalBlowup(const std::string& what, long step) : Error(what), step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

/// Results contradict an invariant that construction should guarantee.
class InternalConsistencyError : public Error {
 public:
  using Error::Error;
};

}  // namespace invasion
