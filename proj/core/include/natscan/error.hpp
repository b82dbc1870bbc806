#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace natscan {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes are incompatible, or a tensor does not have the shape a
/// model or file header declares.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A value that must be finite is NaN or infinite.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Optimization blew up. `iteration()` is the step at which it was detected.
class DivergenceError : public NumericError {
 public:
  DivergenceError(const std::string& what, std::size_t iteration)
      : NumericError(what), iteration_(iteration) {}
  std::size_t iteration() const noexcept { return iteration_; }

 private:
  std::size_t iteration_;
};

/// Malformed on-disk data: wrong magic, truncated payload, bad header.
class FormatError : public Error {
 public:
  using Error::Error;
};

class BadMagicError : public FormatError {
 public:
  using FormatError::FormatError;
};

class TruncatedFileError : public FormatError {
 public:
  TruncatedFileError(const std::string& what, std::size_t expected,
                     std::size_t actual)
      : FormatError(what), expected_(expected), actual_(actual) {}
  std::size_t expected_bytes() const noexcept { return expected_; }
  std::size_t actual_bytes() const noexcept { return actual_; }

 private:
  std::size_t expected_;
  std::size_t actual_;
};

/// Input data is unusable for the requested operation (empty corpus,
/// missing weights, undecodable image).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Caller supplied an invalid argument or configuration value.
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace natscan
