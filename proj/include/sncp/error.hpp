#pragma once

#include <stdexcept>
#include <string>

namespace sncp {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree (factor rows vs tensor extents, column counts...).
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid solver or experiment configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Input data rejected (negative entries, non-finite values, malformed files).
class DataError : public Error {
 public:
  using Error::Error;
};

/// A block subproblem whose system matrix is not positive definite.
class IllConditionedError : public Error {
 public:
  IllConditionedError(const std::string& what, int mode)
      : Error(mode >= 0 ? what + " (mode " + std::to_string(mode + 1) + ")" : what), mode_(mode) {}

  /// Zero-based mode of the failing subproblem, or -1 when not known.
  [[nodiscard]] int mode() const noexcept { return mode_; }

 private:
  int mode_;
};

}  // namespace sncp
