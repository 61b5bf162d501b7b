#pragma once

#include <stdexcept>
#include <string>

namespace fedreg {

/// Shapes, specs or variants that do not fit together.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller-supplied values outside their admissible range.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed on-disk data.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  /// Same error with `prefix` prepended to the message.
  FormatError(const std::string& prefix, const FormatError& inner)
      : std::runtime_error(prefix + inner.what()), offset_(inner.offset_) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// NaN or Inf produced during a computation. `layer` is -1 when not tied to a layer.
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, int layer = -1)
      : std::runtime_error(layer >= 0 ? what + " (layer " + std::to_string(layer) + ")" : what),
        layer_(layer) {}
  NumericError(const std::string& prefix, const NumericError& inner)
      : std::runtime_error(prefix + inner.what()), layer_(inner.layer_) {}
  int layer() const noexcept { return layer_; }

 private:
  int layer_;
};

}  // namespace fedreg
