#pragma once

#include <stdexcept>
#include <string>

namespace tensegrity {

/// Invalid model or configuration parameters.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Coincident member endpoints, zero-length bars and similar degenerate geometry.
class GeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Integration produced a non-finite state. `block` is the batch column block
/// that failed, or -1 for a single-state step.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, int block = -1)
      : std::runtime_error(what), block_(block) {}
  int block() const noexcept { return block_; }

 private:
  int block_;
};

}  // namespace tensegrity
