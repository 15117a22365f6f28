#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace rwm {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

/// Compute precision used by training, embedding and evaluation. Double
/// instantiations of the templated core exist for gradient verification.
using Real = float;

class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class InvalidState : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Malformed or foreign file. `offset` is the byte position where decoding
/// failed, or -1 when not tied to a position.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::int64_t offset = -1)
      : std::runtime_error(what), offset_(offset) {}
  std::int64_t offset() const noexcept { return offset_; }

 private:
  std::int64_t offset_;
};

Index shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Keeps large activation buffers mapped between steps (glibc only). Call
/// once at program start.
void tune_allocator();

}  // namespace rwm
