#include "ternkit/tensor.hpp"

#include <cmath>

namespace ternkit {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

void require_finite(std::span<const double> values, std::string_view what) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw DomainError(std::string(what) + ": non-finite value at index " + std::to_string(i));
    }
  }
}

DenseTensor to_dense(const CodeTensor& codes) {
  DenseTensor out(codes.shape());
  for (std::size_t i = 0; i < codes.size(); ++i) out[i] = codes[i];
  return out;
}

}  // namespace ternkit
