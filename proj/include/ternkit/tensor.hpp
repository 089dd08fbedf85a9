#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ternkit/error.hpp"

namespace ternkit {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

// Row-major dense tensor. Element type double is used for real-valued data
// (inputs, activations, gradients); int8 for ternary/binary code tensors.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{}) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_)) {
      throw DomainError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                        shape_string(shape_));
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  T* raw() noexcept { return data_.data(); }
  const T* raw() const noexcept { return data_.data(); }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // Row-major multi-index access.
  T& at(std::initializer_list<std::size_t> idx) { return data_[offset(idx)]; }
  const T& at(std::initializer_list<std::size_t> idx) const { return data_[offset(idx)]; }

  void reshape(Shape shape) {
    if (shape_size(shape) != data_.size()) {
      throw DomainError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    shape_ = std::move(shape);
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::size_t offset(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != shape_.size()) throw DomainError("index rank does not match tensor rank");
    std::size_t off = 0;
    std::size_t d = 0;
    for (std::size_t i : idx) {
      if (i >= shape_[d]) throw DomainError("index out of range");
      off = off * shape_[d] + i;
      ++d;
    }
    return off;
  }

  Shape shape_;
  std::vector<T> data_;
};

using DenseTensor = Tensor<double>;
using CodeTensor = Tensor<std::int8_t>;
using MaskTensor = Tensor<std::uint8_t>;

// Throws DomainError naming `what` and the first non-finite index.
void require_finite(std::span<const double> values, std::string_view what);
inline void require_finite(const DenseTensor& t, std::string_view what) { require_finite(t.data(), what); }

DenseTensor to_dense(const CodeTensor& codes);

}  // namespace ternkit
