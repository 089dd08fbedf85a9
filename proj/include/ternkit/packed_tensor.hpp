#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ternkit/tensor.hpp"

namespace ternkit {

inline constexpr std::size_t kLanesPerWord = 64;

constexpr std::size_t words_for(std::size_t lanes) { return (lanes + kLanesPerWord - 1) / kLanesPerWord; }

// Mask of the valid lanes in the last word of a row of `lanes` elements.
constexpr std::uint64_t tail_mask(std::size_t lanes) {
  const std::size_t r = lanes % kLanesPerWord;
  return r == 0 ? ~std::uint64_t{0} : (std::uint64_t{1} << r) - 1;
}

// Ternary tensor stored as two bit planes, packed along the innermost axis.
//
//   value bit v = 1  <=>  element nonzero
//   sign bit  s = 1  <=>  element is +1
//
// so +1 = (s=1, v=1), -1 = (s=0, v=1) and 0 = (s=0, v=0). Element j of a row
// lives in bit (j % 64) of word (j / 64), bit 0 being the least significant.
// Every row starts on a fresh word; lanes past the row length are zero.
// Optional per-row scales carry the alpha of a filter bank.
class PackedTernaryTensor {
 public:
  PackedTernaryTensor() = default;

  // Raw construction from planes; nothing is checked here, see validate().
  PackedTernaryTensor(Shape shape, std::vector<std::uint64_t> sign_words, std::vector<std::uint64_t> value_words,
                      std::vector<float> scales = {});

  static PackedTernaryTensor zeros(Shape shape);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rows() const noexcept { return rows_; }
  std::size_t row_length() const noexcept { return row_length_; }
  std::size_t words_per_row() const noexcept { return words_per_row_; }
  std::size_t element_count() const noexcept { return rows_ * row_length_; }

  std::span<const std::uint64_t> sign_words() const noexcept { return sign_; }
  std::span<const std::uint64_t> value_words() const noexcept { return value_; }
  std::span<std::uint64_t> mutable_sign_words() noexcept { return sign_; }
  std::span<std::uint64_t> mutable_value_words() noexcept { return value_; }

  std::span<const std::uint64_t> sign_row(std::size_t r) const {
    return std::span<const std::uint64_t>(sign_).subspan(r * words_per_row_, words_per_row_);
  }
  std::span<const std::uint64_t> value_row(std::size_t r) const {
    return std::span<const std::uint64_t>(value_).subspan(r * words_per_row_, words_per_row_);
  }

  bool has_scales() const noexcept { return !scales_.empty(); }
  const std::vector<float>& scales() const noexcept { return scales_; }
  void set_scales(std::vector<float> scales);

  std::int8_t get(std::size_t row, std::size_t lane) const;
  void set(std::size_t row, std::size_t lane, std::int8_t code);

  // Bytes of the two bit planes, 2 * rows * words_per_row * 8.
  std::size_t payload_bytes() const noexcept { return 2 * sign_.size() * sizeof(std::uint64_t); }
  std::size_t nonzero_count() const;

  friend bool operator==(const PackedTernaryTensor&, const PackedTernaryTensor&) = default;

 private:
  Shape shape_;
  std::size_t rows_ = 0;
  std::size_t row_length_ = 0;
  std::size_t words_per_row_ = 0;
  std::vector<std::uint64_t> sign_;
  std::vector<std::uint64_t> value_;
  std::vector<float> scales_;
};

// Packs along the last axis. Throws DomainError naming the first entry outside {-1,0,+1}.
PackedTernaryTensor pack(const CodeTensor& codes);
PackedTernaryTensor pack(const CodeTensor& codes, std::vector<float> scales);

// Throws IntegrityError if the planes are not canonical.
CodeTensor unpack(const PackedTernaryTensor& t);

struct ValidationReport {
  enum class Kind { Ok, PlaneSizeMismatch, SignOnZero, PaddingNonzero, BadScale };

  Kind kind = Kind::Ok;
  std::size_t row = 0;
  std::size_t lane = 0;
  std::string message;

  bool ok() const noexcept { return kind == Kind::Ok; }
};

// Reports the first violated invariant in row-major lane order.
ValidationReport validate(const PackedTernaryTensor& t);

}  // namespace ternkit
