#include "ternkit/packed_tensor.hpp"

#include <bit>
#include <cmath>

namespace ternkit {

namespace {

void split_shape(const Shape& shape, std::size_t& rows, std::size_t& row_length) {
  if (shape.empty()) throw DomainError("packed tensor needs rank >= 1");
  row_length = shape.back();
  rows = 1;
  for (std::size_t i = 0; i + 1 < shape.size(); ++i) rows *= shape[i];
}

std::string row_suffix(const PackedTernaryTensor& t, std::size_t row) {
  return t.rows() > 1 ? " of row " + std::to_string(row) : std::string{};
}

}  // namespace

PackedTernaryTensor::PackedTernaryTensor(Shape shape, std::vector<std::uint64_t> sign_words,
                                         std::vector<std::uint64_t> value_words, std::vector<float> scales)
    : shape_(std::move(shape)), sign_(std::move(sign_words)), value_(std::move(value_words)), scales_(std::move(scales)) {
  split_shape(shape_, rows_, row_length_);
  words_per_row_ = words_for(row_length_);
}

PackedTernaryTensor PackedTernaryTensor::zeros(Shape shape) {
  std::size_t rows = 0, len = 0;
  split_shape(shape, rows, len);
  const std::size_t words = rows * words_for(len);
  return PackedTernaryTensor(std::move(shape), std::vector<std::uint64_t>(words, 0), std::vector<std::uint64_t>(words, 0));
}

void PackedTernaryTensor::set_scales(std::vector<float> scales) {
  if (!scales.empty() && scales.size() != rows_) {
    throw DomainError("scale count " + std::to_string(scales.size()) + " does not match row count " +
                      std::to_string(rows_));
  }
  scales_ = std::move(scales);
}

std::int8_t PackedTernaryTensor::get(std::size_t row, std::size_t lane) const {
  const std::size_t w = row * words_per_row_ + lane / kLanesPerWord;
  const std::uint64_t bit = std::uint64_t{1} << (lane % kLanesPerWord);
  if (!(value_[w] & bit)) return 0;
  return (sign_[w] & bit) ? 1 : -1;
}

void PackedTernaryTensor::set(std::size_t row, std::size_t lane, std::int8_t code) {
  if (row >= rows_ || lane >= row_length_) throw DomainError("packed index out of range");
  const std::size_t w = row * words_per_row_ + lane / kLanesPerWord;
  const std::uint64_t bit = std::uint64_t{1} << (lane % kLanesPerWord);
  sign_[w] &= ~bit;
  value_[w] &= ~bit;
  if (code == 1) {
    sign_[w] |= bit;
    value_[w] |= bit;
  } else if (code == -1) {
    value_[w] |= bit;
  } else if (code != 0) {
    throw DomainError("code " + std::to_string(code) + " is not in {-1,0,+1}");
  }
}

std::size_t PackedTernaryTensor::nonzero_count() const {
  std::size_t n = 0;
  for (std::uint64_t w : value_) n += static_cast<std::size_t>(std::popcount(w));
  return n;
}

PackedTernaryTensor pack(const CodeTensor& codes) {
  PackedTernaryTensor out = PackedTernaryTensor::zeros(codes.shape());
  const std::size_t len = out.row_length();
  const std::size_t wpr = out.words_per_row();
  auto sign = out.mutable_sign_words();
  auto value = out.mutable_value_words();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    for (std::size_t j = 0; j < len; ++j) {
      const std::size_t idx = r * len + j;
      const std::int8_t c = codes[idx];
      const std::size_t w = r * wpr + j / kLanesPerWord;
      const std::uint64_t bit = std::uint64_t{1} << (j % kLanesPerWord);
      if (c == 1) {
        sign[w] |= bit;
        value[w] |= bit;
      } else if (c == -1) {
        value[w] |= bit;
      } else if (c != 0) {
        throw DomainError("pack: code " + std::to_string(c) + " at index " + std::to_string(idx) +
                          " is not in {-1,0,+1}");
      }
    }
  }
  return out;
}

PackedTernaryTensor pack(const CodeTensor& codes, std::vector<float> scales) {
  PackedTernaryTensor out = pack(codes);
  out.set_scales(std::move(scales));
  return out;
}

CodeTensor unpack(const PackedTernaryTensor& t) {
  if (auto report = validate(t); !report.ok() && report.kind != ValidationReport::Kind::BadScale) {
    throw IntegrityError("unpack: " + report.message);
  }
  CodeTensor out(t.shape());
  const std::size_t len = t.row_length();
  for (std::size_t r = 0; r < t.rows(); ++r) {
    for (std::size_t j = 0; j < len; ++j) out[r * len + j] = t.get(r, j);
  }
  return out;
}

ValidationReport validate(const PackedTernaryTensor& t) {
  using Kind = ValidationReport::Kind;
  const std::size_t words = t.rows() * t.words_per_row();
  if (t.sign_words().size() != words || t.value_words().size() != words) {
    return {Kind::PlaneSizeMismatch, 0, 0,
            "plane sizes (" + std::to_string(t.sign_words().size()) + ", " + std::to_string(t.value_words().size()) +
                ") do not match " + std::to_string(words) + " words"};
  }
  const std::size_t wpr = t.words_per_row();
  const std::uint64_t tail = tail_mask(t.row_length());
  for (std::size_t r = 0; r < t.rows(); ++r) {
    const auto s = t.sign_row(r);
    const auto v = t.value_row(r);
    for (std::size_t w = 0; w < wpr; ++w) {
      if (const std::uint64_t bad = s[w] & ~v[w]; bad) {
        const std::size_t lane = w * kLanesPerWord + static_cast<std::size_t>(std::countr_zero(bad));
        return {Kind::SignOnZero, r, lane, "sign bit on zero element, lane " + std::to_string(lane) + row_suffix(t, r)};
      }
      if (w + 1 == wpr) {
        if (const std::uint64_t pad = (s[w] | v[w]) & ~tail; pad) {
          const std::size_t lane = w * kLanesPerWord + static_cast<std::size_t>(std::countr_zero(pad));
          return {Kind::PaddingNonzero, r, lane,
                  "padding lane " + std::to_string(lane) + " is nonzero" + row_suffix(t, r) + " (row length " +
                      std::to_string(t.row_length()) + ")"};
        }
      }
    }
  }
  if (t.has_scales()) {
    if (t.scales().size() != t.rows()) {
      return {Kind::BadScale, 0, 0, "scale count does not match row count"};
    }
    for (std::size_t r = 0; r < t.rows(); ++r) {
      const float a = t.scales()[r];
      bool row_nonzero = false;
      for (std::uint64_t w : t.value_row(r)) row_nonzero = row_nonzero || w != 0;
      // A zero scale is only meaningful for an all-zero row.
      if (!std::isfinite(a) || a < 0.0f || (a == 0.0f && row_nonzero)) {
        return {Kind::BadScale, r, 0, "scale " + std::to_string(a) + " of row " + std::to_string(r) + " is not positive"};
      }
    }
  }
  return {};
}

}  // namespace ternkit
