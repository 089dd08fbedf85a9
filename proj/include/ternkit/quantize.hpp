#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "ternkit/packed_tensor.hpp"
#include "ternkit/tensor.hpp"

namespace ternkit {

// Ternary approximation W ~ alpha * codes of a filter bank. Dimension 0 of the
// bank indexes output channels; each channel is one filter of n elements.
struct QuantResult {
  CodeTensor codes;
  std::vector<double> alpha;
  std::vector<double> delta;

  std::size_t filters() const noexcept { return alpha.size(); }
  std::size_t filter_size() const noexcept { return alpha.empty() ? 0 : codes.size() / alpha.size(); }
  double zero_fraction() const;
  // alpha_j * codes, shaped like the bank.
  DenseTensor dequantize() const;
};

struct BinaryResult {
  CodeTensor codes;
  std::vector<double> alpha;

  DenseTensor dequantize() const;
};

// Delta = 0.7 * mean|W|, codes by thresholding at Delta, alpha = mean |W| over
// the surviving entries (0 when none survive).
QuantResult ternarize_weights(const DenseTensor& filters);

// Forces exactly ceil(sparsity * n) zeros per filter: the smallest magnitudes,
// ties broken by ascending index. Survivors take their sign (0 maps to +1).
QuantResult ternarize_sparse(const DenseTensor& filters, double sparsity = 0.5);

// codes = sgn(W) with sgn(0) = +1, alpha = mean |W| per filter.
BinaryResult binarize_weights(const DenseTensor& filters);

inline std::int8_t tern_hard(double x) { return x > 0.5 ? 1 : (x < -0.5 ? -1 : 0); }
inline std::int8_t sign_hard(double x) { return x >= 0.0 ? 1 : -1; }

CodeTensor tern_hard(const DenseTensor& x);
CodeTensor sign_hard(const DenseTensor& x);

// Filter bank as packed rows of shape (filters, n) with alpha as the row scales.
PackedTernaryTensor pack_filters(const QuantResult& q);
PackedTernaryTensor pack_filters(const BinaryResult& b);

}  // namespace ternkit
