#include "ternkit/quantize.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ternkit {

namespace {

void filter_layout(const DenseTensor& w, std::size_t& filters, std::size_t& n) {
  if (w.rank() == 0 || w.size() == 0) throw DomainError("filter bank is empty");
  filters = w.rank() == 1 ? 1 : w.dim(0);
  n = w.size() / filters;
}

std::vector<float> to_float(const std::vector<double>& v) { return std::vector<float>(v.begin(), v.end()); }

}  // namespace

double QuantResult::zero_fraction() const {
  if (codes.size() == 0) return 0.0;
  const auto zeros = std::count(codes.storage().begin(), codes.storage().end(), std::int8_t{0});
  return static_cast<double>(zeros) / static_cast<double>(codes.size());
}

DenseTensor QuantResult::dequantize() const {
  DenseTensor out(codes.shape());
  const std::size_t n = filter_size();
  for (std::size_t f = 0; f < filters(); ++f) {
    for (std::size_t i = 0; i < n; ++i) out[f * n + i] = alpha[f] * codes[f * n + i];
  }
  return out;
}

DenseTensor BinaryResult::dequantize() const {
  DenseTensor out(codes.shape());
  const std::size_t n = alpha.empty() ? 0 : codes.size() / alpha.size();
  for (std::size_t f = 0; f < alpha.size(); ++f) {
    for (std::size_t i = 0; i < n; ++i) out[f * n + i] = alpha[f] * codes[f * n + i];
  }
  return out;
}

QuantResult ternarize_weights(const DenseTensor& w) {
  require_finite(w, "ternarize_weights");
  std::size_t filters = 0, n = 0;
  filter_layout(w, filters, n);

  QuantResult q{CodeTensor(w.shape()), std::vector<double>(filters), std::vector<double>(filters)};
  for (std::size_t f = 0; f < filters; ++f) {
    const double* src = w.raw() + f * n;
    double abs_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) abs_sum += std::abs(src[i]);
    const double delta = 0.7 * abs_sum / static_cast<double>(n);

    double kept = 0.0;
    std::size_t kept_count = 0;
    for (std::size_t i = 0; i < n; ++i) {
      std::int8_t c = 0;
      if (src[i] > delta) c = 1;
      else if (src[i] < -delta) c = -1;
      q.codes[f * n + i] = c;
      if (c != 0) {
        kept += std::abs(src[i]);
        ++kept_count;
      }
    }
    q.delta[f] = delta;
    q.alpha[f] = kept_count == 0 ? 0.0 : kept / static_cast<double>(kept_count);
  }
  return q;
}

QuantResult ternarize_sparse(const DenseTensor& w, double sparsity) {
  if (!(sparsity >= 0.0 && sparsity < 1.0)) {
    throw DomainError("ternarize_sparse: sparsity " + std::to_string(sparsity) + " must lie in [0,1)");
  }
  require_finite(w, "ternarize_sparse");
  std::size_t filters = 0, n = 0;
  filter_layout(w, filters, n);
  const auto zeros = static_cast<std::size_t>(std::ceil(sparsity * static_cast<double>(n) - 1e-9));

  QuantResult q{CodeTensor(w.shape()), std::vector<double>(filters), std::vector<double>(filters)};
  std::vector<std::size_t> order(n);
  for (std::size_t f = 0; f < filters; ++f) {
    const double* src = w.raw() + f * n;
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [src](std::size_t a, std::size_t b) { return std::abs(src[a]) < std::abs(src[b]); });

    double kept = 0.0;
    for (std::size_t rank = 0; rank < n; ++rank) {
      const std::size_t i = order[rank];
      if (rank < zeros) {
        q.codes[f * n + i] = 0;
      } else {
        q.codes[f * n + i] = sign_hard(src[i]);
        kept += std::abs(src[i]);
      }
    }
    q.delta[f] = zeros == 0 ? 0.0 : std::abs(src[order[zeros - 1]]);
    q.alpha[f] = zeros == n ? 0.0 : kept / static_cast<double>(n - zeros);
  }
  return q;
}

BinaryResult binarize_weights(const DenseTensor& w) {
  require_finite(w, "binarize_weights");
  std::size_t filters = 0, n = 0;
  filter_layout(w, filters, n);
  BinaryResult b{CodeTensor(w.shape()), std::vector<double>(filters)};
  for (std::size_t f = 0; f < filters; ++f) {
    double abs_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double v = w[f * n + i];
      b.codes[f * n + i] = sign_hard(v);
      abs_sum += std::abs(v);
    }
    b.alpha[f] = abs_sum / static_cast<double>(n);
  }
  return b;
}

CodeTensor tern_hard(const DenseTensor& x) {
  require_finite(x, "tern_hard");
  CodeTensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = tern_hard(x[i]);
  return out;
}

CodeTensor sign_hard(const DenseTensor& x) {
  CodeTensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = sign_hard(x[i]);
  return out;
}

PackedTernaryTensor pack_filters(const QuantResult& q) {
  CodeTensor rows = q.codes;
  rows.reshape({q.filters(), q.filter_size()});
  return pack(rows, to_float(q.alpha));
}

PackedTernaryTensor pack_filters(const BinaryResult& b) {
  CodeTensor rows = b.codes;
  rows.reshape({b.alpha.size(), b.codes.size() / b.alpha.size()});
  return pack(rows, to_float(b.alpha));
}

}  // namespace ternkit
