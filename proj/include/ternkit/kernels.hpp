#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "ternkit/packed_tensor.hpp"
#include "ternkit/tensor.hpp"

namespace ternkit {

// Geometry of one 2D cross-correlation over a single (C, H, W) image.
struct ConvGeometry {
  std::size_t in_channels = 1;
  std::size_t in_h = 1;
  std::size_t in_w = 1;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t dilation = 1;
  std::size_t padding = 0;

  std::size_t out_h() const;
  std::size_t out_w() const;
  std::size_t positions() const { return out_h() * out_w(); }
  // c = kernel_h * kernel_w * in_channels
  std::size_t patch_size() const { return kernel_h * kernel_w * in_channels; }
  // Throws DomainError when the dilated kernel does not fit the padded input.
  void validate() const;

  friend bool operator==(const ConvGeometry&, const ConvGeometry&) = default;
};

// Word view of one packed row.
struct PackedRow {
  std::span<const std::uint64_t> sign;
  std::span<const std::uint64_t> value;
};

inline PackedRow row_of(const PackedTernaryTensor& t, std::size_t r) { return {t.sign_row(r), t.value_row(r)}; }

// c - 2 * popcount(a_s XOR b_s) over `length` lanes. Both rows must be free of zeros.
std::int32_t binary_dot(PackedRow a, PackedRow b, std::size_t length);
// popcount(~(a_s ^ b_s) & m) - popcount((a_s ^ b_s) & m) with m = a_v & b_v.
std::int32_t ternary_dot(PackedRow a, PackedRow b, std::size_t length);

// Single-row tensor overloads; lengths must match.
std::int32_t binary_dot(const PackedTernaryTensor& a, const PackedTernaryTensor& b);
std::int32_t ternary_dot(const PackedTernaryTensor& a, const PackedTernaryTensor& b);

// im2col result: one row per output position, `patch_size` columns laid out
// channel-major, then kernel row, then kernel column. Dense or packed storage.
class PatchMatrix {
 public:
  PatchMatrix(ConvGeometry geometry, DenseTensor dense);
  PatchMatrix(ConvGeometry geometry, PackedTernaryTensor packed);

  const ConvGeometry& geometry() const noexcept { return geometry_; }
  std::size_t rows() const noexcept { return geometry_.positions(); }
  std::size_t cols() const noexcept { return geometry_.patch_size(); }
  bool is_packed() const noexcept { return packed_storage_; }
  const DenseTensor& dense() const;
  const PackedTernaryTensor& packed() const;

 private:
  ConvGeometry geometry_;
  bool packed_storage_;
  DenseTensor dense_;
  PackedTernaryTensor packed_;
};

PatchMatrix im2col(const DenseTensor& image, const ConvGeometry& g);
PatchMatrix im2col_packed(const CodeTensor& image, const ConvGeometry& g);
// Feature map packed as shape (C, H, W), i.e. rows along W.
PatchMatrix im2col_packed(const PackedTernaryTensor& fmap, const ConvGeometry& g);

// Exact integer products, (patch rows) x (filter rows).
Tensor<std::int32_t> ternary_gemm_int(const PackedTernaryTensor& patches, const PackedTernaryTensor& filters,
                                      int threads = 1);
// out[i][j] = alpha_j * ternary_dot(patch i, filter j); alpha applied once after accumulation.
DenseTensor ternary_gemm(const PatchMatrix& patches, const PackedTernaryTensor& filters,
                         std::span<const float> alphas, int threads = 1);

// Scalar GEMM, C[m x n] = A[m x k] * B[n x k]^T, one accumulator per output in
// ascending k order.
template <typename T>
void gemm_float(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m, std::size_t n,
                std::size_t k, int threads = 1);

// Dense cross-correlation. input (C,H,W) or (N,C,H,W), weights (Cout,Cin,kH,kW);
// the geometry describes one image. Fixed summation order.
DenseTensor conv2d_float(const DenseTensor& input, const DenseTensor& weights, const ConvGeometry& g,
                         std::span<const double> bias = {});

struct ConvGrads {
  DenseTensor input;
  DenseTensor weights;
  std::vector<double> bias;
};

// Reverse pass of conv2d_float for batched input.
ConvGrads conv2d_float_backward(const DenseTensor& input, const DenseTensor& weights, const DenseTensor& grad_out,
                                const ConvGeometry& g, bool need_input_grad);

// Ternary feature map (C,H,W) packed along W, filters packed as (Cout, c) with
// alpha scales. Returns (Cout, outH, outW).
DenseTensor conv2d_ternary(const PackedTernaryTensor& input, const PackedTernaryTensor& filters, const ConvGeometry& g,
                           int threads = 1);

}  // namespace ternkit
