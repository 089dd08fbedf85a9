#include "ternkit/kernels.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <string>
#include <thread>

namespace ternkit {

namespace {

template <typename Fn>
void parallel_rows(std::size_t n, int threads, Fn&& fn) {
  const std::size_t workers = std::min<std::size_t>(threads > 1 ? static_cast<std::size_t>(threads) : 1, n);
  if (workers <= 1) {
    fn(std::size_t{0}, n);
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t t = 0; t < workers; ++t) {
    const std::size_t begin = t * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
}

void require_words(PackedRow r, std::size_t length, const char* who) {
  const std::size_t words = words_for(length);
  if (r.sign.size() < words || r.value.size() < words) {
    throw DomainError(std::string(who) + ": row holds fewer than " + std::to_string(length) + " lanes");
  }
}

// Deterministic dot product with eight interleaved partial sums.
inline double dot_lanes(const double* a, const double* b, std::size_t n) {
  double acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t l = 0; l < 8; ++l) acc[l] += a[i + l] * b[i + l];
  }
  double s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

// Output columns ox in [lo, hi) read input column ox * stride + dx inside [0, in_w).
struct ValidRange {
  std::size_t lo, hi;
};

ValidRange valid_columns(std::ptrdiff_t dx, const ConvGeometry& g) {
  const auto s = static_cast<std::ptrdiff_t>(g.stride), iw = static_cast<std::ptrdiff_t>(g.in_w);
  const auto ow = static_cast<std::ptrdiff_t>(g.out_w());
  const std::ptrdiff_t lo = dx >= 0 ? 0 : (-dx + s - 1) / s;
  const std::ptrdiff_t hi = iw - dx <= 0 ? 0 : (iw - dx + s - 1) / s;
  const std::ptrdiff_t l = std::clamp<std::ptrdiff_t>(lo, 0, ow), h = std::clamp<std::ptrdiff_t>(hi, l, ow);
  return {static_cast<std::size_t>(l), static_cast<std::size_t>(h)};
}

// Column layout for output rows [oy0, oy1) of one image: col[k * T + t], k the
// patch column, t the position within the tile, T = (oy1 - oy0) * out_w.
void im2col_rows(const double* image, const ConvGeometry& g, std::size_t oy0, std::size_t oy1, double* col) {
  const std::size_t ow = g.out_w(), P = (oy1 - oy0) * ow;
  const auto ih = static_cast<std::ptrdiff_t>(g.in_h), iw = static_cast<std::ptrdiff_t>(g.in_w);
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  std::size_t k = 0;
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    const double* plane = image + c * g.in_h * g.in_w;
    for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel_w; ++kx, ++k) {
        double* dst = col + k * P;
        const auto dy = static_cast<std::ptrdiff_t>(ky * g.dilation) - pad;
        const auto dx = static_cast<std::ptrdiff_t>(kx * g.dilation) - pad;
        const ValidRange cols = valid_columns(dx, g);
        for (std::size_t oy = oy0; oy < oy1; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride) + dy;
          double* row = dst + (oy - oy0) * ow;
          if (y < 0 || y >= ih) {
            std::fill(row, row + ow, 0.0);
            continue;
          }
          const double* src = plane + y * iw;
          std::fill(row, row + cols.lo, 0.0);
          for (std::size_t ox = cols.lo; ox < cols.hi; ++ox) row[ox] = src[static_cast<std::ptrdiff_t>(ox * g.stride) + dx];
          std::fill(row + cols.hi, row + ow, 0.0);
        }
      }
    }
  }
}

void im2col_columns(const double* image, const ConvGeometry& g, double* col) {
  im2col_rows(image, g, 0, g.out_h(), col);
}

// Scatter-add inverse of im2col_rows.
void col2im_rows_add(const double* col, const ConvGeometry& g, std::size_t oy0, std::size_t oy1, double* image) {
  const std::size_t ow = g.out_w(), P = (oy1 - oy0) * ow;
  const auto ih = static_cast<std::ptrdiff_t>(g.in_h), iw = static_cast<std::ptrdiff_t>(g.in_w);
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  std::size_t k = 0;
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    double* plane = image + c * g.in_h * g.in_w;
    for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel_w; ++kx, ++k) {
        const double* src = col + k * P;
        const auto dy = static_cast<std::ptrdiff_t>(ky * g.dilation) - pad;
        const auto dx = static_cast<std::ptrdiff_t>(kx * g.dilation) - pad;
        const ValidRange cols = valid_columns(dx, g);
        for (std::size_t oy = oy0; oy < oy1; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride) + dy;
          if (y < 0 || y >= ih) continue;
          double* dst = plane + y * iw;
          const double* row = src + (oy - oy0) * ow;
          for (std::size_t ox = cols.lo; ox < cols.hi; ++ox) dst[static_cast<std::ptrdiff_t>(ox * g.stride) + dx] += row[ox];
        }
      }
    }
  }
}

void check_conv_operands(const DenseTensor& input, const DenseTensor& weights, const ConvGeometry& g,
                         std::size_t& batch) {
  g.validate();
  if (input.rank() == 3) {
    batch = 1;
  } else if (input.rank() == 4) {
    batch = input.dim(0);
  } else {
    throw DomainError("conv input must be (C,H,W) or (N,C,H,W), got " + shape_string(input.shape()));
  }
  const std::size_t off = input.rank() - 3;
  if (input.dim(off) != g.in_channels || input.dim(off + 1) != g.in_h || input.dim(off + 2) != g.in_w) {
    throw DomainError("conv input " + shape_string(input.shape()) + " does not match geometry");
  }
  if (weights.rank() != 4 || weights.dim(1) != g.in_channels || weights.dim(2) != g.kernel_h ||
      weights.dim(3) != g.kernel_w) {
    throw DomainError("conv weights " + shape_string(weights.shape()) + " do not match geometry");
  }
}

// Builds packed patch rows; `code_at(c, y, x)` returns the ternary code of an in-bounds pixel.
template <typename CodeAt>
PackedTernaryTensor im2col_packed_impl(const ConvGeometry& g, CodeAt&& code_at) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), c_len = g.patch_size();
  PackedTernaryTensor out = PackedTernaryTensor::zeros({oh * ow, c_len});
  const std::size_t wpr = out.words_per_row();
  auto sign = out.mutable_sign_words();
  auto value = out.mutable_value_words();
  const auto ih = static_cast<std::ptrdiff_t>(g.in_h), iw = static_cast<std::ptrdiff_t>(g.in_w);
  const auto pad = static_cast<std::ptrdiff_t>(g.padding);
  for (std::size_t oy = 0; oy < oh; ++oy) {
    for (std::size_t ox = 0; ox < ow; ++ox) {
      const std::size_t r = oy * ow + ox;
      std::uint64_t* s = sign.data() + r * wpr;
      std::uint64_t* v = value.data() + r * wpr;
      std::size_t k = 0;
      for (std::size_t c = 0; c < g.in_channels; ++c) {
        for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + ky * g.dilation) - pad;
          for (std::size_t kx = 0; kx < g.kernel_w; ++kx, ++k) {
            const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(ox * g.stride + kx * g.dilation) - pad;
            if (y < 0 || y >= ih || x < 0 || x >= iw) continue;
            const std::int8_t code = code_at(c, static_cast<std::size_t>(y), static_cast<std::size_t>(x));
            if (code == 0) continue;
            const std::uint64_t bit = std::uint64_t{1} << (k % kLanesPerWord);
            v[k / kLanesPerWord] |= bit;
            if (code > 0) s[k / kLanesPerWord] |= bit;
          }
        }
      }
    }
  }
  return out;
}

}  // namespace

std::size_t ConvGeometry::out_h() const {
  const std::size_t span = dilation * (kernel_h - 1) + 1;
  return (in_h + 2 * padding - span) / stride + 1;
}

std::size_t ConvGeometry::out_w() const {
  const std::size_t span = dilation * (kernel_w - 1) + 1;
  return (in_w + 2 * padding - span) / stride + 1;
}

void ConvGeometry::validate() const {
  if (in_channels == 0 || in_h == 0 || in_w == 0 || kernel_h == 0 || kernel_w == 0 || stride == 0 || dilation == 0) {
    throw DomainError("conv geometry has a zero extent");
  }
  if (dilation * (kernel_h - 1) + 1 > in_h + 2 * padding || dilation * (kernel_w - 1) + 1 > in_w + 2 * padding) {
    throw DomainError("kernel " + std::to_string(kernel_h) + "x" + std::to_string(kernel_w) + " (dilation " +
                      std::to_string(dilation) + ") is larger than the padded input " +
                      std::to_string(in_h + 2 * padding) + "x" + std::to_string(in_w + 2 * padding));
  }
}

std::int32_t binary_dot(PackedRow a, PackedRow b, std::size_t length) {
  require_words(a, length, "binary_dot");
  require_words(b, length, "binary_dot");
  const std::size_t words = words_for(length);
  std::int32_t differing = 0;
  for (std::size_t w = 0; w < words; ++w) {
    const std::uint64_t lanes = (w + 1 == words) ? tail_mask(length) : ~std::uint64_t{0};
    if ((a.value[w] & lanes) != lanes || (b.value[w] & lanes) != lanes) {
      throw DomainError("binary_dot: operand contains zero entries; use ternary_dot");
    }
    differing += std::popcount((a.sign[w] ^ b.sign[w]) & lanes);
  }
  return static_cast<std::int32_t>(length) - 2 * differing;
}

std::int32_t ternary_dot(PackedRow a, PackedRow b, std::size_t length) {
  require_words(a, length, "ternary_dot");
  require_words(b, length, "ternary_dot");
  const std::size_t words = words_for(length);
  std::int32_t agree = 0;
  std::int32_t oppose = 0;
  for (std::size_t w = 0; w < words; ++w) {
    const std::uint64_t diff = a.sign[w] ^ b.sign[w];
    const std::uint64_t both = a.value[w] & b.value[w];
    agree += std::popcount(~diff & both);
    oppose += std::popcount(diff & both);
  }
  return agree - oppose;
}

std::int32_t binary_dot(const PackedTernaryTensor& a, const PackedTernaryTensor& b) {
  if (a.rows() != 1 || b.rows() != 1 || a.row_length() != b.row_length()) {
    throw DomainError("binary_dot: operands must be single rows of equal length");
  }
  return binary_dot(row_of(a, 0), row_of(b, 0), a.row_length());
}

std::int32_t ternary_dot(const PackedTernaryTensor& a, const PackedTernaryTensor& b) {
  if (a.rows() != 1 || b.rows() != 1 || a.row_length() != b.row_length()) {
    throw DomainError("ternary_dot: length mismatch (" + std::to_string(a.row_length()) + " vs " +
                      std::to_string(b.row_length()) + ")");
  }
  return ternary_dot(row_of(a, 0), row_of(b, 0), a.row_length());
}

PatchMatrix::PatchMatrix(ConvGeometry geometry, DenseTensor dense)
    : geometry_(geometry), packed_storage_(false), dense_(std::move(dense)) {}

PatchMatrix::PatchMatrix(ConvGeometry geometry, PackedTernaryTensor packed)
    : geometry_(geometry), packed_storage_(true), packed_(std::move(packed)) {}

const DenseTensor& PatchMatrix::dense() const {
  if (packed_storage_) throw DomainError("patch matrix holds packed storage");
  return dense_;
}

const PackedTernaryTensor& PatchMatrix::packed() const {
  if (!packed_storage_) throw DomainError("patch matrix holds dense storage");
  return packed_;
}

PatchMatrix im2col(const DenseTensor& image, const ConvGeometry& g) {
  g.validate();
  if (image.rank() != 3 || image.dim(0) != g.in_channels || image.dim(1) != g.in_h || image.dim(2) != g.in_w) {
    throw DomainError("im2col: image " + shape_string(image.shape()) + " does not match geometry");
  }
  const std::size_t P = g.positions(), c = g.patch_size();
  std::vector<double> col(c * P);
  im2col_columns(image.raw(), g, col.data());
  DenseTensor rows({P, c});
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t r = 0; r < P; ++r) rows[r * c + k] = col[k * P + r];
  }
  return PatchMatrix(g, std::move(rows));
}

PatchMatrix im2col_packed(const CodeTensor& image, const ConvGeometry& g) {
  g.validate();
  if (image.rank() != 3 || image.dim(0) != g.in_channels || image.dim(1) != g.in_h || image.dim(2) != g.in_w) {
    throw DomainError("im2col_packed: image " + shape_string(image.shape()) + " does not match geometry");
  }
  for (std::size_t i = 0; i < image.size(); ++i) {
    if (image[i] < -1 || image[i] > 1) {
      throw DomainError("im2col_packed: code " + std::to_string(image[i]) + " at index " + std::to_string(i) +
                        " is not in {-1,0,+1}");
    }
  }
  const std::int8_t* data = image.raw();
  auto packed = im2col_packed_impl(g, [&](std::size_t c, std::size_t y, std::size_t x) {
    return data[(c * g.in_h + y) * g.in_w + x];
  });
  return PatchMatrix(g, std::move(packed));
}

PatchMatrix im2col_packed(const PackedTernaryTensor& fmap, const ConvGeometry& g) {
  g.validate();
  const Shape& s = fmap.shape();
  if (s.size() != 3 || s[0] != g.in_channels || s[1] != g.in_h || s[2] != g.in_w) {
    throw DomainError("im2col_packed: feature map " + shape_string(s) + " does not match geometry");
  }
  const CodeTensor codes = unpack(fmap);
  const std::int8_t* data = codes.raw();
  auto packed = im2col_packed_impl(g, [&](std::size_t c, std::size_t y, std::size_t x) {
    return data[(c * g.in_h + y) * g.in_w + x];
  });
  return PatchMatrix(g, std::move(packed));
}

Tensor<std::int32_t> ternary_gemm_int(const PackedTernaryTensor& patches, const PackedTernaryTensor& filters,
                                      int threads) {
  if (patches.row_length() != filters.row_length()) {
    throw DomainError("ternary_gemm: patch length " + std::to_string(patches.row_length()) +
                      " does not match filter length " + std::to_string(filters.row_length()));
  }
  const std::size_t m = patches.rows(), n = filters.rows(), wpr = patches.words_per_row();
  Tensor<std::int32_t> out({m, n});
  const std::uint64_t* ps = patches.sign_words().data();
  const std::uint64_t* pv = patches.value_words().data();
  const std::uint64_t* fs = filters.sign_words().data();
  const std::uint64_t* fv = filters.value_words().data();
  std::int32_t* dst = out.raw();
  parallel_rows(m, threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const std::uint64_t* as = ps + i * wpr;
      const std::uint64_t* av = pv + i * wpr;
      for (std::size_t j = 0; j < n; ++j) {
        const std::uint64_t* bs = fs + j * wpr;
        const std::uint64_t* bv = fv + j * wpr;
        std::int32_t agree = 0, oppose = 0;
        for (std::size_t w = 0; w < wpr; ++w) {
          const std::uint64_t diff = as[w] ^ bs[w];
          const std::uint64_t both = av[w] & bv[w];
          agree += std::popcount(~diff & both);
          oppose += std::popcount(diff & both);
        }
        dst[i * n + j] = agree - oppose;
      }
    }
  });
  return out;
}

DenseTensor ternary_gemm(const PatchMatrix& patches, const PackedTernaryTensor& filters, std::span<const float> alphas,
                         int threads) {
  if (alphas.size() != filters.rows()) {
    throw DomainError("ternary_gemm: " + std::to_string(alphas.size()) + " alphas for " +
                      std::to_string(filters.rows()) + " filters");
  }
  if (patches.cols() != filters.row_length()) {
    throw DomainError("ternary_gemm: patch columns " + std::to_string(patches.cols()) +
                      " do not match filter length " + std::to_string(filters.row_length()));
  }
  const auto acc = ternary_gemm_int(patches.packed(), filters, threads);
  const std::size_t m = acc.dim(0), n = acc.dim(1);
  DenseTensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = static_cast<double>(alphas[j]) * acc[i * n + j];
  }
  return out;
}

template <typename T>
void gemm_float(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m, std::size_t n,
                std::size_t k, int threads) {
  if (a.size() < m * k || b.size() < n * k || c.size() < m * n) throw DomainError("gemm_float: operand too small");
  parallel_rows(m, threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const T* ar = a.data() + i * k;
      for (std::size_t j = 0; j < n; ++j) {
        const T* br = b.data() + j * k;
        T acc = 0;
        for (std::size_t p = 0; p < k; ++p) acc += ar[p] * br[p];
        c[i * n + j] = acc;
      }
    }
  });
}

template void gemm_float<float>(std::span<const float>, std::span<const float>, std::span<float>, std::size_t,
                                std::size_t, std::size_t, int);
template void gemm_float<double>(std::span<const double>, std::span<const double>, std::span<double>, std::size_t,
                                 std::size_t, std::size_t, int);

namespace {

typedef double v4d __attribute__((vector_size(32)));

inline v4d load4(const double* p) {
  v4d v;
  std::memcpy(&v, p, sizeof v);
  return v;
}
inline void store4(double* p, v4d v) { std::memcpy(p, &v, sizeof v); }

// C[m x n] += A[m x kk] * B[kk x n], row-major with leading dimensions lda/ldb/ldc.
// Each output keeps one accumulator that starts from its current value and adds
// terms in ascending kk.
void gemm_accumulate(const double* A, std::size_t lda, const double* B, std::size_t ldb, double* C, std::size_t ldc,
                     std::size_t m, std::size_t kk, std::size_t n) {
  constexpr std::size_t MR = 4, NR = 8;
  std::size_t i = 0;
  for (; i + MR <= m; i += MR) {
    const double* a0 = A + i * lda;
    const double* a1 = a0 + lda;
    const double* a2 = a1 + lda;
    const double* a3 = a2 + lda;
    std::size_t r = 0;
    for (; r + NR <= n; r += NR) {
      double* c0 = C + i * ldc + r;
      v4d x00 = load4(c0), x01 = load4(c0 + 4);
      v4d x10 = load4(c0 + ldc), x11 = load4(c0 + ldc + 4);
      v4d x20 = load4(c0 + 2 * ldc), x21 = load4(c0 + 2 * ldc + 4);
      v4d x30 = load4(c0 + 3 * ldc), x31 = load4(c0 + 3 * ldc + 4);
      const double* b = B + r;
      for (std::size_t k = 0; k < kk; ++k, b += ldb) {
        const v4d b0 = load4(b), b1 = load4(b + 4);
        x00 += a0[k] * b0;
        x01 += a0[k] * b1;
        x10 += a1[k] * b0;
        x11 += a1[k] * b1;
        x20 += a2[k] * b0;
        x21 += a2[k] * b1;
        x30 += a3[k] * b0;
        x31 += a3[k] * b1;
      }
      store4(c0, x00);
      store4(c0 + 4, x01);
      store4(c0 + ldc, x10);
      store4(c0 + ldc + 4, x11);
      store4(c0 + 2 * ldc, x20);
      store4(c0 + 2 * ldc + 4, x21);
      store4(c0 + 3 * ldc, x30);
      store4(c0 + 3 * ldc + 4, x31);
    }
    for (; r < n; ++r)
      for (std::size_t q = 0; q < MR; ++q) {
        double acc = C[(i + q) * ldc + r];
        for (std::size_t k = 0; k < kk; ++k) acc += A[(i + q) * lda + k] * B[k * ldb + r];
        C[(i + q) * ldc + r] = acc;
      }
  }
  for (; i < m; ++i) {
    const double* a = A + i * lda;
    std::size_t r = 0;
    for (; r + NR <= n; r += NR) {
      double* c = C + i * ldc + r;
      v4d x0 = load4(c), x1 = load4(c + 4);
      const double* b = B + r;
      for (std::size_t k = 0; k < kk; ++k, b += ldb) {
        x0 += a[k] * load4(b);
        x1 += a[k] * load4(b + 4);
      }
      store4(c, x0);
      store4(c + 4, x1);
    }
    for (; r < n; ++r) {
      double acc = C[i * ldc + r];
      for (std::size_t k = 0; k < kk; ++k) acc += a[k] * B[k * ldb + r];
      C[i * ldc + r] = acc;
    }
  }
}

// C[m x n] += A[m x kk] * B[n x kk]^T; dot products over contiguous rows.
void gemm_nt_accumulate(const double* A, std::size_t lda, const double* B, std::size_t ldb, double* C,
                        std::size_t ldc, std::size_t m, std::size_t kk, std::size_t n) {
  auto hsum = [](v4d v) { return (v[0] + v[1]) + (v[2] + v[3]); };
  const std::size_t k4 = kk / 4 * 4;
  std::size_t i = 0;
  for (; i + 2 <= m; i += 2) {
    const double* a0 = A + i * lda;
    const double* a1 = a0 + lda;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      const double* b0 = B + j * ldb;
      const double* b1 = b0 + ldb;
      const double* b2 = b1 + ldb;
      const double* b3 = b2 + ldb;
      v4d x[2][4] = {};
      for (std::size_t k = 0; k < k4; k += 4) {
        const v4d p0 = load4(a0 + k), p1 = load4(a1 + k);
        const v4d q0 = load4(b0 + k), q1 = load4(b1 + k), q2 = load4(b2 + k), q3 = load4(b3 + k);
        x[0][0] += p0 * q0;
        x[0][1] += p0 * q1;
        x[0][2] += p0 * q2;
        x[0][3] += p0 * q3;
        x[1][0] += p1 * q0;
        x[1][1] += p1 * q1;
        x[1][2] += p1 * q2;
        x[1][3] += p1 * q3;
      }
      for (std::size_t q = 0; q < 2; ++q)
        for (std::size_t l = 0; l < 4; ++l) {
          double s = hsum(x[q][l]);
          const double* a = q == 0 ? a0 : a1;
          const double* b = B + (j + l) * ldb;
          for (std::size_t k = k4; k < kk; ++k) s += a[k] * b[k];
          C[(i + q) * ldc + j + l] += s;
        }
    }
    for (; j < n; ++j)
      for (std::size_t q = 0; q < 2; ++q) C[(i + q) * ldc + j] += dot_lanes(A + (i + q) * lda, B + j * ldb, kk);
  }
  for (; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) C[i * ldc + j] += dot_lanes(A + i * lda, B + j * ldb, kk);
}

void transpose(const double* src, double* dst, std::size_t rows, std::size_t cols) {
  constexpr std::size_t T = 32;
  for (std::size_t i0 = 0; i0 < rows; i0 += T)
    for (std::size_t j0 = 0; j0 < cols; j0 += T)
      for (std::size_t i = i0; i < std::min(rows, i0 + T); ++i)
        for (std::size_t j = j0; j < std::min(cols, j0 + T); ++j) dst[j * rows + i] = src[i * cols + j];
}

// Output rows per im2col tile, sized so the tile stays in cache.
std::size_t tile_rows(const ConvGeometry& g) {
  constexpr std::size_t kTileBytes = 256 * 1024;
  const std::size_t per_row = g.patch_size() * g.out_w() * sizeof(double);
  return std::clamp<std::size_t>(kTileBytes / std::max<std::size_t>(per_row, 1), 1, g.out_h());
}

}  // namespace

DenseTensor conv2d_float(const DenseTensor& input, const DenseTensor& weights, const ConvGeometry& g,
                         std::span<const double> bias) {
  std::size_t batch = 0;
  check_conv_operands(input, weights, g, batch);
  const std::size_t cout = weights.dim(0), c = g.patch_size(), P = g.positions(), ow = g.out_w();
  if (!bias.empty() && bias.size() != cout) throw DomainError("conv bias length does not match output channels");

  Shape out_shape = input.rank() == 3 ? Shape{cout, g.out_h(), g.out_w()} : Shape{batch, cout, g.out_h(), g.out_w()};
  DenseTensor out(std::move(out_shape));
  const std::size_t rows = tile_rows(g);
  std::vector<double> col(c * rows * ow);
  const std::size_t in_stride = g.in_channels * g.in_h * g.in_w;
  for (std::size_t b = 0; b < batch; ++b) {
    double* out_img = out.raw() + b * cout * P;
    for (std::size_t j = 0; j < cout; ++j) std::fill(out_img + j * P, out_img + (j + 1) * P, bias.empty() ? 0.0 : bias[j]);
    for (std::size_t oy = 0; oy < g.out_h(); oy += rows) {
      const std::size_t oy1 = std::min(g.out_h(), oy + rows), T = (oy1 - oy) * ow;
      im2col_rows(input.raw() + b * in_stride, g, oy, oy1, col.data());
      gemm_accumulate(weights.raw(), c, col.data(), T, out_img + oy * ow, P, cout, c, T);
    }
  }
  return out;
}

ConvGrads conv2d_float_backward(const DenseTensor& input, const DenseTensor& weights, const DenseTensor& grad_out,
                                const ConvGeometry& g, bool need_input_grad) {
  std::size_t batch = 0;
  check_conv_operands(input, weights, g, batch);
  const std::size_t cout = weights.dim(0), c = g.patch_size(), P = g.positions(), ow = g.out_w();
  if (grad_out.size() != batch * cout * P) throw DomainError("conv backward: gradient shape mismatch");

  ConvGrads grads{need_input_grad ? DenseTensor(input.shape()) : DenseTensor{}, DenseTensor(weights.shape()),
                  std::vector<double>(cout, 0.0)};
  const std::size_t rows = tile_rows(g), tile = rows * ow;
  std::vector<double> col(c * tile);
  std::vector<double> dcol(need_input_grad ? c * tile : 0);
  std::vector<double> w_t(need_input_grad ? c * cout : 0);
  if (need_input_grad) transpose(weights.raw(), w_t.data(), cout, c);
  const std::size_t in_stride = g.in_channels * g.in_h * g.in_w;
  for (std::size_t b = 0; b < batch; ++b) {
    const double* go = grad_out.raw() + b * cout * P;
    for (std::size_t j = 0; j < cout; ++j) {
      double s = 0.0;
      for (std::size_t r = 0; r < P; ++r) s += go[j * P + r];
      grads.bias[j] += s;
    }
    for (std::size_t oy = 0; oy < g.out_h(); oy += rows) {
      const std::size_t oy1 = std::min(g.out_h(), oy + rows), T = (oy1 - oy) * ow;
      const double* go_tile = go + oy * ow;
      im2col_rows(input.raw() + b * in_stride, g, oy, oy1, col.data());
      // dW (cout x c) += G (cout x T) * col^T (T x c)
      gemm_nt_accumulate(go_tile, P, col.data(), T, grads.weights.raw(), c, cout, T, c);
      if (need_input_grad) {
        // dcol (c x T) = W^T (c x cout) * G (cout x T)
        std::fill(dcol.begin(), dcol.begin() + static_cast<std::ptrdiff_t>(c * T), 0.0);
        gemm_accumulate(w_t.data(), cout, go_tile, P, dcol.data(), T, c, cout, T);
        col2im_rows_add(dcol.data(), g, oy, oy1, grads.input.raw() + b * in_stride);
      }
    }
  }
  return grads;
}

DenseTensor conv2d_ternary(const PackedTernaryTensor& input, const PackedTernaryTensor& filters, const ConvGeometry& g,
                           int threads) {
  if (filters.row_length() != g.patch_size()) {
    throw DomainError("conv2d_ternary: filter length " + std::to_string(filters.row_length()) +
                      " does not match patch size " + std::to_string(g.patch_size()));
  }
  const PatchMatrix patches = im2col_packed(input, g);
  const auto acc = ternary_gemm_int(patches.packed(), filters, threads);
  const std::size_t cout = filters.rows(), P = g.positions();
  DenseTensor out({cout, g.out_h(), g.out_w()});
  for (std::size_t j = 0; j < cout; ++j) {
    const double alpha = filters.has_scales() ? static_cast<double>(filters.scales()[j]) : 1.0;
    for (std::size_t r = 0; r < P; ++r) out[j * P + r] = alpha * acc[r * cout + j];
  }
  return out;
}

}  // namespace ternkit
