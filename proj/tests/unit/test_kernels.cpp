#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "ternkit/kernels.hpp"
#include "ternkit/quantize.hpp"

using namespace ternkit;

namespace {

PackedTernaryTensor packed_row(const std::vector<std::int8_t>& v) { return pack(oracle::row_tensor(v)); }

DenseTensor random_dense(std::mt19937_64& rng, Shape shape) {
  std::normal_distribution<double> nd;
  DenseTensor t(std::move(shape));
  for (auto& v : t.storage()) v = nd(rng);
  return t;
}

CodeTensor random_code_tensor(std::mt19937_64& rng, Shape shape) {
  const std::size_t n = shape_size(shape);
  return CodeTensor(std::move(shape), oracle::random_codes(rng, n));
}

}  // namespace

TEST_CASE("binary_dot worked examples") {
  const std::vector<std::int8_t> a{1, 1, -1, 1}, b{1, -1, -1, 1};
  CHECK(binary_dot(packed_row(a), packed_row(b)) == 2);
  CHECK(binary_dot(packed_row(a), packed_row(a)) == 4);
  CHECK(binary_dot(packed_row(a), packed_row({-1, -1, 1, -1})) == -4);
  CHECK_THROWS_AS(binary_dot(packed_row(a), packed_row({1, 0, 1, 1})), DomainError);
}

TEST_CASE("binary_dot exhaustive for c <= 8") {
  for (std::size_t c = 1; c <= 8; ++c) {
    for (unsigned x = 0; x < (1u << c); ++x) {
      std::vector<std::int8_t> a(c);
      for (std::size_t i = 0; i < c; ++i) a[i] = (x >> i) & 1 ? 1 : -1;
      const auto pa = packed_row(a);
      for (unsigned y = 0; y < (1u << c); ++y) {
        std::vector<std::int8_t> b(c);
        for (std::size_t i = 0; i < c; ++i) b[i] = (y >> i) & 1 ? 1 : -1;
        REQUIRE(binary_dot(pa, packed_row(b)) == oracle::int_dot(a, b));
      }
    }
  }
}

TEST_CASE("ternary_dot worked example and annihilator") {
  CHECK(ternary_dot(packed_row({1, 0, -1, 1}), packed_row({-1, 1, -1, 0})) == 0);
  CHECK(ternary_dot(packed_row({1, -1, 1}), packed_row({0, 0, 0})) == 0);
  CHECK_THROWS_AS(ternary_dot(packed_row({1, 0}), packed_row({1, 0, 1})), DomainError);
}

TEST_CASE("ternary_dot reproduces all nine single-lane products") {
  for (int a = -1; a <= 1; ++a)
    for (int b = -1; b <= 1; ++b) {
      const std::vector<std::int8_t> va{static_cast<std::int8_t>(a)}, vb{static_cast<std::int8_t>(b)};
      CHECK(ternary_dot(packed_row(va), packed_row(vb)) == a * b);
    }
}

TEST_CASE("ternary_dot random equivalence and padding independence") {
  std::mt19937_64 rng(42);
  for (std::size_t c : {64, 576, 1152, 100}) {
    for (int t = 0; t < 500; ++t) {
      const auto a = oracle::random_codes(rng, c), b = oracle::random_codes(rng, c);
      const auto dot = ternary_dot(packed_row(a), packed_row(b));
      REQUIRE(dot == oracle::int_dot(a, b));
      auto ap = a, bp = b;
      ap.resize(c + 37, 0);
      bp.resize(c + 37, 0);
      REQUIRE(ternary_dot(packed_row(ap), packed_row(bp)) == dot);
    }
  }
}

TEST_CASE("conv geometry") {
  ConvGeometry g{1, 5, 5, 3, 3, 1, 2, 0};
  CHECK(g.out_h() == 1);
  CHECK(g.patch_size() == 9);
  CHECK_THROWS_AS((ConvGeometry{1, 4, 4, 3, 3, 1, 2, 0}.validate()), DomainError);
  CHECK_NOTHROW((ConvGeometry{1, 4, 4, 3, 3, 1, 2, 1}.validate()));
  CHECK(ConvGeometry{3, 64, 64, 3, 3, 1, 1, 1}.out_w() == 64);
  CHECK(ConvGeometry{3, 9, 9, 3, 3, 2, 1, 0}.out_w() == 4);
}

TEST_CASE("im2col layouts") {
  SUBCASE("1x1 kernel gives the channel-interleaved input") {
    std::mt19937_64 rng(1);
    const auto img = random_dense(rng, {3, 2, 4});
    const auto p = im2col(img, ConvGeometry{3, 2, 4, 1, 1});
    REQUIRE(p.rows() == 8);
    REQUIRE(p.cols() == 3);
    for (std::size_t r = 0; r < 8; ++r)
      for (std::size_t c = 0; c < 3; ++c) CHECK(p.dense()[r * 3 + c] == img[c * 8 + r]);
  }
  SUBCASE("3x3 on 3x3 reads in order") {
    DenseTensor img({1, 3, 3});
    for (std::size_t i = 0; i < 9; ++i) img[i] = static_cast<double>(i);
    const auto p = im2col(img, ConvGeometry{1, 3, 3, 3, 3});
    REQUIRE(p.rows() == 1);
    for (std::size_t i = 0; i < 9; ++i) CHECK(p.dense()[i] == static_cast<double>(i));
  }
  SUBCASE("dilation 2 samples the corner, edge and centre pattern") {
    DenseTensor img({1, 5, 5});
    for (std::size_t i = 0; i < 25; ++i) img[i] = static_cast<double>(i);
    const auto p = im2col(img, ConvGeometry{1, 5, 5, 3, 3, 1, 2, 0});
    const std::vector<double> expected{0, 2, 4, 10, 12, 14, 20, 22, 24};
    REQUIRE(p.rows() == 1);
    CHECK(p.dense().storage() == expected);
  }
  SUBCASE("kernel larger than input") {
    CHECK_THROWS_AS(im2col(DenseTensor({1, 2, 2}), ConvGeometry{1, 2, 2, 3, 3}), DomainError);
  }
}

TEST_CASE("packed im2col agrees with dense im2col") {
  std::mt19937_64 rng(8);
  for (const ConvGeometry& g : {ConvGeometry{3, 7, 6, 3, 3, 1, 1, 1}, ConvGeometry{2, 9, 9, 3, 3, 2, 2, 2},
                                ConvGeometry{5, 4, 4, 1, 1}}) {
    const auto codes = random_code_tensor(rng, {g.in_channels, g.in_h, g.in_w});
    const auto dense = im2col(to_dense(codes), g);
    const auto packed = im2col_packed(codes, g);
    const auto from_fmap = im2col_packed(pack(codes), g);
    const auto unpacked = unpack(packed.packed());
    for (std::size_t i = 0; i < unpacked.size(); ++i) REQUIRE(unpacked[i] == dense.dense()[i]);
    CHECK(from_fmap.packed() == packed.packed());
  }
}

TEST_CASE("ternary_gemm matches the dense integer oracle") {
  std::mt19937_64 rng(99);
  const std::size_t m = 32, c = 576, n = 16;
  const auto a = oracle::random_codes(rng, m * c), b = oracle::random_codes(rng, n * c);
  const auto pa = pack(CodeTensor({m, c}, a)), pb = pack(CodeTensor({n, c}, b));
  const auto acc = ternary_gemm_int(pa, pb);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      std::int64_t s = 0;
      for (std::size_t k = 0; k < c; ++k) s += a[i * c + k] * b[j * c + k];
      REQUIRE(acc[i * n + j] == s);
    }
  CHECK(ternary_gemm_int(pa, pb, 3) == acc);
}

TEST_CASE("ternary_gemm scaling") {
  const ConvGeometry g{1, 1, 1, 1, 1};
  const PatchMatrix p(g, pack(CodeTensor({1, 1}, {-1})));
  const auto w = pack(CodeTensor({2, 1}, {1, -1}));
  const std::vector<float> alphas{0.5f, 0.0f};
  const auto out = ternary_gemm(p, w, alphas);
  CHECK(out[0] == -0.5);
  CHECK(out[1] == 0.0);
  CHECK_THROWS_AS(ternary_gemm(p, w, std::vector<float>{1.0f}), DomainError);
}

TEST_CASE("gemm_float") {
  const std::vector<float> a{1, 2, 3, 4, 5, 6}, b{1, 0, 1, 0, 1, 0};
  std::vector<float> c(4);
  gemm_float<float>(a, b, c, 2, 2, 3);
  CHECK(c == std::vector<float>{4, 2, 10, 5});
}

TEST_CASE("conv2d_float matches the nested-loop oracle") {
  std::mt19937_64 rng(4);
  for (const ConvGeometry& g : {ConvGeometry{3, 8, 7, 3, 3, 1, 1, 1}, ConvGeometry{2, 9, 9, 3, 3, 2, 2, 1},
                                ConvGeometry{4, 5, 5, 1, 1}}) {
    const auto img = random_dense(rng, {g.in_channels, g.in_h, g.in_w});
    const auto w = random_dense(rng, {5, g.in_channels, g.kernel_h, g.kernel_w});
    const auto out = conv2d_float(img, w, g);
    const auto ref = oracle::conv_nested(img, w, g);
    REQUIRE(out.shape() == ref.shape());
    for (std::size_t i = 0; i < out.size(); ++i) REQUIRE(std::abs(out[i] - ref[i]) < 1e-6);
  }
}

TEST_CASE("conv2d_float identities") {
  DenseTensor img({2, 3, 3});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<double>(i) - 4.0;
  DenseTensor id({2, 2, 1, 1});
  id.at({0, 0, 0, 0}) = 1.0;
  id.at({1, 1, 0, 0}) = 1.0;
  CHECK(conv2d_float(img, id, ConvGeometry{2, 3, 3, 1, 1}) == img);

  const DenseTensor flat({1, 5, 5}, 2.5);
  const auto box = conv2d_float(flat, DenseTensor({1, 1, 3, 3}, 1.0), ConvGeometry{1, 5, 5, 3, 3});
  for (double v : box.storage()) CHECK(v == 9 * 2.5);
  CHECK_THROWS_AS(conv2d_float(flat, DenseTensor({1, 2, 3, 3}, 1.0), ConvGeometry{1, 5, 5, 3, 3}), DomainError);
}

TEST_CASE("conv2d_float_backward matches finite differences") {
  std::mt19937_64 rng(12);
  const ConvGeometry g{2, 5, 4, 3, 3, 1, 1, 1};
  const auto x = random_dense(rng, {2, 2, 5, 4});
  const auto w = random_dense(rng, {3, 2, 3, 3});
  const auto r = random_dense(rng, {2, 3, 5, 4});  // loss = sum(r * conv(x))
  const auto grads = conv2d_float_backward(x, w, r, g, true);
  auto loss = [&](const DenseTensor& xx, const DenseTensor& ww) {
    const auto y = conv2d_float(xx, ww, g);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * r[i];
    return s;
  };
  const double h = 1e-6;
  for (std::size_t i = 0; i < w.size(); ++i) {
    auto wp = w, wm = w;
    wp[i] += h;
    wm[i] -= h;
    CHECK(grads.weights[i] == doctest::Approx((loss(x, wp) - loss(x, wm)) / (2 * h)).epsilon(1e-6));
  }
  for (std::size_t i = 0; i < x.size(); i += 7) {
    auto xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    CHECK(grads.input[i] == doctest::Approx((loss(xp, w) - loss(xm, w)) / (2 * h)).epsilon(1e-6));
  }
}

TEST_CASE("conv2d_ternary equals the float path on unpacked codes") {
  std::mt19937_64 rng(21);
  for (const ConvGeometry& g : {ConvGeometry{16, 12, 10, 3, 3, 1, 1, 1}, ConvGeometry{8, 9, 9, 3, 3, 2, 2, 0},
                                ConvGeometry{70, 4, 4, 1, 1}}) {
    const auto x = random_code_tensor(rng, {g.in_channels, g.in_h, g.in_w});
    const auto wq = ternarize_weights(random_dense(rng, {6, g.in_channels, g.kernel_h, g.kernel_w}));
    const auto out = conv2d_ternary(pack(x), pack_filters(wq), g);
    // integer-exact dense result, scaled once per channel
    const auto ref = conv2d_float(to_dense(x), to_dense(wq.codes), g);
    REQUIRE(out.shape() == ref.shape());
    const std::size_t P = g.positions();
    for (std::size_t j = 0; j < 6; ++j)
      for (std::size_t r = 0; r < P; ++r)
        REQUIRE(out[j * P + r] == static_cast<double>(static_cast<float>(wq.alpha[j])) * ref[j * P + r]);
  }
}

TEST_CASE("conv2d_ternary identity and zero kernels") {
  std::mt19937_64 rng(5);
  const auto x = random_code_tensor(rng, {1, 6, 6});
  const ConvGeometry g{1, 6, 6, 1, 1};
  const auto id = pack(CodeTensor({1, 1}, {1}), {1.0f});
  const auto out = conv2d_ternary(pack(x), id, g);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(out[i] == x[i]);

  const ConvGeometry g3{1, 6, 6, 3, 3, 1, 1, 1};
  const auto zero = pack(CodeTensor({2, 9}, std::int8_t{0}), {0.0f, 0.0f});
  const auto zero_out = conv2d_ternary(pack(x), zero, g3);
  for (double v : zero_out.storage()) CHECK(v == 0.0);
  CHECK_THROWS_AS(conv2d_ternary(pack(x), zero, g), DomainError);
}
