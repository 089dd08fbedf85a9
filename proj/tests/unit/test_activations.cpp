#include <cmath>
#include <random>

#include "doctest.h"
#include "ternkit/activations.hpp"
#include "ternkit/quantize.hpp"

using namespace ternkit;
using doctest::Approx;

TEST_CASE("tern_tanh values") {
  CHECK(tern_tanh(0.0, 3.0) == 0.0);
  CHECK(tern_tanh(0.0, 0.7) == 0.0);
  CHECK(tern_tanh(0.5, 3.0) == Approx(0.5 * std::tanh(6.0)).epsilon(1e-14));
  CHECK(tern_tanh(0.5, 3.0) == Approx(0.49999).epsilon(1e-4));
  CHECK(std::abs(tern_tanh(10.0, 3.0) - 1.0) < 1e-9);
  CHECK(std::abs(tern_tanh(-10.0, 3.0) + 1.0) < 1e-9);
  CHECK_THROWS_AS(tern_tanh(0.1, 0.0), DomainError);
  CHECK_THROWS_AS(tern_tanh_grad(0.1, -1.0), DomainError);
}

TEST_CASE("tern_tanh is odd, bounded, monotone and flat near zero") {
  double prev = -2.0;
  for (int i = -4000; i <= 4000; ++i) {
    const double x = i * 1e-3;
    const double y = tern_tanh(x, 3.0);
    CHECK(y == Approx(-tern_tanh(-x, 3.0)).epsilon(1e-15));
    CHECK(std::abs(y) < 1.0 + 1e-15);
    CHECK(y >= prev);
    prev = y;
    if (std::abs(x) < 0.25) CHECK(std::abs(tern_tanh(x, 8.0)) < 0.02);
  }
}

TEST_CASE("tern_tanh_grad closed form and symmetry") {
  const double s = 1.0 / std::cosh(3.0);
  CHECK(tern_tanh_grad(0.0, 3.0) == Approx(6.0 * s * s).epsilon(1e-14));
  CHECK(tern_tanh_grad(0.0, 3.0) == Approx(0.0592).epsilon(1e-3));
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> ud(-2.0, 2.0);
  for (int i = 0; i < 100; ++i) {
    const double x = ud(rng);
    CHECK(tern_tanh_grad(x, 4.0) == Approx(tern_tanh_grad(-x, 4.0)).epsilon(1e-14));
    CHECK(tern_tanh_grad(x, 4.0) > 0.0);
  }
}

TEST_CASE("tern_tanh_grad matches central differences") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> xd(-1.2, 1.2), bd(0.5, 8.0);
  const double h = 1e-6;
  int checked = 0;
  while (checked < 100) {
    const double x = xd(rng), beta = bd(rng);
    const double g = tern_tanh_grad(x, beta);
    if (g < 1e-4) continue;  // saturated
    const double fd = (tern_tanh(x + h, beta) - tern_tanh(x - h, beta)) / (2 * h);
    CHECK(std::abs(fd - g) / std::abs(g) < 1e-5);
    ++checked;
  }
}

TEST_CASE("tern_tanh approaches tern_hard as beta grows") {
  double worst = 0.0;
  for (int i = 0; i <= 10000; ++i) {
    const double x = -2.0 + 4.0 * i / 10000.0;
    if (std::min(std::abs(x - 0.5), std::abs(x + 0.5)) <= 0.05) continue;
    worst = std::max(worst, std::abs(tern_tanh(x, 50.0) - tern_hard(x)));
  }
  CHECK(worst < 0.01);
}

TEST_CASE("tanh_beta") {
  CHECK(tanh_beta(0.0, 2.0) == 0.0);
  CHECK(std::abs(tanh_beta(0.2, 50.0) - 1.0) < 1e-8);
  CHECK(tanh_beta(0.37, 1.0) == std::tanh(0.37));
  const double h = 1e-6;
  CHECK(tanh_beta_grad(0.3, 2.0) == Approx((tanh_beta(0.3 + h, 2.0) - tanh_beta(0.3 - h, 2.0)) / (2 * h)).epsilon(1e-7));
}

TEST_CASE("boxcar straight-through") {
  const auto r = boxcar_ste(DenseTensor({4}, {0.3, 1.5, -1.0, -1.01}));
  CHECK(r.forward == CodeTensor({4}, {1, 1, -1, -1}));
  CHECK(r.mask == DenseTensor({4}, {1.0, 0.0, 1.0, 0.0}));
}

TEST_CASE("beta schedule") {
  const ContinuationSchedule s;
  CHECK(beta_at(s, 0) == 3.0);
  CHECK(beta_at(s, 39) == 8.0);
  CHECK(beta_at(s, 19) == Approx(3.0 + 5.0 * 19 / 39));
  CHECK(beta_at(s, 19) == Approx(5.436).epsilon(1e-3));
  CHECK(beta_at(s, 20) == Approx(5.564).epsilon(1e-3));
  CHECK(beta_at(s, 19) < 5.5);
  CHECK(beta_at(s, 20) > 5.5);
  for (int e = 1; e < 40; ++e) CHECK(beta_at(s, e) >= beta_at(s, e - 1));
  CHECK(beta_at(ContinuationSchedule{3.0, 8.0, 1}, 0) == 8.0);
  CHECK(beta_at(ContinuationSchedule::fixed(3.0, 5), 4) == 3.0);
  CHECK_THROWS_AS(beta_at(s, 40), DomainError);
  CHECK_THROWS_AS(beta_at(s, -1), DomainError);
  CHECK_THROWS_AS(beta_at(ContinuationSchedule{8.0, 3.0, 4}, 0), DomainError);
}
