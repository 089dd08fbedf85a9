#pragma once

#include "ternkit/tensor.hpp"

namespace ternkit {

// Ternary hyperbolic tangent: two shifted tanh steps giving plateaus at 0 and +-1,
//   y = 1/2 tanh(2 beta x - beta) - 1/2 tanh(-2 beta x - beta).
// beta is the single slope parameter; it is never applied to x a second time.
double tern_tanh(double x, double beta);
double tern_tanh_grad(double x, double beta);
DenseTensor tern_tanh(const DenseTensor& x, double beta);
DenseTensor tern_tanh_grad(const DenseTensor& x, double beta);

// tanh(beta x), the binary continuation.
double tanh_beta(double x, double beta);
double tanh_beta_grad(double x, double beta);
DenseTensor tanh_beta(const DenseTensor& x, double beta);

// Sign forward, boxcar backward: the gradient passes where |x| <= 1.
inline double boxcar_mask(double x) { return (x <= 1.0 && x >= -1.0) ? 1.0 : 0.0; }

struct BoxcarResult {
  CodeTensor forward;
  DenseTensor mask;
};
BoxcarResult boxcar_ste(const DenseTensor& x);

// Linear beta ramp, constant within an epoch.
struct ContinuationSchedule {
  double beta_start = 3.0;
  double beta_end = 8.0;
  int total_epochs = 40;

  static ContinuationSchedule fixed(double beta, int epochs) { return {beta, beta, epochs}; }
  bool is_fixed() const noexcept { return beta_start == beta_end; }
  void validate() const;
};

double beta_at(const ContinuationSchedule& schedule, int epoch);

}  // namespace ternkit
