#include "ternkit/activations.hpp"

#include <cmath>
#include <string>

#include "ternkit/quantize.hpp"

namespace ternkit {

namespace {

void require_beta(double beta) {
  if (!(beta > 0.0) || !std::isfinite(beta)) throw DomainError("beta must be positive, got " + std::to_string(beta));
}

double sech2(double u) {
  const double c = std::cosh(u);
  return 1.0 / (c * c);
}

}  // namespace

double tern_tanh(double x, double beta) {
  require_beta(beta);
  return 0.5 * std::tanh(2.0 * beta * x - beta) - 0.5 * std::tanh(-2.0 * beta * x - beta);
}

double tern_tanh_grad(double x, double beta) {
  require_beta(beta);
  return beta * (sech2(2.0 * beta * x - beta) + sech2(2.0 * beta * x + beta));
}

DenseTensor tern_tanh(const DenseTensor& x, double beta) {
  require_beta(beta);
  DenseTensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = tern_tanh(x[i], beta);
  return y;
}

DenseTensor tern_tanh_grad(const DenseTensor& x, double beta) {
  require_beta(beta);
  DenseTensor g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) g[i] = tern_tanh_grad(x[i], beta);
  return g;
}

double tanh_beta(double x, double beta) {
  require_beta(beta);
  return std::tanh(beta * x);
}

double tanh_beta_grad(double x, double beta) {
  require_beta(beta);
  return beta * sech2(beta * x);
}

DenseTensor tanh_beta(const DenseTensor& x, double beta) {
  require_beta(beta);
  DenseTensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::tanh(beta * x[i]);
  return y;
}

BoxcarResult boxcar_ste(const DenseTensor& x) {
  BoxcarResult r{sign_hard(x), DenseTensor(x.shape())};
  for (std::size_t i = 0; i < x.size(); ++i) r.mask[i] = boxcar_mask(x[i]);
  return r;
}

void ContinuationSchedule::validate() const {
  if (total_epochs < 1) throw DomainError("schedule needs at least one epoch");
  if (!(beta_start > 0.0) || !(beta_start <= beta_end)) {
    throw DomainError("schedule requires 0 < beta_start <= beta_end");
  }
}

double beta_at(const ContinuationSchedule& s, int epoch) {
  s.validate();
  if (epoch < 0 || epoch >= s.total_epochs) {
    throw DomainError("epoch " + std::to_string(epoch) + " outside [0," + std::to_string(s.total_epochs) + ")");
  }
  if (s.total_epochs == 1) return s.beta_end;
  return s.beta_start + (s.beta_end - s.beta_start) * epoch / (s.total_epochs - 1);
}

}  // namespace ternkit
