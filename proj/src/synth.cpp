#include "ternkit/synth.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace ternkit {

Dataset synth_dataset(std::uint64_t seed, std::size_t n, std::size_t size, std::size_t slices) {
  if (size < 8) throw DomainError("synth_dataset: size must be at least 8");
  if (slices < 1) throw DomainError("synth_dataset: at least one slice is needed");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);

  Dataset d{DenseTensor({n, slices, size, size}), MaskTensor({n, size, size})};
  const double s = static_cast<double>(size);
  const std::size_t plane = size * size;
  for (std::size_t i = 0; i < n; ++i) {
    const double area = (0.02 + 0.08 * unit(rng)) * s * s;
    const double ratio = 0.6 + 1.0 * unit(rng);
    const double a = std::sqrt(area * ratio / std::numbers::pi);
    const double b = std::sqrt(area / (ratio * std::numbers::pi));
    const double cx = s * (0.25 + 0.5 * unit(rng));
    const double cy = s * (0.25 + 0.5 * unit(rng));
    const double theta = std::numbers::pi * unit(rng);
    const double ct = std::cos(theta), st = std::sin(theta);
    const double contrast = 0.8 + 0.6 * unit(rng);
    const double jx = 2.0 * unit(rng) - 1.0, jy = 2.0 * unit(rng) - 1.0;
    // Background texture: two oriented waves.
    double fx[2], fy[2], ph[2];
    for (int k = 0; k < 2; ++k) {
      const double f = (1.0 + 3.0 * unit(rng)) * 2.0 * std::numbers::pi / s;
      const double o = std::numbers::pi * unit(rng);
      fx[k] = f * std::cos(o);
      fy[k] = f * std::sin(o);
      ph[k] = 2.0 * std::numbers::pi * unit(rng);
    }

    // Squared normalised radius of pixel centre (x, y) for an ellipse shifted by (dx, dy), scaled by k.
    auto radius2 = [&](double x, double y, double dx, double dy, double k) {
      const double px = x - cx - dx, py = y - cy - dy;
      const double u = (px * ct + py * st) / (a * k), v = (-px * st + py * ct) / (b * k);
      return u * u + v * v;
    };

    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x)
        d.masks[i * plane + y * size + x] = radius2(x + 0.5, y + 0.5, 0.0, 0.0, 1.0) <= 1.0 ? 1 : 0;

    double* stack = d.images.raw() + i * slices * plane;
    const double mid = 0.5 * static_cast<double>(slices - 1);
    for (std::size_t sl = 0; sl < slices; ++sl) {
      const double off = static_cast<double>(sl) - mid;
      const double k = 1.0 - 0.05 * std::abs(off);
      for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
          const double px = x + 0.5, py = y + 0.5;
          const double r = std::sqrt(radius2(px, py, jx * off, jy * off, k));
          const double fg = 1.0 / (1.0 + std::exp((r - 1.0) * 12.0));
          const double tex = 0.25 * (std::sin(fx[0] * px + fy[0] * py + ph[0]) + std::sin(fx[1] * px + fy[1] * py + ph[1]));
          stack[sl * plane + y * size + x] = contrast * fg + tex + 0.3 * noise(rng);
        }
    }
    double mean = 0.0;
    const std::size_t m = slices * plane;
    for (std::size_t j = 0; j < m; ++j) mean += stack[j];
    mean /= static_cast<double>(m);
    double var = 0.0;
    for (std::size_t j = 0; j < m; ++j) var += (stack[j] - mean) * (stack[j] - mean);
    const double sd = std::sqrt(var / static_cast<double>(m));
    for (std::size_t j = 0; j < m; ++j) stack[j] = (stack[j] - mean) / sd;
  }
  return d;
}

}  // namespace ternkit
