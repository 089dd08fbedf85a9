#include "ternkit/layers.hpp"

#include <algorithm>
#include <string>

namespace ternkit {

namespace {

void require_nchw(const DenseTensor& x, const char* who) {
  if (x.rank() != 4) throw DomainError(std::string(who) + ": expected (N,C,H,W), got " + shape_string(x.shape()));
}

}  // namespace

DenseTensor avgpool2d(const DenseTensor& x, std::size_t k) {
  require_nchw(x, "avgpool2d");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (k == 0 || h % k || w % k) {
    throw DomainError("avgpool2d: " + std::to_string(h) + "x" + std::to_string(w) + " is not divisible by " +
                      std::to_string(k));
  }
  const std::size_t oh = h / k, ow = w / k;
  const double scale = 1.0 / static_cast<double>(k * k);
  DenseTensor out({n, c, oh, ow});
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* src = x.raw() + p * h * w;
    double* dst = out.raw() + p * oh * ow;
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double s = 0.0;
        for (std::size_t dy = 0; dy < k; ++dy)
          for (std::size_t dx = 0; dx < k; ++dx) s += src[(oy * k + dy) * w + ox * k + dx];
        dst[oy * ow + ox] = s * scale;
      }
  }
  return out;
}

DenseTensor avgpool2d_backward(const DenseTensor& g, std::size_t k) {
  require_nchw(g, "avgpool2d_backward");
  const std::size_t n = g.dim(0), c = g.dim(1), oh = g.dim(2), ow = g.dim(3), h = oh * k, w = ow * k;
  const double scale = 1.0 / static_cast<double>(k * k);
  DenseTensor out({n, c, h, w});
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* src = g.raw() + p * oh * ow;
    double* dst = out.raw() + p * h * w;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) dst[y * w + x] = src[(y / k) * ow + x / k] * scale;
  }
  return out;
}

DenseTensor upsample_nearest(const DenseTensor& x, std::size_t k) {
  require_nchw(x, "upsample_nearest");
  if (k == 0) throw DomainError("upsample_nearest: factor must be positive");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3), oh = h * k, ow = w * k;
  DenseTensor out({n, c, oh, ow});
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* src = x.raw() + p * h * w;
    double* dst = out.raw() + p * oh * ow;
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) dst[y * ow + xx] = src[(y / k) * w + xx / k];
  }
  return out;
}

DenseTensor upsample_nearest_backward(const DenseTensor& g, std::size_t k) {
  require_nchw(g, "upsample_nearest_backward");
  const std::size_t n = g.dim(0), c = g.dim(1), oh = g.dim(2), ow = g.dim(3);
  if (k == 0 || oh % k || ow % k) throw DomainError("upsample_nearest_backward: extent not divisible by factor");
  const std::size_t h = oh / k, w = ow / k;
  DenseTensor out({n, c, h, w});
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* src = g.raw() + p * oh * ow;
    double* dst = out.raw() + p * h * w;
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) dst[(y / k) * w + xx / k] += src[y * ow + xx];
  }
  return out;
}

DenseTensor concat_channels(const DenseTensor& a, const DenseTensor& b) {
  require_nchw(a, "concat_channels");
  require_nchw(b, "concat_channels");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw DomainError("skip concat shape mismatch: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), hw = a.dim(2) * a.dim(3);
  DenseTensor out({n, ca + cb, a.dim(2), a.dim(3)});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.raw() + i * ca * hw, ca * hw, out.raw() + i * (ca + cb) * hw);
    std::copy_n(b.raw() + i * cb * hw, cb * hw, out.raw() + i * (ca + cb) * hw + ca * hw);
  }
  return out;
}

std::pair<DenseTensor, DenseTensor> split_channels(const DenseTensor& g, std::size_t ca) {
  require_nchw(g, "split_channels");
  const std::size_t n = g.dim(0), c = g.dim(1), hw = g.dim(2) * g.dim(3);
  if (ca > c) throw DomainError("split_channels: split point beyond channel count");
  const std::size_t cb = c - ca;
  DenseTensor a({n, ca, g.dim(2), g.dim(3)}), b({n, cb, g.dim(2), g.dim(3)});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(g.raw() + i * c * hw, ca * hw, a.raw() + i * ca * hw);
    std::copy_n(g.raw() + i * c * hw + ca * hw, cb * hw, b.raw() + i * cb * hw);
  }
  return {std::move(a), std::move(b)};
}

}  // namespace ternkit
