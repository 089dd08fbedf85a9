#pragma once

#include <cstddef>
#include <cstdint>

#include "ternkit/tensor.hpp"

namespace ternkit {

// Labelled stacks: images (N, slices, size, size), masks (N, size, size).
struct Dataset {
  DenseTensor images;
  MaskTensor masks;

  std::size_t size() const { return images.empty() ? 0 : images.dim(0); }
};

// One bright, soft-edged ellipse per sample on a textured noise background,
// covering roughly 2-10% of the image. Neighbouring slices repeat the ellipse
// with a small shift and shrink; the mask is the rasterised ellipse of the
// centre slice (pixel centres inside the ellipse). Each stack is normalised to
// zero mean and unit variance. Deterministic per seed.
Dataset synth_dataset(std::uint64_t seed, std::size_t n, std::size_t size = 64, std::size_t slices = 3);

}  // namespace ternkit
