#pragma once

#include <cstddef>
#include <utility>

#include "ternkit/tensor.hpp"

// Shape-changing feature map operations on (N, C, H, W) tensors, with their
// reverse passes.

namespace ternkit {

// Non-overlapping k x k average; H and W must be divisible by k. Window terms
// are summed in row-major order, then scaled.
DenseTensor avgpool2d(const DenseTensor& x, std::size_t k);
DenseTensor avgpool2d_backward(const DenseTensor& grad_out, std::size_t k);

// Nearest-neighbour upsampling by an integer factor.
DenseTensor upsample_nearest(const DenseTensor& x, std::size_t k);
DenseTensor upsample_nearest_backward(const DenseTensor& grad_out, std::size_t k);

// Channel concatenation [a, b]; spatial extents and batch must agree.
DenseTensor concat_channels(const DenseTensor& a, const DenseTensor& b);
std::pair<DenseTensor, DenseTensor> split_channels(const DenseTensor& grad, std::size_t a_channels);

}  // namespace ternkit
