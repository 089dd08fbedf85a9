#pragma once

#include <filesystem>

#include "ternkit/tensor.hpp"

namespace ternkit {

// Binary PGM (P5), 8 or 16 bit (big-endian samples). Returns (H, W) raw sample values.
DenseTensor read_pgm(const std::filesystem::path& path);
// Writes an 8-bit P5 image; values are clamped to [0, maxval].
void write_pgm(const std::filesystem::path& path, const DenseTensor& image, unsigned maxval = 255);
// (H, W) mask written as 0 / 255.
void write_mask_pgm(const std::filesystem::path& path, const MaskTensor& mask);

// Raw tensor file: "TFT1", u32 rank, u32 dims[rank], f32 payload (little-endian).
DenseTensor read_tensor(const std::filesystem::path& path);
void write_tensor(const std::filesystem::path& path, const DenseTensor& t);

// Network input (1, C, H, W) from a PGM (one slice) or a tensor file of rank 2, 3 or 4.
DenseTensor load_stack(const std::filesystem::path& path);

}  // namespace ternkit
