#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "ternkit/network.hpp"

// Model files, little-endian:
//
//   "TNN1"  u32 layer_count
//   u32 input_h  u32 input_w  u32 input_slices  u32 width  u8 mode  u8 ternarize_input  f32 eval_beta
//   per layer:
//     u8 kind  u8 precision
//     u32 kernel_h kernel_w stride dilation padding in_channels out_channels out_h out_w
//     i32 save_as skip_from  u32 flop_out_h flop_out_w flop_kernel_h flop_kernel_w
//     conv, float32:    u32 n, f32[n] weights, u32 m, f32[m] bias
//     conv, ternary:    u32 words, u64[words] value plane, u64[words] sign plane,
//                       f32[out_channels] alpha, u32 m, f32[m] bias
//     conv, binary:     as ternary without the value plane (all lanes nonzero)
//     batch norm:       u32 c, f32[c] mean, variance, gain, shift, f32 epsilon
//   u32 CRC32 of every preceding byte
//
// Load failures raise LoadError with kind BadMagic, Truncated, ChecksumMismatch,
// Malformed or Io.

namespace ternkit {

std::vector<std::uint8_t> serialize(const Model& model);
Model deserialize(std::span<const std::uint8_t> bytes);

void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace ternkit
