#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "ternkit/kernels.hpp"
#include "ternkit/packed_tensor.hpp"
#include "ternkit/tensor.hpp"

namespace ternkit {

enum class LayerKind : std::uint8_t {
  Conv = 1,
  AvgPool = 2,
  Upsample = 3,
  ConcatSkip = 4,
  BatchNorm = 5,
  Activation = 6,
  Prediction = 7,
};

enum class Mode : std::uint8_t {
  Float = 0,
  TernaryWeightsOnly = 1,
  TernaryFull = 2,
  BinaryFull = 3,
};

enum class Precision : std::uint8_t {
  Float32 = 0,
  Ternary2Bit = 1,
  Binary1Bit = 2,
};

std::string_view to_string(LayerKind kind);
std::string_view to_string(Mode mode);
std::string_view to_string(Precision precision);
// Accepts float, ternary-weights-only, ternary-full (or ternary), binary-full (or binary).
Mode parse_mode(std::string_view name);

struct Size2 {
  std::size_t h = 0;
  std::size_t w = 0;

  bool empty() const noexcept { return h == 0 || w == 0; }
  friend bool operator==(const Size2&, const Size2&) = default;
};

struct LayerSpec {
  LayerKind kind = LayerKind::Conv;
  std::size_t kernel_h = 1;
  std::size_t kernel_w = 1;
  std::size_t stride = 1;
  std::size_t dilation = 1;
  std::size_t padding = 0;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  Size2 declared_out;
  // Stream output after this layer is kept under `save_as`; a ConcatSkip
  // appends the kept map named by `skip_from`.
  int save_as = -1;
  int skip_from = -1;
  // Accounting only: when set, count_flops evaluates the conv at this output
  // size / kernel instead of declared_out / kernel.
  Size2 flop_out;
  Size2 flop_kernel;

  bool has_weights() const noexcept { return kind == LayerKind::Conv || kind == LayerKind::Prediction; }
  std::size_t patch_size() const noexcept { return kernel_h * kernel_w * in_channels; }
  std::size_t weight_count() const noexcept { return patch_size() * out_channels; }
  ConvGeometry geometry(Size2 in) const;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct NetworkSpec {
  std::vector<LayerSpec> layers;
  std::size_t input_h = 0;
  std::size_t input_w = 0;
  std::size_t input_slices = 0;
  std::size_t width = 1;
  Mode mode = Mode::Float;

  // Structural checks: skip tags defined before use, one prediction layer,
  // positive declared sizes, concat doubling its target.
  void validate() const;
  // Table-style labels for weight layers ("#1" ... "#n", "Prediction"); empty for the rest.
  std::vector<std::string> labels() const;

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

NetworkSpec build_table1();
// Same block pattern as build_table1 at reduced width. Channels at level l are
// width * 2^l; levels - 1 pooling stages; 3x3 convs use padding 1.
NetworkSpec build_toy(std::size_t width = 8, std::size_t in_slices = 3, std::size_t levels = 3,
                      std::size_t input_h = 64, std::size_t input_w = 64);

struct LayerFlops {
  std::size_t layer = 0;
  std::string label;
  double mflops = 0.0;
};

std::vector<LayerFlops> count_flops(const NetworkSpec& net);
double total_mflops(const std::vector<LayerFlops>& rows);

struct MemoryReport {
  std::size_t parameters = 0;
  double payload_bytes = 0.0;
  // Per-channel alpha floats of the quantised layers, reported separately.
  std::size_t scale_count = 0;
  std::size_t scale_bytes = 0;
};

MemoryReport count_params_memory(const NetworkSpec& net, Precision precision);

struct BNParams {
  std::vector<float> mean;
  std::vector<float> variance;
  std::vector<float> gain;
  std::vector<float> shift;
  float epsilon = 1e-5f;

  static BNParams identity(std::size_t channels);
  std::size_t channels() const noexcept { return mean.size(); }
  void validate() const;

  struct Affine {
    std::vector<double> scale;
    std::vector<double> offset;
  };
  // y = scale * x + offset per channel.
  Affine fold() const;

  friend bool operator==(const BNParams&, const BNParams&) = default;
};

struct ConvParams {
  Precision precision = Precision::Float32;
  // Float32 layers: (Cout, Cin, kH, kW) row-major.
  std::vector<float> weights;
  // Quantised layers: (Cout, Cin*kH*kW) with alpha as row scales.
  PackedTernaryTensor packed;
  std::vector<float> bias;

  friend bool operator==(const ConvParams&, const ConvParams&) = default;
};

using LayerParams = std::variant<std::monostate, ConvParams, BNParams>;

// Inference artifact: spec plus one parameter slot per layer.
struct Model {
  NetworkSpec spec;
  std::vector<LayerParams> params;
  float eval_beta = 8.0f;
  bool ternarize_input = false;

  void validate() const;
  friend bool operator==(const Model&, const Model&) = default;
};

// Random float model (uniform +-1/sqrt(fan_in) weights, identity batch norm).
Model init_model(const NetworkSpec& spec, std::uint64_t seed);

// Quantises every conv except the prediction layer. sparsity < 0 selects the
// thresholded quantiser, otherwise the fixed-sparsity one.
Model quantize_model(const Model& float_model, Mode mode, double sparsity = -1.0);

// Weight tensor (Cout, Cin, kH, kW) of a conv; quantised layers give alpha * codes.
DenseTensor effective_weights(const LayerSpec& spec, const ConvParams& p);

struct ForwardOptions {
  // Hard activation quantisers in ternary-full / binary-full models.
  bool hard = true;
  // Slope of soft activations; defaults to the model's eval_beta.
  std::optional<double> beta;
  // Route every quantised conv through the dense path (codes as doubles, alpha after).
  bool dense_simulation = false;
  // Apply batch norm as (x - mean) / sqrt(var + eps) * gain + shift instead of the folded affine.
  bool unfolded_bn = false;
  int threads = 1;
};

// input (N, slices, H, W) -> per-class scores (N, classes, H', W').
DenseTensor forward(const Model& model, const DenseTensor& input, const ForwardOptions& options = {});

// Argmax over the class axis of (N, 2, H, W) scores; ties go to background.
MaskTensor predict_mask(const DenseTensor& scores);

}  // namespace ternkit
