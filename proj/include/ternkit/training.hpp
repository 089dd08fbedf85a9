#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "ternkit/activations.hpp"
#include "ternkit/network.hpp"
#include "ternkit/synth.hpp"

namespace ternkit {

// Backward rule of the sign activation in binary-full training.
enum class BinaryBackward : std::uint8_t {
  Continuation,  // forward tanh(beta x), exact derivative
  Boxcar,        // forward sign(x), gradient passed where |x| <= 1
};

// Per-epoch learning rate: constant, or a half cosine from learning_rate
// towards zero over the run (constant within an epoch).
enum class LrSchedule : std::uint8_t { Constant, Cosine };

struct TrainConfig {
  double learning_rate = 0.0025;
  LrSchedule lr_schedule = LrSchedule::Cosine;
  std::size_t batch_size = 10;
  int epochs = 40;
  std::size_t iterations = 150;
  double weight_background = 0.5;
  double weight_foreground = 2.5;
  // total_epochs is kept equal to `epochs`.
  ContinuationSchedule schedule;
  Mode mode = Mode::TernaryFull;
  std::uint64_t seed = 1;

  // Desk-scale network and data.
  std::size_t width = 8;
  std::size_t levels = 3;
  std::size_t slices = 3;
  std::size_t image_size = 64;
  std::size_t val_samples = 20;

  // Fixed-sparsity weight quantiser when >= 0.
  double sparsity = -1.0;
  // With false, conv weights stay full precision whatever the mode (activations still follow the mode).
  bool quantize_weights = true;
  BinaryBackward binary_backward = BinaryBackward::Continuation;
  // Validate with soft activations at the current beta instead of the hard quantisers.
  bool soft_eval = false;
  double bn_momentum = 0.1;
  int threads = 1;
  std::string output_dir = "train_out";

  // 8 epochs x 50 iterations.
  static TrainConfig toy();
  void validate() const;
};

struct Param {
  std::vector<double> value;
  std::vector<double> m;
  std::vector<double> v;

  static Param of(std::vector<double> value);
};

struct LayerState {
  Param weight;  // conv kernels (Cout, Cin, kH, kW)
  Param bias;    // prediction layer
  Param gain;    // batch norm
  Param shift;
  std::vector<double> running_mean;
  std::vector<double> running_var;
};

// Full-precision weights with their Adam moments; one slot per layer.
struct MasterWeights {
  NetworkSpec spec;
  std::vector<LayerState> layers;
  std::int64_t steps = 0;
};

struct LayerGrads {
  std::vector<double> weight;
  std::vector<double> bias;
  std::vector<double> gain;
  std::vector<double> shift;
};

struct StepResult {
  double loss = 0.0;
  std::vector<LayerGrads> grads;
  // Batch statistics of every batch norm layer (empty elsewhere).
  std::vector<std::vector<double>> batch_mean;
  std::vector<std::vector<double>> batch_var;
};

struct Batch {
  DenseTensor images;  // (N, slices, H, W)
  MaskTensor masks;    // (N, H, W)
};

// Same initial weights as init_model for the same spec and seed.
MasterWeights init_master(const NetworkSpec& spec, std::uint64_t seed);

// Weights used in the forward pass: alpha * codes of the master in quantised
// modes, the master itself otherwise (and always for the prediction layer).
std::vector<double> forward_weights(const MasterWeights& master, std::size_t layer, const TrainConfig& config);

// Training-mode forward (batch statistics, soft activations at beta).
DenseTensor train_forward(const MasterWeights& master, const DenseTensor& images, const TrainConfig& config,
                          double beta);

// Loss and gradients w.r.t. the master parameters. Weight gradients are taken
// w.r.t. the quantised weights and passed through unchanged.
StepResult compute_gradients(const MasterWeights& master, const Batch& batch, const TrainConfig& config, double beta);

// Adam update with bias correction (beta1 0.9, beta2 0.999, eps 1e-8).
void adam_step(MasterWeights& master, const std::vector<LayerGrads>& grads, double learning_rate);

double learning_rate_at(const TrainConfig& config, int epoch);

// One optimisation step at beta_at(schedule, epoch) and learning_rate_at(config,
// epoch); returns the batch loss. Throws TrainingError when the loss is not finite.
double train_step(MasterWeights& master, const Batch& batch, const TrainConfig& config, int epoch);

// Inference model with running batch norm statistics.
Model export_model(const MasterWeights& master, const TrainConfig& config, double eval_beta);

// Zero-code fraction of the quantised master, per conv layer (prediction excluded).
std::vector<double> weight_sparsity(const MasterWeights& master, const TrainConfig& config);

struct LossResult {
  double loss = 0.0;
  DenseTensor grad;
};

// Mean over pixels and batch of w_class * -log softmax(scores)[class]; scores (N, 2, H, W), target (N, H, W).
double weighted_cross_entropy(const DenseTensor& scores, const MaskTensor& target, double w_bg = 0.5,
                              double w_fg = 2.5);
LossResult weighted_cross_entropy_grad(const DenseTensor& scores, const MaskTensor& target, double w_bg = 0.5,
                                       double w_fg = 2.5);

// 2|A n B| / (|A| + |B|), 1 when both are empty.
double dice(const MaskTensor& pred, const MaskTensor& target);
// Mean of the per-image Dice over the leading axis of (N, H, W) masks.
double mean_dice(const MaskTensor& pred, const MaskTensor& target);

struct EpochMetrics {
  int epoch = 0;
  double beta = 0.0;
  double train_loss = 0.0;
  double val_dice = 0.0;
  double mean_weight_sparsity = 0.0;
};

struct TrainResult {
  Model model;
  MasterWeights master;
  std::vector<EpochMetrics> metrics;
  // sparsity[epoch][k]: zero fraction of conv layer k.
  std::vector<std::vector<double>> sparsity;
  std::vector<std::string> sparsity_labels;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

TrainResult train(const TrainConfig& config, const EpochCallback& on_epoch = {});

void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& metrics);
void write_sparsity_csv(const std::filesystem::path& path, const TrainResult& result);

}  // namespace ternkit
