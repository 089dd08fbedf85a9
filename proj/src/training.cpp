#include "ternkit/training.hpp"

#include <cmath>
#include <numbers>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <string>

#include "ternkit/layers.hpp"
#include "ternkit/quantize.hpp"

namespace ternkit {

namespace {

constexpr double kBnEpsilon = 1e-5;
constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEpsilon = 1e-8;

enum class Act { Tanh, TernSoft, TanhBeta, SignBoxcar };

Act training_activation(const TrainConfig& c) {
  switch (c.mode) {
    case Mode::Float: return Act::Tanh;
    case Mode::TernaryWeightsOnly:
    case Mode::TernaryFull: return Act::TernSoft;
    case Mode::BinaryFull: return c.binary_backward == BinaryBackward::Boxcar ? Act::SignBoxcar : Act::TanhBeta;
  }
  return Act::Tanh;
}

double act_value(Act a, double x, double beta) {
  switch (a) {
    case Act::Tanh: return std::tanh(x);
    case Act::TernSoft: return tern_tanh(x, beta);
    case Act::TanhBeta: return tanh_beta(x, beta);
    case Act::SignBoxcar: return sign_hard(x);
  }
  return x;
}

double act_grad(Act a, double x, double beta) {
  switch (a) {
    case Act::Tanh: {
      const double t = std::tanh(x);
      return 1.0 - t * t;
    }
    case Act::TernSoft: return tern_tanh_grad(x, beta);
    case Act::TanhBeta: return tanh_beta_grad(x, beta);
    case Act::SignBoxcar: return boxcar_mask(x);
  }
  return 1.0;
}

Shape weight_shape(const LayerSpec& l) { return {l.out_channels, l.in_channels, l.kernel_h, l.kernel_w}; }

bool quantised_layer(const LayerSpec& l, const TrainConfig& c) {
  return l.kind == LayerKind::Conv && c.quantize_weights && c.mode != Mode::Float;
}

QuantResult ternarize_for(const DenseTensor& w, const TrainConfig& c) {
  return c.sparsity < 0.0 ? ternarize_weights(w) : ternarize_sparse(w, c.sparsity);
}

DenseTensor filter_bank(const LayerSpec& l, const std::vector<double>& w) {
  return DenseTensor({l.out_channels, l.patch_size()}, w);
}

struct Tape {
  std::vector<DenseTensor> saved;  // conv: input; batch norm: normalised input; activation: pre-activation
  std::vector<std::vector<double>> weights;
  std::vector<std::vector<double>> inv_std;
  std::vector<std::vector<double>> mean;
  std::vector<std::vector<double>> var;
  std::vector<std::size_t> concat_split;
  DenseTensor out;
};

Tape run_forward(const MasterWeights& master, const DenseTensor& images, const TrainConfig& config, double beta) {
  const NetworkSpec& spec = master.spec;
  if (images.rank() != 4 || images.dim(1) != spec.input_slices) {
    throw DomainError("training input must be (N," + std::to_string(spec.input_slices) + ",H,W), got " +
                      shape_string(images.shape()));
  }
  const Act act = training_activation(config);
  const std::size_t L = spec.layers.size();
  Tape t;
  t.saved.resize(L);
  t.weights.resize(L);
  t.inv_std.resize(L);
  t.mean.resize(L);
  t.var.resize(L);
  t.concat_split.assign(L, 0);
  std::map<int, DenseTensor> skips;
  DenseTensor x = images;
  for (std::size_t i = 0; i < L; ++i) {
    const LayerSpec& l = spec.layers[i];
    const LayerState& s = master.layers[i];
    switch (l.kind) {
      case LayerKind::Conv:
      case LayerKind::Prediction: {
        t.weights[i] = forward_weights(master, i, config);
        const ConvGeometry g = l.geometry({x.dim(2), x.dim(3)});
        DenseTensor y = conv2d_float(x, DenseTensor(weight_shape(l), t.weights[i]), g, s.bias.value);
        t.saved[i] = std::move(x);
        x = std::move(y);
        break;
      }
      case LayerKind::AvgPool: x = avgpool2d(x, l.kernel_h); break;
      case LayerKind::Upsample: x = upsample_nearest(x, l.kernel_h); break;
      case LayerKind::ConcatSkip:
        t.concat_split[i] = x.dim(1);
        x = concat_channels(x, skips.at(l.skip_from));
        break;
      case LayerKind::BatchNorm: {
        const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
        const double count = static_cast<double>(n * hw);
        auto& mean = t.mean[i];
        auto& var = t.var[i];
        auto& inv = t.inv_std[i];
        mean.assign(c, 0.0);
        var.assign(c, 0.0);
        inv.assign(c, 0.0);
        for (std::size_t ch = 0; ch < c; ++ch) {
          double sum = 0.0;
          for (std::size_t b = 0; b < n; ++b) {
            const double* p = x.raw() + (b * c + ch) * hw;
            for (std::size_t r = 0; r < hw; ++r) sum += p[r];
          }
          mean[ch] = sum / count;
          double sq = 0.0;
          for (std::size_t b = 0; b < n; ++b) {
            const double* p = x.raw() + (b * c + ch) * hw;
            for (std::size_t r = 0; r < hw; ++r) sq += (p[r] - mean[ch]) * (p[r] - mean[ch]);
          }
          var[ch] = sq / count;
          inv[ch] = 1.0 / std::sqrt(var[ch] + kBnEpsilon);
        }
        DenseTensor xhat(x.shape());
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t off = (b * c + ch) * hw;
            const double gm = s.gain.value[ch], sh = s.shift.value[ch];
            for (std::size_t r = 0; r < hw; ++r) {
              xhat[off + r] = (x[off + r] - mean[ch]) * inv[ch];
              x[off + r] = gm * xhat[off + r] + sh;
            }
          }
        t.saved[i] = std::move(xhat);
        break;
      }
      case LayerKind::Activation: {
        t.saved[i] = x;
        for (auto& v : x.storage()) v = act_value(act, v, beta);
        break;
      }
    }
    if (l.save_as >= 0) skips[l.save_as] = x;
  }
  t.out = std::move(x);
  return t;
}

void add_into(DenseTensor& acc, const DenseTensor& g) {
  if (acc.empty()) {
    acc = g;
    return;
  }
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
}

}  // namespace

TrainConfig TrainConfig::toy() {
  TrainConfig c;
  c.epochs = 8;
  c.iterations = 50;
  c.schedule.total_epochs = 8;
  return c;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw DomainError("learning_rate must be positive");
  if (batch_size == 0) throw DomainError("batch_size must be positive");
  if (epochs <= 0) throw DomainError("epochs must be positive");
  if (iterations == 0) throw DomainError("iterations must be positive");
  if (!(weight_background > 0.0) || !(weight_foreground > 0.0)) throw DomainError("loss weights must be positive");
  ContinuationSchedule s = schedule;
  s.total_epochs = epochs;
  s.validate();
  if (width == 0 || levels < 2 || slices == 0 || image_size == 0) throw DomainError("invalid network geometry");
  if (val_samples == 0) throw DomainError("val_samples must be positive");
  if (sparsity >= 1.0) throw DomainError("sparsity must be below 1");
  if (sparsity >= 0.0 && mode != Mode::TernaryFull && mode != Mode::TernaryWeightsOnly) {
    throw DomainError("sparsity applies to ternary modes only");
  }
  if (!(bn_momentum > 0.0) || bn_momentum > 1.0) throw DomainError("bn_momentum must be in (0, 1]");
  if (threads < 1) throw DomainError("threads must be positive");
}

Param Param::of(std::vector<double> value) {
  Param p;
  p.m.assign(value.size(), 0.0);
  p.v.assign(value.size(), 0.0);
  p.value = std::move(value);
  return p;
}

MasterWeights init_master(const NetworkSpec& spec, std::uint64_t seed) {
  const Model m = init_model(spec, seed);
  MasterWeights master;
  master.spec = spec;
  master.layers.resize(spec.layers.size());
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    LayerState& s = master.layers[i];
    if (const auto* p = std::get_if<ConvParams>(&m.params[i])) {
      s.weight = Param::of({p->weights.begin(), p->weights.end()});
      if (!p->bias.empty()) s.bias = Param::of({p->bias.begin(), p->bias.end()});
    } else if (const auto* bn = std::get_if<BNParams>(&m.params[i])) {
      s.gain = Param::of({bn->gain.begin(), bn->gain.end()});
      s.shift = Param::of({bn->shift.begin(), bn->shift.end()});
      s.running_mean.assign(bn->mean.begin(), bn->mean.end());
      s.running_var.assign(bn->variance.begin(), bn->variance.end());
    }
  }
  return master;
}

std::vector<double> forward_weights(const MasterWeights& master, std::size_t layer, const TrainConfig& config) {
  const LayerSpec& l = master.spec.layers.at(layer);
  const std::vector<double>& w = master.layers.at(layer).weight.value;
  if (!quantised_layer(l, config)) return w;
  const DenseTensor bank = filter_bank(l, w);
  if (config.mode == Mode::BinaryFull) return binarize_weights(bank).dequantize().storage();
  return ternarize_for(bank, config).dequantize().storage();
}

DenseTensor train_forward(const MasterWeights& master, const DenseTensor& images, const TrainConfig& config,
                          double beta) {
  return run_forward(master, images, config, beta).out;
}

StepResult compute_gradients(const MasterWeights& master, const Batch& batch, const TrainConfig& config, double beta) {
  Tape t = run_forward(master, batch.images, config, beta);
  auto loss = weighted_cross_entropy_grad(t.out, batch.masks, config.weight_background, config.weight_foreground);

  const NetworkSpec& spec = master.spec;
  const std::size_t L = spec.layers.size();
  std::size_t first_weight_layer = L;
  for (std::size_t i = 0; i < L; ++i)
    if (spec.layers[i].has_weights()) {
      first_weight_layer = i;
      break;
    }
  const Act act = training_activation(config);

  StepResult r;
  r.loss = loss.loss;
  r.grads.resize(L);
  r.batch_mean = std::move(t.mean);
  r.batch_var = std::move(t.var);
  std::map<int, DenseTensor> skip_grads;
  DenseTensor g = std::move(loss.grad);
  for (std::size_t i = L; i-- > 0;) {
    const LayerSpec& l = spec.layers[i];
    if (l.save_as >= 0) {
      if (auto it = skip_grads.find(l.save_as); it != skip_grads.end()) add_into(g, it->second);
    }
    switch (l.kind) {
      case LayerKind::Conv:
      case LayerKind::Prediction: {
        const DenseTensor& in = t.saved[i];
        const ConvGeometry geo = l.geometry({in.dim(2), in.dim(3)});
        auto cg = conv2d_float_backward(in, DenseTensor(weight_shape(l), t.weights[i]), g, geo, i > first_weight_layer);
        r.grads[i].weight = std::move(cg.weights.storage());
        if (!master.layers[i].bias.value.empty()) r.grads[i].bias = std::move(cg.bias);
        g = std::move(cg.input);
        break;
      }
      case LayerKind::AvgPool: g = avgpool2d_backward(g, l.kernel_h); break;
      case LayerKind::Upsample: g = upsample_nearest_backward(g, l.kernel_h); break;
      case LayerKind::ConcatSkip: {
        auto [ga, gb] = split_channels(g, t.concat_split[i]);
        add_into(skip_grads[l.skip_from], gb);
        g = std::move(ga);
        break;
      }
      case LayerKind::BatchNorm: {
        const DenseTensor& xhat = t.saved[i];
        const std::size_t n = g.dim(0), c = g.dim(1), hw = g.dim(2) * g.dim(3);
        const double count = static_cast<double>(n * hw);
        auto& dg = r.grads[i].gain;
        auto& ds = r.grads[i].shift;
        dg.assign(c, 0.0);
        ds.assign(c, 0.0);
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t off = (b * c + ch) * hw;
            for (std::size_t q = 0; q < hw; ++q) {
              dg[ch] += g[off + q] * xhat[off + q];
              ds[ch] += g[off + q];
            }
          }
        const auto& gain = master.layers[i].gain.value;
        for (std::size_t b = 0; b < n; ++b)
          for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t off = (b * c + ch) * hw;
            const double k = gain[ch] * t.inv_std[i][ch] / count;
            for (std::size_t q = 0; q < hw; ++q) {
              g[off + q] = k * (count * g[off + q] - ds[ch] - xhat[off + q] * dg[ch]);
            }
          }
        break;
      }
      case LayerKind::Activation: {
        const DenseTensor& pre = t.saved[i];
        for (std::size_t q = 0; q < g.size(); ++q) g[q] *= act_grad(act, pre[q], beta);
        break;
      }
    }
    if (i == first_weight_layer) break;
  }
  return r;
}

void adam_step(MasterWeights& master, const std::vector<LayerGrads>& grads, double lr) {
  if (grads.size() != master.layers.size()) throw DomainError("adam_step: gradient list does not match the layers");
  ++master.steps;
  const double t = static_cast<double>(master.steps);
  const double c1 = 1.0 - std::pow(kAdamBeta1, t);
  const double c2 = 1.0 - std::pow(kAdamBeta2, t);
  auto update = [&](Param& p, const std::vector<double>& g) {
    if (g.empty()) return;
    if (g.size() != p.value.size()) throw DomainError("adam_step: gradient length mismatch");
    for (std::size_t k = 0; k < g.size(); ++k) {
      p.m[k] = kAdamBeta1 * p.m[k] + (1.0 - kAdamBeta1) * g[k];
      p.v[k] = kAdamBeta2 * p.v[k] + (1.0 - kAdamBeta2) * g[k] * g[k];
      p.value[k] -= lr * (p.m[k] / c1) / (std::sqrt(p.v[k] / c2) + kAdamEpsilon);
    }
  };
  for (std::size_t i = 0; i < grads.size(); ++i) {
    LayerState& s = master.layers[i];
    update(s.weight, grads[i].weight);
    update(s.bias, grads[i].bias);
    update(s.gain, grads[i].gain);
    update(s.shift, grads[i].shift);
  }
}

double learning_rate_at(const TrainConfig& config, int epoch) {
  if (epoch < 0 || epoch >= config.epochs) throw DomainError("epoch out of range");
  if (config.lr_schedule == LrSchedule::Constant) return config.learning_rate;
  return config.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * epoch / config.epochs));
}

double train_step(MasterWeights& master, const Batch& batch, const TrainConfig& config, int epoch) {
  ContinuationSchedule schedule = config.schedule;
  schedule.total_epochs = config.epochs;
  const double beta = beta_at(schedule, epoch);
  StepResult r = compute_gradients(master, batch, config, beta);
  if (!std::isfinite(r.loss)) {
    throw TrainingError("non-finite loss " + std::to_string(r.loss) + " at epoch " + std::to_string(epoch) +
                        ", step " + std::to_string(master.steps) + " (beta " + std::to_string(beta) + ")");
  }
  for (std::size_t i = 0; i < master.layers.size(); ++i) {
    LayerState& s = master.layers[i];
    if (master.spec.layers[i].kind != LayerKind::BatchNorm) continue;
    for (std::size_t c = 0; c < s.running_mean.size(); ++c) {
      s.running_mean[c] += config.bn_momentum * (r.batch_mean[i][c] - s.running_mean[c]);
      s.running_var[c] += config.bn_momentum * (r.batch_var[i][c] - s.running_var[c]);
    }
  }
  adam_step(master, r.grads, learning_rate_at(config, epoch));
  return r.loss;
}

Model export_model(const MasterWeights& master, const TrainConfig& config, double eval_beta) {
  Model m;
  m.spec = master.spec;
  m.spec.mode = config.mode;
  m.eval_beta = static_cast<float>(eval_beta);
  m.params.resize(master.layers.size());
  for (std::size_t i = 0; i < master.layers.size(); ++i) {
    const LayerSpec& l = m.spec.layers[i];
    const LayerState& s = master.layers[i];
    if (l.has_weights()) {
      ConvParams p;
      const bool quantise = l.kind == LayerKind::Conv && config.mode != Mode::Float;
      if (!quantise) {
        p.weights.assign(s.weight.value.begin(), s.weight.value.end());
      } else if (config.mode == Mode::BinaryFull) {
        p.precision = Precision::Binary1Bit;
        p.packed = pack_filters(binarize_weights(filter_bank(l, s.weight.value)));
      } else {
        p.precision = Precision::Ternary2Bit;
        p.packed = pack_filters(ternarize_for(filter_bank(l, s.weight.value), config));
      }
      p.bias.assign(s.bias.value.begin(), s.bias.value.end());
      m.params[i] = std::move(p);
    } else if (l.kind == LayerKind::BatchNorm) {
      BNParams bn;
      bn.mean.assign(s.running_mean.begin(), s.running_mean.end());
      bn.variance.assign(s.running_var.begin(), s.running_var.end());
      bn.gain.assign(s.gain.value.begin(), s.gain.value.end());
      bn.shift.assign(s.shift.value.begin(), s.shift.value.end());
      bn.epsilon = static_cast<float>(kBnEpsilon);
      m.params[i] = std::move(bn);
    }
  }
  return m;
}

std::vector<double> weight_sparsity(const MasterWeights& master, const TrainConfig& config) {
  std::vector<double> out;
  for (std::size_t i = 0; i < master.layers.size(); ++i) {
    const LayerSpec& l = master.spec.layers[i];
    if (l.kind != LayerKind::Conv) continue;
    if (config.mode == Mode::BinaryFull) {
      out.push_back(0.0);
      continue;
    }
    out.push_back(ternarize_for(filter_bank(l, master.layers[i].weight.value), config).zero_fraction());
  }
  return out;
}

LossResult weighted_cross_entropy_grad(const DenseTensor& scores, const MaskTensor& target, double w_bg, double w_fg) {
  if (scores.rank() != 4 || scores.dim(1) != 2) {
    throw DomainError("cross entropy expects (N,2,H,W) scores, got " + shape_string(scores.shape()));
  }
  if (target.shape() != Shape{scores.dim(0), scores.dim(2), scores.dim(3)}) {
    throw DomainError("cross entropy target shape " + shape_string(target.shape()) + " does not match scores " +
                      shape_string(scores.shape()));
  }
  const std::size_t n = scores.dim(0), hw = scores.dim(2) * scores.dim(3);
  const double count = static_cast<double>(n * hw);
  LossResult r{0.0, DenseTensor(scores.shape())};
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t q = 0; q < hw; ++q) {
      const std::uint8_t t = target[b * hw + q];
      if (t > 1) throw DomainError("cross entropy target must be binary");
      const std::size_t i0 = b * 2 * hw + q, i1 = i0 + hw;
      const double s0 = scores[i0], s1 = scores[i1];
      const double mx = std::max(s0, s1);
      const double lse = mx + std::log(std::exp(s0 - mx) + std::exp(s1 - mx));
      const double w = t ? w_fg : w_bg;
      r.loss += w * (lse - (t ? s1 : s0));
      const double p0 = std::exp(s0 - lse), p1 = std::exp(s1 - lse);
      r.grad[i0] = w * (p0 - (t ? 0.0 : 1.0)) / count;
      r.grad[i1] = w * (p1 - (t ? 1.0 : 0.0)) / count;
    }
  r.loss /= count;
  return r;
}

double weighted_cross_entropy(const DenseTensor& scores, const MaskTensor& target, double w_bg, double w_fg) {
  return weighted_cross_entropy_grad(scores, target, w_bg, w_fg).loss;
}

double dice(const MaskTensor& pred, const MaskTensor& target) {
  if (pred.shape() != target.shape()) throw DomainError("dice: mask shapes differ");
  std::size_t a = 0, b = 0, both = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0, t = target[i] != 0;
    a += p;
    b += t;
    both += p && t;
  }
  if (a + b == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
}

double mean_dice(const MaskTensor& pred, const MaskTensor& target) {
  if (pred.shape() != target.shape() || pred.rank() != 3) throw DomainError("mean_dice: expected equal (N,H,W) masks");
  const std::size_t n = pred.dim(0), hw = pred.dim(1) * pred.dim(2);
  double s = 0.0;
  for (std::size_t b = 0; b < n; ++b) {
    MaskTensor p({hw}, std::vector<std::uint8_t>(pred.raw() + b * hw, pred.raw() + (b + 1) * hw));
    MaskTensor t({hw}, std::vector<std::uint8_t>(target.raw() + b * hw, target.raw() + (b + 1) * hw));
    s += dice(p, t);
  }
  return s / static_cast<double>(n);
}

TrainResult train(const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  NetworkSpec spec = build_toy(config.width, config.slices, config.levels, config.image_size, config.image_size);
  spec.mode = config.mode;
  ContinuationSchedule schedule = config.schedule;
  schedule.total_epochs = config.epochs;

  std::mt19937_64 rng(config.seed);
  TrainResult result;
  result.master = init_master(spec, rng());
  const Dataset val = synth_dataset(rng(), config.val_samples, config.image_size, config.slices);
  const auto labels = spec.labels();
  for (std::size_t i = 0; i < spec.layers.size(); ++i)
    if (spec.layers[i].kind == LayerKind::Conv) result.sparsity_labels.push_back(labels[i]);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double beta = beta_at(schedule, epoch);
    double loss_sum = 0.0;
    for (std::size_t it = 0; it < config.iterations; ++it) {
      Dataset d = synth_dataset(rng(), config.batch_size, config.image_size, config.slices);
      loss_sum += train_step(result.master, Batch{std::move(d.images), std::move(d.masks)}, config, epoch);
    }
    const Model model = export_model(result.master, config, beta);
    ForwardOptions opt;
    opt.hard = !config.soft_eval;
    opt.threads = config.threads;
    const auto scores = forward(model, val.images, opt);

    EpochMetrics m;
    m.epoch = epoch + 1;
    m.beta = beta;
    m.train_loss = loss_sum / static_cast<double>(config.iterations);
    m.val_dice = mean_dice(predict_mask(scores), val.masks);
    const auto sp = weight_sparsity(result.master, config);
    double mean_sp = 0.0;
    for (double v : sp) mean_sp += v;
    m.mean_weight_sparsity = sp.empty() ? 0.0 : mean_sp / static_cast<double>(sp.size());
    result.sparsity.push_back(sp);
    result.metrics.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  result.model = export_model(result.master, config, beta_at(schedule, config.epochs - 1));
  return result;
}

namespace {

std::string fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw LoadError(LoadErrorKind::Io, "cannot write " + path.string());
  return out;
}

}  // namespace

void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& metrics) {
  auto out = open_csv(path);
  out << "epoch,beta,train_loss,val_dice,mean_weight_sparsity\n";
  for (const auto& m : metrics) {
    out << m.epoch << ',' << fixed(m.beta) << ',' << fixed(m.train_loss) << ',' << fixed(m.val_dice) << ','
        << fixed(m.mean_weight_sparsity) << '\n';
  }
}

void write_sparsity_csv(const std::filesystem::path& path, const TrainResult& result) {
  auto out = open_csv(path);
  out << "epoch";
  for (const auto& l : result.sparsity_labels) out << ',' << l;
  out << '\n';
  for (std::size_t e = 0; e < result.sparsity.size(); ++e) {
    out << e + 1;
    for (double v : result.sparsity[e]) out << ',' << fixed(v);
    out << '\n';
  }
}

}  // namespace ternkit
