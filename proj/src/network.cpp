#include "ternkit/network.hpp"

#include <cmath>
#include <map>
#include <random>
#include <set>
#include <string>

#include "ternkit/activations.hpp"
#include "ternkit/layers.hpp"
#include "ternkit/quantize.hpp"

namespace ternkit {

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv: return "conv";
    case LayerKind::AvgPool: return "avgpool";
    case LayerKind::Upsample: return "upsample";
    case LayerKind::ConcatSkip: return "concat-skip";
    case LayerKind::BatchNorm: return "batchnorm";
    case LayerKind::Activation: return "activation";
    case LayerKind::Prediction: return "prediction";
  }
  return "unknown";
}

std::string_view to_string(Mode mode) {
  switch (mode) {
    case Mode::Float: return "float";
    case Mode::TernaryWeightsOnly: return "ternary-weights-only";
    case Mode::TernaryFull: return "ternary-full";
    case Mode::BinaryFull: return "binary-full";
  }
  return "unknown";
}

std::string_view to_string(Precision precision) {
  switch (precision) {
    case Precision::Float32: return "float32";
    case Precision::Ternary2Bit: return "ternary2bit";
    case Precision::Binary1Bit: return "binary1bit";
  }
  return "unknown";
}

Mode parse_mode(std::string_view name) {
  if (name == "float") return Mode::Float;
  if (name == "ternary-weights-only" || name == "ternary-weights") return Mode::TernaryWeightsOnly;
  if (name == "ternary-full" || name == "ternary") return Mode::TernaryFull;
  if (name == "binary-full" || name == "binary") return Mode::BinaryFull;
  throw DomainError("unknown mode '" + std::string(name) + "'");
}

ConvGeometry LayerSpec::geometry(Size2 in) const {
  return ConvGeometry{in_channels, in.h, in.w, kernel_h, kernel_w, stride, dilation, padding};
}

void NetworkSpec::validate() const {
  if (layers.empty()) throw DomainError("network has no layers");
  if (input_h == 0 || input_w == 0 || input_slices == 0) throw DomainError("network input geometry must be positive");
  std::set<int> tags;
  std::size_t predictions = 0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    const std::string where = "layer " + std::to_string(i) + " (" + std::string(to_string(l.kind)) + ")";
    if (l.declared_out.empty()) throw DomainError(where + ": declared output size must be positive");
    if (l.in_channels == 0 || l.out_channels == 0) throw DomainError(where + ": channel counts must be positive");
    if (l.kernel_h == 0 || l.kernel_w == 0 || l.stride == 0 || l.dilation == 0) {
      throw DomainError(where + ": kernel, stride and dilation must be positive");
    }
    if (predictions > 0 && l.has_weights()) throw DomainError(where + ": weight layer after the prediction layer");
    if (l.kind == LayerKind::Prediction) ++predictions;
    if (l.kind == LayerKind::ConcatSkip) {
      if (!tags.contains(l.skip_from)) {
        throw DomainError(where + ": skip source " + std::to_string(l.skip_from) + " is not defined earlier");
      }
      if (l.out_channels != 2 * l.in_channels) throw DomainError(where + ": concat must double the channel count");
    }
    if (l.save_as >= 0) tags.insert(l.save_as);
  }
  if (predictions != 1) throw DomainError("network needs exactly one prediction layer");
}

std::vector<std::string> NetworkSpec::labels() const {
  std::vector<std::string> out(layers.size());
  std::size_t n = 0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].kind == LayerKind::Conv) out[i] = "#" + std::to_string(++n);
    if (layers[i].kind == LayerKind::Prediction) out[i] = "Prediction";
  }
  return out;
}

namespace {

// Appends layers while tracking the stream's channel count.
struct Builder {
  NetworkSpec net;
  std::size_t channels = 0;

  LayerSpec& conv(std::size_t k, std::size_t cout, Size2 out, std::size_t padding = 0,
                  LayerKind kind = LayerKind::Conv) {
    LayerSpec l;
    l.kind = kind;
    l.kernel_h = l.kernel_w = k;
    l.padding = padding;
    l.in_channels = channels;
    l.out_channels = cout;
    l.declared_out = out;
    channels = cout;
    net.layers.push_back(l);
    return net.layers.back();
  }
  LayerSpec& simple(LayerKind kind, Size2 out, std::size_t k = 1) {
    LayerSpec l;
    l.kind = kind;
    l.kernel_h = l.kernel_w = k;
    if (kind == LayerKind::AvgPool) l.stride = k;
    l.in_channels = l.out_channels = channels;
    l.declared_out = out;
    net.layers.push_back(l);
    return net.layers.back();
  }
  // Batch norm then activation; returns the activation.
  LayerSpec& bn_act(Size2 out) {
    simple(LayerKind::BatchNorm, out);
    return simple(LayerKind::Activation, out);
  }
  void concat(int tag, Size2 out) {
    LayerSpec& l = simple(LayerKind::ConcatSkip, out);
    l.skip_from = tag;
    l.out_channels = 2 * channels;
    channels *= 2;
  }
};

}  // namespace

NetworkSpec build_table1() {
  Builder b;
  b.net.input_h = 236;
  b.net.input_w = 172;
  b.net.input_slices = 15;
  b.net.width = 32;
  b.channels = 15;

  b.conv(3, 32, {234, 170});
  b.bn_act({234, 170});
  b.conv(3, 64, {232, 168});
  b.bn_act({232, 168}).save_as = 2;
  // The MFlops column of this row and of #5, #7, #13 and #14 corresponds to a
  // different output extent than the printed one; the prediction row to a 1x1 kernel.
  b.conv(3, 64, {228, 164}).flop_out = {114, 82};
  b.simple(LayerKind::AvgPool, {114, 82}, 2);
  b.bn_act({114, 82});
  b.conv(3, 128, {112, 80});
  b.bn_act({112, 80}).save_as = 4;
  b.conv(3, 128, {108, 76}).flop_out = {54, 38};
  b.simple(LayerKind::AvgPool, {54, 38}, 2);
  b.bn_act({54, 38});
  b.conv(3, 256, {52, 36});
  b.bn_act({52, 36}).save_as = 6;
  b.conv(1, 256, {52, 36}).flop_out = {26, 18};
  b.simple(LayerKind::AvgPool, {26, 18}, 2);
  b.bn_act({26, 18});
  b.conv(1, 256, {26, 18});
  b.bn_act({26, 18});

  b.simple(LayerKind::Upsample, {52, 36}, 2);
  b.concat(6, {52, 36});
  b.conv(3, 256, {50, 34});
  b.bn_act({50, 34});
  b.conv(3, 128, {48, 32});
  b.bn_act({48, 32});
  b.simple(LayerKind::Upsample, {96, 64}, 2);
  b.concat(4, {96, 64});
  b.conv(3, 128, {94, 62});
  b.bn_act({94, 62});
  b.conv(3, 64, {92, 60});
  b.bn_act({92, 60});
  b.simple(LayerKind::Upsample, {184, 118}, 2);
  b.concat(2, {184, 118});
  b.conv(3, 64, {180, 116}).flop_out = {182, 118};
  b.bn_act({180, 116});
  b.conv(3, 64, {176, 110}).flop_out = {180, 116};
  b.bn_act({176, 110});
  b.conv(3, 2, {176, 110}, 0, LayerKind::Prediction).flop_kernel = {1, 1};
  return std::move(b.net);
}

NetworkSpec build_toy(std::size_t width, std::size_t in_slices, std::size_t levels, std::size_t input_h,
                      std::size_t input_w) {
  if (width < 1) throw DomainError("build_toy: width must be >= 1");
  if (in_slices < 1) throw DomainError("build_toy: in_slices must be >= 1");
  if (levels < 2) throw DomainError("build_toy: at least 2 levels are needed");
  if (levels > 16) throw DomainError("build_toy: too many levels");
  const std::size_t reduction = std::size_t{1} << (levels - 1);
  if (input_h == 0 || input_w == 0 || input_h % reduction || input_w % reduction) {
    throw DomainError("build_toy: input " + std::to_string(input_h) + "x" + std::to_string(input_w) +
                      " is not divisible by " + std::to_string(reduction));
  }

  Builder b;
  b.net.input_h = input_h;
  b.net.input_w = input_w;
  b.net.input_slices = in_slices;
  b.net.width = width;
  b.channels = in_slices;

  Size2 size{input_h, input_w};
  std::vector<std::size_t> ch(levels);
  for (std::size_t l = 0; l < levels; ++l) ch[l] = width << l;

  for (std::size_t l = 0; l + 1 < levels; ++l) {
    b.conv(3, ch[l], size, 1);
    b.bn_act(size).save_as = static_cast<int>(l);
    b.conv(3, ch[l], size, 1);
    size = {size.h / 2, size.w / 2};
    b.simple(LayerKind::AvgPool, size, 2);
    b.bn_act(size);
  }
  b.conv(1, ch[levels - 2], size);
  b.bn_act(size);
  for (std::size_t l = levels - 1; l-- > 0;) {
    size = {size.h * 2, size.w * 2};
    b.simple(LayerKind::Upsample, size, 2);
    b.concat(static_cast<int>(l), size);
    b.conv(3, ch[l], size, 1);
    b.bn_act(size);
    b.conv(3, l > 0 ? ch[l - 1] : ch[0], size, 1);
    b.bn_act(size);
  }
  b.conv(3, 2, size, 1, LayerKind::Prediction);
  b.net.validate();
  return std::move(b.net);
}

std::vector<LayerFlops> count_flops(const NetworkSpec& net) {
  const auto labels = net.labels();
  std::vector<LayerFlops> rows;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const LayerSpec& l = net.layers[i];
    if (!l.has_weights()) continue;
    if (l.declared_out.empty()) {
      throw DomainError("count_flops: layer " + std::to_string(i) + " has no declared output size");
    }
    const Size2 out = l.flop_out.empty() ? l.declared_out : l.flop_out;
    const Size2 k = l.flop_kernel.empty() ? Size2{l.kernel_h, l.kernel_w} : l.flop_kernel;
    const double macs = static_cast<double>(out.h) * out.w * k.h * k.w * l.in_channels * l.out_channels;
    rows.push_back({i, labels[i], macs / 1e6});
  }
  return rows;
}

double total_mflops(const std::vector<LayerFlops>& rows) {
  double s = 0.0;
  for (const auto& r : rows) s += r.mflops;
  return s;
}

MemoryReport count_params_memory(const NetworkSpec& net, Precision precision) {
  MemoryReport r;
  for (const LayerSpec& l : net.layers) {
    if (!l.has_weights()) continue;
    r.parameters += l.weight_count();
    if (precision != Precision::Float32 && l.kind == LayerKind::Conv) r.scale_count += l.out_channels;
  }
  const double bits = precision == Precision::Float32 ? 32.0 : (precision == Precision::Ternary2Bit ? 2.0 : 1.0);
  r.payload_bytes = static_cast<double>(r.parameters) * bits / 8.0;
  r.scale_bytes = r.scale_count * sizeof(float);
  return r;
}

BNParams BNParams::identity(std::size_t channels) {
  return BNParams{std::vector<float>(channels, 0.0f), std::vector<float>(channels, 1.0f),
                  std::vector<float>(channels, 1.0f), std::vector<float>(channels, 0.0f), 1e-5f};
}

void BNParams::validate() const {
  const std::size_t c = mean.size();
  if (variance.size() != c || gain.size() != c || shift.size() != c) {
    throw DomainError("batch norm parameter arrays differ in length");
  }
  if (!(epsilon > 0.0f) || !std::isfinite(epsilon)) throw DomainError("batch norm epsilon must be positive");
  for (std::size_t i = 0; i < c; ++i) {
    if (!std::isfinite(mean[i]) || !std::isfinite(variance[i]) || !std::isfinite(gain[i]) ||
        !std::isfinite(shift[i])) {
      throw DomainError("batch norm channel " + std::to_string(i) + " holds a non-finite value");
    }
    if (variance[i] < 0.0f) throw DomainError("batch norm variance of channel " + std::to_string(i) + " is negative");
  }
}

BNParams::Affine BNParams::fold() const {
  Affine a;
  a.scale.resize(channels());
  a.offset.resize(channels());
  for (std::size_t i = 0; i < channels(); ++i) {
    a.scale[i] = static_cast<double>(gain[i]) / std::sqrt(static_cast<double>(variance[i]) + epsilon);
    a.offset[i] = static_cast<double>(shift[i]) - static_cast<double>(mean[i]) * a.scale[i];
  }
  return a;
}

namespace {

Precision precision_for(Mode mode) {
  switch (mode) {
    case Mode::Float: return Precision::Float32;
    case Mode::TernaryWeightsOnly:
    case Mode::TernaryFull: return Precision::Ternary2Bit;
    case Mode::BinaryFull: return Precision::Binary1Bit;
  }
  return Precision::Float32;
}

}  // namespace

void Model::validate() const {
  spec.validate();
  if (params.size() != spec.layers.size()) throw DomainError("model has a parameter slot count unlike its layer count");
  if (!(eval_beta > 0.0f)) throw DomainError("model eval beta must be positive");
  const Precision expected = precision_for(spec.mode);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const std::string where = "layer " + std::to_string(i) + " (" + std::string(to_string(l.kind)) + ")";
    if (l.has_weights()) {
      const auto* p = std::get_if<ConvParams>(&params[i]);
      if (!p) throw DomainError(where + ": missing conv parameters");
      const Precision want = l.kind == LayerKind::Prediction ? Precision::Float32 : expected;
      if (p->precision != want) {
        throw DomainError(where + ": " + std::string(to_string(p->precision)) + " weights in a " +
                          std::string(to_string(spec.mode)) + " model");
      }
      if (!p->bias.empty() && p->bias.size() != l.out_channels) throw DomainError(where + ": bias length mismatch");
      if (p->precision == Precision::Float32) {
        if (p->weights.size() != l.weight_count()) throw DomainError(where + ": weight count mismatch");
      } else {
        if (p->packed.shape() != Shape{l.out_channels, l.patch_size()}) {
          throw DomainError(where + ": packed weights have shape " + shape_string(p->packed.shape()));
        }
        if (p->packed.scales().size() != l.out_channels) throw DomainError(where + ": missing alpha scales");
        const auto report = ternkit::validate(p->packed);
        if (!report.ok()) throw DomainError(where + ": " + report.message);
        if (p->precision == Precision::Binary1Bit && p->packed.nonzero_count() != p->packed.element_count()) {
          throw DomainError(where + ": binary weights contain zero codes");
        }
      }
    } else if (l.kind == LayerKind::BatchNorm) {
      const auto* p = std::get_if<BNParams>(&params[i]);
      if (!p) throw DomainError(where + ": missing batch norm parameters");
      p->validate();
      if (p->channels() != l.in_channels) throw DomainError(where + ": channel count mismatch");
    } else if (!std::holds_alternative<std::monostate>(params[i])) {
      throw DomainError(where + ": layer takes no parameters");
    }
  }
}

Model init_model(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  Model m;
  m.spec = spec;
  m.spec.mode = Mode::Float;
  m.params.resize(spec.layers.size());
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    if (l.has_weights()) {
      ConvParams p;
      const double bound = 1.0 / std::sqrt(static_cast<double>(l.patch_size()));
      std::uniform_real_distribution<double> ud(-bound, bound);
      p.weights.resize(l.weight_count());
      for (auto& w : p.weights) w = static_cast<float>(ud(rng));
      if (l.kind == LayerKind::Prediction) p.bias.assign(l.out_channels, 0.0f);
      m.params[i] = std::move(p);
    } else if (l.kind == LayerKind::BatchNorm) {
      m.params[i] = BNParams::identity(l.in_channels);
    }
  }
  return m;
}

Model quantize_model(const Model& float_model, Mode mode, double sparsity) {
  float_model.validate();
  if (float_model.spec.mode != Mode::Float) throw DomainError("quantize_model: source model is not a float model");
  if (sparsity >= 0.0 && mode != Mode::TernaryWeightsOnly && mode != Mode::TernaryFull) {
    throw DomainError("quantize_model: sparsity applies to ternary modes only");
  }
  Model m = float_model;
  m.spec.mode = mode;
  if (mode == Mode::Float) return m;
  for (std::size_t i = 0; i < m.spec.layers.size(); ++i) {
    const LayerSpec& l = m.spec.layers[i];
    if (l.kind != LayerKind::Conv) continue;
    auto& p = std::get<ConvParams>(m.params[i]);
    DenseTensor w({l.out_channels, l.patch_size()}, std::vector<double>(p.weights.begin(), p.weights.end()));
    if (mode == Mode::BinaryFull) {
      p.packed = pack_filters(binarize_weights(w));
      p.precision = Precision::Binary1Bit;
    } else {
      p.packed = pack_filters(sparsity < 0.0 ? ternarize_weights(w) : ternarize_sparse(w, sparsity));
      p.precision = Precision::Ternary2Bit;
    }
    p.weights.clear();
  }
  return m;
}

DenseTensor effective_weights(const LayerSpec& spec, const ConvParams& p) {
  const Shape shape{spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w};
  if (p.precision == Precision::Float32) return DenseTensor(shape, std::vector<double>(p.weights.begin(), p.weights.end()));
  const CodeTensor codes = unpack(p.packed);
  DenseTensor w(shape);
  const std::size_t n = spec.patch_size();
  for (std::size_t j = 0; j < spec.out_channels; ++j) {
    const double a = p.packed.scales()[j];
    for (std::size_t k = 0; k < n; ++k) w[j * n + k] = a * codes[j * n + k];
  }
  return w;
}

namespace {

CodeTensor to_codes(const double* x, Shape shape) {
  CodeTensor c(std::move(shape));
  for (std::size_t i = 0; i < c.size(); ++i) {
    const double v = x[i];
    if (v != 0.0 && v != 1.0 && v != -1.0) {
      throw DomainError("packed conv input value " + std::to_string(v) + " at " + std::to_string(i) +
                        " is not a ternary code");
    }
    c[i] = static_cast<std::int8_t>(v);
  }
  return c;
}

DenseTensor run_conv(const Model& model, const LayerSpec& l, const ConvParams& p, const DenseTensor& x,
                     bool input_is_codes, const ForwardOptions& opt) {
  if (x.dim(1) != l.in_channels) {
    throw DomainError("conv expects " + std::to_string(l.in_channels) + " input channels, got " +
                      std::to_string(x.dim(1)));
  }
  const ConvGeometry g = l.geometry({x.dim(2), x.dim(3)});
  g.validate();
  if (p.precision == Precision::Float32) {
    const DenseTensor w = effective_weights(l, p);
    const std::vector<double> bias(p.bias.begin(), p.bias.end());
    return conv2d_float(x, w, g, bias);
  }

  const Mode mode = model.spec.mode;
  const bool full = mode == Mode::TernaryFull || mode == Mode::BinaryFull;
  const std::size_t n = x.dim(0), cout = l.out_channels, P = g.positions();
  if (full && opt.hard && input_is_codes && !opt.dense_simulation) {
    DenseTensor out({n, cout, g.out_h(), g.out_w()});
    const std::size_t in_stride = x.size() / n;
    for (std::size_t b = 0; b < n; ++b) {
      const auto fmap = pack(to_codes(x.raw() + b * in_stride, {x.dim(1), x.dim(2), x.dim(3)}));
      const DenseTensor y = conv2d_ternary(fmap, p.packed, g, opt.threads);
      std::copy(y.storage().begin(), y.storage().end(), out.raw() + b * cout * P);
    }
    return out;
  }

  // Dense path: integer-valued codes as weights, alpha applied after accumulation.
  const CodeTensor codes = unpack(p.packed);
  DenseTensor w({cout, l.in_channels, l.kernel_h, l.kernel_w});
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = codes[i];
  DenseTensor out = conv2d_float(x, w, g);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t j = 0; j < cout; ++j) {
      const double a = p.packed.scales()[j];
      double* o = out.raw() + (b * cout + j) * P;
      for (std::size_t r = 0; r < P; ++r) o[r] = a * o[r];
    }
  return out;
}

void apply_bn(const BNParams& bn, DenseTensor& x, bool unfolded) {
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  const auto affine = bn.fold();
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t j = 0; j < c; ++j) {
      double* p = x.raw() + (b * c + j) * hw;
      if (unfolded) {
        const double sd = std::sqrt(static_cast<double>(bn.variance[j]) + bn.epsilon);
        for (std::size_t r = 0; r < hw; ++r) p[r] = (p[r] - bn.mean[j]) / sd * bn.gain[j] + bn.shift[j];
      } else {
        for (std::size_t r = 0; r < hw; ++r) p[r] = affine.scale[j] * p[r] + affine.offset[j];
      }
    }
}

void apply_activation(Mode mode, bool hard, double beta, DenseTensor& x) {
  auto& v = x.storage();
  switch (mode) {
    case Mode::Float:
      for (auto& e : v) e = std::tanh(e);
      break;
    case Mode::TernaryWeightsOnly:
      for (auto& e : v) e = tern_tanh(e, beta);
      break;
    case Mode::TernaryFull:
      for (auto& e : v) e = hard ? tern_hard(e) : tern_tanh(e, beta);
      break;
    case Mode::BinaryFull:
      for (auto& e : v) e = hard ? sign_hard(e) : tanh_beta(e, beta);
      break;
  }
}

}  // namespace

DenseTensor forward(const Model& model, const DenseTensor& input, const ForwardOptions& opt) {
  model.validate();
  const NetworkSpec& spec = model.spec;
  if (input.rank() != 4 || input.dim(1) != spec.input_slices) {
    throw DomainError("forward: expected input (N," + std::to_string(spec.input_slices) + ",H,W), got " +
                      shape_string(input.shape()));
  }
  require_finite(input, "forward input");
  const double beta = opt.beta.value_or(model.eval_beta);
  if (!(beta > 0.0)) throw DomainError("forward: beta must be positive");

  std::map<int, DenseTensor> saved;
  DenseTensor x = input;
  bool first_conv = true;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    switch (l.kind) {
      case LayerKind::Conv:
      case LayerKind::Prediction: {
        const auto& p = std::get<ConvParams>(model.params[i]);
        bool codes = !first_conv;
        if (first_conv && model.ternarize_input && p.precision != Precision::Float32) {
          const bool binary = spec.mode == Mode::BinaryFull;
          for (auto& e : x.storage()) e = binary ? sign_hard(e) : tern_hard(e);
          codes = true;
        }
        x = run_conv(model, l, p, x, codes, opt);
        first_conv = false;
        break;
      }
      case LayerKind::AvgPool: x = avgpool2d(x, l.kernel_h); break;
      case LayerKind::Upsample: x = upsample_nearest(x, l.kernel_h); break;
      case LayerKind::ConcatSkip: x = concat_channels(x, saved.at(l.skip_from)); break;
      case LayerKind::BatchNorm: apply_bn(std::get<BNParams>(model.params[i]), x, opt.unfolded_bn); break;
      case LayerKind::Activation: apply_activation(spec.mode, opt.hard, beta, x); break;
    }
    if (l.save_as >= 0) saved[l.save_as] = x;
  }
  return x;
}

MaskTensor predict_mask(const DenseTensor& scores) {
  if (scores.rank() != 4 || scores.dim(1) != 2) {
    throw DomainError("predict_mask: expected (N,2,H,W) scores, got " + shape_string(scores.shape()));
  }
  const std::size_t n = scores.dim(0), hw = scores.dim(2) * scores.dim(3);
  MaskTensor m({n, scores.dim(2), scores.dim(3)});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t r = 0; r < hw; ++r) m[b * hw + r] = scores[(b * 2 + 1) * hw + r] > scores[b * 2 * hw + r] ? 1 : 0;
  return m;
}

}  // namespace ternkit
