#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "doctest.h"
#include "ternkit/config.hpp"
#include "ternkit/quantize.hpp"
#include "ternkit/training.hpp"

using namespace ternkit;
using doctest::Approx;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "ternkit_test_training" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Batch make_batch(std::uint64_t seed, std::size_t n, std::size_t size, std::size_t slices) {
  Dataset d = synth_dataset(seed, n, size, slices);
  return {std::move(d.images), std::move(d.masks)};
}

double loss_of(const MasterWeights& m, const Batch& b, const TrainConfig& c, double beta) {
  return weighted_cross_entropy(train_forward(m, b.images, c, beta), b.masks, c.weight_background,
                                c.weight_foreground);
}

// Perturbs every trainable value by +-h and compares the centred difference of
// the loss with the analytic gradient.
void check_gradients(const TrainConfig& c, std::uint64_t seed) {
  const auto spec = build_toy(2, 2, 2, 8, 8);
  MasterWeights m = init_master(spec, seed);
  // Non-trivial batch norm affine so gain and shift gradients are exercised.
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.5, 1.5), v(-0.3, 0.3);
  for (auto& l : m.layers) {
    for (auto& g : l.gain.value) g = u(rng);
    for (auto& s : l.shift.value) s = v(rng);
  }
  const Batch b = make_batch(seed + 1, 2, 8, 2);
  const double beta = 3.0;
  const StepResult r = compute_gradients(m, b, c, beta);
  CHECK(r.loss == Approx(loss_of(m, b, c, beta)).epsilon(1e-12));

  const double h = 1e-5;
  double worst = 0.0;
  std::size_t checked = 0;
  auto probe = [&](std::vector<double>& values, const std::vector<double>& grad) {
    REQUIRE(grad.size() == values.size());
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double keep = values[k];
      values[k] = keep + h;
      const double up = loss_of(m, b, c, beta);
      values[k] = keep - h;
      const double down = loss_of(m, b, c, beta);
      values[k] = keep;
      const double numeric = (up - down) / (2.0 * h);
      const double scale = std::max({std::abs(numeric), std::abs(grad[k]), 1e-4});
      worst = std::max(worst, std::abs(numeric - grad[k]) / scale);
      ++checked;
    }
  };
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    auto& s = m.layers[i];
    if (!s.weight.value.empty()) probe(s.weight.value, r.grads[i].weight);
    if (!s.bias.value.empty()) probe(s.bias.value, r.grads[i].bias);
    if (!s.gain.value.empty()) probe(s.gain.value, r.grads[i].gain);
    if (!s.shift.value.empty()) probe(s.shift.value, r.grads[i].shift);
  }
  CHECK(checked > 100);
  CHECK(worst < 1e-3);
}

}  // namespace

TEST_CASE("weighted cross entropy closed forms") {
  const DenseTensor even({1, 2, 1, 1}, {0.0, 0.0});
  CHECK(weighted_cross_entropy(even, MaskTensor({1, 1, 1}, {1})) == Approx(2.5 * std::log(2.0)));
  CHECK(weighted_cross_entropy(even, MaskTensor({1, 1, 1}, {0})) == Approx(0.5 * std::log(2.0)));
  CHECK(weighted_cross_entropy(even, MaskTensor({1, 1, 1}, {1})) == Approx(1.7329).epsilon(1e-4));
  CHECK(weighted_cross_entropy(even, MaskTensor({1, 1, 1}, {0})) == Approx(0.3466).epsilon(1e-4));

  // Mean over pixels, softmax gradient p - onehot scaled by the class weight.
  const DenseTensor s({1, 2, 1, 2}, {1.0, -2.0, 0.5, 3.0});
  const MaskTensor t({1, 1, 2}, {0, 1});
  const auto r = weighted_cross_entropy_grad(s, t);
  const double l0 = 0.5 * std::log1p(std::exp(0.5 - 1.0));
  const double l1 = 2.5 * std::log1p(std::exp(-2.0 - 3.0));
  CHECK(r.loss == Approx((l0 + l1) / 2.0));
  const double p1 = 1.0 / (1.0 + std::exp(1.0 - 0.5));
  CHECK(r.grad[0] == Approx(0.5 * ((1.0 - p1) - 1.0) / 2.0));
  CHECK(r.grad[2] == Approx(0.5 * p1 / 2.0));
  CHECK_THROWS_AS(weighted_cross_entropy(s, MaskTensor({1, 2, 1}, {0, 1})), DomainError);
  CHECK_THROWS_AS(weighted_cross_entropy(s, MaskTensor({1, 1, 2}, {0, 2})), DomainError);
}

TEST_CASE("dice") {
  CHECK(dice(MaskTensor({4}, {1, 1, 0, 0}), MaskTensor({4}, {1, 0, 1, 0})) == Approx(0.5));
  CHECK(dice(MaskTensor({3}, {0, 0, 0}), MaskTensor({3}, {0, 0, 0})) == 1.0);
  CHECK(dice(MaskTensor({2}, {1, 0}), MaskTensor({2}, {0, 1})) == 0.0);
  CHECK(dice(MaskTensor({3}, {1, 1, 1}), MaskTensor({3}, {1, 1, 1})) == 1.0);
  // Per-image mean, not the pooled ratio.
  const MaskTensor pred({2, 1, 2}, {1, 1, 0, 0});
  const MaskTensor target({2, 1, 2}, {1, 0, 0, 1});
  CHECK(mean_dice(pred, target) == Approx((2.0 / 3.0 + 0.0) / 2.0));
  CHECK_THROWS_AS(dice(MaskTensor({2}), MaskTensor({3})), DomainError);
}

TEST_CASE("synthetic data is deterministic and sized as documented") {
  const Dataset a = synth_dataset(42, 5, 32, 3);
  const Dataset b = synth_dataset(42, 5, 32, 3);
  CHECK(a.images == b.images);
  CHECK(a.masks == b.masks);
  CHECK(a.images.shape() == Shape{5, 3, 32, 32});
  CHECK(a.masks.shape() == Shape{5, 32, 32});
  CHECK_FALSE(synth_dataset(43, 5, 32, 3).images == a.images);

  double lo = 1.0, hi = 0.0;
  for (std::uint64_t chunk = 0; chunk < 10; ++chunk) {
    const Dataset d = synth_dataset(1000 + chunk, 100);
    const std::size_t hw = 64 * 64, stack = 3 * hw;
    for (std::size_t i = 0; i < 100; ++i) {
      std::size_t fg = 0;
      for (std::size_t q = 0; q < hw; ++q) fg += d.masks[i * hw + q];
      const double f = static_cast<double>(fg) / static_cast<double>(hw);
      lo = std::min(lo, f);
      hi = std::max(hi, f);
      double mean = 0.0, sq = 0.0;
      for (std::size_t q = 0; q < stack; ++q) mean += d.images[i * stack + q];
      mean /= static_cast<double>(stack);
      for (std::size_t q = 0; q < stack; ++q) sq += (d.images[i * stack + q] - mean) * (d.images[i * stack + q] - mean);
      CHECK(std::abs(mean) < 1e-9);
      CHECK(sq / static_cast<double>(stack) == Approx(1.0).epsilon(1e-6));
    }
  }
  CHECK(lo >= 0.01);
  CHECK(hi <= 0.12);
}

TEST_CASE("micro-net gradients match finite differences (float mode)") {
  TrainConfig c = TrainConfig::toy();
  c.mode = Mode::Float;
  check_gradients(c, 3);
}

TEST_CASE("micro-net gradients match finite differences (soft ternary activations)") {
  TrainConfig c = TrainConfig::toy();
  c.mode = Mode::TernaryFull;
  c.quantize_weights = false;
  check_gradients(c, 4);
}

TEST_CASE("micro-net gradients match finite differences (binary continuation)") {
  TrainConfig c = TrainConfig::toy();
  c.mode = Mode::BinaryFull;
  c.quantize_weights = false;
  check_gradients(c, 5);
}

TEST_CASE("master weights stay full precision while the forward pass is ternary") {
  TrainConfig c = TrainConfig::toy();
  const auto spec = build_toy(4, 3, 3, 16, 16);
  MasterWeights m = init_master(spec, 7);
  const MasterWeights before = m;
  const Batch b = make_batch(8, 3, 16, 3);
  for (int s = 0; s < 3; ++s) train_step(m, b, c, 0);
  CHECK(m.steps == 3);

  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    if (!l.has_weights()) continue;
    const auto& w = m.layers[i].weight.value;
    // Adam moves each value by at most about lr per step.
    double moved = 0.0;
    for (std::size_t k = 0; k < w.size(); ++k) moved = std::max(moved, std::abs(w[k] - before.layers[i].weight.value[k]));
    CHECK(moved > 0.0);
    CHECK(moved <= 3 * c.learning_rate * 1.01);

    const auto fw = forward_weights(m, i, c);
    if (l.kind == LayerKind::Prediction) {
      CHECK(fw == w);
      continue;
    }
    const std::size_t n = l.patch_size();
    std::set<double> master_levels(w.begin(), w.end());
    CHECK(master_levels.size() > 3);
    for (std::size_t j = 0; j < l.out_channels; ++j) {
      std::set<double> levels;
      for (std::size_t k = 0; k < n; ++k) levels.insert(std::abs(fw[j * n + k]));
      CHECK(levels.size() <= 2);
      CHECK(levels.count(0.0) == 1);
    }
    // The quantised forward weights are a fixed point of the quantiser.
    const DenseTensor bank({l.out_channels, n}, fw);
    const auto again = ternarize_weights(bank).dequantize().storage();
    for (std::size_t k = 0; k < fw.size(); ++k) CHECK(again[k] == Approx(fw[k]).epsilon(1e-12));
  }
}

TEST_CASE("batch norm running statistics follow the momentum rule") {
  TrainConfig c = TrainConfig::toy();
  c.bn_momentum = 0.25;
  MasterWeights m = init_master(build_toy(2, 2, 2, 8, 8), 9);
  const Batch b = make_batch(10, 2, 8, 2);
  const StepResult r = compute_gradients(m, b, c, 3.0);
  const MasterWeights before = m;
  train_step(m, b, c, 0);
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    if (m.spec.layers[i].kind != LayerKind::BatchNorm) continue;
    for (std::size_t ch = 0; ch < m.layers[i].running_mean.size(); ++ch) {
      CHECK(m.layers[i].running_mean[ch] ==
            Approx(0.75 * before.layers[i].running_mean[ch] + 0.25 * r.batch_mean[i][ch]));
      CHECK(m.layers[i].running_var[ch] == Approx(0.75 * before.layers[i].running_var[ch] + 0.25 * r.batch_var[i][ch]));
    }
  }
}

TEST_CASE("one batch can be overfitted") {
  TrainConfig c = TrainConfig::toy();
  c.schedule = ContinuationSchedule::fixed(5.0, c.epochs);
  MasterWeights m = init_master(build_toy(4, 3, 3, 16, 16), 11);
  const Batch b = make_batch(12, 4, 16, 3);
  const double first = train_step(m, b, c, 0);
  double last = first;
  for (int s = 0; s < 60; ++s) last = train_step(m, b, c, 0);
  CHECK(last < 0.5 * first);
}

TEST_CASE("non-finite loss raises TrainingError") {
  TrainConfig c = TrainConfig::toy();
  MasterWeights m = init_master(build_toy(2, 1, 2, 8, 8), 13);
  Batch b = make_batch(14, 1, 8, 1);
  b.images[5] = std::nan("");
  CHECK_THROWS_AS(train_step(m, b, c, 0), TrainingError);
}

TEST_CASE("exported model matches the trained configuration") {
  TrainConfig c = TrainConfig::toy();
  c.sparsity = 0.5;
  MasterWeights m = init_master(build_toy(4, 3, 3, 16, 16), 15);
  const Model model = export_model(m, c, 6.0);
  CHECK_NOTHROW(model.validate());
  CHECK(model.spec.mode == Mode::TernaryFull);
  CHECK(model.eval_beta == 6.0f);
  for (double s : weight_sparsity(m, c)) CHECK(s == Approx(0.5).epsilon(0.02));
  c.mode = Mode::BinaryFull;
  c.sparsity = -1.0;
  for (double s : weight_sparsity(m, c)) CHECK(s == 0.0);
}

TEST_CASE("train is deterministic and writes one CSV row per epoch") {
  TrainConfig c = TrainConfig::toy();
  c.epochs = 3;
  c.schedule.total_epochs = 3;
  c.iterations = 2;
  c.batch_size = 2;
  c.image_size = 16;
  c.width = 4;
  c.val_samples = 3;
  c.seed = 7;
  const auto dir = temp_dir("determinism");
  const TrainResult a = train(c);
  const TrainResult b = train(c);
  write_metrics_csv(dir / "a.csv", a.metrics);
  write_metrics_csv(dir / "b.csv", b.metrics);
  const std::string text = slurp(dir / "a.csv");
  CHECK(text == slurp(dir / "b.csv"));
  CHECK(text.rfind("epoch,beta,train_loss,val_dice,mean_weight_sparsity\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 4);
  CHECK(a.metrics[0].beta == 3.0);
  CHECK(a.metrics[2].beta == 8.0);

  write_sparsity_csv(dir / "sp.csv", a);
  const std::string sp = slurp(dir / "sp.csv");
  CHECK(sp.rfind("epoch,#1,", 0) == 0);
  CHECK(std::count(sp.begin(), sp.end(), '\n') == 4);
  REQUIRE(a.sparsity.size() == 3);
  CHECK(a.sparsity[0].size() == a.sparsity_labels.size());

  c.seed = 8;
  write_metrics_csv(dir / "c.csv", train(c).metrics);
  CHECK(slurp(dir / "c.csv") != text);
}

TEST_CASE("config parsing") {
  const auto c = parse_train_config(
      "# comment\n"
      "learning_rate = 0.01\n"
      "\n"
      "epochs=4  # trailing\n"
      "schedule=fixed:3\n"
      "mode=float\n"
      "seed=7\n"
      "quantize_weights=false\n"
      "output_dir=runs/a\n");
  CHECK(c.learning_rate == 0.01);
  CHECK(c.epochs == 4);
  CHECK(c.schedule.total_epochs == 4);
  CHECK(c.schedule.is_fixed());
  CHECK(c.schedule.beta_start == 3.0);
  CHECK(c.mode == Mode::Float);
  CHECK(c.seed == 7);
  CHECK_FALSE(c.quantize_weights);
  CHECK(c.output_dir == "runs/a");
  CHECK(c.iterations == TrainConfig::toy().iterations);

  const auto s = parse_schedule("continuation:2:9");
  CHECK(s.beta_start == 2.0);
  CHECK(s.beta_end == 9.0);
  CHECK(parse_schedule("continuation").beta_end == 8.0);
  CHECK_THROWS_AS(parse_schedule("fixed"), DomainError);
  CHECK_THROWS_AS(parse_schedule("linear:1:2"), DomainError);

  auto line_of = [](const std::string& text) -> std::size_t {
    try {
      parse_train_config(text);
    } catch (const ConfigError& e) {
      return e.line();
    }
    return 999;
  };
  CHECK(line_of("epochs=2\nbogus=1\n") == 2);
  CHECK(line_of("epochs=2\n\n\nepochs\n") == 4);
  CHECK(line_of("seed=1\nseed=2\n") == 2);
  CHECK(line_of("batch_size=ten\n") == 1);
  CHECK(line_of("mode=quaternary\n") == 1);
  CHECK(line_of("schedule=fixed:-1\n") == 1);
  CHECK(line_of("learning_rate=-1\n") == 0);
  try {
    parse_train_config("a\n");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).rfind("config line 1:", 0) == 0);
  }

  TrainConfig custom = TrainConfig::toy();
  custom.learning_rate = 0.0031;
  custom.schedule = ContinuationSchedule{2.5, 7.5, custom.epochs};
  custom.mode = Mode::BinaryFull;
  custom.binary_backward = BinaryBackward::Boxcar;
  custom.soft_eval = true;
  custom.lr_schedule = LrSchedule::Constant;
  const auto back = parse_train_config(format_train_config(custom));
  CHECK(format_train_config(back) == format_train_config(custom));
  CHECK(back.learning_rate == custom.learning_rate);
  CHECK(back.binary_backward == BinaryBackward::Boxcar);
  CHECK(back.lr_schedule == LrSchedule::Constant);
  CHECK_THROWS_AS(parse_train_config("lr_schedule=step\n"), ConfigError);
}

TEST_CASE("learning rate schedule") {
  TrainConfig c = TrainConfig::toy();
  c.learning_rate = 0.004;
  CHECK(learning_rate_at(c, 0) == 0.004);
  CHECK(learning_rate_at(c, 4) == Approx(0.002));
  CHECK(learning_rate_at(c, 7) == Approx(0.002 * (1.0 + std::cos(7.0 * M_PI / 8.0))));
  for (int e = 1; e < c.epochs; ++e) CHECK(learning_rate_at(c, e) < learning_rate_at(c, e - 1));
  CHECK(learning_rate_at(c, 7) > 0.0);
  CHECK_THROWS_AS(learning_rate_at(c, 8), DomainError);
  c.lr_schedule = LrSchedule::Constant;
  CHECK(learning_rate_at(c, 7) == 0.004);
}

TEST_CASE("TERNKIT_SEED overrides the configured seed") {
  TrainConfig c = parse_train_config("seed=5\n");
  ::setenv("TERNKIT_SEED", "123", 1);
  apply_env_overrides(c);
  CHECK(c.seed == 123);
  ::setenv("TERNKIT_SEED", "x1", 1);
  CHECK_THROWS_AS(apply_env_overrides(c), ConfigError);
  ::unsetenv("TERNKIT_SEED");
  apply_env_overrides(c);
  CHECK(c.seed == 123);
}

TEST_CASE("toy configuration trains within budget" * doctest::timeout(900)) {
  TrainConfig c = TrainConfig::toy();
  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult r = train(c);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  MESSAGE("toy run: " << seconds << " s, final val Dice " << r.metrics.back().val_dice);
  CHECK(seconds < 600.0);
  CHECK(r.metrics.size() == 8);
  CHECK(r.metrics.back().val_dice > 0.6);
}
