// ternkit command-line tool. Exit codes: 0 success, 2 usage or file errors,
// 3 semantic errors (mode mismatch, shape mismatch, failed checks).

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "ternkit/bench.hpp"
#include "ternkit/config.hpp"
#include "ternkit/image_io.hpp"
#include "ternkit/network.hpp"
#include "ternkit/serialize.hpp"
#include "ternkit/synth.hpp"
#include "ternkit/training.hpp"

namespace fs = std::filesystem;
using namespace ternkit;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitSemantic = 3;

template <typename E>
std::string name(E e) {
  return std::string(to_string(e));
}

// Error that carries its own exit code.
struct CliError {
  int code;
  std::string message;
};

NetworkSpec arch_spec(const std::string& arch, std::size_t width, std::size_t slices, std::size_t levels,
                      std::size_t size) {
  if (arch == "table1") return build_table1();
  if (arch == "toy") return build_toy(width, slices, levels, size, size);
  throw CliError{kExitUsage, "unknown arch '" + arch + "' (expected table1 or toy)"};
}

Mode mode_flag(const std::string& text) {
  try {
    return parse_mode(text);
  } catch (const DomainError& e) {
    throw CliError{kExitUsage, e.what()};
  }
}

Model load_or_fail(const fs::path& path) {
  if (!fs::exists(path)) throw CliError{kExitUsage, "model file not found: " + path.string()};
  return load_model(path);
}

void print_memory(const Model& m) {
  std::size_t payload = 0, scales = 0, floats = 0;
  for (std::size_t i = 0; i < m.spec.layers.size(); ++i) {
    const auto* p = std::get_if<ConvParams>(&m.params[i]);
    if (!p) continue;
    if (p->precision == Precision::Float32) {
      floats += 4 * p->weights.size();
    } else {
      const std::size_t n = m.spec.layers[i].weight_count();
      payload += p->precision == Precision::Ternary2Bit ? n * 2 : n;
      scales += 4 * p->packed.scales().size();
    }
  }
  std::printf("mode %s: quantised payload %.4f MB, scales %zu bytes, float weights %zu bytes\n",
              name(m.spec.mode).c_str(), static_cast<double>(payload) / 8.0 / 1e6, scales, floats);
}

int cmd_init(const std::string& arch, std::size_t width, std::size_t slices, std::size_t levels, std::size_t size,
             std::uint64_t seed, const fs::path& out) {
  const Model m = init_model(arch_spec(arch, width, slices, levels, size), seed);
  save_model(m, out);
  std::printf("wrote float %s model (%zu layers) to %s\n", arch.c_str(), m.spec.layers.size(), out.string().c_str());
  return 0;
}

int cmd_quantize(const fs::path& in, const fs::path& out, const std::string& mode_name, double sparsity) {
  const Model fm = load_or_fail(in);
  if (fm.spec.mode != Mode::Float) {
    throw CliError{kExitSemantic, "quantize expects a float model, got " + name(fm.spec.mode)};
  }
  const Mode mode = mode_flag(mode_name);
  if (mode == Mode::Float) throw CliError{kExitUsage, "quantize needs a ternary or binary --mode"};
  const Model qm = quantize_model(fm, mode, sparsity);
  save_model(qm, out);
  print_memory(qm);
  std::printf("wrote %s (%ju bytes)\n", out.string().c_str(), static_cast<std::uintmax_t>(fs::file_size(out)));
  return 0;
}

int cmd_infer(const fs::path& model_path, const fs::path& input_path, const fs::path& output_path,
              const std::string& mode_name, bool dense_simulation, bool soft, int threads) {
  const Model m = load_or_fail(model_path);
  if (!fs::exists(input_path)) throw CliError{kExitUsage, "input file not found: " + input_path.string()};
  const Mode mode = mode_flag(mode_name);
  if (mode != m.spec.mode) {
    throw CliError{kExitSemantic, "--mode " + name(mode) + " does not match the model's mode " +
                                      name(m.spec.mode)};
  }
  const DenseTensor x = load_stack(input_path);
  if (x.dim(1) != m.spec.input_slices || x.dim(2) != m.spec.input_h || x.dim(3) != m.spec.input_w) {
    throw CliError{kExitSemantic, "input " + shape_string(x.shape()) + " does not match the model input (1, " +
                                      std::to_string(m.spec.input_slices) + ", " + std::to_string(m.spec.input_h) +
                                      ", " + std::to_string(m.spec.input_w) + ")"};
  }
  ForwardOptions opt;
  opt.dense_simulation = dense_simulation;
  opt.hard = !soft;
  opt.threads = threads;
  const auto t0 = std::chrono::steady_clock::now();
  const DenseTensor scores = forward(m, x, opt);
  const auto t1 = std::chrono::steady_clock::now();
  const MaskTensor mask = predict_mask(scores);
  write_mask_pgm(output_path, MaskTensor({mask.dim(1), mask.dim(2)}, mask.storage()));
  std::size_t fg = 0;
  for (auto v : mask.storage()) fg += v != 0;
  std::printf("inference time: %.3f ms\n", std::chrono::duration<double, std::milli>(t1 - t0).count());
  std::printf("foreground pixels: %zu of %zu\n", fg, mask.size());
  return 0;
}

int cmd_train(const fs::path& config_path, const std::string& out_override) {
  if (!fs::exists(config_path)) throw CliError{kExitUsage, "config file not found: " + config_path.string()};
  TrainConfig c;
  try {
    c = load_train_config(config_path);
    apply_env_overrides(c);
  } catch (const ConfigError& e) {
    throw CliError{kExitUsage, config_path.string() + ": " + e.what()};
  }
  if (!out_override.empty()) c.output_dir = out_override;
  const fs::path dir = c.output_dir;
  fs::create_directories(dir);
  {
    std::ofstream cfg(dir / "config.txt");
    cfg << format_train_config(c);
  }
  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult r = train(c, [&](const EpochMetrics& m) {
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("epoch %d  beta %.3f  loss %.5f  val_dice %.4f  sparsity %.4f  (%.1f s)\n", m.epoch, m.beta,
                m.train_loss, m.val_dice, m.mean_weight_sparsity, s);
    std::fflush(stdout);
  });
  write_metrics_csv(dir / "metrics.csv", r.metrics);
  write_sparsity_csv(dir / "sparsity.csv", r);
  save_model(r.model, dir / "model.tnn");
  std::printf("wrote %s\n", dir.string().c_str());
  return 0;
}

int cmd_flops(const std::string& arch, std::size_t width) {
  const auto net = arch_spec(arch, width, 3, 3, 64);
  const auto rows = count_flops(net);
  std::printf("%-12s %12s\n", "layer", "MFlops");
  for (const auto& r : rows) std::printf("%-12s %12.0f\n", r.label.c_str(), r.mflops);
  std::printf("%-12s %12.0f\n", "total", total_mflops(rows));
  for (Precision p : {Precision::Float32, Precision::Ternary2Bit, Precision::Binary1Bit}) {
    const auto mem = count_params_memory(net, p);
    std::printf("%-12s %zu parameters, %.4f MB payload, %zu scale bytes\n", name(p).c_str(), mem.parameters,
                static_cast<double>(mem.payload_bytes) / 1e6, mem.scale_bytes);
  }
  return 0;
}

int cmd_bench(int threads, int repetitions, const std::string& csv_path) {
  BenchOptions o;
  o.threads = threads;
  o.repetitions = repetitions;
  std::vector<BenchReport> reports;
  for (const auto& s : default_bench_shapes()) reports.push_back(run_bench(s, o));
  write_bench_csv(std::cout, reports);
  if (!csv_path.empty()) {
    std::ofstream out(csv_path);
    if (!out) throw CliError{kExitUsage, "cannot write " + csv_path};
    write_bench_csv(out, reports);
  }
  return 0;
}

int cmd_synth(std::uint64_t seed, std::size_t count, std::size_t size, std::size_t slices, const fs::path& dir) {
  const Dataset d = synth_dataset(seed, count, size, slices);
  fs::create_directories(dir);
  const std::size_t plane = size * size;
  for (std::size_t i = 0; i < count; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "sample_%03zu", i);
    DenseTensor img({1, slices, size, size});
    std::copy_n(d.images.raw() + i * slices * plane, slices * plane, img.raw());
    write_tensor(dir / (std::string(name) + ".tft"), img);
    MaskTensor mask({size, size});
    std::copy_n(d.masks.raw() + i * plane, plane, mask.raw());
    write_mask_pgm(dir / (std::string(name) + "_mask.pgm"), mask);
  }
  std::printf("wrote %zu samples to %s\n", count, dir.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ternkit: ternary and binary segmentation networks"};
  app.require_subcommand(1);
  std::function<int()> action;

  std::string arch = "toy", mode = "ternary", out, in, model, input, output, config, csv;
  std::size_t width = 8, slices = 3, levels = 3, size = 64, count = 4;
  std::uint64_t seed = 1;
  double sparsity = -1.0;
  int threads = 1, reps = 7;
  bool dense_sim = false, soft = false;

  auto* init = app.add_subcommand("init", "Write a randomly initialised float model");
  init->add_option("--arch", arch, "table1 or toy")->capture_default_str();
  init->add_option("--width", width, "toy base width")->capture_default_str();
  init->add_option("--slices", slices, "toy input slices")->capture_default_str();
  init->add_option("--levels", levels, "toy resolution levels")->capture_default_str();
  init->add_option("--size", size, "toy input height and width")->capture_default_str();
  init->add_option("--seed", seed)->capture_default_str();
  init->add_option("-o,--out", out, "output model file")->required();
  init->callback([&] { action = [&] { return cmd_init(arch, width, slices, levels, size, seed, out); }; });

  auto* quantize = app.add_subcommand("quantize", "Quantise a float model");
  quantize->add_option("input", in, "float model file")->required();
  quantize->add_option("output", out, "quantised model file")->required();
  quantize->add_option("--mode", mode, "ternary, binary or ternary-weights-only")->capture_default_str();
  quantize->add_option("--sparsity", sparsity, "fixed per-filter zero fraction (ternary only)");
  quantize->callback([&] { action = [&] { return cmd_quantize(in, out, mode, sparsity); }; });

  auto* infer = app.add_subcommand("infer", "Segment one input stack");
  infer->add_option("model", model, "model file")->required();
  infer->add_option("input", input, "input stack (.pgm or .tft)")->required();
  infer->add_option("output", output, "output mask (.pgm)")->required();
  infer->add_option("--mode", mode, "expected model mode")->required();
  infer->add_flag("--dense-sim", dense_sim, "run quantised convolutions through the dense path");
  infer->add_flag("--soft", soft, "soft activations at the model's eval beta");
  infer->add_option("--threads", threads)->capture_default_str();
  infer->callback([&] { action = [&] { return cmd_infer(model, input, output, mode, dense_sim, soft, threads); }; });

  auto* train_cmd = app.add_subcommand("train", "Train on the synthetic segmentation task");
  train_cmd->add_option("config", config, "key=value config file")->required();
  train_cmd->add_option("-o,--out", out, "output directory (overrides output_dir)");
  train_cmd->callback([&] { action = [&] { return cmd_train(config, out); }; });

  auto* flops = app.add_subcommand("flops", "Per-layer MFlops and memory");
  flops->add_option("--arch", arch, "table1 or toy")->capture_default_str();
  flops->add_option("--width", width, "toy base width")->capture_default_str();
  flops->callback([&] { action = [&] { return cmd_flops(arch, width); }; });

  auto* bench = app.add_subcommand("bench", "Packed ternary GEMM vs scalar float GEMM");
  bench->add_option("--threads", threads)->capture_default_str();
  bench->add_option("--reps", reps, "timed repetitions per shape")->capture_default_str();
  bench->add_option("--csv", csv, "also write the table to this file");
  bench->callback([&] { action = [&] { return cmd_bench(threads, reps, csv); }; });

  auto* synth = app.add_subcommand("synth", "Write synthetic input stacks and masks");
  synth->add_option("--seed", seed)->capture_default_str();
  synth->add_option("--count", count)->capture_default_str();
  synth->add_option("--size", size)->capture_default_str();
  synth->add_option("--slices", slices)->capture_default_str();
  synth->add_option("-o,--out", out, "output directory")->required();
  synth->callback([&] { action = [&] { return cmd_synth(seed, count, size, slices, out); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    return action();
  } catch (const CliError& e) {
    std::fprintf(stderr, "error: %s\n", e.message.c_str());
    return e.code;
  } catch (const LoadError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitSemantic;
  }
}
