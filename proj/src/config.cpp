#include "ternkit/config.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "ternkit/serialize.hpp"

namespace ternkit {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  const char* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc{} && ptr == end;
}

double to_double(std::string_view s, const char* what) {
  double v = 0.0;
  if (!parse_number(s, v)) throw DomainError(std::string(what) + " expects a number, got '" + std::string(s) + "'");
  return v;
}

std::size_t to_size(std::string_view s, const char* what) {
  std::size_t v = 0;
  if (!parse_number(s, v)) {
    throw DomainError(std::string(what) + " expects a non-negative integer, got '" + std::string(s) + "'");
  }
  return v;
}

int to_int(std::string_view s, const char* what) {
  int v = 0;
  if (!parse_number(s, v)) throw DomainError(std::string(what) + " expects an integer, got '" + std::string(s) + "'");
  return v;
}

bool to_bool(std::string_view s, const char* what) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw DomainError(std::string(what) + " expects true or false, got '" + std::string(s) + "'");
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  // Shortest form that reads back identically.
  for (int p = 1; p <= 17; ++p) {
    char shorter[64];
    std::snprintf(shorter, sizeof shorter, "%.*g", p, v);
    double back = 0.0;
    if (parse_number(std::string_view(shorter), back) && back == v) return shorter;
  }
  return buf;
}

using Setter = std::function<void(TrainConfig&, std::string_view)>;

const std::map<std::string, Setter, std::less<>>& setters() {
  static const std::map<std::string, Setter, std::less<>> table{
      {"learning_rate", [](TrainConfig& c, std::string_view v) { c.learning_rate = to_double(v, "learning_rate"); }},
      {"lr_schedule",
       [](TrainConfig& c, std::string_view v) {
         if (v == "cosine") {
           c.lr_schedule = LrSchedule::Cosine;
         } else if (v == "constant") {
           c.lr_schedule = LrSchedule::Constant;
         } else {
           throw DomainError("lr_schedule expects cosine or constant, got '" + std::string(v) + "'");
         }
       }},
      {"batch_size", [](TrainConfig& c, std::string_view v) { c.batch_size = to_size(v, "batch_size"); }},
      {"epochs", [](TrainConfig& c, std::string_view v) { c.epochs = to_int(v, "epochs"); }},
      {"iterations", [](TrainConfig& c, std::string_view v) { c.iterations = to_size(v, "iterations"); }},
      {"weight_background",
       [](TrainConfig& c, std::string_view v) { c.weight_background = to_double(v, "weight_background"); }},
      {"weight_foreground",
       [](TrainConfig& c, std::string_view v) { c.weight_foreground = to_double(v, "weight_foreground"); }},
      {"schedule", [](TrainConfig& c, std::string_view v) { c.schedule = parse_schedule(v); }},
      {"mode", [](TrainConfig& c, std::string_view v) { c.mode = parse_mode(std::string(v)); }},
      {"seed",
       [](TrainConfig& c, std::string_view v) {
         if (!parse_number(v, c.seed)) throw DomainError("seed expects a non-negative integer, got '" + std::string(v) + "'");
       }},
      {"width", [](TrainConfig& c, std::string_view v) { c.width = to_size(v, "width"); }},
      {"levels", [](TrainConfig& c, std::string_view v) { c.levels = to_size(v, "levels"); }},
      {"slices", [](TrainConfig& c, std::string_view v) { c.slices = to_size(v, "slices"); }},
      {"image_size", [](TrainConfig& c, std::string_view v) { c.image_size = to_size(v, "image_size"); }},
      {"val_samples", [](TrainConfig& c, std::string_view v) { c.val_samples = to_size(v, "val_samples"); }},
      {"sparsity", [](TrainConfig& c, std::string_view v) { c.sparsity = to_double(v, "sparsity"); }},
      {"quantize_weights",
       [](TrainConfig& c, std::string_view v) { c.quantize_weights = to_bool(v, "quantize_weights"); }},
      {"binary_backward",
       [](TrainConfig& c, std::string_view v) {
         if (v == "continuation") {
           c.binary_backward = BinaryBackward::Continuation;
         } else if (v == "boxcar") {
           c.binary_backward = BinaryBackward::Boxcar;
         } else {
           throw DomainError("binary_backward expects continuation or boxcar, got '" + std::string(v) + "'");
         }
       }},
      {"soft_eval", [](TrainConfig& c, std::string_view v) { c.soft_eval = to_bool(v, "soft_eval"); }},
      {"bn_momentum", [](TrainConfig& c, std::string_view v) { c.bn_momentum = to_double(v, "bn_momentum"); }},
      {"threads", [](TrainConfig& c, std::string_view v) { c.threads = to_int(v, "threads"); }},
      {"output_dir", [](TrainConfig& c, std::string_view v) { c.output_dir = std::string(v); }},
  };
  return table;
}

}  // namespace

ConfigError::ConfigError(std::size_t line, const std::string& message)
    : std::runtime_error(line > 0 ? "config line " + std::to_string(line) + ": " + message : "config: " + message),
      line_(line) {}

ContinuationSchedule parse_schedule(std::string_view text) {
  ContinuationSchedule s;
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const auto colon = text.find(':', start);
    parts.push_back(trim(text.substr(start, colon == std::string_view::npos ? colon : colon - start)));
    if (colon == std::string_view::npos) break;
    start = colon + 1;
  }
  if (parts[0] == "continuation" && (parts.size() == 1 || parts.size() == 3)) {
    if (parts.size() == 3) {
      s.beta_start = to_double(parts[1], "schedule start");
      s.beta_end = to_double(parts[2], "schedule end");
    }
  } else if (parts[0] == "fixed" && parts.size() == 2) {
    s.beta_start = s.beta_end = to_double(parts[1], "schedule beta");
  } else {
    throw DomainError("schedule expects continuation, continuation:<start>:<end> or fixed:<beta>, got '" +
                      std::string(text) + "'");
  }
  if (!(s.beta_start > 0.0) || !(s.beta_end > 0.0)) throw DomainError("schedule betas must be positive");
  return s;
}

std::string format_schedule(const ContinuationSchedule& s) {
  if (s.is_fixed()) return "fixed:" + fmt(s.beta_start);
  return "continuation:" + fmt(s.beta_start) + ":" + fmt(s.beta_end);
}

TrainConfig parse_train_config(std::string_view text) {
  TrainConfig c = TrainConfig::toy();
  std::set<std::string, std::less<>> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    ++line_no;
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(line_no, "expected key=value, got '" + std::string(line) + "'");
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(line_no, "missing key before '='");
    const auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError(line_no, "unknown key '" + std::string(key) + "'");
    if (!seen.insert(std::string(key)).second) throw ConfigError(line_no, "duplicate key '" + std::string(key) + "'");
    if (value.empty()) throw ConfigError(line_no, "missing value for '" + std::string(key) + "'");
    try {
      it->second(c, value);
    } catch (const DomainError& e) {
      throw ConfigError(line_no, e.what());
    }
  }
  c.schedule.total_epochs = c.epochs;
  try {
    c.validate();
  } catch (const DomainError& e) {
    throw ConfigError(0, e.what());
  }
  return c;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return parse_train_config(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

std::string format_train_config(const TrainConfig& c) {
  std::ostringstream out;
  out << "learning_rate=" << fmt(c.learning_rate) << '\n'
      << "lr_schedule=" << (c.lr_schedule == LrSchedule::Constant ? "constant" : "cosine") << '\n'
      << "batch_size=" << c.batch_size << '\n'
      << "epochs=" << c.epochs << '\n'
      << "iterations=" << c.iterations << '\n'
      << "weight_background=" << fmt(c.weight_background) << '\n'
      << "weight_foreground=" << fmt(c.weight_foreground) << '\n'
      << "schedule=" << format_schedule(c.schedule) << '\n'
      << "mode=" << to_string(c.mode) << '\n'
      << "seed=" << c.seed << '\n'
      << "width=" << c.width << '\n'
      << "levels=" << c.levels << '\n'
      << "slices=" << c.slices << '\n'
      << "image_size=" << c.image_size << '\n'
      << "val_samples=" << c.val_samples << '\n'
      << "sparsity=" << fmt(c.sparsity) << '\n'
      << "quantize_weights=" << (c.quantize_weights ? "true" : "false") << '\n'
      << "binary_backward=" << (c.binary_backward == BinaryBackward::Boxcar ? "boxcar" : "continuation") << '\n'
      << "soft_eval=" << (c.soft_eval ? "true" : "false") << '\n'
      << "bn_momentum=" << fmt(c.bn_momentum) << '\n'
      << "threads=" << c.threads << '\n'
      << "output_dir=" << c.output_dir << '\n';
  return out.str();
}

void apply_env_overrides(TrainConfig& config) {
  const char* env = std::getenv("TERNKIT_SEED");
  if (env == nullptr) return;
  const std::string_view v = trim(env);
  if (!parse_number(v, config.seed)) throw ConfigError(0, "TERNKIT_SEED is not a non-negative integer: '" + std::string(v) + "'");
}

}  // namespace ternkit
