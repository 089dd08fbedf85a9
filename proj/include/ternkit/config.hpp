#pragma once

#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

#include "ternkit/training.hpp"

namespace ternkit {

// Malformed configuration text; line() is 1-based, 0 when not tied to a line.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::size_t line, const std::string& message);
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// "continuation" (beta 3 -> 8), "continuation:<start>:<end>" or "fixed:<beta>".
ContinuationSchedule parse_schedule(std::string_view text);
std::string format_schedule(const ContinuationSchedule& s);

// key=value lines; '#' starts a comment. Keys not given keep the toy defaults.
// The schedule always spans `epochs`.
TrainConfig parse_train_config(std::string_view text);
TrainConfig load_train_config(const std::filesystem::path& path);

// Canonical text form, parseable by parse_train_config.
std::string format_train_config(const TrainConfig& config);

// TERNKIT_SEED, when set, replaces the seed.
void apply_env_overrides(TrainConfig& config);

}  // namespace ternkit
