#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "empl/encoders.hpp"
#include "empl/gap.hpp"
#include "empl/meta.hpp"

namespace empl::io {

inline constexpr int kConfigSchemaVersion = 1;

// Parameters of the synthetic Gaussian-cluster benchmark.
struct SynthConfig {
  std::size_t classes = 0;
  std::size_t per_class = 0;
  std::size_t test_per_class = 0;
  std::size_t d_in = 0;
  double cluster_std = 0.0;
  double radius = 0.0;
  std::size_t word_dim = 0;
  double word_noise = 0.0;
  std::size_t grid_side = 0;

  friend bool operator==(const SynthConfig&, const SynthConfig&) = default;
};

// Everything a run needs. Text form: one `key = value` per line, `#` starts a
// comment. Every key is listed in config.cpp's key table together with its
// default (if it has one) and its range.
struct ExperimentConfig {
  int schema_version = kConfigSchemaVersion;
  std::uint64_t seed = 0;
  std::size_t workers = 1;

  std::optional<std::string> train_data;
  std::optional<std::string> eval_data;
  std::optional<std::string> checkpoint;
  std::vector<ClassId> observed_classes;

  std::size_t embed_dim = 0;
  std::size_t context_slots = 0;
  PoolMode pool_mode = PoolMode::mean;
  bool prompt_gain = false;
  double init_scale = 0.0;

  TrainConfig train;  // includes sgld and sim

  SynthConfig synth;

  std::size_t check_grad_configs = 0;
  double check_grad_eps = 0.0;
  DirectionReference direction_reference = DirectionReference::sample_mean;
  std::size_t sample_limit = 0;

  // Keys filled from the defaults table (in table order).
  std::vector<std::string> defaults_applied;
  // Keys present in the source text or set by an override.
  std::vector<std::string> explicit_keys;

  bool has(std::string_view key) const;
  // Throws ConfigError naming the first key in `keys` that has no value.
  void require(std::initializer_list<std::string_view> keys) const;

  friend bool operator==(const ExperimentConfig& a, const ExperimentConfig& b);
};

// One row of the defaults table, for documentation and the report echo.
struct ConfigDefault {
  std::string_view key;
  std::string_view value;
};
std::vector<ConfigDefault> config_defaults();

// Strict parse: unknown keys, duplicates, malformed or out-of-range values and
// a missing schema_version / seed raise ConfigError naming the key.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);

// (key, canonical value) for every key that has a value, in table order.
std::vector<std::pair<std::string, std::string>> config_entries(const ExperimentConfig& cfg);

// Canonical text of every key that has a value, in table order. Parsing the
// result yields an equal config.
std::string render_config(const ExperimentConfig& cfg);

}  // namespace empl::io
