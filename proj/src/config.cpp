#include "empl/config.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <functional>
#include <set>
#include <sstream>

#include "binary.hpp"
#include "empl/errors.hpp"

namespace empl::io {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::string format_double(double v) {
  std::array<char, 64> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

std::uint64_t parse_u64(std::string_view key, std::string_view s) {
  std::uint64_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
    throw ConfigError(std::string(key), "expected a nonnegative integer, got '" + std::string(s) + "'");
  }
  return v;
}

std::size_t parse_count(std::string_view key, std::string_view s, std::size_t min_value) {
  const auto v = parse_u64(key, s);
  if (v < min_value) {
    throw ConfigError(std::string(key), "must be at least " + std::to_string(min_value) + ", got " + std::string(s));
  }
  return static_cast<std::size_t>(v);
}

double parse_double(std::string_view key, std::string_view s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size() || !std::isfinite(v)) {
    throw ConfigError(std::string(key), "expected a finite number, got '" + std::string(s) + "'");
  }
  return v;
}

enum class Bound { nonnegative, positive };

double parse_real(std::string_view key, std::string_view s, Bound bound) {
  const double v = parse_double(key, s);
  if (bound == Bound::positive && !(v > 0.0)) {
    throw ConfigError(std::string(key), "must be positive, got " + std::string(s));
  }
  if (bound == Bound::nonnegative && !(v >= 0.0)) {
    throw ConfigError(std::string(key), "must be nonnegative, got " + std::string(s));
  }
  return v;
}

bool parse_bool(std::string_view key, std::string_view s) {
  if (s == "true") return true;
  if (s == "false") return false;
  throw ConfigError(std::string(key), "expected true or false, got '" + std::string(s) + "'");
}

template <typename E, std::size_t N>
E parse_enum(std::string_view key, std::string_view s, const std::array<std::pair<std::string_view, E>, N>& names) {
  for (const auto& [name, value] : names) {
    if (s == name) return value;
  }
  std::string allowed;
  for (const auto& [name, value] : names) allowed += (allowed.empty() ? "" : "|") + std::string(name);
  throw ConfigError(std::string(key), "expected one of " + allowed + ", got '" + std::string(s) + "'");
}

template <typename E, std::size_t N>
std::string enum_name(E v, const std::array<std::pair<std::string_view, E>, N>& names) {
  for (const auto& [name, value] : names) {
    if (value == v) return std::string(name);
  }
  return "?";
}

constexpr std::array<std::pair<std::string_view, PoolMode>, 2> kPoolNames{{{"mean", PoolMode::mean}, {"concat", PoolMode::concat}}};
constexpr std::array<std::pair<std::string_view, Metric>, 2> kMetricNames{{{"cosine", Metric::cosine}, {"neg_euclidean", Metric::neg_euclidean}}};
constexpr std::array<std::pair<std::string_view, Aggregate>, 2> kAggregateNames{{{"mean", Aggregate::mean}, {"log_sum_exp", Aggregate::log_sum_exp}}};
constexpr std::array<std::pair<std::string_view, CePrompts>, 2> kCeNames{{{"sampled", CePrompts::sampled}, {"base", CePrompts::base}}};
constexpr std::array<std::pair<std::string_view, DirectionReference>, 2> kDirectionNames{
    {{"sample_mean", DirectionReference::sample_mean}, {"leave_one_out", DirectionReference::leave_one_out}}};

std::vector<ClassId> parse_ids(std::string_view key, std::string_view s) {
  std::vector<ClassId> ids;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    const auto comma = s.find(',', pos);
    const auto item = trim(s.substr(pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos));
    const auto v = parse_u64(key, item);
    if (v > 0xffffffffULL) throw ConfigError(std::string(key), "class id out of range");
    ids.push_back(static_cast<ClassId>(v));
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  std::vector<ClassId> sorted = ids;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw ConfigError(std::string(key), "class ids must be distinct");
  }
  return sorted;
}

std::string render_ids(const std::vector<ClassId>& ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) out += (i ? "," : "") + std::to_string(ids[i]);
  return out;
}

using Setter = std::function<void(ExperimentConfig&, std::string_view key, std::string_view value)>;
using Getter = std::function<std::string(const ExperimentConfig&)>;

struct KeySpec {
  std::string_view key;
  std::optional<std::string_view> default_value;
  Setter set;
  Getter get;
};

// The single source of every default in the artifact.
const std::vector<KeySpec>& key_table() {
  using C = ExperimentConfig;
  using V = std::string_view;
  static const std::vector<KeySpec> table = {
      {"schema_version", std::nullopt,
       [](C& c, V k, V v) {
         if (parse_u64(k, v) != static_cast<std::uint64_t>(kConfigSchemaVersion)) {
           throw ConfigError(std::string(k), "unsupported schema version " + std::string(v));
         }
         c.schema_version = kConfigSchemaVersion;
       },
       [](const C& c) { return std::to_string(c.schema_version); }},
      {"seed", std::nullopt, [](C& c, V k, V v) { c.seed = parse_u64(k, v); c.train.seed = c.seed; },
       [](const C& c) { return std::to_string(c.seed); }},
      {"workers", "1", [](C& c, V k, V v) { c.workers = parse_count(k, v, 1); c.train.workers = c.workers; },
       [](const C& c) { return std::to_string(c.workers); }},

      {"train_data", std::nullopt, [](C& c, V, V v) { c.train_data = std::string(v); },
       [](const C& c) { return c.train_data.value_or(""); }},
      {"eval_data", std::nullopt, [](C& c, V, V v) { c.eval_data = std::string(v); },
       [](const C& c) { return c.eval_data.value_or(""); }},
      {"checkpoint", std::nullopt, [](C& c, V, V v) { c.checkpoint = std::string(v); },
       [](const C& c) { return c.checkpoint.value_or(""); }},
      {"observed_classes", std::nullopt, [](C& c, V k, V v) { c.observed_classes = parse_ids(k, v); },
       [](const C& c) { return render_ids(c.observed_classes); }},

      {"embed_dim", std::nullopt, [](C& c, V k, V v) { c.embed_dim = parse_count(k, v, 1); },
       [](const C& c) { return std::to_string(c.embed_dim); }},
      {"context_slots", "4", [](C& c, V k, V v) { c.context_slots = parse_count(k, v, 1); },
       [](const C& c) { return std::to_string(c.context_slots); }},
      {"pool_mode", "mean", [](C& c, V k, V v) { c.pool_mode = parse_enum(k, v, kPoolNames); },
       [](const C& c) { return enum_name(c.pool_mode, kPoolNames); }},
      {"prompt_gain", "false", [](C& c, V k, V v) { c.prompt_gain = parse_bool(k, v); },
       [](const C& c) { return std::string(c.prompt_gain ? "true" : "false"); }},
      {"init_scale", "1", [](C& c, V k, V v) { c.init_scale = parse_real(k, v, Bound::nonnegative); },
       [](const C& c) { return format_double(c.init_scale); }},

      {"metric", "cosine", [](C& c, V k, V v) { c.train.sim.metric = parse_enum(k, v, kMetricNames); },
       [](const C& c) { return enum_name(c.train.sim.metric, kMetricNames); }},
      {"aggregate", "mean", [](C& c, V k, V v) { c.train.sim.aggregate = parse_enum(k, v, kAggregateNames); },
       [](const C& c) { return enum_name(c.train.sim.aggregate, kAggregateNames); }},
      {"gamma", "0.07", [](C& c, V k, V v) { c.train.sim.gamma = parse_real(k, v, Bound::positive); },
       [](const C& c) { return format_double(c.train.sim.gamma); }},

      {"sgld_alpha", std::nullopt, [](C& c, V k, V v) { c.train.sgld.alpha = parse_real(k, v, Bound::positive); },
       [](const C& c) { return format_double(c.train.sgld.alpha); }},
      {"sgld_steps", "20", [](C& c, V k, V v) { c.train.sgld.steps = parse_count(k, v, 1); },
       [](const C& c) { return std::to_string(c.train.sgld.steps); }},
      {"sgld_init_noise_std", "0.01",
       [](C& c, V k, V v) { c.train.sgld.init_noise_std = parse_real(k, v, Bound::nonnegative); },
       [](const C& c) { return format_double(c.train.sgld.init_noise_std); }},
      {"sgld_persistent", "false", [](C& c, V k, V v) { c.train.sgld.persistent = parse_bool(k, v); },
       [](const C& c) { return std::string(c.train.sgld.persistent ? "true" : "false"); }},

      {"lambda", "0.1", [](C& c, V k, V v) { c.train.lambda = parse_real(k, v, Bound::nonnegative); },
       [](const C& c) { return format_double(c.train.lambda); }},
      {"lr", "0.01", [](C& c, V k, V v) { c.train.lr = parse_real(k, v, Bound::positive); },
       [](const C& c) { return format_double(c.train.lr); }},
      {"momentum", "0",
       [](C& c, V k, V v) {
         c.train.momentum = parse_real(k, v, Bound::nonnegative);
         if (!(c.train.momentum < 1.0)) throw ConfigError(std::string(k), "must be below 1");
       },
       [](const C& c) { return format_double(c.train.momentum); }},
      {"batch_size", std::nullopt, [](C& c, V k, V v) { c.train.batch_size = parse_count(k, v, 1); },
       [](const C& c) { return std::to_string(c.train.batch_size); }},
      {"epochs", std::nullopt, [](C& c, V k, V v) { c.train.epochs = parse_count(k, v, 1); },
       [](const C& c) { return std::to_string(c.train.epochs); }},
      {"tasks_per_epoch", std::nullopt, [](C& c, V k, V v) { c.train.tasks_per_epoch = parse_count(k, v, 1); },
       [](const C& c) { return std::to_string(c.train.tasks_per_epoch); }},
      {"unseen_per_task", "2", [](C& c, V k, V v) { c.train.unseen_per_task = parse_count(k, v, 1); },
       [](const C& c) { return std::to_string(c.train.unseen_per_task); }},
      {"num_prompts", "8", [](C& c, V k, V v) { c.train.num_prompts = parse_count(k, v, 1); },
       [](const C& c) { return std::to_string(c.train.num_prompts); }},
      {"ce_prompts", "sampled", [](C& c, V k, V v) { c.train.ce_prompts = parse_enum(k, v, kCeNames); },
       [](const C& c) { return enum_name(c.train.ce_prompts, kCeNames); }},

      {"synth_classes", std::nullopt, [](C& c, V k, V v) { c.synth.classes = parse_count(k, v, 2); },
       [](const C& c) { return std::to_string(c.synth.classes); }},
      {"synth_per_class", std::nullopt, [](C& c, V k, V v) { c.synth.per_class = parse_count(k, v, 1); },
       [](const C& c) { return std::to_string(c.synth.per_class); }},
      {"synth_test_per_class", "100", [](C& c, V k, V v) { c.synth.test_per_class = parse_count(k, v, 1); },
       [](const C& c) { return std::to_string(c.synth.test_per_class); }},
      {"synth_d_in", std::nullopt, [](C& c, V k, V v) { c.synth.d_in = parse_count(k, v, 1); },
       [](const C& c) { return std::to_string(c.synth.d_in); }},
      {"synth_cluster_std", std::nullopt,
       [](C& c, V k, V v) { c.synth.cluster_std = parse_real(k, v, Bound::nonnegative); },
       [](const C& c) { return format_double(c.synth.cluster_std); }},
      {"synth_radius", "3", [](C& c, V k, V v) { c.synth.radius = parse_real(k, v, Bound::positive); },
       [](const C& c) { return format_double(c.synth.radius); }},
      {"synth_word_dim", "8", [](C& c, V k, V v) { c.synth.word_dim = parse_count(k, v, 1); },
       [](const C& c) { return std::to_string(c.synth.word_dim); }},
      {"synth_word_noise", "0.1",
       [](C& c, V k, V v) { c.synth.word_noise = parse_real(k, v, Bound::nonnegative); },
       [](const C& c) { return format_double(c.synth.word_noise); }},
      {"synth_grid_side", "20", [](C& c, V k, V v) { c.synth.grid_side = parse_count(k, v, 2); },
       [](const C& c) { return std::to_string(c.synth.grid_side); }},

      {"check_grad_configs", "100", [](C& c, V k, V v) { c.check_grad_configs = parse_count(k, v, 1); },
       [](const C& c) { return std::to_string(c.check_grad_configs); }},
      {"check_grad_eps", "0.001", [](C& c, V k, V v) { c.check_grad_eps = parse_real(k, v, Bound::positive); },
       [](const C& c) { return format_double(c.check_grad_eps); }},
      {"direction_reference", "sample_mean",
       [](C& c, V k, V v) { c.direction_reference = parse_enum(k, v, kDirectionNames); },
       [](const C& c) { return enum_name(c.direction_reference, kDirectionNames); }},
      {"sample_limit", "16", [](C& c, V k, V v) { c.sample_limit = parse_count(k, v, 1); },
       [](const C& c) { return std::to_string(c.sample_limit); }},
  };
  return table;
}

const KeySpec* find_key(std::string_view key) {
  for (const auto& spec : key_table()) {
    if (spec.key == key) return &spec;
  }
  return nullptr;
}

}  // namespace

bool ExperimentConfig::has(std::string_view key) const {
  auto in = [&](const std::vector<std::string>& v) { return std::find(v.begin(), v.end(), key) != v.end(); };
  return in(explicit_keys) || in(defaults_applied);
}

void ExperimentConfig::require(std::initializer_list<std::string_view> keys) const {
  for (auto key : keys) {
    if (!has(key)) throw ConfigError(std::string(key), "required key is missing");
  }
}

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
  return render_config(a) == render_config(b);
}

std::vector<ConfigDefault> config_defaults() {
  std::vector<ConfigDefault> out;
  for (const auto& spec : key_table()) {
    if (spec.default_value) out.push_back({spec.key, *spec.default_value});
  }
  return out;
}

ExperimentConfig parse_config(std::string_view text) {
  ExperimentConfig cfg;
  std::set<std::string, std::less<>> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto eol = text.find('\n', pos);
    std::string_view line = text.substr(pos, eol == std::string_view::npos ? std::string_view::npos : eol - pos);
    pos = eol == std::string_view::npos ? text.size() + 1 : eol + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("line " + std::to_string(line_no), "expected 'key = value'");
    }
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    const KeySpec* spec = find_key(key);
    if (spec == nullptr) throw ConfigError(std::string(key), "unknown key");
    if (!seen.insert(std::string(key)).second) throw ConfigError(std::string(key), "duplicate key");
    if (value.empty()) throw ConfigError(std::string(key), "empty value");
    spec->set(cfg, key, value);
  }
  for (const auto& spec : key_table()) {
    if (seen.count(spec.key)) {
      cfg.explicit_keys.emplace_back(spec.key);
    } else if (spec.default_value) {
      spec.set(cfg, spec.key, *spec.default_value);
      cfg.defaults_applied.emplace_back(spec.key);
    }
  }
  cfg.require({"schema_version", "seed"});
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = detail::read_file(path);
  } catch (const Error& e) {
    throw ConfigError("--config", e.what());
  }
  return parse_config(text);
}

std::vector<std::pair<std::string, std::string>> config_entries(const ExperimentConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& spec : key_table()) {
    if (cfg.has(spec.key)) out.emplace_back(spec.key, spec.get(cfg));
  }
  return out;
}

std::string render_config(const ExperimentConfig& cfg) {
  std::ostringstream out;
  for (const auto& [key, value] : config_entries(cfg)) out << key << " = " << value << '\n';
  return out.str();
}

}  // namespace empl::io
