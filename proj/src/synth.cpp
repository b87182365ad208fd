#include "empl/synth.hpp"

#include <cmath>
#include <numbers>

#include "empl/errors.hpp"
#include "empl/rng.hpp"

namespace empl::io {

namespace {

std::vector<Vec> class_means(const SynthConfig& cfg) {
  std::vector<Vec> means(cfg.classes, Vec(cfg.d_in, 0.0));
  for (std::size_t k = 0; k < cfg.classes; ++k) {
    if (cfg.d_in >= cfg.classes) {
      means[k][k] = cfg.radius;
    } else if (cfg.d_in == 1) {
      const double t = static_cast<double>(k) / static_cast<double>(cfg.classes - 1);
      means[k][0] = cfg.radius * (2.0 * t - 1.0);
    } else {
      const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(cfg.classes);
      means[k][0] = cfg.radius * std::cos(angle);
      means[k][1] = cfg.radius * std::sin(angle);
    }
  }
  return means;
}

Dataset draw_points(const std::vector<Vec>& means, const std::vector<ClassId>& classes,
                    std::size_t per_class, double std_dev, Rng& rng) {
  Dataset out;
  out.reserve(classes.size() * per_class);
  for (ClassId c : classes) {
    for (std::size_t n = 0; n < per_class; ++n) {
      LabeledExample ex{means[c], c};
      for (double& v : ex.x_in) v += std_dev * rng.normal();
      out.push_back(std::move(ex));
    }
  }
  return out;
}

}  // namespace

SynthData make_synth(const SynthConfig& cfg, std::span<const ClassId> observed, std::uint64_t seed) {
  if (cfg.classes < 2) throw ConfigError("synth_classes", "need at least 2 classes");
  if (cfg.per_class < 1) throw ConfigError("synth_per_class", "need at least 1 point per class");
  if (cfg.test_per_class < 1) throw ConfigError("synth_test_per_class", "need at least 1 point per class");
  if (cfg.d_in < 1) throw ConfigError("synth_d_in", "must be positive");
  if (!(cfg.cluster_std >= 0.0) || !std::isfinite(cfg.cluster_std)) {
    throw ConfigError("synth_cluster_std", "must be a finite nonnegative number");
  }
  if (!(cfg.radius > 0.0)) throw ConfigError("synth_radius", "must be positive");
  if (cfg.word_dim < 1) throw ConfigError("synth_word_dim", "must be positive");
  if (cfg.grid_side < 2) throw ConfigError("synth_grid_side", "must be at least 2");
  for (ClassId c : observed) {
    if (c >= cfg.classes) throw ConfigError("observed_classes", "class " + std::to_string(c) + " is out of range");
  }

  SynthData data;
  data.means = class_means(cfg);

  Rng word_rng(stream_seed(seed, 0));
  Matrix word_map(cfg.word_dim, cfg.d_in);
  const double map_scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_in));
  for (double& v : word_map.data) v = map_scale * word_rng.normal();
  std::vector<VocabEntry> entries;
  for (std::size_t k = 0; k < cfg.classes; ++k) {
    Vec unit = data.means[k];
    for (double& v : unit) v /= cfg.radius;
    Vec w = matvec(word_map, unit);
    for (double& v : w) v += cfg.word_noise * word_rng.normal();
    entries.push_back({static_cast<ClassId>(k), "class_" + std::to_string(k), std::move(w)});
  }
  data.vocab = Vocabulary(std::move(entries));

  std::vector<ClassId> all(cfg.classes);
  for (std::size_t k = 0; k < cfg.classes; ++k) all[k] = static_cast<ClassId>(k);
  const std::vector<ClassId> train_classes = observed.empty() ? all : std::vector<ClassId>(observed.begin(), observed.end());

  Rng train_rng(stream_seed(seed, 1));
  data.train = draw_points(data.means, train_classes, cfg.per_class, cfg.cluster_std, train_rng);
  Rng test_rng(stream_seed(seed, 2));
  data.test = draw_points(data.means, all, cfg.test_per_class, cfg.cluster_std, test_rng);

  if (cfg.cluster_std > 0.0) {
    const double half = cfg.radius + 3.0 * cfg.cluster_std;
    const std::size_t axes = cfg.d_in == 1 ? 1 : 2;
    const std::size_t n_points = axes == 1 ? cfg.grid_side : cfg.grid_side * cfg.grid_side;
    const double step = 2.0 * half / static_cast<double>(cfg.grid_side - 1);
    const double var = cfg.cluster_std * cfg.cluster_std;
    const double norm = std::pow(2.0 * std::numbers::pi * var, -0.5 * static_cast<double>(cfg.d_in));
    for (std::size_t p = 0; p < n_points; ++p) {
      Vec point(cfg.d_in, 0.0);
      point[0] = -half + step * static_cast<double>(p % cfg.grid_side);
      if (axes == 2) point[1] = -half + step * static_cast<double>(p / cfg.grid_side);
      double density = 0.0;
      for (ClassId c : train_classes) {
        const Vec diff = subtract(point, data.means[c]);
        density += norm * std::exp(-0.5 * squared_norm(diff) / var);
      }
      data.grid.push_back(std::move(point));
      data.density.push_back(density / static_cast<double>(train_classes.size()));
    }
  }
  return data;
}

}  // namespace empl::io
