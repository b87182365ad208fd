#include "empl/gap.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "empl/errors.hpp"
#include "empl/parallel.hpp"

namespace empl {

namespace {

// Welford running mean / variance.
struct Running {
  std::size_t n = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void push(double x) {
    ++n;
    const double delta = x - mean;
    mean += delta / static_cast<double>(n);
    m2 += delta * (x - mean);
  }
  double std_dev() const { return n < 2 ? 0.0 : std::sqrt(std::max(0.0, m2 / static_cast<double>(n - 1))); }
};

Vec running_mean(std::span<const Vec> vs) {
  Vec mean(vs[0].size(), 0.0);
  for (std::size_t k = 0; k < vs.size(); ++k) {
    const double inv = 1.0 / static_cast<double>(k + 1);
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += (vs[k][i] - mean[i]) * inv;
  }
  return mean;
}

bool is_zero(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
}

Vec mean_of(const std::vector<const Vec*>& vs) {
  Vec mean(vs[0]->size(), 0.0);
  for (std::size_t k = 0; k < vs.size(); ++k) {
    const double inv = 1.0 / static_cast<double>(k + 1);
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += ((*vs[k])[i] - mean[i]) * inv;
  }
  return mean;
}

}  // namespace

std::vector<Vec> individual_gaps(const PairSet& pairs) {
  if (pairs.empty()) throw InvalidInputError("empty pair set");
  const std::size_t dim = pairs[0].image.size();
  std::vector<Vec> gaps;
  gaps.reserve(pairs.size());
  for (const auto& p : pairs) {
    if (p.image.size() != dim || p.text.size() != dim) {
      throw InvalidInputError("pair embeddings have inconsistent dimensions");
    }
    gaps.push_back(subtract(p.image, p.text));
  }
  return gaps;
}

Vec class_gap(std::span<const TaggedEmbedding> records, ClassId class_id) {
  std::vector<const Vec*> images;
  std::vector<const Vec*> texts;
  for (const auto& r : records) {
    if (r.class_id != class_id) continue;
    (r.modality == Modality::image ? images : texts).push_back(&r.vector);
  }
  if (images.empty() || texts.empty()) {
    throw InvalidInputError("class " + std::to_string(class_id) + " lacks an " +
                            (images.empty() ? "image" : "text") + " embedding");
  }
  const Vec mi = mean_of(images);
  const Vec mt = mean_of(texts);
  if (mi.size() != mt.size()) throw InvalidInputError("class embeddings have inconsistent dimensions");
  return subtract(mi, mt);
}

Vec class_gap(const PairSet& pairs, ClassId class_id) {
  std::vector<TaggedEmbedding> records;
  for (const auto& p : pairs) {
    if (p.class_id != class_id) continue;
    records.push_back({Modality::image, p.class_id, p.image});
    records.push_back({Modality::text, p.class_id, p.text});
  }
  return class_gap(records, class_id);
}

GapStats gap_stats(std::span<const Vec> gaps, DirectionReference reference) {
  if (gaps.size() < 2) throw InvalidInputError("gap statistics need at least 2 gaps");
  for (const auto& g : gaps) {
    if (g.size() != gaps[0].size()) throw InvalidInputError("gaps have inconsistent dimensions");
  }
  GapStats out;
  out.n = gaps.size();

  Running magnitude;
  for (const auto& g : gaps) magnitude.push(norm(g));
  out.magnitude_mean = magnitude.mean;
  out.magnitude_std = magnitude.std_dev();

  const Vec mean = running_mean(gaps);
  if (reference == DirectionReference::sample_mean && is_zero(mean)) return out;

  Running direction;
  const double n = static_cast<double>(gaps.size());
  for (const auto& g : gaps) {
    if (is_zero(g)) {
      ++out.direction_skipped;
      continue;
    }
    if (reference == DirectionReference::sample_mean) {
      direction.push(cosine_sim(g, mean));
    } else {
      Vec others(mean.size());
      for (std::size_t i = 0; i < mean.size(); ++i) others[i] = (n * mean[i] - g[i]) / (n - 1.0);
      if (is_zero(others)) {
        ++out.direction_skipped;
        continue;
      }
      direction.push(cosine_sim(g, others));
    }
  }
  if (direction.n == 0) return out;
  out.direction_defined = true;
  out.direction_mean = direction.mean;
  out.direction_std = direction.std_dev();
  return out;
}

double nonident_discriminant(std::span<const double> f_i, std::span<const double> f_j,
                             std::span<const double> h_c1, std::span<const double> h_c2,
                             Metric metric) {
  if (f_i.size() != f_j.size() || f_i.size() != h_c1.size() || f_i.size() != h_c2.size()) {
    throw InvalidInputError("discriminant inputs have inconsistent dimensions");
  }
  return std::abs(similarity(f_i, h_c1, metric) - similarity(f_j, h_c1, metric));
}

double population_nonident(const PairSet& group_a, const PairSet& group_b, ClassId probe_class,
                           Metric metric) {
  if (group_a.empty() || group_b.empty()) throw InvalidInputError("population groups must be nonempty");
  std::vector<const Vec*> probes;
  for (const auto* group : {&group_a, &group_b}) {
    for (const auto& p : *group) {
      if (p.class_id == probe_class) probes.push_back(&p.text);
    }
  }
  if (probes.empty()) {
    throw InvalidInputError("no text embedding for probe class " + std::to_string(probe_class));
  }
  const Vec probe = mean_of(probes);
  auto mean_sim = [&](const PairSet& group) {
    double s = 0.0;
    for (const auto& p : group) {
      if (p.image.size() != probe.size()) throw InvalidInputError("group embeddings have inconsistent dimensions");
      s += similarity(p.image, probe, metric);
    }
    return s / static_cast<double>(group.size());
  };
  return std::abs(mean_sim(group_a) - mean_sim(group_b));
}

namespace {

Vec average_ranks(std::span<const double> v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  Vec ranks(v.size());
  std::size_t i = 0;
  while (i < idx.size()) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

std::optional<double> spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() < 2) throw InvalidInputError("spearman needs two equal-length series");
  const Vec ra = average_ranks(a);
  const Vec rb = average_ranks(b);
  const double mean = 0.5 * static_cast<double>(a.size() + 1);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = ra[i] - mean;
    const double db = rb[i] - mean;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) return std::nullopt;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

std::vector<double> unseen_mass(const ModelParams& params, const Vocabulary& vocab,
                                std::span<const Vec> grid, const TaskSpec& task,
                                std::size_t num_prompts, const SgldConfig& sgld,
                                const SimConfig& sim, std::uint64_t seed, std::size_t workers) {
  const PromptBatch base = base_prompts(params, vocab, task);
  std::vector<double> mass(grid.size());
  parallel_for(grid.size(), workers, [&](std::size_t i) {
    const Vec f = encode_image(params, grid[i]);
    const PromptBatch prompts =
        sample_prompts_from_base(f, base, task, num_prompts, sgld, sim, stream_seed(seed, i), 1);
    mass[i] = std::exp(energy(f, prompts, task, sim));
  });
  return mass;
}

std::optional<double> prop3_correlation(const ModelParams& params, const Vocabulary& vocab,
                                        std::span<const Vec> grid, std::span<const double> density,
                                        const TaskSpec& task, std::size_t num_prompts,
                                        const SgldConfig& sgld, const SimConfig& sim,
                                        std::uint64_t seed, std::size_t workers) {
  if (grid.size() != density.size() || grid.size() < 10) {
    throw InvalidInputError("prop3 correlation needs >= 10 grid points with one density each");
  }
  const auto mass = unseen_mass(params, vocab, grid, task, num_prompts, sgld, sim, seed, workers);
  return spearman(density, mass);
}

double harmonic_mean(double base_acc, double new_acc) {
  if (!(base_acc >= 0.0 && base_acc <= 100.0 && new_acc >= 0.0 && new_acc <= 100.0)) {
    throw InvalidInputError("accuracies must lie in [0, 100]");
  }
  if (base_acc + new_acc == 0.0) throw InvalidInputError("harmonic mean of two zero accuracies");
  return 2.0 * base_acc * new_acc / (base_acc + new_acc);
}

}  // namespace empl
