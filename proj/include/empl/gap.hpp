#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "empl/contrastive.hpp"
#include "empl/encoders.hpp"
#include "empl/energy.hpp"
#include "empl/numeric.hpp"
#include "empl/task.hpp"

namespace empl {

enum class Modality : std::uint8_t { image = 0, text = 1 };

struct TaggedEmbedding {
  Modality modality = Modality::image;
  ClassId class_id = 0;
  Vec vector;
};

struct EmbeddingPair {
  Vec image;
  Vec text;
  ClassId class_id = 0;
};

using PairSet = std::vector<EmbeddingPair>;

// Summary of |g| and cos(g, reference) over a set of gap vectors g.
struct GapStats {
  double magnitude_mean = 0.0;
  double magnitude_std = 0.0;
  double direction_mean = 0.0;
  double direction_std = 0.0;
  std::size_t n = 0;
  std::size_t direction_skipped = 0;  // exactly-zero gaps left out of the direction stats
  bool direction_defined = false;     // false when the reference direction is the zero vector
};

enum class DirectionReference {
  sample_mean,    // cos(g_i, mean of all gaps)
  leave_one_out,  // cos(g_i, mean of the other gaps)
};

// g = image - text per pair, in order.
std::vector<Vec> individual_gaps(const PairSet& pairs);

// Mean image embedding minus mean text embedding of one class.
Vec class_gap(std::span<const TaggedEmbedding> records, ClassId class_id);
Vec class_gap(const PairSet& pairs, ClassId class_id);

// Standard deviations use the n - 1 denominator; running means use Welford
// updates so a constant ensemble gives std 0 and direction 1 exactly.
GapStats gap_stats(std::span<const Vec> gaps,
                   DirectionReference reference = DirectionReference::sample_mean);

// |sim(f_i, h_c1) - sim(f_j, h_c1)|: how well the probe c1 separates the two
// images.
double nonident_discriminant(std::span<const double> f_i, std::span<const double> f_j,
                             std::span<const double> h_c1, std::span<const double> h_c2,
                             Metric metric);

// |mean_A sim(f, h_probe) - mean_B sim(f, h_probe)|, where h_probe is the mean
// text embedding of probe_class over both groups.
double population_nonident(const PairSet& group_a, const PairSet& group_b, ClassId probe_class,
                           Metric metric);

// Spearman rank correlation with average ranks for ties. Empty when either
// side has constant ranks.
std::optional<double> spearman(std::span<const double> a, std::span<const double> b);

// Unseen-class mass exp(E) at each grid point, prompts sampled conditional on
// f(grid point) with stream_seed(seed, point index).
std::vector<double> unseen_mass(const ModelParams& params, const Vocabulary& vocab,
                                std::span<const Vec> grid, const TaskSpec& task,
                                std::size_t num_prompts, const SgldConfig& sgld,
                                const SimConfig& sim, std::uint64_t seed, std::size_t workers = 1);

// Spearman correlation between density and unseen_mass over the grid.
std::optional<double> prop3_correlation(const ModelParams& params, const Vocabulary& vocab,
                                        std::span<const Vec> grid, std::span<const double> density,
                                        const TaskSpec& task, std::size_t num_prompts,
                                        const SgldConfig& sgld, const SimConfig& sim,
                                        std::uint64_t seed, std::size_t workers = 1);

// 2ab / (a + b) for accuracies in [0, 100].
double harmonic_mean(double base_acc, double new_acc);

}  // namespace empl
