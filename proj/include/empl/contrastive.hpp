#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "empl/encoders.hpp"
#include "empl/numeric.hpp"

namespace empl {

enum class Metric { cosine, neg_euclidean };

// How the P per-prompt similarities of one class are reduced to one score.
enum class Aggregate {
  mean,         // arithmetic mean
  log_sum_exp,  // log_sum_exp(sims) - log P
};

struct SimConfig {
  Metric metric = Metric::cosine;
  Aggregate aggregate = Aggregate::mean;
  double gamma = 0.07;

  void validate() const;
  friend bool operator==(const SimConfig&, const SimConfig&) = default;
};

// cosine: a.b / (|a||b|);  neg_euclidean: -|a - b|.
double similarity(std::span<const double> a, std::span<const double> b, Metric metric);
// Derivatives of similarity() with respect to a and b. For neg_euclidean at
// a == b the (sub)gradient 0 is returned.
std::pair<Vec, Vec> similarity_grad(std::span<const double> a, std::span<const double> b,
                                    Metric metric);

// P prompt embeddings for each of K classes, in class order.
struct PromptBatch {
  std::vector<ClassId> class_ids;
  std::vector<std::vector<Vec>> prompts;

  std::size_t num_classes() const noexcept { return class_ids.size(); }
  // Throws InvalidConfigError unless every class has the same P >= 1 and all
  // embeddings share one dimension.
  std::size_t prompts_per_class() const;
  std::size_t index_of(ClassId id) const;

  // One prompt per class from an id -> embedding map.
  static PromptBatch single(const std::map<ClassId, Vec>& class_embeds);
};

struct PredictionDist {
  Vec probs;
  Vec scores;  // aggregated similarity per class, before division by gamma
  std::vector<ClassId> class_ids;
  double gamma = 0.0;

  // Index of the largest probability; ties go to the lowest class id.
  std::size_t argmax() const;
  ClassId predicted_class() const { return class_ids[argmax()]; }
};

double aggregate_sims(std::span<const double> sims, Aggregate mode);
// d aggregate / d sims_p.
Vec aggregate_sims_grad(std::span<const double> sims, Aggregate mode);

PredictionDist predict_single(std::span<const double> f, const std::map<ClassId, Vec>& class_embeds,
                              const SimConfig& cfg);
PredictionDist predict_multi(std::span<const double> f, const PromptBatch& prompts,
                             const SimConfig& cfg);

struct CeResult {
  double loss = 0.0;
  Vec grad_scores;  // dL/dscores = (probs - onehot) / gamma
};

CeResult ce_loss(const PredictionDist& pred, ClassId label);

// Gradients of a scalar with respect to f and every prompt embedding.
struct EmbeddingGradPair {
  Vec grad_f;
  std::vector<std::vector<Vec>> grad_prompts;  // same layout as PromptBatch::prompts
};

// Pulls dL/dscores back through aggregation and the metric.
EmbeddingGradPair backprop_scores(std::span<const double> f, const PromptBatch& prompts,
                                  const SimConfig& cfg, std::span<const double> grad_scores);

struct MultiPromptCe {
  double loss = 0.0;
  EmbeddingGradPair grads;
};

// ce_loss(predict_multi(f, prompts), label) with gradients at the embeddings.
MultiPromptCe multi_prompt_ce(std::span<const double> f, const PromptBatch& prompts, ClassId label,
                              const SimConfig& cfg);

}  // namespace empl
