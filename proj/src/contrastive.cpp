#include "empl/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "empl/errors.hpp"

namespace empl {

void SimConfig::validate() const {
  if (!(gamma > 0.0) || !std::isfinite(gamma)) {
    throw InvalidConfigError("temperature gamma must be positive and finite");
  }
}

double similarity(std::span<const double> a, std::span<const double> b, Metric metric) {
  if (metric == Metric::cosine) return cosine_sim(a, b);
  return -norm(subtract(a, b));
}

std::pair<Vec, Vec> similarity_grad(std::span<const double> a, std::span<const double> b,
                                    Metric metric) {
  if (metric == Metric::cosine) return cosine_sim_grad(a, b);
  Vec diff = subtract(a, b);
  const double dist = norm(diff);
  Vec ga(a.size(), 0.0);
  Vec gb(a.size(), 0.0);
  if (dist > 0.0) {
    for (std::size_t i = 0; i < diff.size(); ++i) {
      ga[i] = -diff[i] / dist;
      gb[i] = diff[i] / dist;
    }
  }
  return {std::move(ga), std::move(gb)};
}

std::size_t PromptBatch::prompts_per_class() const {
  if (class_ids.empty() || prompts.size() != class_ids.size()) {
    throw InvalidConfigError("prompt batch is empty or has mismatched class list");
  }
  const std::size_t p = prompts[0].size();
  if (p == 0) throw InvalidConfigError("prompt batch has a class with no prompts");
  const std::size_t dim = prompts[0][0].size();
  for (const auto& per_class : prompts) {
    if (per_class.size() != p) throw InvalidConfigError("ragged prompt batch");
    for (const auto& h : per_class) {
      if (h.size() != dim) throw InvalidConfigError("prompt embeddings have mixed dimensions");
    }
  }
  return p;
}

std::size_t PromptBatch::index_of(ClassId id) const {
  const auto it = std::find(class_ids.begin(), class_ids.end(), id);
  if (it == class_ids.end()) throw UnknownClassError(id);
  return static_cast<std::size_t>(it - class_ids.begin());
}

PromptBatch PromptBatch::single(const std::map<ClassId, Vec>& class_embeds) {
  PromptBatch b;
  for (const auto& [id, h] : class_embeds) {
    b.class_ids.push_back(id);
    b.prompts.push_back({h});
  }
  return b;
}

std::size_t PredictionDist::argmax() const {
  std::size_t best = 0;
  for (std::size_t k = 1; k < probs.size(); ++k) {
    if (probs[k] > probs[best] || (probs[k] == probs[best] && class_ids[k] < class_ids[best])) {
      best = k;
    }
  }
  return best;
}

double aggregate_sims(std::span<const double> sims, Aggregate mode) {
  if (sims.empty()) throw InvalidConfigError("cannot aggregate an empty similarity list");
  if (mode == Aggregate::mean) {
    double s = 0.0;
    for (double v : sims) s += v;
    return s / static_cast<double>(sims.size());
  }
  return log_sum_exp(sims) - std::log(static_cast<double>(sims.size()));
}

Vec aggregate_sims_grad(std::span<const double> sims, Aggregate mode) {
  if (sims.empty()) throw InvalidConfigError("cannot aggregate an empty similarity list");
  if (mode == Aggregate::mean) return Vec(sims.size(), 1.0 / static_cast<double>(sims.size()));
  return softmax_temp(sims, 1.0);
}

namespace {

void require_classes(std::size_t k) {
  if (k < 2) throw InvalidConfigError("prediction needs at least 2 classes, got " + std::to_string(k));
}

PredictionDist make_dist(Vec scores, std::vector<ClassId> ids, double gamma) {
  PredictionDist out;
  out.probs = softmax_temp(scores, gamma);
  out.scores = std::move(scores);
  out.class_ids = std::move(ids);
  out.gamma = gamma;
  return out;
}

}  // namespace

PredictionDist predict_single(std::span<const double> f, const std::map<ClassId, Vec>& class_embeds,
                              const SimConfig& cfg) {
  cfg.validate();
  require_classes(class_embeds.size());
  Vec scores;
  std::vector<ClassId> ids;
  for (const auto& [id, h] : class_embeds) {
    ids.push_back(id);
    scores.push_back(similarity(f, h, cfg.metric));
  }
  return make_dist(std::move(scores), std::move(ids), cfg.gamma);
}

PredictionDist predict_multi(std::span<const double> f, const PromptBatch& prompts,
                             const SimConfig& cfg) {
  cfg.validate();
  const std::size_t p = prompts.prompts_per_class();
  require_classes(prompts.num_classes());
  Vec scores(prompts.num_classes());
  Vec sims(p);
  for (std::size_t k = 0; k < prompts.num_classes(); ++k) {
    for (std::size_t j = 0; j < p; ++j) sims[j] = similarity(f, prompts.prompts[k][j], cfg.metric);
    scores[k] = aggregate_sims(sims, cfg.aggregate);
  }
  return make_dist(std::move(scores), prompts.class_ids, cfg.gamma);
}

CeResult ce_loss(const PredictionDist& pred, ClassId label) {
  const auto it = std::find(pred.class_ids.begin(), pred.class_ids.end(), label);
  if (it == pred.class_ids.end()) throw UnknownClassError(label);
  const std::size_t y = static_cast<std::size_t>(it - pred.class_ids.begin());

  Vec logits(pred.scores.size());
  for (std::size_t k = 0; k < logits.size(); ++k) logits[k] = pred.scores[k] / pred.gamma;
  CeResult out;
  // Log-softmax form; equals -log probs[y] without underflow.
  out.loss = std::max(0.0, log_sum_exp(logits) - logits[y]);
  out.grad_scores.resize(pred.probs.size());
  for (std::size_t k = 0; k < pred.probs.size(); ++k) {
    out.grad_scores[k] = (pred.probs[k] - (k == y ? 1.0 : 0.0)) / pred.gamma;
  }
  return out;
}

EmbeddingGradPair backprop_scores(std::span<const double> f, const PromptBatch& prompts,
                                  const SimConfig& cfg, std::span<const double> grad_scores) {
  const std::size_t p = prompts.prompts_per_class();
  if (grad_scores.size() != prompts.num_classes()) {
    throw InvalidConfigError("score gradient does not match the prompt batch");
  }
  EmbeddingGradPair out;
  out.grad_f.assign(f.size(), 0.0);
  out.grad_prompts.resize(prompts.num_classes());
  Vec sims(p);
  for (std::size_t k = 0; k < prompts.num_classes(); ++k) {
    for (std::size_t j = 0; j < p; ++j) sims[j] = similarity(f, prompts.prompts[k][j], cfg.metric);
    const Vec weights = aggregate_sims_grad(sims, cfg.aggregate);
    out.grad_prompts[k].resize(p);
    for (std::size_t j = 0; j < p; ++j) {
      auto [gf, gh] = similarity_grad(f, prompts.prompts[k][j], cfg.metric);
      const double w = grad_scores[k] * weights[j];
      axpy(w, gf, out.grad_f);
      for (double& v : gh) v *= w;
      out.grad_prompts[k][j] = std::move(gh);
    }
  }
  return out;
}

MultiPromptCe multi_prompt_ce(std::span<const double> f, const PromptBatch& prompts, ClassId label,
                              const SimConfig& cfg) {
  const PredictionDist pred = predict_multi(f, prompts, cfg);
  const CeResult ce = ce_loss(pred, label);
  MultiPromptCe out;
  out.loss = ce.loss;
  out.grads = backprop_scores(f, prompts, cfg, ce.grad_scores);
  return out;
}

}  // namespace empl
