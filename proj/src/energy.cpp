#include "empl/energy.hpp"

#include <cmath>
#include <string>
#include <utility>

#include "empl/errors.hpp"
#include "empl/parallel.hpp"

namespace empl {

namespace {

// Positions (within the batch) of the unseen classes, in batch order.
std::vector<std::size_t> unseen_positions(const PromptBatch& prompts, const TaskSpec& task) {
  task.validate();
  const auto classes = task.all_classes();
  if (prompts.num_classes() != classes.size()) {
    throw InvalidTaskError("prompt batch has " + std::to_string(prompts.num_classes()) +
                           " classes, task has " + std::to_string(classes.size()));
  }
  std::vector<std::size_t> unseen;
  for (std::size_t k = 0; k < prompts.num_classes(); ++k) {
    const ClassId id = prompts.class_ids[k];
    if (task.is_unseen(id)) {
      unseen.push_back(k);
    } else if (!task.is_observed(id)) {
      throw InvalidTaskError("prompt batch class " + std::to_string(id) + " is not in the task");
    }
  }
  if (unseen.size() != task.unseen.size()) {
    throw InvalidTaskError("prompt batch does not cover every unseen class");
  }
  return unseen;
}

struct EnergyParts {
  double value;
  PredictionDist pred;
  Vec unseen_softmax;  // softmax over the unseen logits only
  std::vector<std::size_t> unseen;
};

EnergyParts energy_parts(std::span<const double> x, const PromptBatch& prompts,
                         const TaskSpec& task, const SimConfig& cfg) {
  EnergyParts parts;
  parts.unseen = unseen_positions(prompts, task);
  parts.pred = predict_multi(x, prompts, cfg);
  Vec all_logits(parts.pred.scores.size());
  for (std::size_t k = 0; k < all_logits.size(); ++k) all_logits[k] = parts.pred.scores[k] / cfg.gamma;
  Vec unseen_logits;
  for (std::size_t k : parts.unseen) unseen_logits.push_back(all_logits[k]);
  parts.value = std::min(0.0, log_sum_exp(unseen_logits) - log_sum_exp(all_logits));
  parts.unseen_softmax = softmax_temp(unseen_logits, 1.0);
  return parts;
}

void require_finite(std::span<const double> v, const char* what, std::size_t step) {
  if (!all_finite(v)) throw DivergenceError(std::string("non-finite Langevin iterate ") + what, step);
}

}  // namespace

double energy(std::span<const double> x, const PromptBatch& prompts, const TaskSpec& task,
              const SimConfig& cfg) {
  return energy_parts(x, prompts, task, cfg).value;
}

EnergyGrads energy_grads(std::span<const double> x, const PromptBatch& prompts, const TaskSpec& task,
                         const SimConfig& cfg) {
  const EnergyParts parts = energy_parts(x, prompts, task, cfg);
  // dE/ds_k = (1[k in U] q_k - p_k) / gamma with q the softmax over U.
  Vec grad_scores(parts.pred.probs.size());
  for (std::size_t k = 0; k < grad_scores.size(); ++k) grad_scores[k] = -parts.pred.probs[k];
  for (std::size_t u = 0; u < parts.unseen.size(); ++u) {
    grad_scores[parts.unseen[u]] += parts.unseen_softmax[u];
  }
  for (double& g : grad_scores) g /= cfg.gamma;
  // With every class unseen E is identically 0; drop the q - p round-off.
  if (parts.unseen.size() == grad_scores.size()) grad_scores.assign(grad_scores.size(), 0.0);

  EnergyGrads out;
  out.value = parts.value;
  auto pulled = backprop_scores(x, prompts, cfg, grad_scores);
  out.grad_x = std::move(pulled.grad_f);
  out.grad_prompts = std::move(pulled.grad_prompts);
  return out;
}

double SgldConfig::noise_scale() const { return std::sqrt(alpha); }

void SgldConfig::validate() const {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw InvalidConfigError("SGLD step size alpha must be positive");
  if (steps < 1) throw InvalidConfigError("SGLD needs at least one step");
  if (!(init_noise_std >= 0.0) || !std::isfinite(init_noise_std)) {
    throw InvalidConfigError("SGLD init noise std must be nonnegative");
  }
}

TaskEnergy::TaskEnergy(const PromptBatch& prompts, std::size_t class_index, std::size_t prompt_index,
                       const TaskSpec& task, const SimConfig& sim)
    : prompts_(prompts), class_index_(class_index), prompt_index_(prompt_index), task_(task), sim_(sim) {
  const std::size_t p = prompts.prompts_per_class();
  if (class_index >= prompts.num_classes() || prompt_index >= p) {
    throw InvalidConfigError("chain slot is outside the prompt batch");
  }
  sim.validate();
  unseen_ = unseen_positions(prompts, task);
}

std::span<const double> TaskEnergy::slot_or(std::size_t k, std::size_t j, std::span<const double> h) const {
  if (k == class_index_ && j == prompt_index_) return h;
  return prompts_.prompts[k][j];
}

TaskEnergy::Eval TaskEnergy::evaluate(std::span<const double> x, std::span<const double> h) const {
  const std::size_t k_classes = prompts_.num_classes();
  Eval e;
  e.logits.resize(k_classes);
  Vec sims;
  for (std::size_t k = 0; k < k_classes; ++k) {
    const std::size_t p = prompts_.prompts[k].size();
    sims.resize(p);
    for (std::size_t j = 0; j < p; ++j) sims[j] = similarity(x, slot_or(k, j, h), sim_.metric);
    e.logits[k] = aggregate_sims(sims, sim_.aggregate) / sim_.gamma;
  }
  Vec unseen_logits;
  for (std::size_t k : unseen_) unseen_logits.push_back(e.logits[k]);
  e.value = std::min(0.0, log_sum_exp(unseen_logits) - log_sum_exp(e.logits));
  // dE/ds_k = (1[k in U] q_k - p_k) / gamma with q the softmax over U.
  const Vec p_all = softmax_temp(e.logits, 1.0);
  const Vec q = softmax_temp(unseen_logits, 1.0);
  e.grad_scores.resize(k_classes);
  for (std::size_t k = 0; k < k_classes; ++k) e.grad_scores[k] = -p_all[k];
  for (std::size_t u = 0; u < unseen_.size(); ++u) e.grad_scores[unseen_[u]] += q[u];
  for (double& g : e.grad_scores) g /= sim_.gamma;
  if (unseen_.size() == k_classes) e.grad_scores.assign(k_classes, 0.0);
  return e;
}

Vec TaskEnergy::prompt_weights(std::span<const double> x, std::span<const double> h, std::size_t k) const {
  const std::size_t p = prompts_.prompts[k].size();
  Vec sims(p);
  for (std::size_t j = 0; j < p; ++j) sims[j] = similarity(x, slot_or(k, j, h), sim_.metric);
  return aggregate_sims_grad(sims, sim_.aggregate);
}

double TaskEnergy::value(std::span<const double> x, std::span<const double> h) const {
  return evaluate(x, h).value;
}

Vec TaskEnergy::grad_x(std::span<const double> x, std::span<const double> h) const {
  const Eval e = evaluate(x, h);
  Vec g(x.size(), 0.0);
  for (std::size_t k = 0; k < prompts_.num_classes(); ++k) {
    const Vec w = prompt_weights(x, h, k);
    for (std::size_t j = 0; j < w.size(); ++j) {
      const auto [ga, gb] = similarity_grad(x, slot_or(k, j, h), sim_.metric);
      axpy(e.grad_scores[k] * w[j], ga, g);
    }
  }
  return g;
}

Vec TaskEnergy::grad_h(std::span<const double> x, std::span<const double> h) const {
  const Eval e = evaluate(x, h);
  const Vec w = prompt_weights(x, h, class_index_);
  auto [ga, gb] = similarity_grad(x, h, sim_.metric);
  const double scale = e.grad_scores[class_index_] * w[prompt_index_];
  for (double& v : gb) v *= scale;
  return std::move(gb);
}

double QuadraticEnergy::value(std::span<const double> x, std::span<const double> h) const {
  return 0.5 * squared_norm(subtract(x, mu_x_)) + 0.5 * squared_norm(subtract(h, mu_h_));
}

Vec QuadraticEnergy::grad_x(std::span<const double> x, std::span<const double>) const {
  return subtract(x, mu_x_);
}

Vec QuadraticEnergy::grad_h(std::span<const double>, std::span<const double> h) const {
  return subtract(h, mu_h_);
}

ChainState sgld_step(const ChainState& state, const EnergyField& field, const SgldConfig& cfg,
                     Rng& rng) {
  cfg.validate();
  if (state.step >= cfg.steps) {
    throw InvalidConfigError("chain already ran the configured " + std::to_string(cfg.steps) + " steps");
  }
  require_finite(state.x, "x", state.step);
  require_finite(state.h, "h", state.step);

  const double half = 0.5 * cfg.alpha;
  const double noise = cfg.noise_scale();
  ChainState next = state;
  next.step = state.step + 1;

  if (cfg.mode == SgldMode::joint) {
    const Vec gx = field.grad_x(state.x, state.h);
    for (std::size_t i = 0; i < next.x.size(); ++i) next.x[i] -= half * gx[i];
    for (double& v : next.x) v += noise * rng.normal();
    require_finite(next.x, "x", next.step);
  }
  const Vec gh = field.grad_h(next.x, state.h);
  for (std::size_t i = 0; i < next.h.size(); ++i) next.h[i] -= half * gh[i];
  for (double& v : next.h) v += noise * rng.normal();
  require_finite(next.h, "h", next.step);
  return next;
}

ChainState sample_chain(const ChainState& init, const EnergyField& field, const SgldConfig& cfg,
                        Rng& rng) {
  cfg.validate();
  ChainState state = init;
  while (state.step < cfg.steps) state = sgld_step(state, field, cfg, rng);
  return state;
}

PromptBatch base_prompts(const ModelParams& params, const Vocabulary& vocab, const TaskSpec& task) {
  PromptBatch b;
  for (ClassId id : task.all_classes()) {
    b.class_ids.push_back(id);
    b.prompts.push_back({encode_class(params, vocab, id)});
  }
  return b;
}

PromptBatch sample_prompts_from_base(std::span<const double> x, const PromptBatch& base,
                                     const TaskSpec& task, std::size_t num_prompts,
                                     const SgldConfig& cfg, const SimConfig& sim,
                                     std::uint64_t seed, std::size_t workers) {
  if (num_prompts < 1) throw InvalidConfigError("number of prompts must be at least 1");
  cfg.validate();
  if (base.prompts_per_class() != 1) throw InvalidConfigError("base batch must hold one prompt per class");
  unseen_positions(base, task);

  SgldConfig conditional = cfg;
  conditional.mode = SgldMode::conditional_on_image;

  const std::size_t k_classes = base.num_classes();
  PromptBatch out;
  out.class_ids = base.class_ids;
  out.prompts.assign(k_classes, std::vector<Vec>(num_prompts));
  parallel_for(k_classes * num_prompts, workers, [&](std::size_t chain) {
    const std::size_t k = chain / num_prompts;
    const std::size_t j = chain % num_prompts;
    ChainState init;
    init.stream = stream_seed(seed, chain);
    Rng rng(init.stream);
    init.x.assign(x.begin(), x.end());
    init.h = base.prompts[k][0];
    for (double& v : init.h) v += cfg.init_noise_std * rng.normal();
    const TaskEnergy field(base, k, 0, task, sim);
    out.prompts[k][j] = sample_chain(init, field, conditional, rng).h;
  });
  return out;
}

PromptBatch sample_prompt_batch(std::span<const double> x, const ModelParams& params,
                                const Vocabulary& vocab, const TaskSpec& task,
                                std::size_t num_prompts, const SgldConfig& cfg,
                                const SimConfig& sim, std::uint64_t seed, std::size_t workers) {
  return sample_prompts_from_base(x, base_prompts(params, vocab, task), task, num_prompts, cfg, sim,
                                  seed, workers);
}

}  // namespace empl
