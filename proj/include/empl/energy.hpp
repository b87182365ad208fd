#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "empl/contrastive.hpp"
#include "empl/encoders.hpp"
#include "empl/numeric.hpp"
#include "empl/rng.hpp"
#include "empl/task.hpp"

namespace empl {

// Task-specific energy: log of the predicted probability mass on the unseen
// classes of `task`,
//
//   E(x, H; T) = log sum_{c in U} P(x, H)[c]
//              = LSE_{c in U}(s_c / gamma) - LSE_{all c}(s_c / gamma).
//
// The prompt batch must hold exactly the classes of the task. E <= 0.
double energy(std::span<const double> x, const PromptBatch& prompts, const TaskSpec& task,
              const SimConfig& cfg);

struct EnergyGrads {
  double value = 0.0;
  Vec grad_x;
  std::vector<std::vector<Vec>> grad_prompts;  // PromptBatch layout
};

EnergyGrads energy_grads(std::span<const double> x, const PromptBatch& prompts, const TaskSpec& task,
                         const SimConfig& cfg);

enum class SgldMode {
  joint,                 // alternate x and h updates
  conditional_on_image,  // x held fixed, only h moves
};

struct SgldConfig {
  double alpha = 0.0;  // step size; noise std is sqrt(alpha)
  std::size_t steps = 20;
  SgldMode mode = SgldMode::joint;
  double init_noise_std = 0.01;
  bool persistent = false;  // continue training chains across steps

  double noise_scale() const;
  void validate() const;
  friend bool operator==(const SgldConfig&, const SgldConfig&) = default;
};

struct ChainState {
  Vec x;
  Vec h;
  std::size_t step = 0;
  std::uint64_t stream = 0;  // seed of the chain's noise source
};

// Energy over one (x, h) pair as seen by a Langevin chain.
class EnergyField {
 public:
  virtual ~EnergyField() = default;
  virtual double value(std::span<const double> x, std::span<const double> h) const = 0;
  virtual Vec grad_x(std::span<const double> x, std::span<const double> h) const = 0;
  virtual Vec grad_h(std::span<const double> x, std::span<const double> h) const = 0;
};

// The task energy with one slot of a prompt batch replaced by the chain's h.
class TaskEnergy final : public EnergyField {
 public:
  TaskEnergy(const PromptBatch& prompts, std::size_t class_index, std::size_t prompt_index,
             const TaskSpec& task, const SimConfig& sim);

  double value(std::span<const double> x, std::span<const double> h) const override;
  Vec grad_x(std::span<const double> x, std::span<const double> h) const override;
  Vec grad_h(std::span<const double> x, std::span<const double> h) const override;

 private:
  struct Eval {
    double value = 0.0;
    Vec logits;
    Vec grad_scores;  // dE / d score_k
  };
  std::span<const double> slot_or(std::size_t k, std::size_t j, std::span<const double> h) const;
  Eval evaluate(std::span<const double> x, std::span<const double> h) const;
  Vec prompt_weights(std::span<const double> x, std::span<const double> h, std::size_t k) const;

  const PromptBatch& prompts_;
  std::size_t class_index_;
  std::size_t prompt_index_;
  const TaskSpec& task_;
  const SimConfig& sim_;
  std::vector<std::size_t> unseen_;
};

// E(x, h) = 0.5 |x - mu_x|^2 + 0.5 |h - mu_h|^2; its Langevin stationary
// law is N(mu, I). Used to validate the sampler.
class QuadraticEnergy final : public EnergyField {
 public:
  QuadraticEnergy(Vec mu_x, Vec mu_h) : mu_x_(std::move(mu_x)), mu_h_(std::move(mu_h)) {}
  double value(std::span<const double> x, std::span<const double> h) const override;
  Vec grad_x(std::span<const double> x, std::span<const double> h) const override;
  Vec grad_h(std::span<const double> x, std::span<const double> h) const override;

 private:
  Vec mu_x_;
  Vec mu_h_;
};

// One alternating Langevin update:
//   x' = x - (alpha/2) dE/dx(x, h)  + sqrt(alpha) e1
//   h' = h - (alpha/2) dE/dh(x', h) + sqrt(alpha) e2
// e1 (d draws) precedes e2 in the noise stream. In conditional mode the x
// update and its draws are skipped. Throws DivergenceError on a non-finite
// iterate.
ChainState sgld_step(const ChainState& state, const EnergyField& field, const SgldConfig& cfg,
                     Rng& rng);

// cfg.steps - init.step updates from `init`.
ChainState sample_chain(const ChainState& init, const EnergyField& field, const SgldConfig& cfg,
                        Rng& rng);

// Base prompt embedding of every class of `task`, ascending id, P = 1.
PromptBatch base_prompts(const ModelParams& params, const Vocabulary& vocab, const TaskSpec& task);

// Test-time multi-prompt generator. For class k and prompt j a chain starts
// at base_k + init_noise_std * N(0, I) and runs conditional on x with the
// other classes at their base embeddings; chain (k, j) uses noise stream
// stream_seed(seed, k * P + j).
PromptBatch sample_prompts_from_base(std::span<const double> x, const PromptBatch& base,
                                     const TaskSpec& task, std::size_t num_prompts,
                                     const SgldConfig& cfg, const SimConfig& sim,
                                     std::uint64_t seed, std::size_t workers = 1);

PromptBatch sample_prompt_batch(std::span<const double> x, const ModelParams& params,
                                const Vocabulary& vocab, const TaskSpec& task,
                                std::size_t num_prompts, const SgldConfig& cfg,
                                const SimConfig& sim, std::uint64_t seed, std::size_t workers = 1);

}  // namespace empl
