#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "empl/contrastive.hpp"
#include "empl/encoders.hpp"
#include "empl/energy.hpp"
#include "empl/errors.hpp"
#include "empl/rng.hpp"
#include "empl/task.hpp"

namespace empl {

// Which prompts the cross-entropy term scores each image against.
enum class CePrompts {
  sampled,  // P prompts per class drawn under the frozen params, conditional on the image
  base,     // the single base prompt per class, no sampling
};

struct TrainConfig {
  double lambda = 0.1;
  double lr = 0.01;
  double momentum = 0.0;
  std::size_t batch_size = 32;
  std::size_t epochs = 1;
  std::size_t tasks_per_epoch = 1;
  std::size_t unseen_per_task = 2;
  std::size_t num_prompts = 8;
  CePrompts ce_prompts = CePrompts::sampled;
  SgldConfig sgld;
  SimConfig sim;
  std::uint64_t seed = 0;
  std::size_t workers = 1;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct LabeledExample {
  Vec x_in;
  ClassId label = 0;

  friend bool operator==(const LabeledExample&, const LabeledExample&) = default;
};

using Dataset = std::vector<LabeledExample>;

struct LabeledBatch {
  std::vector<LabeledExample> inputs;
};

// Throws InvalidTaskError if any label lies outside the observed pool.
void check_labels_observed(std::span<const LabeledExample> examples,
                           std::span<const ClassId> observed_pool);

// observed = observed_pool (sorted); unseen = k_unseen ids drawn without
// replacement from the vocabulary minus the pool, by a partial Fisher-Yates
// shuffle of the ascending candidate list driven by rng.below().
TaskSpec make_task(const Vocabulary& vocab, std::span<const ClassId> observed_pool,
                   std::size_t k_unseen, Rng& rng);

// Langevin samples drawn under the frozen parameters. Stored as offsets from
// the frozen encodings, so under parameters phi a sample reads as
// f_phi(x) + dx and h_phi(c) + dh. They are constants of the objective.
struct EpisodeSamples {
  // ce_offsets[i][k][j]: prompt j of task class k for batch example i.
  std::vector<std::vector<std::vector<Vec>>> ce_offsets;
  struct Joint {
    std::size_t example = 0;
    std::size_t class_index = 0;  // into task.all_classes()
    Vec dx;
    Vec dh;
  };
  std::vector<Joint> joint;
};

// Last joint-chain offsets per (batch slot, class id) for persistent chains.
using PersistentChains = std::map<std::pair<std::size_t, ClassId>, std::pair<Vec, Vec>>;

// Draws both sample sets for one episode under `frozen`. Conditional prompt
// chains for example i use stream_seed(seed, 2i); the joint chain of example
// i and class k uses stream_seed(stream_seed(seed, 2i + 1), k). Joint chains
// are skipped when lambda == 0. When `persistent` is given and
// cfg.sgld.persistent is set, joint chains resume from the stored offsets
// and the store is updated.
EpisodeSamples draw_samples(const LabeledBatch& batch, const TaskSpec& task,
                            const ModelParams& frozen, const Vocabulary& vocab,
                            const TrainConfig& cfg, std::uint64_t seed,
                            PersistentChains* persistent = nullptr);

struct EmplLoss {
  double loss = 0.0;
  double ce = 0.0;           // mean cross-entropy over the batch
  double mean_energy = 0.0;  // mean of E over joint samples (0 if none)
  ModelParams grads;
};

// EMPL objective with fixed samples:
//   loss = mean_i CE_i - lambda * mean_s E(f(x_s) + dx_s, H with h(c_s) + dh_s).
// Exact gradient with respect to every entry of params.
EmplLoss empl_objective(const LabeledBatch& batch, const TaskSpec& task, const ModelParams& params,
                        const Vocabulary& vocab, const EpisodeSamples& samples,
                        const TrainConfig& cfg);

// draw_samples under `frozen` followed by empl_objective under `params`.
EmplLoss empl_loss(const LabeledBatch& batch, const TaskSpec& task, const ModelParams& params,
                   const ModelParams& frozen, const Vocabulary& vocab, const TrainConfig& cfg,
                   std::uint64_t seed);

struct HistoryRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double loss = 0.0;
  double ce = 0.0;
  double mean_energy = 0.0;
  double grad_norm = 0.0;
  std::vector<ClassId> unseen;
};

struct TrainResult {
  ModelParams params;
  std::vector<HistoryRecord> history;
};

// Raised when a step's chains, loss, gradient or update turn non-finite;
// carries the parameters from before that step.
class TrainingDiverged : public DivergenceError {
 public:
  TrainingDiverged(std::size_t step, ModelParams last_good, std::vector<HistoryRecord> history)
      : DivergenceError("training produced a non-finite loss", step),
        last_good_(std::move(last_good)),
        history_(std::move(history)) {}
  const ModelParams& last_good() const noexcept { return last_good_; }
  const std::vector<HistoryRecord>& history() const noexcept { return history_; }

 private:
  ModelParams last_good_;
  std::vector<HistoryRecord> history_;
};

// epochs * tasks_per_epoch gradient steps. Each step snapshots the frozen
// copy, draws a task and a batch (without replacement) from
// Rng(stream_seed(seed, step)), evaluates empl_loss and applies
// v <- momentum v + g, params <- params - lr v. Word vectors of the step's
// unseen classes are held fixed.
TrainResult train(const Dataset& dataset, const Vocabulary& vocab,
                  std::span<const ClassId> observed_pool, ModelParams init, const TrainConfig& cfg);

struct EvalResult {
  std::map<ClassId, double> per_class_accuracy;  // fraction in [0, 1]
  double overall_accuracy = 0.0;
  std::vector<ClassId> predictions;
};

// Multi-prompt evaluation over the classes of `task`. Image i is scored
// against sample_prompt_batch(..., stream_seed(seed, i)); the arg max wins,
// ties to the lowest class id.
EvalResult evaluate(const ModelParams& params, const Vocabulary& vocab, const Dataset& eval_set,
                    const TaskSpec& task, std::size_t num_prompts, const SgldConfig& sgld,
                    const SimConfig& sim, std::uint64_t seed, std::size_t workers = 1);

// Mean accuracy (fraction) over the images whose label is in `classes`.
double subset_accuracy(const Dataset& eval_set, const EvalResult& result,
                       std::span<const ClassId> classes);

}  // namespace empl
