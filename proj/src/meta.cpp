#include "empl/meta.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "empl/parallel.hpp"

namespace empl {

void TrainConfig::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InvalidConfigError("lambda must be >= 0");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw InvalidConfigError("learning rate must be >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidConfigError("momentum must lie in [0, 1)");
  if (batch_size < 1) throw InvalidConfigError("batch_size must be at least 1");
  if (unseen_per_task < 1) throw InvalidConfigError("unseen_per_task must be at least 1");
  if (num_prompts < 1) throw InvalidConfigError("num_prompts must be at least 1");
  sgld.validate();
  sim.validate();
}

void check_labels_observed(std::span<const LabeledExample> examples,
                           std::span<const ClassId> observed_pool) {
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const ClassId y = examples[i].label;
    if (std::find(observed_pool.begin(), observed_pool.end(), y) == observed_pool.end()) {
      throw InvalidTaskError("example " + std::to_string(i) + " is labelled with class " +
                             std::to_string(y) + ", which is not an observed class");
    }
  }
}

TaskSpec make_task(const Vocabulary& vocab, std::span<const ClassId> observed_pool,
                   std::size_t k_unseen, Rng& rng) {
  if (k_unseen < 1) throw InvalidConfigError("a task needs at least one unseen class");
  TaskSpec task;
  task.observed.assign(observed_pool.begin(), observed_pool.end());
  std::sort(task.observed.begin(), task.observed.end());
  for (ClassId id : task.observed) {
    if (!vocab.contains(id)) throw UnknownClassError(id);
  }
  std::vector<ClassId> candidates;
  for (const auto& e : vocab.entries()) {
    if (!std::binary_search(task.observed.begin(), task.observed.end(), e.class_id)) {
      candidates.push_back(e.class_id);
    }
  }
  if (candidates.size() < k_unseen) {
    throw InvalidConfigError("vocabulary has " + std::to_string(candidates.size()) +
                             " classes outside the observed pool, task needs " +
                             std::to_string(k_unseen));
  }
  for (std::size_t i = 0; i < k_unseen; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(candidates.size() - i));
    std::swap(candidates[i], candidates[j]);
  }
  task.unseen.assign(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(k_unseen));
  std::sort(task.unseen.begin(), task.unseen.end());
  task.validate();
  return task;
}

namespace {

void check_batch(const LabeledBatch& batch, const TaskSpec& task) {
  task.validate();
  if (batch.inputs.empty()) throw InvalidConfigError("empty training batch");
  check_labels_observed(batch.inputs, task.observed);
}

Vec add(std::span<const double> a, std::span<const double> b) {
  Vec out(a.begin(), a.end());
  axpy(1.0, b, out);
  return out;
}

}  // namespace

EpisodeSamples draw_samples(const LabeledBatch& batch, const TaskSpec& task,
                            const ModelParams& frozen, const Vocabulary& vocab,
                            const TrainConfig& cfg, std::uint64_t seed,
                            PersistentChains* persistent) {
  check_batch(batch, task);
  const PromptBatch base = base_prompts(frozen, vocab, task);
  const std::size_t n = batch.inputs.size();
  const std::size_t k_classes = base.num_classes();

  std::vector<Vec> features(n);
  for (std::size_t i = 0; i < n; ++i) features[i] = encode_image(frozen, batch.inputs[i].x_in);

  EpisodeSamples out;
  if (cfg.ce_prompts == CePrompts::sampled) {
    out.ce_offsets.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      PromptBatch sampled = sample_prompts_from_base(features[i], base, task, cfg.num_prompts,
                                                     cfg.sgld, cfg.sim, stream_seed(seed, 2 * i),
                                                     cfg.workers);
      auto& per_example = out.ce_offsets[i];
      per_example.resize(k_classes);
      for (std::size_t k = 0; k < k_classes; ++k) {
        for (auto& h : sampled.prompts[k]) per_example[k].push_back(subtract(h, base.prompts[k][0]));
      }
    }
  }

  if (cfg.lambda == 0.0) return out;

  SgldConfig joint_cfg = cfg.sgld;
  joint_cfg.mode = SgldMode::joint;
  const bool resume = persistent != nullptr && cfg.sgld.persistent;
  out.joint.resize(n * k_classes);
  parallel_for(n * k_classes, cfg.workers, [&](std::size_t c) {
    const std::size_t i = c / k_classes;
    const std::size_t k = c % k_classes;
    ChainState init;
    init.stream = stream_seed(stream_seed(seed, 2 * i + 1), k);
    Rng rng(init.stream);
    init.x = features[i];
    init.h = base.prompts[k][0];
    const auto stored = resume ? persistent->find({i, base.class_ids[k]}) : PersistentChains::iterator{};
    if (resume && stored != persistent->end()) {
      axpy(1.0, stored->second.first, init.x);
      axpy(1.0, stored->second.second, init.h);
    } else {
      for (double& v : init.x) v += cfg.sgld.init_noise_std * rng.normal();
      for (double& v : init.h) v += cfg.sgld.init_noise_std * rng.normal();
    }
    const TaskEnergy field(base, k, 0, task, cfg.sim);
    const ChainState last = sample_chain(init, field, joint_cfg, rng);
    auto& s = out.joint[c];
    s.example = i;
    s.class_index = k;
    s.dx = subtract(last.x, features[i]);
    s.dh = subtract(last.h, base.prompts[k][0]);
  });
  if (resume) {
    for (const auto& s : out.joint) (*persistent)[{s.example, base.class_ids[s.class_index]}] = {s.dx, s.dh};
  }
  return out;
}

EmplLoss empl_objective(const LabeledBatch& batch, const TaskSpec& task, const ModelParams& params,
                        const Vocabulary& vocab, const EpisodeSamples& samples,
                        const TrainConfig& cfg) {
  check_batch(batch, task);
  const PromptBatch base = base_prompts(params, vocab, task);
  const std::size_t n = batch.inputs.size();
  const std::size_t k_classes = base.num_classes();
  const std::size_t d = params.image_map.rows;
  const bool sampled = cfg.ce_prompts == CePrompts::sampled;
  if (sampled && samples.ce_offsets.size() != n) {
    throw InvalidConfigError("episode samples do not match the batch");
  }

  std::vector<Vec> features(n);
  for (std::size_t i = 0; i < n; ++i) features[i] = encode_image(params, batch.inputs[i].x_in);

  std::vector<Vec> grad_f(n, Vec(d, 0.0));
  std::vector<Vec> grad_h(k_classes, Vec(d, 0.0));
  EmplLoss out;

  const double ce_weight = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    PromptBatch prompts;
    if (sampled) {
      prompts.class_ids = base.class_ids;
      prompts.prompts.resize(k_classes);
      for (std::size_t k = 0; k < k_classes; ++k) {
        for (const auto& offset : samples.ce_offsets[i][k]) {
          prompts.prompts[k].push_back(add(base.prompts[k][0], offset));
        }
      }
    } else {
      prompts = base;
    }
    const MultiPromptCe ce = multi_prompt_ce(features[i], prompts, batch.inputs[i].label, cfg.sim);
    out.ce += ce.loss * ce_weight;
    axpy(ce_weight, ce.grads.grad_f, grad_f[i]);
    for (std::size_t k = 0; k < k_classes; ++k) {
      for (const auto& g : ce.grads.grad_prompts[k]) axpy(ce_weight, g, grad_h[k]);
    }
  }

  if (!samples.joint.empty()) {
    const double e_weight = 1.0 / static_cast<double>(samples.joint.size());
    for (const auto& s : samples.joint) {
      if (s.example >= n || s.class_index >= k_classes) {
        throw InvalidConfigError("joint sample refers outside the batch or task");
      }
      PromptBatch prompts = base;
      prompts.prompts[s.class_index][0] = add(base.prompts[s.class_index][0], s.dh);
      const Vec x = add(features[s.example], s.dx);
      const EnergyGrads eg = energy_grads(x, prompts, task, cfg.sim);
      out.mean_energy += eg.value * e_weight;
      const double w = -cfg.lambda * e_weight;
      axpy(w, eg.grad_x, grad_f[s.example]);
      for (std::size_t k = 0; k < k_classes; ++k) axpy(w, eg.grad_prompts[k][0], grad_h[k]);
    }
  }
  out.loss = out.ce - cfg.lambda * out.mean_energy;

  EmbeddingGrads upstream;
  for (std::size_t i = 0; i < n; ++i) upstream.images.push_back({batch.inputs[i].x_in, std::move(grad_f[i])});
  for (std::size_t k = 0; k < k_classes; ++k) upstream.prompts.push_back({base.class_ids[k], std::move(grad_h[k])});
  out.grads = param_grads(params, upstream);
  return out;
}

EmplLoss empl_loss(const LabeledBatch& batch, const TaskSpec& task, const ModelParams& params,
                   const ModelParams& frozen, const Vocabulary& vocab, const TrainConfig& cfg,
                   std::uint64_t seed) {
  const EpisodeSamples samples = draw_samples(batch, task, frozen, vocab, cfg, seed);
  return empl_objective(batch, task, params, vocab, samples, cfg);
}

TrainResult train(const Dataset& dataset, const Vocabulary& vocab,
                  std::span<const ClassId> observed_pool, ModelParams init, const TrainConfig& cfg) {
  cfg.validate();
  init.validate();
  if (dataset.empty()) throw InvalidConfigError("training set is empty");
  check_labels_observed(dataset, observed_pool);

  TrainResult result;
  result.params = std::move(init);
  ModelParams& params = result.params;
  Vec velocity(params.flat_size(), 0.0);

  // Class tokens outside the observed pool are never updated.
  std::vector<bool> frozen_coord(params.flat_size(), false);
  {
    ModelParams mask = params.zeros_like();
    for (std::size_t c = 0; c < mask.word_vecs.rows; ++c) {
      if (std::find(observed_pool.begin(), observed_pool.end(), static_cast<ClassId>(c)) == observed_pool.end()) {
        for (double& v : mask.word_vecs.row(c)) v = 1.0;
      }
    }
    const Vec flat = mask.flatten();
    for (std::size_t i = 0; i < flat.size(); ++i) frozen_coord[i] = flat[i] != 0.0;
  }

  PersistentChains chains;
  const std::size_t total_steps = cfg.epochs * cfg.tasks_per_epoch;
  const std::size_t batch_size = std::min(cfg.batch_size, dataset.size());
  std::vector<std::size_t> order(dataset.size());

  for (std::size_t step = 0; step < total_steps; ++step) {
    const ModelParams frozen = params;
    Rng rng(stream_seed(cfg.seed, step));
    const TaskSpec task = make_task(vocab, observed_pool, cfg.unseen_per_task, rng);

    std::iota(order.begin(), order.end(), std::size_t{0});
    LabeledBatch batch;
    for (std::size_t i = 0; i < batch_size; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(order.size() - i));
      std::swap(order[i], order[j]);
      batch.inputs.push_back(dataset[order[i]]);
    }

    EmplLoss step_loss;
    try {
      const EpisodeSamples samples = draw_samples(batch, task, frozen, vocab, cfg, rng.next(), &chains);
      step_loss = empl_objective(batch, task, params, vocab, samples, cfg);
    } catch (const DivergenceError&) {
      throw TrainingDiverged(step, frozen, result.history);
    }

    Vec grad = step_loss.grads.flatten();
    for (std::size_t i = 0; i < grad.size(); ++i) {
      if (frozen_coord[i]) grad[i] = 0.0;
    }
    if (!std::isfinite(step_loss.loss) || !all_finite(grad)) {
      throw TrainingDiverged(step, frozen, result.history);
    }

    HistoryRecord rec;
    rec.step = step;
    rec.epoch = step / std::max<std::size_t>(1, cfg.tasks_per_epoch);
    rec.loss = step_loss.loss;
    rec.ce = step_loss.ce;
    rec.mean_energy = step_loss.mean_energy;
    rec.grad_norm = norm(grad);
    rec.unseen = task.unseen;
    result.history.push_back(std::move(rec));

    Vec flat = params.flatten();
    for (std::size_t i = 0; i < flat.size(); ++i) {
      velocity[i] = cfg.momentum * velocity[i] + grad[i];
      flat[i] -= cfg.lr * velocity[i];
    }
    if (!all_finite(flat)) throw TrainingDiverged(step, frozen, result.history);
    params.assign_flat(flat);
  }
  return result;
}

EvalResult evaluate(const ModelParams& params, const Vocabulary& vocab, const Dataset& eval_set,
                    const TaskSpec& task, std::size_t num_prompts, const SgldConfig& sgld,
                    const SimConfig& sim, std::uint64_t seed, std::size_t workers) {
  if (eval_set.empty()) throw InvalidConfigError("evaluation set is empty");
  task.validate();
  const auto classes = task.all_classes();
  for (const auto& ex : eval_set) {
    if (!std::binary_search(classes.begin(), classes.end(), ex.label)) throw UnknownClassError(ex.label);
  }
  const PromptBatch base = base_prompts(params, vocab, task);

  EvalResult out;
  out.predictions.resize(eval_set.size());
  parallel_for(eval_set.size(), workers, [&](std::size_t i) {
    const Vec f = encode_image(params, eval_set[i].x_in);
    const PromptBatch prompts =
        sample_prompts_from_base(f, base, task, num_prompts, sgld, sim, stream_seed(seed, i), 1);
    out.predictions[i] = predict_multi(f, prompts, sim).predicted_class();
  });

  std::map<ClassId, std::pair<std::size_t, std::size_t>> tally;  // correct, total
  std::size_t correct = 0;
  for (std::size_t i = 0; i < eval_set.size(); ++i) {
    auto& t = tally[eval_set[i].label];
    ++t.second;
    if (out.predictions[i] == eval_set[i].label) {
      ++t.first;
      ++correct;
    }
  }
  for (const auto& [id, t] : tally) {
    out.per_class_accuracy[id] = static_cast<double>(t.first) / static_cast<double>(t.second);
  }
  out.overall_accuracy = static_cast<double>(correct) / static_cast<double>(eval_set.size());
  return out;
}

double subset_accuracy(const Dataset& eval_set, const EvalResult& result,
                       std::span<const ClassId> classes) {
  std::size_t total = 0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < eval_set.size(); ++i) {
    if (std::find(classes.begin(), classes.end(), eval_set[i].label) == classes.end()) continue;
    ++total;
    if (result.predictions[i] == eval_set[i].label) ++correct;
  }
  if (total == 0) return 0.0;
  return static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace empl
