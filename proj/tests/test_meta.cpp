#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <numeric>

#include "empl/errors.hpp"
#include "empl/meta.hpp"
#include "empl/rng.hpp"
#include "test_util.hpp"

namespace empl {
namespace {

using testing::random_vec;

Vocabulary make_vocab(Rng& rng, std::size_t classes, std::size_t d_tok) {
  std::vector<VocabEntry> entries;
  for (std::size_t c = 0; c < classes; ++c) {
    entries.push_back({static_cast<ClassId>(c), "c" + std::to_string(c), random_vec(rng, d_tok)});
  }
  return Vocabulary(std::move(entries));
}

Vocabulary unit_vocab(std::size_t classes) {
  std::vector<VocabEntry> entries;
  for (std::size_t c = 0; c < classes; ++c) {
    Vec v(classes, 0.0);
    v[c] = 1.0;
    entries.push_back({static_cast<ClassId>(c), "c" + std::to_string(c), v});
  }
  return Vocabulary(std::move(entries));
}

// Gaussian clusters around scaled unit vectors in R^d_in.
Dataset clusters(Rng& rng, std::span<const ClassId> classes, std::size_t per_class, std::size_t d_in,
                 double radius, double std_dev) {
  Dataset out;
  for (ClassId c : classes) {
    for (std::size_t i = 0; i < per_class; ++i) {
      Vec x = random_vec(rng, d_in, std_dev);
      x[c % d_in] += radius;
      out.push_back({x, c});
    }
  }
  return out;
}

TrainConfig small_cfg(double lambda) {
  TrainConfig c;
  c.lambda = lambda;
  c.batch_size = 4;
  c.epochs = 1;
  c.tasks_per_epoch = 3;
  c.unseen_per_task = 1;
  c.num_prompts = 2;
  c.sgld.alpha = 1e-3;
  c.sgld.steps = 3;
  c.seed = 5;
  return c;
}

LabeledBatch batch_of(const Dataset& d, std::size_t n) {
  LabeledBatch b;
  b.inputs.assign(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(n));
  return b;
}

TEST(MakeTask, ForcedWhenVocabularyLeavesNoChoice) {
  Rng rng(1);
  const Vocabulary vocab = make_vocab(rng, 5, 2);
  const std::vector<ClassId> pool{4, 0, 2};
  for (int t = 0; t < 20; ++t) {
    Rng r(stream_seed(3, t));
    const TaskSpec task = make_task(vocab, pool, 2, r);
    EXPECT_EQ(task.observed, (std::vector<ClassId>{0, 2, 4}));
    EXPECT_EQ(task.unseen, (std::vector<ClassId>{1, 3}));
  }
}

TEST(MakeTask, SingleDrawFollowsDocumentedStream) {
  Rng rng(1);
  const Vocabulary vocab = make_vocab(rng, 8, 2);
  const std::vector<ClassId> pool{1, 5};
  const std::vector<ClassId> candidates{0, 2, 3, 4, 6, 7};
  for (std::uint64_t seed : {0ull, 1ull, 99ull, 123456789ull}) {
    Rng a(seed);
    Rng b(seed);
    EXPECT_EQ(make_task(vocab, pool, 1, a).unseen, (std::vector<ClassId>{candidates[b.below(6)]}));
  }
}

TEST(MakeTask, UnseenFrequenciesAreUniform) {
  Rng rng(1);
  const Vocabulary vocab = make_vocab(rng, 7, 2);
  const std::vector<ClassId> pool{0, 3};
  const std::size_t draws = 10000;
  const std::size_t k_unseen = 2;
  std::map<ClassId, std::size_t> count;
  for (std::size_t t = 0; t < draws; ++t) {
    Rng r(stream_seed(2024, t));
    for (ClassId c : make_task(vocab, pool, k_unseen, r).unseen) ++count[c];
  }
  ASSERT_EQ(count.size(), 5u);
  const double p = 2.0 / 5.0;
  const double mean = draws * p;
  const double sigma = std::sqrt(draws * p * (1.0 - p));
  double chi2 = 0.0;
  for (const auto& [c, n] : count) {
    EXPECT_LT(std::abs(static_cast<double>(n) - mean), 3.0 * sigma) << "class " << c;
    chi2 += std::pow(static_cast<double>(n) - mean, 2) / mean;
  }
  // 4 degrees of freedom, 0.999 quantile.
  EXPECT_LT(chi2, 18.47);
}

TEST(MakeTask, Errors) {
  Rng rng(1);
  const Vocabulary vocab = make_vocab(rng, 4, 2);
  const std::vector<ClassId> pool{0, 1, 2};
  EXPECT_THROW(make_task(vocab, pool, 2, rng), InvalidConfigError);
  EXPECT_THROW(make_task(vocab, pool, 0, rng), InvalidConfigError);
  const std::vector<ClassId> bad{0, 9};
  EXPECT_THROW(make_task(vocab, bad, 1, rng), UnknownClassError);
}

TEST(Ingestion, UnseenLabelsRejected) {
  const Dataset d{{Vec{1.0}, 0}, {Vec{2.0}, 3}};
  const std::vector<ClassId> pool{0, 1};
  EXPECT_THROW(check_labels_observed(d, pool), InvalidTaskError);
  Rng rng(2);
  const Vocabulary vocab = make_vocab(rng, 4, 2);
  const ModelParams p = init_params(1, ModelDims{1, 2, 2, 1}, 1.0, vocab);
  EXPECT_THROW(train(d, vocab, pool, p, small_cfg(0.1)), InvalidTaskError);
  LabeledBatch b{d};
  EXPECT_THROW(empl_loss(b, TaskSpec{{0, 1}, {2, 3}}, p, p, vocab, small_cfg(0.1), 1), InvalidTaskError);
}

struct Fixture {
  Vocabulary vocab;
  ModelParams params;
  ModelParams frozen;
  Dataset data;
  TaskSpec task;
};

// 4-class toy with 2 observed classes, nonzero biases and gain.
Fixture toy(std::uint64_t seed, bool gain = true) {
  Rng rng(seed);
  Fixture f;
  f.vocab = make_vocab(rng, 4, 3);
  const std::vector<ClassId> observed{0, 2};
  f.params = init_params(seed, ModelDims{3, 4, 3, 2, PoolMode::mean, gain}, 1.0, f.vocab);
  for (double& v : f.params.image_bias) v = 0.2 * rng.normal();
  for (double& v : f.params.pool_bias) v = 0.2 * rng.normal();
  for (double& v : f.params.extra) v = 1.0 + 0.1 * rng.normal();
  f.frozen = f.params;
  Vec flat = f.frozen.flatten();
  for (double& v : flat) v += 0.05 * rng.normal();
  f.frozen.assign_flat(flat);
  f.data = clusters(rng, observed, 3, 3, 2.0, 0.5);
  f.task = TaskSpec{{0, 2}, {1, 3}};
  return f;
}

TEST(EmplLoss, LambdaZeroIsBitwiseMultiPromptCe) {
  const Fixture f = toy(11);
  const LabeledBatch batch = batch_of(f.data, 5);
  const TrainConfig cfg0 = small_cfg(0.0);
  const EpisodeSamples samples = draw_samples(batch, f.task, f.frozen, f.vocab, small_cfg(0.1), 77);
  ASSERT_FALSE(samples.joint.empty());
  const EmplLoss full = empl_objective(batch, f.task, f.params, f.vocab, samples, small_cfg(0.1));
  const EmplLoss ablated = empl_objective(batch, f.task, f.params, f.vocab, samples, cfg0);
  EXPECT_EQ(ablated.loss, ablated.ce);
  EXPECT_EQ(ablated.ce, full.ce);
  EXPECT_NE(full.loss, full.ce);

  // Same prompt samples scored directly.
  const PromptBatch base = base_prompts(f.params, f.vocab, f.task);
  double ce = 0.0;
  const double w = 1.0 / 5.0;
  for (std::size_t i = 0; i < 5; ++i) {
    PromptBatch prompts;
    prompts.class_ids = base.class_ids;
    for (std::size_t k = 0; k < base.num_classes(); ++k) {
      prompts.prompts.emplace_back();
      for (const Vec& off : samples.ce_offsets[i][k]) {
        Vec h = base.prompts[k][0];
        axpy(1.0, off, h);
        prompts.prompts.back().push_back(h);
      }
    }
    ce += multi_prompt_ce(encode_image(f.params, batch.inputs[i].x_in), prompts, batch.inputs[i].label, cfg0.sim).loss * w;
  }
  EXPECT_EQ(ablated.loss, ce);
}

TEST(EmplLoss, LambdaZeroSkipsJointChains) {
  const Fixture f = toy(12);
  const EpisodeSamples s = draw_samples(batch_of(f.data, 3), f.task, f.frozen, f.vocab, small_cfg(0.0), 1);
  EXPECT_TRUE(s.joint.empty());
  EXPECT_EQ(s.ce_offsets.size(), 3u);
}

// Degenerate sampler and base prompts: the objective is single-template CE.
TEST(EmplLoss, DegenerateSamplerMatchesDirectCeBaseline) {
  const Fixture f = toy(13, false);
  const LabeledBatch batch = batch_of(f.data, 6);
  TrainConfig cfg = small_cfg(0.0);
  cfg.num_prompts = 1;
  cfg.sgld.alpha = 1e-300;
  cfg.sgld.init_noise_std = 0.0;
  for (CePrompts mode : {CePrompts::base, CePrompts::sampled}) {
    cfg.ce_prompts = mode;
    const EmplLoss r = empl_loss(batch, f.task, f.params, f.params, f.vocab, cfg, 3);
    double direct = 0.0;
    for (const auto& ex : batch.inputs) {
      const Vec x = encode_image(f.params, ex.x_in);
      double z = 0.0;
      double own = 0.0;
      for (ClassId c : f.task.all_classes()) {
        const double s = cosine_sim(x, encode_class(f.params, f.vocab, c)) / cfg.sim.gamma;
        z += std::exp(s);
        if (c == ex.label) own = s;
      }
      direct += (std::log(z) - own) / 6.0;
    }
    EXPECT_NEAR(r.loss, direct, 1e-10);
  }
}

TEST(EmplLoss, SingleObservedClassEpisodeIsWellDefined) {
  Rng rng(3);
  const Vocabulary vocab = make_vocab(rng, 4, 2);
  const ModelParams p = init_params(3, ModelDims{2, 3, 2, 2}, 1.0, vocab);
  LabeledBatch b{{{Vec{1.0, 0.5}, 2}, {Vec{-0.3, 0.8}, 2}}};
  const EmplLoss r = empl_loss(b, TaskSpec{{2}, {0, 1, 3}}, p, p, vocab, small_cfg(0.1), 9);
  EXPECT_TRUE(std::isfinite(r.loss));
  EXPECT_GT(r.ce, 0.0);
  EXPECT_THROW(empl_loss(b, TaskSpec{{2}, {}}, p, p, vocab, small_cfg(0.1), 9), InvalidTaskError);
}

TEST(EmplLoss, GradientPassesFiniteDifferenceCheck) {
  for (std::uint64_t seed = 20; seed < 26; ++seed) {
    const Fixture f = toy(seed);
    const LabeledBatch batch = batch_of(f.data, 6);
    const TrainConfig cfg = small_cfg(0.5);
    const EpisodeSamples samples = draw_samples(batch, f.task, f.frozen, f.vocab, cfg, seed);
    auto loss = [&](std::span<const double> flat) {
      ModelParams p = f.params;
      p.assign_flat(flat);
      return empl_objective(batch, f.task, p, f.vocab, samples, cfg).loss;
    };
    auto grad = [&](std::span<const double> flat) {
      ModelParams p = f.params;
      p.assign_flat(flat);
      return empl_objective(batch, f.task, p, f.vocab, samples, cfg).grads.flatten();
    };
    const GradReport r = grad_check(loss, grad, f.params.flatten(), 1e-3);
    EXPECT_LT(r.max_rel_error, 1e-4) << "seed " << seed << " coordinate " << r.worst_coordinate;
  }
}

// Samples depend on the frozen copy only, and the gradient treats them as
// constants: editing them changes the loss, never the path the gradient takes.
TEST(EmplLoss, SamplesAreConstantsOfTheObjective) {
  const Fixture f = toy(31);
  const LabeledBatch batch = batch_of(f.data, 4);
  const TrainConfig cfg = small_cfg(0.3);
  const EpisodeSamples s1 = draw_samples(batch, f.task, f.frozen, f.vocab, cfg, 8);
  ModelParams other = f.params;
  for (double& v : other.pool_bias) v += 1.0;
  const EmplLoss a = empl_loss(batch, f.task, f.params, f.frozen, f.vocab, cfg, 8);
  const EmplLoss b = empl_objective(batch, f.task, f.params, f.vocab, s1, cfg);
  EXPECT_EQ(a.loss, b.loss);
  EXPECT_EQ(a.grads, b.grads);
  // Params that differ from the frozen copy leave the samples untouched.
  const EmplLoss c = empl_loss(batch, f.task, other, f.frozen, f.vocab, cfg, 8);
  const EmplLoss d = empl_objective(batch, f.task, other, f.vocab, s1, cfg);
  EXPECT_EQ(c.loss, d.loss);

  EpisodeSamples tainted = s1;
  for (auto& j : tainted.joint) {
    for (double& v : j.dx) v += 0.3;
    for (double& v : j.dh) v -= 0.2;
  }
  for (auto& per_example : tainted.ce_offsets) {
    for (auto& per_class : per_example) {
      for (auto& off : per_class) off[0] += 0.25;
    }
  }
  const EmplLoss t = empl_objective(batch, f.task, f.params, f.vocab, tainted, cfg);
  EXPECT_NE(t.loss, b.loss);
  EXPECT_EQ(t.grads.flat_size(), f.params.flat_size());

  // The gradient is exactly the derivative in params with samples held fixed.
  auto loss = [&](std::span<const double> flat) {
    ModelParams p = f.params;
    p.assign_flat(flat);
    return empl_objective(batch, f.task, p, f.vocab, tainted, cfg).loss;
  };
  auto grad = [&](std::span<const double>) { return t.grads.flatten(); };
  EXPECT_LT(grad_check(loss, grad, f.params.flatten(), 1e-3).max_rel_error, 1e-4);
}

TEST(DrawSamples, WorkerCountDoesNotChangeSamples) {
  const Fixture f = toy(40);
  const LabeledBatch batch = batch_of(f.data, 5);
  TrainConfig cfg = small_cfg(0.1);
  const EpisodeSamples a = draw_samples(batch, f.task, f.frozen, f.vocab, cfg, 3);
  cfg.workers = 3;
  const EpisodeSamples b = draw_samples(batch, f.task, f.frozen, f.vocab, cfg, 3);
  EXPECT_EQ(a.ce_offsets, b.ce_offsets);
  ASSERT_EQ(a.joint.size(), b.joint.size());
  for (std::size_t i = 0; i < a.joint.size(); ++i) {
    EXPECT_EQ(a.joint[i].dx, b.joint[i].dx);
    EXPECT_EQ(a.joint[i].dh, b.joint[i].dh);
  }
}

TEST(Train, ZeroLearningRateLeavesParamsUnchanged) {
  const Fixture f = toy(50);
  TrainConfig cfg = small_cfg(0.1);
  cfg.lr = 0.0;
  cfg.epochs = 3;
  const std::vector<ClassId> pool{0, 2};
  const TrainResult r = train(f.data, f.vocab, pool, f.params, cfg);
  EXPECT_EQ(r.params, f.params);
  EXPECT_EQ(r.history.size(), 9u);
}

TEST(Train, DeterministicHistoryAndFrozenUnseenWords) {
  const Fixture f = toy(51);
  TrainConfig cfg = small_cfg(0.1);
  cfg.epochs = 2;
  cfg.momentum = 0.5;
  const std::vector<ClassId> pool{0, 2};
  const TrainResult a = train(f.data, f.vocab, pool, f.params, cfg);
  const TrainResult b = train(f.data, f.vocab, pool, f.params, cfg);
  EXPECT_EQ(a.params, b.params);
  ASSERT_EQ(a.history.size(), b.history.size());
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    EXPECT_EQ(a.history[i].loss, b.history[i].loss);
    EXPECT_EQ(a.history[i].grad_norm, b.history[i].grad_norm);
    EXPECT_EQ(a.history[i].unseen, b.history[i].unseen);
    EXPECT_EQ(a.history[i].step, i);
  }
  for (ClassId c : {1u, 3u}) {
    const auto before = f.params.word_vecs.row(c);
    const auto after = a.params.word_vecs.row(c);
    EXPECT_TRUE(std::equal(before.begin(), before.end(), after.begin()));
  }
  EXPECT_NE(a.params.word_vecs.row(0)[0], f.params.word_vecs.row(0)[0]);
}

TEST(Train, DivergenceCarriesLastGoodParams) {
  const Fixture f = toy(52);
  TrainConfig cfg = small_cfg(0.1);
  cfg.lr = 1e305;
  cfg.epochs = 4;
  const std::vector<ClassId> pool{0, 2};
  try {
    train(f.data, f.vocab, pool, f.params, cfg);
    FAIL() << "expected divergence";
  } catch (const TrainingDiverged& e) {
    EXPECT_GE(e.step(), 1u);
    EXPECT_TRUE(all_finite(e.last_good().flatten()));
    EXPECT_EQ(e.history().size(), e.step());
  } catch (const DivergenceError& e) {
    // A chain can blow up first; that is still a reported divergence.
    SUCCEED();
  }
}

TEST(Train, SeparableTwoClassReachesNinetyNinePercent) {
  Rng rng(60);
  const Vocabulary vocab = unit_vocab(3);
  const std::vector<ClassId> pool{0, 1};
  const Dataset data = clusters(rng, pool, 100, 2, 3.0, 0.4);
  const ModelParams init = init_params(60, ModelDims{2, 3, 3, 4}, 1.0, vocab);
  TrainConfig cfg = small_cfg(0.0);
  cfg.batch_size = 32;
  cfg.epochs = 20;
  cfg.tasks_per_epoch = 10;
  cfg.lr = 0.05;
  const TrainResult r = train(data, vocab, pool, init, cfg);
  ASSERT_EQ(r.history.size(), 200u);
  // Training accuracy between the two observed classes.
  std::size_t correct = 0;
  for (const auto& ex : data) {
    const Vec x = encode_image(r.params, ex.x_in);
    const double s0 = cosine_sim(x, encode_class(r.params, vocab, 0));
    const double s1 = cosine_sim(x, encode_class(r.params, vocab, 1));
    correct += (s0 >= s1 ? 0u : 1u) == ex.label ? 1 : 0;
  }
  EXPECT_GE(static_cast<double>(correct) / data.size(), 0.99);
}

TEST(Evaluate, SinglePromptDegenerateSamplerMatchesBasePrompts) {
  const Fixture f = toy(70, false);
  SgldConfig sgld;
  sgld.alpha = 1e-300;
  sgld.steps = 1;
  sgld.init_noise_std = 0.0;
  const SimConfig sim;
  Dataset eval = f.data;
  eval.push_back({Vec{0.1, 0.2, 0.3}, 1});
  const EvalResult r = evaluate(f.params, f.vocab, eval, f.task, 1, sgld, sim, 4);
  const PromptBatch base = base_prompts(f.params, f.vocab, f.task);
  for (std::size_t i = 0; i < eval.size(); ++i) {
    const Vec x = encode_image(f.params, eval[i].x_in);
    EXPECT_EQ(r.predictions[i], predict_multi(x, base, sim).predicted_class());
  }
}

TEST(Evaluate, PerfectlySeparatedClustersScoreOne) {
  const Vocabulary vocab = unit_vocab(3);
  ModelParams p = init_params(1, ModelDims{3, 3, 3, 1}, 0.0, vocab);
  p.image_map = Matrix::identity(3);
  p.pool_map = Matrix::identity(3);
  Rng rng(71);
  const std::vector<ClassId> all{0, 1, 2};
  const Dataset data = clusters(rng, all, 20, 3, 5.0, 0.3);
  SgldConfig sgld;
  sgld.alpha = 1e-4;
  sgld.steps = 5;
  const EvalResult r = evaluate(p, vocab, data, TaskSpec{{0, 1}, {2}}, 8, sgld, SimConfig{}, 2, 2);
  EXPECT_EQ(r.overall_accuracy, 1.0);
  for (const auto& [c, acc] : r.per_class_accuracy) EXPECT_EQ(acc, 1.0) << c;
  const std::vector<ClassId> unseen{2};
  EXPECT_EQ(subset_accuracy(data, r, unseen), 1.0);
}

TEST(Evaluate, EmptySetAndUnknownLabels) {
  const Fixture f = toy(72);
  SgldConfig sgld;
  sgld.alpha = 1e-3;
  EXPECT_THROW(evaluate(f.params, f.vocab, Dataset{}, f.task, 2, sgld, SimConfig{}, 1), InvalidConfigError);
  const Dataset bad{{Vec{1, 2, 3}, 7}};
  EXPECT_THROW(evaluate(f.params, f.vocab, bad, f.task, 2, sgld, SimConfig{}, 1), UnknownClassError);
}

TEST(Evaluate, WorkerCountDoesNotChangePredictions) {
  const Fixture f = toy(73);
  SgldConfig sgld;
  sgld.alpha = 1e-3;
  sgld.steps = 5;
  const EvalResult a = evaluate(f.params, f.vocab, f.data, f.task, 4, sgld, SimConfig{}, 9, 1);
  const EvalResult b = evaluate(f.params, f.vocab, f.data, f.task, 4, sgld, SimConfig{}, 9, 3);
  EXPECT_EQ(a.predictions, b.predictions);
}

TEST(TrainConfig, Validation) {
  TrainConfig c = small_cfg(0.1);
  EXPECT_NO_THROW(c.validate());
  c.lambda = -1.0;
  EXPECT_THROW(c.validate(), InvalidConfigError);
  c = small_cfg(0.1);
  c.momentum = 1.0;
  EXPECT_THROW(c.validate(), InvalidConfigError);
  c = small_cfg(0.1);
  c.unseen_per_task = 0;
  EXPECT_THROW(c.validate(), InvalidConfigError);
}

}  // namespace
}  // namespace empl
