#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <numeric>

#include "empl/contrastive.hpp"
#include "empl/errors.hpp"
#include "empl/rng.hpp"
#include "test_util.hpp"

namespace empl {
namespace {

using testing::random_vec;

std::map<ClassId, Vec> random_classes(Rng& rng, std::size_t k, std::size_t d) {
  std::map<ClassId, Vec> out;
  for (std::size_t c = 0; c < k; ++c) out[static_cast<ClassId>(3 * c + 1)] = random_vec(rng, d);
  return out;
}

PromptBatch random_batch(Rng& rng, std::size_t k, std::size_t p, std::size_t d) {
  PromptBatch b;
  for (std::size_t c = 0; c < k; ++c) {
    b.class_ids.push_back(static_cast<ClassId>(c));
    b.prompts.emplace_back();
    for (std::size_t j = 0; j < p; ++j) b.prompts.back().push_back(random_vec(rng, d));
  }
  return b;
}

SimConfig random_sim(Rng& rng) {
  SimConfig s;
  s.metric = rng.below(2) == 0 ? Metric::cosine : Metric::neg_euclidean;
  s.aggregate = rng.below(2) == 0 ? Aggregate::mean : Aggregate::log_sum_exp;
  s.gamma = 0.05 + rng.uniform();
  return s;
}

double sum(std::span<const double> v) { return std::accumulate(v.begin(), v.end(), 0.0); }

TEST(PredictSingle, EquidistantGivesUniform) {
  const std::map<ClassId, Vec> h{{0, {1, 0}}, {1, {0, 1}}, {2, {-1, 0}}, {3, {0, -1}}};
  for (Metric m : {Metric::cosine, Metric::neg_euclidean}) {
    const PredictionDist p = predict_single(Vec{0.0, 0.0}, {{0, {1, 0}}, {1, {-1, 0}}},
                                            SimConfig{Metric::neg_euclidean, Aggregate::mean, 0.07});
    EXPECT_DOUBLE_EQ(p.probs[0], 0.5);
    const PredictionDist q = predict_single(Vec{1.0, 1.0}, {{0, {1, 0}}, {1, {0, 1}}}, SimConfig{m});
    EXPECT_NEAR(q.probs[0], 0.5, 1e-15);
  }
}

TEST(PredictSingle, LowTemperatureConcentratesOnExactMatch) {
  const std::map<ClassId, Vec> h{{0, {1, 0, 0}}, {1, {0, 1, 0}}, {2, {0.5, 0.5, 0.7}}};
  const PredictionDist p = predict_single(h.at(2), h, SimConfig{Metric::cosine, Aggregate::mean, 1e-3});
  EXPECT_GT(p.probs[2], 1.0 - 1e-12);
  EXPECT_EQ(p.predicted_class(), 2u);
}

TEST(PredictSingle, HandComputedThreeClasses) {
  const Vec f{1.0, 2.0};
  const std::map<ClassId, Vec> h{{0, {1, 0}}, {1, {0, 1}}, {2, {-1, 1}}};
  const double gamma = 0.5;
  const double s0 = 1.0 / std::sqrt(5.0);
  const double s1 = 2.0 / std::sqrt(5.0);
  const double s2 = 1.0 / std::sqrt(10.0);
  const double z = std::exp(s0 / gamma) + std::exp(s1 / gamma) + std::exp(s2 / gamma);
  const PredictionDist p = predict_single(f, h, SimConfig{Metric::cosine, Aggregate::mean, gamma});
  EXPECT_NEAR(p.probs[0], std::exp(s0 / gamma) / z, 1e-15);
  EXPECT_NEAR(p.probs[1], std::exp(s1 / gamma) / z, 1e-15);
  EXPECT_NEAR(p.probs[2], std::exp(s2 / gamma) / z, 1e-15);
  EXPECT_EQ(p.class_ids, (std::vector<ClassId>{0, 1, 2}));
  EXPECT_EQ(p.gamma, gamma);
}

TEST(PredictSingle, Errors) {
  EXPECT_THROW(predict_single(Vec{1, 0}, {{0, {1, 0}}}, SimConfig{}), InvalidConfigError);
  EXPECT_THROW(predict_single(Vec{1, 0}, {{0, {1, 0}}, {1, {0, 0}}}, SimConfig{}), DegenerateInputError);
  EXPECT_THROW(predict_single(Vec{0, 0}, {{0, {1, 0}}, {1, {0, 1}}}, SimConfig{}), DegenerateInputError);
  EXPECT_THROW(SimConfig({Metric::cosine, Aggregate::mean, 0.0}).validate(), InvalidConfigError);
  EXPECT_THROW(predict_single(Vec{1, 0}, {{0, {1, 0}}, {1, {0, 1}}}, SimConfig{Metric::cosine, Aggregate::mean, -1.0}),
               InvalidConfigError);
}

TEST(Aggregate, SingletonConstantAndHandValue) {
  for (Aggregate a : {Aggregate::mean, Aggregate::log_sum_exp}) {
    EXPECT_EQ(aggregate_sims(Vec{0.37}, a), 0.37);
    EXPECT_NEAR(aggregate_sims(Vec{-0.2, -0.2, -0.2, -0.2}, a), -0.2, 1e-15);
    EXPECT_THROW(aggregate_sims(Vec{}, a), InvalidConfigError);
  }
  EXPECT_NEAR(aggregate_sims(Vec{0.0, 1.0}, Aggregate::log_sum_exp), std::log((1.0 + std::exp(1.0)) / 2.0), 1e-15);
  EXPECT_NEAR(aggregate_sims(Vec{0.0, 1.0}, Aggregate::log_sum_exp), 0.62011, 1e-5);
  EXPECT_DOUBLE_EQ(aggregate_sims(Vec{0.0, 1.0, 5.0}, Aggregate::mean), 2.0);
}

TEST(PredictMulti, SingleAndMultiSumToOne) {
  Rng rng(31);
  for (int t = 0; t < 2000; ++t) {
    const std::size_t k = 2 + rng.below(6);
    const std::size_t d = 1 + rng.below(8);
    const SimConfig sim = random_sim(rng);
    const Vec f = random_vec(rng, d, 3.0);
    const PredictionDist single = predict_single(f, random_classes(rng, k, d), sim);
    EXPECT_NEAR(sum(single.probs), 1.0, 1e-9);
    const PredictionDist multi = predict_multi(f, random_batch(rng, k, 1 + rng.below(8), d), sim);
    EXPECT_NEAR(sum(multi.probs), 1.0, 1e-9);
    for (double p : multi.probs) EXPECT_GT(p, 0.0);
  }
}

TEST(PredictMulti, SinglePromptIsBitwisePredictSingle) {
  Rng rng(32);
  for (int t = 0; t < 1000; ++t) {
    const std::size_t d = 1 + rng.below(8);
    const SimConfig sim = random_sim(rng);
    const auto classes = random_classes(rng, 2 + rng.below(5), d);
    const Vec f = random_vec(rng, d);
    const PredictionDist a = predict_single(f, classes, sim);
    const PredictionDist b = predict_multi(f, PromptBatch::single(classes), sim);
    EXPECT_EQ(a.probs, b.probs);
    EXPECT_EQ(a.scores, b.scores);
    EXPECT_EQ(a.class_ids, b.class_ids);
  }
}

TEST(PredictMulti, DuplicatingPromptsIsANoOp) {
  Rng rng(33);
  for (int t = 0; t < 300; ++t) {
    const std::size_t d = 2 + rng.below(5);
    const SimConfig sim = random_sim(rng);
    const PromptBatch b = random_batch(rng, 2 + rng.below(4), 1 + rng.below(4), d);
    PromptBatch dup = b;
    for (auto& list : dup.prompts) {
      const auto copy = list;
      list.insert(list.end(), copy.begin(), copy.end());
    }
    const Vec f = random_vec(rng, d);
    const PredictionDist p = predict_multi(f, b, sim);
    const PredictionDist q = predict_multi(f, dup, sim);
    for (std::size_t k = 0; k < p.probs.size(); ++k) EXPECT_NEAR(p.probs[k], q.probs[k], 1e-12);
  }
}

TEST(PredictMulti, HandComputedTwoByTwo) {
  PromptBatch b;
  b.class_ids = {0, 1};
  b.prompts = {{{1, 0}, {0, 1}}, {{-1, 0}, {1, 1}}};
  const Vec f{2.0, 0.0};
  const double gamma = 0.1;
  const double s0 = (1.0 + 0.0) / 2.0;
  const double s1 = (-1.0 + 1.0 / std::sqrt(2.0)) / 2.0;
  const double p0 = 1.0 / (1.0 + std::exp((s1 - s0) / gamma));
  const PredictionDist p = predict_multi(f, b, SimConfig{Metric::cosine, Aggregate::mean, gamma});
  EXPECT_NEAR(p.probs[0], p0, 1e-14);
  EXPECT_NEAR(p.probs[1], 1.0 - p0, 1e-14);
}

TEST(PredictMulti, RaggedBatchRejected) {
  PromptBatch b;
  b.class_ids = {0, 1};
  b.prompts = {{{1, 0}, {0, 1}}, {{1, 1}}};
  EXPECT_THROW(predict_multi(Vec{1, 0}, b, SimConfig{}), InvalidConfigError);
  b.prompts = {{{1, 0}}, {{1, 1, 1}}};
  EXPECT_THROW(predict_multi(Vec{1, 0}, b, SimConfig{}), InvalidConfigError);
  b.prompts = {{}, {}};
  EXPECT_THROW(predict_multi(Vec{1, 0}, b, SimConfig{}), InvalidConfigError);
}

TEST(PredictMulti, ArgmaxInvariantToScoreShift) {
  Rng rng(34);
  for (int t = 0; t < 500; ++t) {
    const std::size_t d = 2 + rng.below(4);
    const PromptBatch b = random_batch(rng, 3 + rng.below(3), 2, d);
    const Vec f = random_vec(rng, d);
    SimConfig sim{Metric::neg_euclidean, Aggregate::mean, 0.3};
    const PredictionDist p = predict_multi(f, b, sim);
    // A constant shift of every score leaves the softmax unchanged.
    PredictionDist shifted = p;
    Vec scores = p.scores;
    for (double& s : scores) s += 7.5;
    shifted.probs = softmax_temp(scores, sim.gamma);
    EXPECT_EQ(shifted.argmax(), p.argmax());
    for (std::size_t k = 0; k < p.probs.size(); ++k) EXPECT_NEAR(shifted.probs[k], p.probs[k], 1e-12);
  }
}

TEST(PredictSingle, CosineInvariantToPositiveRescaling) {
  Rng rng(35);
  for (int t = 0; t < 500; ++t) {
    const std::size_t d = 2 + rng.below(6);
    const auto classes = random_classes(rng, 2 + rng.below(4), d);
    const Vec f = random_vec(rng, d);
    Vec g = f;
    const double s = std::exp(3.0 * rng.normal());
    for (double& v : g) v *= s;
    const PredictionDist a = predict_single(f, classes, SimConfig{});
    const PredictionDist b = predict_single(g, classes, SimConfig{});
    EXPECT_EQ(a.argmax(), b.argmax());
    for (std::size_t k = 0; k < a.probs.size(); ++k) EXPECT_NEAR(a.probs[k], b.probs[k], 1e-9);
  }
}

TEST(PredictionDist, TiesGoToLowestClass) {
  PredictionDist p;
  p.probs = {0.25, 0.375, 0.375};
  p.class_ids = {4, 7, 9};
  EXPECT_EQ(p.predicted_class(), 7u);
}

TEST(CeLoss, ZeroAtCertaintyAndLogKAtUniform) {
  const PredictionDist sure =
      predict_single(Vec{0.0, 1.0}, {{0, {1, 0}}, {1, {0, 1}}}, SimConfig{Metric::cosine, Aggregate::mean, 1e-3});
  EXPECT_EQ(sure.probs[1], 1.0);
  EXPECT_EQ(ce_loss(sure, 1).loss, 0.0);
  EXPECT_GT(ce_loss(sure, 0).loss, 999.0);

  const std::map<ClassId, Vec> h{{0, {1, 0}}, {1, {0, 1}}, {2, {-1, 0}}, {3, {0, -1}}};
  const PredictionDist u = predict_single(Vec{0.0, 0.0}, h, SimConfig{Metric::neg_euclidean, Aggregate::mean, 0.1});
  EXPECT_NEAR(ce_loss(u, 2).loss, std::log(4.0), 1e-14);
  EXPECT_THROW(ce_loss(u, 9), UnknownClassError);
}

TEST(CeLoss, NonNegativeAndGradientOfScores) {
  Rng rng(36);
  for (int t = 0; t < 500; ++t) {
    const std::size_t k = 2 + rng.below(5);
    const Vec f = random_vec(rng, 3);
    const SimConfig sim = random_sim(rng);
    const PredictionDist p = predict_multi(f, random_batch(rng, k, 2, 3), sim);
    const ClassId y = static_cast<ClassId>(rng.below(k));
    const CeResult r = ce_loss(p, y);
    EXPECT_GE(r.loss, 0.0);
    for (std::size_t i = 0; i < k; ++i) {
      EXPECT_NEAR(r.grad_scores[i], (p.probs[i] - (i == y ? 1.0 : 0.0)) / sim.gamma, 1e-12);
    }
  }
}

// Loss as a function of f and every prompt, packed into one flat vector.
TEST(MultiPromptCe, GradientPassesFiniteDifferenceCheck) {
  Rng rng(37);
  double worst = 0.0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t d = 2 + rng.below(7);
    const std::size_t k = 2 + rng.below(4);
    const std::size_t np = 1 + rng.below(3);
    const SimConfig sim = random_sim(rng);
    const PromptBatch batch = random_batch(rng, k, np, d);
    const ClassId y = static_cast<ClassId>(rng.below(k));

    Vec packed = random_vec(rng, d);
    for (const auto& list : batch.prompts) {
      for (const auto& h : list) packed.insert(packed.end(), h.begin(), h.end());
    }
    auto unpack = [&](std::span<const double> x, Vec& f, PromptBatch& b) {
      f.assign(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(d));
      b = batch;
      std::size_t pos = d;
      for (auto& list : b.prompts) {
        for (auto& h : list) {
          h.assign(x.begin() + static_cast<std::ptrdiff_t>(pos), x.begin() + static_cast<std::ptrdiff_t>(pos + d));
          pos += d;
        }
      }
    };
    auto loss = [&](std::span<const double> x) {
      Vec f;
      PromptBatch b;
      unpack(x, f, b);
      return multi_prompt_ce(f, b, y, sim).loss;
    };
    auto grad = [&](std::span<const double> x) {
      Vec f;
      PromptBatch b;
      unpack(x, f, b);
      const MultiPromptCe r = multi_prompt_ce(f, b, y, sim);
      Vec g = r.grads.grad_f;
      for (const auto& list : r.grads.grad_prompts) {
        for (const auto& h : list) g.insert(g.end(), h.begin(), h.end());
      }
      return g;
    };
    worst = std::max(worst, grad_check(loss, grad, packed, 1e-3).max_rel_error);
  }
  EXPECT_LT(worst, 1e-5);
}

TEST(Similarity, GradientsAndEuclideanThroughZero) {
  Rng rng(38);
  for (int t = 0; t < 200; ++t) {
    const Vec a = random_vec(rng, 4);
    const Vec b = random_vec(rng, 4);
    for (Metric m : {Metric::cosine, Metric::neg_euclidean}) {
      const auto [ga, gb] = similarity_grad(a, b, m);
      auto fa = [&](std::span<const double> x) { return similarity(x, b, m); };
      auto dfa = [&](std::span<const double>) { return ga; };
      EXPECT_LT(grad_check(fa, dfa, a, 1e-4).max_rel_error, 1e-6);
      auto fb = [&](std::span<const double> x) { return similarity(a, x, m); };
      auto dfb = [&](std::span<const double>) { return gb; };
      EXPECT_LT(grad_check(fb, dfb, b, 1e-4).max_rel_error, 1e-6);
    }
  }
  const auto [ga, gb] = similarity_grad(Vec{1, 2}, Vec{1, 2}, Metric::neg_euclidean);
  EXPECT_EQ(ga, (Vec{0, 0}));
  EXPECT_EQ(similarity(Vec{0, 0}, Vec{3, 4}, Metric::neg_euclidean), -5.0);
}

}  // namespace
}  // namespace empl
