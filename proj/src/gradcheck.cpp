#include "empl/gradcheck.hpp"

#include <algorithm>
#include <numeric>

#include "empl/contrastive.hpp"
#include "empl/energy.hpp"
#include "empl/errors.hpp"
#include "empl/meta.hpp"
#include "empl/rng.hpp"

namespace empl {

namespace {

std::size_t draw_between(Rng& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng.below(hi - lo + 1));
}

double draw_uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * rng.uniform(); }

Vec draw_vec(Rng& rng, std::size_t n, double scale = 1.0) {
  Vec v(n);
  for (double& x : v) x = scale * rng.normal();
  return v;
}

SimConfig draw_sim(Rng& rng) {
  SimConfig sim;
  sim.metric = rng.below(2) == 0 ? Metric::cosine : Metric::neg_euclidean;
  sim.aggregate = rng.below(2) == 0 ? Aggregate::mean : Aggregate::log_sum_exp;
  sim.gamma = draw_uniform(rng, 0.07, 1.0);
  return sim;
}

PromptBatch draw_prompts(Rng& rng, std::size_t k, std::size_t p, std::size_t d) {
  PromptBatch b;
  for (std::size_t c = 0; c < k; ++c) {
    b.class_ids.push_back(static_cast<ClassId>(c));
    std::vector<Vec> per_class;
    for (std::size_t j = 0; j < p; ++j) per_class.push_back(draw_vec(rng, d));
    b.prompts.push_back(std::move(per_class));
  }
  return b;
}

// Flattened (f, prompts) point and the inverse mapping.
Vec pack(std::span<const double> f, const PromptBatch& b) {
  Vec out(f.begin(), f.end());
  for (const auto& per_class : b.prompts) {
    for (const auto& h : per_class) out.insert(out.end(), h.begin(), h.end());
  }
  return out;
}

Vec pack_grads(const Vec& grad_f, const std::vector<std::vector<Vec>>& grad_prompts) {
  Vec out = grad_f;
  for (const auto& per_class : grad_prompts) {
    for (const auto& g : per_class) out.insert(out.end(), g.begin(), g.end());
  }
  return out;
}

PromptBatch unpack(std::span<const double> point, const PromptBatch& shape, Vec& f) {
  const std::size_t d = f.size();
  std::copy(point.begin(), point.begin() + static_cast<std::ptrdiff_t>(d), f.begin());
  PromptBatch b = shape;
  std::size_t at = d;
  for (auto& per_class : b.prompts) {
    for (auto& h : per_class) {
      std::copy(point.begin() + static_cast<std::ptrdiff_t>(at),
                point.begin() + static_cast<std::ptrdiff_t>(at + d), h.begin());
      at += d;
    }
  }
  return b;
}

TaskSpec draw_task(Rng& rng, std::size_t k) {
  std::vector<ClassId> ids(k);
  std::iota(ids.begin(), ids.end(), ClassId{0});
  const std::size_t n_unseen = draw_between(rng, 1, k - 1);
  for (std::size_t i = 0; i < n_unseen; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(k - i));
    std::swap(ids[i], ids[j]);
  }
  TaskSpec task;
  task.unseen.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_unseen));
  task.observed.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_unseen), ids.end());
  std::sort(task.unseen.begin(), task.unseen.end());
  std::sort(task.observed.begin(), task.observed.end());
  return task;
}

GradReport check(const ScalarField& f, GradientField g, std::span<const double> point, double eps,
                 bool flip) {
  if (flip) {
    g = [inner = std::move(g)](std::span<const double> p) {
      Vec out = inner(p);
      for (double& v : out) v = -v;
      return out;
    };
  }
  return grad_check(f, g, point, eps);
}

}  // namespace

const BatteryCase& BatteryResult::worst() const {
  if (cases.empty()) throw InvalidConfigError("gradient battery ran no cases");
  return *std::max_element(cases.begin(), cases.end(), [](const BatteryCase& a, const BatteryCase& b) {
    return a.report.max_rel_error < b.report.max_rel_error;
  });
}

BatteryResult run_grad_battery(const BatteryOptions& options) {
  if (options.configs < 1) throw InvalidConfigError("gradient battery needs at least one configuration");
  if (options.max_dim < 2 || options.max_classes < 2) {
    throw InvalidConfigError("gradient battery needs max_dim >= 2 and max_classes >= 2");
  }
  BatteryResult result;
  const double eps = options.eps;
  const bool flip = options.flip_sign;

  for (std::size_t c = 0; c < options.configs; ++c) {
    Rng rng(stream_seed(options.seed, c));
    const std::size_t d = draw_between(rng, 2, options.max_dim);
    const std::size_t k = draw_between(rng, 2, options.max_classes);
    const std::size_t p = draw_between(rng, 1, 3);

    {
      const Vec point = draw_vec(rng, 2 * d);
      auto f = [d](std::span<const double> z) { return cosine_sim(z.first(d), z.subspan(d)); };
      auto g = [d](std::span<const double> z) {
        auto [ga, gb] = cosine_sim_grad(z.first(d), z.subspan(d));
        ga.insert(ga.end(), gb.begin(), gb.end());
        return ga;
      };
      result.cases.push_back({"cosine", c, point.size(), check(f, g, point, eps, flip)});
    }

    {
      const SimConfig sim = draw_sim(rng);
      const Vec f0 = draw_vec(rng, d);
      const PromptBatch shape = draw_prompts(rng, k, p, d);
      const ClassId label = static_cast<ClassId>(rng.below(k));
      auto f = [&](std::span<const double> z) {
        Vec fv(d);
        const PromptBatch b = unpack(z, shape, fv);
        return multi_prompt_ce(fv, b, label, sim).loss;
      };
      auto g = [&](std::span<const double> z) {
        Vec fv(d);
        const PromptBatch b = unpack(z, shape, fv);
        const MultiPromptCe ce = multi_prompt_ce(fv, b, label, sim);
        return pack_grads(ce.grads.grad_f, ce.grads.grad_prompts);
      };
      const Vec point = pack(f0, shape);
      result.cases.push_back({"ce", c, point.size(), check(f, g, point, eps, flip)});
    }

    {
      const SimConfig sim = draw_sim(rng);
      const Vec x0 = draw_vec(rng, d);
      const PromptBatch shape = draw_prompts(rng, k, p, d);
      const TaskSpec task = draw_task(rng, k);
      auto f = [&](std::span<const double> z) {
        Vec xv(d);
        const PromptBatch b = unpack(z, shape, xv);
        return energy(xv, b, task, sim);
      };
      auto g = [&](std::span<const double> z) {
        Vec xv(d);
        const PromptBatch b = unpack(z, shape, xv);
        const EnergyGrads eg = energy_grads(xv, b, task, sim);
        return pack_grads(eg.grad_x, eg.grad_prompts);
      };
      const Vec point = pack(x0, shape);
      result.cases.push_back({"energy", c, point.size(), check(f, g, point, eps, flip)});
    }

    {
      ModelDims dims;
      dims.d_in = draw_between(rng, 1, 4);
      dims.d = d;
      dims.d_tok = draw_between(rng, 1, 4);
      dims.m = draw_between(rng, 1, 3);
      dims.pool = rng.below(2) == 0 ? PoolMode::mean : PoolMode::concat;
      dims.prompt_gain = rng.below(2) == 0;
      std::vector<VocabEntry> entries;
      for (std::size_t i = 0; i < k; ++i) {
        entries.push_back({static_cast<ClassId>(i), "c" + std::to_string(i), draw_vec(rng, dims.d_tok)});
      }
      const Vocabulary vocab(std::move(entries));
      ModelParams params = init_params(rng.next(), dims, 1.0, vocab);
      // Nonzero biases and gain so every block is exercised.
      for (double& v : params.image_bias) v = 0.3 * rng.normal();
      for (double& v : params.pool_bias) v = 0.3 * rng.normal();
      for (double& v : params.extra) v = 1.0 + 0.3 * rng.normal();
      ModelParams frozen = params;
      {
        Vec flat = frozen.flatten();
        for (double& v : flat) v += 0.05 * rng.normal();
        frozen.assign_flat(flat);
      }

      const TaskSpec task = draw_task(rng, k);
      TrainConfig cfg;
      cfg.sim = draw_sim(rng);
      cfg.lambda = draw_uniform(rng, 0.0, 1.0);
      cfg.num_prompts = p;
      cfg.ce_prompts = rng.below(2) == 0 ? CePrompts::sampled : CePrompts::base;
      cfg.sgld.alpha = 1e-3;
      cfg.sgld.steps = 3;
      LabeledBatch batch;
      const std::size_t n = draw_between(rng, 1, 3);
      for (std::size_t i = 0; i < n; ++i) {
        const ClassId label = task.observed[static_cast<std::size_t>(rng.below(task.observed.size()))];
        batch.inputs.push_back({draw_vec(rng, dims.d_in), label});
      }
      const EpisodeSamples samples = draw_samples(batch, task, frozen, vocab, cfg, rng.next());

      auto f = [&](std::span<const double> z) {
        ModelParams q = params;
        q.assign_flat(Vec(z.begin(), z.end()));
        return empl_objective(batch, task, q, vocab, samples, cfg).loss;
      };
      auto g = [&](std::span<const double> z) {
        ModelParams q = params;
        q.assign_flat(Vec(z.begin(), z.end()));
        return empl_objective(batch, task, q, vocab, samples, cfg).grads.flatten();
      };
      const Vec point = params.flatten();
      result.cases.push_back({"empl_loss", c, point.size(), check(f, g, point, eps, flip)});
    }
  }
  return result;
}

}  // namespace empl
