#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "empl/checkpoint.hpp"
#include "empl/config.hpp"
#include "empl/dump.hpp"
#include "empl/errors.hpp"
#include "empl/gap.hpp"
#include "empl/gradcheck.hpp"
#include "empl/meta.hpp"
#include "empl/report.hpp"
#include "empl/synth.hpp"

namespace empl::cli {

namespace fs = std::filesystem;
using io::ExperimentConfig;
using io::Json;

namespace {

constexpr double kGradTolerance = 1e-4;

struct Invocation {
  std::string subcommand;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
  std::string out_dir = ".";
  std::optional<std::string> input;
  std::optional<std::string> checkpoint;
  bool verbose = false;
  bool flip_grad_sign = false;
};

class Timer {
 public:
  void mark(const std::string& name) {
    const auto now = std::chrono::steady_clock::now();
    seconds_[name] = std::chrono::duration<double>(now - last_).count();
    last_ = now;
  }
  Json json() const {
    Json j = Json::object();
    for (const auto& [k, v] : seconds_) j[k] = v;
    return j;
  }

 private:
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
  std::map<std::string, double> seconds_;
};

void write_text(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("--out", "cannot write " + path.string());
    out << text;
    if (!out) throw ConfigError("--out", "cannot write " + path.string());
  }
  fs::rename(tmp, path);
}

std::string format_number(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

void require_file(const std::string& key, const std::string& path) {
  if (!fs::is_regular_file(path)) throw ConfigError(key, "no such file: " + path);
}

// Loads the config and folds in the command-line overrides.
ExperimentConfig effective_config(const Invocation& inv) {
  ExperimentConfig cfg = io::load_config(inv.config_path);
  auto mark = [&](const char* key) {
    auto& d = cfg.defaults_applied;
    d.erase(std::remove(d.begin(), d.end(), key), d.end());
    if (std::find(cfg.explicit_keys.begin(), cfg.explicit_keys.end(), key) == cfg.explicit_keys.end()) {
      cfg.explicit_keys.emplace_back(key);
    }
  };
  if (inv.seed) {
    cfg.seed = *inv.seed;
    cfg.train.seed = *inv.seed;
  }
  if (inv.workers) {
    if (*inv.workers < 1) throw ConfigError("--workers", "must be at least 1");
    cfg.workers = *inv.workers;
    cfg.train.workers = *inv.workers;
    mark("workers");
  }
  if (inv.checkpoint) {
    cfg.checkpoint = *inv.checkpoint;
    mark("checkpoint");
  }
  if (inv.input) {
    if (inv.subcommand == "train") {
      cfg.train_data = *inv.input;
      mark("train_data");
    } else if (inv.subcommand == "eval" || inv.subcommand == "sample" || inv.subcommand == "diag-gap") {
      cfg.eval_data = *inv.input;
      mark("eval_data");
    }
  }
  return cfg;
}

void write_effective_config(const fs::path& out, const ExperimentConfig& cfg, const Invocation& inv) {
  std::string text = "# effective config of `empl " + inv.subcommand + "`\n";
  if (inv.seed) text += "# seed overridden on the command line\n";
  for (const auto& key : cfg.defaults_applied) text += "# default applied: " + key + "\n";
  text += io::render_config(cfg);
  write_text(out / "effective_config.txt", text);
}

struct LoadedData {
  Vocabulary vocab;
  Dataset examples;
};

LoadedData load_data(const std::string& key, const std::string& path) {
  require_file(key, path);
  const io::EmbeddingDump dump = io::read_dump(path);
  LoadedData data;
  data.vocab = dump.vocabulary();
  for (const auto& r : dump.records) {
    if (r.modality == Modality::image) data.examples.push_back({r.vector, r.class_id});
  }
  if (data.examples.empty()) throw ConfigError(key, "dump holds no image records: " + path);
  return data;
}

ModelDims model_dims(const ExperimentConfig& cfg, const LoadedData& data) {
  ModelDims dims;
  dims.d_in = data.examples.front().x_in.size();
  dims.d = cfg.embed_dim;
  dims.d_tok = data.vocab.word_dim();
  dims.m = cfg.context_slots;
  dims.pool = cfg.pool_mode;
  dims.prompt_gain = cfg.prompt_gain;
  return dims;
}

void check_observed(const ExperimentConfig& cfg, const Vocabulary& vocab) {
  if (cfg.observed_classes.empty()) throw ConfigError("observed_classes", "must list at least one class");
  for (ClassId c : cfg.observed_classes) {
    if (!vocab.contains(c)) throw ConfigError("observed_classes", "class " + std::to_string(c) + " is not in the vocabulary");
  }
}

// observed = configured pool, unseen = every other vocabulary class.
TaskSpec evaluation_task(const ExperimentConfig& cfg, const Vocabulary& vocab) {
  check_observed(cfg, vocab);
  TaskSpec task;
  task.observed = cfg.observed_classes;
  for (const auto& e : vocab.entries()) {
    if (!std::binary_search(task.observed.begin(), task.observed.end(), e.class_id)) task.unseen.push_back(e.class_id);
  }
  if (task.unseen.empty()) throw ConfigError("observed_classes", "every vocabulary class is observed; nothing is unseen");
  return task;
}

ModelParams load_params(const ExperimentConfig& cfg, const Vocabulary& vocab, std::size_t d_in) {
  if (!cfg.checkpoint) throw ConfigError("checkpoint", "required key is missing");
  require_file("checkpoint", *cfg.checkpoint);
  ModelParams params = io::read_checkpoint(*cfg.checkpoint).params;
  if (params.n_classes() != vocab.size()) {
    throw ConfigError("checkpoint", "checkpoint has " + std::to_string(params.n_classes()) +
                                        " classes, the data vocabulary has " + std::to_string(vocab.size()));
  }
  if (params.dims().d_in != d_in) throw ConfigError("checkpoint", "checkpoint input dimension does not match the data");
  return params;
}

std::string path_or_throw(const std::optional<std::string>& v, const char* key) {
  if (!v) throw ConfigError(key, "required key is missing");
  return *v;
}

void write_timings(const fs::path& out, const std::string& command, const Timer& timer) {
  Json j;
  j["command"] = command;
  j["seconds"] = timer.json();
  write_text(out / "timings.json", j.dump(2) + "\n");
}

Json accuracy_block(const Dataset& set, const EvalResult& result, const TaskSpec& task) {
  Json per_class = Json::object();
  for (const auto& [id, acc] : result.per_class_accuracy) per_class[std::to_string(id)] = 100.0 * acc;
  const double base = 100.0 * subset_accuracy(set, result, task.observed);
  const double fresh = 100.0 * subset_accuracy(set, result, task.unseen);
  Json j;
  j["overall_accuracy"] = 100.0 * result.overall_accuracy;
  j["base_accuracy"] = base;
  j["new_accuracy"] = fresh;
  j["harmonic_mean"] = base + fresh > 0.0 ? Json(harmonic_mean(base, fresh)) : Json(nullptr);
  j["per_class_accuracy"] = std::move(per_class);
  return j;
}

int run_train(const Invocation& inv, ExperimentConfig cfg, const fs::path& out, Timer& timer) {
  cfg.require({"train_data", "observed_classes", "embed_dim", "sgld_alpha", "batch_size", "epochs", "tasks_per_epoch"});
  const LoadedData data = load_data("train_data", path_or_throw(cfg.train_data, "train_data"));
  check_observed(cfg, data.vocab);
  check_labels_observed(data.examples, cfg.observed_classes);
  cfg.train.validate();
  timer.mark("load");

  const ModelDims dims = model_dims(cfg, data);
  const ModelParams init = init_params(cfg.seed, dims, cfg.init_scale, data.vocab);

  Json report = io::report_head("train", cfg, inv.seed);
  TrainResult result;
  try {
    result = train(data.examples, data.vocab, cfg.observed_classes, init, cfg.train);
  } catch (const TrainingDiverged& e) {
    io::write_checkpoint({e.last_good(), cfg.seed}, out / "checkpoint.last_good.empc");
    throw;
  }
  timer.mark("train");

  io::write_checkpoint({result.params, cfg.seed}, out / "checkpoint.empc");
  std::string history = "step\tepoch\tloss\tce\tmean_energy\tgrad_norm\tunseen\n";
  for (const auto& r : result.history) {
    std::string unseen;
    for (ClassId c : r.unseen) unseen += (unseen.empty() ? "" : ",") + std::to_string(c);
    history += std::to_string(r.step) + "\t" + std::to_string(r.epoch) + "\t" + format_number(r.loss) + "\t" +
               format_number(r.ce) + "\t" + format_number(r.mean_energy) + "\t" + format_number(r.grad_norm) +
               "\t" + unseen + "\n";
  }
  write_text(out / "history.tsv", history);

  const HistoryRecord& last = result.history.back();
  report["steps"] = result.history.size();
  report["final"] = {{"loss", last.loss}, {"ce", last.ce}, {"mean_energy", last.mean_energy}, {"grad_norm", last.grad_norm}};
  report["initial_loss"] = result.history.front().loss;
  report["train_examples"] = data.examples.size();
  report["checkpoint_file"] = "checkpoint.empc";
  report["history_file"] = "history.tsv";
  io::write_report(report, out / "train_report.json");
  timer.mark("write");
  if (inv.verbose) std::cerr << "train: " << result.history.size() << " steps, final loss " << last.loss << "\n";
  return kOk;
}

int run_eval(const Invocation& inv, ExperimentConfig cfg, const fs::path& out, Timer& timer) {
  cfg.require({"eval_data", "checkpoint", "observed_classes", "sgld_alpha"});
  const LoadedData data = load_data("eval_data", path_or_throw(cfg.eval_data, "eval_data"));
  const TaskSpec task = evaluation_task(cfg, data.vocab);
  const ModelParams params = load_params(cfg, data.vocab, data.examples.front().x_in.size());
  cfg.train.sgld.validate();
  timer.mark("load");

  const EvalResult multi = evaluate(params, data.vocab, data.examples, task, cfg.train.num_prompts, cfg.train.sgld,
                                    cfg.train.sim, cfg.seed, cfg.workers);
  timer.mark("eval_multi_prompt");

  // Single-prompt reference: every image scored against the base prompts.
  EvalResult single;
  {
    std::map<ClassId, Vec> base;
    for (ClassId id : task.all_classes()) base[id] = encode_class(params, data.vocab, id);
    std::map<ClassId, std::pair<std::size_t, std::size_t>> tally;
    std::size_t correct = 0;
    for (const auto& ex : data.examples) {
      const ClassId pred = predict_single(encode_image(params, ex.x_in), base, cfg.train.sim).predicted_class();
      single.predictions.push_back(pred);
      auto& t = tally[ex.label];
      ++t.second;
      if (pred == ex.label) {
        ++t.first;
        ++correct;
      }
    }
    for (const auto& [id, t] : tally) single.per_class_accuracy[id] = static_cast<double>(t.first) / static_cast<double>(t.second);
    single.overall_accuracy = static_cast<double>(correct) / static_cast<double>(data.examples.size());
  }
  timer.mark("eval_single_prompt");

  std::string series = "index\tlabel\tprediction\tsingle_prompt_prediction\n";
  for (std::size_t i = 0; i < data.examples.size(); ++i) {
    series += std::to_string(i) + "\t" + std::to_string(data.examples[i].label) + "\t" +
              std::to_string(multi.predictions[i]) + "\t" + std::to_string(single.predictions[i]) + "\n";
  }
  write_text(out / "predictions.tsv", series);

  Json report = io::report_head("eval", cfg, inv.seed);
  report["images"] = data.examples.size();
  report["observed_classes"] = task.observed;
  report["unseen_classes"] = task.unseen;
  report["multi_prompt"] = accuracy_block(data.examples, multi, task);
  report["single_prompt"] = accuracy_block(data.examples, single, task);
  report["predictions_file"] = "predictions.tsv";
  io::write_report(report, out / "eval_report.json");
  timer.mark("write");
  if (inv.verbose) std::cerr << "eval: accuracy " << 100.0 * multi.overall_accuracy << "%\n";
  return kOk;
}

int run_sample(const Invocation& inv, ExperimentConfig cfg, const fs::path& out, Timer& timer) {
  cfg.require({"eval_data", "checkpoint", "observed_classes", "sgld_alpha"});
  const LoadedData data = load_data("eval_data", path_or_throw(cfg.eval_data, "eval_data"));
  const TaskSpec task = evaluation_task(cfg, data.vocab);
  const ModelParams params = load_params(cfg, data.vocab, data.examples.front().x_in.size());
  cfg.train.sgld.validate();
  timer.mark("load");

  const std::size_t n = std::min(cfg.sample_limit, data.examples.size());
  const std::size_t p = cfg.train.num_prompts;
  io::EmbeddingDump dump;
  dump.dim = static_cast<std::uint32_t>(params.image_map.rows);
  for (const auto& e : data.vocab.entries()) dump.classes.push_back({e.class_id, e.name, {}});
  Json images = Json::array();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec f = encode_image(params, data.examples[i].x_in);
    const std::uint64_t seed = stream_seed(cfg.seed, i);
    const PromptBatch prompts =
        sample_prompt_batch(f, params, data.vocab, task, p, cfg.train.sgld, cfg.train.sim, seed, cfg.workers);
    dump.records.push_back({Modality::image, data.examples[i].label, f, 0});
    for (std::size_t k = 0; k < prompts.num_classes(); ++k) {
      for (const auto& h : prompts.prompts[k]) dump.records.push_back({Modality::text, prompts.class_ids[k], h, 0});
    }
    images.push_back({{"index", i},
                      {"label", data.examples[i].label},
                      {"energy", energy(f, prompts, task, cfg.train.sim)},
                      {"prediction", predict_multi(f, prompts, cfg.train.sim).predicted_class()},
                      {"seed", seed}});
  }
  io::write_dump(dump, out / "samples.empd");
  timer.mark("sample");

  Json report = io::report_head("sample", cfg, inv.seed);
  report["sampler"] = {{"alpha", cfg.train.sgld.alpha},
                       {"steps", cfg.train.sgld.steps},
                       {"num_prompts", p},
                       {"init_noise_std", cfg.train.sgld.init_noise_std},
                       {"mode", "conditional_on_image"},
                       {"chain_seed_rule", "image i, class k, prompt j: stream_seed(stream_seed(seed, i), k * P + j)"}};
  report["images"] = std::move(images);
  report["record_layout"] = "per image: one image record f(x), then P text records per class in ascending class order";
  report["samples_file"] = "samples.empd";
  io::write_report(report, out / "sample_report.json");
  timer.mark("write");
  return kOk;
}

int run_diag_gap(const Invocation& inv, ExperimentConfig cfg, const fs::path& out, Timer& timer) {
  cfg.require({"eval_data"});
  const std::string path = path_or_throw(cfg.eval_data, "eval_data");
  require_file("eval_data", path);
  const io::EmbeddingDump dump = io::read_dump(path);
  timer.mark("load");

  // Each image pairs with the mean text embedding of its class.
  std::map<ClassId, std::pair<Vec, std::size_t>> text_sum;
  for (const auto& r : dump.records) {
    if (r.modality != Modality::text) continue;
    auto& [sum, count] = text_sum[r.class_id];
    if (sum.empty()) sum.assign(r.vector.size(), 0.0);
    axpy(1.0, r.vector, sum);
    ++count;
  }
  std::map<ClassId, Vec> text_mean;
  for (const auto& [id, sc] : text_sum) {
    Vec m = sc.first;
    for (double& v : m) v /= static_cast<double>(sc.second);
    text_mean[id] = std::move(m);
  }
  PairSet pairs;
  std::size_t unpaired = 0;
  for (const auto& r : dump.records) {
    if (r.modality != Modality::image) continue;
    const auto it = text_mean.find(r.class_id);
    if (it == text_mean.end()) {
      ++unpaired;
      continue;
    }
    pairs.push_back({r.vector, it->second, r.class_id});
  }
  if (pairs.size() < 2) throw InvalidInputError("diag-gap needs at least 2 image records with a text record of their class");

  const std::vector<Vec> gaps = individual_gaps(pairs);
  Json report = io::report_head("diag-gap", cfg, inv.seed);
  report["input_records"] = dump.records.size();
  report["pairs"] = pairs.size();
  report["unpaired_images"] = unpaired;
  report["pairing"] = "image record with the mean text embedding of its class";
  report["individual_gap"] = io::to_json(gap_stats(gaps, cfg.direction_reference));

  std::set<ClassId> class_set;
  for (const auto& p : pairs) class_set.insert(p.class_id);
  const std::vector<ClassId> classes(class_set.begin(), class_set.end());
  Json per_class = Json::object();
  std::vector<Vec> class_gaps;
  for (ClassId c : classes) {
    class_gaps.push_back(class_gap(pairs, c));
    per_class[std::to_string(c)] = {{"gap", class_gaps.back()}, {"magnitude", norm(class_gaps.back())}};
  }
  report["class_gaps"] = std::move(per_class);
  report["class_gap"] = class_gaps.size() >= 2 ? io::to_json(gap_stats(class_gaps, cfg.direction_reference)) : Json(nullptr);

  if (classes.size() >= 2) {
    const ClassId c1 = classes[0];
    const ClassId c2 = classes[1];
    const auto first_image = [&](ClassId c) {
      return std::find_if(pairs.begin(), pairs.end(), [c](const EmbeddingPair& p) { return p.class_id == c; })->image;
    };
    PairSet group_a;
    PairSet group_b;
    for (const auto& p : pairs) {
      if (p.class_id == c1) group_a.push_back(p);
      if (p.class_id == c2) group_b.push_back(p);
    }
    Json probes;
    probes["probe_classes"] = {c1, c2};
    for (const auto& [name, metric] : {std::pair{"neg_euclidean", Metric::neg_euclidean}, std::pair{"cosine", Metric::cosine}}) {
      probes[name] = {
          {"individual", nonident_discriminant(first_image(c1), first_image(c2), text_mean[c1], text_mean[c2], metric)},
          {"population", population_nonident(group_a, group_b, c1, metric)}};
    }
    report["nonident_discriminants"] = std::move(probes);
  } else {
    report["nonident_discriminants"] = nullptr;
  }

  if (dump.has(io::kHasRefPred)) {
    SimConfig sim = cfg.train.sim;
    sim.metric = Metric::cosine;
    std::size_t agree = 0;
    std::size_t tied = 0;
    std::size_t checked = 0;
    for (const auto& r : dump.records) {
      if (r.modality != Modality::image) continue;
      const PredictionDist pred = predict_single(r.vector, text_mean, sim);
      Vec sorted = pred.scores;
      std::sort(sorted.rbegin(), sorted.rend());
      if (sorted.size() >= 2 && sorted[0] - sorted[1] < 1e-6) {
        ++tied;
        continue;
      }
      ++checked;
      if (pred.predicted_class() == r.ref_pred) ++agree;
    }
    report["reference_agreement"] = {{"checked", checked}, {"agree", agree}, {"tied_excluded", tied}};
  } else {
    report["reference_agreement"] = nullptr;
  }

  std::string series = "index\tclass_id\tmagnitude\n";
  for (std::size_t i = 0; i < gaps.size(); ++i) {
    series += std::to_string(i) + "\t" + std::to_string(pairs[i].class_id) + "\t" + format_number(norm(gaps[i])) + "\n";
  }
  write_text(out / "gaps.tsv", series);
  report["series_file"] = "gaps.tsv";
  io::write_report(report, out / "diag_gap_report.json");
  timer.mark("diagnose");
  return kOk;
}

int run_check_grad(const Invocation& inv, ExperimentConfig cfg, const fs::path& out, Timer& timer) {
  BatteryOptions options;
  options.configs = cfg.check_grad_configs;
  options.eps = cfg.check_grad_eps;
  options.seed = cfg.seed;
  options.flip_sign = inv.flip_grad_sign;
  const BatteryResult battery = run_grad_battery(options);
  timer.mark("battery");

  Json report = io::report_head("check-grad", cfg, inv.seed);
  report["flip_sign_hook"] = inv.flip_grad_sign;
  report["battery"] = io::to_json(battery, kGradTolerance);
  io::write_report(report, out / "check_grad_report.json");
  const BatteryCase& worst = battery.worst();
  std::cerr << "check-grad: worst max_rel_error " << worst.report.max_rel_error << " (" << worst.family
            << ", config " << worst.config << ")\n";
  return battery.passed(kGradTolerance) ? kOk : kGradCheck;
}

int run_synth_data(const Invocation& inv, ExperimentConfig cfg, const fs::path& out, Timer& timer) {
  cfg.require({"synth_classes", "synth_per_class", "synth_d_in", "synth_cluster_std"});
  const io::SynthData data = io::make_synth(cfg.synth, cfg.observed_classes, cfg.seed);
  timer.mark("generate");

  auto to_dump = [&](const Dataset& set) {
    io::EmbeddingDump dump;
    dump.dim = static_cast<std::uint32_t>(cfg.synth.d_in);
    dump.flags = io::kHasWordVecs;
    dump.word_dim = static_cast<std::uint32_t>(cfg.synth.word_dim);
    for (const auto& e : data.vocab.entries()) dump.classes.push_back({e.class_id, e.name, e.word_vec});
    for (const auto& ex : set) dump.records.push_back({Modality::image, ex.label, ex.x_in, 0});
    return dump;
  };
  const io::EmbeddingDump train_dump = to_dump(data.train);
  const io::EmbeddingDump test_dump = to_dump(data.test);
  io::write_dump(train_dump, out / "train.empd");
  io::write_dump(test_dump, out / "test.empd");

  std::string grid = "index";
  for (std::size_t i = 0; i < cfg.synth.d_in; ++i) grid += "\tx" + std::to_string(i);
  grid += "\tdensity\n";
  for (std::size_t p = 0; p < data.grid.size(); ++p) {
    grid += std::to_string(p);
    for (double v : data.grid[p]) grid += "\t" + format_number(v);
    grid += "\t" + format_number(data.density[p]) + "\n";
  }
  if (!data.grid.empty()) write_text(out / "grid.tsv", grid);

  Json manifest = io::report_head("synth-data", cfg, inv.seed);
  Json classes = Json::array();
  for (std::size_t k = 0; k < data.means.size(); ++k) {
    classes.push_back({{"class_id", k},
                       {"name", data.vocab.at(static_cast<ClassId>(k)).name},
                       {"mean", data.means[k]},
                       {"observed", cfg.observed_classes.empty() ||
                                        std::binary_search(cfg.observed_classes.begin(), cfg.observed_classes.end(),
                                                           static_cast<ClassId>(k))}});
  }
  manifest["classes"] = std::move(classes);
  manifest["mean_layout"] = cfg.synth.d_in >= cfg.synth.classes ? "simplex vertices radius * e_k"
                            : cfg.synth.d_in == 1             ? "evenly spaced on [-radius, radius]"
                                                              : "evenly spaced on a circle of the given radius in x0, x1";
  manifest["word_vectors"] = "synthetic: fixed Gaussian linear map of mean / radius plus Gaussian noise of std synth_word_noise";
  manifest["train_file"] = "train.empd";
  manifest["train_records"] = data.train.size();
  manifest["test_file"] = "test.empd";
  manifest["test_records"] = data.test.size();
  if (data.grid.empty()) {
    manifest["grid_file"] = nullptr;
    manifest["grid_note"] = "cluster_std is 0, so the density is not a function; no grid written";
  } else {
    manifest["grid_file"] = "grid.tsv";
    manifest["grid_points"] = data.grid.size();
    manifest["density"] = "mixture of the training classes, equal weights, isotropic Gaussian";
  }
  io::write_report(manifest, out / "manifest.json");
  timer.mark("write");
  return kOk;
}

int dispatch(const Invocation& inv) {
  Timer timer;
  if (!fs::is_regular_file(inv.config_path)) throw ConfigError("--config", "no such file: " + inv.config_path);
  const ExperimentConfig cfg = effective_config(inv);
  const fs::path out(inv.out_dir);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (!fs::is_directory(out)) throw ConfigError("--out", "cannot create directory " + inv.out_dir);
  write_effective_config(out, cfg, inv);
  timer.mark("config");

  int code = kFailure;
  if (inv.subcommand == "train") code = run_train(inv, cfg, out, timer);
  else if (inv.subcommand == "eval") code = run_eval(inv, cfg, out, timer);
  else if (inv.subcommand == "sample") code = run_sample(inv, cfg, out, timer);
  else if (inv.subcommand == "diag-gap") code = run_diag_gap(inv, cfg, out, timer);
  else if (inv.subcommand == "check-grad") code = run_check_grad(inv, cfg, out, timer);
  else if (inv.subcommand == "synth-data") code = run_synth_data(inv, cfg, out, timer);
  write_timings(out, inv.subcommand, timer);
  return code;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"Energy-based multi-prompt learning toolkit"};
  app.require_subcommand(1);
  Invocation inv;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  std::string input;
  std::string checkpoint;

  const std::vector<std::pair<const char*, const char*>> commands = {
      {"train", "Train prompt parameters with the EMPL objective"},
      {"eval", "Multi-prompt evaluation on base and new classes"},
      {"sample", "Draw test-time prompt samples and write them as a dump"},
      {"diag-gap", "Modality-gap statistics and non-identifiability probes on a dump"},
      {"check-grad", "Finite-difference battery over every analytic gradient"},
      {"synth-data", "Write the Gaussian-cluster toy benchmark"},
  };
  std::vector<CLI::App*> subs;
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", inv.config_path, "Experiment config file")->required();
    sub->add_option("--seed", seed, "Override the config seed");
    sub->add_option("--out", inv.out_dir, "Output directory (created if missing)");
    sub->add_option("--workers", workers, "Cap on worker threads");
    if (std::string(name) == "train" || std::string(name) == "eval" || std::string(name) == "sample" ||
        std::string(name) == "diag-gap") {
      sub->add_option("--input", input, "Input dump, overrides train_data / eval_data");
    }
    if (std::string(name) == "eval" || std::string(name) == "sample") {
      sub->add_option("--checkpoint", checkpoint, "Checkpoint file, overrides the config key");
    }
    if (std::string(name) == "check-grad") {
      sub->add_flag("--flip-grad-sign", inv.flip_grad_sign, "Test hook: negate analytic gradients");
    }
    sub->add_flag("-v,--verbose", inv.verbose, "Progress on stderr");
    subs.push_back(sub);
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    std::cout << app.help();
    return kOk;
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  }
  for (CLI::App* sub : subs) {
    if (!sub->parsed()) continue;
    inv.subcommand = sub->get_name();
    if (sub->count("--seed")) inv.seed = seed;
    if (sub->count("--workers")) inv.workers = workers;
    if (sub->get_option_no_throw("--input") && sub->count("--input")) inv.input = input;
    if (sub->get_option_no_throw("--checkpoint") && sub->count("--checkpoint")) inv.checkpoint = checkpoint;
  }

  try {
    return dispatch(inv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const InvalidConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const InvalidTaskError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const UnknownClassError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kFormat;
  } catch (const InvalidInputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kFormat;
  } catch (const NumericalFailureError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
}

}  // namespace empl::cli
