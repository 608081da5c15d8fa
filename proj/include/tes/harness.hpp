#pragma once

// Experiment orchestration: JSON configs, the end-to-end pipeline, evaluation
// reports, openness sweeps, the baseline ablation and cross-class validation.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tes/checkpoint.hpp"
#include "tes/data.hpp"
#include "tes/explorer.hpp"
#include "tes/metrics.hpp"
#include "tes/recognition.hpp"
#include "tes/student.hpp"
#include "tes/svg.hpp"
#include "tes/teacher.hpp"
#include "tes/training.hpp"

namespace tes {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

// ---------------------------------------------------------------- config

enum class UnknownSource { held_out, noise, none };
enum class KnownnessScore { max_cds, max_sigmoid, one_minus_pu };

struct DataConfig {
  std::string kind = "toy";  // "toy" | "files"
  ToySpec toy;
  std::vector<int> known_classes;  // empty: every class is known
  double test_fraction = 0.2;
  UnknownSource unknown = UnknownSource::held_out;
  std::size_t noise_count = 1000;
  std::uint64_t noise_seed = 7;
  std::string train_file, test_file, unknown_file;  // kind == "files"
};

struct ExperimentConfig {
  DataConfig data;
  std::vector<std::size_t> teacher_hidden{64, 64};
  int teacher_epochs = 20;
  std::size_t teacher_batch_size = 64;
  StudentSpec student;  // in_dim and known_classes are taken from the data
  ExplorerSpec explorer;
  double lambda = 1.0;
  bool non_saturating = false;
  DistillConfig distill;
  AdamConfig teacher_adam, student_adam, generator_adam, discriminator_adam;
  int epochs = 100;
  std::size_t batch_size = 256;
  std::uint64_t seed = 1;
  bool use_teacher = true;
  bool use_explorer = true;
  bool use_uncertainty = false;
  double coverage = 0.95;
  KnownnessScore auroc_score = KnownnessScore::max_cds;
  std::size_t probe_count = 1000;
  bool dump_fakes = true;
  int plot_every = 10;  // fake scatter plots every k epochs (plus first/last); 0 disables
  int xcv_epochs = 20;  // joint epochs per cross-class validation grid point
  int xcv_folds = 3;

  void validate() const {
    require(data.kind == "toy" || data.kind == "files", "data.kind must be 'toy' or 'files'");
    require(teacher_epochs >= 0 && epochs >= 0 && xcv_epochs >= 0, "epoch counts must be >= 0");
    require(batch_size >= 1 && teacher_batch_size >= 1, "batch sizes must be >= 1");
    require(lambda >= 0.0, "lambda must be >= 0");
    require(coverage > 0.0 && coverage < 1.0, "coverage must lie in (0,1)");
    require(xcv_folds >= 1, "xcv_folds must be >= 1");
    distill.validate();
    teacher_adam.validate();
    student_adam.validate();
    generator_adam.validate();
    discriminator_adam.validate();
    if (data.kind == "files") {
      for (const auto* f : {&data.train_file, &data.test_file})
        require(!f->empty() && fs::exists(*f), "data file '" + *f + "' does not exist");
      if (data.unknown == UnknownSource::held_out)
        require(!data.unknown_file.empty() && fs::exists(data.unknown_file),
                "unknown file '" + data.unknown_file + "' does not exist");
    }
  }
};

namespace detail {

template <class T>
void take(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline void reject_unknown_keys(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
  require(j.is_object(), where + " must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    (void)v;
    if (std::none_of(keys.begin(), keys.end(), [&](const char* a) { return k == a; }))
      throw ValidationError("unknown config key '" + where + "." + k + "'");
  }
}

inline AdamConfig adam_from_json(const json& j, const std::string& where) {
  reject_unknown_keys(j, {"lr", "beta1", "beta2", "eps"}, where);
  AdamConfig a;
  take(j, "lr", a.lr);
  take(j, "beta1", a.beta1);
  take(j, "beta2", a.beta2);
  take(j, "eps", a.eps);
  return a;
}

inline json adam_to_json(const AdamConfig& a) { return {{"lr", a.lr}, {"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.eps}}; }

inline std::string to_string(UnknownSource u) {
  switch (u) {
    case UnknownSource::held_out: return "held_out";
    case UnknownSource::noise: return "noise";
    case UnknownSource::none: return "none";
  }
  return "?";
}

inline UnknownSource unknown_source_from(const std::string& s) {
  if (s == "held_out") return UnknownSource::held_out;
  if (s == "noise") return UnknownSource::noise;
  if (s == "none") return UnknownSource::none;
  throw ValidationError("data.unknown must be held_out, noise or none (got '" + s + "')");
}

inline std::string to_string(KnownnessScore k) {
  switch (k) {
    case KnownnessScore::max_cds: return "max_cds";
    case KnownnessScore::max_sigmoid: return "max_sigmoid";
    case KnownnessScore::one_minus_pu: return "one_minus_pu";
  }
  return "?";
}

inline KnownnessScore knownness_from(const std::string& s) {
  if (s == "max_cds") return KnownnessScore::max_cds;
  if (s == "max_sigmoid") return KnownnessScore::max_sigmoid;
  if (s == "one_minus_pu") return KnownnessScore::one_minus_pu;
  throw ValidationError("auroc_score must be max_cds, max_sigmoid or one_minus_pu (got '" + s + "')");
}

}  // namespace detail

inline ExperimentConfig config_from_json(const json& j) {
  using detail::take;
  detail::reject_unknown_keys(j,
                              {"data", "teacher", "student", "explorer", "distill", "adam", "epochs", "batch_size", "seed",
                               "use_teacher", "use_explorer", "use_uncertainty", "coverage", "auroc_score", "probe_count",
                               "dump_fakes", "plot_every", "xcv_epochs", "xcv_folds"},
                              "config");
  ExperimentConfig c;
  if (j.contains("data")) {
    const auto& d = j.at("data");
    detail::reject_unknown_keys(d,
                                {"kind", "class_count", "per_class", "spread", "centers", "toy_seed", "known_classes",
                                 "test_fraction", "unknown", "noise_count", "noise_seed", "train_file", "test_file",
                                 "unknown_file"},
                                "data");
    take(d, "kind", c.data.kind);
    take(d, "class_count", c.data.toy.class_count);
    take(d, "per_class", c.data.toy.per_class);
    take(d, "spread", c.data.toy.spread);
    take(d, "centers", c.data.toy.centers);
    take(d, "toy_seed", c.data.toy.seed);
    take(d, "known_classes", c.data.known_classes);
    take(d, "test_fraction", c.data.test_fraction);
    if (d.contains("unknown")) c.data.unknown = detail::unknown_source_from(d.at("unknown").get<std::string>());
    take(d, "noise_count", c.data.noise_count);
    take(d, "noise_seed", c.data.noise_seed);
    take(d, "train_file", c.data.train_file);
    take(d, "test_file", c.data.test_file);
    take(d, "unknown_file", c.data.unknown_file);
  }
  if (j.contains("teacher")) {
    const auto& t = j.at("teacher");
    detail::reject_unknown_keys(t, {"hidden", "epochs", "batch_size"}, "teacher");
    take(t, "hidden", c.teacher_hidden);
    take(t, "epochs", c.teacher_epochs);
    take(t, "batch_size", c.teacher_batch_size);
  }
  if (j.contains("student")) {
    const auto& s = j.at("student");
    detail::reject_unknown_keys(s, {"trunk_hidden", "head_hidden", "leak"}, "student");
    take(s, "trunk_hidden", c.student.trunk_hidden);
    take(s, "head_hidden", c.student.head_hidden);
    take(s, "leak", c.student.leak);
  }
  if (j.contains("explorer")) {
    const auto& e = j.at("explorer");
    detail::reject_unknown_keys(e, {"latent_dim", "generator_hidden", "discriminator_hidden", "lambda", "non_saturating"},
                                "explorer");
    take(e, "latent_dim", c.explorer.latent_dim);
    take(e, "generator_hidden", c.explorer.generator_hidden);
    take(e, "discriminator_hidden", c.explorer.discriminator_hidden);
    take(e, "lambda", c.lambda);
    take(e, "non_saturating", c.non_saturating);
  }
  if (j.contains("distill")) {
    const auto& d = j.at("distill");
    detail::reject_unknown_keys(d, {"tau", "q_min"}, "distill");
    take(d, "tau", c.distill.tau);
    take(d, "q_min", c.distill.q_min);
  }
  if (j.contains("adam")) {
    const auto& a = j.at("adam");
    detail::reject_unknown_keys(a, {"teacher", "student", "generator", "discriminator"}, "adam");
    if (a.contains("teacher")) c.teacher_adam = detail::adam_from_json(a.at("teacher"), "adam.teacher");
    if (a.contains("student")) c.student_adam = detail::adam_from_json(a.at("student"), "adam.student");
    if (a.contains("generator")) c.generator_adam = detail::adam_from_json(a.at("generator"), "adam.generator");
    if (a.contains("discriminator"))
      c.discriminator_adam = detail::adam_from_json(a.at("discriminator"), "adam.discriminator");
  }
  take(j, "epochs", c.epochs);
  take(j, "batch_size", c.batch_size);
  take(j, "seed", c.seed);
  take(j, "use_teacher", c.use_teacher);
  take(j, "use_explorer", c.use_explorer);
  take(j, "use_uncertainty", c.use_uncertainty);
  take(j, "coverage", c.coverage);
  if (j.contains("auroc_score")) c.auroc_score = detail::knownness_from(j.at("auroc_score").get<std::string>());
  take(j, "probe_count", c.probe_count);
  take(j, "dump_fakes", c.dump_fakes);
  take(j, "plot_every", c.plot_every);
  take(j, "xcv_epochs", c.xcv_epochs);
  take(j, "xcv_folds", c.xcv_folds);
  return c;
}

inline json config_to_json(const ExperimentConfig& c) {
  json d = {{"kind", c.data.kind},
            {"class_count", c.data.toy.class_count},
            {"per_class", c.data.toy.per_class},
            {"spread", c.data.toy.spread},
            {"centers", c.data.toy.centers},
            {"toy_seed", c.data.toy.seed},
            {"known_classes", c.data.known_classes},
            {"test_fraction", c.data.test_fraction},
            {"unknown", detail::to_string(c.data.unknown)},
            {"noise_count", c.data.noise_count},
            {"noise_seed", c.data.noise_seed},
            {"train_file", c.data.train_file},
            {"test_file", c.data.test_file},
            {"unknown_file", c.data.unknown_file}};
  return {{"data", d},
          {"teacher", {{"hidden", c.teacher_hidden}, {"epochs", c.teacher_epochs}, {"batch_size", c.teacher_batch_size}}},
          {"student",
           {{"trunk_hidden", c.student.trunk_hidden}, {"head_hidden", c.student.head_hidden}, {"leak", c.student.leak}}},
          {"explorer",
           {{"latent_dim", c.explorer.latent_dim},
            {"generator_hidden", c.explorer.generator_hidden},
            {"discriminator_hidden", c.explorer.discriminator_hidden},
            {"lambda", c.lambda},
            {"non_saturating", c.non_saturating}}},
          {"distill", {{"tau", c.distill.tau}, {"q_min", c.distill.q_min}}},
          {"adam",
           {{"teacher", detail::adam_to_json(c.teacher_adam)},
            {"student", detail::adam_to_json(c.student_adam)},
            {"generator", detail::adam_to_json(c.generator_adam)},
            {"discriminator", detail::adam_to_json(c.discriminator_adam)}}},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"use_teacher", c.use_teacher},
          {"use_explorer", c.use_explorer},
          {"use_uncertainty", c.use_uncertainty},
          {"coverage", c.coverage},
          {"auroc_score", detail::to_string(c.auroc_score)},
          {"probe_count", c.probe_count},
          {"dump_fakes", c.dump_fakes},
          {"plot_every", c.plot_every},
          {"xcv_epochs", c.xcv_epochs},
          {"xcv_folds", c.xcv_folds}};
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  require(static_cast<bool>(is), "cannot open config '" + path + "'");
  json j;
  try {
    j = json::parse(is, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::exception& e) {
    throw ValidationError("config '" + path + "': " + e.what());
  }
  try {
    return config_from_json(j);
  } catch (const json::exception& e) {
    throw ValidationError("config '" + path + "': " + e.what());
  }
}

// ---------------------------------------------------------------- stages

struct StageError : std::runtime_error {
  std::string stage;
  StageError(std::string stage_, const std::string& what)
      : std::runtime_error("stage '" + stage_ + "' failed: " + what), stage(std::move(stage_)) {}
};

template <class F>
auto stage(const char* name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

/// Known-class train/test sets plus unknown test samples. `unknown.labels`
/// identify unknown groups (held-out class ids, or 0 for noise) so sweeps can
/// grow the unknown set group by group.
struct ExperimentData {
  LabeledDataset train;
  LabeledDataset test;
  LabeledDataset unknown;
  std::vector<int> unknown_groups;  // distinct unknown labels in pool order
  std::map<int, int> known_to_original;
};

inline ExperimentData prepare_data(const ExperimentConfig& cfg) {
  ExperimentData out;
  const auto& dc = cfg.data;
  if (dc.kind == "files") {
    out.train = load_dataset(dc.train_file);
    out.test = load_dataset(dc.test_file, out.train.class_count);
    if (dc.unknown == UnknownSource::held_out) out.unknown = load_dataset(dc.unknown_file);
    for (int c = 0; c < out.train.class_count; ++c) out.known_to_original[c] = c;
  } else {
    const auto all = gen_toy(dc.toy);
    std::vector<int> known = dc.known_classes;
    if (known.empty())
      for (int c = 0; c < dc.toy.class_count; ++c) known.push_back(c);
    const auto [tr, te] = train_test_split(all, dc.test_fraction, derive_seed(cfg.seed, 2));
    const auto trs = split_known_unknown(tr, known);
    const auto tes_ = split_known_unknown(te, known);
    out.train = trs.known;
    out.test = tes_.known;
    out.known_to_original = trs.inverse;
    if (dc.unknown == UnknownSource::held_out) out.unknown = tes_.unknown;
  }
  if (dc.unknown == UnknownSource::noise) {
    NoiseSpec ns;
    ns.dim = out.train.dim();
    ns.count = dc.noise_count;
    ns.seed = dc.noise_seed;
    out.unknown = gen_noise(ns);
  }
  if (dc.unknown == UnknownSource::none || out.unknown.size() == 0) {
    out.unknown = LabeledDataset{Tensor::matrix(0, out.train.dim()), {}, 0};
  }
  out.unknown_groups = label_set(out.unknown);
  require(out.train.class_count >= 2, "need at least two known classes");
  require_dims(out.test.dim() == out.train.dim() && (out.unknown.size() == 0 || out.unknown.dim() == out.train.dim()),
               "train, test and unknown feature widths differ");
  return out;
}

/// Unknown samples belonging to the first `groups` entries of the pool.
inline LabeledDataset unknown_subset(const ExperimentData& d, std::size_t groups) {
  require(groups <= d.unknown_groups.size(), "requested " + std::to_string(groups) + " unknown classes but the pool has " +
                                                 std::to_string(d.unknown_groups.size()));
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < d.unknown.size(); ++i)
    if (std::find(d.unknown_groups.begin(), d.unknown_groups.begin() + static_cast<std::ptrdiff_t>(groups),
                  d.unknown.labels[i]) != d.unknown_groups.begin() + static_cast<std::ptrdiff_t>(groups))
      idx.push_back(i);
  auto s = d.unknown.subset(idx);
  s.class_count = d.unknown.class_count;
  return s;
}

struct TrainedModels {
  std::optional<Model> teacher;
  StudentModel student;
  std::optional<ExplorerPair> explorer;
  RunRecord record;
  Thresholds thresholds;
  std::vector<std::size_t> unrecognized;  // known classes calibration could not reach
};

inline Model train_teacher_stage(const ExperimentConfig& cfg, const LabeledDataset& train) {
  return stage("teacher", [&] {
    const auto spec = mlp(train.dim(), cfg.teacher_hidden, static_cast<std::size_t>(train.class_count), LayerKind::softmax);
    return train_teacher(train, spec, cfg.teacher_epochs, cfg.teacher_adam, derive_seed(cfg.seed, 1),
                         cfg.teacher_batch_size);
  });
}

inline StudentModel make_student(const ExperimentConfig& cfg, const LabeledDataset& train, Rng& rng) {
  StudentSpec ss = cfg.student;
  ss.in_dim = train.dim();
  ss.known_classes = static_cast<std::size_t>(train.class_count);
  return StudentModel(ss, rng);
}

inline ExplorerPair make_explorer(const ExperimentConfig& cfg, const LabeledDataset& train, Rng& rng) {
  ExplorerSpec es = cfg.explorer;
  es.data_dim = train.dim();
  ExplorerPair pair(es, rng, cfg.lambda);
  pair.non_saturating = cfg.non_saturating;
  return pair;
}

inline JointTrainConfig joint_config(const ExperimentConfig& cfg) {
  JointTrainConfig jc;
  jc.epochs = cfg.epochs;
  jc.batch_size = cfg.batch_size;
  jc.distill = cfg.distill;
  jc.student_adam = cfg.student_adam;
  jc.generator_adam = cfg.generator_adam;
  jc.discriminator_adam = cfg.discriminator_adam;
  jc.use_teacher = cfg.use_teacher;
  jc.use_explorer = cfg.use_explorer;
  jc.probe_count = cfg.probe_count;
  return jc;
}

/// Teacher (if used) -> joint training -> calibration.
inline TrainedModels train_models(const ExperimentConfig& cfg, const LabeledDataset& train,
                                  const EpochObserver& observer = {}, const Model* pretrained_teacher = nullptr) {
  cfg.validate();
  std::optional<Model> teacher;
  if (cfg.use_teacher) teacher = pretrained_teacher ? *pretrained_teacher : train_teacher_stage(cfg, train);

  Rng init_rng(derive_seed(cfg.seed, 3));
  StudentModel student = make_student(cfg, train, init_rng);
  std::optional<ExplorerPair> explorer;
  if (cfg.use_explorer) explorer = make_explorer(cfg, train, init_rng);

  auto record = stage("joint_train", [&] {
    return joint_train(teacher ? &*teacher : nullptr, student, explorer ? &*explorer : nullptr, train, joint_config(cfg),
                       derive_seed(cfg.seed, 4), observer);
  });
  std::vector<std::size_t> unrecognized;
  auto th = stage("calibrate",
                  [&] { return calibrate_thresholds(student, train, cfg.coverage, cfg.use_uncertainty, &unrecognized); });
  return {std::move(teacher), std::move(student), std::move(explorer), std::move(record), std::move(th),
          std::move(unrecognized)};
}

// ---------------------------------------------------------------- evaluation

struct EvalReport {
  F1Report f1;
  double auroc = std::numeric_limits<double>::quiet_NaN();  // NaN without unknown samples
  double openness = 0.0;
  int trained_classes = 0, evaluated_classes = 0, recognized_classes = 0;
  std::size_t known_samples = 0, unknown_samples = 0;
};

inline double knownness(const StudentScores& s, std::size_t r, KnownnessScore kind) {
  const std::size_t k = s.cds.cols() - 1;
  double best = -std::numeric_limits<double>::infinity();
  switch (kind) {
    case KnownnessScore::max_cds:
      for (std::size_t c = 0; c < k; ++c) best = std::max(best, s.cds.at(r, c));
      return best;
    case KnownnessScore::max_sigmoid:
      for (std::size_t c = 0; c < k; ++c) best = std::max(best, s.probs.at(r, c));
      return best;
    case KnownnessScore::one_minus_pu: return 1.0 - s.probs.at(r, k);
  }
  return best;
}

/// Predictions, macro-F1 over known classes + U, AUROC of the knownness score
/// and openness with C_R = C_T and C_E = C_T + number of unknown classes.
inline EvalReport evaluate(const StudentModel& student, const Thresholds& th, const LabeledDataset& known_test,
                           const LabeledDataset& unknown_test, KnownnessScore score = KnownnessScore::max_cds,
                           std::vector<Prediction>* predictions = nullptr) {
  const std::size_t k = student.known_classes();
  require_dims(static_cast<std::size_t>(known_test.class_count) == k, "test classes do not match the student");
  EvalReport rep;
  rep.known_samples = known_test.size();
  rep.unknown_samples = unknown_test.size();

  std::vector<int> preds, truth;
  std::vector<double> scores;
  std::vector<bool> is_known;
  auto run = [&](const LabeledDataset& d, bool known) {
    const auto s = score_batch(student, d.features);
    for (std::size_t r = 0; r < d.size(); ++r) {
      auto p = decide(s.cds.row(r), s.probs.at(r, k), th);
      preds.push_back(p.label);
      truth.push_back(known ? d.labels[r] : static_cast<int>(k));
      scores.push_back(knownness(s, r, score));
      is_known.push_back(known);
      if (predictions) predictions->push_back(std::move(p));
    }
  };
  run(known_test, true);
  run(unknown_test, false);

  rep.f1 = macro_f1(preds, truth, k + 1);
  if (rep.known_samples > 0 && rep.unknown_samples > 0) rep.auroc = auroc(scores, is_known);
  rep.trained_classes = rep.recognized_classes = static_cast<int>(k);
  rep.evaluated_classes = static_cast<int>(k + label_set(unknown_test).size());
  rep.openness = openness(rep.trained_classes, rep.evaluated_classes, rep.recognized_classes);
  return rep;
}

inline json report_to_json(const EvalReport& r) {
  json per = json::array();
  for (std::size_t c = 0; c < r.f1.per_class.size(); ++c) {
    const auto& s = r.f1.per_class[c];
    per.push_back({{"class", c + 1 == r.f1.per_class.size() ? std::string("U") : std::to_string(c)},
                   {"precision", s.precision},
                   {"recall", s.recall},
                   {"f1", s.f1},
                   {"support", s.support},
                   {"absent", s.absent}});
  }
  json j = {{"macro_f1", r.f1.macro_f1},
            {"auroc", std::isnan(r.auroc) ? json(nullptr) : json(r.auroc)},
            {"openness", r.openness},
            {"C_T", r.trained_classes},
            {"C_E", r.evaluated_classes},
            {"C_R", r.recognized_classes},
            {"known_samples", r.known_samples},
            {"unknown_samples", r.unknown_samples},
            {"per_class", per},
            {"confusion", r.f1.confusion}};
  return j;
}

// ---------------------------------------------------------------- artifacts

inline NamedModels student_models(const StudentModel& s) {
  NamedModels out{{"student.trunk", s.trunk}};
  for (std::size_t c = 0; c < s.heads.size(); ++c) out.emplace_back("student.head" + std::to_string(c), s.heads[c]);
  return out;
}

inline void save_models(const std::string& path, const TrainedModels& m) {
  NamedModels all;
  if (m.teacher) all.emplace_back("teacher", *m.teacher);
  for (auto& nm : student_models(m.student)) all.push_back(std::move(nm));
  if (m.explorer) {
    all.emplace_back("generator", m.explorer->generator);
    all.emplace_back("discriminator", m.explorer->discriminator);
  }
  save_checkpoint(path, all);
}

/// Rebuilds the student (and explorer, if present) from a checkpoint written by save_models.
inline TrainedModels load_models(const std::string& path, const ExperimentConfig& cfg) {
  const auto all = load_checkpoint_all(path);
  auto find = [&](const std::string& name) -> const Model* {
    for (const auto& [n, m] : all)
      if (n == name) return &m;
    return nullptr;
  };
  TrainedModels out;
  const Model* trunk = find("student.trunk");
  if (!trunk) throw CheckpointError("'" + path + "' has no student.trunk");
  out.student.trunk = *trunk;
  for (std::size_t c = 0;; ++c) {
    const Model* h = find("student.head" + std::to_string(c));
    if (!h) break;
    out.student.heads.push_back(*h);
  }
  out.student.validate();
  if (const Model* t = find("teacher")) out.teacher = *t;
  const Model* g = find("generator");
  const Model* d = find("discriminator");
  if (g && d) {
    ExplorerPair p;
    p.generator = *g;
    p.discriminator = *d;
    p.prior.dim = g->in_dim();
    p.lambda = cfg.lambda;
    p.non_saturating = cfg.non_saturating;
    p.validate();
    out.explorer = std::move(p);
  }
  return out;
}

/// Writes per-epoch fake dumps and periodic scatter plots under `out`.
inline EpochObserver fake_dumper(const ExperimentConfig& cfg, const fs::path& out, const LabeledDataset& train) {
  if (!cfg.dump_fakes && cfg.plot_every <= 0) return {};
  fs::create_directories(out / "fakes");
  fs::create_directories(out / "plots");
  return [cfg, out, &train](const EpochSnapshot& snap) {
    if (snap.probe_fakes.rows() == 0) return;
    const int e = snap.metrics.epoch;
    if (cfg.dump_fakes) {
      std::ofstream os(out / "fakes" / ("epoch_" + std::to_string(e) + ".csv"));
      os << "index";
      for (std::size_t c = 0; c < snap.probe_fakes.cols(); ++c) os << ",f" << c;
      os << ",active\n";
      for (std::size_t r = 0; r < snap.probe_fakes.rows(); ++r) {
        os << r;
        for (double v : snap.probe_fakes.row(r)) os << ',' << format_real(v);
        os << ',' << (snap.probe_mask[r] ? 1 : 0) << '\n';
      }
    }
    const bool plot = cfg.plot_every > 0 && (e == 1 || e == cfg.epochs || e % cfg.plot_every == 0);
    if (!plot || snap.probe_fakes.cols() < 2) return;
    std::vector<svg::Series> series;
    for (int c = 0; c < train.class_count; ++c) {
      const auto idx = train.indices_of(c);
      series.push_back(svg::points(train.features.gather_rows(idx), "class " + std::to_string(c), "#c7c7c7"));
    }
    std::vector<std::size_t> active, other;
    for (std::size_t r = 0; r < snap.probe_mask.size(); ++r) (snap.probe_mask[r] ? active : other).push_back(r);
    series.push_back(svg::points(snap.probe_fakes.gather_rows(other), "fake", "#1f77b4"));
    series.push_back(svg::points(snap.probe_fakes.gather_rows(active), "active unknown", "#d62728"));
    for (std::size_t i = 0; i + 2 < series.size(); ++i) series[i].name = i == 0 ? "real" : "";
    svg::Frame f;
    f.x0 = f.y0 = -0.05;
    f.x1 = f.y1 = 1.05;
    svg::write((out / "plots" / ("fakes_epoch_" + std::to_string(e) + ".svg")).string(),
               svg::scatter(series, "epoch " + std::to_string(e) + ": " + std::to_string(active.size()) +
                                        " active unknowns", "x0", "x1", &f));
  };
}

inline void plot_losses(const RunRecord& rec, const std::string& path) {
  std::vector<svg::Series> s(5);
  const char* names[] = {"D", "G adv", "G student", "S real", "S fake"};
  for (std::size_t i = 0; i < s.size(); ++i) {
    s[i].name = names[i];
    s[i].color = svg::palette(i);
  }
  for (const auto& m : rec.epochs) {
    const double vals[] = {m.d_loss, m.g_adv_loss, m.g_student_loss, m.s_real_loss, m.s_fake_loss};
    for (std::size_t i = 0; i < s.size(); ++i) {
      s[i].x.push_back(m.epoch);
      s[i].y.push_back(vals[i]);
    }
  }
  svg::write(path, svg::lines(s, "losses per epoch", "epoch", "loss"));
}

// ---------------------------------------------------------------- experiment

struct ExperimentResult {
  EvalReport report;
  TrainedModels models;
};

/// Full pipeline. With a non-empty `out` every artifact is written there;
/// artifacts of completed stages remain on disk if a later stage fails.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::string& out = "") {
  stage("config", [&] { cfg.validate(); });
  const auto data = stage("data", [&] { return prepare_data(cfg); });
  const fs::path dir = out;
  if (!out.empty()) fs::create_directories(dir / "checkpoints");

  std::optional<Model> teacher;
  if (cfg.use_teacher) {
    teacher = train_teacher_stage(cfg, data.train);
    if (!out.empty()) save_checkpoint((dir / "checkpoints" / "teacher.ckpt").string(), *teacher);
  }
  const auto observer = out.empty() ? EpochObserver{} : fake_dumper(cfg, dir, data.train);
  ExperimentResult res{{}, train_models(cfg, data.train, observer, teacher ? &*teacher : nullptr)};
  if (!out.empty()) {
    stage("artifacts", [&] {
      write_metrics_csv(res.models.record, (dir / "metrics.csv").string());
      save_models((dir / "checkpoints" / "models.ckpt").string(), res.models);
      save_thresholds(res.models.thresholds, (dir / "thresholds.txt").string());
      fs::create_directories(dir / "plots");
      if (!res.models.record.epochs.empty()) plot_losses(res.models.record, (dir / "plots" / "losses.svg").string());
    });
  }
  std::vector<Prediction> preds;
  res.report = stage("evaluate", [&] {
    return evaluate(res.models.student, res.models.thresholds, data.test, data.unknown, cfg.auroc_score, &preds);
  });
  if (!out.empty()) {
    stage("report", [&] {
      save_predictions(preds, (dir / "predictions.csv").string());
      json j = {{"config", config_to_json(cfg)},
                {"evaluation", report_to_json(res.report)},
                {"distill_calls", res.models.record.distill_calls},
                {"epochs_run", res.models.record.epochs.size()},
                {"unrecognized_classes", res.models.unrecognized}};
      std::ofstream os(dir / "report.json");
      os << j.dump(2) << '\n';
    });
  }
  return res;
}

// ---------------------------------------------------------------- sweeps

struct SweepRow {
  std::size_t unknown_classes = 0;
  double openness = 0.0;
  double macro_f1 = 0.0;
  double auroc = std::numeric_limits<double>::quiet_NaN();
};

inline std::vector<SweepRow> sweep_rows(const TrainedModels& m, const Thresholds& th, const ExperimentData& data,
                                        const std::vector<std::size_t>& counts, KnownnessScore score) {
  std::vector<SweepRow> rows;
  for (std::size_t n : counts) {
    const auto u = unknown_subset(data, n);
    const auto rep = evaluate(m.student, th, data.test, u, score);
    rows.push_back({n, rep.openness, rep.f1.macro_f1, rep.auroc});
  }
  return rows;
}

/// Trains once and evaluates against unknown sets of growing class counts.
inline std::vector<SweepRow> sweep_openness(const ExperimentConfig& cfg, const std::vector<std::size_t>& counts,
                                            const std::string& out = "") {
  require(!counts.empty(), "sweep needs at least one unknown class count");
  const auto data = stage("data", [&] { return prepare_data(cfg); });
  for (std::size_t n : counts)
    require(n <= data.unknown_groups.size(), "requested " + std::to_string(n) + " unknown classes but the pool has " +
                                                 std::to_string(data.unknown_groups.size()));
  const auto models = train_models(cfg, data.train);
  const auto rows = sweep_rows(models, models.thresholds, data, counts, cfg.auroc_score);
  if (!out.empty()) {
    const fs::path dir = out;
    fs::create_directories(dir / "plots");
    std::ofstream os(dir / "sweep.csv");
    os << "unknown_classes,openness,macro_f1,auroc\n";
    svg::Series s{"T/E/S", {}, {}, svg::palette(0)};
    for (const auto& r : rows) {
      os << r.unknown_classes << ',' << format_real(r.openness) << ',' << format_real(r.macro_f1) << ','
         << format_real(r.auroc) << '\n';
      s.x.push_back(r.openness);
      s.y.push_back(r.macro_f1);
    }
    svg::write((dir / "plots" / "f1_vs_openness.svg").string(), svg::lines({s}, "macro-F1 vs openness", "openness", "F1"));
  }
  return rows;
}

struct AblationTable {
  std::vector<std::string> columns;  // baseline names, in column order
  std::vector<std::size_t> unknown_classes;
  std::vector<double> openness;
  std::vector<std::vector<double>> f1;  // [row][column]
};

struct Baseline {
  const char* name;
  bool teacher, explorer;
};

inline constexpr Baseline kBaselines[] = {
    {"OVRN", false, false}, {"T/S", true, false}, {"E/S", false, true}, {"T/E/S", true, true}};

/// Trains every baseline once from the same config and evaluates CD and CDU
/// decisions at each unknown class count. Empty `counts` means 1..pool size.
inline AblationTable ablate(const ExperimentConfig& cfg, std::vector<std::size_t> counts, const std::string& out = "") {
  const auto data = stage("data", [&] { return prepare_data(cfg); });
  if (counts.empty())
    for (std::size_t n = 1; n <= data.unknown_groups.size(); ++n) counts.push_back(n);
  require(!counts.empty(), "ablation needs unknown samples (the unknown pool is empty)");

  AblationTable t;
  t.unknown_classes = counts;
  t.f1.assign(counts.size(), {});
  for (const auto& b : kBaselines) {
    ExperimentConfig c = cfg;
    c.use_teacher = b.teacher;
    c.use_explorer = b.explorer;
    c.use_uncertainty = false;
    const auto models = train_models(c, data.train);
    Thresholds cdu = models.thresholds;
    cdu.use_uncertainty = true;
    const auto cd_rows = sweep_rows(models, models.thresholds, data, counts, cfg.auroc_score);
    const auto cdu_rows = sweep_rows(models, cdu, data, counts, cfg.auroc_score);
    t.columns.push_back(std::string(b.name) + "-CD");
    t.columns.push_back(std::string(b.name) + "-CDU");
    t.openness.clear();
    for (std::size_t r = 0; r < counts.size(); ++r) {
      t.openness.push_back(cd_rows[r].openness);
      t.f1[r].push_back(cd_rows[r].macro_f1);
      t.f1[r].push_back(cdu_rows[r].macro_f1);
    }
  }
  if (!out.empty()) {
    const fs::path dir = out;
    fs::create_directories(dir / "plots");
    std::ofstream os(dir / "ablation.csv");
    os << "openness";
    for (const auto& c : t.columns) os << ',' << c;
    os << '\n';
    std::vector<svg::Series> series;
    for (std::size_t c = 0; c < t.columns.size(); ++c) series.push_back({t.columns[c], {}, {}, svg::palette(c)});
    for (std::size_t r = 0; r < counts.size(); ++r) {
      os << format_real(t.openness[r]);
      for (std::size_t c = 0; c < t.columns.size(); ++c) {
        os << ',' << format_real(t.f1[r][c]);
        series[c].x.push_back(t.openness[r]);
        series[c].y.push_back(t.f1[r][c]);
      }
      os << '\n';
    }
    svg::write((dir / "plots" / "ablation.svg").string(), svg::lines(series, "macro-F1 by baseline", "openness", "F1"));
  }
  return t;
}

// ---------------------------------------------------------------- cross-class validation

struct GridPoint {
  double tau = 2.0;
  double lambda = 1.0;
  friend bool operator==(const GridPoint&, const GridPoint&) = default;
};

struct GridScore {
  GridPoint point;
  std::vector<double> fold_f1;
  double mean_f1 = 0.0;
};

struct XcvResult {
  GridPoint best;
  std::vector<GridScore> scores;  // grid order
  std::vector<std::vector<int>> held_out;  // per fold, original class ids
};

/// Each fold holds out max(1, |Y|/4) randomly chosen known classes as
/// pseudo-unknowns, trains a short pipeline per grid point on the rest and
/// scores macro-F1 on a validation split plus the held-out classes. The grid
/// point with the best mean wins; ties go to the earliest.
inline XcvResult cross_class_validate(const LabeledDataset& data, const std::vector<GridPoint>& grid,
                                      const ExperimentConfig& cfg, int folds = 3) {
  require(data.class_count >= 3, "cross-class validation needs at least 3 known classes");
  require(!grid.empty(), "cross-class validation grid is empty");
  require(folds >= 1, "folds must be >= 1");
  const int k = data.class_count;
  const auto hold = static_cast<std::size_t>(std::max(1, k / 4));

  XcvResult res;
  for (const auto& g : grid) res.scores.push_back({g, {}, 0.0});
  for (int f = 0; f < folds; ++f) {
    Rng rng(derive_seed(cfg.seed, 30 + static_cast<std::uint64_t>(f)));
    std::vector<int> classes(static_cast<std::size_t>(k));
    std::iota(classes.begin(), classes.end(), 0);
    std::shuffle(classes.begin(), classes.end(), rng);
    std::vector<int> held(classes.begin(), classes.begin() + static_cast<std::ptrdiff_t>(hold));
    std::vector<int> known(classes.begin() + static_cast<std::ptrdiff_t>(hold), classes.end());
    std::sort(held.begin(), held.end());
    std::sort(known.begin(), known.end());
    res.held_out.push_back(held);

    const auto [tr, val] = train_test_split(data, cfg.data.test_fraction, derive_seed(cfg.seed, 40 + static_cast<std::uint64_t>(f)));
    const auto trs = split_known_unknown(tr, known);
    const auto vals = split_known_unknown(val, known);
    for (auto& s : res.scores) {
      ExperimentConfig c = cfg;
      c.epochs = cfg.xcv_epochs;
      c.distill.tau = s.point.tau;
      c.lambda = s.point.lambda;
      c.seed = derive_seed(cfg.seed, 50 + static_cast<std::uint64_t>(f));
      const auto m = train_models(c, trs.known);
      s.fold_f1.push_back(evaluate(m.student, m.thresholds, vals.known, vals.unknown, c.auroc_score).f1.macro_f1);
    }
  }
  std::size_t best = 0;
  for (std::size_t i = 0; i < res.scores.size(); ++i) {
    auto& s = res.scores[i];
    s.mean_f1 = std::accumulate(s.fold_f1.begin(), s.fold_f1.end(), 0.0) / static_cast<double>(s.fold_f1.size());
    if (s.mean_f1 > res.scores[best].mean_f1) best = i;
  }
  res.best = res.scores[best].point;
  return res;
}

inline void write_xcv_csv(const XcvResult& r, const std::string& path) {
  std::ofstream os(path);
  require(static_cast<bool>(os), "cannot open '" + path + "' for writing");
  os << "tau,lambda,mean_f1";
  const std::size_t folds = r.scores.empty() ? 0 : r.scores.front().fold_f1.size();
  for (std::size_t f = 0; f < folds; ++f) os << ",fold" << f;
  os << '\n';
  for (const auto& s : r.scores) {
    os << format_real(s.point.tau) << ',' << format_real(s.point.lambda) << ',' << format_real(s.mean_f1);
    for (double v : s.fold_f1) os << ',' << format_real(v);
    os << '\n';
  }
}

}  // namespace tes
