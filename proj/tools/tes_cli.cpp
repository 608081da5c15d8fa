// Command-line front end for the open set recognition pipeline.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "tes/harness.hpp"

namespace fs = std::filesystem;
using namespace tes;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
};

ExperimentConfig resolve(const Globals& g) {
  ExperimentConfig c = g.config.empty() ? ExperimentConfig{} : load_config(g.config);
  if (g.seed) c.seed = *g.seed;
  return c;
}

std::string ckpt_dir(const Globals& g) {
  fs::create_directories(fs::path(g.out) / "checkpoints");
  return (fs::path(g.out) / "checkpoints").string();
}

std::vector<std::size_t> parse_counts(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok = detail::trim(tok);
    if (tok.empty()) continue;
    std::size_t used = 0;
    const auto v = std::stoul(tok, &used);
    require(used == tok.size(), "bad count '" + tok + "'");
    out.push_back(v);
  }
  return out;
}

void print_report(const EvalReport& r) {
  std::printf("openness %.4f  macro-F1 %.4f  AUROC %s\n", r.openness, r.f1.macro_f1,
              std::isnan(r.auroc) ? "n/a" : std::to_string(r.auroc).c_str());
}

void warn_unrecognized(const std::vector<std::size_t>& classes) {
  if (classes.empty()) return;
  std::string ids;
  for (auto c : classes) ids += (ids.empty() ? "" : ", ") + std::to_string(c);
  std::fprintf(stderr, "warning: no training sample of class(es) %s is classified correctly; they are never predicted\n",
               ids.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Teacher-explorer-student open set recognition"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "experiment config (JSON)")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "override the config seed");
  app.add_option("--out", g.out, "output directory");

  auto* gen = app.add_subcommand("gen-data", "write the configured train/test/unknown sets as CSV");
  auto* teach = app.add_subcommand("train-teacher", "train the teacher and save checkpoints/teacher.ckpt");
  auto* dist = app.add_subcommand("distill", "compute distilled targets from a saved teacher");
  std::string teacher_path;
  dist->add_option("--teacher", teacher_path, "teacher checkpoint (default <out>/checkpoints/teacher.ckpt)");
  auto* train = app.add_subcommand("train", "joint teacher/explorer/student training");
  train->add_option("--teacher", teacher_path, "reuse a saved teacher instead of training one");
  auto* calib = app.add_subcommand("calibrate", "calibrate thresholds for a saved student");
  double coverage = -1.0;
  bool uncertainty = false;
  calib->add_option("--coverage", coverage, "per-class accept fraction (default from config)");
  calib->add_flag("--use-uncertainty", uncertainty, "also gate on p_U");
  auto* eval = app.add_subcommand("eval", "evaluate a saved student and thresholds");
  auto* sweep = app.add_subcommand("sweep-openness", "F1 against growing unknown sets");
  std::string counts = "1";
  sweep->add_option("--counts", counts, "comma-separated unknown class counts");
  auto* abl = app.add_subcommand("ablate", "OVRN, T/S, E/S and T/E/S baselines with CD and CDU rules");
  std::string abl_counts;
  abl->add_option("--counts", abl_counts, "comma-separated unknown class counts (default: 1..pool)");
  auto* xcv = app.add_subcommand("xcv", "cross-class validation over (tau, lambda)");
  std::vector<double> taus{1.0, 2.0, 5.0}, lambdas{0.1, 1.0, 10.0};
  int folds = -1;
  xcv->add_option("--taus", taus, "temperature candidates")->delimiter(',');
  xcv->add_option("--lambdas", lambdas, "lambda candidates")->delimiter(',');
  xcv->add_option("--folds", folds, "fold count (default from config)");
  auto* run = app.add_subcommand("run", "the full pipeline: train, calibrate, evaluate, report");

  CLI11_PARSE(app, argc, argv);

  try {
    const auto cfg = resolve(g);
    cfg.validate();
    const fs::path out = g.out;
    fs::create_directories(out);

    if (*gen) {
      const auto d = prepare_data(cfg);
      fs::create_directories(out / "data");
      save_dataset(d.train, (out / "data" / "train.csv").string());
      save_dataset(d.test, (out / "data" / "test.csv").string());
      save_dataset(d.unknown, (out / "data" / "unknown.csv").string());
      std::printf("train %zu  test %zu  unknown %zu rows -> %s\n", d.train.size(), d.test.size(), d.unknown.size(),
                  (out / "data").c_str());
    } else if (*teach) {
      const auto d = prepare_data(cfg);
      const auto t = train_teacher_stage(cfg, d.train);
      const auto path = fs::path(ckpt_dir(g)) / "teacher.ckpt";
      save_checkpoint(path.string(), t);
      std::printf("teacher train accuracy %.4f -> %s\n", accuracy(t, d.train), path.c_str());
    } else if (*dist) {
      const auto d = prepare_data(cfg);
      const auto path = teacher_path.empty() ? (out / "checkpoints" / "teacher.ckpt").string() : teacher_path;
      const auto t = load_checkpoint(path);
      const auto targets = distill_targets(t, d.train, cfg.distill);
      save_distilled(targets, (out / "distilled.csv").string());
      std::printf("%zu distilled targets -> %s\n", targets.size(), (out / "distilled.csv").c_str());
    } else if (*train) {
      const auto d = prepare_data(cfg);
      std::optional<Model> teacher;
      if (cfg.use_teacher) teacher = teacher_path.empty() ? train_teacher_stage(cfg, d.train) : load_checkpoint(teacher_path);
      const auto m = train_models(cfg, d.train, fake_dumper(cfg, out, d.train), teacher ? &*teacher : nullptr);
      write_metrics_csv(m.record, (out / "metrics.csv").string());
      save_models((fs::path(ckpt_dir(g)) / "models.ckpt").string(), m);
      save_thresholds(m.thresholds, (out / "thresholds.txt").string());
      fs::create_directories(out / "plots");
      if (!m.record.epochs.empty()) plot_losses(m.record, (out / "plots" / "losses.svg").string());
      warn_unrecognized(m.unrecognized);
      std::printf("%zu epochs -> %s\n", m.record.epochs.size(), (out / "metrics.csv").c_str());
    } else if (*calib) {
      const auto d = prepare_data(cfg);
      const auto m = load_models((out / "checkpoints" / "models.ckpt").string(), cfg);
      const auto th = calibrate_thresholds(m.student, d.train, coverage > 0 ? coverage : cfg.coverage,
                                           uncertainty || cfg.use_uncertainty);
      save_thresholds(th, (out / "thresholds.txt").string());
      std::printf("thresholds -> %s\n", (out / "thresholds.txt").c_str());
    } else if (*eval) {
      const auto d = prepare_data(cfg);
      const auto m = load_models((out / "checkpoints" / "models.ckpt").string(), cfg);
      const auto th = load_thresholds((out / "thresholds.txt").string());
      std::vector<Prediction> preds;
      const auto rep = evaluate(m.student, th, d.test, d.unknown, cfg.auroc_score, &preds);
      save_predictions(preds, (out / "predictions.csv").string());
      std::ofstream os(out / "report.json");
      os << json{{"config", config_to_json(cfg)}, {"evaluation", report_to_json(rep)}}.dump(2) << '\n';
      print_report(rep);
    } else if (*sweep) {
      for (const auto& r : sweep_openness(cfg, parse_counts(counts), out.string()))
        std::printf("unknown classes %zu  openness %.4f  macro-F1 %.4f\n", r.unknown_classes, r.openness, r.macro_f1);
    } else if (*abl) {
      const auto t = ablate(cfg, parse_counts(abl_counts), out.string());
      std::printf("%zu rows x %zu baselines -> %s\n", t.openness.size(), t.columns.size(), (out / "ablation.csv").c_str());
    } else if (*xcv) {
      std::vector<GridPoint> grid;
      for (double t : taus)
        for (double l : lambdas) grid.push_back({t, l});
      const auto d = prepare_data(cfg);
      const auto r = cross_class_validate(d.train, grid, cfg, folds > 0 ? folds : cfg.xcv_folds);
      write_xcv_csv(r, (out / "xcv.csv").string());
      std::printf("best tau %g lambda %g\n", r.best.tau, r.best.lambda);
    } else if (*run) {
      const auto r = run_experiment(cfg, out.string());
      warn_unrecognized(r.models.unrecognized);
      print_report(r.report);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
