#pragma once

// Teacher training and hint-extracting distillation: the teacher's
// temperature-scaled target probability decides how much of each training
// sample's target mass is moved onto the unknown slot.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "tes/data.hpp"
#include "tes/losses.hpp"
#include "tes/nn.hpp"
#include "tes/rng.hpp"

namespace tes {

/// Index of the largest entry; ties go to the lowest index.
inline std::size_t argmax(std::span<const double> v) {
  require(!v.empty(), "argmax of an empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i)
    if (v[i] > v[best]) best = i;
  return best;
}

inline Tensor one_hot(const std::vector<int>& labels, std::size_t classes) {
  Tensor t = Tensor::matrix(labels.size(), classes);
  for (std::size_t r = 0; r < labels.size(); ++r) t.at(r, static_cast<std::size_t>(labels[r])) = 1.0;
  return t;
}

/// Softmax of logits / tau.
inline std::vector<double> temperature_scale(std::span<const double> logits, double tau) {
  require(tau > 0.0, "temperature must be > 0");
  require(!logits.empty(), "temperature_scale of an empty logit vector");
  double mx = logits[0];
  for (double l : logits) mx = std::max(mx, l);
  std::vector<double> q(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    q[i] = std::exp((logits[i] - mx) / tau);
    sum += q[i];
  }
  for (double& v : q) v /= sum;
  return q;
}

/// Mean categorical cross-entropy of a softmax network over `data`.
inline double teacher_loss(const Model& teacher, const LabeledDataset& data) {
  const auto probs = predict(teacher, data.features);
  return categorical_cross_entropy(probs, one_hot(data.labels, teacher.out_dim()));
}

inline double accuracy(const Model& classifier, const LabeledDataset& data) {
  if (data.size() == 0) return 0.0;
  const auto out = predict(classifier, data.features);
  std::size_t hits = 0;
  for (std::size_t r = 0; r < data.size(); ++r)
    if (static_cast<int>(argmax(out.row(r))) == data.labels[r]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

/// Trains a softmax classifier with categorical cross-entropy and Adam.
/// `epoch_losses`, when given, receives the mean batch loss of every epoch.
inline Model train_teacher(const LabeledDataset& data, const NetworkSpec& spec, int epochs, const AdamConfig& adam,
                           std::uint64_t seed, std::size_t batch_size = 64,
                           std::vector<double>* epoch_losses = nullptr) {
  validate(spec);
  require(spec.back().kind == LayerKind::softmax, "teacher network must end in softmax");
  require(output_dim(spec) == static_cast<std::size_t>(data.class_count), "teacher output width must equal class count");
  require(data.class_count >= 2, "teacher needs at least two classes");
  data.validate(/*require_all_classes=*/true);
  require(epochs >= 0, "epochs must be >= 0");
  adam.validate();

  Rng init_rng(derive_seed(seed, 0));
  Model model(spec, init_rng);
  model.adam = adam;
  Rng batch_rng(derive_seed(seed, 1));
  const Tensor targets = one_hot(data.labels, model.out_dim());
  for (int e = 0; e < epochs; ++e) {
    double sum = 0.0;
    const auto batches = epoch_batches(data.size(), batch_size, batch_rng);
    for (const auto& idx : batches) {
      const Tensor x = data.features.gather_rows(idx);
      const Tensor t = targets.gather_rows(idx);
      const auto trace = forward(model, x);
      sum += categorical_cross_entropy(trace.output(), t);
      const auto grads = backward(model, trace, categorical_cross_entropy_grad(trace.output(), t));
      adam_step(model, grads.params, adam);
    }
    if (epoch_losses) epoch_losses->push_back(sum / static_cast<double>(batches.size()));
  }
  return model;
}

struct CorrectnessPartition {
  std::vector<std::size_t> correct;       // D_c
  std::vector<std::size_t> misclassified; // D_m
};

inline CorrectnessPartition partition_by_correctness(const Model& teacher, const LabeledDataset& data) {
  require_dims(teacher.out_dim() == static_cast<std::size_t>(data.class_count),
               "teacher output width does not match the dataset's class count");
  CorrectnessPartition p;
  if (data.size() == 0) return p;
  const auto out = predict(teacher, data.features);
  for (std::size_t r = 0; r < data.size(); ++r)
    (static_cast<int>(argmax(out.row(r))) == data.labels[r] ? p.correct : p.misclassified).push_back(r);
  return p;
}

struct DistillConfig {
  double tau = 2.0;
  double q_min = 0.7;

  void validate() const {
    require(tau > 0.0, "distillation temperature must be > 0");
    require(q_min > 0.5 && q_min < 1.0, "q_min must lie in (0.5, 1)");
  }
};

/// Per-sample student target over the known classes followed by the unknown slot.
struct DistilledTarget {
  std::vector<double> q;  // length |Y| + 1
  int target_class = 0;

  double target() const { return q[static_cast<std::size_t>(target_class)]; }
  double unknown() const { return q.back(); }
};

inline DistilledTarget make_target(int target_class, double q_target, std::size_t known_classes) {
  DistilledTarget d;
  d.q.assign(known_classes + 1, 0.0);
  d.target_class = target_class;
  d.q[static_cast<std::size_t>(target_class)] = q_target;
  d.q.back() = 1.0 - q_target;
  return d;
}

/// Number of distill_targets calls made by this process.
inline std::atomic<std::size_t>& distill_invocations() {
  static std::atomic<std::size_t> n{0};
  return n;
}

/// Min-max position of `v` within [lo, hi]; 1 when the range is degenerate.
inline double minmax_position(double v, double lo, double hi) { return hi > lo ? (v - lo) / (hi - lo) : 1.0; }

inline std::vector<DistilledTarget> distill_targets(const Model& teacher, const LabeledDataset& data,
                                                    const DistillConfig& cfg) {
  cfg.validate();
  ++distill_invocations();
  require_dims(teacher.out_dim() == static_cast<std::size_t>(data.class_count),
               "teacher output width does not match the dataset's class count");
  const auto k = static_cast<std::size_t>(data.class_count);
  std::vector<DistilledTarget> out;
  if (data.size() == 0) return out;

  const auto trace = forward(teacher, data.features);
  const Tensor& logits = trace.spec.back().kind == LayerKind::softmax ? trace.pre_activation() : trace.output();
  std::vector<double> scaled(data.size());
  std::vector<bool> correct(data.size());
  double lo = 0.0, hi = 0.0;
  bool any = false;
  for (std::size_t r = 0; r < data.size(); ++r) {
    const auto t = static_cast<std::size_t>(data.labels[r]);
    const auto q = temperature_scale(logits.row(r), cfg.tau);
    scaled[r] = q[t];
    correct[r] = argmax(trace.output().row(r)) == t;
    if (!correct[r]) continue;
    lo = any ? std::min(lo, q[t]) : q[t];
    hi = any ? std::max(hi, q[t]) : q[t];
    any = true;
  }
  require(any, "teacher classifies no training sample correctly; distillation undefined");

  out.reserve(data.size());
  for (std::size_t r = 0; r < data.size(); ++r) {
    const double qt = correct[r] ? cfg.q_min + (1.0 - cfg.q_min) * minmax_position(scaled[r], lo, hi) : cfg.q_min;
    out.push_back(make_target(data.labels[r], qt, k));
  }
  return out;
}

/// Hard targets (1 on the label, 0 on the unknown slot), used when no teacher is present.
inline std::vector<DistilledTarget> hard_targets(const LabeledDataset& data) {
  std::vector<DistilledTarget> out;
  out.reserve(data.size());
  for (int l : data.labels) out.push_back(make_target(l, 1.0, static_cast<std::size_t>(data.class_count)));
  return out;
}

inline void save_distilled(const std::vector<DistilledTarget>& targets, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw DataFormatError("cannot open '" + path + "' for writing");
  os << "index,target_class,q_target,q_unknown\n";
  for (std::size_t i = 0; i < targets.size(); ++i)
    os << i << ',' << targets[i].target_class << ',' << format_real(targets[i].target()) << ','
       << format_real(targets[i].unknown()) << '\n';
}

inline std::vector<DistilledTarget> load_distilled(const std::string& path, std::size_t known_classes) {
  std::ifstream is(path);
  if (!is) throw DataFormatError("cannot open distilled targets '" + path + "'");
  std::string line;
  std::getline(is, line);
  if (detail::trim(line) != "index,target_class,q_target,q_unknown")
    throw DataFormatError(path + ":1: unexpected header");
  std::vector<DistilledTarget> out;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_csv(detail::trim(line));
    const std::string where = path + ":" + std::to_string(lineno);
    if (cells.size() != 4) throw DataFormatError(where + ": expected 4 fields");
    try {
      const auto idx = std::stoull(cells[0]);
      if (idx != out.size()) throw DataFormatError(where + ": indices must be consecutive from 0");
      const int cls = std::stoi(cells[1]);
      if (cls < 0 || static_cast<std::size_t>(cls) >= known_classes) throw DataFormatError(where + ": class out of range");
      auto t = make_target(cls, std::stod(cells[2]), known_classes);
      t.q.back() = std::stod(cells[3]);
      out.push_back(std::move(t));
    } catch (const DataFormatError&) {
      throw;
    } catch (const std::exception&) {
      throw DataFormatError(where + ": malformed row");
    }
  }
  return out;
}

}  // namespace tes
