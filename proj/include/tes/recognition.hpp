#pragma once

// Collective-decision scoring, per-class threshold calibration and the open
// set decision rule.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "tes/data.hpp"
#include "tes/student.hpp"

namespace tes {

/// cds_y = l_y - (1/|Y|) * sum of the other |Y| logits (knowns and U alike).
inline std::vector<double> collective_decision_scores(std::span<const double> logits) {
  require(logits.size() >= 2, "collective decision scores need |Y| >= 1 plus the unknown slot");
  const double k = static_cast<double>(logits.size() - 1);
  double total = 0.0;
  for (double l : logits) total += l;
  std::vector<double> cds(logits.size());
  for (std::size_t y = 0; y < logits.size(); ++y) cds[y] = logits[y] - (total - logits[y]) / k;
  return cds;
}

struct Thresholds {
  std::vector<double> eps_cds;  // |Y|+1 entries, unknown last (0 by default)
  double eps_u = 1.0;
  bool use_uncertainty = false;

  std::size_t unknown_index() const { return eps_cds.size() - 1; }
};

struct Prediction {
  int label = 0;  // |Y| encodes unknown
  std::vector<double> cds;
  double p_u = 0.0;
};

/// Lower empirical quantile: the element at floor(q * (n-1)) of the sorted values.
inline double lower_quantile(std::vector<double> values, double q) {
  require(!values.empty(), "quantile of an empty set");
  require(q >= 0.0 && q <= 1.0, "quantile level must lie in [0,1]");
  std::sort(values.begin(), values.end());
  const auto idx = static_cast<std::size_t>(std::floor(q * static_cast<double>(values.size() - 1)));
  return values[idx];
}

/// Scores for a batch: logits, sigmoid outputs and collective decision scores.
struct StudentScores {
  Tensor logits;
  Tensor probs;
  Tensor cds;
};

inline StudentScores score_batch(const StudentModel& student, const Tensor& x) {
  StudentScores s;
  if (x.rows() == 0) {
    s.logits = s.probs = s.cds = Tensor::matrix(0, student.head_count());
    return s;
  }
  auto t = student_forward(student, x);
  s.logits = std::move(t.logits);
  s.probs = std::move(t.probs);
  s.cds = Tensor::matrix(x.rows(), student.head_count());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const auto c = collective_decision_scores(s.logits.row(r));
    std::copy(c.begin(), c.end(), s.cds.row(r).begin());
  }
  return s;
}

/// Decision rule on precomputed scores.
inline Prediction decide(std::span<const double> cds, double p_u, const Thresholds& th) {
  require_dims(cds.size() == th.eps_cds.size(), "score vector and thresholds differ in length");
  Prediction p;
  p.cds.assign(cds.begin(), cds.end());
  p.p_u = p_u;
  const auto u = static_cast<int>(th.unknown_index());
  const auto best = argmax(cds);
  bool accept = cds[best] > th.eps_cds[best];
  if (th.use_uncertainty) accept = accept && p_u < th.eps_u;
  p.label = accept ? static_cast<int>(best) : u;
  return p;
}

inline Prediction predict(const StudentModel& student, const Thresholds& th, std::span<const double> x) {
  Tensor batch({1, x.size()}, std::vector<double>(x.begin(), x.end()));
  const auto s = score_batch(student, batch);
  return decide(s.cds.row(0), s.probs.at(0, student.unknown_index()), th);
}

inline std::vector<Prediction> predict_batch(const StudentModel& student, const Thresholds& th, const Tensor& x) {
  const auto s = score_batch(student, x);
  std::vector<Prediction> out;
  out.reserve(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r)
    out.push_back(decide(s.cds.row(r), s.probs.at(r, student.unknown_index()), th));
  return out;
}

struct CalibrationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Per-class cds thresholds from training data.
///
/// For class y the candidate scores are cds_y of the class-y samples; samples
/// whose argmax is not y can never be accepted and count as -inf. The
/// threshold is the lower (1 - coverage) quantile of that list, so at least
/// `coverage` of the class (up to one sample of granularity) ends up accepted
/// and correctly classified. The unknown threshold is 0 and eps_U is chosen so
/// that `coverage` of all training samples satisfy p_U < eps_U.
///
/// A class that no training sample reaches by argmax is an error, unless
/// `unrecognized` is given: then its threshold is +inf (never accepted) and
/// the class id is appended there.
inline Thresholds calibrate_thresholds(const StudentModel& student, const LabeledDataset& train, double coverage = 0.95,
                                       bool use_uncertainty = false,
                                       std::vector<std::size_t>* unrecognized = nullptr) {
  require(coverage > 0.0 && coverage < 1.0, "coverage must lie in (0,1)");
  require_dims(student.known_classes() == static_cast<std::size_t>(train.class_count),
               "student head count does not match the training classes");
  train.validate(/*require_all_classes=*/true);
  const auto s = score_batch(student, train.features);
  const std::size_t k = student.known_classes();

  Thresholds th;
  th.use_uncertainty = use_uncertainty;
  th.eps_cds.assign(k + 1, 0.0);
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  for (std::size_t y = 0; y < k; ++y) {
    std::vector<double> scores;
    double min_correct = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < train.size(); ++r) {
      if (static_cast<std::size_t>(train.labels[r]) != y) continue;
      if (argmax(s.cds.row(r)) == y) {
        scores.push_back(s.cds.at(r, y));
        min_correct = std::min(min_correct, s.cds.at(r, y));
      } else {
        scores.push_back(kNegInf);
      }
    }
    if (!std::isfinite(min_correct) && unrecognized) {
      th.eps_cds[y] = std::numeric_limits<double>::infinity();
      unrecognized->push_back(y);
      continue;
    }
    if (!std::isfinite(min_correct))
      throw CalibrationError("class " + std::to_string(y) + ": no training sample is assigned to it by argmax cds; " +
                             "the model cannot recognize this class");
    const double q = lower_quantile(scores, 1.0 - coverage);
    // Too many misassigned samples: accept every correctly assigned one.
    th.eps_cds[y] = std::isfinite(q) ? q : std::nextafter(min_correct, kNegInf);
  }

  std::vector<double> pu(train.size());
  for (std::size_t r = 0; r < train.size(); ++r) pu[r] = s.probs.at(r, k);
  std::sort(pu.begin(), pu.end());
  // Smallest cut with at least ceil(coverage * n) samples strictly below it.
  const auto need = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(coverage * static_cast<double>(pu.size()))));
  th.eps_u = std::nextafter(pu[need - 1], std::numeric_limits<double>::infinity());
  return th;
}

inline void save_thresholds(const Thresholds& th, std::ostream& os) {
  os << "# class eps_cds (last class is unknown)\n";
  for (std::size_t y = 0; y < th.eps_cds.size(); ++y) os << "class " << y << ' ' << format_real(th.eps_cds[y]) << '\n';
  os << "eps_u " << format_real(th.eps_u) << '\n';
  os << "use_uncertainty " << (th.use_uncertainty ? 1 : 0) << '\n';
}

inline void save_thresholds(const Thresholds& th, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw DataFormatError("cannot open '" + path + "' for writing");
  save_thresholds(th, os);
}

inline Thresholds load_thresholds(std::istream& is, const std::string& origin = "<stream>") {
  Thresholds th;
  bool have_u = false, have_flag = false;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    line = detail::trim(line);
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::string key;
    ss >> key;
    const std::string where = origin + ":" + std::to_string(lineno);
    if (key == "class") {
      std::size_t y = 0;
      std::string v;
      if (!(ss >> y >> v) || y != th.eps_cds.size()) throw DataFormatError(where + ": bad class line");
      th.eps_cds.push_back(std::strtod(v.c_str(), nullptr));
    } else if (key == "eps_u") {
      std::string v;
      if (!(ss >> v)) throw DataFormatError(where + ": bad eps_u line");
      th.eps_u = std::strtod(v.c_str(), nullptr);
      have_u = true;
    } else if (key == "use_uncertainty") {
      int f = 0;
      if (!(ss >> f) || (f != 0 && f != 1)) throw DataFormatError(where + ": bad use_uncertainty line");
      th.use_uncertainty = f == 1;
      have_flag = true;
    } else {
      throw DataFormatError(where + ": unknown key '" + key + "'");
    }
  }
  if (th.eps_cds.size() < 2 || !have_u || !have_flag) throw DataFormatError(origin + ": incomplete thresholds file");
  return th;
}

inline Thresholds load_thresholds(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataFormatError("cannot open thresholds '" + path + "'");
  return load_thresholds(is, path);
}

inline void save_predictions(const std::vector<Prediction>& preds, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw DataFormatError("cannot open '" + path + "' for writing");
  os << "index,predicted_label";
  const std::size_t h = preds.empty() ? 0 : preds.front().cds.size();
  for (std::size_t c = 0; c < h; ++c) os << ",cds" << c;
  os << ",p_u\n";
  for (std::size_t i = 0; i < preds.size(); ++i) {
    os << i << ',' << preds[i].label;
    for (double v : preds[i].cds) os << ',' << format_real(v);
    os << ',' << format_real(preds[i].p_u) << '\n';
  }
}

}  // namespace tes
