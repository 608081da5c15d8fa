#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "tes/tensor.hpp"

namespace tes {

/// 1 - sqrt(2 C_T / (C_E + C_R)).
inline double openness(int trained, int evaluated, int recognized) {
  require(trained >= 1, "openness: C_T must be >= 1");
  require(evaluated >= 0 && recognized >= 0 && evaluated + recognized > 0, "openness: C_E + C_R must be > 0");
  require(2 * trained <= evaluated + recognized, "openness: 2 C_T must not exceed C_E + C_R");
  return 1.0 - std::sqrt(2.0 * trained / static_cast<double>(evaluated + recognized));
}

struct ClassScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t support = 0;  // true count
  bool absent = false;      // neither predicted nor present
};

struct F1Report {
  std::vector<std::vector<std::size_t>> confusion;  // [truth][pred]
  std::vector<ClassScores> per_class;
  double macro_f1 = 0.0;
};

/// Macro-averaged F1 over `classes` labels (knowns plus unknown). Classes that
/// never occur in either list score F1 = 0 and are flagged `absent`.
inline F1Report macro_f1(std::span<const int> preds, std::span<const int> truth, std::size_t classes) {
  require(preds.size() == truth.size(), "macro_f1: prediction and truth lengths differ");
  require(classes >= 1, "macro_f1: need at least one class");
  F1Report rep;
  rep.confusion.assign(classes, std::vector<std::size_t>(classes, 0));
  for (std::size_t i = 0; i < preds.size(); ++i) {
    require(preds[i] >= 0 && static_cast<std::size_t>(preds[i]) < classes &&
                truth[i] >= 0 && static_cast<std::size_t>(truth[i]) < classes,
            "macro_f1: label outside [0, classes)");
    ++rep.confusion[static_cast<std::size_t>(truth[i])][static_cast<std::size_t>(preds[i])];
  }
  double sum = 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    std::size_t tp = rep.confusion[c][c], fp = 0, fn = 0;
    for (std::size_t o = 0; o < classes; ++o) {
      if (o == c) continue;
      fp += rep.confusion[o][c];
      fn += rep.confusion[c][o];
    }
    ClassScores s;
    s.support = tp + fn;
    s.absent = tp + fp + fn == 0;
    s.precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    s.recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    s.f1 = 2 * tp + fp + fn ? 2.0 * tp / static_cast<double>(2 * tp + fp + fn) : 0.0;
    sum += s.f1;
    rep.per_class.push_back(s);
  }
  rep.macro_f1 = sum / static_cast<double>(classes);
  return rep;
}

/// P(score_known > score_unknown) + 0.5 P(tie), by sorting and midranks.
inline double auroc(std::span<const double> scores, const std::vector<bool>& is_known) {
  require(scores.size() == is_known.size(), "auroc: scores and labels differ in length");
  const auto n_pos = static_cast<std::size_t>(std::count(is_known.begin(), is_known.end(), true));
  const std::size_t n_neg = scores.size() - n_pos;
  require(n_pos > 0 && n_neg > 0, "auroc needs both known and unknown samples");
  for (double s : scores) require(!std::isnan(s), "auroc: NaN score");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Count (pos, neg) pairs with pos > neg, ties weighted 1/2, in doubled units
  // so the result is exact.
  std::size_t negs_below = 0, doubled = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i, pos = 0, neg = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (is_known[order[j]] ? pos : neg) += 1;
      ++j;
    }
    doubled += pos * (2 * negs_below + neg);
    negs_below += neg;
    i = j;
  }
  return static_cast<double>(doubled) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

}  // namespace tes
