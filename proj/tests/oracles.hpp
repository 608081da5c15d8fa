#pragma once

// Test-only reference computations. None of these call into the code paths
// they are used to check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "tes/nn.hpp"

namespace tes::oracle {

/// Central finite difference of `loss` with respect to every entry of every
/// parameter of `model` (perturbed in place and restored).
inline GradMap finite_difference(Model& model, const std::function<double()>& loss, double h = 1e-5) {
  GradMap out;
  for (auto& p : model.params) {
    Tensor g(p.value.shape(), 0.0);
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double orig = p.value[i];
      p.value[i] = orig + h;
      const double up = loss();
      p.value[i] = orig - h;
      const double down = loss();
      p.value[i] = orig;
      g[i] = (up - down) / (2.0 * h);
    }
    out.emplace(p.name, std::move(g));
  }
  return out;
}

/// Central finite difference with respect to the entries of a free tensor.
inline Tensor finite_difference(Tensor& x, const std::function<double()>& loss, double h = 1e-5) {
  Tensor g(x.shape(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double up = loss();
    x[i] = orig - h;
    const double down = loss();
    x[i] = orig;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// |a - n| / max(|a|, |n|), with the denominator floored so entries that are
/// zero up to round-off do not dominate.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

inline double max_relative_error(const Tensor& a, const Tensor& n) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, relative_error(a[i], n[i]));
  return worst;
}

inline double max_relative_error(const GradMap& analytic, const GradMap& numeric) {
  double worst = 0.0;
  for (const auto& [name, n] : numeric) worst = std::max(worst, max_relative_error(analytic.at(name), n));
  return worst;
}

/// O(n^2) pair counting: P(known > unknown) + 0.5 P(tie).
inline double auroc_pairs(const std::vector<double>& scores, const std::vector<bool>& is_known) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!is_known[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (is_known[j]) continue;
      den += 1.0;
      if (scores[i] > scores[j]) num += 1.0;
      else if (scores[i] == scores[j]) num += 0.5;
    }
  }
  return num / den;
}

/// Adam recurrence for a scalar parameter under a gradient sequence.
inline std::vector<double> adam_scalar(double w, const std::vector<double>& grads, double lr = 0.002, double b1 = 0.9,
                                       double b2 = 0.999, double eps = 1e-8) {
  std::vector<double> traj;
  double m = 0.0, v = 0.0;
  for (std::size_t t = 1; t <= grads.size(); ++t) {
    const double g = grads[t - 1];
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, double(t)));
    const double vh = v / (1 - std::pow(b2, double(t)));
    w -= lr * mh / (std::sqrt(vh) + eps);
    traj.push_back(w);
  }
  return traj;
}

}  // namespace tes::oracle
