#pragma once

// Cross-entropy losses and their gradients with respect to the network output
// (probabilities). Probabilities are clamped to [kProbFloor, 1 - kProbFloor]
// before any log.

#include <cmath>
#include <span>
#include <vector>

#include "tes/tensor.hpp"

namespace tes {

inline constexpr double kProbFloor = 1e-12;

inline double clamp_prob(double p) { return std::min(std::max(p, kProbFloor), 1.0 - kProbFloor); }

namespace detail {

inline void check_pair(const Tensor& preds, const Tensor& targets, const char* what) {
  require_dims(preds.rank() == 2 && preds.same_shape(targets),
               std::string(what) + ": prediction shape " + preds.shape_string() + " vs target shape " +
                   targets.shape_string());
}

}  // namespace detail

/// Mean over rows of -sum_y t_y log p_y with one-hot targets.
inline double categorical_cross_entropy(const Tensor& probs, const Tensor& targets) {
  detail::check_pair(probs, targets, "categorical_cross_entropy");
  const std::size_t n = probs.rows();
  require(n > 0, "categorical_cross_entropy on an empty batch");
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    auto p = probs.row(r);
    auto t = targets.row(r);
    double psum = 0.0;
    int ones = 0;
    for (std::size_t c = 0; c < p.size(); ++c) {
      psum += p[c];
      if (t[c] == 1.0) ++ones;
      else require(t[c] == 0.0, "categorical_cross_entropy targets must be one-hot");
      if (t[c] == 1.0) total -= std::log(clamp_prob(p[c]));
    }
    require(ones == 1, "categorical_cross_entropy target row " + std::to_string(r) + " is not one-hot");
    require(std::abs(psum - 1.0) <= 1e-6, "categorical_cross_entropy probability row does not sum to 1");
  }
  return total / static_cast<double>(n);
}

inline Tensor categorical_cross_entropy_grad(const Tensor& probs, const Tensor& targets) {
  detail::check_pair(probs, targets, "categorical_cross_entropy_grad");
  const double inv_n = 1.0 / static_cast<double>(probs.rows());
  Tensor g(probs.shape(), 0.0);
  for (std::size_t i = 0; i < g.size(); ++i)
    if (targets[i] != 0.0) g[i] = -targets[i] * inv_n / clamp_prob(probs[i]);
  return g;
}

/// Per-row BCE summed over outputs: -sum_c [q log p + (1-q) log(1-p)].
inline std::vector<double> binary_cross_entropy_rows(const Tensor& preds, const Tensor& targets) {
  detail::check_pair(preds, targets, "binary_cross_entropy");
  std::vector<double> out(preds.rows(), 0.0);
  for (std::size_t r = 0; r < preds.rows(); ++r) {
    auto p = preds.row(r);
    auto q = targets.row(r);
    double s = 0.0;
    for (std::size_t c = 0; c < p.size(); ++c) {
      require(q[c] >= 0.0 && q[c] <= 1.0, "binary_cross_entropy targets must lie in [0,1]");
      const double pc = clamp_prob(p[c]);
      if (q[c] > 0.0) s -= q[c] * std::log(pc);
      if (q[c] < 1.0) s -= (1.0 - q[c]) * std::log(1.0 - pc);
    }
    out[r] = s;
  }
  return out;
}

/// Mean over rows of the per-row BCE sum.
inline double binary_cross_entropy(const Tensor& preds, const Tensor& targets) {
  const auto rows = binary_cross_entropy_rows(preds, targets);
  require(!rows.empty(), "binary_cross_entropy on an empty batch");
  double s = 0.0;
  for (double v : rows) s += v;
  return s / static_cast<double>(rows.size());
}

/// Gradient of sum_r w_r * BCE_r / normalizer with respect to preds. Rows with
/// weight 0 get an exactly-zero gradient.
inline Tensor binary_cross_entropy_grad(const Tensor& preds, const Tensor& targets, std::span<const double> row_weights,
                                        double normalizer) {
  detail::check_pair(preds, targets, "binary_cross_entropy_grad");
  require_dims(row_weights.size() == preds.rows(), "binary_cross_entropy_grad: one weight per row required");
  require(normalizer > 0.0, "binary_cross_entropy_grad: normalizer must be positive");
  Tensor g(preds.shape(), 0.0);
  const std::size_t cols = preds.cols();
  for (std::size_t r = 0; r < preds.rows(); ++r) {
    if (row_weights[r] == 0.0) continue;
    const double w = row_weights[r] / normalizer;
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t i = r * cols + c;
      const double pc = clamp_prob(preds[i]);
      g[i] = w * (-targets[i] / pc + (1.0 - targets[i]) / (1.0 - pc));
    }
  }
  return g;
}

inline Tensor binary_cross_entropy_grad(const Tensor& preds, const Tensor& targets) {
  std::vector<double> ones(preds.rows(), 1.0);
  return binary_cross_entropy_grad(preds, targets, ones, static_cast<double>(preds.rows()));
}

}  // namespace tes
