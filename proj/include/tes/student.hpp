#pragma once

// Student network: a shared dense trunk followed by one independent
// one-vs-rest sigmoid head per known class plus one for "unknown" (last).

#include <span>
#include <vector>

#include "tes/losses.hpp"
#include "tes/nn.hpp"
#include "tes/teacher.hpp"

namespace tes {

struct StudentSpec {
  std::size_t in_dim = 2;
  std::size_t known_classes = 4;
  std::vector<std::size_t> trunk_hidden{64, 64};
  std::size_t head_hidden = 16;
  double leak = 0.01;

  /// Trunk: dense + leaky ReLU for every hidden width.
  NetworkSpec trunk() const {
    require(!trunk_hidden.empty(), "student trunk needs at least one layer");
    NetworkSpec s;
    std::size_t prev = in_dim;
    for (std::size_t h : trunk_hidden) {
      s.push_back(LayerSpec::dense(prev, h));
      s.push_back(LayerSpec::leaky_relu(leak));
      prev = h;
    }
    return s;
  }

  NetworkSpec head() const {
    return head_hidden == 0 ? mlp(trunk_hidden.back(), {}, 1, LayerKind::sigmoid, leak)
                            : mlp(trunk_hidden.back(), {head_hidden}, 1, LayerKind::sigmoid, leak);
  }
};

struct StudentModel {
  Model trunk;
  std::vector<Model> heads;  // known classes first, unknown last

  StudentModel() = default;
  StudentModel(const StudentSpec& spec, Rng& rng) : trunk(spec.trunk(), rng) {
    require(spec.known_classes >= 1, "student needs at least one known class");
    for (std::size_t i = 0; i <= spec.known_classes; ++i) heads.emplace_back(spec.head(), rng);
  }

  std::size_t in_dim() const { return trunk.in_dim(); }
  std::size_t head_count() const { return heads.size(); }
  std::size_t known_classes() const { return heads.size() - 1; }
  std::size_t unknown_index() const { return heads.size() - 1; }

  void validate() const {
    require(heads.size() >= 2, "student needs |Y|+1 >= 2 heads");
    for (const auto& h : heads) {
      require_dims(h.in_dim() == trunk.out_dim(), "student head input width does not match trunk output");
      require_dims(h.out_dim() == 1 && h.spec.back().kind == LayerKind::sigmoid, "student heads must be sigmoid units");
    }
  }

  friend bool operator==(const StudentModel& a, const StudentModel& b) {
    auto same = [](const Model& x, const Model& y) {
      if (x.spec != y.spec || x.params.size() != y.params.size()) return false;
      for (std::size_t i = 0; i < x.params.size(); ++i)
        if (!(x.params[i].value == y.params[i].value)) return false;
      return true;
    };
    if (!same(a.trunk, b.trunk) || a.heads.size() != b.heads.size()) return false;
    for (std::size_t i = 0; i < a.heads.size(); ++i)
      if (!same(a.heads[i], b.heads[i])) return false;
    return true;
  }
};

struct StudentTrace {
  ForwardTrace trunk;
  std::vector<ForwardTrace> heads;
  Tensor probs;   // N x (|Y|+1) sigmoid outputs p_y
  Tensor logits;  // N x (|Y|+1) pre-sigmoid l_y
};

inline StudentTrace student_forward(const StudentModel& s, const Tensor& x) {
  StudentTrace t;
  t.trunk = forward(s.trunk, x);
  const std::size_t n = x.rows(), h = s.head_count();
  t.probs = Tensor::matrix(n, h);
  t.logits = Tensor::matrix(n, h);
  t.heads.reserve(h);
  for (std::size_t c = 0; c < h; ++c) {
    t.heads.push_back(forward(s.heads[c], t.trunk.output()));
    const auto& hp = t.heads.back();
    for (std::size_t r = 0; r < n; ++r) {
      t.probs.at(r, c) = hp.output()[r];
      t.logits.at(r, c) = hp.pre_activation()[r];
    }
  }
  return t;
}

struct StudentGrads {
  GradMap trunk;
  std::vector<GradMap> heads;
  Tensor input;
};

/// Back-propagates d(loss)/d(probs) through every head and the shared trunk.
inline StudentGrads student_backward(const StudentModel& s, const StudentTrace& t, const Tensor& probs_grad) {
  require_dims(probs_grad.same_shape(t.probs), "student loss gradient shape mismatch");
  StudentGrads g;
  Tensor feat_grad(t.trunk.output().shape(), 0.0);
  for (std::size_t c = 0; c < s.head_count(); ++c) {
    Tensor col = probs_grad.column(c);
    auto hg = backward(s.heads[c], t.heads[c], col);
    for (std::size_t i = 0; i < feat_grad.size(); ++i) feat_grad[i] += hg.input[i];
    g.heads.push_back(std::move(hg.params));
  }
  auto tg = backward(s.trunk, t.trunk, feat_grad);
  g.trunk = std::move(tg.params);
  g.input = std::move(tg.input);
  return g;
}

inline void student_adam_step(StudentModel& s, const StudentGrads& g, const AdamConfig& cfg) {
  adam_step(s.trunk, g.trunk, cfg);
  for (std::size_t c = 0; c < s.head_count(); ++c) adam_step(s.heads[c], g.heads[c], cfg);
}

/// Target row for the hard unknown label y_U = [0, ..., 0, 1].
inline Tensor unknown_targets(std::size_t rows, std::size_t heads) {
  Tensor t = Tensor::matrix(rows, heads);
  for (std::size_t r = 0; r < rows; ++r) t.at(r, heads - 1) = 1.0;
  return t;
}

struct ActiveUnknownBatch {
  Tensor samples;          // K x d
  std::vector<bool> mask;  // over the N candidates
  std::size_t count() const { return samples.rows(); }
};

/// Active iff every known-class sigmoid is strictly below 1 - q_min (the
/// unknown head is ignored). Tested as p + q_min < 1: 1 - 0.7 rounds above
/// 0.3, which would let a sigmoid of exactly 0.3 through.
inline std::vector<bool> active_mask(const Tensor& probs, double q_min) {
  require(q_min > 0.5 && q_min < 1.0, "q_min must lie in (0.5, 1)");
  std::vector<bool> mask(probs.rows());
  const std::size_t known = probs.cols() - 1;
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    double mx = probs.at(r, 0);
    for (std::size_t c = 1; c < known; ++c) mx = std::max(mx, probs.at(r, c));
    mask[r] = mx + q_min < 1.0;
  }
  return mask;
}

inline ActiveUnknownBatch select_active_unknowns(const StudentModel& student, const Tensor& fakes, double q_min) {
  ActiveUnknownBatch b;
  if (fakes.rows() == 0) {
    b.samples = Tensor::matrix(0, student.in_dim());
    return b;
  }
  b.mask = active_mask(student_forward(student, fakes).probs, q_min);
  std::vector<std::size_t> idx;
  for (std::size_t r = 0; r < b.mask.size(); ++r)
    if (b.mask[r]) idx.push_back(r);
  b.samples = fakes.gather_rows(idx);
  return b;
}

inline Tensor target_matrix(std::span<const DistilledTarget> targets) {
  require(!targets.empty(), "no targets");
  Tensor t = Tensor::matrix(targets.size(), targets.front().q.size());
  for (std::size_t r = 0; r < targets.size(); ++r) {
    require_dims(targets[r].q.size() == t.cols(), "distilled targets differ in width");
    std::copy(targets[r].q.begin(), targets[r].q.end(), t.row(r).begin());
  }
  return t;
}

struct StudentLoss {
  double real_loss = 0.0;
  double fake_loss = 0.0;
  std::size_t active_count = 0;
  double total() const { return real_loss + fake_loss; }
};

/// Value of the combined student objective without touching parameters: BCE of
/// every head against the distilled targets on real rows (mean over N), plus
/// BCE against y_U on active fakes, also divided by N.
inline StudentLoss student_objective(const StudentModel& s, const Tensor& real, std::span<const DistilledTarget> targets,
                                     const Tensor& fakes, double q_min) {
  require(targets.size() == real.rows(), "a distilled target is required for every real sample");
  StudentLoss out;
  const double n = static_cast<double>(real.rows());
  out.real_loss = binary_cross_entropy(student_forward(s, real).probs, target_matrix(targets));
  if (fakes.rows() > 0) {
    const auto active = select_active_unknowns(s, fakes, q_min);
    out.active_count = active.count();
    if (active.count() > 0) {
      const auto rows =
          binary_cross_entropy_rows(student_forward(s, active.samples).probs, unknown_targets(active.count(), s.head_count()));
      for (double v : rows) out.fake_loss += v;
      out.fake_loss /= n;
    }
  }
  return out;
}

/// One Adam step on the combined student objective. `fakes` must either match
/// the real batch in size or be empty (no explorer). Returns the loss parts
/// evaluated before the update.
inline StudentLoss student_step(StudentModel& s, const Tensor& real, std::span<const DistilledTarget> targets,
                                const Tensor& fakes, double q_min, const AdamConfig& adam) {
  require(real.rows() > 0, "student_step on an empty batch");
  require(targets.size() == real.rows(), "a distilled target is required for every real sample");
  require_dims(fakes.rows() == 0 || fakes.rows() == real.rows(), "fake batch must match the real batch size");
  require_dims(targets.front().q.size() == s.head_count(), "distilled target width must equal |Y|+1");

  StudentLoss out;
  const std::size_t n = real.rows();
  const std::size_t h = s.head_count();
  Tensor batch = real;
  Tensor tgt = target_matrix(targets);
  if (fakes.rows() > 0) {
    const auto active = select_active_unknowns(s, fakes, q_min);
    out.active_count = active.count();
    if (active.count() > 0) {
      batch = vstack(real, active.samples);
      tgt = vstack(tgt, unknown_targets(active.count(), h));
    }
  }
  const auto trace = student_forward(s, batch);
  const auto rows = binary_cross_entropy_rows(trace.probs, tgt);
  for (std::size_t r = 0; r < rows.size(); ++r) (r < n ? out.real_loss : out.fake_loss) += rows[r];
  out.real_loss /= static_cast<double>(n);
  out.fake_loss /= static_cast<double>(n);

  std::vector<double> weights(batch.rows(), 1.0);
  const auto grad = binary_cross_entropy_grad(trace.probs, tgt, weights, static_cast<double>(n));
  student_adam_step(s, student_backward(s, trace, grad), adam);
  return out;
}

}  // namespace tes
