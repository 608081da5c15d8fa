#pragma once

// Feed-forward networks: layer specs, parameter store, forward trace and
// reverse-mode gradients. Only the four layer kinds needed by the
// teacher/explorer/student networks exist.

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "tes/tensor.hpp"

namespace tes {

enum class LayerKind { dense, leaky_relu, sigmoid, softmax };

inline std::string to_string(LayerKind k) {
  switch (k) {
    case LayerKind::dense: return "dense";
    case LayerKind::leaky_relu: return "leaky_relu";
    case LayerKind::sigmoid: return "sigmoid";
    case LayerKind::softmax: return "softmax";
  }
  return "?";
}

inline LayerKind layer_kind_from_string(const std::string& s) {
  if (s == "dense") return LayerKind::dense;
  if (s == "leaky_relu") return LayerKind::leaky_relu;
  if (s == "sigmoid") return LayerKind::sigmoid;
  if (s == "softmax") return LayerKind::softmax;
  throw ValidationError("unknown layer kind '" + s + "'");
}

struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  std::size_t in_dim = 0;   // dense only
  std::size_t out_dim = 0;  // dense only
  double leak = 0.01;       // leaky_relu only

  static LayerSpec dense(std::size_t in, std::size_t out) { return {LayerKind::dense, in, out, 0.01}; }
  static LayerSpec leaky_relu(double leak = 0.01) { return {LayerKind::leaky_relu, 0, 0, leak}; }
  static LayerSpec sigmoid() { return {LayerKind::sigmoid, 0, 0, 0.01}; }
  static LayerSpec softmax() { return {LayerKind::softmax, 0, 0, 0.01}; }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

using NetworkSpec = std::vector<LayerSpec>;

/// Dense stack `in -> hidden... -> out` with leaky ReLU between dense layers and
/// an optional final activation (sigmoid or softmax).
inline NetworkSpec mlp(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out,
                       std::optional<LayerKind> head = std::nullopt, double leak = 0.01) {
  NetworkSpec spec;
  std::size_t prev = in;
  for (std::size_t h : hidden) {
    spec.push_back(LayerSpec::dense(prev, h));
    spec.push_back(LayerSpec::leaky_relu(leak));
    prev = h;
  }
  spec.push_back(LayerSpec::dense(prev, out));
  if (head) {
    require(*head == LayerKind::sigmoid || *head == LayerKind::softmax, "network head must be sigmoid or softmax");
    spec.push_back(*head == LayerKind::sigmoid ? LayerSpec::sigmoid() : LayerSpec::softmax());
  }
  return spec;
}

/// Input width of the first dense layer.
inline std::size_t input_dim(const NetworkSpec& spec) {
  for (const auto& l : spec)
    if (l.kind == LayerKind::dense) return l.in_dim;
  throw ValidationError("network has no dense layer");
}

inline std::size_t output_dim(const NetworkSpec& spec) {
  for (auto it = spec.rbegin(); it != spec.rend(); ++it)
    if (it->kind == LayerKind::dense) return it->out_dim;
  throw ValidationError("network has no dense layer");
}

inline void validate(const NetworkSpec& spec) {
  require(!spec.empty(), "empty network spec");
  std::size_t width = 0;
  for (std::size_t i = 0; i < spec.size(); ++i) {
    const auto& l = spec[i];
    switch (l.kind) {
      case LayerKind::dense:
        require(l.in_dim > 0 && l.out_dim > 0, "dense layer " + std::to_string(i) + " needs positive dims");
        require_dims(width == 0 || width == l.in_dim,
                     "layer " + std::to_string(i) + " expects width " + std::to_string(l.in_dim) + ", previous layer gives " +
                         std::to_string(width));
        width = l.out_dim;
        break;
      case LayerKind::leaky_relu:
        require(l.leak > 0.0 && l.leak < 1.0, "leaky_relu slope must lie in (0,1)");
        [[fallthrough]];
      case LayerKind::sigmoid:
      case LayerKind::softmax:
        require(width > 0, "activation layer " + std::to_string(i) + " precedes any dense layer");
        break;
    }
  }
}

struct AdamConfig {
  double lr = 0.002;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const {
    require(lr > 0.0, "adam lr must be > 0");
    require(beta1 >= 0.0 && beta1 < 1.0, "adam beta1 must lie in [0,1)");
    require(beta2 >= 0.0 && beta2 < 1.0, "adam beta2 must lie in [0,1)");
    require(eps > 0.0, "adam eps must be > 0");
  }
  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

struct Parameter {
  std::string name;
  Tensor value;
  Tensor m;  // Adam first moment
  Tensor v;  // Adam second moment
};

using GradMap = std::map<std::string, Tensor>;

inline std::string weight_name(std::size_t layer) { return "dense" + std::to_string(layer) + ".weight"; }
inline std::string bias_name(std::size_t layer) { return "dense" + std::to_string(layer) + ".bias"; }

/// A network plus its parameters (in layer order) and optimizer state.
struct Model {
  NetworkSpec spec;
  std::vector<Parameter> params;
  AdamConfig adam;
  std::uint64_t step = 0;

  Model() = default;

  /// Glorot-uniform weights, zero biases.
  Model(NetworkSpec s, std::mt19937_64& rng) : spec(std::move(s)) {
    validate(spec);
    for (std::size_t i = 0; i < spec.size(); ++i) {
      const auto& l = spec[i];
      if (l.kind != LayerKind::dense) continue;
      const double bound = std::sqrt(6.0 / static_cast<double>(l.in_dim + l.out_dim));
      std::uniform_real_distribution<double> dist(-bound, bound);
      Tensor w = Tensor::matrix(l.in_dim, l.out_dim);
      for (double& x : w.data()) x = dist(rng);
      add_param(weight_name(i), std::move(w));
      add_param(bias_name(i), Tensor({l.out_dim}, 0.0));
    }
  }

  std::size_t in_dim() const { return input_dim(spec); }
  std::size_t out_dim() const { return output_dim(spec); }

  const Parameter* find(const std::string& name) const {
    for (const auto& p : params)
      if (p.name == name) return &p;
    return nullptr;
  }
  Parameter* find(const std::string& name) {
    for (auto& p : params)
      if (p.name == name) return &p;
    return nullptr;
  }
  const Tensor& param(const std::string& name) const {
    const auto* p = find(name);
    require(p != nullptr, "no parameter named '" + name + "'");
    return p->value;
  }
  Tensor& param(const std::string& name) {
    auto* p = find(name);
    require(p != nullptr, "no parameter named '" + name + "'");
    return p->value;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params) n += p.value.size();
    return n;
  }

  void add_param(std::string name, Tensor value) {
    Tensor zeros(value.shape(), 0.0);
    params.push_back({std::move(name), std::move(value), zeros, zeros});
  }
};

/// Activations at every layer boundary: values[0] is the input, values[i+1]
/// the output of layer i. Keeps a copy of the spec so a trace cannot be
/// replayed against a different network.
struct ForwardTrace {
  NetworkSpec spec;
  std::vector<Tensor> values;

  const Tensor& output() const { return values.back(); }
  const Tensor& input() const { return values.front(); }
  /// Input to the last layer; the logits when the network ends in sigmoid/softmax.
  const Tensor& pre_activation() const { return values.size() >= 2 ? values[values.size() - 2] : values.back(); }
};

namespace detail {

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Tensor dense_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
  const std::size_t n = x.rows(), in = w.shape()[0], out = w.shape()[1];
  require_dims(x.cols() == in, "dense layer expects width " + std::to_string(in) + ", got " + std::to_string(x.cols()));
  Tensor y = Tensor::matrix(n, out);
  for (std::size_t r = 0; r < n; ++r) {
    double* yr = &y.at(r, 0);
    for (std::size_t j = 0; j < out; ++j) yr[j] = b[j];
    for (std::size_t k = 0; k < in; ++k) {
      const double xv = x.at(r, k);
      const double* wk = &w.data()[k * out];
      for (std::size_t j = 0; j < out; ++j) yr[j] += xv * wk[j];
    }
  }
  return y;
}

inline void softmax_rows(Tensor& t) {
  for (std::size_t r = 0; r < t.rows(); ++r) {
    auto row = t.row(r);
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    double sum = 0.0;
    for (double& v : row) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (double& v : row) v /= sum;
  }
}

}  // namespace detail

inline Tensor softmax(Tensor logits) {
  detail::softmax_rows(logits);
  return logits;
}

inline ForwardTrace forward(const Model& model, const Tensor& batch) {
  require_dims(batch.rank() == 2, "forward expects an N x d batch, got " + batch.shape_string());
  require_dims(batch.cols() == model.in_dim(), "batch width " + std::to_string(batch.cols()) +
                                                   " does not match network input " + std::to_string(model.in_dim()));
  require(batch.all_finite(), "non-finite value in network input");

  ForwardTrace trace;
  trace.spec = model.spec;
  trace.values.reserve(model.spec.size() + 1);
  trace.values.push_back(batch);
  for (std::size_t i = 0; i < model.spec.size(); ++i) {
    const auto& l = model.spec[i];
    const Tensor& x = trace.values.back();
    Tensor y;
    switch (l.kind) {
      case LayerKind::dense:
        y = detail::dense_forward(x, model.param(weight_name(i)), model.param(bias_name(i)));
        break;
      case LayerKind::leaky_relu:
        y = x;
        for (double& v : y.data())
          if (v < 0.0) v *= l.leak;
        break;
      case LayerKind::sigmoid:
        y = x;
        for (double& v : y.data()) v = detail::sigmoid(v);
        break;
      case LayerKind::softmax:
        y = x;
        detail::softmax_rows(y);
        break;
    }
    trace.values.push_back(std::move(y));
  }
  return trace;
}

/// Convenience: output of `forward` only.
inline Tensor predict(const Model& model, const Tensor& batch) { return forward(model, batch).output(); }

struct Gradients {
  GradMap params;
  Tensor input;  // d(loss)/d(batch), needed when gradients flow into another network
};

inline Gradients backward(const Model& model, const ForwardTrace& trace, const Tensor& loss_grad) {
  require(trace.spec == model.spec && trace.values.size() == model.spec.size() + 1,
          "forward trace was produced by a different network");
  require_dims(loss_grad.same_shape(trace.output()),
               "loss gradient shape " + loss_grad.shape_string() + " does not match output " + trace.output().shape_string());

  Gradients out;
  Tensor g = loss_grad;
  for (std::size_t li = model.spec.size(); li-- > 0;) {
    const auto& l = model.spec[li];
    const Tensor& x = trace.values[li];
    const Tensor& y = trace.values[li + 1];
    switch (l.kind) {
      case LayerKind::dense: {
        const Tensor& w = model.param(weight_name(li));
        const std::size_t n = x.rows(), in = l.in_dim, o = l.out_dim;
        Tensor dw = Tensor::matrix(in, o);
        Tensor db({o}, 0.0);
        Tensor dx = Tensor::matrix(n, in);
        for (std::size_t r = 0; r < n; ++r) {
          const double* gr = &g.at(r, 0);
          for (std::size_t j = 0; j < o; ++j) db[j] += gr[j];
          for (std::size_t k = 0; k < in; ++k) {
            const double xv = x.at(r, k);
            double* dwk = &dw.data()[k * o];
            const double* wk = &w.data()[k * o];
            double acc = 0.0;
            for (std::size_t j = 0; j < o; ++j) {
              dwk[j] += xv * gr[j];
              acc += gr[j] * wk[j];
            }
            dx.at(r, k) = acc;
          }
        }
        out.params.emplace(weight_name(li), std::move(dw));
        out.params.emplace(bias_name(li), std::move(db));
        g = std::move(dx);
        break;
      }
      case LayerKind::leaky_relu:
        for (std::size_t i = 0; i < g.size(); ++i)
          if (x[i] < 0.0) g[i] *= l.leak;
        break;
      case LayerKind::sigmoid:
        for (std::size_t i = 0; i < g.size(); ++i) g[i] *= y[i] * (1.0 - y[i]);
        break;
      case LayerKind::softmax:
        for (std::size_t r = 0; r < g.rows(); ++r) {
          auto gr = g.row(r);
          auto pr = y.row(r);
          double dot = 0.0;
          for (std::size_t j = 0; j < gr.size(); ++j) dot += gr[j] * pr[j];
          for (std::size_t j = 0; j < gr.size(); ++j) gr[j] = pr[j] * (gr[j] - dot);
        }
        break;
    }
  }
  out.input = std::move(g);
  return out;
}

/// One Adam update with bias correction; increments the model's step counter.
inline void adam_step(Model& model, const GradMap& grads, const AdamConfig& cfg) {
  cfg.validate();
  for (const auto& p : model.params) {
    auto it = grads.find(p.name);
    require(it != grads.end(), "missing gradient for parameter '" + p.name + "'");
    require_dims(it->second.same_shape(p.value), "gradient shape mismatch for '" + p.name + "'");
  }
  model.adam = cfg;
  model.step += 1;
  const double t = static_cast<double>(model.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& p : model.params) {
    const auto& g = grads.at(p.name).data();
    auto& w = p.value.data();
    auto& m = p.m.data();
    auto& v = p.v.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      w[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

/// Adds `src` into `dst` entry-wise, inserting missing keys.
inline void accumulate(GradMap& dst, const GradMap& src) {
  for (const auto& [name, g] : src) {
    auto it = dst.find(name);
    if (it == dst.end()) {
      dst.emplace(name, g);
    } else {
      for (std::size_t i = 0; i < g.size(); ++i) it->second[i] += g[i];
    }
  }
}

}  // namespace tes
