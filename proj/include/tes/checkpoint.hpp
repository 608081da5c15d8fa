#pragma once

// Checkpoint container (plain text, one token stream):
//
//   tes-checkpoint 1
//   model <name>
//   layers <count>
//   layer dense <in> <out> | layer leaky_relu <slope> | layer sigmoid | layer softmax
//   adam <lr> <beta1> <beta2> <eps> <step>
//   params <count>
//   param <name> <rank> <dim...>
//   value <hexfloat...>
//   m <hexfloat...>
//   v <hexfloat...>
//   end
//
// A file may hold several `model ... end` blocks. All reals are written as C99
// hex floats, so save -> load reproduces every bit.

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tes/nn.hpp"

namespace tes {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string hexfloat(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

inline double parse_real(const std::string& tok) {
  char* end = nullptr;
  const double v = std::strtod(tok.c_str(), &end);
  if (end == tok.c_str() || *end != '\0') throw CheckpointError("checkpoint: bad number '" + tok + "'");
  return v;
}

inline void write_values(std::ostream& os, const char* tag, const Tensor& t) {
  os << tag;
  for (double v : t.data()) os << ' ' << hexfloat(v);
  os << '\n';
}

inline std::string expect_word(std::istream& is, const char* want = nullptr) {
  std::string w;
  if (!(is >> w)) throw CheckpointError(std::string("checkpoint: unexpected end of file") + (want ? std::string(" (wanted '") + want + "')" : ""));
  if (want && w != want) throw CheckpointError(std::string("checkpoint: expected '") + want + "', found '" + w + "'");
  return w;
}

template <typename T>
T expect_uint(std::istream& is) {
  const std::string w = expect_word(is);
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(w, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != w.size()) throw CheckpointError("checkpoint: bad integer '" + w + "'");
  return static_cast<T>(v);
}

inline void read_values(std::istream& is, const char* tag, Tensor& t) {
  expect_word(is, tag);
  for (double& v : t.data()) v = parse_real(expect_word(is));
}

}  // namespace detail

inline void write_model(std::ostream& os, const std::string& name, const Model& model) {
  os << "model " << name << '\n';
  os << "layers " << model.spec.size() << '\n';
  for (const auto& l : model.spec) {
    os << "layer " << to_string(l.kind);
    if (l.kind == LayerKind::dense) os << ' ' << l.in_dim << ' ' << l.out_dim;
    if (l.kind == LayerKind::leaky_relu) os << ' ' << detail::hexfloat(l.leak);
    os << '\n';
  }
  os << "adam " << detail::hexfloat(model.adam.lr) << ' ' << detail::hexfloat(model.adam.beta1) << ' '
     << detail::hexfloat(model.adam.beta2) << ' ' << detail::hexfloat(model.adam.eps) << ' ' << model.step << '\n';
  os << "params " << model.params.size() << '\n';
  for (const auto& p : model.params) {
    os << "param " << p.name << ' ' << p.value.rank();
    for (auto d : p.value.shape()) os << ' ' << d;
    os << '\n';
    detail::write_values(os, "value", p.value);
    detail::write_values(os, "m", p.m);
    detail::write_values(os, "v", p.v);
  }
  os << "end\n";
}

inline std::pair<std::string, Model> read_model(std::istream& is) {
  using namespace detail;
  expect_word(is, "model");
  std::pair<std::string, Model> out;
  out.first = expect_word(is);
  Model& m = out.second;
  expect_word(is, "layers");
  const auto nl = expect_uint<std::size_t>(is);
  for (std::size_t i = 0; i < nl; ++i) {
    expect_word(is, "layer");
    LayerSpec l;
    try {
      l.kind = layer_kind_from_string(expect_word(is));
    } catch (const ValidationError& e) {
      throw CheckpointError(std::string("checkpoint: ") + e.what());
    }
    if (l.kind == LayerKind::dense) {
      l.in_dim = expect_uint<std::size_t>(is);
      l.out_dim = expect_uint<std::size_t>(is);
    }
    if (l.kind == LayerKind::leaky_relu) l.leak = parse_real(expect_word(is));
    m.spec.push_back(l);
  }
  expect_word(is, "adam");
  m.adam.lr = parse_real(expect_word(is));
  m.adam.beta1 = parse_real(expect_word(is));
  m.adam.beta2 = parse_real(expect_word(is));
  m.adam.eps = parse_real(expect_word(is));
  m.step = expect_uint<std::uint64_t>(is);
  expect_word(is, "params");
  const auto np = expect_uint<std::size_t>(is);
  for (std::size_t i = 0; i < np; ++i) {
    expect_word(is, "param");
    Parameter p;
    p.name = expect_word(is);
    const auto rank = expect_uint<std::size_t>(is);
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = expect_uint<std::size_t>(is);
    p.value = Tensor(shape, 0.0);
    p.m = Tensor(shape, 0.0);
    p.v = Tensor(shape, 0.0);
    read_values(is, "value", p.value);
    read_values(is, "m", p.m);
    read_values(is, "v", p.v);
    m.params.push_back(std::move(p));
  }
  expect_word(is, "end");
  try {
    validate(m.spec);
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("checkpoint: invalid network: ") + e.what());
  }
  for (std::size_t i = 0; i < m.spec.size(); ++i) {
    if (m.spec[i].kind != LayerKind::dense) continue;
    const auto* w = m.find(weight_name(i));
    const auto* b = m.find(bias_name(i));
    if (!w || !b || w->value.shape() != std::vector<std::size_t>{m.spec[i].in_dim, m.spec[i].out_dim} ||
        b->value.shape() != std::vector<std::size_t>{m.spec[i].out_dim})
      throw CheckpointError("checkpoint: parameters of layer " + std::to_string(i) + " missing or mis-shaped");
  }
  return out;
}

using NamedModels = std::vector<std::pair<std::string, Model>>;

inline void save_checkpoint(const std::string& path, const NamedModels& models) {
  std::ofstream os(path);
  if (!os) throw CheckpointError("cannot open '" + path + "' for writing");
  os << "tes-checkpoint 1\n";
  for (const auto& [name, model] : models) write_model(os, name, model);
  if (!os) throw CheckpointError("write to '" + path + "' failed");
}

inline void save_checkpoint(const std::string& path, const Model& model) { save_checkpoint(path, {{"model", model}}); }

inline NamedModels load_checkpoint_all(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw CheckpointError("cannot open checkpoint '" + path + "'");
  detail::expect_word(is, "tes-checkpoint");
  if (detail::expect_word(is) != "1") throw CheckpointError("unsupported checkpoint version in '" + path + "'");
  NamedModels out;
  while (is >> std::ws && is.peek() != EOF) out.push_back(read_model(is));
  return out;
}

inline Model load_checkpoint(const std::string& path, const std::string& name = "model") {
  for (auto& [n, m] : load_checkpoint_all(path))
    if (n == name) return std::move(m);
  throw CheckpointError("checkpoint '" + path + "' has no model named '" + name + "'");
}

}  // namespace tes
