#pragma once

// Labeled datasets, the synthetic generators (Gaussian toy clusters and
// uniform / overlaid noise) and the `label,f0,f1,...` CSV format.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "tes/rng.hpp"
#include "tes/tensor.hpp"

namespace tes {

struct LabeledDataset {
  Tensor features = Tensor::matrix(0, 0);
  std::vector<int> labels;
  int class_count = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols(); }

  void validate(bool require_all_classes = false) const {
    require_dims(features.rank() == 2 && features.rows() == labels.size(), "dataset rows and labels differ in count");
    for (int l : labels) require(l >= 0 && l < class_count, "label " + std::to_string(l) + " outside [0, class_count)");
    if (require_all_classes) {
      require(!labels.empty(), "training dataset is empty");
      for (int c = 0; c < class_count; ++c)
        require(std::find(labels.begin(), labels.end(), c) != labels.end(),
                "class " + std::to_string(c) + " has no training samples");
    }
  }

  std::vector<std::size_t> indices_of(int label) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == label) out.push_back(i);
    return out;
  }

  LabeledDataset subset(std::span<const std::size_t> idx) const {
    LabeledDataset out;
    out.features = features.rows() == 0 && idx.empty() ? features : features.gather_rows(idx);
    out.class_count = class_count;
    out.labels.reserve(idx.size());
    for (auto i : idx) out.labels.push_back(labels[i]);
    return out;
  }

  friend bool operator==(const LabeledDataset&, const LabeledDataset&) = default;
};

struct ToySpec {
  int class_count = 4;
  int per_class = 1000;
  std::vector<std::array<double, 2>> centers;  // empty: grid centers spanning [-1,1]^2
  double spread = 0.35;
  std::uint64_t seed = 0;
};

/// Default cluster centers: the first `count` cells of a k x k grid over
/// [-1,1]^2, k = ceil(sqrt(count)). For four classes these are the square
/// corners (+-1, +-1), leaving an empty region in the middle.
inline std::vector<std::array<double, 2>> grid_centers(int count) {
  require(count >= 1, "need at least one center");
  const int k = std::max(2, static_cast<int>(std::ceil(std::sqrt(static_cast<double>(count)))));
  std::vector<std::array<double, 2>> out;
  for (int i = 0; i < count; ++i) {
    const int gx = i % k, gy = i / k;
    out.push_back({-1.0 + 2.0 * gx / (k - 1), -1.0 + 2.0 * gy / (k - 1)});
  }
  return out;
}

/// Min-max normalizes every column into [0,1] in place. Constant columns map to 0.5.
inline void minmax_normalize(Tensor& x) {
  if (x.rows() == 0) return;
  for (std::size_t c = 0; c < x.cols(); ++c) {
    double lo = x.at(0, c), hi = lo;
    for (std::size_t r = 0; r < x.rows(); ++r) {
      lo = std::min(lo, x.at(r, c));
      hi = std::max(hi, x.at(r, c));
    }
    for (std::size_t r = 0; r < x.rows(); ++r)
      x.at(r, c) = hi > lo ? std::clamp((x.at(r, c) - lo) / (hi - lo), 0.0, 1.0) : 0.5;
  }
}

/// Isotropic Gaussian clusters in 2-D, rows grouped by class, normalized to [0,1]^2.
inline LabeledDataset gen_toy(const ToySpec& spec) {
  require(spec.class_count >= 1, "toy class_count must be >= 1");
  require(spec.per_class >= 1, "toy per_class must be >= 1");
  require(spec.spread >= 0.0, "toy spread must be >= 0");
  auto centers = spec.centers.empty() ? grid_centers(spec.class_count) : spec.centers;
  require(centers.size() == static_cast<std::size_t>(spec.class_count), "toy spec needs one center per class");
  for (std::size_t i = 0; i < centers.size(); ++i)
    for (std::size_t j = i + 1; j < centers.size(); ++j)
      require(centers[i] != centers[j], "toy centers must be distinct");

  Rng rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  LabeledDataset d;
  d.class_count = spec.class_count;
  d.features = Tensor::matrix(static_cast<std::size_t>(spec.class_count * spec.per_class), 2);
  std::size_t r = 0;
  for (int c = 0; c < spec.class_count; ++c) {
    for (int i = 0; i < spec.per_class; ++i, ++r) {
      d.features.at(r, 0) = centers[c][0] + spec.spread * normal(rng);
      d.features.at(r, 1) = centers[c][1] + spec.spread * normal(rng);
      d.labels.push_back(c);
    }
  }
  minmax_normalize(d.features);
  return d;
}

enum class NoiseMode { pure_noise, overlay };

struct NoiseSpec {
  std::size_t dim = 2;
  std::size_t count = 1000;
  NoiseMode mode = NoiseMode::pure_noise;
  std::optional<LabeledDataset> overlay_source;
  double alpha = 0.5;  // overlay blend: clamp(source + alpha * noise)
  std::uint64_t seed = 0;
};

/// Uniform noise vectors, or source samples with uniform noise added and clamped
/// to [0,1]. Every row gets the single pseudo-label 0.
inline LabeledDataset gen_noise(const NoiseSpec& spec) {
  Rng rng(spec.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  LabeledDataset d;
  d.class_count = 1;
  if (spec.mode == NoiseMode::pure_noise) {
    require(spec.dim >= 1, "noise dim must be >= 1");
    d.features = Tensor::matrix(spec.count, spec.dim);
    for (double& v : d.features.data()) v = unif(rng);
  } else {
    require(spec.overlay_source.has_value(), "overlay noise requires a source dataset");
    const auto& src = *spec.overlay_source;
    require_dims(src.dim() == spec.dim, "overlay source dim does not match noise dim");
    require(spec.alpha >= 0.0, "overlay alpha must be >= 0");
    d.features = src.features;
    for (double& v : d.features.data()) {
      const double n = unif(rng);
      v = std::clamp(v + spec.alpha * n, 0.0, 1.0);
    }
  }
  d.labels.assign(d.features.rows(), 0);
  return d;
}

struct KnownUnknownSplit {
  LabeledDataset known;           // labels 0..|known|-1
  LabeledDataset unknown;         // original labels, class_count of the source
  std::map<int, int> relabel;     // original -> known index
  std::map<int, int> inverse;     // known index -> original
};

inline KnownUnknownSplit split_known_unknown(const LabeledDataset& data, const std::vector<int>& known_classes) {
  require(!known_classes.empty(), "known class list is empty");
  KnownUnknownSplit s;
  for (int c : known_classes) {
    require(c >= 0 && c < data.class_count, "known class id " + std::to_string(c) + " is not a label of the dataset");
    require(!s.relabel.contains(c), "duplicate known class id " + std::to_string(c));
    const int idx = static_cast<int>(s.relabel.size());
    s.relabel[c] = idx;
    s.inverse[idx] = c;
  }
  std::vector<std::size_t> kn, un;
  for (std::size_t i = 0; i < data.size(); ++i) (s.relabel.contains(data.labels[i]) ? kn : un).push_back(i);
  s.known = data.subset(kn);
  s.known.class_count = static_cast<int>(known_classes.size());
  for (int& l : s.known.labels) l = s.relabel.at(l);
  s.unknown = data.subset(un);
  return s;
}

/// Seeded random split into (train, test); `test_fraction` of each class goes to test.
inline std::pair<LabeledDataset, LabeledDataset> train_test_split(const LabeledDataset& data, double test_fraction,
                                                                  std::uint64_t seed) {
  require(test_fraction >= 0.0 && test_fraction < 1.0, "test_fraction must lie in [0,1)");
  Rng rng(seed);
  std::vector<std::size_t> tr, te;
  for (int c = 0; c < data.class_count; ++c) {
    auto idx = data.indices_of(c);
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n_test = static_cast<std::size_t>(std::floor(test_fraction * static_cast<double>(idx.size())));
    te.insert(te.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_test));
    tr.insert(tr.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_test), idx.end());
  }
  std::sort(tr.begin(), tr.end());
  std::sort(te.begin(), te.end());
  return {data.subset(tr), data.subset(te)};
}

struct DataFormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void save_dataset(const LabeledDataset& d, std::ostream& os) {
  os << "label";
  for (std::size_t c = 0; c < d.dim(); ++c) os << ",f" << c;
  os << '\n';
  for (std::size_t r = 0; r < d.size(); ++r) {
    os << d.labels[r];
    for (std::size_t c = 0; c < d.dim(); ++c) os << ',' << format_real(d.features.at(r, c));
    os << '\n';
  }
}

inline void save_dataset(const LabeledDataset& d, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw DataFormatError("cannot open '" + path + "' for writing");
  save_dataset(d, os);
}

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, ',')) out.push_back(cur);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::string trim(std::string s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace detail

/// Reads `label,f0,...`; class_count is max label + 1 unless given.
inline LabeledDataset load_dataset(std::istream& is, const std::string& origin = "<stream>",
                                   std::optional<int> class_count = std::nullopt) {
  std::string line;
  if (!std::getline(is, line)) throw DataFormatError(origin + ": missing header line");
  const auto header = detail::split_csv(detail::trim(line));
  if (header.empty() || detail::trim(header[0]) != "label")
    throw DataFormatError(origin + ":1: header must start with 'label'");
  const std::size_t dim = header.size() - 1;
  std::vector<double> values;
  LabeledDataset d;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto cells = detail::split_csv(line);
    const std::string where = origin + ":" + std::to_string(lineno);
    if (cells.size() != dim + 1)
      throw DataFormatError(where + ": expected " + std::to_string(dim + 1) + " fields, found " + std::to_string(cells.size()));
    try {
      std::size_t pos = 0;
      const std::string lab = detail::trim(cells[0]);
      const int label = std::stoi(lab, &pos);
      if (pos != lab.size() || label < 0) throw std::invalid_argument("label");
      d.labels.push_back(label);
    } catch (const std::exception&) {
      throw DataFormatError(where + ": bad label '" + cells[0] + "'");
    }
    for (std::size_t c = 1; c < cells.size(); ++c) {
      const std::string cell = detail::trim(cells[c]);
      char* end = nullptr;
      const double v = std::strtod(cell.c_str(), &end);
      if (cell.empty() || *end != '\0' || !std::isfinite(v))
        throw DataFormatError(where + ": non-numeric feature '" + cells[c] + "' in column f" + std::to_string(c - 1));
      values.push_back(v);
    }
  }
  d.features = Tensor({d.labels.size(), dim}, std::move(values));
  int max_label = -1;
  for (int l : d.labels) max_label = std::max(max_label, l);
  d.class_count = class_count.value_or(max_label + 1);
  if (class_count) d.validate();
  return d;
}

inline LabeledDataset load_dataset(const std::string& path, std::optional<int> class_count = std::nullopt) {
  std::ifstream is(path);
  if (!is) throw DataFormatError("cannot open dataset '" + path + "'");
  return load_dataset(is, path, class_count);
}

/// Index batches for one epoch: a fresh permutation, cut into chunks of
/// `batch_size`; the last short chunk is kept.
inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size, Rng& rng) {
  require(batch_size >= 1, "batch size must be >= 1");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t b = 0; b < n; b += batch_size)
    out.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(b),
                     perm.begin() + static_cast<std::ptrdiff_t>(std::min(n, b + batch_size)));
  return out;
}

/// Distinct labels in ascending order.
inline std::vector<int> label_set(const LabeledDataset& d) {
  std::set<int> s(d.labels.begin(), d.labels.end());
  return {s.begin(), s.end()};
}

}  // namespace tes
