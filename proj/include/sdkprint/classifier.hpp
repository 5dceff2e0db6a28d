#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "sdkprint/binary_io.hpp"
#include "sdkprint/corpus.hpp"
#include "sdkprint/error.hpp"
#include "sdkprint/rng.hpp"
#include "sdkprint/wl.hpp"

namespace sdkprint {

struct TrainConfig {
  double lambda = 1e-4;
  int epochs = 10;
  std::uint64_t seed = 0;
  double eta0 = 0.01;

  void validate() const {
    if (!(lambda > 0)) throw ConfigError("train.lambda must be > 0");
    if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
    if (!(eta0 > 0)) throw ConfigError("train.eta0 must be > 0");
  }

  // eta_t = 1 / (lambda * (t + t0)), with t0 chosen so eta_0 = eta0.
  [[nodiscard]] double learning_rate(std::uint64_t t) const {
    const double t0 = 1.0 / (lambda * eta0);
    return 1.0 / (lambda * (static_cast<double>(t) + t0));
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

inline std::vector<double> l2_normalized(std::span<const double> x) {
  double ss = 0.0;
  for (double v : x) ss += v * v;
  std::vector<double> out(x.begin(), x.end());
  if (ss > 0.0) {
    const double inv = 1.0 / std::sqrt(ss);
    for (auto& v : out) v *= inv;
  }
  return out;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Per-sample objective: lambda/2 |w|^2 + max(0, 1 - y (w.x + b)).
inline double sample_objective(std::span<const double> w, double b, std::span<const double> x, double y,
                               double lambda) {
  return 0.5 * lambda * dot(w, w) + std::max(0.0, 1.0 - y * (dot(w, x) + b));
}

struct Subgradient {
  std::vector<double> w;
  double b = 0.0;
};

inline Subgradient sample_subgradient(std::span<const double> w, double b, std::span<const double> x, double y,
                                      double lambda) {
  Subgradient g;
  g.w.resize(w.size());
  const bool active = y * (dot(w, x) + b) < 1.0;
  for (std::size_t j = 0; j < w.size(); ++j) g.w[j] = lambda * w[j] - (active ? y * x[j] : 0.0);
  g.b = active ? -y : 0.0;
  return g;
}

/// In-place w -= eta * subgradient, without materializing it.
inline void sgd_step(std::vector<double>& w, double& b, std::span<const double> x, double y, double eta,
                     double lambda) {
  const bool active = y * (dot(w, x) + b) < 1.0;
  const double decay = 1.0 - eta * lambda;
  for (auto& v : w) v *= decay;
  if (active) {
    for (std::size_t j = 0; j < w.size(); ++j) w[j] += eta * y * x[j];
    b += eta * y;
  }
}

inline double regularized_objective(std::span<const double> w, double b, const std::vector<std::vector<double>>& xs,
                                    std::span<const double> ys, double lambda) {
  double loss = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) loss += std::max(0.0, 1.0 - ys[i] * (dot(w, xs[i]) + b));
  return 0.5 * lambda * dot(w, w) + loss / static_cast<double>(xs.size());
}

struct LinearModel {
  std::vector<std::string> classes;  // sorted
  Layout layout;
  std::vector<std::vector<double>> weights;  // one row per class
  std::vector<double> bias;
  std::vector<double> feature_mean;  // mean of normalized training inputs
  TrainConfig config;
  WlConfig wl;
  CapaVocabulary vocabulary;
  std::string echo;  // effective run configuration, informational

  [[nodiscard]] std::size_t dim() const { return layout_length(layout); }

  friend bool operator==(const LinearModel&, const LinearModel&) = default;
};

struct TrainTrace {
  // objective[c][e]: regularized hinge objective of class c after epoch e.
  std::vector<std::vector<double>> objective;
};

/// One-vs-rest linear SVM by SGD on L2-normalized inputs.
inline LinearModel train(const std::vector<std::vector<double>>& xs, const std::vector<std::string>& ys,
                         const Layout& layout, const TrainConfig& cfg, TrainTrace* trace = nullptr) {
  cfg.validate();
  if (xs.size() != ys.size()) throw InvariantError("train: vectors and labels differ in count");
  if (xs.empty()) throw DataError("train: no training data");
  const std::size_t dim = layout_length(layout);
  for (const auto& x : xs)
    if (x.size() != dim) throw DataError("train: vector length does not match layout");

  LinearModel m;
  const std::set<std::string> class_set(ys.begin(), ys.end());
  if (class_set.size() < 2) throw DataError("train: need at least two distinct classes");
  m.classes.assign(class_set.begin(), class_set.end());
  m.layout = layout;
  m.config = cfg;

  std::vector<std::vector<double>> norm;
  norm.reserve(xs.size());
  for (const auto& x : xs) norm.push_back(l2_normalized(x));

  m.feature_mean.assign(dim, 0.0);
  for (const auto& x : norm)
    for (std::size_t j = 0; j < dim; ++j) m.feature_mean[j] += x[j];
  for (auto& v : m.feature_mean) v /= static_cast<double>(norm.size());

  std::vector<std::vector<std::size_t>> orders;
  for (int e = 0; e < cfg.epochs; ++e) {
    std::vector<std::size_t> order(norm.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(e)));
    rng.shuffle(order);
    orders.push_back(std::move(order));
  }

  if (trace) trace->objective.assign(m.classes.size(), {});
  for (std::size_t c = 0; c < m.classes.size(); ++c) {
    std::vector<double> targets(ys.size());
    for (std::size_t i = 0; i < ys.size(); ++i) targets[i] = ys[i] == m.classes[c] ? 1.0 : -1.0;
    std::vector<double> w(dim, 0.0);
    double b = 0.0;
    std::uint64_t t = 0;
    for (const auto& order : orders) {
      for (auto i : order) sgd_step(w, b, norm[i], targets[i], cfg.learning_rate(t++), cfg.lambda);
      if (trace) trace->objective[c].push_back(regularized_objective(w, b, norm, targets, cfg.lambda));
    }
    m.weights.push_back(std::move(w));
    m.bias.push_back(b);
  }
  return m;
}

struct Prediction {
  std::size_t index = 0;
  std::string label;
  std::vector<double> scores;
};

inline std::vector<double> class_scores(const LinearModel& m, std::span<const double> normalized) {
  std::vector<double> scores(m.classes.size());
  for (std::size_t c = 0; c < m.classes.size(); ++c) scores[c] = dot(m.weights[c], normalized) + m.bias[c];
  return scores;
}

/// Argmax of w_c . x_hat + b_c; ties go to the lowest class index.
inline Prediction predict(const LinearModel& m, std::span<const double> x) {
  if (x.size() != m.dim()) {
    throw DataError("predict: input has " + std::to_string(x.size()) + " features, model expects " +
                    std::to_string(m.dim()));
  }
  Prediction p;
  p.scores = class_scores(m, l2_normalized(x));
  for (std::size_t c = 1; c < p.scores.size(); ++c)
    if (p.scores[c] > p.scores[p.index]) p.index = c;
  p.label = m.classes[p.index];
  return p;
}

// ---------------------------------------------------------------------------
// Model file

inline constexpr std::string_view kModelMagic = "SDKPMODL";
inline constexpr std::uint32_t kModelVersion = 1;

inline std::string serialize_model(const LinearModel& m) {
  io::ByteWriter w;
  w.raw(kModelMagic);
  w.u32(kModelVersion);
  w.u32(static_cast<std::uint32_t>(m.classes.size()));
  for (const auto& c : m.classes) w.str(c);
  w.u64(m.dim());
  w.u32(static_cast<std::uint32_t>(m.layout.size()));
  for (const auto& b : m.layout) {
    w.str(b.name);
    w.u64(b.offset);
    w.u64(b.length);
  }
  w.u32(static_cast<std::uint32_t>(m.wl.iterations));
  w.u64(m.wl.dim);
  w.f64(m.config.lambda);
  w.u32(static_cast<std::uint32_t>(m.config.epochs));
  w.u64(m.config.seed);
  w.f64(m.config.eta0);
  w.u32(static_cast<std::uint32_t>(m.vocabulary.size()));
  for (const auto& r : m.vocabulary.rules) w.str(r);
  for (std::size_t c = 0; c < m.classes.size(); ++c) {
    for (double v : m.weights[c]) w.f64(v);
    w.f64(m.bias[c]);
  }
  w.u8(m.feature_mean.empty() ? 0 : 1);
  for (double v : m.feature_mean) w.f64(v);
  w.str(m.echo);
  return w.bytes();
}

inline LinearModel parse_model(std::string bytes, const std::string& what = "model") {
  io::ByteReader r(std::move(bytes), what);
  if (r.raw(kModelMagic.size()) != kModelMagic) throw DataError(what + ": bad magic");
  if (const auto v = r.u32(); v != kModelVersion) throw DataError(what + ": unsupported version " + std::to_string(v));
  LinearModel m;
  const auto n_classes = r.u32();
  for (std::uint32_t i = 0; i < n_classes; ++i) m.classes.push_back(r.str());
  const auto dim = r.u64();
  const auto n_blocks = r.u32();
  for (std::uint32_t i = 0; i < n_blocks; ++i) {
    Block b;
    b.name = r.str();
    b.offset = r.u64();
    b.length = r.u64();
    m.layout.push_back(std::move(b));
  }
  validate_layout(m.layout, dim);
  m.wl.iterations = static_cast<int>(r.u32());
  m.wl.dim = r.u64();
  m.config.lambda = r.f64();
  m.config.epochs = static_cast<int>(r.u32());
  m.config.seed = r.u64();
  m.config.eta0 = r.f64();
  const auto n_rules = r.u32();
  for (std::uint32_t i = 0; i < n_rules; ++i) m.vocabulary.rules.push_back(r.str());
  for (const auto& b : m.layout) {
    if (b.name == kCapaBlock && b.length != m.vocabulary.size()) {
      throw DataError(what + ": capa block does not match vocabulary");
    }
  }
  for (std::uint32_t c = 0; c < n_classes; ++c) {
    std::vector<double> row(dim);
    for (auto& v : row) v = r.f64();
    m.weights.push_back(std::move(row));
    m.bias.push_back(r.f64());
  }
  if (r.u8() != 0) {
    m.feature_mean.resize(dim);
    for (auto& v : m.feature_mean) v = r.f64();
  }
  m.echo = r.str();
  if (!r.at_end()) throw DataError(what + ": trailing bytes");
  return m;
}

inline void save_model(const std::string& path, const LinearModel& m) { io::write_file(path, serialize_model(m)); }

inline LinearModel load_model(const std::string& path) { return parse_model(io::read_file(path), path); }

}  // namespace sdkprint
