#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <future>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "sdkprint/classifier.hpp"
#include "sdkprint/corpus.hpp"
#include "sdkprint/error.hpp"
#include "sdkprint/text.hpp"

namespace sdkprint {

// Rows = truth, columns = prediction.
struct ConfusionMatrix {
  std::vector<std::string> classes;
  std::vector<std::vector<std::uint64_t>> counts;

  explicit ConfusionMatrix(std::vector<std::string> cls = {})
      : classes(std::move(cls)), counts(classes.size(), std::vector<std::uint64_t>(classes.size(), 0)) {}

  [[nodiscard]] std::size_t size() const { return classes.size(); }

  [[nodiscard]] std::size_t index_of(const std::string& c) const {
    auto it = std::find(classes.begin(), classes.end(), c);
    if (it == classes.end()) throw InvariantError("confusion: unknown class " + c);
    return static_cast<std::size_t>(it - classes.begin());
  }

  void add(const std::string& truth, const std::string& predicted) { ++counts[index_of(truth)][index_of(predicted)]; }

  [[nodiscard]] std::uint64_t row_sum(std::size_t r) const {
    std::uint64_t s = 0;
    for (auto v : counts[r]) s += v;
    return s;
  }

  [[nodiscard]] std::uint64_t col_sum(std::size_t c) const {
    std::uint64_t s = 0;
    for (const auto& row : counts) s += row[c];
    return s;
  }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

struct ClassMetrics {
  std::uint64_t tp = 0, fp = 0, fn = 0;
  double precision = 0, recall = 0, f1 = 0;
  // false when the class has neither truth nor predictions in this matrix
  bool defined = true;
};

inline std::vector<ClassMetrics> per_class_metrics(const ConfusionMatrix& m) {
  std::vector<ClassMetrics> out(m.size());
  for (std::size_t c = 0; c < m.size(); ++c) {
    auto& r = out[c];
    r.tp = m.counts[c][c];
    r.fp = m.col_sum(c) - r.tp;
    r.fn = m.row_sum(c) - r.tp;
    r.defined = r.tp + r.fp + r.fn > 0;
    r.precision = r.tp + r.fp > 0 ? static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fp) : 0.0;
    r.recall = r.tp + r.fn > 0 ? static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fn) : 0.0;
    const double pr = r.precision + r.recall;
    r.f1 = pr > 0 ? 2 * r.precision * r.recall / pr : 0.0;
  }
  return out;
}

/// Unweighted mean of per-class F1. Classes with no truth and no predictions
/// are left out of the mean.
inline double macro_f1(const ConfusionMatrix& m) {
  if (m.size() < 2) throw DataError("macro_f1 needs at least two classes");
  double sum = 0;
  std::size_t n = 0;
  for (const auto& c : per_class_metrics(m)) {
    if (!c.defined) continue;
    sum += c.f1;
    ++n;
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

/// Row-normalized rates to 3 decimals with raw counts in parentheses.
inline std::string render_confusion_csv(const ConfusionMatrix& m) {
  std::string out = text::csv_quote("truth\\predicted");
  for (const auto& c : m.classes) out += "," + text::csv_quote(c);
  out += '\n';
  for (std::size_t r = 0; r < m.size(); ++r) {
    out += text::csv_quote(m.classes[r]);
    const auto total = m.row_sum(r);
    for (std::size_t c = 0; c < m.size(); ++c) {
      const double rate = total ? static_cast<double>(m.counts[r][c]) / static_cast<double>(total) : 0.0;
      out += "," + text::fixed(rate, 3) + " (" + std::to_string(m.counts[r][c]) + ")";
    }
    out += '\n';
  }
  return out;
}

inline std::string render_confusion_text(const ConfusionMatrix& m) {
  std::size_t width = 9;
  for (const auto& c : m.classes) width = std::max(width, c.size());
  auto pad = [](std::string s, std::size_t w) {
    if (s.size() < w) s.insert(0, w - s.size(), ' ');
    return s;
  };
  std::string out = pad("", width);
  for (const auto& c : m.classes) out += "  " + pad(c, std::max<std::size_t>(c.size(), 13));
  out += '\n';
  for (std::size_t r = 0; r < m.size(); ++r) {
    out += pad(m.classes[r], width);
    const auto total = m.row_sum(r);
    for (std::size_t c = 0; c < m.size(); ++c) {
      const double rate = total ? static_cast<double>(m.counts[r][c]) / static_cast<double>(total) : 0.0;
      out += "  " + pad(text::fixed(rate, 3) + " (" + std::to_string(m.counts[r][c]) + ")",
                        std::max<std::size_t>(m.classes[c].size(), 13));
    }
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Cross-validated experiments

enum class FeatureMode { Wl, WlCapa };
enum class Regime { Closed, Open };
enum class Balance { None, Upsampled };

inline std::string to_string(FeatureMode f) { return f == FeatureMode::Wl ? "wl" : "wl+capa"; }
inline std::string to_string(Regime r) { return r == Regime::Closed ? "closed" : "open"; }
inline std::string to_string(Balance b) { return b == Balance::None ? "none" : "upsampled"; }

inline FeatureMode parse_feature_mode(std::string_view s) {
  if (s == "wl") return FeatureMode::Wl;
  if (s == "wl+capa") return FeatureMode::WlCapa;
  throw ConfigError("features must be wl or wl+capa, got " + std::string(s));
}

inline Regime parse_regime(std::string_view s) {
  if (s == "closed") return Regime::Closed;
  if (s == "open") return Regime::Open;
  throw ConfigError("regime must be closed or open, got " + std::string(s));
}

inline Balance parse_balance(std::string_view s) {
  if (s == "none") return Balance::None;
  if (s == "upsampled") return Balance::Upsampled;
  throw ConfigError("balance must be none or upsampled, got " + std::string(s));
}

struct ExperimentConfig {
  FeatureMode features = FeatureMode::Wl;
  Regime regime = Regime::Closed;
  Balance balance = Balance::Upsampled;
  int k = 5;
  std::uint64_t seed = 0;
};

struct FoldResult {
  int fold = 0;
  std::size_t n_train = 0;
  std::size_t n_train_balanced = 0;
  std::size_t n_test = 0;
  ConfusionMatrix confusion;
  std::vector<ClassMetrics> per_class;
  double macro_f1 = 0;
  std::vector<std::string> undefined_classes;
  std::size_t dex_leak = 0;
  LinearModel model;
  std::vector<std::pair<std::string, std::string>> predictions;  // (id, predicted)
};

struct ExperimentResult {
  ExperimentConfig config;
  std::vector<std::string> classes;
  std::vector<std::string> sample_ids;  // evaluated samples, manifest order
  FoldPlan plan;
  CapaVocabulary vocabulary;
  std::vector<FoldResult> folds;
  double mean_macro_f1 = 0;
  double std_macro_f1 = 0;
};

inline double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// Sample (n-1) standard deviation.
inline double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

/// Samples of the corpus that take part in an experiment under `regime`,
/// restricted to those with extracted features.
inline std::vector<Sample> experiment_samples(const Corpus& corpus, const std::map<std::string, FeatureVector>& wl,
                                              Regime regime) {
  std::vector<Sample> out;
  for (const auto& s : corpus.samples) {
    if (!wl.contains(s.id)) continue;
    if (regime == Regime::Closed && s.family == kNonProxy) continue;
    out.push_back(s);
  }
  if (regime == Regime::Open &&
      std::none_of(out.begin(), out.end(), [](const Sample& s) { return s.family == kNonProxy; })) {
    throw DataError("open-world regime requires non_proxy samples in the corpus");
  }
  return out;
}

/// Experiment inputs in matrix form: one row per participating sample, in
/// manifest order, with capability rules fused in when requested.
struct DesignMatrix {
  std::vector<Sample> samples;
  std::vector<std::string> classes;  // sorted
  CapaVocabulary vocabulary;
  Layout layout;
  std::vector<std::vector<double>> vectors;
};

inline DesignMatrix design_matrix(const Corpus& corpus, const std::map<std::string, FeatureVector>& wl,
                                  FeatureMode features, Regime regime) {
  DesignMatrix dm;
  dm.samples = experiment_samples(corpus, wl, regime);
  if (dm.samples.empty()) throw DataError("experiment: no samples with features");
  std::set<std::string> class_set;
  for (const auto& s : dm.samples) {
    if (s.family == kUnlabeled) throw DataError("experiment: sample " + s.id + " is unlabeled");
    class_set.insert(s.family);
  }
  dm.classes.assign(class_set.begin(), class_set.end());
  if (dm.classes.size() < 2) throw DataError("experiment: need at least two classes");

  if (features == FeatureMode::WlCapa) dm.vocabulary = CapaVocabulary::from_samples(dm.samples);
  for (const auto& s : dm.samples) {
    const auto& base = wl.at(s.id);
    FeatureVector v = features == FeatureMode::WlCapa ? fuse_capa(base, s.capa_rules, dm.vocabulary) : base;
    if (dm.layout.empty()) dm.layout = v.layout;
    if (v.layout != dm.layout) throw DataError("experiment: inconsistent feature layout for " + s.id);
    dm.vectors.push_back(std::move(v.values));
  }
  return dm;
}

/// Trains on the rows whose ids are listed in `train_ids` (upsampled first
/// when requested). `fold` only labels error messages.
inline LinearModel fit_rows(const DesignMatrix& dm, const std::vector<LabeledId>& train_ids, Balance balance,
                            const TrainConfig& train_cfg, std::uint64_t balance_seed, int fold,
                            std::size_t* balanced_size = nullptr) {
  std::map<std::string, std::size_t> row_of;
  for (std::size_t i = 0; i < dm.samples.size(); ++i) row_of[dm.samples[i].id] = i;
  std::vector<std::string> order;
  if (balance == Balance::Upsampled) {
    order = upsample_training(train_ids, dm.classes, balance_seed, fold);
  } else {
    for (const auto& t : train_ids) order.push_back(t.id);
  }
  if (balanced_size) *balanced_size = order.size();
  std::vector<std::vector<double>> xs;
  std::vector<std::string> ys;
  for (const auto& id : order) {
    xs.push_back(dm.vectors[row_of.at(id)]);
    ys.push_back(dm.samples[row_of.at(id)].family);
  }
  LinearModel m = train(xs, ys, dm.layout, train_cfg);
  m.vocabulary = dm.vocabulary;
  return m;
}

/// Final model on every participating sample.
inline LinearModel train_final(const DesignMatrix& dm, Balance balance, const TrainConfig& train_cfg,
                               std::uint64_t seed) {
  std::vector<LabeledId> all;
  for (const auto& s : dm.samples) all.push_back({s.id, s.family});
  return fit_rows(dm, all, balance, train_cfg, seed, -1);
}

/// K-fold DEX-grouped cross-validation of the one-vs-rest SGD classifier.
inline ExperimentResult run_experiment(const Corpus& corpus, const std::map<std::string, FeatureVector>& wl,
                                       const ExperimentConfig& cfg, const TrainConfig& train_cfg,
                                       unsigned threads = 1) {
  train_cfg.validate();
  ExperimentResult res;
  res.config = cfg;
  const DesignMatrix dm = design_matrix(corpus, wl, cfg.features, cfg.regime);
  const auto& samples = dm.samples;
  res.classes = dm.classes;
  res.vocabulary = dm.vocabulary;
  for (const auto& s : samples) res.sample_ids.push_back(s.id);

  res.plan = plan_folds(group_by_dex(samples), cfg.k, cfg.seed);
  const auto leaks = dex_leakage(res.plan, samples);

  auto run_fold = [&](int f) {
    FoldResult fr;
    fr.fold = f;
    fr.confusion = ConfusionMatrix(res.classes);
    std::vector<LabeledId> train_ids;
    for (const auto& s : samples)
      if (res.plan.fold_of_sample(s.id) != f) train_ids.push_back({s.id, s.family});
    fr.n_train = train_ids.size();
    try {
      fr.model = fit_rows(dm, train_ids, cfg.balance, train_cfg, mix_seed(cfg.seed, static_cast<std::uint64_t>(f)), f,
                          &fr.n_train_balanced);
    } catch (const DataError& e) {
      throw DataError("fold " + std::to_string(f) + ": " + e.what());
    }
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (res.plan.fold_of_sample(samples[i].id) != f) continue;
      const auto p = predict(fr.model, dm.vectors[i]);
      fr.confusion.add(samples[i].family, p.label);
      fr.predictions.emplace_back(samples[i].id, p.label);
      ++fr.n_test;
    }
    fr.per_class = per_class_metrics(fr.confusion);
    for (std::size_t c = 0; c < res.classes.size(); ++c)
      if (!fr.per_class[c].defined) fr.undefined_classes.push_back(res.classes[c]);
    fr.macro_f1 = macro_f1(fr.confusion);
    fr.dex_leak = leaks[static_cast<std::size_t>(f)].size();
    return fr;
  };

  res.folds.resize(static_cast<std::size_t>(cfg.k));
  if (threads <= 1) {
    for (int f = 0; f < cfg.k; ++f) res.folds[static_cast<std::size_t>(f)] = run_fold(f);
  } else {
    std::vector<std::future<FoldResult>> jobs;
    for (int f = 0; f < cfg.k; ++f) jobs.push_back(std::async(std::launch::async, run_fold, f));
    for (int f = 0; f < cfg.k; ++f) res.folds[static_cast<std::size_t>(f)] = jobs[static_cast<std::size_t>(f)].get();
  }

  for (const auto& fr : res.folds) {
    if (fr.dex_leak != 0) {
      throw InvariantError("fold " + std::to_string(fr.fold) + ": " + std::to_string(fr.dex_leak) +
                           " DEX hashes cross the train/test boundary");
    }
  }
  std::vector<double> scores;
  for (const auto& fr : res.folds) scores.push_back(fr.macro_f1);
  res.mean_macro_f1 = mean_of(scores);
  res.std_macro_f1 = sample_std(scores);
  return res;
}

inline std::string experiment_report_csv(const ExperimentResult& r, const std::string& config_echo = {}) {
  std::string out;
  for (const auto& line : detail::split(config_echo, '\n'))
    if (!line.empty()) out += "# " + line + "\n";
  out += "row,fold,n_train,n_train_balanced,n_test,macro_f1,macro_f1_std,dex_leak,undefined_classes\n";
  std::size_t leak = 0;
  for (const auto& f : r.folds) {
    out += "fold," + std::to_string(f.fold) + "," + std::to_string(f.n_train) + "," +
           std::to_string(f.n_train_balanced) + "," + std::to_string(f.n_test) + "," + text::fixed(f.macro_f1, 6) +
           ",," + std::to_string(f.dex_leak) + "," + text::csv_quote(detail::join(f.undefined_classes, ";")) + "\n";
    leak += f.dex_leak;
  }
  out += "summary,,,,," + text::fixed(r.mean_macro_f1, 6) + "," + text::fixed(r.std_macro_f1, 6) + "," +
         std::to_string(leak) + ",\n";
  return out;
}

inline std::string per_class_csv(const ExperimentResult& r) {
  std::string out = "fold,class,tp,fp,fn,precision,recall,f1,defined\n";
  for (const auto& f : r.folds) {
    for (std::size_t c = 0; c < r.classes.size(); ++c) {
      const auto& m = f.per_class[c];
      out += std::to_string(f.fold) + "," + text::csv_quote(r.classes[c]) + "," + std::to_string(m.tp) + "," +
             std::to_string(m.fp) + "," + std::to_string(m.fn) + "," + text::fixed(m.precision, 6) + "," +
             text::fixed(m.recall, 6) + "," + text::fixed(m.f1, 6) + "," + (m.defined ? "1" : "0") + "\n";
    }
  }
  return out;
}

// One cell of a balancing x classifier x regime results grid.
struct GridCell {
  Balance balance;
  std::string classifier = "SGD";
  Regime regime;
  double mean = 0;
  double sd = 0;
};

inline std::string render_grid(const std::vector<GridCell>& cells) {
  std::map<std::pair<std::string, std::string>, std::map<std::string, std::string>> rows;
  std::vector<std::pair<std::string, std::string>> order;
  for (const auto& c : cells) {
    auto key = std::make_pair(to_string(c.balance), c.classifier);
    if (!rows.contains(key)) order.push_back(key);
    rows[key][to_string(c.regime)] = text::mean_std_cell(c.mean, c.sd);
  }
  std::string out = "balancing,classifier,closed_world,open_world\n";
  for (const auto& key : order) {
    auto& r = rows[key];
    out += key.first + "," + key.second + "," + text::csv_quote(r["closed"]) + "," + text::csv_quote(r["open"]) + "\n";
  }
  return out;
}

}  // namespace sdkprint
