#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "sdkprint/classifier.hpp"
#include "sdkprint/corpus.hpp"
#include "sdkprint/error.hpp"
#include "sdkprint/text.hpp"
#include "sdkprint/wl.hpp"

namespace sdkprint {

// ---------------------------------------------------------------------------
// Feature naming: WL buckets are "<block>_<index>" ("cfg_wl_593"), capability
// dimensions are named by their rule.

inline std::string feature_name(const Layout& layout, const CapaVocabulary& vocab, std::size_t j) {
  for (const auto& b : layout) {
    if (j < b.offset || j >= b.offset + b.length) continue;
    if (b.name == kCapaBlock) return vocab.rules.at(j - b.offset);
    return b.name + "_" + std::to_string(j - b.offset);
  }
  throw InvariantError("feature index out of layout: " + std::to_string(j));
}

struct FeatureRef {
  std::size_t index = 0;  // global position in the vector
  std::string block;
  std::size_t local = 0;  // position inside the block
  bool is_capa = false;
};

inline std::optional<FeatureRef> parse_feature_name(const Layout& layout, const CapaVocabulary& vocab,
                                                    std::string_view name) {
  for (const auto& b : layout) {
    if (b.name == kCapaBlock) {
      if (auto i = vocab.index_of(name); i && *i < b.length) return FeatureRef{b.offset + *i, b.name, *i, true};
      continue;
    }
    const std::string prefix = b.name + "_";
    if (!name.starts_with(prefix)) continue;
    const auto digits = name.substr(prefix.size());
    std::size_t local = 0;
    auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), local);
    if (ec != std::errc{} || ptr != digits.data() + digits.size() || digits.empty()) return std::nullopt;
    if (local >= b.length) return std::nullopt;
    return FeatureRef{b.offset + local, b.name, local, false};
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Shapley attribution for the linear model

struct Attribution {
  std::string sample_id;
  std::vector<std::vector<double>> phi;  // [class][feature]
  std::vector<double> score;             // f_c(x_hat)
  std::vector<double> baseline_score;    // f_c(mean)
};

/// phi_j = w_j (x_hat_j - mean_j): the exact Shapley value of a linear model
/// under feature independence with the training mean as background.
inline Attribution linear_shap(const LinearModel& m, std::span<const double> x, std::string sample_id = {}) {
  if (m.feature_mean.empty()) throw DataError("linear_shap: model carries no feature means");
  if (x.size() != m.dim()) throw DataError("linear_shap: input dimension does not match model");
  const auto xn = l2_normalized(x);
  Attribution a;
  a.sample_id = std::move(sample_id);
  a.score = class_scores(m, xn);
  a.baseline_score = class_scores(m, m.feature_mean);
  for (std::size_t c = 0; c < m.classes.size(); ++c) {
    std::vector<double> row(m.dim());
    for (std::size_t j = 0; j < m.dim(); ++j) row[j] = m.weights[c][j] * (xn[j] - m.feature_mean[j]);
    a.phi.push_back(std::move(row));
  }
  return a;
}

/// |sum phi - (f(x) - f(mean))| / max(|f(x) - f(mean)|, tiny), worst class.
inline double completeness_error(const Attribution& a) {
  double worst = 0;
  for (std::size_t c = 0; c < a.phi.size(); ++c) {
    double sum = 0;
    for (double v : a.phi[c]) sum += v;
    const double diff = a.score[c] - a.baseline_score[c];
    worst = std::max(worst, std::abs(sum - diff) / std::max(std::abs(diff), 1e-300));
  }
  return worst;
}

struct FeatureImportance {
  std::size_t index = 0;
  std::string name;
  double mean_abs_phi = 0;
};

/// Features ranked by mean |phi| over samples and classes (ties by index).
inline std::vector<FeatureImportance> global_importance(const LinearModel& m,
                                                        const std::vector<Attribution>& attributions) {
  if (attributions.empty()) throw DataError("global_importance: no attributions");
  std::vector<double> acc(m.dim(), 0.0);
  std::size_t n = 0;
  for (const auto& a : attributions) {
    for (const auto& row : a.phi) {
      for (std::size_t j = 0; j < row.size(); ++j) acc[j] += std::abs(row[j]);
      ++n;
    }
  }
  std::vector<FeatureImportance> out;
  for (std::size_t j = 0; j < m.dim(); ++j) {
    out.push_back({j, feature_name(m.layout, m.vocabulary, j), acc[j] / static_cast<double>(n)});
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const auto& a, const auto& b) { return a.mean_abs_phi > b.mean_abs_phi; });
  return out;
}

// ---------------------------------------------------------------------------
// Bucket reverse-mapping

struct BucketKey {
  std::string block;
  std::size_t bucket = 0;
  auto operator<=>(const BucketKey&) const = default;
};

struct Witness {
  int iteration = 0;
  std::uint64_t label_hash = 0;
  // iteration 0: the node label; otherwise "own<-[preds]->[succs]" over the
  // node labels of the one-hop neighborhood
  std::string pattern;
  // refinement inputs (iteration >= 1), kept so the witness can be re-hashed
  std::uint64_t own_prev = 0;
  std::vector<std::uint64_t> preds_prev;
  std::vector<std::uint64_t> succs_prev;
  // number of samples of each family containing this witness
  std::map<std::string, std::uint64_t> family_counts;
  // methods whose nodes carry the witness, by occurrence; only the most
  // frequent kWitnessMethods are kept
  std::map<std::string, std::uint64_t> methods;

  [[nodiscard]] std::uint64_t total() const {
    std::uint64_t t = 0;
    for (const auto& [f, n] : family_counts) t += n;
    return t;
  }

  friend bool operator==(const Witness&, const Witness&) = default;
};

inline constexpr std::size_t kWitnessMethods = 5;

/// Method names ordered by occurrence count, then name.
inline std::vector<std::string> ranked_methods(const Witness& w) {
  std::vector<std::pair<std::string, std::uint64_t>> v(w.methods.begin(), w.methods.end());
  std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> out;
  for (const auto& [m, n] : v) out.push_back(m);
  return out;
}

struct BucketMap {
  WlConfig wl;
  std::map<BucketKey, std::vector<Witness>> buckets;
  std::map<std::string, std::map<std::string, std::uint64_t>> capa_counts;  // rule -> family -> samples
  std::map<std::string, std::uint64_t> family_sizes;
};

namespace detail {

inline std::string neighborhood_pattern(const LabeledDigraph& g, const Adjacency& adj, std::size_t v) {
  auto names = [&](const std::vector<std::size_t>& idx) {
    std::vector<std::string> out;
    for (auto i : idx) out.push_back(g.nodes()[i].label);
    std::sort(out.begin(), out.end());
    return join(out, ",");
  };
  return g.nodes()[v].label + "<-[" + names(adj.preds[v]) + "]->[" + names(adj.succs[v]) + "]";
}

// CFG block ids are "<method id>#<block>"; the call graph names the method.
inline std::string block_method(const std::string& block_id,
                                const std::unordered_map<std::string, std::string>& method_names) {
  const auto cut = block_id.rfind('#');
  const std::string id = cut == std::string::npos ? block_id : block_id.substr(0, cut);
  auto it = method_names.find(id);
  return it == method_names.end() ? id : it->second;
}

}  // namespace detail

/// Records, for every preprocessed graph in the corpus, which labels and
/// neighborhood patterns land in each bucket. `only` restricts recording to
/// the listed buckets.
inline BucketMap build_bucket_map(const Corpus& corpus, const WlConfig& wl, const PreprocessConfig& pre,
                                  const std::optional<std::set<BucketKey>>& only = std::nullopt) {
  wl.validate();
  BucketMap map;
  map.wl = wl;
  std::map<BucketKey, std::map<std::pair<int, std::uint64_t>, Witness>> acc;

  for (const auto& s : corpus.samples) {
    ++map.family_sizes[s.family];
    if (s.capa_rules)
      for (const auto& r : *s.capa_rules) ++map.capa_counts[r][s.family];

    std::set<std::tuple<std::string, int, std::uint64_t>> seen_here;
    std::optional<LabeledDigraph> raw_fcg;
    std::unordered_map<std::string, std::string> method_names;
    if (s.fcg_path) {
      try {
        raw_fcg = load_graph(corpus.resolve(*s.fcg_path));
        for (const auto& n : raw_fcg->nodes()) method_names.emplace(n.id, n.label);
      } catch (const DataError&) {
        raw_fcg.reset();
      }
    }
    auto scan = [&](const std::optional<std::string>& path, std::string_view block) {
      if (!path) return;
      const bool is_cfg = block == kCfgBlock;
      if (!is_cfg && !raw_fcg) return;
      LabeledDigraph g;
      try {
        g = preprocess(is_cfg ? load_graph(corpus.resolve(*path)) : *raw_fcg, pre);
      } catch (const DataError&) {
        return;  // unreadable graphs are excluded at extraction time as well
      }
      const auto labels = wl_node_labels(g, wl.iterations);
      const Adjacency adj(g);
      for (int h = 0; h <= wl.iterations; ++h) {
        const auto& level = labels[static_cast<std::size_t>(h)];
        for (std::size_t v = 0; v < g.node_count(); ++v) {
          BucketKey key{std::string(block), signed_hash(level[v], wl.dim).index};
          if (only && !only->contains(key)) continue;
          auto& slot = acc[key];
          auto [it, inserted] = slot.try_emplace({h, level[v]});
          Witness& w = it->second;
          if (inserted) {
            w.iteration = h;
            w.label_hash = level[v];
            if (h == 0) {
              w.pattern = g.nodes()[v].label;
            } else {
              const auto& prev = labels[static_cast<std::size_t>(h - 1)];
              w.pattern = detail::neighborhood_pattern(g, adj, v);
              w.own_prev = prev[v];
              for (auto u : adj.preds[v]) w.preds_prev.push_back(prev[u]);
              for (auto u : adj.succs[v]) w.succs_prev.push_back(prev[u]);
              std::sort(w.preds_prev.begin(), w.preds_prev.end());
              std::sort(w.succs_prev.begin(), w.succs_prev.end());
            }
          }
          if (seen_here.emplace(std::string(block), h, level[v]).second) ++w.family_counts[s.family];
          ++w.methods[is_cfg ? detail::block_method(g.nodes()[v].id, method_names) : g.nodes()[v].label];
        }
      }
    };
    scan(s.cfg_path, kCfgBlock);
    scan(s.fcg_path, kFcgBlock);
  }

  for (auto& [key, slot] : acc) {
    auto& list = map.buckets[key];
    for (auto& [k, w] : slot) {
      const auto ranked = ranked_methods(w);
      for (std::size_t i = kWitnessMethods; i < ranked.size(); ++i) w.methods.erase(ranked[i]);
      list.push_back(std::move(w));
    }
    std::stable_sort(list.begin(), list.end(), [](const Witness& a, const Witness& b) {
      if (a.iteration != b.iteration) return a.iteration < b.iteration;
      if (a.total() != b.total()) return a.total() > b.total();
      return a.pattern < b.pattern;
    });
  }
  return map;
}

/// True when the witness re-hashes into `key` under signed hashing.
inline bool witness_is_sound(const Witness& w, const BucketKey& key, std::size_t dim) {
  const std::uint64_t h = w.iteration == 0 ? stable_hash(w.pattern)
                                           : refine_label(w.own_prev, w.preds_prev, w.succs_prev);
  return h == w.label_hash && signed_hash(h, dim).index == key.bucket;
}

inline std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xf];
  return s;
}

inline std::string format_counts(const std::map<std::string, std::uint64_t>& counts) {
  std::vector<std::string> parts;
  for (const auto& [f, n] : counts) parts.push_back(f + ":" + std::to_string(n));
  return detail::join(parts, ";");
}

// Sorted, tab-separated; one line per witness.
inline std::string serialize_bucket_map(const BucketMap& m) {
  std::string out = "#block\tbucket\titeration\tlabel_hash\tpattern\tfamily_counts\tmethods\n";
  for (const auto& [key, list] : m.buckets) {
    for (const auto& w : list) {
      out += key.block + '\t' + std::to_string(key.bucket) + '\t' + std::to_string(w.iteration) + '\t' +
             hex64(w.label_hash) + '\t' + w.pattern + '\t' + format_counts(w.family_counts) + '\t' +
             detail::join(ranked_methods(w), ",") + '\n';
    }
  }
  return out;
}

struct WitnessReport {
  std::string feature;
  bool is_capa = false;
  std::optional<BucketKey> bucket;
  std::vector<Witness> witnesses;                       // WL features, by iteration
  std::map<std::string, std::uint64_t> family_counts;  // capa features
  bool empty = false;
};

inline WitnessReport explain_feature(const BucketMap& map, const Layout& layout, const CapaVocabulary& vocab,
                                     std::string_view feature) {
  const auto ref = parse_feature_name(layout, vocab, feature);
  if (!ref) throw DataError("unknown feature name: " + std::string(feature));
  WitnessReport r;
  r.feature = std::string(feature);
  r.is_capa = ref->is_capa;
  if (ref->is_capa) {
    if (auto it = map.capa_counts.find(r.feature); it != map.capa_counts.end()) r.family_counts = it->second;
    r.empty = r.family_counts.empty();
    return r;
  }
  r.bucket = BucketKey{ref->block, ref->local};
  if (auto it = map.buckets.find(*r.bucket); it != map.buckets.end()) r.witnesses = it->second;
  r.empty = r.witnesses.empty();
  return r;
}

inline std::string render_witness_report(const WitnessReport& r) {
  std::string out = "feature " + r.feature + (r.is_capa ? " (capability rule)\n" : "\n");
  if (r.is_capa) {
    out += "  rule: " + r.feature + "\n  samples per family: " + format_counts(r.family_counts) + "\n";
    if (r.empty) out += "  (no samples in corpus match this rule)\n";
    return out;
  }
  if (r.empty) return out + "  (no witnesses in corpus for this bucket)\n";
  int current = -1;
  for (const auto& w : r.witnesses) {
    if (w.iteration != current) {
      current = w.iteration;
      out += "  iteration " + std::to_string(current) + ":\n";
    }
    out += "    " + w.pattern + "  [" + format_counts(w.family_counts) + "]\n";
    if (!w.methods.empty()) out += "      in " + detail::join(ranked_methods(w), ", ") + "\n";
  }
  return out;
}

}  // namespace sdkprint
