#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <vector>

#include "sdkprint/binary_io.hpp"
#include "sdkprint/error.hpp"
#include "sdkprint/graph.hpp"
#include "sdkprint/rng.hpp"
#include "sdkprint/wl.hpp"

namespace sdkprint {

inline constexpr std::string_view kNonProxy = "non_proxy";
inline constexpr std::string_view kUnlabeled = "-";

struct Sample {
  std::string id;
  std::string family;
  std::optional<std::string> cfg_path;
  std::optional<std::string> fcg_path;
  std::vector<std::string> dex_hashes;  // sorted, unique
  std::optional<std::vector<std::string>> capa_rules;
  std::optional<std::string> strings_path;
};

struct Corpus {
  std::vector<std::string> labels;  // declared label set, in header order
  std::vector<Sample> samples;
  std::filesystem::path base_dir;  // relative paths resolve against this

  [[nodiscard]] std::string resolve(const std::string& p) const {
    const std::filesystem::path path(p);
    return path.is_absolute() ? p : (base_dir / path).string();
  }

  [[nodiscard]] std::map<std::string, std::size_t> family_counts() const {
    std::map<std::string, std::size_t> counts;
    for (const auto& s : samples) ++counts[s.family];
    return counts;
  }
};

namespace detail {

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t end = s.find(sep, start);
    out.emplace_back(s.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start));
    if (end == std::string_view::npos) break;
    start = end + 1;
  }
  return out;
}

inline std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

inline bool is_lower_hex64(std::string_view s) {
  return s.size() == 64 &&
         std::all_of(s.begin(), s.end(), [](char c) { return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'); });
}

}  // namespace detail

struct ManifestOptions {
  // Accept "-" as the family field (prediction inputs).
  bool allow_unlabeled = false;
};

/// Parse a tab-separated manifest.
/// Columns: id, family, cfg-path, fcg-path, dex-hashes, capa-rules, strings-path.
inline Corpus parse_manifest(std::string_view text, std::filesystem::path base_dir, ManifestOptions opts = {}) {
  Corpus corpus;
  corpus.base_dir = std::move(base_dir);
  bool have_labels = false;
  std::set<std::string> ids;
  std::set<std::string> label_set;
  std::size_t line_no = 0;
  for (const auto& raw : detail::split(text, '\n')) {
    ++line_no;
    std::string_view line = raw;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.empty()) continue;
    auto fail = [&](const std::string& msg) { return DataError("manifest line " + std::to_string(line_no) + ": " + msg); };
    if (line.starts_with("#labels")) {
      if (have_labels) throw fail("duplicate #labels header");
      const auto rest = line.substr(7);
      const auto first = rest.find_first_not_of(" \t");
      if (first == std::string_view::npos) throw fail("empty label set");
      corpus.labels = detail::split(rest.substr(first), ',');
      for (const auto& l : corpus.labels) {
        if (l.empty()) throw fail("empty label in #labels");
        if (!label_set.insert(l).second) throw fail("duplicate label " + l);
      }
      have_labels = true;
      continue;
    }
    if (line.starts_with("#")) continue;
    if (!have_labels) throw fail("record before #labels header");

    const auto f = detail::split(line, '\t');
    if (f.size() != 7) throw fail("expected 7 tab-separated fields, got " + std::to_string(f.size()));
    Sample s;
    s.id = f[0];
    if (s.id.empty() || s.id == "-") throw fail("empty sample id");
    if (!ids.insert(s.id).second) throw fail("duplicate sample id " + s.id);
    s.family = f[1];
    if (!(opts.allow_unlabeled && s.family == kUnlabeled) && !label_set.contains(s.family)) {
      throw fail("family '" + s.family + "' not in declared label set");
    }
    if (f[2] != "-") s.cfg_path = f[2];
    if (f[3] != "-") s.fcg_path = f[3];
    if (f[4] != "-") {
      std::set<std::string> hashes;
      for (const auto& h : detail::split(f[4], ',')) {
        if (!detail::is_lower_hex64(h)) throw fail("dex hash is not lowercase 64-hex: " + h);
        hashes.insert(h);
      }
      s.dex_hashes.assign(hashes.begin(), hashes.end());
    }
    if (f[5] != "-") {
      std::set<std::string> rules;
      for (const auto& r : detail::split(f[5], ',')) {
        if (r.empty()) throw fail("empty capa rule name");
        rules.insert(r);
      }
      s.capa_rules = std::vector<std::string>(rules.begin(), rules.end());
    }
    if (f[6] != "-") s.strings_path = f[6];
    corpus.samples.push_back(std::move(s));
  }
  if (!have_labels) throw DataError("manifest: missing #labels header");
  return corpus;
}

inline Corpus load_corpus(const std::string& manifest_path, ManifestOptions opts = {}) {
  const auto text = io::read_file(manifest_path);
  try {
    return parse_manifest(text, std::filesystem::path(manifest_path).parent_path(), opts);
  } catch (const DataError& e) {
    throw DataError(manifest_path + ": " + e.what());
  }
}

inline std::string serialize_manifest(const Corpus& c) {
  std::string out = "#labels " + detail::join(c.labels, ",") + "\n";
  for (const auto& s : c.samples) {
    out += s.id + '\t' + s.family + '\t' + s.cfg_path.value_or("-") + '\t' + s.fcg_path.value_or("-") + '\t';
    out += s.dex_hashes.empty() ? std::string("-") : detail::join(s.dex_hashes, ",");
    out += '\t';
    out += (s.capa_rules && !s.capa_rules->empty()) ? detail::join(*s.capa_rules, ",") : std::string("-");
    out += '\t' + s.strings_path.value_or("-") + '\n';
  }
  return out;
}

/// One string per line; empty lines are skipped.
inline std::vector<std::string> load_strings(const Corpus& c, const Sample& s) {
  if (!s.strings_path) return {};
  std::set<std::string> uniq;
  for (auto& line : detail::split(io::read_file(c.resolve(*s.strings_path)), '\n')) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) uniq.insert(std::move(line));
  }
  return {uniq.begin(), uniq.end()};
}

// ---------------------------------------------------------------------------
// Capability vectors

struct CapaVocabulary {
  std::vector<std::string> rules;  // sorted, distinct; index = one-hot position

  static CapaVocabulary from_samples(const std::vector<Sample>& samples) {
    std::set<std::string> all;
    for (const auto& s : samples)
      if (s.capa_rules) all.insert(s.capa_rules->begin(), s.capa_rules->end());
    return {{all.begin(), all.end()}};
  }

  [[nodiscard]] std::optional<std::size_t> index_of(std::string_view rule) const {
    auto it = std::lower_bound(rules.begin(), rules.end(), rule);
    if (it == rules.end() || *it != rule) return std::nullopt;
    return static_cast<std::size_t>(it - rules.begin());
  }

  [[nodiscard]] std::size_t size() const { return rules.size(); }
  friend bool operator==(const CapaVocabulary&, const CapaVocabulary&) = default;
};

/// Appends a binary "capa" block of length |vocab|. Absent rules give zeros;
/// rules outside the vocabulary are ignored.
inline FeatureVector fuse_capa(const FeatureVector& wl, const std::optional<std::vector<std::string>>& rules,
                               const CapaVocabulary& vocab) {
  FeatureVector out = wl;
  std::vector<double> block(vocab.size(), 0.0);
  if (rules) {
    for (const auto& r : *rules)
      if (auto i = vocab.index_of(r)) block[*i] = 1.0;
  }
  out.append_block(std::string(kCapaBlock), block);
  return out;
}

// ---------------------------------------------------------------------------
// DEX grouping and fold planning

/// Union-find over the sample/dex-hash bipartite graph. Group id is the
/// lexicographically smallest member sample id.
inline std::map<std::string, std::string> group_by_dex(const std::vector<Sample>& samples) {
  detail::DisjointSets ds(samples.size());
  std::unordered_map<std::string, std::size_t> first_owner;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (const auto& h : samples[i].dex_hashes) {
      auto [it, inserted] = first_owner.emplace(h, i);
      if (!inserted) ds.unite(it->second, i);
    }
  }
  std::unordered_map<std::size_t, std::string> smallest;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto [it, inserted] = smallest.emplace(ds.find(i), samples[i].id);
    if (!inserted && samples[i].id < it->second) it->second = samples[i].id;
  }
  std::map<std::string, std::string> group_of;
  for (std::size_t i = 0; i < samples.size(); ++i) group_of[samples[i].id] = smallest[ds.find(i)];
  return group_of;
}

struct FoldPlan {
  int k = 5;
  std::map<std::string, std::string> group_of;  // sample id -> group id
  std::map<std::string, int> fold_of;           // group id -> fold

  [[nodiscard]] int fold_of_sample(const std::string& id) const {
    auto g = group_of.find(id);
    if (g == group_of.end()) throw InvariantError("sample not in fold plan: " + id);
    return fold_of.at(g->second);
  }

  [[nodiscard]] std::vector<std::size_t> fold_sizes() const {
    std::vector<std::size_t> sizes(static_cast<std::size_t>(k), 0);
    for (const auto& [id, g] : group_of) ++sizes[static_cast<std::size_t>(fold_of.at(g))];
    return sizes;
  }

  friend bool operator==(const FoldPlan&, const FoldPlan&) = default;
};

/// Size-balanced grouped K-fold: groups sorted by (size desc, id asc), each
/// placed into the currently smallest fold (ties to the lowest index). The
/// rule is deterministic, so `seed` is accepted for interface symmetry only.
inline FoldPlan plan_folds(const std::map<std::string, std::string>& group_of, int k,
                           [[maybe_unused]] std::uint64_t seed = 0) {
  if (k < 2) throw ConfigError("folds must be >= 2");
  std::map<std::string, std::size_t> sizes;
  for (const auto& [id, g] : group_of) ++sizes[g];
  if (sizes.size() < static_cast<std::size_t>(k)) {
    throw DataError("fold planning: " + std::to_string(sizes.size()) + " groups but " + std::to_string(k) +
                    " folds requested");
  }
  std::vector<std::pair<std::string, std::size_t>> groups(sizes.begin(), sizes.end());
  std::stable_sort(groups.begin(), groups.end(), [](const auto& a, const auto& b) { return a.second > b.second; });

  FoldPlan plan;
  plan.k = k;
  plan.group_of = group_of;
  std::vector<std::size_t> load(static_cast<std::size_t>(k), 0);
  for (const auto& [g, n] : groups) {
    const auto target = static_cast<std::size_t>(std::min_element(load.begin(), load.end()) - load.begin());
    plan.fold_of[g] = static_cast<int>(target);
    load[target] += n;
  }
  return plan;
}

/// Per-class round-robin split that ignores DEX sharing. Exists to show what
/// the grouped planner prevents; never used for evaluation.
inline FoldPlan plan_stratified_folds(const std::vector<Sample>& samples, int k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("folds must be >= 2");
  std::map<std::string, std::vector<std::string>> by_class;
  for (const auto& s : samples) by_class[s.family].push_back(s.id);
  FoldPlan plan;
  plan.k = k;
  Rng rng(seed);
  int next = 0;
  for (auto& [fam, ids] : by_class) {
    rng.shuffle(ids);
    for (const auto& id : ids) {
      plan.group_of[id] = id;
      plan.fold_of[id] = next;
      next = (next + 1) % k;
    }
  }
  return plan;
}

/// DEX hashes present on both sides of each fold's train/test boundary.
inline std::vector<std::set<std::string>> dex_leakage(const FoldPlan& plan, const std::vector<Sample>& samples) {
  std::vector<std::set<std::string>> leaks(static_cast<std::size_t>(plan.k));
  for (int f = 0; f < plan.k; ++f) {
    std::set<std::string> train;
    std::set<std::string> test;
    for (const auto& s : samples) {
      auto& side = plan.fold_of_sample(s.id) == f ? test : train;
      side.insert(s.dex_hashes.begin(), s.dex_hashes.end());
    }
    std::set_intersection(train.begin(), train.end(), test.begin(), test.end(),
                          std::inserter(leaks[static_cast<std::size_t>(f)], leaks[static_cast<std::size_t>(f)].end()));
  }
  return leaks;
}

struct LabeledId {
  std::string id;
  std::string label;
};

/// Random upsampling with replacement of every minority class up to the
/// majority count. Returns the original ids (input order) followed by the
/// drawn extras, classes in sorted order.
inline std::vector<std::string> upsample_training(const std::vector<LabeledId>& train,
                                                  const std::vector<std::string>& classes, std::uint64_t seed,
                                                  int fold = -1) {
  std::map<std::string, std::vector<std::string>> by_class;
  for (const auto& c : classes) by_class[c];
  for (const auto& t : train) by_class[t.label].push_back(t.id);
  std::size_t majority = 0;
  for (const auto& [c, ids] : by_class) {
    if (ids.empty()) {
      throw DataError("class '" + c + "' absent from training partition" +
                      (fold >= 0 ? " of fold " + std::to_string(fold) : std::string()));
    }
    majority = std::max(majority, ids.size());
  }
  std::vector<std::string> out;
  out.reserve(majority * by_class.size());
  for (const auto& t : train) out.push_back(t.id);
  Rng rng(seed);
  for (const auto& [c, ids] : by_class) {
    for (std::size_t n = ids.size(); n < majority; ++n) out.push_back(rng.pick(ids));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Feature extraction over a corpus and the binary feature cache

struct ExtractionResult {
  std::vector<std::string> ids;
  std::vector<FeatureVector> vectors;
  std::vector<std::pair<std::string, std::string>> failures;  // (id, reason)
};

inline FeatureVector extract_sample_features(const Corpus& c, const Sample& s, const WlConfig& wl,
                                             const PreprocessConfig& pre) {
  std::optional<LabeledDigraph> cfg_graph;
  std::optional<LabeledDigraph> fcg_graph;
  if (s.cfg_path) {
    auto g = load_graph(c.resolve(*s.cfg_path));
    if (g.kind() != GraphKind::CFG) throw DataError(*s.cfg_path + ": expected a CFG");
    cfg_graph = preprocess(g, pre);
  }
  if (s.fcg_path) {
    auto g = load_graph(c.resolve(*s.fcg_path));
    if (g.kind() != GraphKind::FCG) throw DataError(*s.fcg_path + ": expected an FCG");
    fcg_graph = preprocess(g, pre);
  }
  return extract_features(cfg_graph, fcg_graph, wl);
}

/// Extracts every sample; failures are collected, not thrown. Output order
/// follows manifest order regardless of `threads`.
inline ExtractionResult extract_corpus(const Corpus& c, const WlConfig& wl, const PreprocessConfig& pre,
                                       unsigned threads = 1) {
  wl.validate();
  const std::size_t n = c.samples.size();
  std::vector<std::optional<FeatureVector>> slots(n);
  std::vector<std::string> errors(n);
  auto work = [&](std::size_t begin, std::size_t step) {
    for (std::size_t i = begin; i < n; i += step) {
      try {
        slots[i] = extract_sample_features(c, c.samples[i], wl, pre);
      } catch (const DataError& e) {
        errors[i] = e.what();
      }
    }
  };
  threads = std::max(1u, threads);
  if (threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
  }
  ExtractionResult r;
  for (std::size_t i = 0; i < n; ++i) {
    if (slots[i]) {
      r.ids.push_back(c.samples[i].id);
      r.vectors.push_back(std::move(*slots[i]));
    } else {
      r.failures.emplace_back(c.samples[i].id, errors[i]);
    }
  }
  return r;
}

inline constexpr std::string_view kFeatureMagic = "SDKPFEAT";
inline constexpr std::uint32_t kFeatureVersion = 1;

struct FeatureCache {
  WlConfig wl;  // refinement settings the vectors were extracted with
  Layout layout;
  std::vector<std::string> ids;
  std::vector<std::vector<double>> vectors;

  [[nodiscard]] std::size_t dim() const { return layout_length(layout); }

  [[nodiscard]] std::map<std::string, FeatureVector> by_id() const {
    std::map<std::string, FeatureVector> out;
    for (std::size_t i = 0; i < ids.size(); ++i) out[ids[i]] = FeatureVector{vectors[i], layout};
    return out;
  }
};

inline std::string serialize_feature_cache(const FeatureCache& fc) {
  io::ByteWriter w;
  w.raw(kFeatureMagic);
  w.u32(kFeatureVersion);
  w.u32(static_cast<std::uint32_t>(fc.wl.iterations));
  w.u64(fc.wl.dim);
  w.u64(fc.dim());
  w.u32(static_cast<std::uint32_t>(fc.layout.size()));
  for (const auto& b : fc.layout) {
    w.str(b.name);
    w.u64(b.offset);
    w.u64(b.length);
  }
  w.u64(fc.ids.size());
  for (std::size_t i = 0; i < fc.ids.size(); ++i) {
    if (fc.vectors[i].size() != fc.dim()) throw InvariantError("feature cache: vector length mismatch");
    w.str(fc.ids[i]);
    for (double v : fc.vectors[i]) w.f64(v);
  }
  return w.bytes();
}

inline FeatureCache parse_feature_cache(std::string bytes, const std::string& what = "feature cache") {
  io::ByteReader r(std::move(bytes), what);
  if (r.raw(kFeatureMagic.size()) != kFeatureMagic) throw DataError(what + ": bad magic");
  if (const auto v = r.u32(); v != kFeatureVersion) {
    throw DataError(what + ": unsupported version " + std::to_string(v));
  }
  FeatureCache fc;
  fc.wl.iterations = static_cast<int>(r.u32());
  fc.wl.dim = r.u64();
  const std::uint64_t dim = r.u64();
  const std::uint32_t blocks = r.u32();
  for (std::uint32_t i = 0; i < blocks; ++i) {
    Block b;
    b.name = r.str();
    b.offset = r.u64();
    b.length = r.u64();
    fc.layout.push_back(std::move(b));
  }
  validate_layout(fc.layout, dim);
  const std::uint64_t count = r.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    fc.ids.push_back(r.str());
    std::vector<double> v(dim);
    for (auto& x : v) x = r.f64();
    fc.vectors.push_back(std::move(v));
  }
  if (!r.at_end()) throw DataError(what + ": trailing bytes");
  return fc;
}

inline FeatureCache load_feature_cache(const std::string& path) {
  return parse_feature_cache(io::read_file(path), path);
}

inline void save_feature_cache(const std::string& path, const FeatureCache& fc) {
  io::write_file(path, serialize_feature_cache(fc));
}

}  // namespace sdkprint
