#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sdkprint/error.hpp"
#include "sdkprint/graph.hpp"
#include "sdkprint/hash.hpp"

namespace sdkprint {

struct WlConfig {
  int iterations = 2;
  std::size_t dim = 512;  // buckets per graph type

  void validate() const {
    if (iterations < 0) throw ConfigError("wl.iterations must be >= 0");
    if (dim < 2) throw ConfigError("wl.dim must be >= 2");
  }

  friend bool operator==(const WlConfig&, const WlConfig&) = default;
};

struct Block {
  std::string name;
  std::size_t offset = 0;
  std::size_t length = 0;
  friend bool operator==(const Block&, const Block&) = default;
};

using Layout = std::vector<Block>;

inline std::size_t layout_length(const Layout& layout) {
  std::size_t n = 0;
  for (const auto& b : layout) n += b.length;
  return n;
}

// Blocks must tile [0, length) contiguously in order.
inline void validate_layout(const Layout& layout, std::size_t length) {
  std::size_t expect = 0;
  for (const auto& b : layout) {
    if (b.offset != expect) throw DataError("layout block " + b.name + " is not contiguous");
    expect += b.length;
  }
  if (expect != length) throw DataError("layout length does not match vector length");
}

struct FeatureVector {
  std::vector<double> values;
  Layout layout;

  [[nodiscard]] std::size_t size() const { return values.size(); }

  [[nodiscard]] const Block* find_block(std::string_view name) const {
    for (const auto& b : layout)
      if (b.name == name) return &b;
    return nullptr;
  }

  [[nodiscard]] std::span<const double> block_values(const Block& b) const {
    return std::span<const double>(values).subspan(b.offset, b.length);
  }

  void append_block(std::string name, std::span<const double> data) {
    layout.push_back({std::move(name), values.size(), data.size()});
    values.insert(values.end(), data.begin(), data.end());
  }

  friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

struct SignedIndex {
  std::size_t index;
  int sign;
  friend bool operator==(const SignedIndex&, const SignedIndex&) = default;
};

/// Bucket = hash mod d; sign from bit 63.
constexpr SignedIndex signed_hash(std::uint64_t label_hash, std::size_t dim) {
  return {static_cast<std::size_t>(label_hash % dim), (label_hash >> 63) == 0 ? 1 : -1};
}

// Separates the predecessor and successor sections of a refinement key.
inline constexpr std::uint8_t kNeighborSeparator = 0x7C;

/// One refinement step: hash of own label, sorted predecessor labels, the
/// separator byte, then sorted successor labels, each label as 8 bytes
/// big-endian. Neighbor spans must already be sorted ascending.
inline std::uint64_t refine_label(std::uint64_t own, std::span<const std::uint64_t> preds,
                                  std::span<const std::uint64_t> succs) {
  StableHasher h;
  h.word_be(own);
  for (auto p : preds) h.word_be(p);
  h.byte(kNeighborSeparator);
  for (auto s : succs) h.word_be(s);
  return h.value();
}

struct Adjacency {
  std::vector<std::vector<std::size_t>> preds;
  std::vector<std::vector<std::size_t>> succs;

  explicit Adjacency(const LabeledDigraph& g) : preds(g.node_count()), succs(g.node_count()) {
    for (const auto& [s, d] : g.edges()) {
      succs[s].push_back(d);
      preds[d].push_back(s);
    }
  }
};

/// Per-iteration node labels: result[h][v] is the iteration-h label of node v.
inline std::vector<std::vector<std::uint64_t>> wl_node_labels(const LabeledDigraph& g, int iterations) {
  const std::size_t n = g.node_count();
  std::vector<std::vector<std::uint64_t>> labels;
  labels.reserve(static_cast<std::size_t>(iterations) + 1);
  auto& first = labels.emplace_back(n);
  for (std::size_t v = 0; v < n; ++v) first[v] = stable_hash(g.nodes()[v].label);

  const Adjacency adj(g);
  std::vector<std::uint64_t> pred_buf;
  std::vector<std::uint64_t> succ_buf;
  for (int h = 0; h < iterations; ++h) {
    const auto& prev = labels.back();
    std::vector<std::uint64_t> next(n);
    for (std::size_t v = 0; v < n; ++v) {
      pred_buf.clear();
      succ_buf.clear();
      for (auto u : adj.preds[v]) pred_buf.push_back(prev[u]);
      for (auto w : adj.succs[v]) succ_buf.push_back(prev[w]);
      std::sort(pred_buf.begin(), pred_buf.end());
      std::sort(succ_buf.begin(), succ_buf.end());
      next[v] = refine_label(prev[v], pred_buf, succ_buf);
    }
    labels.push_back(std::move(next));
  }
  return labels;
}

/// Direction-aware WL feature map with signed hash projection. Every node
/// contributes +-1 to one bucket at each iteration 0..H.
inline FeatureVector wl_vector(const LabeledDigraph& g, const WlConfig& cfg, std::string block_name = "wl") {
  cfg.validate();
  std::vector<double> x(cfg.dim, 0.0);
  for (const auto& level : wl_node_labels(g, cfg.iterations)) {
    for (auto label : level) {
      const auto [i, s] = signed_hash(label, cfg.dim);
      x[i] += s;
    }
  }
  FeatureVector out;
  out.append_block(std::move(block_name), x);
  return out;
}

/// Un-projected WL representation: one sorted multiset of labels per
/// iteration. Builds each refinement key as an explicit byte string, so it
/// does not share the hashing path of wl_vector.
inline std::vector<std::vector<std::uint64_t>> wl_explicit_multisets(const LabeledDigraph& g, int iterations) {
  const std::size_t n = g.node_count();
  std::vector<std::uint64_t> cur(n);
  for (std::size_t v = 0; v < n; ++v) cur[v] = stable_hash(g.nodes()[v].label);

  auto push_be = [](std::vector<std::uint8_t>& bytes, std::uint64_t w) {
    for (int k = 7; k >= 0; --k) bytes.push_back(static_cast<std::uint8_t>(w >> (8 * k)));
  };

  std::vector<std::vector<std::uint64_t>> out;
  for (int h = 0;; ++h) {
    auto sorted = cur;
    std::sort(sorted.begin(), sorted.end());
    out.push_back(std::move(sorted));
    if (h == iterations) break;

    std::vector<std::uint64_t> next(n);
    for (std::size_t v = 0; v < n; ++v) {
      std::vector<std::uint64_t> preds;
      std::vector<std::uint64_t> succs;
      for (const auto& [s, d] : g.edges()) {
        if (d == v) preds.push_back(cur[s]);
        if (s == v) succs.push_back(cur[d]);
      }
      std::sort(preds.begin(), preds.end());
      std::sort(succs.begin(), succs.end());
      std::vector<std::uint8_t> bytes;
      push_be(bytes, cur[v]);
      for (auto p : preds) push_be(bytes, p);
      bytes.push_back(kNeighborSeparator);
      for (auto s : succs) push_be(bytes, s);
      next[v] = stable_hash(std::span<const std::uint8_t>(bytes));
    }
    cur = std::move(next);
  }
  return out;
}

inline constexpr std::string_view kCfgBlock = "cfg_wl";
inline constexpr std::string_view kFcgBlock = "fcg_wl";
inline constexpr std::string_view kCapaBlock = "capa";

/// [cfg_wl | fcg_wl], d each; a missing graph yields a zero block.
inline FeatureVector extract_features(const std::optional<LabeledDigraph>& cfg_graph,
                                      const std::optional<LabeledDigraph>& fcg_graph, const WlConfig& cfg) {
  cfg.validate();
  FeatureVector out;
  auto add = [&](const std::optional<LabeledDigraph>& g, std::string_view name) {
    if (g) {
      const auto v = wl_vector(*g, cfg);
      out.append_block(std::string(name), v.values);
    } else {
      const std::vector<double> zeros(cfg.dim, 0.0);
      out.append_block(std::string(name), zeros);
    }
  };
  add(cfg_graph, kCfgBlock);
  add(fcg_graph, kFcgBlock);
  return out;
}

}  // namespace sdkprint
