#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "sdkprint/binary_io.hpp"
#include "sdkprint/error.hpp"

namespace sdkprint {

enum class GraphKind { CFG, FCG };

inline std::string_view to_string(GraphKind k) { return k == GraphKind::CFG ? "CFG" : "FCG"; }

struct Node {
  std::string id;
  std::string label;
  friend bool operator==(const Node&, const Node&) = default;
};

// Directed graph over string-labeled nodes. Node order is significant
// (it drives tie-breaks and serialization); duplicate edges collapse.
class LabeledDigraph {
public:
  using Edge = std::pair<std::size_t, std::size_t>;

  explicit LabeledDigraph(GraphKind kind = GraphKind::FCG) : kind_(kind) {}

  [[nodiscard]] GraphKind kind() const { return kind_; }
  [[nodiscard]] const std::vector<Node>& nodes() const { return nodes_; }
  [[nodiscard]] const std::vector<Edge>& edges() const { return edges_; }
  [[nodiscard]] std::size_t node_count() const { return nodes_.size(); }
  [[nodiscard]] std::size_t edge_count() const { return edges_.size(); }
  [[nodiscard]] bool empty() const { return nodes_.empty(); }

  std::size_t add_node(std::string id, std::string label) {
    if (id.empty() || label.empty()) throw DataError("node id and label must be non-empty");
    if (index_.contains(id)) throw DataError("duplicate node id: " + id);
    index_.emplace(id, nodes_.size());
    nodes_.push_back({std::move(id), std::move(label)});
    return nodes_.size() - 1;
  }

  // Returns false when the edge already existed.
  bool add_edge(std::size_t src, std::size_t dst) {
    if (src >= nodes_.size() || dst >= nodes_.size()) throw DataError("edge endpoint out of range");
    if (!edge_set_.emplace(src, dst).second) return false;
    edges_.emplace_back(src, dst);
    return true;
  }

  bool add_edge(std::string_view src, std::string_view dst) {
    const auto s = index_of(src);
    const auto d = index_of(dst);
    if (!s) throw DataError("edge source is not a node: " + std::string(src));
    if (!d) throw DataError("edge target is not a node: " + std::string(dst));
    return add_edge(*s, *d);
  }

  [[nodiscard]] std::optional<std::size_t> index_of(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  [[nodiscard]] bool has_edge(std::size_t src, std::size_t dst) const { return edge_set_.contains({src, dst}); }

  // Equal iff same kind, same node sequence and same edge set.
  friend bool operator==(const LabeledDigraph& a, const LabeledDigraph& b) {
    return a.kind_ == b.kind_ && a.nodes_ == b.nodes_ && a.edge_set_ == b.edge_set_;
  }

private:
  GraphKind kind_;
  std::vector<Node> nodes_;
  std::vector<Edge> edges_;
  std::set<Edge> edge_set_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Induced subgraph on the nodes flagged in `keep`, preserving node order and
/// edge insertion order.
inline LabeledDigraph induced_subgraph(const LabeledDigraph& g, const std::vector<bool>& keep) {
  LabeledDigraph out(g.kind());
  std::vector<std::size_t> remap(g.node_count(), SIZE_MAX);
  for (std::size_t i = 0; i < g.node_count(); ++i) {
    if (keep[i]) remap[i] = out.add_node(g.nodes()[i].id, g.nodes()[i].label);
  }
  for (const auto& [s, d] : g.edges()) {
    if (keep[s] && keep[d]) out.add_edge(remap[s], remap[d]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Preprocessing

struct PrefixFilter {
  std::vector<std::string> prefixes;

  static PrefixFilter standard_library() {
    return {{"java.", "javax.", "android.", "androidx.", "kotlin.", "com.google.", "org.apache.", "org.json.",
             "org.xml.", "sun.", "dalvik."}};
  }

  [[nodiscard]] bool matches(std::string_view label) const {
    return std::any_of(prefixes.begin(), prefixes.end(),
                       [&](const std::string& p) { return !p.empty() && label.starts_with(p); });
  }
};

inline LabeledDigraph filter_library_nodes(const LabeledDigraph& g, const PrefixFilter& f) {
  std::vector<bool> keep(g.node_count());
  for (std::size_t i = 0; i < g.node_count(); ++i) keep[i] = !f.matches(g.nodes()[i].label);
  return induced_subgraph(g, keep);
}

namespace detail {

class DisjointSets {
public:
  explicit DisjointSets(std::size_t n) : parent_(n), size_(n, 1) { std::iota(parent_.begin(), parent_.end(), 0); }

  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }

  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (size_[a] < size_[b]) std::swap(a, b);
    parent_[b] = a;
    size_[a] += size_[b];
  }

  std::size_t size_of(std::size_t x) { return size_[find(x)]; }

private:
  std::vector<std::size_t> parent_;
  std::vector<std::size_t> size_;
};

}  // namespace detail

/// Induced subgraph on the largest weakly connected component. Ties go to the
/// component holding the earliest node.
inline LabeledDigraph largest_connected_component(const LabeledDigraph& g) {
  if (g.empty()) return LabeledDigraph(g.kind());
  detail::DisjointSets ds(g.node_count());
  for (const auto& [s, d] : g.edges()) ds.unite(s, d);

  std::size_t best_root = ds.find(0);
  std::size_t best_size = ds.size_of(0);
  for (std::size_t i = 1; i < g.node_count(); ++i) {
    if (ds.size_of(i) > best_size) {
      best_size = ds.size_of(i);
      best_root = ds.find(i);
    }
  }
  std::vector<bool> keep(g.node_count());
  for (std::size_t i = 0; i < g.node_count(); ++i) keep[i] = ds.find(i) == best_root;
  return induced_subgraph(g, keep);
}

struct MethodCfg {
  std::string method;
  LabeledDigraph cfg{GraphKind::CFG};
};

/// Disjoint union of per-method CFGs; block ids become "<method>#<index>".
inline LabeledDigraph union_cfgs(const std::vector<MethodCfg>& per_method) {
  LabeledDigraph out(GraphKind::CFG);
  std::unordered_set<std::string> seen;
  for (const auto& m : per_method) {
    if (m.cfg.kind() != GraphKind::CFG) throw DataError("union_cfgs: method " + m.method + " is not a CFG");
    if (!seen.insert(m.method).second) throw DataError("union_cfgs: duplicate method name " + m.method);
    const std::size_t base = out.node_count();
    for (std::size_t i = 0; i < m.cfg.node_count(); ++i) {
      out.add_node(m.method + "#" + std::to_string(i), m.cfg.nodes()[i].label);
    }
    for (const auto& [s, d] : m.cfg.edges()) out.add_edge(base + s, base + d);
  }
  return out;
}

struct PreprocessConfig {
  PrefixFilter filter = PrefixFilter::standard_library();
  bool lcc_fcg = true;
  // A per-application CFG is a union of disconnected per-method graphs, so
  // taking its largest component would keep a single method.
  bool lcc_cfg = false;
};

inline LabeledDigraph preprocess(const LabeledDigraph& g, const PreprocessConfig& cfg) {
  LabeledDigraph out = filter_library_nodes(g, cfg.filter);
  const bool lcc = g.kind() == GraphKind::FCG ? cfg.lcc_fcg : cfg.lcc_cfg;
  return lcc ? largest_connected_component(out) : out;
}

// ---------------------------------------------------------------------------
// Graph file format

namespace detail {

inline std::string escape_token(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case ' ': out += "\\u0020"; break;
      case '\t': out += "\\u0009"; break;
      case '\n': out += "\\u000a"; break;
      case '\r': out += "\\u000d"; break;
      case '\\': out += "\\u005c"; break;
      default: out += c;
    }
  }
  return out;
}

inline std::string unescape_token(std::string_view s, std::size_t line_no) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] != '\\') {
      out += s[i];
      continue;
    }
    if (i + 6 > s.size() || s[i + 1] != 'u') {
      throw DataError("line " + std::to_string(line_no) + ": bad escape sequence");
    }
    unsigned code = 0;
    for (std::size_t k = i + 2; k < i + 6; ++k) {
      const char h = s[k];
      code <<= 4;
      if (h >= '0' && h <= '9') code |= static_cast<unsigned>(h - '0');
      else if (h >= 'a' && h <= 'f') code |= static_cast<unsigned>(h - 'a' + 10);
      else if (h >= 'A' && h <= 'F') code |= static_cast<unsigned>(h - 'A' + 10);
      else throw DataError("line " + std::to_string(line_no) + ": bad escape sequence");
    }
    if (code > 0x7f) throw DataError("line " + std::to_string(line_no) + ": escape outside ASCII");
    out += static_cast<char>(code);
    i += 5;
  }
  return out;
}

inline std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> parts;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t') ++i;
    if (i > start) parts.push_back(line.substr(start, i - start));
  }
  return parts;
}

}  // namespace detail

inline std::string serialize_graph(const LabeledDigraph& g) {
  std::string out = "kind ";
  out += to_string(g.kind());
  out += '\n';
  for (const auto& n : g.nodes()) {
    out += "n " + detail::escape_token(n.id) + ' ' + detail::escape_token(n.label) + '\n';
  }
  for (const auto& [s, d] : g.edges()) {
    out += "e " + detail::escape_token(g.nodes()[s].id) + ' ' + detail::escape_token(g.nodes()[d].id) + '\n';
  }
  return out;
}

inline LabeledDigraph parse_graph(std::string_view text) {
  std::optional<LabeledDigraph> g;
  bool seen_edge = false;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    const auto parts = detail::split_ws(line);
    if (parts.empty()) continue;
    auto fail = [&](const std::string& msg) -> DataError {
      return DataError("graph line " + std::to_string(line_no) + ": " + msg);
    };
    if (!g) {
      if (parts.size() != 2 || parts[0] != "kind") throw fail("expected `kind <CFG|FCG>`");
      if (parts[1] == "CFG") g.emplace(GraphKind::CFG);
      else if (parts[1] == "FCG") g.emplace(GraphKind::FCG);
      else throw fail("unknown graph kind " + std::string(parts[1]));
      continue;
    }
    if (parts[0] == "n") {
      if (parts.size() != 3) throw fail("node line needs id and label");
      if (seen_edge) throw fail("node line after edge lines");
      try {
        g->add_node(detail::unescape_token(parts[1], line_no), detail::unescape_token(parts[2], line_no));
      } catch (const DataError& e) {
        throw fail(e.what());
      }
    } else if (parts[0] == "e") {
      if (parts.size() != 3) throw fail("edge line needs two node ids");
      seen_edge = true;
      try {
        g->add_edge(detail::unescape_token(parts[1], line_no), detail::unescape_token(parts[2], line_no));
      } catch (const DataError& e) {
        throw fail(e.what());
      }
    } else {
      throw fail("unknown line tag " + std::string(parts[0]));
    }
  }
  if (!g) throw DataError("graph: missing kind header");
  return std::move(*g);
}

inline LabeledDigraph load_graph(const std::string& path) {
  try {
    return parse_graph(io::read_file(path));
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

inline void save_graph(const std::string& path, const LabeledDigraph& g) { io::write_file(path, serialize_graph(g)); }

}  // namespace sdkprint
