#pragma once

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "sdkprint/graph.hpp"
#include "sdkprint/rng.hpp"

namespace testing_support {

// Scratch directory removed on scope exit.
class TempDir {
public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("sdkprint-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  [[nodiscard]] const std::filesystem::path& path() const { return path_; }
  [[nodiscard]] std::string str(const std::string& rel = {}) const { return (path_ / rel).string(); }

private:
  std::filesystem::path path_;
};

inline sdkprint::LabeledDigraph random_graph(sdkprint::Rng& rng, std::size_t n, const std::vector<std::string>& alphabet,
                                             double edge_p, sdkprint::GraphKind kind = sdkprint::GraphKind::FCG) {
  sdkprint::LabeledDigraph g(kind);
  for (std::size_t i = 0; i < n; ++i) g.add_node("v" + std::to_string(i), rng.pick(alphabet));
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < n; ++b)
      if (rng.bernoulli(edge_p)) g.add_edge(a, b);
  return g;
}

// Same graph with node order permuted and ids renamed.
inline sdkprint::LabeledDigraph permuted(const sdkprint::LabeledDigraph& g, sdkprint::Rng& rng) {
  std::vector<std::size_t> perm(g.node_count());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  rng.shuffle(perm);
  std::vector<std::size_t> where(perm.size());
  sdkprint::LabeledDigraph out(g.kind());
  for (std::size_t k = 0; k < perm.size(); ++k) {
    where[perm[k]] = k;
    out.add_node("p" + std::to_string(k), g.nodes()[perm[k]].label);
  }
  auto edges = g.edges();
  rng.shuffle(edges);
  for (const auto& [s, d] : edges) out.add_edge(where[s], where[d]);
  return out;
}

// Undirected reachability by repeated relaxation; deliberately naive.
inline std::vector<std::size_t> naive_components(const sdkprint::LabeledDigraph& g) {
  std::vector<std::size_t> comp(g.node_count());
  for (std::size_t i = 0; i < comp.size(); ++i) comp[i] = i;
  bool changed = true;
  while (changed) {
    changed = false;
    for (const auto& [s, d] : g.edges()) {
      const auto m = std::min(comp[s], comp[d]);
      if (comp[s] != m || comp[d] != m) {
        comp[s] = comp[d] = m;
        changed = true;
      }
    }
  }
  return comp;
}

inline std::set<std::pair<std::string, std::string>> edge_ids(const sdkprint::LabeledDigraph& g) {
  std::set<std::pair<std::string, std::string>> out;
  for (const auto& [s, d] : g.edges()) out.emplace(g.nodes()[s].id, g.nodes()[d].id);
  return out;
}

}  // namespace testing_support
