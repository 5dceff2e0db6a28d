#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "sdkprint/classifier.hpp"
#include "sdkprint/corpus.hpp"
#include "sdkprint/error.hpp"
#include "sdkprint/explain.hpp"
#include "sdkprint/graph.hpp"
#include "sdkprint/rng.hpp"
#include "sdkprint/wl.hpp"

namespace sdkprint {

// Seeded generator of an SDK-embedding ecosystem: every proxy family owns an
// SDK call graph that is spliced into random host applications; DEX hashes
// are reused between siblings at a configured rate.
struct SynthConfig {
  std::vector<std::string> families{"alpha", "bravo", "charlie", "delta"};
  std::vector<std::size_t> samples_per_family{4, 167, 140, 27};
  std::vector<double> dex_reuse{0.15, 0.35, 0.95, 0.15};
  bool non_proxy = true;
  std::size_t non_proxy_samples = 100;

  std::size_t sdk_size = 40;
  double sdk_variation = 0.1;  // fraction of SDK methods dropped in a fresh DEX version
  std::size_t sdk_method_blocks_min = 8;  // SDK methods carry heavier bodies than host UI code
  std::size_t sdk_method_blocks_max = 16;
  std::size_t benign_sdks = 4;  // ordinary SDKs, one bundled into each non_proxy app
  std::size_t host_min = 100;
  std::size_t host_max = 400;
  double obfuscated_fraction = 0.3;
  std::size_t library_nodes = 20;  // standard-library call targets (filtered)
  std::size_t utility_components = 2;

  std::size_t shared_libraries = 4;
  std::size_t shared_library_size = 15;
  double shared_library_rate = 0.5;

  std::size_t planted_tokens = 8;
  double planted_token_rate = 0.9;
  std::size_t shared_tokens = 32;
  double shared_token_rate = 0.9;  // per token, given its library is bundled
  std::size_t noise_tokens = 15;
  std::size_t noise_vocabulary = 3000;

  double capa_rate = 0.56;

  std::uint64_t seed = 1;

  void validate() const {
    if (families.empty()) throw ConfigError("synth.families must not be empty");
    if (samples_per_family.size() != families.size())
      throw ConfigError("synth.samples_per_family must have one entry per family");
    if (dex_reuse.size() != families.size()) throw ConfigError("synth.dex_reuse must have one entry per family");
    std::set<std::string> uniq;
    for (const auto& f : families) {
      if (f.empty() || f == kNonProxy) throw ConfigError("synth.families: invalid family name '" + f + "'");
      if (!uniq.insert(f).second) throw ConfigError("synth.families: duplicate family '" + f + "'");
      if (f.find_first_of(", \t\n") != std::string::npos)
        throw ConfigError("synth.families: family names may not contain separators");
    }
    for (auto n : samples_per_family)
      if (n == 0) throw ConfigError("synth.samples_per_family entries must be positive");
    if (non_proxy && non_proxy_samples == 0) throw ConfigError("synth.non_proxy_samples must be positive");
    auto rate = [](double r, const char* name) {
      if (!(r >= 0.0 && r <= 1.0)) throw ConfigError(std::string("synth.") + name + " must be in [0,1]");
    };
    for (double r : dex_reuse) rate(r, "dex_reuse");
    rate(sdk_variation, "sdk_variation");
    rate(obfuscated_fraction, "obfuscated_fraction");
    rate(shared_library_rate, "shared_library_rate");
    rate(planted_token_rate, "planted_token_rate");
    rate(shared_token_rate, "shared_token_rate");
    rate(capa_rate, "capa_rate");
    if (host_min == 0 || host_min > host_max) throw ConfigError("synth.host_min must be in [1, host_max]");
    if (sdk_size > host_min) throw ConfigError("synth.sdk_size must not exceed synth.host_min");
    if (sdk_method_blocks_min == 0 || sdk_method_blocks_min > sdk_method_blocks_max)
      throw ConfigError("synth.sdk_method_blocks_min must be in [1, sdk_method_blocks_max]");
    if (noise_tokens > 0 && noise_vocabulary == 0) throw ConfigError("synth.noise_vocabulary must be positive");
  }
};

struct GroundTruth {
  std::map<std::string, std::string> family_of;                        // sample id -> family
  std::map<std::string, std::vector<std::string>> planted_methods;     // family -> SDK method labels
  std::map<std::string, std::vector<std::string>> planted_tokens;      // family -> signature tokens
  std::vector<std::string> shared_tokens;
  std::map<std::string, std::string> sdk_dex;                          // sample id -> SDK DEX hash
  std::map<std::string, bool> reused;                                  // sample id -> reused a sibling DEX
};

struct SynthCorpus {
  Corpus corpus;
  std::map<std::string, LabeledDigraph> graphs;              // relative path -> graph
  std::map<std::string, std::vector<std::string>> strings;   // relative path -> strings
  GroundTruth truth;
};

namespace synth_detail {

inline const std::vector<std::string>& opcodes() {
  static const std::vector<std::string> ops{
      "nop",         "move",          "move-result",      "return-void",    "return",    "const",
      "const-string", "new-instance", "check-cast",       "iget",           "iput",      "sget",
      "sput",        "invoke-virtual", "invoke-static",   "invoke-direct",  "invoke-interface",
      "if-eqz",      "if-nez",        "if-lt",            "goto",           "throw",     "aget",
      "aput",        "add-int",       "monitor-enter",    "monitor-exit",   "array-length"};
  return ops;
}

inline const std::vector<std::string>& platform_apis() {
  static const std::vector<std::string> apis{
      "java.lang.String.valueOf",          "java.lang.StringBuilder.append",
      "java.util.HashMap.put",             "java.net.Socket.connect",
      "java.io.InputStream.read",          "javax.net.ssl.SSLSocketFactory.createSocket",
      "android.util.Log.d",                "android.content.Context.getSystemService",
      "android.net.ConnectivityManager.getActiveNetworkInfo",
      "androidx.work.WorkManager.enqueue", "androidx.core.app.NotificationCompat$Builder.build",
      "kotlin.jvm.internal.Intrinsics.checkNotNull",
      "com.google.gson.Gson.toJson",        "com.google.android.gms.ads.MobileAds.initialize",
      "org.apache.http.client.HttpClient.execute",
      "org.json.JSONObject.put",           "org.xml.sax.XMLReader.parse",
      "sun.misc.Unsafe.allocateInstance",  "dalvik.system.DexClassLoader.loadClass",
      "java.lang.Thread.start"};
  return apis;
}

inline const std::vector<std::string>& generic_capa_rules() {
  static const std::vector<std::string> rules{
      "allocate memory",          "get file size",           "read file on Linux",
      "write file on Linux",      "check if file exists",    "get current process ID",
      "parse URL",                "encode data using Base64", "hash data using MD5",
      "create thread",            "terminate thread",        "get system information on Linux",
      "query environment variable", "link function at runtime on Linux", "compare strings",
      "get hostname",             "resolve DNS",             "set socket configuration",
      "copy memory",              "open directory"};
  return rules;
}

inline const std::vector<std::string>& family_capa_pool() {
  static const std::vector<std::string> rules{
      "create TCP socket",           "connect TCP socket",        "receive data on socket",
      "send data on socket",         "create UDP socket",         "start TCP server",
      "encrypt data using AES",      "encrypt data using RC4",    "decrypt data using XOR",
      "communicate via SOCKS proxy", "act as TCP client",         "set non-blocking socket",
      "persist via boot receiver",   "obfuscate stackstrings",    "check for debugger",
      "enumerate network interfaces"};
  return rules;
}

inline std::string hex_id(std::uint64_t seed, std::uint64_t tag) {
  std::string out;
  for (std::uint64_t k = 0; k < 4; ++k) out += hex64(mix_seed(seed, tag * 4 + k));
  return out;
}

inline std::string block_label(Rng& rng) {
  const auto& ops = opcodes();
  const auto n = static_cast<std::size_t>(rng.range(1, 4));
  std::string s;
  for (std::size_t i = 0; i < n; ++i) {
    if (i) s += ';';
    s += rng.pick(ops);
  }
  return s;
}

inline LabeledDigraph random_method_cfg(Rng& rng, std::int64_t min_blocks = 1, std::int64_t max_blocks = 6) {
  LabeledDigraph g(GraphKind::CFG);
  const auto blocks = static_cast<std::size_t>(rng.range(min_blocks, max_blocks));
  for (std::size_t i = 0; i < blocks; ++i) g.add_node("b" + std::to_string(i), block_label(rng));
  for (std::size_t i = 0; i + 1 < blocks; ++i) {
    if (rng.bernoulli(0.8)) g.add_edge(i, i + 1);
    if (i + 2 < blocks && rng.bernoulli(0.4)) g.add_edge(i, static_cast<std::size_t>(rng.range(static_cast<std::int64_t>(i) + 2, static_cast<std::int64_t>(blocks) - 1)));
    if (rng.bernoulli(0.1)) g.add_edge(i, static_cast<std::size_t>(rng.range(0, static_cast<std::int64_t>(i))));
  }
  return g;
}

// Preferential attachment: each new node links to up to two earlier nodes,
// chosen proportional to degree (mixed with uniform), random direction.
inline std::vector<std::pair<std::size_t, std::size_t>> attachment_edges(Rng& rng, std::size_t n) {
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  std::vector<std::size_t> endpoints;
  for (std::size_t v = 1; v < n; ++v) {
    const std::size_t links = std::min<std::size_t>(v, 2);
    std::set<std::size_t> chosen;
    while (chosen.size() < links) {
      std::size_t u;
      if (endpoints.empty() || rng.bernoulli(0.5)) u = static_cast<std::size_t>(rng.below(v));
      else u = rng.pick(endpoints);
      chosen.insert(u);
    }
    for (auto u : chosen) {
      if (rng.bernoulli(0.5)) edges.emplace_back(u, v);
      else edges.emplace_back(v, u);
      endpoints.push_back(u);
      endpoints.push_back(v);
    }
  }
  return edges;
}

struct Component {
  std::vector<std::string> labels;
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  std::vector<LabeledDigraph> cfgs;  // per method
};

inline Component make_component(Rng& rng, std::size_t n, const std::string& package, std::int64_t min_blocks = 1,
                                std::int64_t max_blocks = 6) {
  Component c;
  for (std::size_t i = 0; i < n; ++i) {
    c.labels.push_back(package + ".C" + std::to_string(i / 4) + ".m" + std::to_string(i));
    c.cfgs.push_back(random_method_cfg(rng, min_blocks, max_blocks));
  }
  c.edges = attachment_edges(rng, n);
  return c;
}

struct FamilyArtifacts {
  Component sdk;
  std::vector<std::string> tokens;
  std::vector<std::string> capa;
};

}  // namespace synth_detail

inline SynthCorpus generate(const SynthConfig& cfg) {
  using namespace synth_detail;
  cfg.validate();
  SynthCorpus out;
  out.corpus.labels = cfg.families;
  if (cfg.non_proxy) out.corpus.labels.emplace_back(kNonProxy);

  // Family-level artifacts.
  std::vector<FamilyArtifacts> fams;
  for (std::size_t f = 0; f < cfg.families.size(); ++f) {
    Rng rng(mix_seed(cfg.seed, 100 + f));
    FamilyArtifacts a;
    const auto& name = cfg.families[f];
    a.sdk = make_component(rng, cfg.sdk_size, "net." + name + "sdk.core",
                           static_cast<std::int64_t>(cfg.sdk_method_blocks_min),
                           static_cast<std::int64_t>(cfg.sdk_method_blocks_max));
    for (std::size_t t = 0; t < cfg.planted_tokens; ++t)
      a.tokens.push_back(name + "-relay-" + std::to_string(t) + ".tunnel");
    const auto& pool = family_capa_pool();
    for (std::size_t r = 0; r < 4; ++r) a.capa.push_back(pool[(f * 4 + r) % pool.size()]);
    out.truth.planted_methods[name] = a.sdk.labels;
    out.truth.planted_tokens[name] = a.tokens;
    fams.push_back(std::move(a));
  }
  std::vector<Component> shared;
  for (std::size_t i = 0; i < cfg.shared_libraries; ++i) {
    Rng rng(mix_seed(cfg.seed, 50 + i));
    shared.push_back(make_component(rng, cfg.shared_library_size, "lib" + std::to_string(i) + ".vendor"));
  }
  std::vector<Component> benign;
  for (std::size_t i = 0; i < cfg.benign_sdks; ++i) {
    Rng rng(mix_seed(cfg.seed, 70 + i));
    benign.push_back(make_component(rng, cfg.sdk_size, "io.adkit" + std::to_string(i) + ".mediation",
                                    static_cast<std::int64_t>(cfg.sdk_method_blocks_min),
                                    static_cast<std::int64_t>(cfg.sdk_method_blocks_max)));
  }
  for (std::size_t t = 0; t < cfg.shared_tokens; ++t)
    out.truth.shared_tokens.push_back("okhttp/3." + std::to_string(t) + " shared-client");

  std::uint64_t global = 0;
  auto emit_sample = [&](const std::string& family, std::ptrdiff_t fam_index,
                         const std::optional<std::string>& sdk_dex, std::uint64_t sdk_version) {
    const std::uint64_t idx = global++;
    Rng rng(mix_seed(cfg.seed, 1000 + idx));
    Sample s;
    s.id = hex_id(cfg.seed, 1'000'000 + idx);
    s.family = family;
    const std::string app = "com.app" + s.id.substr(0, 8);

    LabeledDigraph fcg(GraphKind::FCG);
    std::vector<MethodCfg> methods;
    auto add_method = [&](const std::string& id, const std::string& label, const LabeledDigraph* cfg_graph) {
      const auto v = fcg.add_node(id, label);
      if (cfg_graph) methods.push_back({id, *cfg_graph});
      return v;
    };

    // Host application.
    const auto n_host = static_cast<std::size_t>(
        rng.range(static_cast<std::int64_t>(cfg.host_min), static_cast<std::int64_t>(cfg.host_max)));
    std::vector<std::size_t> host;
    for (std::size_t i = 0; i < n_host; ++i) {
      std::string label;
      if (rng.bernoulli(cfg.obfuscated_fraction)) {
        label = std::string(1, static_cast<char>('a' + rng.below(6))) + "." +
                std::string(1, static_cast<char>('a' + rng.below(6))) + "." +
                std::string(1, static_cast<char>('a' + rng.below(6)));
      } else {
        label = app + ".ui.Screen" + std::to_string(i / 5) + ".on" + std::to_string(i);
      }
      const auto cfg_graph = random_method_cfg(rng);
      host.push_back(add_method("h" + std::to_string(i), label, &cfg_graph));
    }
    for (const auto& [a, b] : attachment_edges(rng, n_host)) fcg.add_edge(host[a], host[b]);

    std::vector<std::size_t> callers = host;

    // Splices a component in through its first three (stable) methods.
    auto embed = [&](const Component& comp, Rng& vrng, const std::string& prefix) {
      std::vector<std::size_t> node_of(comp.labels.size(), SIZE_MAX);
      for (std::size_t i = 0; i < comp.labels.size(); ++i) {
        if (i >= 3 && vrng.bernoulli(cfg.sdk_variation)) continue;
        node_of[i] = add_method(prefix + std::to_string(i), comp.labels[i], &comp.cfgs[i]);
      }
      for (const auto& [a, b] : comp.edges)
        if (node_of[a] != SIZE_MAX && node_of[b] != SIZE_MAX) fcg.add_edge(node_of[a], node_of[b]);
      const auto attach = static_cast<std::size_t>(rng.range(1, 3));
      for (std::size_t k = 0; k < attach; ++k) {
        fcg.add_edge(rng.pick(host), node_of[static_cast<std::size_t>(rng.below(std::min<std::size_t>(3, comp.labels.size())))]);
      }
      for (auto v : node_of)
        if (v != SIZE_MAX) callers.push_back(v);
    };

    // Family SDK, varied per DEX version.
    if (fam_index >= 0 && cfg.sdk_size > 0) {
      Rng vrng(mix_seed(cfg.seed, 10'000 + static_cast<std::uint64_t>(fam_index) * 100'000 + sdk_version));
      embed(fams[static_cast<std::size_t>(fam_index)].sdk, vrng, "s");
    }
    // Benign apps bundle an ordinary third-party SDK instead.
    if (fam_index < 0 && !benign.empty()) {
      Rng vrng(mix_seed(cfg.seed, 20'000'000 + idx));
      embed(benign[static_cast<std::size_t>(rng.below(benign.size()))], vrng, "b");
    }

    // Shared third-party libraries. Each family SDK depends on one of them;
    // otherwise they appear independently of family.
    std::vector<bool> bundled(shared.size(), false);
    for (std::size_t l = 0; l < shared.size(); ++l) {
      const bool dependency = fam_index >= 0 && cfg.sdk_size > 0 && static_cast<std::size_t>(fam_index) % shared.size() == l;
      if (!dependency && !rng.bernoulli(cfg.shared_library_rate)) continue;
      bundled[l] = true;
      std::vector<std::size_t> node_of;
      for (std::size_t i = 0; i < shared[l].labels.size(); ++i) {
        node_of.push_back(add_method("l" + std::to_string(l) + "_" + std::to_string(i), shared[l].labels[i],
                                     &shared[l].cfgs[i]));
      }
      for (const auto& [a, b] : shared[l].edges) fcg.add_edge(node_of[a], node_of[b]);
      if (!node_of.empty()) fcg.add_edge(rng.pick(host), node_of[0]);
    }

    // Platform API call targets (removed by prefix filtering).
    const auto& apis = platform_apis();
    for (std::size_t k = 0; k < cfg.library_nodes; ++k) {
      const auto v = add_method("j" + std::to_string(k), apis[k % apis.size()], nullptr);
      const auto calls = static_cast<std::size_t>(rng.range(1, 3));
      for (std::size_t c = 0; c < calls; ++c) fcg.add_edge(rng.pick(callers), v);
    }

    // Disconnected utility routines (removed by largest-component extraction).
    for (std::size_t u = 0; u < cfg.utility_components; ++u) {
      const auto len = static_cast<std::size_t>(rng.range(2, 5));
      std::size_t prev = SIZE_MAX;
      for (std::size_t i = 0; i < len; ++i) {
        const auto cfg_graph = random_method_cfg(rng);
        const auto v = add_method("u" + std::to_string(u) + "_" + std::to_string(i),
                                  app + ".util.U" + std::to_string(u) + ".f" + std::to_string(i), &cfg_graph);
        if (prev != SIZE_MAX) fcg.add_edge(prev, v);
        prev = v;
      }
    }

    // Strings.
    std::set<std::string> strs;
    if (fam_index >= 0) {
      for (const auto& t : fams[static_cast<std::size_t>(fam_index)].tokens)
        if (rng.bernoulli(cfg.planted_token_rate)) strs.insert(t);
    }
    // Library strings (token t belongs to library t mod L) travel with the library.
    for (std::size_t t = 0; t < out.truth.shared_tokens.size(); ++t) {
      const bool present = shared.empty() ? rng.bernoulli(cfg.shared_library_rate) : bundled[t % shared.size()];
      if (present && rng.bernoulli(cfg.shared_token_rate)) strs.insert(out.truth.shared_tokens[t]);
    }
    for (std::size_t k = 0; k < cfg.noise_tokens; ++k) strs.insert("str_" + std::to_string(rng.below(cfg.noise_vocabulary)));
    strs.insert(app);

    // Native capabilities.
    if (rng.bernoulli(cfg.capa_rate)) {
      std::set<std::string> rules;
      if (fam_index >= 0) {
        for (const auto& r : fams[static_cast<std::size_t>(fam_index)].capa)
          if (rng.bernoulli(0.8)) rules.insert(r);
      }
      for (const auto& r : generic_capa_rules())
        if (rng.bernoulli(0.15)) rules.insert(r);
      if (!rules.empty()) s.capa_rules = std::vector<std::string>(rules.begin(), rules.end());
    }

    // DEX files: the app's own plus the SDK's.
    std::set<std::string> dex{hex_id(cfg.seed, 2'000'000 + idx)};
    if (sdk_dex) {
      dex.insert(*sdk_dex);
      out.truth.sdk_dex[s.id] = *sdk_dex;
    }
    s.dex_hashes.assign(dex.begin(), dex.end());

    const std::string cfg_path = "graphs/" + s.id + ".cfg";
    const std::string fcg_path = "graphs/" + s.id + ".fcg";
    const std::string str_path = "strings/" + s.id + ".txt";
    out.graphs.emplace(cfg_path, union_cfgs(methods));
    out.graphs.emplace(fcg_path, std::move(fcg));
    out.strings.emplace(str_path, std::vector<std::string>(strs.begin(), strs.end()));
    s.cfg_path = cfg_path;
    s.fcg_path = fcg_path;
    s.strings_path = str_path;
    out.truth.family_of[s.id] = family;
    return s;
  };

  for (std::size_t f = 0; f < cfg.families.size(); ++f) {
    const std::size_t n = cfg.samples_per_family[f];
    Rng rng(mix_seed(cfg.seed, 200 + f));
    // Exactly round(rate * (n-1)) siblings reuse an earlier DEX; which ones is shuffled.
    std::vector<std::size_t> positions;
    for (std::size_t i = 1; i < n; ++i) positions.push_back(i);
    rng.shuffle(positions);
    const auto n_reuse = static_cast<std::size_t>(std::llround(cfg.dex_reuse[f] * static_cast<double>(n - 1)));
    std::set<std::size_t> reuse(positions.begin(), positions.begin() + static_cast<std::ptrdiff_t>(n_reuse));

    std::vector<std::string> hashes;  // SDK DEX versions seen so far
    for (std::size_t i = 0; i < n; ++i) {
      std::uint64_t version;
      const bool reusing = reuse.contains(i);
      if (reusing) {
        version = rng.below(hashes.size());
      } else {
        version = hashes.size();
        hashes.push_back(hex_id(cfg.seed, 3'000'000 + f * 100'000 + version));
      }
      auto s = emit_sample(cfg.families[f], static_cast<std::ptrdiff_t>(f), hashes[version], version);
      out.truth.reused[s.id] = reusing;
      out.corpus.samples.push_back(std::move(s));
    }
  }
  if (cfg.non_proxy) {
    for (std::size_t i = 0; i < cfg.non_proxy_samples; ++i) {
      auto s = emit_sample(std::string(kNonProxy), -1, std::nullopt, 0);
      out.truth.reused[s.id] = false;
      out.corpus.samples.push_back(std::move(s));
    }
  }
  return out;
}

/// Within-family sibling reuse frequency: fraction of a family's samples
/// after the first whose SDK DEX was already seen in an earlier sibling.
inline std::map<std::string, double> measured_reuse(const SynthCorpus& sc) {
  std::map<std::string, std::set<std::string>> seen;
  std::map<std::string, std::pair<std::size_t, std::size_t>> counts;  // (reused, trials)
  for (const auto& s : sc.corpus.samples) {
    auto it = sc.truth.sdk_dex.find(s.id);
    if (it == sc.truth.sdk_dex.end()) continue;
    auto& fam_seen = seen[s.family];
    auto& c = counts[s.family];
    if (!fam_seen.empty()) {
      ++c.second;
      if (fam_seen.contains(it->second)) ++c.first;
    }
    fam_seen.insert(it->second);
  }
  std::map<std::string, double> out;
  for (const auto& [f, c] : counts) out[f] = c.second ? static_cast<double>(c.first) / static_cast<double>(c.second) : 0.0;
  return out;
}

inline std::string ground_truth_json(const GroundTruth& t) {
  nlohmann::ordered_json j;
  j["family_of"] = t.family_of;
  j["planted_methods"] = t.planted_methods;
  j["planted_tokens"] = t.planted_tokens;
  j["shared_tokens"] = t.shared_tokens;
  j["sdk_dex"] = t.sdk_dex;
  j["reused"] = t.reused;
  return j.dump(2) + "\n";
}

inline GroundTruth ground_truth_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    GroundTruth t;
    t.family_of = j.at("family_of").get<std::map<std::string, std::string>>();
    t.planted_methods = j.at("planted_methods").get<std::map<std::string, std::vector<std::string>>>();
    t.planted_tokens = j.at("planted_tokens").get<std::map<std::string, std::vector<std::string>>>();
    t.shared_tokens = j.at("shared_tokens").get<std::vector<std::string>>();
    t.sdk_dex = j.at("sdk_dex").get<std::map<std::string, std::string>>();
    t.reused = j.at("reused").get<std::map<std::string, bool>>();
    return t;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("ground truth: ") + e.what());
  }
}

inline constexpr std::string_view kManifestName = "manifest.tsv";
inline constexpr std::string_view kGroundTruthName = "ground_truth.json";

/// Writes manifest, graph files, string files and the ground-truth sidecar.
inline void write_synth(const SynthCorpus& sc, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "graphs");
  fs::create_directories(dir / "strings");
  io::write_file((dir / kManifestName).string(), serialize_manifest(sc.corpus));
  for (const auto& [path, g] : sc.graphs) save_graph((dir / path).string(), g);
  for (const auto& [path, strs] : sc.strings) {
    std::string body;
    for (const auto& s : strs) body += s + "\n";
    io::write_file((dir / path).string(), body);
  }
  io::write_file((dir / kGroundTruthName).string(), ground_truth_json(sc.truth));
}

/// Relocates an in-memory synthetic corpus so its relative paths resolve
/// against `dir` after write_synth.
inline Corpus corpus_at(const SynthCorpus& sc, const std::filesystem::path& dir) {
  Corpus c = sc.corpus;
  c.base_dir = dir;
  return c;
}

// ---------------------------------------------------------------------------

struct SeparabilityReport {
  double planted_survival = 0;  // fraction of planted labels with no filtered prefix
  double within_cosine = 0;
  double cross_cosine = 0;
  double margin = 0.02;
  bool survival_ok = false;
  bool separable = false;
  std::vector<std::string> failures;

  [[nodiscard]] bool ok() const { return survival_ok && separable && failures.empty(); }
};

inline double cosine(std::span<const double> a, std::span<const double> b) {
  const double na = std::sqrt(dot(a, a));
  const double nb = std::sqrt(dot(b, b));
  if (na == 0 || nb == 0) return 0.0;
  return dot(a, b) / (na * nb);
}

/// Checks that planted SDK labels survive preprocessing and that WL vectors
/// are more similar within a family than across families by `margin`.
inline SeparabilityReport verify_separability(const Corpus& corpus, const GroundTruth& truth,
                                              const std::map<std::string, FeatureVector>& features,
                                              const PrefixFilter& filter = PrefixFilter::standard_library(),
                                              double margin = 0.02) {
  SeparabilityReport r;
  r.margin = margin;
  std::size_t planted = 0;
  std::size_t survive = 0;
  for (const auto& [fam, labels] : truth.planted_methods) {
    if (labels.empty()) r.failures.push_back("family " + fam + " has no planted SDK methods");
    for (const auto& l : labels) {
      ++planted;
      if (!filter.matches(l)) ++survive;
    }
  }
  r.planted_survival = planted ? static_cast<double>(survive) / static_cast<double>(planted) : 0.0;
  r.survival_ok = planted > 0 && survive == planted;
  if (!r.survival_ok) r.failures.push_back("planted SDK labels do not all survive preprocessing");

  std::vector<const Sample*> ss;
  for (const auto& s : corpus.samples)
    if (features.contains(s.id)) ss.push_back(&s);
  double within = 0, cross = 0;
  std::size_t nw = 0, nc = 0;
  for (std::size_t i = 0; i < ss.size(); ++i) {
    const auto& a = features.at(ss[i]->id).values;
    for (std::size_t j = i + 1; j < ss.size(); ++j) {
      const double c = cosine(a, features.at(ss[j]->id).values);
      if (ss[i]->family == ss[j]->family) {
        within += c;
        ++nw;
      } else {
        cross += c;
        ++nc;
      }
    }
  }
  r.within_cosine = nw ? within / static_cast<double>(nw) : 0.0;
  r.cross_cosine = nc ? cross / static_cast<double>(nc) : 0.0;
  r.separable = nw > 0 && nc > 0 && r.within_cosine > r.cross_cosine + margin;
  if (!r.separable) {
    r.failures.push_back("within-family cosine " + text::fixed(r.within_cosine, 4) +
                         " does not exceed cross-family cosine " + text::fixed(r.cross_cosine, 4) + " by " +
                         text::fixed(margin, 2));
  }
  return r;
}

}  // namespace sdkprint
