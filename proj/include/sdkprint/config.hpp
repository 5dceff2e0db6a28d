#pragma once

#include <charconv>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sdkprint/classifier.hpp"
#include "sdkprint/corpus.hpp"
#include "sdkprint/error.hpp"
#include "sdkprint/evaluation.hpp"
#include "sdkprint/signatures.hpp"
#include "sdkprint/synth.hpp"
#include "sdkprint/text.hpp"
#include "sdkprint/wl.hpp"

namespace sdkprint {

// Line-based sectioned config:
//
//   seed = 7
//   [wl]
//   dim = 512
//
// Keys before the first section header are global. '#' starts a comment line.
class ConfigFile {
public:
  static ConfigFile parse(std::string_view text) {
    ConfigFile cf;
    std::string section;
    std::size_t line_no = 0;
    for (auto line : detail::split(text, '\n')) {
      ++line_no;
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return std::string();
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
      };
      line = trim(line);
      if (line.empty() || line[0] == '#') continue;
      if (line.front() == '[') {
        if (line.back() != ']') throw ConfigError("config line " + std::to_string(line_no) + ": bad section header");
        section = trim(line.substr(1, line.size() - 2));
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
      const auto key = trim(line.substr(0, eq));
      if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
      cf.values_[qualify(section, key)] = trim(line.substr(eq + 1));
    }
    return cf;
  }

  static ConfigFile load(const std::string& path) {
    try {
      return parse(io::read_file(path));
    } catch (const DataError& e) {
      throw ConfigError(e.what());
    }
  }

  void set(const std::string& field, std::string value) { values_[field] = std::move(value); }

  [[nodiscard]] std::optional<std::string> get(const std::string& field) const {
    auto it = values_.find(field);
    if (it == values_.end()) return std::nullopt;
    used_[field] = true;
    return it->second;
  }

  /// Fields present in the file that no consumer asked for.
  [[nodiscard]] std::vector<std::string> unused() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_)
      if (!used_.contains(k)) out.push_back(k);
    return out;
  }

private:
  static std::string qualify(const std::string& section, const std::string& key) {
    return section.empty() ? key : section + "." + key;
  }

  std::map<std::string, std::string> values_;
  mutable std::map<std::string, bool> used_;
};

namespace detail {

template <class T>
T parse_number(const std::string& field, const std::string& v) {
  T out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || ptr != v.data() + v.size()) throw ConfigError(field + ": invalid number '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& field, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(field + ": expected true or false, got '" + v + "'");
}

template <class T>
void read(const ConfigFile& cf, const std::string& field, T& target) {
  const auto v = cf.get(field);
  if (!v) return;
  if constexpr (std::is_same_v<T, bool>) {
    target = parse_bool(field, *v);
  } else if constexpr (std::is_same_v<T, std::string>) {
    target = *v;
  } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
    target = v->empty() ? std::vector<std::string>{} : split(*v, ',');
  } else if constexpr (std::is_same_v<T, std::vector<std::size_t>> || std::is_same_v<T, std::vector<double>>) {
    target.clear();
    for (const auto& part : split(*v, ',')) target.push_back(parse_number<typename T::value_type>(field, part));
  } else {
    target = parse_number<T>(field, *v);
  }
}

template <class T>
std::string join_numbers(const std::vector<T>& v) {
  std::vector<std::string> parts;
  for (const auto& x : v) {
    if constexpr (std::is_floating_point_v<T>) parts.push_back(text::shortest(x));
    else parts.push_back(std::to_string(x));
  }
  return join(parts, ",");
}

}  // namespace detail

struct ExplainConfig {
  std::size_t top = 20;
  std::string feature;  // empty: rank only
};

struct IoPaths {
  std::string manifest;
  std::string cache;
  std::string model;
  std::string rules;
};

/// Effective configuration of one run: every module's settings plus the
/// global seed and input paths.
struct RunConfig {
  std::uint64_t seed = 1;
  SynthConfig synth;
  WlConfig wl;
  PreprocessConfig preprocess;
  TrainConfig train;
  ExperimentConfig experiment;
  bool grid = false;  // crossval: also run the balancing x regime grid
  SignatureConfig signatures;
  bool filter_signatures = false;  // siggen: drop strings shared across families
  ExplainConfig explain;
  IoPaths io;

  void apply(const ConfigFile& cf) {
    using detail::read;
    read(cf, "seed", seed);

    read(cf, "synth.families", synth.families);
    read(cf, "synth.samples_per_family", synth.samples_per_family);
    read(cf, "synth.dex_reuse", synth.dex_reuse);
    read(cf, "synth.non_proxy", synth.non_proxy);
    read(cf, "synth.non_proxy_samples", synth.non_proxy_samples);
    read(cf, "synth.sdk_size", synth.sdk_size);
    read(cf, "synth.sdk_variation", synth.sdk_variation);
    read(cf, "synth.sdk_method_blocks_min", synth.sdk_method_blocks_min);
    read(cf, "synth.sdk_method_blocks_max", synth.sdk_method_blocks_max);
    read(cf, "synth.benign_sdks", synth.benign_sdks);
    read(cf, "synth.host_min", synth.host_min);
    read(cf, "synth.host_max", synth.host_max);
    read(cf, "synth.obfuscated_fraction", synth.obfuscated_fraction);
    read(cf, "synth.library_nodes", synth.library_nodes);
    read(cf, "synth.utility_components", synth.utility_components);
    read(cf, "synth.shared_libraries", synth.shared_libraries);
    read(cf, "synth.shared_library_size", synth.shared_library_size);
    read(cf, "synth.shared_library_rate", synth.shared_library_rate);
    read(cf, "synth.planted_tokens", synth.planted_tokens);
    read(cf, "synth.planted_token_rate", synth.planted_token_rate);
    read(cf, "synth.shared_tokens", synth.shared_tokens);
    read(cf, "synth.shared_token_rate", synth.shared_token_rate);
    read(cf, "synth.noise_tokens", synth.noise_tokens);
    read(cf, "synth.noise_vocabulary", synth.noise_vocabulary);
    read(cf, "synth.capa_rate", synth.capa_rate);

    read(cf, "wl.iterations", wl.iterations);
    read(cf, "wl.dim", wl.dim);
    read(cf, "wl.prefixes", preprocess.filter.prefixes);
    read(cf, "wl.lcc_fcg", preprocess.lcc_fcg);
    read(cf, "wl.lcc_cfg", preprocess.lcc_cfg);

    read(cf, "train.lambda", train.lambda);
    read(cf, "train.epochs", train.epochs);
    read(cf, "train.eta0", train.eta0);

    if (auto v = cf.get("experiment.features")) experiment.features = parse_feature_mode(*v);
    if (auto v = cf.get("experiment.regime")) experiment.regime = parse_regime(*v);
    if (auto v = cf.get("experiment.balance")) experiment.balance = parse_balance(*v);
    read(cf, "experiment.folds", experiment.k);
    read(cf, "experiment.grid", grid);

    read(cf, "signatures.top_k", signatures.top_k);
    read(cf, "signatures.min_hits", signatures.min_hits);
    read(cf, "signatures.targets", signatures.targets);
    read(cf, "signatures.filter", filter_signatures);

    read(cf, "explain.top", explain.top);
    read(cf, "explain.feature", explain.feature);

    read(cf, "io.manifest", io.manifest);
    read(cf, "io.cache", io.cache);
    read(cf, "io.model", io.model);
    read(cf, "io.rules", io.rules);

    if (const auto extra = cf.unused(); !extra.empty()) throw ConfigError("unknown config field: " + extra.front());
    finalize();
  }

  // Propagates the global seed and validates every section.
  void finalize() {
    synth.seed = seed;
    train.seed = seed;
    experiment.seed = seed;
    wl.validate();
    train.validate();
    if (experiment.k < 2) throw ConfigError("experiment.folds must be >= 2");
    if (signatures.top_k < 1) throw ConfigError("signatures.top_k must be >= 1");
    if (signatures.min_hits < 1) throw ConfigError("signatures.min_hits must be >= 1");
    if (explain.top < 1) throw ConfigError("explain.top must be >= 1");
    for (const auto& p : preprocess.filter.prefixes)
      if (p.empty()) throw ConfigError("wl.prefixes entries must be non-empty");
  }

  [[nodiscard]] std::string echo() const {
    using detail::join;
    using detail::join_numbers;
    auto b = [](bool v) { return std::string(v ? "true" : "false"); };
    std::string o = "# effective configuration\n";
    o += "seed = " + std::to_string(seed) + "\n";
    o += "\n[synth]\n";
    o += "families = " + join(synth.families, ",") + "\n";
    o += "samples_per_family = " + join_numbers(synth.samples_per_family) + "\n";
    o += "dex_reuse = " + join_numbers(synth.dex_reuse) + "\n";
    o += "non_proxy = " + b(synth.non_proxy) + "\n";
    o += "non_proxy_samples = " + std::to_string(synth.non_proxy_samples) + "\n";
    o += "sdk_size = " + std::to_string(synth.sdk_size) + "\n";
    o += "sdk_variation = " + text::shortest(synth.sdk_variation) + "\n";
    o += "sdk_method_blocks_min = " + std::to_string(synth.sdk_method_blocks_min) + "\n";
    o += "sdk_method_blocks_max = " + std::to_string(synth.sdk_method_blocks_max) + "\n";
    o += "benign_sdks = " + std::to_string(synth.benign_sdks) + "\n";
    o += "host_min = " + std::to_string(synth.host_min) + "\n";
    o += "host_max = " + std::to_string(synth.host_max) + "\n";
    o += "obfuscated_fraction = " + text::shortest(synth.obfuscated_fraction) + "\n";
    o += "library_nodes = " + std::to_string(synth.library_nodes) + "\n";
    o += "utility_components = " + std::to_string(synth.utility_components) + "\n";
    o += "shared_libraries = " + std::to_string(synth.shared_libraries) + "\n";
    o += "shared_library_size = " + std::to_string(synth.shared_library_size) + "\n";
    o += "shared_library_rate = " + text::shortest(synth.shared_library_rate) + "\n";
    o += "planted_tokens = " + std::to_string(synth.planted_tokens) + "\n";
    o += "planted_token_rate = " + text::shortest(synth.planted_token_rate) + "\n";
    o += "shared_tokens = " + std::to_string(synth.shared_tokens) + "\n";
    o += "shared_token_rate = " + text::shortest(synth.shared_token_rate) + "\n";
    o += "noise_tokens = " + std::to_string(synth.noise_tokens) + "\n";
    o += "noise_vocabulary = " + std::to_string(synth.noise_vocabulary) + "\n";
    o += "capa_rate = " + text::shortest(synth.capa_rate) + "\n";
    o += "\n[wl]\n";
    o += "iterations = " + std::to_string(wl.iterations) + "\n";
    o += "dim = " + std::to_string(wl.dim) + "\n";
    o += "prefixes = " + join(preprocess.filter.prefixes, ",") + "\n";
    o += "lcc_fcg = " + b(preprocess.lcc_fcg) + "\n";
    o += "lcc_cfg = " + b(preprocess.lcc_cfg) + "\n";
    o += "\n[train]\n";
    o += "lambda = " + text::shortest(train.lambda) + "\n";
    o += "epochs = " + std::to_string(train.epochs) + "\n";
    o += "eta0 = " + text::shortest(train.eta0) + "\n";
    o += "\n[experiment]\n";
    o += "features = " + to_string(experiment.features) + "\n";
    o += "regime = " + to_string(experiment.regime) + "\n";
    o += "balance = " + to_string(experiment.balance) + "\n";
    o += "folds = " + std::to_string(experiment.k) + "\n";
    o += "grid = " + b(grid) + "\n";
    o += "\n[signatures]\n";
    o += "top_k = " + std::to_string(signatures.top_k) + "\n";
    o += "min_hits = " + std::to_string(signatures.min_hits) + "\n";
    o += "targets = " + join(signatures.targets, ",") + "\n";
    o += "filter = " + b(filter_signatures) + "\n";
    o += "\n[explain]\n";
    o += "top = " + std::to_string(explain.top) + "\n";
    o += "feature = " + explain.feature + "\n";
    o += "\n[io]\n";
    o += "manifest = " + io.manifest + "\n";
    o += "cache = " + io.cache + "\n";
    o += "model = " + io.model + "\n";
    o += "rules = " + io.rules + "\n";
    return o;
  }
};

}  // namespace sdkprint
