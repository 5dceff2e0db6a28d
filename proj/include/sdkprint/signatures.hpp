#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "sdkprint/corpus.hpp"
#include "sdkprint/error.hpp"
#include "sdkprint/text.hpp"

namespace sdkprint {

struct StringSample {
  std::string id;
  std::string family;
  std::vector<std::string> strings;  // sorted, unique
};

inline std::vector<StringSample> load_string_samples(const Corpus& c) {
  std::vector<StringSample> out;
  for (const auto& s : c.samples) out.push_back({s.id, s.family, load_strings(c, s)});
  return out;
}

struct ScoredString {
  std::string value;
  double score = 0;
  friend bool operator==(const ScoredString&, const ScoredString&) = default;
};

struct SignatureRule {
  std::string family;
  std::vector<ScoredString> strings;  // score desc, then lexicographic
  std::size_t min_hits = 3;
  bool clamped = false;  // fewer strings than the requested threshold

  friend bool operator==(const SignatureRule&, const SignatureRule&) = default;
};

struct SignatureConfig {
  std::size_t top_k = 20;
  std::size_t min_hits = 3;
  // Families that get a rule; empty = every family except non_proxy.
  std::vector<std::string> targets;
};

namespace detail {

struct DocFrequencies {
  std::map<std::string, std::size_t> family_size;                       // samples with strings
  std::map<std::string, std::map<std::string, std::size_t>> df;         // string -> family -> count

  explicit DocFrequencies(const std::vector<StringSample>& samples) {
    for (const auto& s : samples) {
      if (s.strings.empty()) continue;
      ++family_size[s.family];
      for (const auto& str : s.strings) ++df[str][s.family];
    }
  }

  [[nodiscard]] double rate(const std::string& str, const std::string& fam) const {
    auto it = df.find(str);
    if (it == df.end()) return 0.0;
    auto jt = it->second.find(fam);
    if (jt == it->second.end()) return 0.0;
    return static_cast<double>(jt->second) / static_cast<double>(family_size.at(fam));
  }
};

inline void clamp_threshold(SignatureRule& rule, std::size_t requested) {
  rule.clamped = rule.strings.size() < requested;
  rule.min_hits = std::max<std::size_t>(1, std::min(requested, rule.strings.size()));
}

}  // namespace detail

/// Document-frequency contrast: score(s, f) = df_f(s)/n_f - max_{g != f} df_g(s)/n_g.
inline double string_score(const detail::DocFrequencies& dfs, const std::string& s, const std::string& family) {
  double other = 0.0;
  for (const auto& [g, n] : dfs.family_size) {
    if (g != family) other = std::max(other, dfs.rate(s, g));
  }
  return dfs.rate(s, family) - other;
}

inline std::vector<SignatureRule> generate_rules(const std::vector<StringSample>& samples, const SignatureConfig& cfg) {
  if (cfg.min_hits < 1) throw ConfigError("signature min_hits must be >= 1");
  if (cfg.top_k < 1) throw ConfigError("signature top_k must be >= 1");
  const detail::DocFrequencies dfs(samples);
  std::set<std::string> families;
  for (const auto& s : samples) families.insert(s.family);
  if (families.size() < 2) throw DataError("signature generation needs at least two families");

  std::vector<std::string> targets = cfg.targets;
  if (targets.empty()) {
    for (const auto& f : families)
      if (f != kNonProxy) targets.push_back(f);
  }
  std::sort(targets.begin(), targets.end());

  std::vector<SignatureRule> rules;
  for (const auto& f : targets) {
    if (!dfs.family_size.contains(f)) throw DataError("family '" + f + "' has no samples with strings");
    SignatureRule rule;
    rule.family = f;
    for (const auto& [str, per_family] : dfs.df) {
      if (!per_family.contains(f)) continue;
      const double sc = string_score(dfs, str, f);
      if (sc > 0) rule.strings.push_back({str, sc});
    }
    std::stable_sort(rule.strings.begin(), rule.strings.end(),
                     [](const ScoredString& a, const ScoredString& b) { return a.score > b.score; });
    if (rule.strings.size() > cfg.top_k) rule.strings.resize(cfg.top_k);
    detail::clamp_threshold(rule, cfg.min_hits);
    rules.push_back(std::move(rule));
  }
  return rules;
}

struct FilterResult {
  std::vector<SignatureRule> rules;
  std::vector<std::string> dropped;  // families whose rule became empty
  std::size_t removed_strings = 0;
};

/// One pass: drop every rule string that occurs in samples of two or more
/// families. `requested_min_hits` is re-clamped against the shorter rule.
inline FilterResult filter_nondiscriminative(const std::vector<SignatureRule>& rules,
                                             const std::vector<StringSample>& corpus,
                                             std::size_t requested_min_hits = 3) {
  std::map<std::string, std::set<std::string>> families_of;
  for (const auto& s : corpus)
    for (const auto& str : s.strings) families_of[str].insert(s.family);

  FilterResult out;
  for (const auto& rule : rules) {
    SignatureRule kept = rule;
    kept.strings.clear();
    for (const auto& s : rule.strings) {
      auto it = families_of.find(s.value);
      if (it != families_of.end() && it->second.size() >= 2) {
        ++out.removed_strings;
        continue;
      }
      kept.strings.push_back(s);
    }
    if (kept.strings.empty()) {
      out.dropped.push_back(rule.family);
      continue;
    }
    detail::clamp_threshold(kept, std::max(requested_min_hits, rule.min_hits));
    out.rules.push_back(std::move(kept));
  }
  return out;
}

/// True iff at least min_hits distinct rule strings occur in `strings`
/// (sorted). An empty rule never matches.
inline bool match(const SignatureRule& rule, const std::vector<std::string>& strings) {
  if (rule.strings.empty()) return false;
  std::size_t hits = 0;
  for (const auto& s : rule.strings) {
    if (std::binary_search(strings.begin(), strings.end(), s.value) && ++hits >= rule.min_hits) return true;
  }
  return false;
}

struct RuleStats {
  std::string family;
  std::size_t family_size = 0;
  std::size_t matched = 0;       // samples the rule fired on
  std::size_t true_matches = 0;  // ... that belong to the rule's family
  std::optional<double> precision;  // undefined when the rule never fired
  double recall = 0;
  double f1 = 0;
};

struct RuleEvalReport {
  std::vector<RuleStats> rules;
  double ruleset_f1 = 0;  // class-size-weighted mean of per-family F1
};

inline RuleEvalReport evaluate_rules(const std::vector<SignatureRule>& rules, const std::vector<StringSample>& corpus) {
  RuleEvalReport rep;
  double weighted = 0;
  std::size_t weight = 0;
  for (const auto& rule : rules) {
    RuleStats st;
    st.family = rule.family;
    for (const auto& s : corpus) {
      const bool own = s.family == rule.family;
      if (own) ++st.family_size;
      if (match(rule, s.strings)) {
        ++st.matched;
        if (own) ++st.true_matches;
      }
    }
    if (st.matched) st.precision = static_cast<double>(st.true_matches) / static_cast<double>(st.matched);
    st.recall = st.family_size ? static_cast<double>(st.true_matches) / static_cast<double>(st.family_size) : 0.0;
    const double p = st.precision.value_or(0.0);
    st.f1 = p + st.recall > 0 ? 2 * p * st.recall / (p + st.recall) : 0.0;
    weighted += st.f1 * static_cast<double>(st.family_size);
    weight += st.family_size;
    rep.rules.push_back(st);
  }
  rep.ruleset_f1 = weight ? weighted / static_cast<double>(weight) : 0.0;
  return rep;
}

inline std::string rule_eval_csv(const RuleEvalReport& r, std::string_view stage) {
  std::string out = "stage,family,family_size,matched,true_matches,precision,recall,f1\n";
  for (const auto& s : r.rules) {
    out += std::string(stage) + "," + text::csv_quote(s.family) + "," + std::to_string(s.family_size) + "," +
           std::to_string(s.matched) + "," + std::to_string(s.true_matches) + "," +
           (s.precision ? text::fixed(*s.precision, 6) : std::string("undefined")) + "," + text::fixed(s.recall, 6) +
           "," + text::fixed(s.f1, 6) + "\n";
  }
  out += std::string(stage) + ",ruleset,,,,,," + text::fixed(r.ruleset_f1, 6) + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Export / persistence

namespace detail {

inline std::string yara_escape(std::string_view s) {
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (char ch : s) {
    const auto c = static_cast<unsigned char>(ch);
    if (c == '"') out += "\\\"";
    else if (c == '\\') out += "\\\\";
    else if (c >= 0x20 && c < 0x7f) out += ch;
    else {
      out += "\\x";
      out += hex[c >> 4];
      out += hex[c & 0xf];
    }
  }
  return out;
}

inline std::string yara_identifier(std::string_view family) {
  std::string id = "fam_";
  for (char c : family) id += (std::isalnum(static_cast<unsigned char>(c)) || c == '_') ? c : '_';
  return id;
}

}  // namespace detail

inline std::string export_yara(const std::vector<SignatureRule>& rules) {
  std::string out;
  for (const auto& r : rules) {
    out += "rule " + detail::yara_identifier(r.family) + " {\n  meta:\n    family = \"" +
           detail::yara_escape(r.family) + "\"\n  strings:\n";
    for (std::size_t i = 0; i < r.strings.size(); ++i) {
      out += "    $s" + std::to_string(i) + " = \"" + detail::yara_escape(r.strings[i].value) + "\" // score " +
             text::fixed(r.strings[i].score, 4) + "\n";
    }
    out += "  condition:\n    " + std::to_string(r.min_hits) + " of them\n}\n\n";
  }
  return out;
}

inline std::string rules_to_json(const std::vector<SignatureRule>& rules) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& r : rules) {
    nlohmann::ordered_json jr;
    jr["family"] = r.family;
    jr["min_hits"] = r.min_hits;
    jr["clamped"] = r.clamped;
    jr["strings"] = nlohmann::ordered_json::array();
    for (const auto& s : r.strings) jr["strings"].push_back({{"value", s.value}, {"score", s.score}});
    j.push_back(std::move(jr));
  }
  return j.dump(2) + "\n";
}

inline std::vector<SignatureRule> rules_from_json(const std::string& text) {
  std::vector<SignatureRule> out;
  try {
    const auto j = nlohmann::json::parse(text);
    for (const auto& jr : j) {
      SignatureRule r;
      r.family = jr.at("family").get<std::string>();
      r.min_hits = jr.at("min_hits").get<std::size_t>();
      r.clamped = jr.at("clamped").get<bool>();
      for (const auto& s : jr.at("strings")) r.strings.push_back({s.at("value"), s.at("score")});
      if (r.min_hits < 1) throw DataError("rule " + r.family + ": min_hits must be >= 1");
      out.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("rules file: ") + e.what());
  }
  return out;
}

}  // namespace sdkprint
