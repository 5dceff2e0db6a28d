// Acceptance run: prints one PASS/FAIL line per criterion and exits nonzero
// if any criterion fails.

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>

#include "cli_support.hpp"
#include "sdkprint/config.hpp"
#include "sdkprint/evaluation.hpp"
#include "sdkprint/explain.hpp"
#include "sdkprint/signatures.hpp"
#include "sdkprint/synth.hpp"
#include "support.hpp"

using namespace sdkprint;
namespace fs = std::filesystem;
using testing_support::q;
using testing_support::run_cli;
using testing_support::TempDir;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string f3(double v) { return text::fixed(v, 3); }

// Exact WL relabelling on strings; no hashing involved.
std::vector<std::vector<std::string>> explicit_wl(const LabeledDigraph& g, int iterations) {
  const std::size_t n = g.node_count();
  std::vector<std::string> cur(n);
  for (std::size_t v = 0; v < n; ++v) cur[v] = g.nodes()[v].label;
  std::vector<std::vector<std::string>> out;
  for (int h = 0;; ++h) {
    auto sorted = cur;
    std::sort(sorted.begin(), sorted.end());
    out.push_back(sorted);
    if (h == iterations) break;
    std::vector<std::string> next(n);
    for (std::size_t v = 0; v < n; ++v) {
      std::vector<std::string> in, outn;
      for (const auto& [s, d] : g.edges()) {
        if (d == v) in.push_back(cur[s]);
        if (s == v) outn.push_back(cur[d]);
      }
      std::sort(in.begin(), in.end());
      std::sort(outn.begin(), outn.end());
      std::string l = "(" + cur[v] + "<";
      for (const auto& x : in) l += x + ",";
      l += ">";
      for (const auto& x : outn) l += x + ",";
      next[v] = l + ")";
    }
    cur = std::move(next);
  }
  return out;
}

double summary_f1(const std::string& report_csv) {
  for (const auto& line : detail::split(report_csv, '\n'))
    if (line.starts_with("summary,")) return std::stod(detail::split(line, ',')[5]);
  return -1;
}

std::vector<std::size_t> fold_leaks(const std::string& report_csv) {
  std::vector<std::size_t> out;
  for (const auto& line : detail::split(report_csv, '\n'))
    if (line.starts_with("fold,")) out.push_back(std::stoul(detail::split(line, ',')[7]));
  return out;
}

std::map<std::string, double> precision_by_family(const std::string& csv) {
  std::map<std::string, double> out;
  for (const auto& line : detail::split(csv, '\n')) {
    const auto f = detail::split(line, ',');
    if (f.size() < 8 || f[0] == "stage" || f[1] == "ruleset") continue;
    out[f[1].substr(1, f[1].size() - 2)] = f[5] == "undefined" ? 0.0 : std::stod(f[5]);
  }
  return out;
}

struct Pipeline {
  fs::path root;
  double seconds = 0;
  bool ok = true;
  std::string failure;

  [[nodiscard]] fs::path at(const std::string& n) const { return root / n; }
};

Pipeline run_pipeline(const fs::path& root) {
  Pipeline p{root};
  const auto start = std::chrono::steady_clock::now();
  auto step = [&](const std::string& args) {
    if (!p.ok) return;
    const auto r = run_cli(args);
    if (r.code != 0) {
      p.ok = false;
      p.failure = args.substr(0, args.find(' ')) + " exited " + std::to_string(r.code) + ": " + r.output;
    }
  };
  const auto manifest = q(p.at("corpus/manifest.tsv"));
  const auto cache = q(p.at("features/features.bin"));
  step("synth --out " + q(p.at("corpus")));
  step("extract --threads 4 --manifest " + manifest + " --out " + q(p.at("features")));
  for (const char* regime : {"open", "closed"}) {
    step(std::string("crossval --threads 4 --features wl --balance upsampled --regime ") + regime + " --cache " + cache +
         " --manifest " + manifest + " --out " + q(p.at(std::string("cv_") + regime)));
  }
  p.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return p;
}

std::map<std::string, FeatureVector> load_features(const Pipeline& p) {
  return load_feature_cache(p.at("features/features.bin").string()).by_id();
}

// ---------------------------------------------------------------------------

// p2 ran at the same path as p1 after p1's outputs were hashed away
Outcome a1(const Pipeline& p1, const Pipeline& p2, bool same) {
  if (!p1.ok) return {false, p1.failure};
  if (!p2.ok) return {false, p2.failure};
  const double open = summary_f1(io::read_file(p1.at("cv_open/report.csv").string()));
  const double closed = summary_f1(io::read_file(p1.at("cv_closed/report.csv").string()));
  const bool pass = open >= 0.95 && closed >= 0.97 && p1.seconds < 120 && same;
  return {pass, "open macro-F1 " + f3(open) + " (>= 0.95), closed " + f3(closed) + " (>= 0.97), runtime " +
                    text::fixed(p1.seconds, 1) + "s (< 120s), second run " + (same ? "identical" : "DIFFERS")};
}

Outcome a2(const Pipeline& p) {
  if (!p.ok) return {false, p.failure};
  std::size_t folds = 0, leaked = 0;
  for (const char* d : {"cv_open/report.csv", "cv_closed/report.csv"})
    for (auto l : fold_leaks(io::read_file(p.at(d).string()))) {
      ++folds;
      leaked += l;
    }
  const auto corpus = load_corpus(p.at("corpus/manifest.tsv").string());
  const auto grouped = plan_folds(group_by_dex(corpus.samples), 5, 1);
  const auto strat = plan_stratified_folds(corpus.samples, 5, 1);
  std::size_t moved = 0, charlie = 0, strat_leak = 0;
  for (const auto& s : corpus.samples) {
    if (s.family != "charlie") continue;
    ++charlie;
    moved += grouped.fold_of_sample(s.id) != strat.fold_of_sample(s.id);
  }
  for (const auto& l : dex_leakage(strat, corpus.samples)) strat_leak += l.size();
  std::size_t grouped_leak = 0;
  for (const auto& l : dex_leakage(grouped, corpus.samples)) grouped_leak += l.size();
  const bool pass = folds == 10 && leaked == 0 && grouped_leak == 0 && moved > 0 && strat_leak > 0;
  return {pass, std::to_string(folds) + " folds, " + std::to_string(leaked) + " leaked DEX hashes; stratified plan moves " +
                    std::to_string(moved) + "/" + std::to_string(charlie) + " charlie samples and leaks " +
                    std::to_string(strat_leak) + " hashes"};
}

Outcome a3() {
  Rng rng(2024);
  const std::vector<std::string> alphabet{"a", "b", "c"};
  const WlConfig wl{2, 512};
  std::size_t equal = 0, equal_violations = 0, unequal = 0, unequal_differ = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto n = 1 + rng.below(10);
    const auto g = testing_support::random_graph(rng, n, alphabet, rng.uniform() * 0.4);
    const auto h = i % 2 == 0 ? testing_support::permuted(g, rng)
                              : testing_support::random_graph(rng, n, alphabet, rng.uniform() * 0.4);
    const bool same = explicit_wl(g, 2) == explicit_wl(h, 2);
    const bool vec_same = wl_vector(g, wl).values == wl_vector(h, wl).values;
    if (same) {
      ++equal;
      equal_violations += !vec_same;
    } else {
      ++unequal;
      unequal_differ += !vec_same;
    }
  }
  const double rate = unequal ? static_cast<double>(unequal_differ) / static_cast<double>(unequal) : 1.0;
  const bool pass = equal_violations == 0 && rate >= 0.99 && equal >= 500;
  return {pass, std::to_string(equal) + " equal pairs with " + std::to_string(equal_violations) + " violations; " +
                    std::to_string(unequal_differ) + "/" + std::to_string(unequal) + " unequal pairs differ"};
}

Outcome a4() {
  LabeledDigraph ab(GraphKind::FCG), ba(GraphKind::FCG);
  ab.add_node("A", "A");
  ab.add_node("B", "B");
  ab.add_edge(0, 1);
  ba.add_node("A", "A");
  ba.add_node("B", "B");
  ba.add_edge(1, 0);
  const bool iter0 = wl_vector(ab, {0, 512}).values == wl_vector(ba, {0, 512}).values;
  const bool full = wl_vector(ab, {2, 512}).values != wl_vector(ba, {2, 512}).values;
  return {iter0 && full, std::string("iteration-0 contributions ") + (iter0 ? "identical" : "DIFFER") +
                             ", full vectors " + (full ? "differ" : "IDENTICAL")};
}

Outcome a5(const Pipeline& p) {
  if (!p.ok) return {false, p.failure};
  const auto corpus = load_corpus(p.at("corpus/manifest.tsv").string());
  const auto features = load_features(p);
  const auto dm = design_matrix(corpus, features, FeatureMode::Wl, Regime::Open);
  TrainConfig tc;
  tc.seed = 1;
  const auto m = train_final(dm, Balance::Upsampled, tc, 1);
  Rng rng(55);
  std::vector<std::size_t> rows(dm.samples.size());
  std::iota(rows.begin(), rows.end(), 0);
  rng.shuffle(rows);
  rows.resize(50);
  double worst = 0;
  Corpus subset = corpus;
  subset.samples.clear();
  for (auto r : rows) {
    worst = std::max(worst, completeness_error(linear_shap(m, dm.vectors[r])));
    subset.samples.push_back(dm.samples[r]);
  }
  const auto map = build_bucket_map(subset, m.wl, {});
  std::size_t witnesses = 0, sound = 0;
  for (const auto& [key, list] : map.buckets)
    for (const auto& w : list) {
      ++witnesses;
      sound += witness_is_sound(w, key, m.wl.dim);
    }

  // planted-signal corpus: one family carries a two-method subgraph
  TempDir dir("a5");
  fs::create_directories(dir.path() / "g");
  Corpus pc;
  pc.labels = {"p", "q"};
  pc.base_dir = dir.path();
  const std::vector<std::string> host{"com.h.a", "com.h.b", "com.h.c", "com.h.d"};
  for (int i = 0; i < 60; ++i) {
    Sample s;
    s.id = "s" + std::to_string(i);
    s.family = i % 2 ? "p" : "q";
    auto g = testing_support::random_graph(rng, 15 + rng.below(15), host, 0.12);
    if (s.family == "p") {
      const auto a = g.add_node("sdk0", "com.plant.Sdk.run");
      const auto b = g.add_node("sdk1", "com.plant.Sdk.tunnel");
      g.add_edge(0, a);
      g.add_edge(a, b);
    }
    s.fcg_path = "g/" + s.id + ".fcg";
    save_graph(dir.str(*s.fcg_path), g);
    pc.samples.push_back(s);
  }
  const auto ex = extract_corpus(pc, {}, {.lcc_fcg = false});
  std::map<std::string, FeatureVector> pf;
  for (std::size_t i = 0; i < ex.ids.size(); ++i) pf.emplace(ex.ids[i], ex.vectors[i]);
  const auto pdm = design_matrix(pc, pf, FeatureMode::Wl, Regime::Closed);
  const auto pm = train_final(pdm, Balance::None, {}, 0);
  std::vector<Attribution> atts;
  for (const auto& v : pdm.vectors) atts.push_back(linear_shap(pm, v));
  const auto imp = global_importance(pm, atts);
  const std::set<std::string> planted{"fcg_wl_" + std::to_string(stable_hash("com.plant.Sdk.run") % 512),
                                      "fcg_wl_" + std::to_string(stable_hash("com.plant.Sdk.tunnel") % 512)};
  std::size_t rank = 0;
  for (std::size_t r = 0; r < imp.size() && !rank; ++r)
    if (planted.contains(imp[r].name)) rank = r + 1;

  const bool pass = worst <= 1e-9 && witnesses > 0 && sound == witnesses && rank >= 1 && rank <= 10;
  return {pass, "max completeness error " + text::shortest(worst) + " over 50 samples (<= 1e-9), " +
                    std::to_string(sound) + "/" + std::to_string(witnesses) + " witnesses sound, planted bucket rank " +
                    std::to_string(rank) + " (<= 10)"};
}

Outcome a6(const Pipeline& p) {
  if (!p.ok) return {false, p.failure};
  const auto manifest = q(p.at("corpus/manifest.tsv"));
  auto r = run_cli("siggen --manifest " + manifest + " --out " + q(p.at("sig")));
  if (r.code != 0) return {false, "siggen: " + r.output};
  r = run_cli("sigeval --rules " + q(p.at("sig/rules.json")) + " --manifest " + manifest + " --out " +
              q(p.at("sigeval")));
  if (r.code != 0) return {false, "sigeval: " + r.output};
  const auto pre = precision_by_family(io::read_file(p.at("sigeval/sigeval_pre.csv").string()));
  const auto post = precision_by_family(io::read_file(p.at("sigeval/sigeval_post.csv").string()));
  bool never_worse = pre.size() == 4;
  std::string parts;
  for (const auto& [fam, v] : pre) {
    const double after = post.contains(fam) ? post.at(fam) : 0.0;
    never_worse &= after >= v;
    parts += (parts.empty() ? "" : ", ") + fam + " " + text::fixed(100 * v, 1) + "% -> " + text::fixed(100 * after, 1) + "%";
  }
  // the two smallest families
  const auto counts = load_corpus(p.at("corpus/manifest.tsv").string()).family_counts();
  std::vector<std::pair<std::size_t, std::string>> by_size;
  for (const auto& [fam, v] : pre) by_size.emplace_back(counts.at(fam), fam);
  std::sort(by_size.begin(), by_size.end());
  bool strict = by_size.size() >= 2;
  for (std::size_t i = 0; i < 2 && i < by_size.size(); ++i) {
    const auto& fam = by_size[i].second;
    strict &= post.contains(fam) && post.at(fam) > pre.at(fam);
  }
  return {never_worse && strict, parts + "; strict gain for " + by_size[0].second + " and " + by_size[1].second +
                                     (strict ? "" : " MISSING")};
}

Outcome a7() {
  Rng rng(77);
  std::size_t mismatches = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t k = 2 + rng.below(5);
    ConfusionMatrix m{std::vector<std::string>(k)};
    for (std::size_t i = 0; i < k; ++i) m.classes[i] = "c" + std::to_string(i);
    for (auto& row : m.counts)
      for (auto& v : row) v = rng.bernoulli(0.3) ? 0 : rng.below(20);
    double sum = 0;
    int n = 0;
    for (std::size_t c = 0; c < k; ++c) {
      double tp = static_cast<double>(m.counts[c][c]), fp = 0, fn = 0;
      for (std::size_t o = 0; o < k; ++o) {
        if (o == c) continue;
        fp += static_cast<double>(m.counts[o][c]);
        fn += static_cast<double>(m.counts[c][o]);
      }
      if (tp + fp + fn == 0) continue;
      const double pr = tp + fp > 0 ? tp / (tp + fp) : 0, rc = tp + fn > 0 ? tp / (tp + fn) : 0;
      sum += pr + rc > 0 ? 2 * pr * rc / (pr + rc) : 0;
      ++n;
    }
    mismatches += macro_f1(m) != (n ? sum / n : 0.0);
  }
  ConfusionMatrix hand({"x", "y"});
  hand.counts = {{5, 0}, {5, 0}};
  const double h = macro_f1(hand);
  return {mismatches == 0 && h == 1.0 / 3.0,
          std::to_string(mismatches) + "/100 brute-force mismatches; [[5,0],[5,0]] -> " + text::shortest(h)};
}

Outcome a8(const Pipeline& p) {
  if (!p.ok) return {false, p.failure};
  Rng rng(88);
  std::vector<std::vector<double>> xs;
  std::vector<std::string> ys;
  for (int i = 0; i < 200; ++i) {
    const bool pos = i % 2;
    const double angle = (pos ? 0.2 : 1.2) + 0.3 * rng.uniform();
    xs.push_back({std::cos(angle) * (1 + rng.uniform()), std::sin(angle) * (1 + rng.uniform())});
    ys.push_back(pos ? "p" : "q");
  }
  const auto m = train(xs, ys, {{"x", 0, 2}}, {});
  std::size_t right = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) right += predict(m, xs[i]).label == ys[i];
  const double acc = static_cast<double>(right) / static_cast<double>(xs.size());

  Corpus corpus = load_corpus(p.at("corpus/manifest.tsv").string());
  std::erase_if(corpus.samples, [](const Sample& s) { return s.family == kNonProxy; });
  std::vector<std::string> labels;
  for (const auto& s : corpus.samples) labels.push_back(s.family);
  Rng shuffle_rng(13);
  shuffle_rng.shuffle(labels);
  for (std::size_t i = 0; i < labels.size(); ++i) corpus.samples[i].family = labels[i];
  const auto res = run_experiment(corpus, load_features(p), {.regime = Regime::Closed}, {}, 4);
  const double chance = 1.0 / static_cast<double>(res.classes.size());

  double worst = 0;
  int checked = 0;
  for (int t = 0; t < 500; ++t) {
    const std::size_t d = 1 + rng.below(10);
    std::vector<double> w(d), x(d);
    for (auto& v : w) v = 4 * rng.uniform() - 2;
    for (auto& v : x) v = 2 * rng.uniform() - 1;
    const double b = rng.uniform() - 0.5, y = rng.bernoulli(0.5) ? 1.0 : -1.0, lambda = 0.05;
    if (std::abs(y * (dot(w, x) + b) - 1) < 1e-3) continue;
    const auto g = sample_subgradient(w, b, x, y, lambda);
    double num = 0, den = 0;
    for (std::size_t j = 0; j <= d; ++j) {
      auto wp = w, wm = w;
      double bp = b, bm = b;
      const double eps = 1e-6;
      if (j < d) {
        wp[j] += eps;
        wm[j] -= eps;
      } else {
        bp += eps;
        bm -= eps;
      }
      const double fd = (sample_objective(wp, bp, x, y, lambda) - sample_objective(wm, bm, x, y, lambda)) / (2 * eps);
      const double an = j < d ? g.w[j] : g.b;
      num += (fd - an) * (fd - an);
      den += an * an;
    }
    if (den == 0) continue;
    worst = std::max(worst, std::sqrt(num / den));
    ++checked;
  }
  const bool pass = acc == 1.0 && std::abs(res.mean_macro_f1 - chance) <= 0.15 && worst < 1e-4 && checked > 400;
  return {pass, "separable training accuracy " + f3(acc) + ", shuffled-label macro-F1 " + f3(res.mean_macro_f1) +
                    " vs 1/K = " + f3(chance) + " (+-0.15), worst gradient relative error " + text::shortest(worst) +
                    " over " + std::to_string(checked) + " points"};
}

Outcome a9(const Pipeline& p) {
  if (!p.ok) return {false, p.failure};
  const auto manifest = q(p.at("corpus/manifest.tsv"));
  const auto cache = q(p.at("features/features.bin"));
  const std::vector<std::pair<std::string, std::string>> extra{
      {"train", "train --regime open --cache " + cache + " --manifest " + manifest},
      {"predict", "predict --model " + q(p.at("train/model.bin")) + " --cache " + cache + " --manifest " + manifest},
      {"explain", "explain --top 20 --model " + q(p.at("train/model.bin")) + " --cache " + cache + " --manifest " +
                      manifest},
      {"siggen_f", "siggen --filter --manifest " + manifest},
  };
  for (const auto& [name, args] : extra) {
    const auto r = run_cli(args + " --out " + q(p.at(name)));
    if (r.code != 0) return {false, name + ": " + r.output};
  }
  const std::vector<std::pair<std::string, std::string>> dirs{
      {"corpus", "synth"},   {"features", "extract"}, {"cv_open", "crossval"}, {"train", "train"},
      {"predict", "predict"}, {"explain", "explain"}, {"sig", "siggen"},      {"siggen_f", "siggen"},
      {"sigeval", "sigeval"}};
  std::size_t same = 0;
  std::string bad;
  for (const auto& [dir, cmd] : dirs) {
    const auto again = p.at(dir + "_echo");
    const auto r = run_cli(cmd + " --config " + q(p.at(dir) / "config.echo") + " --out " + q(again));
    if (r.code == 0 && testing_support::tree_hash(p.at(dir)) == testing_support::tree_hash(again)) ++same;
    else bad += " " + dir;
  }
  return {same == dirs.size(), std::to_string(same) + "/" + std::to_string(dirs.size()) +
                                   " output trees reproduced byte-identically from their echo" +
                                   (bad.empty() ? "" : " (differs:" + bad + ")")};
}

Outcome a10(const Pipeline& p) {
  if (!p.ok) return {false, p.failure};
  const auto corpus = load_corpus(p.at("corpus/manifest.tsv").string());
  const auto features = load_features(p);
  const auto dm = design_matrix(corpus, features, FeatureMode::WlCapa, Regime::Open);
  const std::size_t wl_len = layout_length(features.begin()->second.layout);
  bool lengths = true, zeros = true;
  std::size_t without = 0;
  for (std::size_t i = 0; i < dm.samples.size(); ++i) {
    lengths &= dm.vectors[i].size() == wl_len + dm.vocabulary.size();
    if (dm.samples[i].capa_rules) continue;
    ++without;
    for (std::size_t j = wl_len; j < dm.vectors[i].size(); ++j) zeros &= dm.vectors[i][j] == 0.0;
  }
  const auto a = run_experiment(corpus, features, {.features = FeatureMode::Wl, .regime = Regime::Open}, {}, 4);
  const auto b = run_experiment(corpus, features, {.features = FeatureMode::WlCapa, .regime = Regime::Open}, {}, 4);
  const bool same_plan = a.plan == b.plan;
  return {lengths && zeros && without > 0 && same_plan,
          "fused length " + std::to_string(wl_len) + " + " + std::to_string(dm.vocabulary.size()) + " on every sample, " +
              std::to_string(without) + " samples without capability data " + (zeros ? "all-zero" : "NONZERO") +
              ", wl vs wl+capa fold plans " + (same_plan ? "identical" : "DIFFER")};
}

}  // namespace

int main() {
  TempDir work("acceptance");
  // echoes record absolute paths, so the repeat run reuses the same directory
  const auto root = work.path() / "run";
  const std::vector<std::string> outputs{"corpus", "features", "cv_open", "cv_closed"};
  const auto p2 = run_pipeline(root);
  std::vector<std::uint64_t> first;
  for (const auto& d : outputs) first.push_back(testing_support::tree_hash(p2.at(d)));
  fs::remove_all(root);
  const auto p1 = run_pipeline(root);
  bool repeat_same = true;
  for (std::size_t i = 0; i < outputs.size(); ++i)
    repeat_same &= first[i] == testing_support::tree_hash(p1.at(outputs[i]));

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"A1", [&] { return a1(p1, p2, repeat_same); }}, {"A2", [&] { return a2(p1); }}, {"A3", a3},
      {"A4", a4},                         {"A5", [&] { return a5(p1); }}, {"A6", [&] { return a6(p1); }},
      {"A7", a7},                         {"A8", [&] { return a8(p1); }}, {"A9", [&] { return a9(p1); }},
      {"A10", [&] { return a10(p1); }}};
  int failed = 0;
  for (const auto& [id, fn] : criteria) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%-4s %s  %s\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  }
  return failed ? 1 : 0;
}
