#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "sdkprint/classifier.hpp"
#include "sdkprint/config.hpp"
#include "sdkprint/corpus.hpp"
#include "sdkprint/error.hpp"
#include "sdkprint/evaluation.hpp"
#include "sdkprint/explain.hpp"
#include "sdkprint/signatures.hpp"
#include "sdkprint/synth.hpp"
#include "sdkprint/text.hpp"

namespace fs = std::filesystem;
using namespace sdkprint;

namespace {

constexpr const char* kEchoName = "config.echo";
constexpr const char* kCacheName = "features.bin";
constexpr const char* kModelName = "model.bin";

// Flag values are collected as strings and merged into the config file view,
// so flags and file entries go through the same parser and validation.
struct Overrides {
  std::vector<std::pair<CLI::Option*, std::string>> fields;
  std::map<std::string, std::string> values;

  void add(CLI::App* app, const std::string& flag, const std::string& field, const std::string& help) {
    fields.emplace_back(app->add_option(flag, values[field], help), field);
  }

  void add_flag(CLI::App* app, const std::string& flag, const std::string& field, const std::string& help) {
    auto* opt = app->add_flag_callback(flag, [this, field] { values[field] = "true"; }, help);
    fields.emplace_back(opt, field);
  }

  void apply(ConfigFile& cf) const {
    for (const auto& [opt, field] : fields)
      if (opt->count() > 0) cf.set(field, values.at(field));
  }
};

struct Common {
  std::string config;
  std::string out;
  unsigned threads = 1;
};

RunConfig effective_config(const Common& c, const Overrides& ov) {
  ConfigFile cf = c.config.empty() ? ConfigFile{} : ConfigFile::load(c.config);
  ov.apply(cf);
  RunConfig run;
  run.apply(cf);
  return run;
}

fs::path prepare_out(const Common& c) {
  if (c.out.empty()) throw ConfigError("--out is required");
  fs::path out(c.out);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw DataError("cannot create output directory " + c.out + ": " + ec.message());
  return out;
}

void write_echo(const fs::path& out, const RunConfig& run) { io::write_file((out / kEchoName).string(), run.echo()); }

const std::string& require(const std::string& value, const char* field, const char* flag) {
  if (value.empty()) throw ConfigError(std::string(field) + " is required (" + flag + " or config)");
  return value;
}

std::string pct(double v) { return text::fixed(100.0 * v, 1) + "%"; }

// Feature vectors for `corpus`: from the cache when given, otherwise
// extracted from the graph files with the supplied settings.
std::map<std::string, FeatureVector> corpus_features(const Corpus& corpus, const std::string& cache_path,
                                                     const WlConfig& wl, const PreprocessConfig& pre,
                                                     unsigned threads) {
  if (!cache_path.empty()) return load_feature_cache(cache_path).by_id();
  auto ex = extract_corpus(corpus, wl, pre, threads);
  for (const auto& [id, why] : ex.failures) std::cerr << "warning: " << id << ": " << why << "\n";
  std::map<std::string, FeatureVector> out;
  for (std::size_t i = 0; i < ex.ids.size(); ++i) out[ex.ids[i]] = std::move(ex.vectors[i]);
  return out;
}

// Model-ready vector: fuses capability rules when the model expects them.
std::vector<double> model_input(const LinearModel& m, const Sample& s, const FeatureVector& wl) {
  const bool capa = std::any_of(m.layout.begin(), m.layout.end(), [](const Block& b) { return b.name == kCapaBlock; });
  FeatureVector v = capa ? fuse_capa(wl, s.capa_rules, m.vocabulary) : wl;
  if (v.layout != m.layout) {
    throw DataError("sample " + s.id + ": feature layout (dim " + std::to_string(layout_length(v.layout)) +
                    ") does not match model (dim " + std::to_string(m.dim()) + ")");
  }
  return std::move(v.values);
}

// ---------------------------------------------------------------------------

int cmd_synth(const Common& c, const Overrides& ov) {
  RunConfig run = effective_config(c, ov);
  const auto out = prepare_out(c);
  const auto sc = generate(run.synth);
  write_synth(sc, out);
  write_echo(out, run);

  const auto groups = group_by_dex(sc.corpus.samples);
  std::map<std::string, std::set<std::string>> groups_per_family;
  for (const auto& s : sc.corpus.samples) groups_per_family[s.family].insert(groups.at(s.id));
  const auto reuse = measured_reuse(sc);
  std::printf("%-12s %8s %8s %8s\n", "family", "samples", "groups", "reuse");
  for (const auto& [fam, n] : sc.corpus.family_counts()) {
    const auto it = reuse.find(fam);
    std::printf("%-12s %8zu %8zu %8s\n", fam.c_str(), n, groups_per_family[fam].size(),
                it == reuse.end() ? "-" : text::fixed(it->second, 3).c_str());
  }
  std::printf("%-12s %8zu %8zu\n", "total", sc.corpus.samples.size(), std::set<std::string>([&] {
                std::set<std::string> g;
                for (const auto& [id, grp] : groups) g.insert(grp);
                return g;
              }()).size());
  std::printf("wrote %s\n", (out / kManifestName).string().c_str());
  return 0;
}

int cmd_extract(const Common& c, const Overrides& ov) {
  RunConfig run = effective_config(c, ov);
  const auto corpus = load_corpus(require(run.io.manifest, "io.manifest", "--manifest"), {.allow_unlabeled = true});
  const auto out = prepare_out(c);
  auto ex = extract_corpus(corpus, run.wl, run.preprocess, c.threads);
  std::string log;
  for (const auto& [id, why] : ex.failures) {
    std::cerr << "warning: excluded " << id << ": " << why << "\n";
    log += id + "\t" + why + "\n";
  }
  const std::size_t n = corpus.samples.size();
  if (n == 0) throw DataError("manifest lists no samples");
  if (2 * ex.failures.size() > n) {
    throw DataError(std::to_string(ex.failures.size()) + " of " + std::to_string(n) +
                    " samples failed extraction (more than 50%)");
  }
  FeatureCache fc;
  fc.wl = run.wl;
  fc.ids = ex.ids;
  if (!ex.vectors.empty()) fc.layout = ex.vectors.front().layout;
  for (auto& v : ex.vectors) fc.vectors.push_back(std::move(v.values));
  save_feature_cache((out / kCacheName).string(), fc);
  io::write_file((out / "extract.log").string(), log);
  write_echo(out, run);
  std::printf("extracted %zu of %zu samples (%zu excluded), dim %zu\n", fc.ids.size(), n, ex.failures.size(),
              fc.dim());
  return 0;
}

struct TrainingInputs {
  Corpus corpus;
  FeatureCache cache;
};

TrainingInputs training_inputs(RunConfig& run) {
  TrainingInputs t{load_corpus(require(run.io.manifest, "io.manifest", "--manifest")),
                   load_feature_cache(require(run.io.cache, "io.cache", "--cache"))};
  run.wl = t.cache.wl;  // the cache is authoritative for extraction settings
  std::size_t missing = 0;
  const auto ids = std::set<std::string>(t.cache.ids.begin(), t.cache.ids.end());
  for (const auto& s : t.corpus.samples) missing += ids.contains(s.id) ? 0 : 1;
  if (missing) std::cerr << "warning: " << missing << " manifest samples have no cached features and are skipped\n";
  return t;
}

void stamp(LinearModel& m, const RunConfig& run) {
  m.wl = run.wl;
  m.echo = run.echo();
}

int cmd_crossval(const Common& c, const Overrides& ov) {
  RunConfig run = effective_config(c, ov);
  auto in = training_inputs(run);
  const auto out = prepare_out(c);
  const auto features = in.cache.by_id();
  const auto echo = run.echo();

  auto res = run_experiment(in.corpus, features, run.experiment, run.train, c.threads);
  std::string txt = "macro-F1 " + text::mean_std_cell(res.mean_macro_f1, res.std_macro_f1) + " (" +
                    to_string(run.experiment.features) + ", " + to_string(run.experiment.regime) + ", " +
                    to_string(run.experiment.balance) + ", " + std::to_string(run.experiment.k) + " folds)\n";
  std::string predictions = "id,family,fold,predicted\n";
  std::map<std::string, std::string> family_of;
  for (const auto& s : in.corpus.samples) family_of[s.id] = s.family;
  for (auto& f : res.folds) {
    const auto tag = std::to_string(f.fold);
    io::write_file((out / ("confusion_fold" + tag + ".csv")).string(), render_confusion_csv(f.confusion));
    stamp(f.model, run);
    save_model((out / ("model_fold" + tag + ".bin")).string(), f.model);
    txt += "\nfold " + tag + ": macro-F1 " + text::fixed(f.macro_f1, 3) + ", train " + std::to_string(f.n_train) +
           " (balanced " + std::to_string(f.n_train_balanced) + "), test " + std::to_string(f.n_test) +
           ", dex leak " + std::to_string(f.dex_leak) + "\n" + render_confusion_text(f.confusion);
    for (const auto& [id, pred] : f.predictions)
      predictions += text::csv_quote(id) + "," + text::csv_quote(family_of[id]) + "," + tag + "," +
                     text::csv_quote(pred) + "\n";
  }
  io::write_file((out / "report.csv").string(), experiment_report_csv(res, echo));
  io::write_file((out / "per_class.csv").string(), per_class_csv(res));
  io::write_file((out / "predictions.csv").string(), predictions);

  if (run.grid) {
    std::vector<GridCell> cells;
    for (auto balance : {Balance::None, Balance::Upsampled}) {
      for (auto regime : {Regime::Closed, Regime::Open}) {
        auto ec = run.experiment;
        ec.balance = balance;
        ec.regime = regime;
        const auto r = run_experiment(in.corpus, features, ec, run.train, c.threads);
        cells.push_back({balance, "SGD", regime, r.mean_macro_f1, r.std_macro_f1});
      }
    }
    const auto grid = render_grid(cells);
    io::write_file((out / "grid.csv").string(), grid);
    txt += "\n" + grid;
  }
  io::write_file((out / "report.txt").string(), txt);
  write_echo(out, run);
  std::fputs(txt.substr(0, txt.find('\n') + 1).c_str(), stdout);
  return 0;
}

int cmd_train(const Common& c, const Overrides& ov) {
  RunConfig run = effective_config(c, ov);
  auto in = training_inputs(run);
  const auto out = prepare_out(c);
  const auto dm = design_matrix(in.corpus, in.cache.by_id(), run.experiment.features, run.experiment.regime);
  auto model = train_final(dm, run.experiment.balance, run.train, run.seed);
  stamp(model, run);
  save_model((out / kModelName).string(), model);
  write_echo(out, run);
  std::printf("trained on %zu samples, %zu classes, dim %zu\n", dm.samples.size(), model.classes.size(), model.dim());
  return 0;
}

int cmd_predict(const Common& c, const Overrides& ov) {
  RunConfig run = effective_config(c, ov);
  const auto model = load_model(require(run.io.model, "io.model", "--model"));
  run.wl = model.wl;
  const auto corpus = load_corpus(require(run.io.manifest, "io.manifest", "--manifest"), {.allow_unlabeled = true});
  const auto out = prepare_out(c);
  const auto features = corpus_features(corpus, run.io.cache, model.wl, run.preprocess, c.threads);

  std::string csv = "id,family,predicted";
  for (const auto& cls : model.classes) csv += "," + text::csv_quote("score_" + cls);
  csv += "\n";
  std::size_t n = 0;
  std::size_t agree = 0;
  std::size_t labeled = 0;
  for (const auto& s : corpus.samples) {
    auto it = features.find(s.id);
    if (it == features.end()) continue;
    const auto p = predict(model, model_input(model, s, it->second));
    csv += text::csv_quote(s.id) + "," + text::csv_quote(s.family) + "," + text::csv_quote(p.label);
    for (double v : p.scores) csv += "," + text::shortest(v);
    csv += "\n";
    ++n;
    if (s.family != kUnlabeled) {
      ++labeled;
      agree += s.family == p.label ? 1 : 0;
    }
  }
  io::write_file((out / "predictions.csv").string(), csv);
  write_echo(out, run);
  std::printf("predicted %zu samples", n);
  if (labeled) std::printf(", %zu of %zu labeled agree (%s)", agree, labeled, pct(double(agree) / double(labeled)).c_str());
  std::printf("\n");
  return 0;
}

int cmd_explain(const Common& c, const Overrides& ov) {
  RunConfig run = effective_config(c, ov);
  const auto model = load_model(require(run.io.model, "io.model", "--model"));
  run.wl = model.wl;
  const auto corpus = load_corpus(require(run.io.manifest, "io.manifest", "--manifest"), {.allow_unlabeled = true});
  const auto out = prepare_out(c);
  const auto features = corpus_features(corpus, run.io.cache, model.wl, run.preprocess, c.threads);

  std::vector<Attribution> attributions;
  for (const auto& s : corpus.samples) {
    auto it = features.find(s.id);
    if (it == features.end()) continue;
    attributions.push_back(linear_shap(model, model_input(model, s, it->second), s.id));
  }
  if (attributions.empty()) throw DataError("explain: no samples with features");
  const auto ranking = global_importance(model, attributions);
  const std::size_t top = std::min(run.explain.top, ranking.size());

  std::set<BucketKey> wanted;
  std::vector<std::optional<FeatureRef>> refs;
  for (std::size_t r = 0; r < top; ++r) {
    refs.push_back(parse_feature_name(model.layout, model.vocabulary, ranking[r].name));
    if (refs.back() && !refs.back()->is_capa) wanted.insert({refs.back()->block, refs.back()->local});
  }
  std::optional<FeatureRef> single;
  if (!run.explain.feature.empty()) {
    single = parse_feature_name(model.layout, model.vocabulary, run.explain.feature);
    if (!single) throw DataError("unknown feature name: " + run.explain.feature);
    if (!single->is_capa) wanted.insert({single->block, single->local});
  }
  const auto map = build_bucket_map(corpus, model.wl, run.preprocess, wanted);

  std::string csv = "rank,feature,mean_abs_phi,witnesses,top_witness,top_witness_families,top_witness_methods\n";
  std::string txt;
  for (std::size_t r = 0; r < top; ++r) {
    const auto rep = explain_feature(map, model.layout, model.vocabulary, ranking[r].name);
    std::string count;
    std::string best;
    std::string fams;
    std::string methods;
    if (rep.is_capa) {
      count = std::to_string(rep.family_counts.size());
      best = rep.feature;
      fams = format_counts(rep.family_counts);
    } else {
      count = std::to_string(rep.witnesses.size());
      auto it = std::max_element(rep.witnesses.begin(), rep.witnesses.end(),
                                 [](const Witness& a, const Witness& b) { return a.total() < b.total(); });
      if (it != rep.witnesses.end()) {
        best = it->pattern;
        fams = format_counts(it->family_counts);
        methods = detail::join(ranked_methods(*it), ";");
      }
    }
    csv += std::to_string(r + 1) + "," + text::csv_quote(ranking[r].name) + "," +
           text::shortest(ranking[r].mean_abs_phi) + "," + count + "," + text::csv_quote(best) + "," +
           text::csv_quote(fams) + "," + text::csv_quote(methods) + "\n";
    txt += render_witness_report(rep);
  }
  io::write_file((out / "explain.csv").string(), csv);
  io::write_file((out / "buckets.txt").string(), txt);
  if (single) {
    const auto rep = explain_feature(map, model.layout, model.vocabulary, run.explain.feature);
    const auto body = render_witness_report(rep);
    io::write_file((out / "feature.txt").string(), body);
    std::fputs(body.c_str(), stdout);
  }
  write_echo(out, run);
  std::printf("ranked %zu features over %zu samples\n", top, attributions.size());
  return 0;
}

int cmd_siggen(const Common& c, const Overrides& ov) {
  RunConfig run = effective_config(c, ov);
  const bool filter = run.filter_signatures;
  const auto corpus = load_corpus(require(run.io.manifest, "io.manifest", "--manifest"));
  const auto out = prepare_out(c);
  const auto samples = load_string_samples(corpus);
  auto rules = generate_rules(samples, run.signatures);
  if (filter) {
    auto fr = filter_nondiscriminative(rules, samples, run.signatures.min_hits);
    for (const auto& fam : fr.dropped) std::cerr << "warning: rule for " << fam << " has no discriminative strings\n";
    rules = std::move(fr.rules);
  }
  io::write_file((out / "rules.json").string(), rules_to_json(rules));
  io::write_file((out / "rules.yar").string(), export_yara(rules));
  write_echo(out, run);
  std::printf("generated %zu rules%s\n", rules.size(), filter ? " (filtered)" : "");
  return 0;
}

int cmd_sigeval(const Common& c, const Overrides& ov) {
  RunConfig run = effective_config(c, ov);
  const auto rules = rules_from_json(io::read_file(require(run.io.rules, "io.rules", "--rules")));
  const auto corpus = load_corpus(require(run.io.manifest, "io.manifest", "--manifest"));
  const auto out = prepare_out(c);
  const auto samples = load_string_samples(corpus);

  const auto pre = evaluate_rules(rules, samples);
  const auto filtered = filter_nondiscriminative(rules, samples, run.signatures.min_hits);
  const auto post = evaluate_rules(filtered.rules, samples);
  io::write_file((out / "sigeval_pre.csv").string(), rule_eval_csv(pre, "pre"));
  io::write_file((out / "sigeval_post.csv").string(), rule_eval_csv(post, "post"));
  io::write_file((out / "rules_filtered.json").string(), rules_to_json(filtered.rules));
  io::write_file((out / "rules_filtered.yar").string(), export_yara(filtered.rules));
  write_echo(out, run);

  std::map<std::string, const RuleStats*> after;
  for (const auto& s : post.rules) after[s.family] = &s;
  std::printf("%-12s %10s %10s %8s\n", "family", "pre_prec", "post_prec", "removed");
  auto prec = [](const RuleStats* s) {
    return s && s->precision ? pct(*s->precision) : std::string("undefined");
  };
  for (const auto& s : pre.rules) {
    const auto it = after.find(s.family);
    std::printf("%-12s %10s %10s\n", s.family.c_str(), prec(&s).c_str(),
                prec(it == after.end() ? nullptr : it->second).c_str());
  }
  std::printf("removed %zu strings, dropped %zu rules; ruleset F1 %s -> %s\n", filtered.removed_strings,
              filtered.dropped.size(), text::fixed(pre.ruleset_f1, 3).c_str(), text::fixed(post.ruleset_f1, 3).c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Graph-kernel family attribution for SDK-embedding Android apps"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "sdkprint 0.1.0");

  Common common;
  Overrides ov;
  std::function<int()> action;

  auto sub = [&](const std::string& name, const std::string& help) {
    auto* s = app.add_subcommand(name, help);
    s->add_option("--config", common.config, "Sectioned key = value config file");
    s->add_option("--out", common.out, "Output directory")->required();
    ov.add(s, "--seed", "seed", "Global seed");
    return s;
  };
  auto threads = [&](CLI::App* s) {
    s->add_option("--threads", common.threads, "Worker threads (output does not depend on it)")
        ->check(CLI::Range(1u, 1024u));
  };
  auto experiment_flags = [&](CLI::App* s) {
    ov.add(s, "--folds", "experiment.folds", "Number of folds");
    ov.add(s, "--balance", "experiment.balance", "none|upsampled");
    ov.add(s, "--features", "experiment.features", "wl|wl+capa");
    ov.add(s, "--regime", "experiment.regime", "closed|open");
  };

  auto* synth = sub("synth", "Generate a synthetic SDK-embedding corpus");
  synth->callback([&] { action = [&] { return cmd_synth(common, ov); }; });

  auto* extract = sub("extract", "Extract WL feature vectors into a cache");
  ov.add(extract, "--manifest", "io.manifest", "Corpus manifest");
  ov.add(extract, "--dim", "wl.dim", "Hash dimension per graph type");
  ov.add(extract, "--iterations", "wl.iterations", "WL iterations");
  threads(extract);
  extract->callback([&] { action = [&] { return cmd_extract(common, ov); }; });

  auto* crossval = sub("crossval", "DEX-grouped cross-validation");
  ov.add(crossval, "--cache", "io.cache", "Feature cache");
  ov.add(crossval, "--manifest", "io.manifest", "Corpus manifest");
  experiment_flags(crossval);
  ov.add_flag(crossval, "--grid", "experiment.grid", "Also run every balancing x regime combination");
  threads(crossval);
  crossval->callback([&] { action = [&] { return cmd_crossval(common, ov); }; });

  auto* trn = sub("train", "Train a final model on the whole corpus");
  ov.add(trn, "--cache", "io.cache", "Feature cache");
  ov.add(trn, "--manifest", "io.manifest", "Corpus manifest");
  experiment_flags(trn);
  trn->callback([&] { action = [&] { return cmd_train(common, ov); }; });

  auto* pred = sub("predict", "Predict families for (possibly unlabeled) samples");
  ov.add(pred, "--model", "io.model", "Model file");
  ov.add(pred, "--manifest", "io.manifest", "Corpus manifest");
  ov.add(pred, "--cache", "io.cache", "Feature cache (otherwise graphs are extracted)");
  threads(pred);
  pred->callback([&] { action = [&] { return cmd_predict(common, ov); }; });

  auto* expl = sub("explain", "Rank features by attribution and map buckets back to subgraphs");
  ov.add(expl, "--model", "io.model", "Model file");
  ov.add(expl, "--manifest", "io.manifest", "Corpus manifest");
  ov.add(expl, "--cache", "io.cache", "Feature cache (otherwise graphs are extracted)");
  ov.add(expl, "--top", "explain.top", "Number of features to report");
  ov.add(expl, "--feature", "explain.feature", "Explain one feature, e.g. fcg_wl_17");
  threads(expl);
  expl->callback([&] { action = [&] { return cmd_explain(common, ov); }; });

  auto* siggen = sub("siggen", "Generate per-family string signatures");
  ov.add(siggen, "--manifest", "io.manifest", "Corpus manifest");
  ov.add(siggen, "--top-k", "signatures.top_k", "Strings per rule");
  ov.add(siggen, "--min-hits", "signatures.min_hits", "Matches required");
  ov.add(siggen, "--targets", "signatures.targets", "Comma-separated families");
  ov.add_flag(siggen, "--filter", "signatures.filter", "Drop strings shared across families");
  siggen->callback([&] { action = [&] { return cmd_siggen(common, ov); }; });

  auto* sigeval = sub("sigeval", "Evaluate signatures before and after filtering");
  ov.add(sigeval, "--rules", "io.rules", "rules.json");
  ov.add(sigeval, "--manifest", "io.manifest", "Corpus manifest");
  ov.add(sigeval, "--min-hits", "signatures.min_hits", "Requested matches after filtering");
  sigeval->callback([&] { action = [&] { return cmd_sigeval(common, ov); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    return action();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const InvariantError& e) {
    std::cerr << "invariant violation: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  }
}
