#include <gtest/gtest.h>

#include "sdkprint/classifier.hpp"
#include "sdkprint/evaluation.hpp"
#include "support.hpp"
#include "synth_fixture.hpp"

using namespace sdkprint;

namespace {

Layout flat(std::size_t d) { return {{"x", 0, d}}; }

std::vector<double> random_vec(Rng& rng, std::size_t d, double scale = 1.0) {
  std::vector<double> v(d);
  for (auto& x : v) x = scale * (2.0 * rng.uniform() - 1.0);
  return v;
}

double accuracy(const LinearModel& m, const std::vector<std::vector<double>>& xs, const std::vector<std::string>& ys) {
  std::size_t ok = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) ok += predict(m, xs[i]).label == ys[i];
  return static_cast<double>(ok) / static_cast<double>(xs.size());
}

}  // namespace

TEST(Gradient, SubgradientMatchesCentralDifference) {
  Rng rng(61);
  int checked = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t d = 1 + rng.below(12);
    const double lambda = trial % 2 ? 1e-4 : 0.3;
    auto w = random_vec(rng, d, 2.0);
    double b = 2.0 * rng.uniform() - 1.0;
    const auto x = random_vec(rng, d);
    const double y = rng.bernoulli(0.5) ? 1.0 : -1.0;
    if (std::abs(y * (dot(w, x) + b) - 1.0) < 1e-3) continue;  // kink
    const auto g = sample_subgradient(w, b, x, y, lambda);
    const double h = 1e-6;
    double num = 0.0, den = 0.0;
    for (std::size_t j = 0; j <= d; ++j) {
      auto wp = w, wm = w;
      double bp = b, bm = b;
      if (j < d) {
        wp[j] += h;
        wm[j] -= h;
      } else {
        bp += h;
        bm -= h;
      }
      const double fd = (sample_objective(wp, bp, x, y, lambda) - sample_objective(wm, bm, x, y, lambda)) / (2 * h);
      const double an = j < d ? g.w[j] : g.b;
      num += (fd - an) * (fd - an);
      den += an * an;
    }
    if (den == 0.0) continue;
    EXPECT_LT(std::sqrt(num / den), 1e-4) << "trial " << trial;
    ++checked;
  }
  EXPECT_GT(checked, 250);
}

TEST(Gradient, StepIsMinusEtaTimesSubgradient) {
  Rng rng(67);
  for (int trial = 0; trial < 50; ++trial) {
    auto w = random_vec(rng, 6);
    double b = rng.uniform();
    const auto x = random_vec(rng, 6);
    const double y = trial % 2 ? 1.0 : -1.0;
    const auto g = sample_subgradient(w, b, x, y, 0.01);
    auto w2 = w;
    double b2 = b;
    sgd_step(w2, b2, x, y, 0.5, 0.01);
    for (std::size_t j = 0; j < w.size(); ++j) EXPECT_NEAR(w2[j], w[j] - 0.5 * g.w[j], 1e-12);
    EXPECT_NEAR(b2, b - 0.5 * g.b, 1e-12);
  }
}

TEST(Schedule, PegasosRate) {
  TrainConfig c;
  EXPECT_DOUBLE_EQ(c.learning_rate(0), 0.01);
  EXPECT_DOUBLE_EQ(c.learning_rate(100), 1.0 / (1e-4 * (100 + 1.0 / (1e-4 * 0.01))));
}

TEST(Train, SeparableCloudsFitPerfectly) {
  Rng rng(71);
  std::vector<std::vector<double>> xs;
  std::vector<std::string> ys;
  for (int i = 0; i < 100; ++i) {
    const bool pos = i % 2;
    const double angle = (pos ? 0.3 : 1.3) + 0.2 * rng.uniform();
    const double r = 0.5 + rng.uniform();
    xs.push_back({r * std::cos(angle), r * std::sin(angle)});
    ys.push_back(pos ? "p" : "q");
  }
  const auto m = train(xs, ys, flat(2), {});
  EXPECT_EQ(accuracy(m, xs, ys), 1.0);
}

TEST(Train, ConflictingLabelsBoundedByPrior) {
  std::vector<std::vector<double>> xs(5, {1.0, 2.0, 3.0});
  const std::vector<std::string> ys{"a", "a", "a", "b", "b"};
  const auto m = train(xs, ys, flat(3), {});
  EXPECT_LE(accuracy(m, xs, ys), 0.6);
}

TEST(Train, Invariants) {
  Rng rng(73);
  std::vector<std::vector<double>> xs;
  std::vector<std::string> ys;
  for (int i = 0; i < 40; ++i) {
    xs.push_back(random_vec(rng, 7));
    ys.push_back(std::string(1, static_cast<char>('d' - i % 3)));
  }
  TrainConfig cfg;
  cfg.seed = 5;
  const auto m = train(xs, ys, flat(7), cfg);
  EXPECT_EQ(m.classes, (std::vector<std::string>{"b", "c", "d"}));
  EXPECT_EQ(m.weights.size(), 3u);
  for (const auto& w : m.weights) EXPECT_EQ(w.size(), 7u);
  EXPECT_EQ(m, train(xs, ys, flat(7), cfg));
  cfg.seed = 6;
  EXPECT_NE(m.weights, train(xs, ys, flat(7), cfg).weights);
}

TEST(Train, Errors) {
  EXPECT_THROW(train({{1.0}, {2.0}}, {"a", "a"}, flat(1), {}), DataError);
  EXPECT_THROW(train({{1.0}, {2.0, 1.0}}, {"a", "b"}, flat(1), {}), DataError);
  EXPECT_THROW(train({}, {}, flat(1), {}), DataError);
  TrainConfig bad;
  bad.lambda = 0;
  EXPECT_THROW(train({{1.0}, {2.0}}, {"a", "b"}, flat(1), bad), ConfigError);
  bad = {};
  bad.epochs = 0;
  EXPECT_THROW(train({{1.0}, {2.0}}, {"a", "b"}, flat(1), bad), ConfigError);
}

TEST(Predict, TieGoesToFirstClass) {
  LinearModel m;
  m.classes = {"a", "b", "c"};
  m.layout = flat(3);
  m.weights.assign(3, std::vector<double>(3, 0.0));
  m.bias.assign(3, 0.25);
  EXPECT_EQ(predict(m, std::vector<double>{1, 2, 3}).label, "a");
  m.bias = {0.0, 5.0, 5.0};
  EXPECT_EQ(predict(m, std::vector<double>{1, 2, 3}).label, "b");
}

TEST(Predict, DominantClassWins) {
  Rng rng(79);
  LinearModel m;
  m.classes = {"a", "b", "c"};
  m.layout = flat(4);
  for (int c = 0; c < 3; ++c) m.weights.push_back(random_vec(rng, 4));
  m.bias = {0.0, 100.0, 0.0};
  for (int i = 0; i < 20; ++i) EXPECT_EQ(predict(m, random_vec(rng, 4, 50.0)).label, "b");
}

TEST(Predict, ScaleInvariant) {
  Rng rng(83);
  std::vector<std::vector<double>> xs;
  std::vector<std::string> ys;
  for (int i = 0; i < 30; ++i) {
    xs.push_back(random_vec(rng, 5));
    ys.push_back(i % 3 ? "x" : "y");
  }
  const auto m = train(xs, ys, flat(5), {});
  for (int i = 0; i < 100; ++i) {
    const auto x = random_vec(rng, 5);
    auto x10 = x;
    for (auto& v : x10) v *= 10.0;
    const auto p = predict(m, x), q = predict(m, x10);
    EXPECT_EQ(p.label, q.label);
    for (std::size_t c = 0; c < p.scores.size(); ++c) EXPECT_NEAR(p.scores[c], q.scores[c], 1e-12);
  }
}

TEST(ModelFile, RoundTripPredictions) {
  Rng rng(89);
  std::vector<std::vector<double>> xs;
  std::vector<std::string> ys;
  for (int i = 0; i < 30; ++i) {
    xs.push_back(random_vec(rng, 1024));
    ys.push_back(i % 2 ? "m" : "n");
  }
  const Layout layout{{"cfg_wl", 0, 512}, {"fcg_wl", 512, 512}};
  auto m = train(xs, ys, layout, {});
  m.echo = "a = 1\n";
  m.wl = {2, 512};
  testing_support::TempDir dir("model");
  save_model(dir.str("m.bin"), m);
  const auto back = load_model(dir.str("m.bin"));
  EXPECT_EQ(back, m);
  for (int i = 0; i < 100; ++i) {
    const auto x = random_vec(rng, 1024);
    const auto p = predict(m, x), q = predict(back, x);
    EXPECT_EQ(p.label, q.label);
    EXPECT_EQ(p.scores, q.scores);
  }
  EXPECT_THROW(predict(back, std::vector<double>(2117, 0.0)), DataError);
}

TEST(ModelFile, Corruption) {
  LinearModel m;
  m.classes = {"a", "b"};
  m.layout = flat(2);
  m.weights = {{1, 2}, {3, 4}};
  m.bias = {0, 1};
  const auto bytes = serialize_model(m);
  EXPECT_EQ(parse_model(bytes), m);
  for (std::size_t cut : {std::size_t{4}, std::size_t{20}, bytes.size() - 1})
    EXPECT_THROW(parse_model(bytes.substr(0, cut)), DataError);
  EXPECT_THROW(parse_model(bytes + '\0'), DataError);
  auto v = bytes;
  v[8] = 2;
  EXPECT_THROW(parse_model(v), DataError);
  EXPECT_THROW(load_model("/nonexistent/model.bin"), DataError);
}

TEST(Train, ObjectiveMostlyNonIncreasingOnSyntheticCorpus) {
  const auto& f = testing_support::default_synth();
  const auto dm = design_matrix(f.corpus, f.wl, FeatureMode::Wl, Regime::Open);
  TrainTrace trace;
  std::vector<std::string> ys;
  for (const auto& s : dm.samples) ys.push_back(s.family);
  train(dm.vectors, ys, dm.layout, {}, &trace);
  std::size_t pairs = 0, good = 0;
  for (const auto& obj : trace.objective) {
    ASSERT_EQ(obj.size(), 10u);
    for (std::size_t e = 1; e < obj.size(); ++e) {
      ++pairs;
      good += obj[e] <= obj[e - 1];
    }
  }
  EXPECT_GE(static_cast<double>(good), 0.8 * static_cast<double>(pairs)) << good << "/" << pairs;
}
