#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "histofuse/gp.hpp"
#include "histofuse/tune.hpp"
#include "test_support.hpp"

using namespace histofuse;
using testing_support::Rng;
using testing_support::TempDir;

namespace {

HyperparamSpace unit_line() {
  HyperparamSpace s;
  s.dims.push_back({"x", DimType::real, 0.0, 1.0, {}});
  return s;
}

double x_of(const ParamMap& p) { return std::get<double>(p.at("x")); }

// Normal CDF by Simpson integration of the density from -10, independent of erfc.
double cdf_by_quadrature(double z) {
  const int n = 20000;
  const double a = -10.0, h = (z - a) / n;
  auto f = [](double t) { return std::exp(-0.5 * t * t) / std::sqrt(2 * std::numbers::pi); };
  double s = f(a) + f(z);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4 : 2) * f(a + i * h);
  return s * h / 3;
}

}  // namespace

TEST(Encoding, Examples) {
  HyperparamSpace s;
  s.dims.push_back({"c", DimType::log_real, 1e-3, 1e3, {}});
  s.dims.push_back({"n", DimType::integer, 1, 50, {}});
  const std::vector<double> mid = {0.5, 0.0};
  auto p = decode(s, mid);
  EXPECT_NEAR(std::get<double>(p.at("c")), 1.0, 1e-12);
  EXPECT_EQ(std::get<long long>(p.at("n")), 1);
  p = decode(s, std::vector<double>{1.0, 1.0});
  EXPECT_NEAR(std::get<double>(p.at("c")), 1e3, 1e-9);
  EXPECT_EQ(std::get<long long>(p.at("n")), 50);
}

TEST(Encoding, CategoricalIntervalsAndClamp) {
  HyperparamSpace s;
  s.dims.push_back({"m", DimType::categorical, 0, 1, {"a", "b", "c"}});
  EXPECT_EQ(std::get<std::string>(decode(s, std::vector<double>{0.0}).at("m")), "a");
  EXPECT_EQ(std::get<std::string>(decode(s, std::vector<double>{0.34}).at("m")), "b");
  EXPECT_EQ(std::get<std::string>(decode(s, std::vector<double>{1.0}).at("m")), "c");
  EXPECT_EQ(std::get<std::string>(decode(s, std::vector<double>{1.7}).at("m")), "c");
  EXPECT_THROW(encode(s, {{"m", std::string("z")}}), InputError);
  EXPECT_THROW(encode(s, {}), InputError);
}

TEST(Encoding, RoundTripProperty) {
  for (auto kind : kAllModelKinds) {
    const auto space = default_space(kind);
    Rng rng(static_cast<std::uint64_t>(kind) + 1);
    for (int t = 0; t < 1000; ++t) {
      std::vector<double> u(space.size());
      for (auto& v : u) v = rng.uniform();
      const auto params = decode(space, u);
      EXPECT_EQ(decode(space, encode(space, params)), params);
    }
  }
}

TEST(Encoding, DefaultSpacesCoverEveryParameter) {
  for (auto kind : kAllModelKinds) {
    const auto space = default_space(kind);
    EXPECT_NO_THROW(space.validate());
    std::set<std::string> names;
    for (const auto& d : space.dims) EXPECT_TRUE(names.insert(d.name).second) << d.name;
    std::set<std::string> fields;
    for (const auto& [k, v] : to_param_map(default_hyperparams(kind))) fields.insert(k);
    EXPECT_EQ(names, fields) << model_kind_name(kind);
    const std::vector<double> mid(space.size(), 0.5);
    EXPECT_EQ(kind_of(hyperparams_from_map(kind, decode(space, mid))), kind);
  }
  HyperparamSpace bad;
  bad.dims.push_back({"x", DimType::real, 1.0, 1.0, {}});
  EXPECT_THROW(bad.validate(), InputError);
}

TEST(ExpectedImprovement, Examples) {
  EXPECT_DOUBLE_EQ(expected_improvement(1.3, 0.0, 1.0), 0.3);
  EXPECT_EQ(expected_improvement(0.7, 0.0, 1.0), 0.0);
  EXPECT_NEAR(expected_improvement(2.0, 1.0, 2.0), 1.0 / std::sqrt(2 * std::numbers::pi), 1e-15);
  const double phi1 = std::exp(-0.5) / std::sqrt(2 * std::numbers::pi);
  EXPECT_NEAR(expected_improvement(1.0, 1.0, 2.0), -cdf_by_quadrature(-1.0) + phi1, 1e-10);
  EXPECT_NEAR(expected_improvement(1.0, 1.0, 2.0), 0.0833154705, 1e-9);
  for (double z : {-3.0, -0.5, 0.0, 1.2}) EXPECT_NEAR(normal_cdf(z), cdf_by_quadrature(z), 1e-10);
}

TEST(Gp, InterpolatesWithoutNoise) {
  Rng rng(1);
  std::vector<std::vector<double>> pts;
  std::vector<double> ys;
  for (int i = 0; i < 8; ++i) {
    pts.push_back({rng.uniform(), rng.uniform()});
    ys.push_back(std::sin(5 * pts.back()[0]) + pts.back()[1]);
  }
  GpOptions opt;
  opt.noise_grid = {1e-6};
  const auto gp = GpModel::fit(pts, ys, opt);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto p = gp.predict(pts[i]);
    EXPECT_NEAR(p.mean, ys[i], 1e-6 * std::max(1.0, gp.y_scale()) * 10);
    EXPECT_LE(p.sigma, 1e-3);
  }
}

TEST(Gp, RevertsToPriorFarAway) {
  std::vector<std::vector<double>> pts = {{0.1}, {0.2}, {0.3}, {0.35}};
  const std::vector<double> ys = {1.0, 3.0, 2.0, 2.5};
  GpOptions opt;
  opt.lengthscale_grid = {0.05};
  const auto gp = GpModel::fit(pts, ys, opt);
  const std::vector<double> far = {0.35 + 12 * 0.05};
  const auto p = gp.predict_standardized(far);
  EXPECT_NEAR(p.mean, 0.0, 1e-3);
  EXPECT_NEAR(p.sigma, std::sqrt(gp.signal_variance()), 1e-3);
  EXPECT_NEAR(gp.predict(far).mean, gp.y_mean(), 1e-3 * gp.y_scale());
}

TEST(Gp, SymmetricPoints) {
  const auto gp = GpModel::fit({{0.25}, {0.75}}, std::vector<double>{-1.0, 1.0});
  EXPECT_NEAR(gp.predict(std::vector<double>{0.5}).mean, 0.0, 1e-9);
  EXPECT_THROW(GpModel::fit({{0.25}}, std::vector<double>{1.0}), InputError);
  EXPECT_THROW(GpModel::fit({{0.2}, {0.3}}, std::vector<double>{1.0, NAN}), InputError);
}

TEST(Gp, VarianceSmallestAtData) {
  Rng rng(2);
  for (int t = 0; t < 10; ++t) {
    std::vector<std::vector<double>> pts;
    std::vector<double> ys;
    for (int i = 0; i < 6; ++i) {
      pts.push_back({0.3 * rng.uniform(), 0.3 * rng.uniform()});
      ys.push_back(rng.normal());
    }
    const auto gp = GpModel::fit(pts, ys);
    const double far = gp.predict(std::vector<double>{1.0, 1.0}).sigma;
    for (const auto& p : pts) EXPECT_LE(gp.predict(p).sigma, far + 1e-12);
  }
}

TEST(BayesOpt, FindsQuadraticOptimum) {
  // Dense grid oracle for the maximiser.
  double best_x = 0, best = -1e9;
  for (int i = 0; i <= 100000; ++i) {
    const double x = i / 100000.0, v = -(x - 0.3) * (x - 0.3);
    if (v > best) best = v, best_x = x;
  }
  BoSettings s;
  s.budget = 25;
  s.seed = 3;
  const auto h = bayes_optimize(unit_line(), [](const ParamMap& p) { return -std::pow(x_of(p) - 0.3, 2); }, s);
  ASSERT_EQ(h.trials.size(), 25U);
  EXPECT_NEAR(x_of(h.trials[h.incumbent].params), best_x, 0.05);
}

TEST(BayesOpt, IncumbentIsMonotone) {
  HyperparamSpace s2;
  s2.dims = {{"u", DimType::real, 0, 1, {}}, {"v", DimType::real, 0, 1, {}}};
  BoSettings s;
  s.budget = 20;
  s.seed = 4;
  const auto h = bayes_optimize(s2, [](const ParamMap& p) {
    return -oracle::branin_unit(std::get<double>(p.at("u")), std::get<double>(p.at("v")));
  }, s);
  const auto trace = h.incumbent_trace();
  ASSERT_EQ(trace.size(), 20U);
  for (std::size_t i = 1; i < trace.size(); ++i) EXPECT_GE(trace[i], trace[i - 1]);
  EXPECT_EQ(trace.back(), h.best_value());
  EXPECT_EQ(h.trials[h.incumbent].value, h.best_value());
}

TEST(BayesOpt, BudgetEqualToInitIsQuasiRandom) {
  BoSettings s;
  s.budget = 10;
  s.n_init = 10;
  s.seed = 5;
  const auto h = bayes_optimize(unit_line(), [](const ParamMap& p) { return x_of(p); }, s);
  ASSERT_EQ(h.trials.size(), 10U);
  const auto halton = scrambled_halton(10, 1, 5);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(h.trials[i].point, halton[i]);
  s.budget = 9;
  EXPECT_THROW(bayes_optimize(unit_line(), [](const ParamMap&) { return 0.0; }, s), InputError);
}

TEST(BayesOpt, HaltonCoversTheCube) {
  const auto pts = scrambled_halton(64, 3, 9);
  for (std::size_t d = 0; d < 3; ++d) {
    // Each of eight equal strata is hit by a low-discrepancy sequence of 64.
    std::vector<int> bins(8, 0);
    for (const auto& p : pts) {
      ASSERT_GE(p[d], 0.0);
      ASSERT_LT(p[d], 1.0);
      ++bins[static_cast<std::size_t>(p[d] * 8)];
    }
    for (int b : bins) EXPECT_GT(b, 0);
  }
  EXPECT_EQ(scrambled_halton(5, 2, 1), scrambled_halton(5, 2, 1));
  EXPECT_NE(scrambled_halton(5, 2, 1), scrambled_halton(5, 2, 2));
}

TEST(BayesOpt, Deterministic) {
  BoSettings s;
  s.budget = 15;
  s.seed = 6;
  auto f = [](const ParamMap& p) { return std::sin(7 * x_of(p)); };
  const auto a = bayes_optimize(unit_line(), f, s);
  const auto b = bayes_optimize(unit_line(), f, s);
  EXPECT_EQ(history_to_jsonl(a, false), history_to_jsonl(b, false));
}

TEST(BayesOpt, FailedTrialsAreRecorded) {
  BoSettings s;
  s.budget = 15;
  s.seed = 7;
  const auto h = bayes_optimize(unit_line(), [](const ParamMap& p) {
    if (x_of(p) > 0.6) throw InputError("too large");
    return x_of(p);
  }, s);
  std::size_t failed = 0;
  for (const auto& t : h.trials) {
    if (t.failed) {
      ++failed;
      EXPECT_EQ(t.value, -std::numeric_limits<double>::infinity());
      EXPECT_EQ(t.error, "too large");
    }
  }
  EXPECT_GT(failed, 0U);
  EXPECT_FALSE(h.trials[h.incumbent].failed);
  EXPECT_THROW(bayes_optimize(unit_line(), [](const ParamMap&) -> double { throw InputError("no"); }, s), Error);
}

TEST(BayesOpt, BeatsRandomOnBranin) {
  HyperparamSpace s2;
  s2.dims = {{"u", DimType::real, 0, 1, {}}, {"v", DimType::real, 0, 1, {}}};
  auto f = [](const ParamMap& p) {
    return -oracle::branin_unit(std::get<double>(p.at("u")), std::get<double>(p.at("v")));
  };
  std::vector<double> bo, rs;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    BoSettings s;
    s.seed = seed;
    bo.push_back(bayes_optimize(s2, f, s).best_value());
    rs.push_back(random_search(s2, f, 30, seed).best_value());
  }
  std::sort(bo.begin(), bo.end());
  std::sort(rs.begin(), rs.end());
  EXPECT_GT(bo[2], rs[2]);
  EXPECT_LE(-bo[2], 2.0);
  EXPECT_GE(-bo.front(), oracle::kBraninMin - 1e-9);
}

TEST(History, JsonlRoundTrip) {
  BoSettings s;
  s.budget = 12;
  s.seed = 8;
  const auto h = bayes_optimize(default_space(ModelKind::knn), [](const ParamMap& p) {
    if (std::get<long long>(p.at("k")) > 25) throw InputError("k");
    return 1.0 / static_cast<double>(std::get<long long>(p.at("k")));
  }, s);
  TempDir dir;
  write_history(dir / "h.jsonl", h);
  const auto back = read_history(dir / "h.jsonl");
  EXPECT_EQ(history_to_jsonl(back), history_to_jsonl(h));
  EXPECT_EQ(back.incumbent, h.incumbent);
  const auto text = history_to_jsonl(h, false);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 13);
  EXPECT_EQ(text.find("wall_ms"), std::string::npos);
}

TEST(Tune, TrainsOnTrainScoresOnVal) {
  const auto train = testing_support::to_matrix(testing_support::blobs(1, 30, 3, 4.0));
  const auto val = testing_support::to_matrix(testing_support::blobs(2, 15, 3, 4.0));
  BoSettings s;
  s.budget = 6;
  s.n_init = 4;
  s.seed = 9;
  const auto r = tune(ModelKind::knn, default_space(ModelKind::knn), train, val, s);
  EXPECT_EQ(r.history.trials.size(), 6U);
  EXPECT_EQ(hyperparams_from_map(ModelKind::knn, r.history.trials[r.history.incumbent].params), r.best);
  // Recompute the incumbent's validation accuracy by hand.
  const auto m = histofuse::train(train, r.best, s.seed);
  const auto pred = m.predict(val);
  double ok = 0;
  for (std::size_t i = 0; i < val.rows(); ++i) ok += pred[i] == val.labels()[i];
  EXPECT_DOUBLE_EQ(r.history.best_value(), ok / static_cast<double>(val.rows()));

  const auto ll = tune(ModelKind::knn, default_space(ModelKind::knn), train, val, s, TuneObjective::neg_log_loss);
  EXPECT_LE(ll.history.best_value(), 0.0);
}
