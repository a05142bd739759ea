// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "histofuse/backend.hpp"
#include "histofuse/hog.hpp"
#include "histofuse/log.hpp"
#include "histofuse/metrics.hpp"
#include "histofuse/mlp.hpp"
#include "histofuse/noise.hpp"
#include "histofuse/pipeline.hpp"
#include "histofuse/toy.hpp"
#include "histofuse/tune.hpp"
#include "test_support.hpp"

using namespace histofuse;
using testing_support::Rng;
using testing_support::TempDir;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ------------------------------------------------------------------ noise

Outcome snr_exactness() {
  Rng rng(101);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const auto im = testing_support::random_image(rng, 299, 299, 3);
    for (double db : {40.0, 35.0, 30.0}) {
      const auto noisy = inject_noise(im, {db, 7}, "img" + std::to_string(i));
      const auto a = im.values();
      const auto b = noisy.values();
      double ps = 0.0, pn = 0.0;
      for (std::size_t k = 0; k < a.size(); ++k) {
        ps += a[k] * a[k];
        pn += (b[k] - a[k]) * (b[k] - a[k]);
      }
      worst = std::max(worst, std::abs(10.0 * std::log10(ps / pn) - db));
      worst = std::max(worst, std::abs(measured_snr(im, noisy) - db));
    }
  }
  return {worst <= 1e-6, "max |SNR error| " + fmt("%.3g", worst) + " dB"};
}

// ------------------------------------------------------------------- HOG

Outcome hog_oracle() {
  Rng rng(202);
  double worst = 0.0;
  bool dims_ok = true;
  for (int i = 0; i < 50; ++i) {
    const std::size_t h = 128 + rng.below(193), w = 128 + rng.below(193);
    HogConfig cfg;
    cfg.cell_size = 32 + rng.below(std::min<std::size_t>(128, std::min(h, w) / 2) - 32 + 1);
    cfg.bins = 6 + rng.below(7);
    cfg.signed_orientation = rng.below(2) == 1;
    cfg.block_stride = 1 + rng.below(2);
    const auto im = testing_support::random_image(rng, h, w, i % 4 == 0 ? 1 : 3);
    const auto f = hog(im, cfg);
    const auto ref = oracle::hog(testing_support::to_oracle(im), cfg.cell_size, cfg.bins, cfg.block_size,
                                 cfg.block_stride, cfg.signed_orientation, cfg.clip);
    const std::size_t ny = h / cfg.cell_size, nx = w / cfg.cell_size;
    const std::size_t formula = ((ny - cfg.block_size) / cfg.block_stride + 1) *
                                ((nx - cfg.block_size) / cfg.block_stride + 1) * cfg.block_size *
                                cfg.block_size * cfg.bins;
    if (f.dim() != ref.size() || f.dim() != formula || hog_dim(cfg, h, w) != formula) {
      dims_ok = false;
      continue;
    }
    for (std::size_t k = 0; k < ref.size(); ++k) worst = std::max(worst, std::abs(f.values[k] - ref[k]));
  }
  return {dims_ok && worst <= 1e-5,
          "max |diff| " + fmt("%.3g", worst) + (dims_ok ? ", dimensions agree" : ", dimension mismatch")};
}

// ------------------------------------------------------------------- AUC

Outcome auc_oracle() {
  Rng rng(303);
  int exact = 0;
  double worst_trap = 0.0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t n = 2 + rng.below(199);
    const std::size_t levels = 1 + rng.below(20);
    std::vector<double> s(n);
    std::vector<int> p(n);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = static_cast<double>(rng.below(levels)) * 0.37;
      p[i] = rng.uniform() < 0.4 ? 1 : 0;
    }
    // Both classes present.
    p[0] = 1;
    p[n - 1] = 0;
    const auto [num, den] = oracle::auc_pairs(s, p);
    const double a = auc(s, p);
    if (a == static_cast<double>(num) / static_cast<double>(den)) ++exact;
    worst_trap = std::max(worst_trap, std::abs(trapezoid_area(roc_points(s, p)) - a));
  }
  return {exact == 200 && worst_trap <= 1e-12,
          std::to_string(exact) + "/200 exact, trapezoid max diff " + fmt("%.3g", worst_trap)};
}

// ------------------------------------------------------------------- MLP

Outcome mlp_gradients() {
  Rng rng(404);
  double worst = 0.0;
  for (int t = 0; t < 20; ++t) {
    const std::size_t in = 1 + rng.below(6);
    const int classes = 2 + static_cast<int>(rng.below(4));
    std::vector<int> hidden;
    for (std::size_t l = 0, n = rng.below(3); l < n; ++l) hidden.push_back(1 + static_cast<int>(rng.below(6)));
    MlpNetwork net(in, hidden, classes);
    net.init_he(static_cast<std::uint64_t>(t));
    for (auto& p : net.parameters()) p += 0.05 * rng.normal();
    const std::size_t rows = 1 + rng.below(8);
    std::vector<double> x(rows * in);
    for (auto& v : x) v = rng.normal();
    std::vector<int> y(rows);
    for (auto& v : y) v = static_cast<int>(rng.below(static_cast<std::size_t>(classes)));
    std::vector<double> grad;
    net.loss_and_gradient(x, y, rows, &grad);
    const auto sizes = net.layer_sizes();
    const auto num = oracle::numeric_gradient(
        [&](const std::vector<double>& p) { return oracle::mlp_loss(p, sizes, x, y, rows); }, net.parameters(), 1e-6);
    for (std::size_t k = 0; k < grad.size(); ++k) {
      const double scale = std::max({std::abs(grad[k]), std::abs(num[k]), 1e-3});
      worst = std::max(worst, std::abs(grad[k] - num[k]) / scale);
    }
  }
  return {worst < 1e-4, "max relative error " + fmt("%.3g", worst)};
}

// ------------------------------------------------------------------- GBM

Outcome gbm_descent() {
  const auto d = testing_support::blobs(505, 100, 3, 3.0);
  std::vector<double> trace;
  train_gbm(d, {100, 0.1, 3, 1.0}, 1, &trace);
  std::size_t rises = 0;
  for (std::size_t i = 1; i < trace.size(); ++i) rises += trace[i] > trace[i - 1] ? 1 : 0;
  return {trace.size() == 101 && rises == 0,
          std::to_string(rises) + " increases over " + std::to_string(trace.size() - 1) + " rounds, loss " +
              fmt("%.4f", trace.front()) + " -> " + fmt("%.4f", trace.back())};
}

// ----------------------------------------------------------- classifiers

Hyperparams sanity_params(ModelKind kind) {
  switch (kind) {
    case ModelKind::tree: return TreeParams{4, 5};
    case ModelKind::gbm: return GbmParams{50, 0.1, 2, 1.0};
    case ModelKind::knn: return KnnParams{15, KnnMetric::euclidean, KnnWeighting::uniform};
    case ModelKind::mlp: {
      MlpParams p;
      p.hidden = {32};
      p.learning_rate = 0.01;
      p.epochs = 60;
      p.batch = 16;
      return p;
    }
    case ModelKind::svm: return SvmParams{1.0, 0.0, 1e-3, 10'000'000};
  }
  return TreeParams{};
}

Outcome classifier_sanity() {
  std::string detail;
  bool pass = true;
  for (auto kind : kAllModelKinds) {
    double total = 0.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto train = testing_support::blobs(600 + seed, 100, 3, 6.0);
      const auto test = testing_support::blobs(700 + seed, 50, 3, 6.0);
      const auto m = histofuse::train(train, sanity_params(kind), seed);
      total += testing_support::train_test_accuracy(m, test);
    }
    const double mean = total / 5.0;
    pass = pass && mean >= 0.99;
    detail += std::string(detail.empty() ? "" : ", ") + std::string(model_kind_name(kind)) + " " +
              format_percent(mean) + "%";
  }
  return {pass, detail};
}

// -------------------------------------------------------------------- BO

Outcome bo_efficacy() {
  HyperparamSpace space;
  space.dims = {{"u", DimType::real, 0, 1, {}}, {"v", DimType::real, 0, 1, {}}};
  const Objective f = [](const ParamMap& p) {
    return -oracle::branin_unit(std::get<double>(p.at("u")), std::get<double>(p.at("v")));
  };
  std::vector<double> bo, rs;
  bool monotone = true;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    BoSettings s;
    s.budget = 30;
    s.seed = seed;
    const auto h = bayes_optimize(space, f, s);
    const auto trace = h.incumbent_trace();
    for (std::size_t i = 1; i < trace.size(); ++i) monotone = monotone && trace[i] >= trace[i - 1];
    bo.push_back(h.best_value());
    rs.push_back(random_search(space, f, 30, seed).best_value());
  }
  const double mb = median(bo), mr = median(rs);
  return {mb > mr && monotone, "median best Branin: BO " + fmt("%.4f", -mb) + " vs random " + fmt("%.4f", -mr) +
                                   " (optimum " + fmt("%.4f", oracle::kBraninMin) + ")" +
                                   (monotone ? "" : ", incumbent not monotone")};
}

// ------------------------------------------------------------- toy corpus

struct ToyWorld {
  TempDir dir{"hf_accept"};
  ExperimentConfig base;

  ToyWorld() {
    ToyCorpusSpec spec;
    spec.per_class = 40;
    spec.side = 299;
    write_toy_corpus(dir / "images", spec);
    FixtureModelSpec fx;
    fx.feature_dim = 8;
    fx.input_side = 299;
    write_fixture_model(dir / "fixture.onnx", fx);
    base.dataset_root = dir / "images";
    base.model_path = dir / "fixture.onnx";
    base.tune.budget = 8;
    base.tune.n_init = 4;
  }

  ExperimentConfig config(const std::string& name, std::uint64_t rep) const {
    auto cfg = base;
    cfg.output_dir = dir / name;
    cfg.seed = base.seed + rep;
    cfg.noise_seed = base.noise_seed + rep;
    cfg.tune.seed = base.tune.seed + rep;
    return cfg;
  }
};

struct ToyRun {
  ExperimentResult result;
  std::vector<SweepRow> sweep;
};

ToyRun run_toy(const ExperimentConfig& cfg) {
  ToyRun r;
  r.result = run_experiment(cfg);
  r.sweep = noise_sweep(cfg, r.result, cfg.snr_levels);
  return r;
}

Outcome determinism(const ToyWorld& world, ToyRun& first) {
  const auto a = world.config("det_a", 0);
  auto b = world.config("det_b", 0);
  b.threads = 2;
  first = run_toy(a);
  run_toy(b);
  const bool report = slurp(a.output_dir / "report.csv") == slurp(b.output_dir / "report.csv");
  const bool sweep = slurp(a.output_dir / "sweep.csv") == slurp(b.output_dir / "sweep.csv");
  return {report && sweep, std::string("report.csv ") + (report ? "identical" : "differs") + ", sweep.csv " +
                               (sweep ? "identical" : "differs")};
}

Outcome table3_shape(const ToyWorld& world, const ToyRun& first) {
  std::map<std::pair<std::string, std::string>, int> holds;
  auto tally = [&](const std::vector<SweepRow>& rows) {
    std::map<std::pair<std::string, std::string>, std::map<double, double>> acc;
    for (const auto& r : rows) {
      if (r.method == kBaselineMethod) continue;
      acc[{r.method, r.model}][r.snr_db] = r.accuracy;
    }
    for (const auto& [key, by_level] : acc) holds[key] += by_level.at(40.0) >= by_level.at(30.0) ? 1 : 0;
  };
  tally(first.sweep);
  for (std::uint64_t rep = 1; rep < 5; ++rep) tally(run_toy(world.config("rep" + std::to_string(rep), rep)).sweep);
  bool pass = holds.size() == 10;
  std::string detail;
  for (const auto& [key, n] : holds) {
    pass = pass && n >= 4;
    detail += std::string(detail.empty() ? "" : " ") + key.first + "/" + key.second + "=" + std::to_string(n);
  }
  return {pass, "40 dB >= 30 dB in reps: " + detail};
}

Outcome fusion_contract(const ToyWorld& world) {
  auto cfg = world.config("fusion", 0);
  cfg.feature_kinds = {FeatureKind::hog, FeatureKind::deep, FeatureKind::fused};
  const auto bundle = extract_features(cfg);
  const auto& sets = bundle.sets;
  bool exact = true;
  std::size_t dim = 0;
  for (auto part : {&FeatureSplit::train, &FeatureSplit::val, &FeatureSplit::test}) {
    const auto& h = sets.at(FeatureKind::hog).*part;
    const auto& d = sets.at(FeatureKind::deep).*part;
    const auto& f = sets.at(FeatureKind::fused).*part;
    dim = f.dim();
    exact = exact && f.rows() == h.rows() && f.rows() == d.rows() && f.ids() == h.ids() && f.ids() == d.ids() &&
            f.dim() == h.dim() + d.dim();
    for (std::size_t i = 0; exact && i < f.rows(); ++i) {
      for (std::size_t j = 0; j < h.dim(); ++j) exact = exact && f.at(i, j) == h.at(i, j);
      for (std::size_t j = 0; j < d.dim(); ++j) exact = exact && f.at(i, h.dim() + j) == d.at(i, j);
    }
  }
  return {exact && dim == 36 + 8, "fused dim " + std::to_string(dim) + (exact ? ", sub-blocks exact" : ", sub-blocks differ")};
}

}  // namespace

int main() {
  set_log_level(LogLevel::warning);
  int failures = 0;
  auto report = [&](const char* name, double limit_s, const std::function<Outcome()>& check) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (limit_s > 0 && secs >= limit_s) {
      o.pass = false;
      o.detail += ", over the " + fmt("%.0f", limit_s) + " s limit";
    }
    failures += o.pass ? 0 : 1;
    std::printf("%s  %-22s %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str(), secs);
    std::fflush(stdout);
  };

  report("snr-exactness", 5, snr_exactness);
  report("hog-oracle", 0, hog_oracle);
  report("auc-oracle", 0, auc_oracle);
  report("mlp-gradients", 0, mlp_gradients);
  report("gbm-descent", 0, gbm_descent);
  report("classifier-sanity", 60, classifier_sanity);
  report("bo-efficacy", 60, bo_efficacy);

  ToyWorld world;
  ToyRun first;
  report("e2e-determinism", 120, [&] { return determinism(world, first); });
  report("noise-degradation", 0, [&] { return table3_shape(world, first); });
  report("fusion-contract", 0, [&] { return fusion_contract(world); });

  std::printf("%s: %d criteria failed\n", failures == 0 ? "ALL PASS" : "FAILURES", failures);
  return failures == 0 ? 0 : 1;
}
