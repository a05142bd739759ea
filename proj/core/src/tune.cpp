#include "histofuse/tune.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <nlohmann/json.hpp>
#include <numeric>
#include <sstream>

#include "binary_io.hpp"
#include "histofuse/error.hpp"
#include "histofuse/log.hpp"
#include "histofuse/metrics.hpp"
#include "histofuse/rng.hpp"

namespace histofuse {

namespace {

using nlohmann::json;

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

SearchDim real_dim(std::string name, double lo, double hi) {
  return {std::move(name), DimType::real, lo, hi, {}};
}
SearchDim log_dim(std::string name, double lo, double hi) {
  return {std::move(name), DimType::log_real, lo, hi, {}};
}
SearchDim int_dim(std::string name, double lo, double hi) {
  return {std::move(name), DimType::integer, lo, hi, {}};
}
SearchDim cat_dim(std::string name, std::vector<std::string> cats) {
  return {std::move(name), DimType::categorical, 0.0, 0.0, std::move(cats)};
}

// Category labels that read as numbers decode to numbers.
ParamValue category_value(const std::string& text) {
  try {
    std::size_t used = 0;
    const long long i = std::stoll(text, &used);
    if (used == text.size()) return i;
  } catch (const std::exception&) {
  }
  try {
    std::size_t used = 0;
    const double d = std::stod(text, &used);
    if (used == text.size()) return d;
  } catch (const std::exception&) {
  }
  return text;
}

bool same_value(const ParamValue& a, const ParamValue& b) {
  auto num = [](const ParamValue& v, double& out) {
    if (const auto* i = std::get_if<long long>(&v)) out = static_cast<double>(*i);
    else if (const auto* d = std::get_if<double>(&v)) out = *d;
    else return false;
    return true;
  };
  double x = 0.0;
  double y = 0.0;
  if (num(a, x) && num(b, y)) return x == y;
  return a == b;
}

double as_number(const ParamValue& v, const std::string& name) {
  if (const auto* i = std::get_if<long long>(&v)) return static_cast<double>(*i);
  if (const auto* d = std::get_if<double>(&v)) return *d;
  throw InputError("parameter '" + name + "' must be numeric");
}

std::vector<std::uint64_t> first_primes(std::size_t count) {
  std::vector<std::uint64_t> primes;
  for (std::uint64_t c = 2; primes.size() < count; ++c) {
    if (std::all_of(primes.begin(), primes.end(), [c](std::uint64_t p) { return c % p != 0; })) {
      primes.push_back(c);
    }
  }
  return primes;
}

std::vector<double> random_point(Rng& rng, std::size_t dim) {
  std::vector<double> p(dim);
  for (auto& v : p) v = rng.uniform();
  return p;
}

void finish(TrialHistory& h) {
  h.incumbent = 0;
  for (std::size_t i = 1; i < h.trials.size(); ++i) {
    if (h.trials[i].value > h.trials[h.incumbent].value) h.incumbent = i;
  }
}

Trial evaluate_trial(const HyperparamSpace& space, const Objective& objective,
                     std::vector<double> point) {
  Trial t;
  t.point = std::move(point);
  t.params = decode(space, t.point);
  const auto start = std::chrono::steady_clock::now();
  try {
    t.value = objective(t.params);
    if (std::isnan(t.value)) throw NumericError("objective returned NaN");
  } catch (const std::exception& e) {
    t.failed = true;
    t.error = e.what();
    t.value = kNegInf;
    log_warning(std::string("trial failed: ") + e.what());
  }
  t.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return t;
}

bool already_tried(const TrialHistory& h, const ParamMap& params) {
  return std::any_of(h.trials.begin(), h.trials.end(),
                     [&](const Trial& t) { return t.params == params; });
}

// EI of a unit-cube point under the model, in standardised units.
double acquisition(const GpModel& gp, std::span<const double> x, double best) {
  const auto p = gp.predict_standardized(x);
  return expected_improvement(p.mean, p.sigma, best);
}

std::vector<double> propose(const HyperparamSpace& space, const TrialHistory& h,
                            const BoSettings& s, std::size_t iteration) {
  const std::size_t dim = space.size();
  Rng rng(derive_seed(s.seed, 1000 + iteration));
  std::vector<std::vector<double>> pts;
  std::vector<double> vals;
  for (const auto& t : h.trials) {
    if (t.failed) continue;
    pts.push_back(t.point);
    vals.push_back(t.value);
  }
  if (pts.size() < 2) return random_point(rng, dim);

  const GpModel gp = GpModel::fit(pts, vals, s.gp);
  const double best = gp.best_standardized();
  std::vector<std::pair<double, std::vector<double>>> cands;
  cands.reserve(s.candidates);
  for (std::size_t c = 0; c < s.candidates; ++c) {
    auto x = random_point(rng, dim);
    const double ei = acquisition(gp, x, best);
    cands.emplace_back(ei, std::move(x));
  }
  // Highest EI first; stable so that equal scores keep draw order.
  std::stable_sort(cands.begin(), cands.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });

  // Gaussian perturbations with a shrinking radius around the best candidate.
  auto refined = cands.front();
  for (std::size_t step = 0; step < s.refine_steps; ++step) {
    const double radius = 0.1 * (1.0 - static_cast<double>(step) / static_cast<double>(s.refine_steps)) + 0.005;
    auto x = refined.second;
    for (auto& v : x) v = std::clamp(v + radius * rng.normal(), 0.0, 1.0);
    const double ei = acquisition(gp, x, best);
    if (ei > refined.first) refined = {ei, std::move(x)};
  }
  if (!already_tried(h, decode(space, refined.second))) return refined.second;
  for (const auto& c : cands) {
    if (!already_tried(h, decode(space, c.second))) return c.second;
  }
  return refined.second;
}

}  // namespace

void HyperparamSpace::validate() const {
  if (dims.empty()) throw InputError("search space has no dimensions");
  for (std::size_t i = 0; i < dims.size(); ++i) {
    const auto& d = dims[i];
    for (std::size_t j = 0; j < i; ++j) {
      if (dims[j].name == d.name) throw InputError("search dimension '" + d.name + "' appears twice");
    }
    if (d.type == DimType::categorical) {
      if (d.categories.empty()) throw InputError("categorical dimension '" + d.name + "' has no categories");
    } else if (!(d.low < d.high)) {
      throw InputError("dimension '" + d.name + "' needs low < high");
    } else if (d.type == DimType::log_real && !(d.low > 0.0)) {
      throw InputError("log-real dimension '" + d.name + "' needs a positive lower bound");
    }
  }
}

HyperparamSpace default_space(ModelKind kind) {
  HyperparamSpace s;
  switch (kind) {
    case ModelKind::tree:
      s.dims = {int_dim("max_depth", 1, 20), int_dim("min_leaf", 1, 20)};
      break;
    case ModelKind::gbm:
      s.dims = {int_dim("rounds", 10, 200), log_dim("learning_rate", 0.01, 0.5),
                int_dim("max_depth", 1, 6), real_dim("subsample", 0.5, 1.0)};
      break;
    case ModelKind::knn:
      s.dims = {int_dim("k", 1, 30), cat_dim("metric", {"euclidean", "manhattan", "cosine"}),
                cat_dim("weighting", {"uniform", "inverse-distance"})};
      break;
    case ModelKind::mlp:
      s.dims = {int_dim("layers", 1, 3),          int_dim("width", 16, 256),
                log_dim("learning_rate", 1e-4, 1e-1), cat_dim("momentum", {"0.9"}),
                int_dim("epochs", 20, 200),        cat_dim("batch", {"16", "32", "64"}),
                cat_dim("lr_decay", {"0.1"})};
      break;
    case ModelKind::svm:
      s.dims = {log_dim("C", 1e-2, 1e3), log_dim("gamma", 1e-4, 1e1),
                cat_dim("tolerance", {"0.001"}), cat_dim("max_iter", {"10000000"})};
      break;
  }
  return s;
}

ParamMap decode(const HyperparamSpace& space, std::span<const double> point) {
  if (point.size() != space.size()) throw InputError("point dimension differs from the search space");
  ParamMap out;
  for (std::size_t i = 0; i < space.size(); ++i) {
    const auto& d = space.dims[i];
    double p = point[i];
    if (!(p >= 0.0 && p <= 1.0)) {
      log_warning("search point component " + std::to_string(p) + " for '" + d.name + "' clamped to [0, 1]");
      p = std::isnan(p) ? 0.0 : std::clamp(p, 0.0, 1.0);
    }
    switch (d.type) {
      case DimType::real:
        out[d.name] = d.low + p * (d.high - d.low);
        break;
      case DimType::log_real: {
        const double lo = std::log(d.low);
        out[d.name] = std::exp(lo + p * (std::log(d.high) - lo));
        break;
      }
      case DimType::integer: {
        const double v = std::floor(d.low + p * (d.high - d.low) + 0.5);
        out[d.name] = static_cast<long long>(std::clamp(v, d.low, d.high));
        break;
      }
      case DimType::categorical: {
        const auto n = d.categories.size();
        const auto idx = std::min(static_cast<std::size_t>(std::floor(p * static_cast<double>(n))), n - 1);
        out[d.name] = category_value(d.categories[idx]);
        break;
      }
    }
  }
  return out;
}

std::vector<double> encode(const HyperparamSpace& space, const ParamMap& params) {
  std::vector<double> out;
  for (const auto& d : space.dims) {
    auto it = params.find(d.name);
    if (it == params.end()) throw InputError("parameter '" + d.name + "' is missing");
    switch (d.type) {
      case DimType::real:
        out.push_back((as_number(it->second, d.name) - d.low) / (d.high - d.low));
        break;
      case DimType::log_real: {
        const double lo = std::log(d.low);
        out.push_back((std::log(as_number(it->second, d.name)) - lo) / (std::log(d.high) - lo));
        break;
      }
      case DimType::integer:
        out.push_back((as_number(it->second, d.name) - d.low) / (d.high - d.low));
        break;
      case DimType::categorical: {
        std::size_t idx = d.categories.size();
        for (std::size_t c = 0; c < d.categories.size(); ++c) {
          if (same_value(category_value(d.categories[c]), it->second)) {
            idx = c;
            break;
          }
        }
        if (idx == d.categories.size()) throw InputError("value of '" + d.name + "' is not a listed category");
        out.push_back((static_cast<double>(idx) + 0.5) / static_cast<double>(d.categories.size()));
        break;
      }
    }
    out.back() = std::clamp(out.back(), 0.0, 1.0);
  }
  return out;
}

double TrialHistory::best_value() const {
  if (trials.empty()) throw InputError("empty trial history");
  return trials[incumbent].value;
}

std::vector<double> TrialHistory::incumbent_trace() const {
  std::vector<double> out;
  double best = kNegInf;
  for (const auto& t : trials) {
    best = std::max(best, t.value);
    out.push_back(best);
  }
  return out;
}

std::vector<std::vector<double>> scrambled_halton(std::size_t count, std::size_t dim,
                                                  std::uint64_t seed) {
  const auto primes = first_primes(dim);
  // One digit permutation per dimension; 0 stays fixed so points lie in [0, 1).
  std::vector<std::vector<std::uint64_t>> perms(dim);
  for (std::size_t d = 0; d < dim; ++d) {
    const auto b = primes[d];
    perms[d].resize(b);
    std::iota(perms[d].begin(), perms[d].end(), 0U);
    Rng rng(derive_seed(seed, d));
    for (std::uint64_t i = b - 1; i > 1; --i) std::swap(perms[d][i], perms[d][1 + rng.below(i)]);
  }
  std::vector<std::vector<double>> out(count, std::vector<double>(dim));
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t d = 0; d < dim; ++d) {
      const auto b = primes[d];
      std::uint64_t k = i + 1;
      double f = 1.0 / static_cast<double>(b);
      double v = 0.0;
      while (k > 0) {
        v += f * static_cast<double>(perms[d][k % b]);
        k /= b;
        f /= static_cast<double>(b);
      }
      out[i][d] = v;
    }
  }
  return out;
}

TrialHistory bayes_optimize(const HyperparamSpace& space, const Objective& objective,
                            const BoSettings& settings) {
  space.validate();
  if (settings.n_init == 0) throw InputError("n_init must be positive");
  if (settings.budget < settings.n_init) {
    throw InputError("budget (" + std::to_string(settings.budget) + ") is smaller than n_init (" +
                     std::to_string(settings.n_init) + ")");
  }
  TrialHistory h;
  h.settings = settings;
  for (auto& p : scrambled_halton(settings.n_init, space.size(), settings.seed)) {
    h.trials.push_back(evaluate_trial(space, objective, std::move(p)));
  }
  for (std::size_t it = settings.n_init; it < settings.budget; ++it) {
    h.trials.push_back(evaluate_trial(space, objective, propose(space, h, settings, it)));
  }
  if (std::all_of(h.trials.begin(), h.trials.end(), [](const Trial& t) { return t.failed; })) {
    throw Error("every tuning trial failed; first error: " + h.trials.front().error);
  }
  finish(h);
  return h;
}

TrialHistory random_search(const HyperparamSpace& space, const Objective& objective,
                           std::size_t budget, std::uint64_t seed) {
  space.validate();
  if (budget == 0) throw InputError("budget must be positive");
  TrialHistory h;
  h.settings.budget = budget;
  h.settings.n_init = budget;
  h.settings.seed = seed;
  Rng rng(derive_seed(seed, 0x52414E44));
  for (std::size_t i = 0; i < budget; ++i) {
    h.trials.push_back(evaluate_trial(space, objective, random_point(rng, space.size())));
  }
  if (std::all_of(h.trials.begin(), h.trials.end(), [](const Trial& t) { return t.failed; })) {
    throw Error("every search trial failed; first error: " + h.trials.front().error);
  }
  finish(h);
  return h;
}

TuneResult tune(ModelKind kind, const HyperparamSpace& space, const FeatureMatrix& train,
                const FeatureMatrix& val, const BoSettings& settings, TuneObjective objective,
                int n_classes) {
  if (val.empty()) throw InputError("tune: validation set is empty");
  if (train.dim() != val.dim()) throw InputError("tune: train and validation dimensions differ");
  const TrainingSet data = make_training_set(train, n_classes);
  const auto v = val.values();
  const std::vector<double> vx(v.begin(), v.end());
  const std::vector<int>& vy = val.labels();
  Objective f = [&](const ParamMap& params) {
    const Hyperparams hp = hyperparams_from_map(kind, params);
    const TrainedModel m = histofuse::train(data, hp, settings.seed);
    const ScoreMatrix s = m.predict_scores(vx, val.rows());
    if (objective == TuneObjective::accuracy) {
      std::vector<int> pred(s.rows);
      for (std::size_t i = 0; i < s.rows; ++i) pred[i] = argmax(s.row(i));
      return accuracy(pred, vy);
    }
    // Margins (svm) go through a softmax so every kind yields probabilities.
    double loss = 0.0;
    for (std::size_t i = 0; i < s.rows; ++i) {
      const auto row = s.row(i);
      const double mx = *std::max_element(row.begin(), row.end());
      double z = 0.0;
      for (double x : row) z += std::exp(x - mx);
      const double logp = m.probabilistic()
                              ? std::log(std::max(row[static_cast<std::size_t>(vy[i])], 1e-15))
                              : row[static_cast<std::size_t>(vy[i])] - mx - std::log(z);
      loss -= logp;
    }
    return -loss / static_cast<double>(s.rows);
  };
  TuneResult r{default_hyperparams(kind), bayes_optimize(space, f, settings)};
  r.best = hyperparams_from_map(kind, r.history.trials[r.history.incumbent].params);
  return r;
}

std::string history_to_jsonl(const TrialHistory& history, bool include_timing) {
  const auto& s = history.settings;
  json head;
  head["type"] = "settings";
  head["budget"] = s.budget;
  head["n_init"] = s.n_init;
  head["candidates"] = s.candidates;
  head["refine_steps"] = s.refine_steps;
  head["seed"] = s.seed;
  head["gp"] = {{"lengthscale_grid", s.gp.lengthscale_grid},
                {"noise_grid", s.gp.noise_grid},
                {"refinement_passes", s.gp.refinement_passes}};
  head["incumbent"] = history.incumbent;
  std::string out = head.dump() + "\n";
  for (std::size_t i = 0; i < history.trials.size(); ++i) {
    const auto& t = history.trials[i];
    json j;
    j["type"] = "trial";
    j["index"] = i;
    j["point"] = t.point;
    json params = json::object();
    for (const auto& [name, value] : t.params) {
      params[name] = std::visit([](const auto& x) { return json(x); }, value);
    }
    j["params"] = params;
    j["value"] = t.failed ? json(nullptr) : json(t.value);
    j["failed"] = t.failed;
    if (t.failed) j["error"] = t.error;
    if (include_timing) j["wall_ms"] = t.wall_ms;
    out += j.dump() + "\n";
  }
  return out;
}

void write_history(const std::filesystem::path& path, const TrialHistory& history,
                   bool include_timing) {
  detail::write_text_file(path.string(), history_to_jsonl(history, include_timing));
}

TrialHistory read_history(const std::filesystem::path& path) {
  std::istringstream in(detail::read_text_file(path.string()));
  TrialHistory h;
  std::string line;
  bool has_settings = false;
  try {
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const json j = json::parse(line);
      const std::string type = j.value("type", std::string{});
      if (type == "settings") {
        auto& s = h.settings;
        s.budget = j.at("budget").get<std::size_t>();
        s.n_init = j.at("n_init").get<std::size_t>();
        s.candidates = j.at("candidates").get<std::size_t>();
        s.refine_steps = j.at("refine_steps").get<std::size_t>();
        s.seed = j.at("seed").get<std::uint64_t>();
        s.gp.lengthscale_grid = j.at("gp").at("lengthscale_grid").get<std::vector<double>>();
        s.gp.noise_grid = j.at("gp").at("noise_grid").get<std::vector<double>>();
        s.gp.refinement_passes = j.at("gp").at("refinement_passes").get<int>();
        has_settings = true;
      } else if (type == "trial") {
        Trial t;
        t.point = j.at("point").get<std::vector<double>>();
        for (const auto& [name, value] : j.at("params").items()) {
          if (value.is_number_integer()) t.params[name] = value.get<long long>();
          else if (value.is_number()) t.params[name] = value.get<double>();
          else t.params[name] = value.get<std::string>();
        }
        t.failed = j.value("failed", false);
        t.value = j.at("value").is_null() ? kNegInf : j.at("value").get<double>();
        t.error = j.value("error", std::string{});
        t.wall_ms = j.value("wall_ms", 0.0);
        h.trials.push_back(std::move(t));
      } else {
        throw InputError("unknown history record type '" + type + "'");
      }
    }
  } catch (const json::exception& e) {
    throw InputError(path.string() + ": " + e.what());
  }
  if (!has_settings) throw InputError(path.string() + ": missing settings record");
  if (!h.trials.empty()) finish(h);
  return h;
}

}  // namespace histofuse
