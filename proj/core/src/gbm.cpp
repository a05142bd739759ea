#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "histofuse/error.hpp"
#include "histofuse/log.hpp"
#include "histofuse/rng.hpp"
#include "model_impl.hpp"

namespace histofuse {

namespace {

// Softmax cross-entropy of raw scores f (rows x k), averaged over rows.
double log_loss(const std::vector<double>& f, const std::vector<int>& y, std::size_t k) {
  const std::size_t rows = y.size();
  double total = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    const double* fi = f.data() + i * k;
    const double m = *std::max_element(fi, fi + k);
    double s = 0.0;
    for (std::size_t c = 0; c < k; ++c) s += std::exp(fi[c] - m);
    total += m + std::log(s) - fi[static_cast<std::size_t>(y[i])];
  }
  return total / static_cast<double>(rows);
}

void softmax_rows(const std::vector<double>& f, std::size_t k, std::vector<double>& p) {
  p.resize(f.size());
  for (std::size_t i = 0; i < f.size() / k; ++i) {
    const double* fi = f.data() + i * k;
    double* pi = p.data() + i * k;
    const double m = *std::max_element(fi, fi + k);
    double s = 0.0;
    for (std::size_t c = 0; c < k; ++c) s += (pi[c] = std::exp(fi[c] - m));
    for (std::size_t c = 0; c < k; ++c) pi[c] /= s;
  }
}

void scale_leaves(DecisionTree& t, double factor) {
  for (auto& n : t.nodes) {
    if (n.is_leaf()) n.value[0] *= factor;
  }
}

}  // namespace

namespace detail {

void GbmModel::scores(const double* x, std::size_t rows, std::size_t dim, int n_classes,
                      double* out) const {
  const auto k = static_cast<std::size_t>(n_classes);
  std::vector<double> f(k);
  for (std::size_t i = 0; i < rows; ++i) {
    const double* xi = x + i * dim;
    std::copy(init.begin(), init.end(), f.begin());
    for (std::size_t t = 0; t < trees.size(); ++t) f[t % k] += trees[t].leaf_for(xi).value[0];
    const double m = *std::max_element(f.begin(), f.end());
    double s = 0.0;
    for (std::size_t c = 0; c < k; ++c) s += (out[i * k + c] = std::exp(f[c] - m));
    for (std::size_t c = 0; c < k; ++c) out[i * k + c] /= s;
  }
}

void GbmModel::write(ByteWriter& w) const {
  w.f64s(init);
  w.u32(static_cast<std::uint32_t>(trees.size()));
  for (const auto& t : trees) write_tree(w, t);
}

std::shared_ptr<GbmModel> GbmModel::read(ByteReader& r, int n_classes, std::size_t dim) {
  auto m = std::make_shared<GbmModel>();
  m->init = r.f64s();
  if (m->init.size() != static_cast<std::size_t>(n_classes)) throw InputError("gbm: bad init block");
  const auto count = r.u32();
  if (count % static_cast<std::uint32_t>(n_classes) != 0) throw InputError("gbm: bad tree count");
  for (std::uint32_t i = 0; i < count; ++i) {
    m->trees.push_back(read_tree(r, dim));
    for (const auto& n : m->trees.back().nodes) {
      if (n.is_leaf() && n.value.size() != 1) throw InputError("gbm: bad leaf value");
    }
  }
  return m;
}

}  // namespace detail

TrainedModel train_gbm(const TrainingSet& data, const GbmParams& hp, std::uint64_t seed,
                       std::vector<double>* loss_trace) {
  if (hp.rounds <= 0) throw InputError("gbm: rounds must be positive");
  if (hp.max_depth < 0) throw InputError("gbm: max_depth must be >= 0");
  if (!(hp.learning_rate > 0.0)) throw InputError("gbm: learning_rate must be positive");
  if (!(hp.subsample > 0.0 && hp.subsample <= 1.0)) throw InputError("gbm: subsample must be in (0, 1]");
  if (data.rows < 1) throw InputError("gbm: training set is empty");
  const auto k = static_cast<std::size_t>(data.n_classes);
  const std::size_t n = data.rows;
  const double kd = static_cast<double>(k);

  auto model = std::make_shared<detail::GbmModel>();
  std::vector<double> counts(k, 0.0);
  for (int c : data.y) counts[static_cast<std::size_t>(c)] += 1.0;
  for (std::size_t c = 0; c < k; ++c) {
    // Absent classes get a tiny prior instead of log(0).
    model->init.push_back(std::log(std::max(counts[c] / static_cast<double>(n), 1e-12)));
  }

  std::vector<double> f(n * k);
  for (std::size_t i = 0; i < n; ++i) std::copy(model->init.begin(), model->init.end(), f.begin() + static_cast<std::ptrdiff_t>(i * k));
  double loss = log_loss(f, data.y, k);
  if (loss_trace) loss_trace->assign(1, loss);

  const detail::SortedColumns cols(data);
  std::vector<double> p;
  std::vector<double> residual(n);
  std::vector<char> in_sample(n, 1);
  const auto sample_size = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(hp.subsample * static_cast<double>(n))));
  std::vector<std::uint32_t> perm(n);

  for (int round = 0; round < hp.rounds; ++round) {
    softmax_rows(f, k, p);
    if (sample_size < n) {
      std::iota(perm.begin(), perm.end(), 0U);
      Rng rng(derive_seed(seed, static_cast<std::uint64_t>(round)));
      for (std::size_t i = 0; i < sample_size; ++i) {
        std::swap(perm[i], perm[i + rng.below(n - i)]);
      }
      std::fill(in_sample.begin(), in_sample.end(), 0);
      for (std::size_t i = 0; i < sample_size; ++i) in_sample[perm[i]] = 1;
    }
    std::vector<DecisionTree> round_trees;
    for (std::size_t c = 0; c < k; ++c) {
      for (std::size_t i = 0; i < n; ++i) {
        residual[i] = (data.y[i] == static_cast<int>(c) ? 1.0 : 0.0) - p[i * k + c];
      }
      auto newton = [&](std::span<const std::uint32_t> rows) {
        double num = 0.0;
        double den = 0.0;
        for (auto r : rows) {
          num += residual[r];
          den += std::abs(residual[r]) * (1.0 - std::abs(residual[r]));
        }
        if (den < 1e-150) return 0.0;
        return (kd - 1.0) / kd * num / den;
      };
      round_trees.push_back(detail::grow_regression_tree(data, cols, residual, in_sample,
                                                         hp.max_depth, 1, newton));
    }
    // Newton steps are taken at learning_rate; if that would raise the
    // training loss the step is halved until it does not.
    std::vector<std::vector<double>> delta(k, std::vector<double>(n));
    for (std::size_t c = 0; c < k; ++c) {
      for (std::size_t i = 0; i < n; ++i) delta[c][i] = round_trees[c].leaf_for(data.row(i)).value[0];
    }
    double step = hp.learning_rate;
    std::vector<double> trial(n * k);
    double trial_loss = loss;
    for (int halvings = 0;; ++halvings) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < k; ++c) trial[i * k + c] = f[i * k + c] + step * delta[c][i];
      }
      trial_loss = log_loss(trial, data.y, k);
      if (trial_loss <= loss) break;
      if (halvings == 30) {
        step = 0.0;
        trial = f;
        trial_loss = loss;
        break;
      }
      step *= 0.5;
    }
    if (!std::isfinite(trial_loss)) {
      throw NumericError("gbm: training loss is not finite after round " + std::to_string(round + 1));
    }
    f.swap(trial);
    loss = trial_loss;
    if (loss_trace) loss_trace->push_back(loss);
    for (auto& t : round_trees) {
      scale_leaves(t, step);
      model->trees.push_back(std::move(t));
    }
  }
  return {model, hp, data.n_classes, data.dim};
}

}  // namespace histofuse
