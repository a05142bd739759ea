#include "histofuse/svm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <list>
#include <sstream>

#include "histofuse/error.hpp"
#include "model_impl.hpp"

namespace histofuse {

namespace {

constexpr double kTau = 1e-12;

// LRU cache of kernel rows; with capacity 0 it keeps only the two rows the
// current SMO step needs.
class RowCache {
 public:
  RowCache(std::size_t n, const KernelRowFn& fn, std::size_t capacity)
      : n_(n), fn_(fn), capacity_(std::max<std::size_t>(capacity, 2)),
        slot_of_(n, -1), where_(n) {}

  std::span<const double> row(std::size_t i) {
    if (slot_of_[i] >= 0) {
      lru_.splice(lru_.begin(), lru_, where_[i]);
      return {storage_.data() + static_cast<std::size_t>(slot_of_[i]) * n_, n_};
    }
    std::size_t slot = 0;
    if (owner_.size() < capacity_) {
      slot = owner_.size();
      owner_.push_back(i);
      storage_.resize(owner_.size() * n_);
    } else {
      const std::size_t victim = lru_.back();
      lru_.pop_back();
      slot = static_cast<std::size_t>(slot_of_[victim]);
      slot_of_[victim] = -1;
      owner_[slot] = i;
    }
    slot_of_[i] = static_cast<long long>(slot);
    lru_.push_front(i);
    where_[i] = lru_.begin();
    std::span<double> out(storage_.data() + slot * n_, n_);
    fn_(i, out);
    return out;
  }

 private:
  std::size_t n_;
  const KernelRowFn& fn_;
  std::size_t capacity_;
  std::vector<double> storage_;
  std::vector<std::size_t> owner_;
  std::vector<long long> slot_of_;
  std::list<std::size_t> lru_;
  std::vector<std::list<std::size_t>::iterator> where_;
};

}  // namespace

BinarySvmResult solve_binary_svm(std::size_t n, const KernelRowFn& kernel_row,
                                 std::span<const int> labels, double C, double tolerance,
                                 long long max_iter, std::size_t cache_rows,
                                 std::span<const double> diagonal) {
  if (labels.size() != n) throw InputError("svm: label count differs from n");
  if (!(C > 0.0)) throw InputError("svm: C must be positive");
  std::vector<double> y(n);
  for (std::size_t t = 0; t < n; ++t) {
    if (labels[t] != 1 && labels[t] != -1) throw InputError("svm: labels must be +1 or -1");
    y[t] = labels[t];
  }
  RowCache cache(n, kernel_row, cache_rows);
  std::vector<double> diag(diagonal.begin(), diagonal.end());
  if (diag.empty()) {
    diag.resize(n);
    for (std::size_t t = 0; t < n; ++t) diag[t] = cache.row(t)[t];
  } else if (diag.size() != n) {
    throw InputError("svm: diagonal length differs from n");
  }

  BinarySvmResult res;
  res.alpha.assign(n, 0.0);
  auto& a = res.alpha;
  std::vector<double> g(n, -1.0);  // gradient of 0.5 a'Qa - e'a
  // The second row may evict the first from a tiny cache, so copy it.
  std::vector<double> ki;

  for (;;) {
    // Maximal violating pair with second-order choice of j.
    double gmax = -std::numeric_limits<double>::infinity();
    std::ptrdiff_t i = -1;
    for (std::size_t t = 0; t < n; ++t) {
      if (y[t] > 0 ? a[t] < C : a[t] > 0.0) {
        const double v = -y[t] * g[t];
        if (v > gmax) {
          gmax = v;
          i = static_cast<std::ptrdiff_t>(t);
        }
      }
    }
    double gmax2 = -std::numeric_limits<double>::infinity();
    std::ptrdiff_t j = -1;
    if (i >= 0) {
      const auto si = static_cast<std::size_t>(i);
      const auto row = cache.row(si);
      ki.assign(row.begin(), row.end());
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t t = 0; t < n; ++t) {
        if (!(y[t] > 0 ? a[t] > 0.0 : a[t] < C)) continue;
        const double v = y[t] * g[t];
        gmax2 = std::max(gmax2, v);
        const double diff = gmax + v;
        if (diff <= 0.0) continue;
        double quad = diag[si] + diag[t] - 2.0 * ki[t];
        if (quad <= 0.0) quad = kTau;
        const double obj = -(diff * diff) / quad;
        if (obj < best) {
          best = obj;
          j = static_cast<std::ptrdiff_t>(t);
        }
      }
    }
    res.kkt_gap = (i < 0 || !std::isfinite(gmax2)) ? 0.0 : gmax + gmax2;
    if (i < 0 || j < 0 || res.kkt_gap < tolerance) break;
    if (res.iterations >= max_iter) {
      std::ostringstream msg;
      msg << "svm: no convergence after " << res.iterations << " iterations (KKT gap "
          << res.kkt_gap << ", tolerance " << tolerance << ")";
      throw NumericError(msg.str());
    }
    ++res.iterations;

    const auto si = static_cast<std::size_t>(i);
    const auto sj = static_cast<std::size_t>(j);
    const auto kj = cache.row(sj);
    const double old_ai = a[si];
    const double old_aj = a[sj];
    // Q_ij = y_i y_j K_ij
    const double qij = y[si] * y[sj] * ki[sj];
    if (y[si] != y[sj]) {
      double quad = diag[si] + diag[sj] + 2.0 * qij;
      if (quad <= 0.0) quad = kTau;
      const double delta = (-g[si] - g[sj]) / quad;
      const double diff = a[si] - a[sj];
      a[si] += delta;
      a[sj] += delta;
      if (diff > 0.0) {
        if (a[sj] < 0.0) {
          a[sj] = 0.0;
          a[si] = diff;
        }
      } else if (a[si] < 0.0) {
        a[si] = 0.0;
        a[sj] = -diff;
      }
      if (diff > 0.0) {
        if (a[si] > C) {
          a[si] = C;
          a[sj] = C - diff;
        }
      } else if (a[sj] > C) {
        a[sj] = C;
        a[si] = C + diff;
      }
    } else {
      double quad = diag[si] + diag[sj] - 2.0 * qij;
      if (quad <= 0.0) quad = kTau;
      const double delta = (g[si] - g[sj]) / quad;
      const double sum = a[si] + a[sj];
      a[si] -= delta;
      a[sj] += delta;
      if (sum > C) {
        if (a[si] > C) {
          a[si] = C;
          a[sj] = sum - C;
        }
      } else if (a[sj] < 0.0) {
        a[sj] = 0.0;
        a[si] = sum;
      }
      if (sum > C) {
        if (a[sj] > C) {
          a[sj] = C;
          a[si] = sum - C;
        }
      } else if (a[si] < 0.0) {
        a[si] = 0.0;
        a[sj] = sum;
      }
    }
    const double dai = a[si] - old_ai;
    const double daj = a[sj] - old_aj;
    for (std::size_t t = 0; t < n; ++t) {
      g[t] += y[t] * (y[si] * ki[t] * dai + y[sj] * kj[t] * daj);
    }
  }

  double ub = std::numeric_limits<double>::infinity();
  double lb = -std::numeric_limits<double>::infinity();
  double sum_free = 0.0;
  std::size_t n_free = 0;
  for (std::size_t t = 0; t < n; ++t) {
    const double yg = y[t] * g[t];
    if (a[t] >= C) {
      if (y[t] < 0) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else if (a[t] <= 0.0) {
      if (y[t] > 0) ub = std::min(ub, yg);
      else lb = std::max(lb, yg);
    } else {
      ++n_free;
      sum_free += yg;
    }
  }
  double rho = 0.0;
  if (n_free > 0) rho = sum_free / static_cast<double>(n_free);
  else if (std::isinf(ub)) rho = lb;
  else if (std::isinf(lb)) rho = ub;
  else rho = 0.5 * (ub + lb);
  res.bias = -rho;
  return res;
}

namespace {

double rbf(const double* a, const double* b, std::size_t dim, double gamma) {
  double s = 0.0;
  for (std::size_t j = 0; j < dim; ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
  return std::exp(-gamma * s);
}

double effective_gamma(const SvmParams& hp, std::size_t dim) {
  return hp.gamma > 0.0 ? hp.gamma : 1.0 / static_cast<double>(dim);
}

}  // namespace

namespace detail {

void SvmModel::scores(const double* x, std::size_t rows, std::size_t dim, int n_classes,
                      double* out) const {
  const auto k = static_cast<std::size_t>(n_classes);
  std::vector<double> kv(n_sv);
  for (std::size_t q = 0; q < rows; ++q) {
    for (std::size_t s = 0; s < n_sv; ++s) kv[s] = rbf(x + q * dim, sv.data() + s * dim, dim, gamma);
    for (std::size_t c = 0; c < k; ++c) {
      double f = bias[c];
      for (std::size_t s = 0; s < n_sv; ++s) f += coef[c][s] * kv[s];
      out[q * k + c] = f;
    }
  }
}

void SvmModel::write(ByteWriter& w) const {
  w.f64(gamma);
  w.u64(n_sv);
  w.f64s(sv);
  for (std::size_t c = 0; c < coef.size(); ++c) {
    w.f64s(coef[c]);
    w.f64(bias[c]);
  }
}

std::shared_ptr<SvmModel> SvmModel::read(ByteReader& r, int n_classes, std::size_t dim) {
  auto m = std::make_shared<SvmModel>();
  m->gamma = r.f64();
  m->n_sv = r.u64();
  m->sv = r.f64s();
  if (m->sv.size() != m->n_sv * dim) throw InputError("svm: bad support vector block");
  for (int c = 0; c < n_classes; ++c) {
    m->coef.push_back(r.f64s());
    m->bias.push_back(r.f64());
    if (m->coef.back().size() != m->n_sv) throw InputError("svm: bad coefficient block");
  }
  return m;
}

}  // namespace detail

TrainedModel train_svm(const TrainingSet& data, const SvmParams& hp, std::uint64_t seed) {
  (void)seed;  // SMO here is deterministic
  if (data.rows < 2) throw InputError("svm: need at least two training rows");
  if (!(hp.C > 0.0)) throw InputError("svm: C must be positive");
  if (hp.gamma < 0.0) throw InputError("svm: gamma must be >= 0");
  const std::size_t n = data.rows;
  const std::size_t dim = data.dim;
  const double gamma = effective_gamma(hp, dim);

  // Small problems get the whole Gram matrix up front, shared by the
  // per-class problems; larger ones use an LRU row cache of about 256 MiB.
  constexpr std::size_t kBudget = std::size_t{256} << 20;
  const bool full = n * n * sizeof(double) <= 2 * kBudget;
  std::vector<double> gram;
  if (full) {
    gram.resize(n * n);
    for (std::size_t i = 0; i < n; ++i) {
      gram[i * n + i] = 1.0;
      for (std::size_t t = i + 1; t < n; ++t) {
        gram[i * n + t] = gram[t * n + i] = rbf(data.row(i), data.row(t), dim, gamma);
      }
    }
  }
  KernelRowFn row_fn = [&](std::size_t i, std::span<double> out) {
    if (full) {
      std::copy(gram.begin() + static_cast<std::ptrdiff_t>(i * n),
                gram.begin() + static_cast<std::ptrdiff_t>((i + 1) * n), out.begin());
    } else {
      for (std::size_t t = 0; t < n; ++t) out[t] = rbf(data.row(i), data.row(t), dim, gamma);
    }
  };
  const std::size_t cache_rows = full ? 0 : std::max<std::size_t>(2, kBudget / (n * sizeof(double)));

  const std::vector<double> ones(n, 1.0);  // k(x, x) = 1 for the RBF kernel
  std::vector<BinarySvmResult> per_class;
  std::vector<int> labels(n);
  for (int c = 0; c < data.n_classes; ++c) {
    for (std::size_t t = 0; t < n; ++t) labels[t] = data.y[t] == c ? 1 : -1;
    try {
      per_class.push_back(solve_binary_svm(n, row_fn, labels, hp.C, hp.tolerance, hp.max_iter, cache_rows, ones));
    } catch (const NumericError& e) {
      throw NumericError("svm class " + std::to_string(c) + ": " + e.what());
    }
  }

  auto m = std::make_shared<detail::SvmModel>();
  m->gamma = gamma;
  std::vector<std::size_t> support;
  for (std::size_t t = 0; t < n; ++t) {
    const bool used = std::any_of(per_class.begin(), per_class.end(),
                                  [t](const BinarySvmResult& r) { return r.alpha[t] > 0.0; });
    if (used) support.push_back(t);
  }
  m->n_sv = support.size();
  for (auto t : support) m->sv.insert(m->sv.end(), data.row(t), data.row(t) + dim);
  for (int c = 0; c < data.n_classes; ++c) {
    const auto& r = per_class[static_cast<std::size_t>(c)];
    std::vector<double> coef;
    for (auto t : support) coef.push_back(r.alpha[t] * (data.y[t] == c ? 1.0 : -1.0));
    m->coef.push_back(std::move(coef));
    m->bias.push_back(r.bias);
  }
  return {m, hp, data.n_classes, dim};
}

}  // namespace histofuse
