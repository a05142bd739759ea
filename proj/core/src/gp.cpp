#include "histofuse/gp.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "histofuse/error.hpp"

namespace histofuse {

double normal_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double expected_improvement(double mu, double sigma, double best) {
  if (sigma < 0.0) throw InputError("expected_improvement: sigma must be >= 0");
  const double d = mu - best;
  if (sigma == 0.0) return std::max(d, 0.0);
  const double z = d / sigma;
  return d * normal_cdf(z) + sigma * normal_pdf(z);
}

double matern52(double r) {
  const double s = std::sqrt(5.0) * r;
  return (1.0 + s + s * s / 3.0) * std::exp(-s);
}

namespace {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

double scaled_distance(std::span<const double> a, std::span<const double> b,
                       const std::vector<double>& ls) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double d = (a[j] - b[j]) / ls[j];
    s += d * d;
  }
  return std::sqrt(s);
}

struct FitResult {
  bool ok = false;
  double lml = -std::numeric_limits<double>::infinity();
  double signal = 1.0;
  double eta = 0.0;  // noise ratio actually used (with any jitter)
  Mat chol;
  Vec alpha;
};

// Profile likelihood with the signal variance at its maximiser
// s2 = y'(R + eta I)^-1 y / n.
FitResult try_fit(const std::vector<std::vector<double>>& pts, const Vec& y,
                  const std::vector<double>& ls, double eta) {
  const auto n = static_cast<Eigen::Index>(pts.size());
  Mat r(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    r(i, i) = 1.0;
    for (Eigen::Index j = 0; j < i; ++j) {
      r(i, j) = r(j, i) = matern52(scaled_distance(pts[static_cast<std::size_t>(i)],
                                                   pts[static_cast<std::size_t>(j)], ls));
    }
  }
  FitResult out;
  double jitter = 0.0;
  for (int attempt = 0; attempt < 8; ++attempt) {
    Mat a = r;
    a.diagonal().array() += eta + jitter;
    Eigen::LLT<Mat> llt(a);
    const bool good = llt.info() == Eigen::Success && (llt.matrixL().toDenseMatrix().diagonal().array() > 0.0).all();
    if (good) {
      out.chol = llt.matrixL();
      out.alpha = llt.solve(y);
      out.eta = eta + jitter;
      out.ok = true;
      break;
    }
    jitter = jitter == 0.0 ? 1e-9 : jitter * 10.0;
  }
  if (!out.ok) return out;
  const double nd = static_cast<double>(n);
  out.signal = std::max(y.dot(out.alpha) / nd, 1e-12);
  const double log_det = 2.0 * out.chol.diagonal().array().log().sum();
  out.lml = -0.5 * nd * std::log(out.signal) - 0.5 * log_det -
            0.5 * nd * (1.0 + std::log(2.0 * std::numbers::pi));
  return out;
}

}  // namespace

GpModel GpModel::fit(const std::vector<std::vector<double>>& points, std::span<const double> values,
                     const GpOptions& options) {
  if (points.size() < 2) throw InputError("gp: need at least two points");
  if (values.size() != points.size()) throw InputError("gp: points and values differ in length");
  const std::size_t dim = points.front().size();
  for (const auto& p : points) {
    if (p.size() != dim) throw InputError("gp: points differ in dimension");
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw InputError("gp: values must be finite");
  }
  if (options.lengthscale_grid.empty() || options.noise_grid.empty()) {
    throw InputError("gp: empty hyperparameter grid");
  }

  GpModel m;
  m.dim_ = dim;
  m.points_ = points;
  const auto n = static_cast<Eigen::Index>(points.size());
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n);
  m.y_mean_ = mean;
  m.y_scale_ = var > 0.0 ? std::sqrt(var) : 1.0;
  Vec y(n);
  for (Eigen::Index i = 0; i < n; ++i) y(i) = (values[static_cast<std::size_t>(i)] - mean) / m.y_scale_;
  m.ys_.assign(y.data(), y.data() + n);

  // Shared length-scale and noise first, then per-dimension refinement.
  FitResult best;
  std::vector<double> best_ls(dim, options.lengthscale_grid.front());
  double best_noise = kMinNoise;
  for (double l : options.lengthscale_grid) {
    for (double noise : options.noise_grid) {
      const double eta = std::max(noise, kMinNoise);
      std::vector<double> ls(dim, l);
      auto f = try_fit(points, y, ls, eta);
      if (f.ok && f.lml > best.lml) {
        best = std::move(f);
        best_ls = ls;
        best_noise = eta;
      }
    }
  }
  if (!best.ok) throw NumericError("gp: covariance is not positive definite for any grid point");
  if (dim > 1) {
    for (int pass = 0; pass < options.refinement_passes; ++pass) {
      for (std::size_t d = 0; d < dim; ++d) {
        for (double l : options.lengthscale_grid) {
          if (l == best_ls[d]) continue;
          auto ls = best_ls;
          ls[d] = l;
          auto f = try_fit(points, y, ls, best_noise);
          if (f.ok && f.lml > best.lml) {
            best = std::move(f);
            best_ls = ls;
          }
        }
      }
    }
  }
  m.lengthscales_ = best_ls;
  m.signal_variance_ = best.signal;
  m.noise_ratio_ = best.eta;
  m.lml_ = best.lml;
  m.alpha_.assign(best.alpha.data(), best.alpha.data() + n);
  m.chol_.resize(static_cast<std::size_t>(n * n));
  Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(m.chol_.data(), n, n) = best.chol;
  return m;
}

GpPrediction GpModel::predict_standardized(std::span<const double> x) const {
  if (x.size() != dim_) throw InputError("gp: query dimension mismatch");
  const auto n = static_cast<Eigen::Index>(points_.size());
  Vec k(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    k(i) = matern52(scaled_distance(x, points_[static_cast<std::size_t>(i)], lengthscales_));
  }
  const Eigen::Map<const Vec> alpha(alpha_.data(), n);
  const Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> l(chol_.data(), n, n);
  const Vec v = l.triangularView<Eigen::Lower>().solve(k);
  GpPrediction p;
  p.mean = k.dot(alpha);
  p.sigma = std::sqrt(std::max(0.0, signal_variance_ * (1.0 - v.squaredNorm())));
  return p;
}

GpPrediction GpModel::predict(std::span<const double> x) const {
  auto p = predict_standardized(x);
  p.mean = y_mean_ + y_scale_ * p.mean;
  p.sigma *= y_scale_;
  return p;
}

double GpModel::best_standardized() const { return *std::max_element(ys_.begin(), ys_.end()); }

}  // namespace histofuse
