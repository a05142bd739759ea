#pragma once

#include <span>
#include <vector>

namespace histofuse {

double normal_pdf(double z);
double normal_cdf(double z);

/// Expected improvement for maximisation:
/// (mu - best) Phi(z) + sigma phi(z) with z = (mu - best) / sigma, and
/// max(mu - best, 0) when sigma is zero.
double expected_improvement(double mu, double sigma, double best);

/// Matérn-5/2 correlation at scaled distance r.
double matern52(double r);

struct GpOptions {
  /// Candidate length-scales (unit-cube coordinates). A shared scale is
  /// chosen first, then each dimension is refined over the same grid.
  std::vector<double> lengthscale_grid = {0.03, 0.06, 0.1, 0.15, 0.25, 0.4, 0.6, 1.0, 1.6, 2.5};
  /// Noise variance as a fraction of the signal variance; never below 1e-6.
  std::vector<double> noise_grid = {1e-6, 1e-4, 1e-2, 1e-1};
  int refinement_passes = 2;
};

struct GpPrediction {
  double mean = 0.0;
  double sigma = 0.0;
};

/// Exact GP regression on standardised targets. The signal variance is the
/// closed-form likelihood maximiser for each grid point; length-scales and
/// noise come from the grid search. Predictions are in the original units,
/// so the prior mean is the sample mean of the observations.
class GpModel {
 public:
  static constexpr double kMinNoise = 1e-6;

  /// Needs at least two points with finite values. Throws NumericError when
  /// the Cholesky factorisation fails after jitter escalation.
  static GpModel fit(const std::vector<std::vector<double>>& points,
                     std::span<const double> values, const GpOptions& options = {});

  GpPrediction predict(std::span<const double> x) const;
  /// Prediction in standardised units (prior mean 0).
  GpPrediction predict_standardized(std::span<const double> x) const;

  std::size_t dim() const { return dim_; }
  const std::vector<double>& lengthscales() const { return lengthscales_; }
  double signal_variance() const { return signal_variance_; }  // standardised units
  double noise_ratio() const { return noise_ratio_; }
  double y_mean() const { return y_mean_; }
  double y_scale() const { return y_scale_; }
  double log_marginal_likelihood() const { return lml_; }
  /// Largest standardised training value.
  double best_standardized() const;

 private:
  std::size_t dim_ = 0;
  std::vector<std::vector<double>> points_;
  std::vector<double> ys_;  // standardised
  std::vector<double> lengthscales_;
  double signal_variance_ = 1.0;
  double noise_ratio_ = kMinNoise;
  double y_mean_ = 0.0;
  double y_scale_ = 1.0;
  double lml_ = 0.0;
  std::vector<double> alpha_;     // (R + eta I)^-1 ys
  std::vector<double> chol_;      // lower Cholesky factor of R + eta I, row-major
};

}  // namespace histofuse
