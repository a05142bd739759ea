#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "histofuse/classify.hpp"
#include "histofuse/gp.hpp"

namespace histofuse {

enum class DimType { real, log_real, integer, categorical };

struct SearchDim {
  std::string name;
  DimType type = DimType::real;
  double low = 0.0;
  double high = 1.0;
  std::vector<std::string> categories;
};

struct HyperparamSpace {
  std::vector<SearchDim> dims;

  std::size_t size() const { return dims.size(); }
  /// Throws InputError for empty categories or low >= high.
  void validate() const;
};

/// Search space covering every parameter of the given classifier once.
HyperparamSpace default_space(ModelKind kind);

/// Affine for real, geometric for log-real, rounded half-up for integer and
/// equal-width intervals for categorical dimensions. Components outside
/// [0, 1] are clamped with a warning.
ParamMap decode(const HyperparamSpace& space, std::span<const double> point);
/// Inverse of decode for representable values. Throws InputError for a
/// missing dimension or unknown category.
std::vector<double> encode(const HyperparamSpace& space, const ParamMap& params);

struct Trial {
  std::vector<double> point;
  ParamMap params;
  double value = 0.0;  // -inf when the evaluation failed
  bool failed = false;
  std::string error;
  double wall_ms = 0.0;
};

struct BoSettings {
  std::size_t budget = 30;
  std::size_t n_init = 10;
  std::size_t candidates = 1024;
  std::size_t refine_steps = 64;
  std::uint64_t seed = 0;
  GpOptions gp;
};

struct TrialHistory {
  std::vector<Trial> trials;
  std::size_t incumbent = 0;
  BoSettings settings;

  double best_value() const;
  /// Best objective seen after each trial.
  std::vector<double> incumbent_trace() const;
};

/// Objective to maximise. Exceptions mark the trial as failed.
using Objective = std::function<double(const ParamMap& params)>;

/// Scrambled Halton points in the unit cube (random digit permutations per
/// dimension drawn from `seed`).
std::vector<std::vector<double>> scrambled_halton(std::size_t count, std::size_t dim,
                                                  std::uint64_t seed);

/// n_init quasi-random trials, then GP + expected improvement over seeded
/// candidates with a local refinement around the best candidate. Throws
/// InputError if budget < n_init and Error if every trial failed.
TrialHistory bayes_optimize(const HyperparamSpace& space, const Objective& objective,
                            const BoSettings& settings);

/// Uniform random search with the same trial bookkeeping.
TrialHistory random_search(const HyperparamSpace& space, const Objective& objective,
                           std::size_t budget, std::uint64_t seed);

enum class TuneObjective { accuracy, neg_log_loss };

struct TuneResult {
  Hyperparams best;
  TrialHistory history;
};

/// Trains `kind` on `train` and scores on `val` for each trial.
TuneResult tune(ModelKind kind, const HyperparamSpace& space, const FeatureMatrix& train,
                const FeatureMatrix& val, const BoSettings& settings,
                TuneObjective objective = TuneObjective::accuracy, int n_classes = 0);

/// One JSON object per line.
std::string history_to_jsonl(const TrialHistory& history, bool include_timing = true);
void write_history(const std::filesystem::path& path, const TrialHistory& history,
                   bool include_timing = true);
TrialHistory read_history(const std::filesystem::path& path);

}  // namespace histofuse
