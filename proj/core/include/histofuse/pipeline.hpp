#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "histofuse/classify.hpp"
#include "histofuse/corpus.hpp"
#include "histofuse/error.hpp"
#include "histofuse/features.hpp"
#include "histofuse/hog.hpp"
#include "histofuse/metrics.hpp"
#include "histofuse/tune.hpp"

namespace histofuse {

struct AugmentSettings {
  bool enabled = true;
  /// Augmented copies added per training image (the original is kept).
  int copies = 1;
  int max_shift = kMaxShift;
};

struct TuneSettings {
  bool enabled = true;
  std::size_t budget = 30;
  std::size_t n_init = 10;
  std::uint64_t seed = 7;
  TuneObjective objective = TuneObjective::accuracy;
};

struct ExperimentConfig {
  std::filesystem::path dataset_root;
  SplitRatios ratios;
  std::uint64_t seed = 42;  // master seed: split, augmentation, training
  std::size_t image_side = 299;
  SizeMode size_mode = SizeMode::resize;
  bool lenient = false;
  AugmentSettings augment;
  HogConfig hog;
  std::filesystem::path model_path;
  std::optional<std::string> output_name;
  std::vector<FeatureKind> feature_kinds = {FeatureKind::deep, FeatureKind::fused};
  std::vector<ModelKind> models = {kAllModelKinds.begin(), kAllModelKinds.end()};
  TuneSettings tune;
  /// Used as-is when tuning is disabled, and as the fallback otherwise.
  std::map<ModelKind, Hyperparams> hyperparams;
  std::vector<double> snr_levels = {40.0, 35.0, 30.0};
  std::uint64_t noise_seed = 2024;
  bool baseline = true;
  bool retune_per_level = false;
  bool svg = false;
  std::filesystem::path output_dir = "out";
  std::size_t threads = 1;

  bool needs_hog() const;
  bool needs_deep() const;
};

ExperimentConfig config_from_json(std::string_view json);
/// Accepts either a config file or a run manifest (its "config" member).
ExperimentConfig read_config(const std::filesystem::path& path);
std::string config_to_json(const ExperimentConfig& cfg);

/// Checks every precondition that does not need pixels: paths exist, at least
/// one feature kind and model, ratios valid, HOG config valid.
void validate_config(const ExperimentConfig& cfg);

/// Error raised inside a pipeline stage, tagged with the stage name.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& message, bool user_error)
      : Error(stage + ": " + message), stage_(std::move(stage)), user_error_(user_error) {}
  const std::string& stage() const { return stage_; }
  bool user_error() const { return user_error_; }

 private:
  std::string stage_;
  bool user_error_;
};

struct FeatureSplit {
  FeatureMatrix train;
  FeatureMatrix val;
  FeatureMatrix test;
};

/// Unstandardised features per kind, as written under <out>/features.
struct FeatureBundle {
  DatasetSplit split;
  std::map<FeatureKind, FeatureSplit> sets;
};

struct ModelRun {
  FeatureKind feature_kind = FeatureKind::deep;
  TrainedModel model;
  std::optional<TrialHistory> history;
  EvalReport report;
};

struct ExperimentResult {
  FeatureBundle features;
  std::map<FeatureKind, Standardizer> standardizers;
  std::vector<ModelRun> runs;
  std::vector<ReportRow> rows;
};

/// Ingest, split, augment the training split, extract features and write
/// them (features/<kind>_<split>.hfv) together with split.json.
FeatureBundle extract_features(const ExperimentConfig& cfg);
/// Reads the feature files written by extract_features.
FeatureBundle load_features(const ExperimentConfig& cfg);

/// z-score per feature kind, fitted on the training rows. Written to
/// models/<kind>_standardizer.json by train_models.
std::map<FeatureKind, Standardizer> fit_standardizers(const FeatureBundle& features);
std::string standardizer_to_json(const Standardizer& s);
Standardizer standardizer_from_json(std::string_view json);

using ModelKey = std::pair<FeatureKind, ModelKind>;

struct TuneOutcome {
  Hyperparams hyperparams;
  std::optional<TrialHistory> history;  // empty when tuning is disabled
};

/// Chooses hyperparameters for every (feature kind, model) pair on the
/// validation split. Writes histories/<kind>_<model>.jsonl and tuned.json.
std::map<ModelKey, TuneOutcome> tune_models(const ExperimentConfig& cfg,
                                            const FeatureBundle& features,
                                            const std::map<FeatureKind, Standardizer>& standardizers);
std::map<ModelKey, Hyperparams> read_tuned(const std::filesystem::path& path);

/// Trains on the standardised training split; writes models/.
std::vector<ModelRun> train_models(const ExperimentConfig& cfg, const FeatureBundle& features,
                                   const std::map<FeatureKind, Standardizer>& standardizers,
                                   const std::map<ModelKey, Hyperparams>& hyperparams);

/// Scores every run on the test split, fills run.report and returns the
/// report rows; writes report.csv and roc/.
std::vector<ReportRow> evaluate_models(const ExperimentConfig& cfg, const FeatureBundle& features,
                                       const std::map<FeatureKind, Standardizer>& standardizers,
                                       std::vector<ModelRun>& runs);

/// Standardise, tune, train and evaluate every (feature kind, model) pair
/// from features alone; writes report.csv, models/, histories/, roc/.
ExperimentResult train_and_evaluate(const ExperimentConfig& cfg, FeatureBundle features);

/// Features, standardizers and models previously written under the output
/// directory; run reports are recomputed on the test split.
ExperimentResult load_experiment(const ExperimentConfig& cfg);

/// Both stages plus manifest.json. On failure every file written so far is
/// renamed with a .partial suffix and a StageError is thrown.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

struct SweepRow {
  std::string method;  // feature kind name or "backend-as-classifier"
  std::string model;
  double snr_db = 0.0;
  double accuracy = 0.0;
};

inline constexpr std::string_view kBaselineMethod = "backend-as-classifier";

/// Adds Gaussian noise to the test images at each level, re-extracts the
/// features, and scores every trained model; clean-trained models are reused
/// unless cfg.retune_per_level. Rows are sorted by method, model, then SNR
/// descending. Writes sweep.csv.
std::vector<SweepRow> noise_sweep(const ExperimentConfig& cfg, const ExperimentResult& result,
                                  std::span<const double> levels);

std::string sweep_csv(std::span<const SweepRow> rows);

/// Parses "40,35,30". Throws InputError on junk or an empty list.
std::vector<double> parse_snr_levels(std::string_view text);

}  // namespace histofuse
