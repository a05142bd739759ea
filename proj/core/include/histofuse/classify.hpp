#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "histofuse/features.hpp"

namespace histofuse {

enum class ModelKind { tree, gbm, knn, mlp, svm };

inline constexpr std::array<ModelKind, 5> kAllModelKinds = {
    ModelKind::tree, ModelKind::gbm, ModelKind::knn, ModelKind::mlp, ModelKind::svm};

std::string_view model_kind_name(ModelKind kind);
/// Throws InputError for unknown names.
ModelKind parse_model_kind(std::string_view name);

struct TreeParams {
  int max_depth = 10;
  int min_leaf = 1;
  bool operator==(const TreeParams&) const = default;
};

struct GbmParams {
  int rounds = 100;
  double learning_rate = 0.1;
  int max_depth = 3;
  double subsample = 1.0;
  bool operator==(const GbmParams&) const = default;
};

enum class KnnMetric { euclidean, manhattan, cosine };
enum class KnnWeighting { uniform, inverse_distance };

struct KnnParams {
  int k = 5;
  KnnMetric metric = KnnMetric::euclidean;
  KnnWeighting weighting = KnnWeighting::uniform;
  bool operator==(const KnnParams&) const = default;
};

/// SGD with momentum; the learning rate is multiplied by lr_decay every
/// ceil(epochs / 3) epochs.
struct MlpParams {
  std::vector<int> hidden = {256, 256};
  double learning_rate = 1e-4;
  double momentum = 0.9;
  int epochs = 50;
  int batch = 32;
  double lr_decay = 0.1;
  bool operator==(const MlpParams&) const = default;
};

struct SvmParams {
  double C = 1.0;
  /// RBF width; 0 selects 1 / feature_dim.
  double gamma = 0.0;
  double tolerance = 1e-3;
  long long max_iter = 10'000'000;
  bool operator==(const SvmParams&) const = default;
};

using Hyperparams = std::variant<TreeParams, GbmParams, KnnParams, MlpParams, SvmParams>;

ModelKind kind_of(const Hyperparams& hp);
Hyperparams default_hyperparams(ModelKind kind);

/// Flat name -> value view of a parameter set, used by the tuner and the
/// JSON model envelope. MLP hidden layers appear as `layers` and `width`
/// (uniform widths); the remaining fields map one-to-one.
using ParamValue = std::variant<long long, double, std::string>;
using ParamMap = std::map<std::string, ParamValue>;

ParamMap to_param_map(const Hyperparams& hp);
/// Fields absent from `params` keep their defaults. Throws InputError for
/// unknown names or ill-typed values.
Hyperparams hyperparams_from_map(ModelKind kind, const ParamMap& params);
std::string describe(const Hyperparams& hp);

/// Dense double-precision copy of a feature matrix used for training.
struct TrainingSet {
  std::size_t rows = 0;
  std::size_t dim = 0;
  int n_classes = 0;
  std::vector<double> x;  // rows x dim, row-major
  std::vector<int> y;

  const double* row(std::size_t i) const { return x.data() + i * dim; }
};

/// n_classes = 0 means max(label) + 1.
TrainingSet make_training_set(const FeatureMatrix& matrix, int n_classes = 0);

struct ScoreMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  double at(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
  std::span<const double> row(std::size_t i) const {
    return {values.data() + i * cols, cols};
  }
};

/// Index of the largest value; the lowest index wins ties.
int argmax(std::span<const double> values);

namespace detail {
class ModelImpl;
}

/// One of the five trained classifiers. Immutable and cheap to copy.
/// Scores are class probabilities for tree, gbm, knn and mlp, and raw
/// one-vs-rest margins for svm.
class TrainedModel {
 public:
  TrainedModel(std::shared_ptr<const detail::ModelImpl> impl, Hyperparams hp,
               int n_classes, std::size_t feature_dim);

  ModelKind kind() const { return kind_of(hp_); }
  const Hyperparams& hyperparams() const { return hp_; }
  int n_classes() const { return n_classes_; }
  std::size_t feature_dim() const { return feature_dim_; }
  bool probabilistic() const { return kind() != ModelKind::svm; }

  /// Throws InputError when the input dimension differs from feature_dim().
  ScoreMatrix predict_scores(std::span<const double> x, std::size_t rows) const;
  ScoreMatrix predict_scores(const FeatureMatrix& matrix) const;
  std::vector<int> predict(std::span<const double> x, std::size_t rows) const;
  std::vector<int> predict(const FeatureMatrix& matrix) const;

  /// {"version":"1","kind",...,"hp":{...},"params":"<base64>"}; the parameter
  /// block is little-endian and stores doubles bit-exactly.
  std::string to_json() const;
  static TrainedModel from_json(std::string_view json);
  void save(const std::filesystem::path& path) const;
  static TrainedModel load(const std::filesystem::path& path);

  const detail::ModelImpl& impl() const { return *impl_; }

 private:
  std::shared_ptr<const detail::ModelImpl> impl_;
  Hyperparams hp_;
  int n_classes_ = 0;
  std::size_t feature_dim_ = 0;
};

/// CART with Gini impurity. Candidate thresholds are midpoints between sorted
/// distinct values; ties go to the lowest feature, then the lowest threshold.
/// A single-class input yields one leaf (with a warning).
TrainedModel train_tree(const TrainingSet& data, const TreeParams& hp);

/// Softmax gradient boosting. Every round fits one regression tree per class
/// to y_onehot - p with Newton leaf values, shrunk by learning_rate. When
/// `loss_trace` is given it receives the training log-loss before the first
/// round and after each round.
TrainedModel train_gbm(const TrainingSet& data, const GbmParams& hp, std::uint64_t seed,
                       std::vector<double>* loss_trace = nullptr);

/// Stores the training set; scores are (weighted) neighbour class frequencies.
/// Distance ties are broken by the lower training index.
TrainedModel train_knn(const TrainingSet& data, const KnnParams& hp);

/// ReLU hidden layers, softmax output, mean cross-entropy, mini-batch SGD with
/// momentum and He initialisation.
TrainedModel train_mlp(const TrainingSet& data, const MlpParams& hp, std::uint64_t seed);

/// One-vs-rest RBF soft-margin SVMs solved by SMO.
TrainedModel train_svm(const TrainingSet& data, const SvmParams& hp, std::uint64_t seed);

TrainedModel train(const TrainingSet& data, const Hyperparams& hp, std::uint64_t seed);
TrainedModel train(const FeatureMatrix& matrix, const Hyperparams& hp, std::uint64_t seed,
                   int n_classes = 0);

}  // namespace histofuse
