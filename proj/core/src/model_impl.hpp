#pragma once

// Internal parameter blocks behind TrainedModel, plus the tree grower shared
// by CART and boosting.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "binary_io.hpp"
#include "histofuse/classify.hpp"
#include "histofuse/mlp.hpp"
#include "histofuse/tree.hpp"

namespace histofuse::detail {

class ModelImpl {
 public:
  virtual ~ModelImpl() = default;
  /// Writes rows x n_classes scores to `out`.
  virtual void scores(const double* x, std::size_t rows, std::size_t dim, int n_classes,
                      double* out) const = 0;
  virtual void write(ByteWriter& w) const = 0;
};

std::shared_ptr<const ModelImpl> read_model_impl(const Hyperparams& hp, ByteReader& r,
                                                 int n_classes, std::size_t dim);

void write_tree(ByteWriter& w, const DecisionTree& tree);
DecisionTree read_tree(ByteReader& r, std::size_t dim);

class TreeModel : public ModelImpl {
 public:
  explicit TreeModel(DecisionTree t) : tree(std::move(t)) {}
  void scores(const double* x, std::size_t rows, std::size_t dim, int n_classes,
              double* out) const override;
  void write(ByteWriter& w) const override { write_tree(w, tree); }

  DecisionTree tree;
};

class GbmModel : public ModelImpl {
 public:
  void scores(const double* x, std::size_t rows, std::size_t dim, int n_classes,
              double* out) const override;
  void write(ByteWriter& w) const override;
  static std::shared_ptr<GbmModel> read(ByteReader& r, int n_classes, std::size_t dim);

  std::vector<double> init;          // per-class raw score offset
  std::vector<DecisionTree> trees;   // round-major, one per class per round
};

class KnnModel : public ModelImpl {
 public:
  void scores(const double* x, std::size_t rows, std::size_t dim, int n_classes,
              double* out) const override;
  void write(ByteWriter& w) const override;
  static std::shared_ptr<KnnModel> read(ByteReader& r, const KnnParams& hp, std::size_t dim);

  KnnParams hp;
  std::size_t rows = 0;
  std::vector<double> x;
  std::vector<int> y;
};

class MlpModel : public ModelImpl {
 public:
  explicit MlpModel(MlpNetwork n) : net(std::move(n)) {}
  void scores(const double* x, std::size_t rows, std::size_t dim, int n_classes,
              double* out) const override;
  void write(ByteWriter& w) const override;
  static std::shared_ptr<MlpModel> read(ByteReader& r, std::size_t dim, int n_classes);

  MlpNetwork net;
};

class SvmModel : public ModelImpl {
 public:
  void scores(const double* x, std::size_t rows, std::size_t dim, int n_classes,
              double* out) const override;
  void write(ByteWriter& w) const override;
  static std::shared_ptr<SvmModel> read(ByteReader& r, int n_classes, std::size_t dim);

  double gamma = 0.0;
  std::size_t n_sv = 0;
  std::vector<double> sv;                  // n_sv x dim
  std::vector<std::vector<double>> coef;   // per class, alpha_i * y_i over sv
  std::vector<double> bias;
};

/// Per-feature row orders sorted by (value, row index).
class SortedColumns {
 public:
  explicit SortedColumns(const TrainingSet& data);
  std::span<const std::uint32_t> order(std::size_t feature) const {
    return {order_.data() + feature * rows_, rows_};
  }

 private:
  std::size_t rows_;
  std::vector<std::uint32_t> order_;
};

/// Gini classification tree; leaves hold class frequencies.
DecisionTree grow_gini_tree(const TrainingSet& data, const SortedColumns& cols, int max_depth,
                            int min_leaf);

/// Least-squares regression tree on `target` restricted to rows with
/// in_sample[i] != 0. Leaves get leaf_value(rows in leaf) as a single value.
DecisionTree grow_regression_tree(
    const TrainingSet& data, const SortedColumns& cols, std::span<const double> target,
    std::span<const char> in_sample, int max_depth, int min_leaf,
    const std::function<double(std::span<const std::uint32_t>)>& leaf_value);

}  // namespace histofuse::detail
