#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "histofuse/classify.hpp"

namespace histofuse {

/// Binary decision tree node. Rows with x[feature] <= threshold go left.
/// Leaves carry `value`: class frequencies for classification trees, a single
/// additive score for boosting trees.
struct TreeNode {
  int feature = -1;
  double threshold = 0.0;
  int left = -1;
  int right = -1;
  std::vector<double> value;

  bool is_leaf() const { return feature < 0; }
  bool operator==(const TreeNode&) const = default;
};

struct DecisionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  const TreeNode& leaf_for(const double* x) const;
  std::size_t depth() const;
  std::size_t leaf_count() const;
  bool operator==(const DecisionTree&) const = default;
};

/// Wraps a hand-built classification tree as a model.
TrainedModel make_tree_model(DecisionTree tree, int n_classes, std::size_t feature_dim,
                             TreeParams hp = {});

/// The tree inside a model trained by train_tree. Throws InputError for
/// other kinds.
const DecisionTree& tree_of(const TrainedModel& model);

}  // namespace histofuse
