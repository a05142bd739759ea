#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace histofuse {

/// Fully connected ReLU network with a softmax output. Parameters live in one
/// flat vector: for each layer, the out x in weight matrix (row-major)
/// followed by the bias.
class MlpNetwork {
 public:
  MlpNetwork(std::size_t input_dim, std::vector<int> hidden, int n_classes);

  std::size_t input_dim() const { return input_dim_; }
  int n_classes() const { return n_classes_; }
  const std::vector<std::size_t>& layer_sizes() const { return sizes_; }

  std::size_t parameter_count() const { return params_.size(); }
  std::vector<double>& parameters() { return params_; }
  const std::vector<double>& parameters() const { return params_; }

  /// He-normal weights, zero biases.
  void init_he(std::uint64_t seed);

  /// Softmax probabilities, rows x n_classes.
  std::vector<double> forward(std::span<const double> x, std::size_t rows) const;

  /// Mean cross-entropy over the rows; the gradient with respect to
  /// parameters() is written to `grad` when non-null.
  double loss_and_gradient(std::span<const double> x, std::span<const int> y,
                           std::size_t rows, std::vector<double>* grad) const;

 private:
  std::size_t input_dim_;
  int n_classes_;
  std::vector<std::size_t> sizes_;    // input, hidden..., output
  std::vector<std::size_t> offsets_;  // start of each layer's weights
  std::vector<double> params_;
};

}  // namespace histofuse
