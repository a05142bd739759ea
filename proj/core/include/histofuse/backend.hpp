#pragma once

#include <array>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "histofuse/features.hpp"
#include "histofuse/image.hpp"
#include "histofuse/onnx.hpp"

namespace histofuse {

/// Preprocessing sidecar stored next to the model as <stem>.meta.json.
/// The network input is image * scale[c] + offset[c], laid out NCHW.
struct BackendMeta {
  std::string input_name;
  std::string output_name = "avg_pool";
  std::size_t input_side = 299;
  std::array<double, 3> scale = {1.0, 1.0, 1.0};
  std::array<double, 3> offset = {0.0, 0.0, 0.0};
  std::optional<std::string> class_output;
};

std::filesystem::path sidecar_path(const std::filesystem::path& model_path);
BackendMeta read_backend_meta(const std::filesystem::path& path);
void write_backend_meta(const std::filesystem::path& path, const BackendMeta& meta);

/// A frozen pretrained network used as a feature extractor.
class Backend {
 public:
  /// Loads the model and its sidecar (defaults apply when the sidecar is
  /// absent). `output_name` overrides the sidecar's feature output. Throws
  /// InputError listing the available outputs when the name is unknown, and
  /// when the input is not rank 4 with three channels.
  static Backend load(const std::filesystem::path& model_path,
                      std::optional<std::string> output_name = std::nullopt);

  const std::filesystem::path& model_path() const { return model_path_; }
  const BackendMeta& meta() const { return meta_; }
  const std::string& output_name() const { return meta_.output_name; }
  std::size_t input_side() const { return meta_.input_side; }
  std::size_t feature_dim() const { return feature_dim_; }
  bool has_class_output() const { return meta_.class_output.has_value(); }

  /// Named-layer activation for one image of side input_side().
  std::vector<double> features(const ImageTensor& image) const;

  /// One row per image in submission order; kind = deep.
  FeatureMatrix extract(std::span<const ImageTensor> images,
                        std::span<const std::string> ids,
                        std::span<const int> labels, std::size_t threads = 1) const;

  /// Raw class-head outputs. Throws InputError without class_output.
  std::vector<double> class_scores(const ImageTensor& image) const;
  /// Argmax over class_scores, lowest index on ties.
  int classify(const ImageTensor& image) const;

 private:
  Backend() = default;
  std::vector<float> run_named(const ImageTensor& image, const std::string& output) const;

  std::filesystem::path model_path_;
  BackendMeta meta_;
  std::size_t feature_dim_ = 0;
  std::shared_ptr<const onnx::Executor> executor_;
};

/// Labels from the backend's own classification head; empty when the model
/// declares no class_output (a warning is logged).
std::vector<int> baseline_classify(const Backend& backend,
                                   std::span<const ImageTensor> images,
                                   std::size_t threads = 1);

/// Tiny stand-in network: a 1x1 convolution from RGB to feature_dim channels,
/// optional ReLU, global average pool ("avg_pool"), and optionally a linear
/// five-way head ("class_output"). Each convolution row sums to one, so a
/// constant image of value c >= 0 maps to the all-c feature vector.
struct FixtureModelSpec {
  std::size_t feature_dim = 8;
  std::size_t input_side = 299;
  bool relu = true;
  bool class_head = true;
  std::uint64_t seed = 1;
  /// feature_dim x 3, row-major; generated from `seed` when empty.
  std::vector<float> conv_weights;
  std::vector<float> conv_bias;
  /// 5 x feature_dim, row-major; generated from `seed` when empty.
  std::vector<float> head_weights;
  std::vector<float> head_bias;
};

onnx::Model build_fixture_model(const FixtureModelSpec& spec);
/// Writes the model and its sidecar.
void write_fixture_model(const std::filesystem::path& model_path,
                         const FixtureModelSpec& spec);

}  // namespace histofuse
