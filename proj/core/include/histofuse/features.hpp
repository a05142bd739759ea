#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "histofuse/error.hpp"

namespace histofuse {

enum class FeatureKind : std::uint8_t { hog = 0, deep = 1, fused = 2 };

std::string_view feature_kind_name(FeatureKind kind);
/// Throws InputError for names other than hog, deep, fused.
FeatureKind parse_feature_kind(std::string_view name);

struct FeatureVector {
  FeatureKind kind = FeatureKind::hog;
  std::vector<double> values;
  std::size_t dim() const { return values.size(); }
};

/// Row-per-sample feature table with ids and integer class labels. Values are
/// kept in single precision, the same width as the on-disk store.
class FeatureMatrix {
 public:
  FeatureMatrix() = default;
  FeatureMatrix(FeatureKind kind, std::size_t dim) : kind_(kind), dim_(dim) {}

  FeatureKind kind() const { return kind_; }
  std::size_t rows() const { return ids_.size(); }
  std::size_t dim() const { return dim_; }
  bool empty() const { return ids_.empty(); }

  const std::vector<std::string>& ids() const { return ids_; }
  const std::vector<int>& labels() const { return labels_; }
  std::span<const float> values() const { return values_; }
  std::span<const float> row(std::size_t i) const {
    return {values_.data() + i * dim_, dim_};
  }
  float at(std::size_t i, std::size_t j) const { return values_[i * dim_ + j]; }

  void reserve(std::size_t rows);
  /// Throws InputError on a dimension mismatch or non-finite value.
  void append(std::string id, int label, std::span<const float> row);
  void append(std::string id, int label, std::span<const double> row);

  /// Rows at the given positions, in that order.
  FeatureMatrix subset(std::span<const std::size_t> positions) const;
  /// Rows whose ids are listed, in list order. Throws InputError if one is
  /// missing.
  FeatureMatrix select(std::span<const std::string> ids) const;

  bool operator==(const FeatureMatrix&) const = default;

 private:
  FeatureKind kind_ = FeatureKind::hog;
  std::size_t dim_ = 0;
  std::vector<std::string> ids_;
  std::vector<int> labels_;
  std::vector<float> values_;
};

/// Failure modes of the binary feature store.
class FeatureStoreError : public InputError {
 public:
  enum class Kind { bad_magic, truncated, dim_mismatch, bad_kind, io };
  FeatureStoreError(Kind kind, const std::string& message)
      : InputError(message), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// HFV1 layout, little-endian throughout:
//   "HFV1" | u8 kind | u32 rows | u32 dim |
//   rows x (u32 label | u16 id_len | id bytes | dim x f32)
void write_feature_store(const std::filesystem::path& path, const FeatureMatrix& matrix);
FeatureMatrix read_feature_store(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_feature_store(const FeatureMatrix& matrix);
FeatureMatrix decode_feature_store(std::span<const std::uint8_t> bytes);

/// Row-wise concatenation, HOG block first. Ids must match element-wise.
FeatureMatrix fuse(const FeatureMatrix& hog, const FeatureMatrix& deep);

/// Per-dimension z-score fitted on training rows only.
class Standardizer {
 public:
  static constexpr double kStdFloor = 1e-8;

  Standardizer() = default;
  Standardizer(std::vector<double> mean, std::vector<double> std);

  /// Requires at least two rows.
  static Standardizer fit(const FeatureMatrix& train);

  FeatureMatrix apply(const FeatureMatrix& matrix) const;

  const std::vector<double>& mean() const { return mean_; }
  const std::vector<double>& std() const { return std_; }

 private:
  std::vector<double> mean_;
  std::vector<double> std_;
};

}  // namespace histofuse
