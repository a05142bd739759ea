#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "histofuse/image.hpp"

namespace histofuse {

/// One image of the corpus. The id is the path relative to the dataset root
/// with '/' separators, e.g. "lung_aca/img_0001.png". Pixels are decoded on
/// demand through Dataset::load so a 25,000-image corpus never has to sit in
/// memory at once.
struct Sample {
  std::string id;
  ClassLabel label = ClassLabel::colon_aca;
  std::filesystem::path path;
};

class Dataset {
 public:
  Dataset() = default;
  Dataset(std::filesystem::path root, std::vector<Sample> samples);

  const std::filesystem::path& root() const { return root_; }
  const std::vector<Sample>& samples() const { return samples_; }
  std::size_t size() const { return samples_.size(); }

  /// Throws InputError for an unknown id.
  const Sample& at(const std::string& id) const;
  bool contains(const std::string& id) const;
  std::vector<std::size_t> class_counts() const;

  ImageTensor load(const Sample& sample) const;

 private:
  std::filesystem::path root_;
  std::vector<Sample> samples_;  // sorted by id
};

struct IngestOptions {
  /// Skip undecodable files with a warning instead of failing.
  bool lenient = false;
  std::size_t threads = 1;
};

/// Scans root/<class_name>/*.{png,jpg,jpeg}. Every subdirectory must name
/// one of the five classes (case-insensitive).
Dataset ingest(const std::filesystem::path& root, const IngestOptions& options = {});

struct SplitRatios {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;
  bool operator==(const SplitRatios&) const = default;
};

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
  std::uint64_t seed = 0;
  SplitRatios ratios;
  bool operator==(const DatasetSplit&) const = default;
};

/// Stratified split. Each class is shuffled with its own stream derived from
/// (seed, class id); validation and test quotas are rounded globally and the
/// rounding units are handed out by largest remainder, never taking a class's
/// last training sample. Train receives what is left. Lists are sorted by id.
DatasetSplit split(const Dataset& dataset, SplitRatios ratios, std::uint64_t seed);

void write_split_manifest(const std::filesystem::path& path, const DatasetSplit& split);
DatasetSplit read_split_manifest(const std::filesystem::path& path);

enum class SizeMode { resize, center_crop };

/// Bilinear resize with half-pixel centres and clamped borders.
ImageTensor resize_bilinear(const ImageTensor& image, std::size_t height,
                            std::size_t width);
/// Central side x side window; falls back to resize when the image is smaller.
ImageTensor center_crop(const ImageTensor& image, std::size_t side);
ImageTensor standardize_size(const ImageTensor& image, std::size_t side,
                             SizeMode mode = SizeMode::resize);

struct AugmentParams {
  int quarter_turns = 0;  // clockwise, 0..3
  int dx = 0;             // column shift
  int dy = 0;             // row shift
  bool operator==(const AugmentParams&) const = default;
};

inline constexpr int kMaxShift = 3;

AugmentParams draw_augment_params(std::uint64_t seed, int max_shift = kMaxShift);

/// Rotation by k quarter turns clockwise: pixel (r, c) of an H x W image lands
/// at (c, H - 1 - r) for k = 1.
ImageTensor rotate_quarter(const ImageTensor& image, int quarter_turns);
/// out(r, c) = in(r - dy, c - dx) with edge replication outside the frame.
ImageTensor translate(const ImageTensor& image, int dx, int dy);
ImageTensor apply_augment(const ImageTensor& image, const AugmentParams& params);
/// Random quarter-turn rotation followed by a shift in [-3, 3] per axis.
ImageTensor augment(const ImageTensor& image, std::uint64_t seed);

}  // namespace histofuse
