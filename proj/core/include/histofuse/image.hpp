#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

namespace histofuse {

/// The five tissue classes. Ids follow the alphabetical order of the
/// directory names and never change.
enum class ClassLabel : std::uint8_t {
  colon_aca = 0,
  colon_n = 1,
  lung_aca = 2,
  lung_n = 3,
  lung_scc = 4,
};

inline constexpr int kNumClasses = 5;

inline constexpr std::array<std::string_view, kNumClasses> kClassNames = {
    "colon_aca", "colon_n", "lung_aca", "lung_n", "lung_scc"};

constexpr int class_id(ClassLabel label) { return static_cast<int>(label); }
constexpr std::string_view class_name(ClassLabel label) {
  return kClassNames[static_cast<std::size_t>(label)];
}
/// Throws InputError for ids outside 0..4.
ClassLabel class_from_id(int id);
/// Case-insensitive lookup; nullopt for unknown names.
std::optional<ClassLabel> parse_class_name(std::string_view name);

/// Height x width x channels image, row-major with interleaved channels.
/// Pixel values are nominally in [0, 1]; the noise path may leave that range.
class ImageTensor {
 public:
  ImageTensor() = default;
  ImageTensor(std::size_t height, std::size_t width, std::size_t channels,
              double fill = 0.0);
  ImageTensor(std::size_t height, std::size_t width, std::size_t channels,
              std::vector<double> data);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t channels() const { return channels_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& at(std::size_t r, std::size_t c, std::size_t ch = 0) {
    return data_[(r * width_ + c) * channels_ + ch];
  }
  double at(std::size_t r, std::size_t c, std::size_t ch = 0) const {
    return data_[(r * width_ + c) * channels_ + ch];
  }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  bool same_shape(const ImageTensor& other) const {
    return height_ == other.height_ && width_ == other.width_ &&
           channels_ == other.channels_;
  }

  bool operator==(const ImageTensor&) const = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t channels_ = 0;
  std::vector<double> data_;
};

/// Single-channel luminance (Rec. 601 weights); grayscale input is copied.
ImageTensor to_grayscale(const ImageTensor& image);

}  // namespace histofuse
