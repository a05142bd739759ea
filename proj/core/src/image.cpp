#include "histofuse/image.hpp"

#include <algorithm>
#include <cctype>
#include <string>

#include "histofuse/error.hpp"

namespace histofuse {

ClassLabel class_from_id(int id) {
  if (id < 0 || id >= kNumClasses) {
    throw InputError("class id out of range: " + std::to_string(id));
  }
  return static_cast<ClassLabel>(id);
}

std::optional<ClassLabel> parse_class_name(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  for (int i = 0; i < kNumClasses; ++i) {
    if (kClassNames[i] == lower) return static_cast<ClassLabel>(i);
  }
  return std::nullopt;
}

ImageTensor::ImageTensor(std::size_t height, std::size_t width, std::size_t channels,
                         double fill)
    : height_(height), width_(width), channels_(channels),
      data_(height * width * channels, fill) {}

ImageTensor::ImageTensor(std::size_t height, std::size_t width, std::size_t channels,
                         std::vector<double> data)
    : height_(height), width_(width), channels_(channels), data_(std::move(data)) {
  if (data_.size() != height * width * channels) {
    throw InputError("image data length " + std::to_string(data_.size()) +
                     " does not match " + std::to_string(height) + "x" +
                     std::to_string(width) + "x" + std::to_string(channels));
  }
}

ImageTensor to_grayscale(const ImageTensor& image) {
  if (image.channels() == 1) return image;
  ImageTensor gray(image.height(), image.width(), 1);
  for (std::size_t r = 0; r < image.height(); ++r) {
    for (std::size_t c = 0; c < image.width(); ++c) {
      if (image.channels() >= 3) {
        gray.at(r, c) = 0.299 * image.at(r, c, 0) + 0.587 * image.at(r, c, 1) +
                        0.114 * image.at(r, c, 2);
      } else {
        gray.at(r, c) = image.at(r, c, 0);
      }
    }
  }
  return gray;
}

}  // namespace histofuse
