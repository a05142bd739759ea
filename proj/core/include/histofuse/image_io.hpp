#pragma once

#include <filesystem>

#include "histofuse/image.hpp"

namespace histofuse {

struct ImageInfo {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
};

/// Decodes an 8-bit PNG or JPEG into [0, 1] (value / 255). Alpha is dropped,
/// gray+alpha becomes gray. Throws InputError when the file cannot be decoded.
ImageTensor read_image(const std::filesystem::path& path);

/// Writes an 8-bit PNG, clipping to [0, 1] and rounding to the nearest level.
void write_png(const std::filesystem::path& path, const ImageTensor& image);

bool has_image_extension(const std::filesystem::path& path);

}  // namespace histofuse
