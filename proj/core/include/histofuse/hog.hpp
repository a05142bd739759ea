#pragma once

#include <cstddef>
#include <vector>

#include "histofuse/features.hpp"
#include "histofuse/image.hpp"

namespace histofuse {

struct HogConfig {
  std::size_t cell_size = 128;
  std::size_t bins = 9;
  std::size_t block_size = 2;    // cells per block side
  std::size_t block_stride = 1;  // in cells
  bool signed_orientation = false;
  double clip = 0.2;
  /// Convert colour input to luminance before taking gradients instead of
  /// picking the dominant channel per pixel.
  bool grayscale = false;
  /// Bilinear vote between neighbouring cell centres. Off by default.
  bool soft_spatial = false;

  /// Throws InputError when a field is out of range.
  void validate() const;
};

/// Per-pixel gradient field, row-major.
struct GradientField {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> gx;
  std::vector<double> gy;
};

/// Centred [-1, 0, 1] differences with replicated borders. For colour images
/// each pixel keeps the channel whose gradient magnitude is largest (lowest
/// channel on ties). Throws InputError for images smaller than 3 x 3.
GradientField gradient(const ImageTensor& image);

struct HogLayout {
  std::size_t cells_y = 0;
  std::size_t cells_x = 0;
  std::size_t blocks_y = 0;
  std::size_t blocks_x = 0;
  std::size_t dim = 0;
};

/// Throws InputError when the image cannot hold one block.
HogLayout hog_layout(const HogConfig& cfg, std::size_t height, std::size_t width);
std::size_t hog_dim(const HogConfig& cfg, std::size_t height, std::size_t width);

/// Un-normalised orientation histograms, cells_y x cells_x x bins.
std::vector<double> cell_histograms(const ImageTensor& image, const HogConfig& cfg);

/// Block-normalised (L2-Hys) descriptor of length hog_dim. Blocks are laid
/// out row-major, cells row-major within a block, then bins. Blocks with
/// zero energy stay zero.
FeatureVector hog(const ImageTensor& image, const HogConfig& cfg);

}  // namespace histofuse
