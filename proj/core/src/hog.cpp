#include "histofuse/hog.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "histofuse/error.hpp"

namespace histofuse {

void HogConfig::validate() const {
  if (cell_size < 2) throw InputError("HOG cell size must be at least 2");
  if (bins < 2) throw InputError("HOG needs at least 2 orientation bins");
  if (block_size < 1) throw InputError("HOG block size must be at least 1");
  if (block_stride < 1) throw InputError("HOG block stride must be at least 1");
  if (!(clip > 0.0 && clip <= 1.0)) throw InputError("HOG clip must lie in (0, 1]");
}

GradientField gradient(const ImageTensor& image) {
  const std::size_t h = image.height();
  const std::size_t w = image.width();
  if (h < 3 || w < 3) throw InputError("gradient needs an image of at least 3x3 pixels");
  GradientField g;
  g.height = h;
  g.width = w;
  g.gx.assign(h * w, 0.0);
  g.gy.assign(h * w, 0.0);
  for (std::size_t r = 0; r < h; ++r) {
    const std::size_t up = r == 0 ? 0 : r - 1;
    const std::size_t down = r + 1 == h ? r : r + 1;
    for (std::size_t c = 0; c < w; ++c) {
      const std::size_t left = c == 0 ? 0 : c - 1;
      const std::size_t right = c + 1 == w ? c : c + 1;
      double best = -1.0;
      for (std::size_t k = 0; k < image.channels(); ++k) {
        const double dx = image.at(r, right, k) - image.at(r, left, k);
        const double dy = image.at(down, c, k) - image.at(up, c, k);
        const double mag2 = dx * dx + dy * dy;
        if (mag2 > best) {
          best = mag2;
          g.gx[r * w + c] = dx;
          g.gy[r * w + c] = dy;
        }
      }
    }
  }
  return g;
}

HogLayout hog_layout(const HogConfig& cfg, std::size_t height, std::size_t width) {
  cfg.validate();
  HogLayout l;
  l.cells_y = height / cfg.cell_size;
  l.cells_x = width / cfg.cell_size;
  if (l.cells_y == 0 || l.cells_x == 0) {
    throw InputError("image " + std::to_string(height) + "x" + std::to_string(width) +
                     " is smaller than one " + std::to_string(cfg.cell_size) + "-pixel cell");
  }
  if (l.cells_y < cfg.block_size || l.cells_x < cfg.block_size) {
    throw InputError("image " + std::to_string(height) + "x" + std::to_string(width) +
                     " holds fewer cells than one " + std::to_string(cfg.block_size) +
                     "x" + std::to_string(cfg.block_size) + " block");
  }
  l.blocks_y = (l.cells_y - cfg.block_size) / cfg.block_stride + 1;
  l.blocks_x = (l.cells_x - cfg.block_size) / cfg.block_stride + 1;
  l.dim = l.blocks_y * l.blocks_x * cfg.block_size * cfg.block_size * cfg.bins;
  return l;
}

std::size_t hog_dim(const HogConfig& cfg, std::size_t height, std::size_t width) {
  return hog_layout(cfg, height, width).dim;
}

std::vector<double> cell_histograms(const ImageTensor& image, const HogConfig& cfg) {
  const HogLayout layout = hog_layout(cfg, image.height(), image.width());
  for (double v : image.values()) {
    if (!std::isfinite(v)) throw InputError("HOG input contains a non-finite pixel");
  }
  const GradientField g = cfg.grayscale ? gradient(to_grayscale(image)) : gradient(image);

  const double range = cfg.signed_orientation ? 360.0 : 180.0;
  const double bin_width = range / static_cast<double>(cfg.bins);
  const auto bins = static_cast<long long>(cfg.bins);
  const double cell = static_cast<double>(cfg.cell_size);
  std::vector<double> hist(layout.cells_y * layout.cells_x * cfg.bins, 0.0);

  const std::size_t rows = layout.cells_y * cfg.cell_size;
  const std::size_t cols = layout.cells_x * cfg.cell_size;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      const double gx = g.gx[r * g.width + c];
      const double gy = g.gy[r * g.width + c];
      const double mag = std::sqrt(gx * gx + gy * gy);
      if (mag == 0.0) continue;
      double angle = std::atan2(gy, gx) * (180.0 / std::numbers::pi);
      if (angle < 0.0) angle += range;
      if (angle >= range) angle -= range;
      if (!cfg.signed_orientation && angle >= 180.0) angle -= 180.0;

      const double pos = angle / bin_width - 0.5;
      const double lo_f = std::floor(pos);
      const double frac = pos - lo_f;
      const auto lo = static_cast<std::size_t>(((static_cast<long long>(lo_f) % bins) + bins) % bins);
      const std::size_t hi = (lo + 1) % cfg.bins;
      const double vote_lo = mag * (1.0 - frac);
      const double vote_hi = mag * frac;

      if (!cfg.soft_spatial) {
        const std::size_t base = ((r / cfg.cell_size) * layout.cells_x + c / cfg.cell_size) * cfg.bins;
        hist[base + lo] += vote_lo;
        hist[base + hi] += vote_hi;
        continue;
      }
      const double cy = (static_cast<double>(r) + 0.5) / cell - 0.5;
      const double cx = (static_cast<double>(c) + 0.5) / cell - 0.5;
      const double cy0 = std::floor(cy);
      const double cx0 = std::floor(cx);
      const double wy = cy - cy0;
      const double wx = cx - cx0;
      for (int dy = 0; dy < 2; ++dy) {
        const long long yi = static_cast<long long>(cy0) + dy;
        if (yi < 0 || yi >= static_cast<long long>(layout.cells_y)) continue;
        const double wyy = dy == 0 ? 1.0 - wy : wy;
        for (int dx = 0; dx < 2; ++dx) {
          const long long xi = static_cast<long long>(cx0) + dx;
          if (xi < 0 || xi >= static_cast<long long>(layout.cells_x)) continue;
          const double w = wyy * (dx == 0 ? 1.0 - wx : wx);
          const std::size_t base =
              (static_cast<std::size_t>(yi) * layout.cells_x + static_cast<std::size_t>(xi)) * cfg.bins;
          hist[base + lo] += w * vote_lo;
          hist[base + hi] += w * vote_hi;
        }
      }
    }
  }
  return hist;
}

namespace {

// L2-normalise, clip, renormalise; zero-energy vectors stay zero.
void l2_hys(std::span<double> v, double clip) {
  double norm2 = 0.0;
  for (double x : v) norm2 += x * x;
  if (norm2 == 0.0) return;
  double inv = 1.0 / std::sqrt(norm2);
  norm2 = 0.0;
  for (double& x : v) {
    x = std::min(x * inv, clip);
    norm2 += x * x;
  }
  if (norm2 == 0.0) return;
  inv = 1.0 / std::sqrt(norm2);
  for (double& x : v) x *= inv;
}

}  // namespace

FeatureVector hog(const ImageTensor& image, const HogConfig& cfg) {
  const HogLayout layout = hog_layout(cfg, image.height(), image.width());
  const std::vector<double> hist = cell_histograms(image, cfg);

  FeatureVector out;
  out.kind = FeatureKind::hog;
  out.values.reserve(layout.dim);
  const std::size_t block_len = cfg.block_size * cfg.block_size * cfg.bins;
  std::vector<double> block(block_len);
  for (std::size_t by = 0; by < layout.blocks_y; ++by) {
    for (std::size_t bx = 0; bx < layout.blocks_x; ++bx) {
      std::size_t k = 0;
      for (std::size_t cy = 0; cy < cfg.block_size; ++cy) {
        for (std::size_t cx = 0; cx < cfg.block_size; ++cx) {
          const std::size_t cell_y = by * cfg.block_stride + cy;
          const std::size_t cell_x = bx * cfg.block_stride + cx;
          const std::size_t base = (cell_y * layout.cells_x + cell_x) * cfg.bins;
          for (std::size_t b = 0; b < cfg.bins; ++b) block[k++] = hist[base + b];
        }
      }
      l2_hys(block, cfg.clip);
      out.values.insert(out.values.end(), block.begin(), block.end());
    }
  }
  return out;
}

}  // namespace histofuse
