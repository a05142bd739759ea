#pragma once

// Slow, direct reference implementations used only by the tests. Each one is
// written from the textbook definition and shares no code with the library.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numbers>
#include <utility>
#include <vector>

namespace oracle {

// Interleaved H x W x C image.
struct Img {
  std::size_t h = 0, w = 0, c = 0;
  std::vector<double> px;
  double operator()(long long r, long long col, std::size_t ch) const {
    r = std::clamp<long long>(r, 0, static_cast<long long>(h) - 1);
    col = std::clamp<long long>(col, 0, static_cast<long long>(w) - 1);
    return px[(static_cast<std::size_t>(r) * w + static_cast<std::size_t>(col)) * c + ch];
  }
};

struct Grad {
  std::vector<double> gx, gy;
};

inline Grad gradient(const Img& im) {
  Grad g;
  g.gx.resize(im.h * im.w);
  g.gy.resize(im.h * im.w);
  for (std::size_t r = 0; r < im.h; ++r) {
    for (std::size_t col = 0; col < im.w; ++col) {
      const auto R = static_cast<long long>(r);
      const auto C = static_cast<long long>(col);
      std::size_t pick = 0;
      double pick_mag = -1.0;
      for (std::size_t ch = 0; ch < im.c; ++ch) {
        const double dx = im(R, C + 1, ch) - im(R, C - 1, ch);
        const double dy = im(R + 1, C, ch) - im(R - 1, C, ch);
        if (std::hypot(dx, dy) > pick_mag) {
          pick_mag = std::hypot(dx, dy);
          pick = ch;
        }
      }
      g.gx[r * im.w + col] = im(R, C + 1, pick) - im(R, C - 1, pick);
      g.gy[r * im.w + col] = im(R + 1, C, pick) - im(R - 1, C, pick);
    }
  }
  return g;
}

// Triangular vote: each bin gets max(0, 1 - d / width) of the magnitude,
// with d the circular distance between the angle and the bin centre.
inline std::vector<double> hog(const Img& im, std::size_t cell, std::size_t bins, std::size_t block,
                               std::size_t stride, bool signed_angles, double clip) {
  const Grad g = gradient(im);
  const double range = signed_angles ? 360.0 : 180.0;
  const double width = range / static_cast<double>(bins);
  const std::size_t ny = im.h / cell, nx = im.w / cell;
  std::vector<std::vector<std::vector<double>>> H(ny, std::vector<std::vector<double>>(nx, std::vector<double>(bins, 0.0)));
  for (std::size_t r = 0; r < ny * cell; ++r) {
    for (std::size_t col = 0; col < nx * cell; ++col) {
      const double gx = g.gx[r * im.w + col], gy = g.gy[r * im.w + col];
      const double mag = std::sqrt(gx * gx + gy * gy);
      if (mag == 0.0) continue;
      double deg = std::atan2(gy, gx) * 180.0 / std::numbers::pi;
      deg = std::fmod(deg + 720.0, range);
      for (std::size_t b = 0; b < bins; ++b) {
        const double centre = (static_cast<double>(b) + 0.5) * width;
        double d = std::abs(deg - centre);
        d = std::min(d, range - d);
        const double share = std::max(0.0, 1.0 - d / width);
        H[r / cell][col / cell][b] += mag * share;
      }
    }
  }
  std::vector<double> out;
  for (std::size_t by = 0; by + block <= ny; by += stride) {
    for (std::size_t bx = 0; bx + block <= nx; bx += stride) {
      std::vector<double> v;
      for (std::size_t y = by; y < by + block; ++y)
        for (std::size_t x = bx; x < bx + block; ++x) v.insert(v.end(), H[y][x].begin(), H[y][x].end());
      double n = 0.0;
      for (double a : v) n += a * a;
      if (n > 0.0) {
        for (double& a : v) a = std::min(a / std::sqrt(n), clip);
        double m = 0.0;
        for (double a : v) m += a * a;
        for (double& a : v) a /= std::sqrt(m);
      }
      out.insert(out.end(), v.begin(), v.end());
    }
  }
  return out;
}

// Bilinear sample of a single channel at output pixel (r, c) for a resize to
// oh x ow, pixel centres at half-integers, borders clamped.
inline double bilinear(const Img& im, std::size_t oh, std::size_t ow, std::size_t r, std::size_t col,
                       std::size_t ch) {
  const double sy = (static_cast<double>(r) + 0.5) * static_cast<double>(im.h) / static_cast<double>(oh) - 0.5;
  const double sx = (static_cast<double>(col) + 0.5) * static_cast<double>(im.w) / static_cast<double>(ow) - 0.5;
  const double y = std::clamp(sy, 0.0, static_cast<double>(im.h - 1));
  const double x = std::clamp(sx, 0.0, static_cast<double>(im.w - 1));
  const auto y0 = static_cast<long long>(std::floor(y)), x0 = static_cast<long long>(std::floor(x));
  const double fy = y - static_cast<double>(y0), fx = x - static_cast<double>(x0);
  return (1 - fy) * ((1 - fx) * im(y0, x0, ch) + fx * im(y0, x0 + 1, ch)) +
         fy * ((1 - fx) * im(y0 + 1, x0, ch) + fx * im(y0 + 1, x0 + 1, ch));
}

// Mann-Whitney by enumerating every positive/negative pair; returned as an
// exact fraction (twice the count, denominator 2 * n_pos * n_neg).
inline std::pair<long long, long long> auc_pairs(const std::vector<double>& s, const std::vector<int>& pos) {
  long long twice = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!pos[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (pos[j]) continue;
      ++pairs;
      twice += s[i] > s[j] ? 2 : s[i] == s[j] ? 1 : 0;
    }
  }
  return {twice, 2 * pairs};
}

// Central differences of f around theta.
inline std::vector<double> numeric_gradient(const std::function<double(const std::vector<double>&)>& f,
                                            std::vector<double> theta, double step) {
  std::vector<double> g(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double keep = theta[i];
    theta[i] = keep + step;
    const double up = f(theta);
    theta[i] = keep - step;
    const double down = f(theta);
    theta[i] = keep;
    g[i] = (up - down) / (2 * step);
  }
  return g;
}

// Branin on [-5, 10] x [0, 15], given unit-cube coordinates.
inline double branin_unit(double u, double v) {
  const double x = -5.0 + 15.0 * u, y = 15.0 * v;
  const double a = 1.0, b = 5.1 / (4 * std::numbers::pi * std::numbers::pi), c = 5.0 / std::numbers::pi;
  const double r = 6.0, s = 10.0, t = 1.0 / (8 * std::numbers::pi);
  return a * std::pow(y - b * x * x + c * x - r, 2) + s * (1 - t) * std::cos(x) + s;
}
inline constexpr double kBraninMin = 0.397887357729738;

// Softmax cross-entropy of a dense ReLU network written with plain loops.
// Layout per layer: W (out x in, row-major) then b.
inline double mlp_loss(const std::vector<double>& p, const std::vector<std::size_t>& sizes,
                       const std::vector<double>& x, const std::vector<int>& y, std::size_t rows) {
  double total = 0.0;
  for (std::size_t n = 0; n < rows; ++n) {
    std::vector<double> a(x.begin() + static_cast<std::ptrdiff_t>(n * sizes[0]),
                          x.begin() + static_cast<std::ptrdiff_t>((n + 1) * sizes[0]));
    std::size_t off = 0;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      std::vector<double> z(sizes[l + 1]);
      for (std::size_t o = 0; o < sizes[l + 1]; ++o) {
        double acc = p[off + sizes[l] * sizes[l + 1] + o];
        for (std::size_t i = 0; i < sizes[l]; ++i) acc += p[off + o * sizes[l] + i] * a[i];
        z[o] = (l + 2 < sizes.size()) ? std::max(acc, 0.0) : acc;
      }
      off += sizes[l] * sizes[l + 1] + sizes[l + 1];
      a = z;
    }
    double mx = *std::max_element(a.begin(), a.end());
    double zsum = 0.0;
    for (double v : a) zsum += std::exp(v - mx);
    total += -(a[static_cast<std::size_t>(y[n])] - mx - std::log(zsum));
  }
  return total / static_cast<double>(rows);
}

}  // namespace oracle
