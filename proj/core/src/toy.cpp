#include "histofuse/toy.hpp"

#include <cmath>
#include <algorithm>
#include <cstdio>
#include <numbers>

#include "histofuse/error.hpp"
#include "histofuse/image_io.hpp"
#include "histofuse/rng.hpp"

namespace histofuse {

namespace {

// Base colours loosely follow H&E staining; neighbouring classes overlap once
// the per-image jitter is added, so colour alone does not separate them.
constexpr double kTints[kNumClasses][3] = {
    {0.78, 0.52, 0.70},
    {0.84, 0.56, 0.72},
    {0.76, 0.58, 0.76},
    {0.82, 0.60, 0.74},
    {0.80, 0.54, 0.78},
};

// Stripe orientations in degrees; two entries make a cross-hatch, none a
// blotchy isotropic texture.
struct Texture {
  int count;
  double angles[2];
};
constexpr Texture kTextures[kNumClasses] = {
    {1, {0.0, 0.0}}, {1, {45.0, 0.0}}, {2, {0.0, 90.0}}, {2, {45.0, 135.0}}, {0, {0.0, 0.0}},
};

}  // namespace

ImageTensor toy_image(ClassLabel label, std::size_t index, const ToyCorpusSpec& spec) {
  if (spec.side < 8) throw InputError("toy image side must be at least 8");
  const int c = class_id(label);
  Rng rng(derive_seed(derive_seed(spec.seed, static_cast<std::uint64_t>(c)), index));

  double tint[3];
  for (int ch = 0; ch < 3; ++ch) tint[ch] = kTints[c][ch] + spec.tint_jitter * (2.0 * rng.uniform() - 1.0);
  const double period = 10.0 + 4.0 * rng.uniform();
  const double amp = spec.stripe_amplitude * (0.8 + 0.4 * rng.uniform());

  // Wave vectors: the class stripes, or three random directions for blotches.
  struct Wave {
    double kx, ky, phase;
  };
  std::vector<Wave> waves;
  const auto& tex = kTextures[c];
  const int n_waves = tex.count == 0 ? 3 : tex.count;
  for (int w = 0; w < n_waves; ++w) {
    const double deg = tex.count == 0 ? 180.0 * rng.uniform() : tex.angles[w];
    const double theta = deg * std::numbers::pi / 180.0;
    const double k = 2.0 * std::numbers::pi / (tex.count == 0 ? 2.0 * period : period);
    waves.push_back({k * std::cos(theta), k * std::sin(theta), 2.0 * std::numbers::pi * rng.uniform()});
  }

  ImageTensor img(spec.side, spec.side, 3);
  for (std::size_t r = 0; r < spec.side; ++r) {
    for (std::size_t col = 0; col < spec.side; ++col) {
      double s = 0.0;
      for (const auto& w : waves) {
        s += std::sin(w.kx * static_cast<double>(col) + w.ky * static_cast<double>(r) + w.phase);
      }
      s *= amp / n_waves;
      for (std::size_t ch = 0; ch < 3; ++ch) {
        img.at(r, col, ch) = std::clamp(tint[ch] + s, 0.0, 1.0);
      }
    }
  }
  return img;
}

void write_toy_corpus(const std::filesystem::path& root, const ToyCorpusSpec& spec) {
  for (int c = 0; c < kNumClasses; ++c) {
    const auto label = class_from_id(c);
    const auto dir = root / std::string(class_name(label));
    std::filesystem::create_directories(dir);
    for (std::size_t i = 0; i < spec.per_class; ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "toy_%03zu.png", i);
      write_png(dir / name, toy_image(label, i, spec));
    }
  }
}

}  // namespace histofuse
