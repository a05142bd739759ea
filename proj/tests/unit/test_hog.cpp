#include <gtest/gtest.h>

#include "histofuse/corpus.hpp"
#include "histofuse/error.hpp"
#include "histofuse/hog.hpp"
#include "test_support.hpp"

using namespace histofuse;
using testing_support::Rng;

namespace {

std::vector<double> oracle_hog(const ImageTensor& im, const HogConfig& c) {
  return oracle::hog(testing_support::to_oracle(im), c.cell_size, c.bins, c.block_size, c.block_stride,
                     c.signed_orientation, c.clip);
}

}  // namespace

TEST(Gradient, ConstantImageIsZero) {
  const auto g = gradient(ImageTensor(5, 6, 3, 0.3));
  for (double v : g.gx) EXPECT_EQ(v, 0.0);
  for (double v : g.gy) EXPECT_EQ(v, 0.0);
}

TEST(Gradient, HorizontalRamp) {
  const std::size_t W = 10;
  ImageTensor im(6, W, 1);
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < W; ++c) im.at(r, c) = static_cast<double>(c) / W;
  const auto g = gradient(im);
  for (std::size_t r = 0; r < 6; ++r) {
    for (std::size_t c = 1; c + 1 < W; ++c) EXPECT_NEAR(g.gx[r * W + c], 2.0 / W, 1e-15);
    for (std::size_t c = 0; c < W; ++c) EXPECT_EQ(g.gy[r * W + c], 0.0);
  }
  // Replicated borders give one-sided differences.
  EXPECT_NEAR(g.gx[0], 1.0 / W, 1e-15);
}

TEST(Gradient, MatchesPerPixelReference) {
  Rng rng(1);
  for (std::size_t ch : {1U, 3U}) {
    const auto im = testing_support::random_image(rng, 8, 8, ch);
    const auto g = gradient(im);
    const auto ref = oracle::gradient(testing_support::to_oracle(im));
    for (std::size_t i = 0; i < 64; ++i) {
      EXPECT_DOUBLE_EQ(g.gx[i], ref.gx[i]);
      EXPECT_DOUBLE_EQ(g.gy[i], ref.gy[i]);
    }
  }
  EXPECT_THROW(gradient(ImageTensor(2, 5, 1)), InputError);
}

TEST(HogDim, Examples) {
  EXPECT_EQ(hog_dim(HogConfig{}, 299, 299), 36U);
  HogConfig one;
  one.block_size = 1;
  EXPECT_EQ(hog_dim(one, 256, 256), 36U);
  EXPECT_THROW(hog_dim(HogConfig{}, 120, 120), InputError);
  // Running the extractor agrees with the formula.
  EXPECT_EQ(hog(ImageTensor(299, 299, 3, 0.5), HogConfig{}).dim(), 36U);
}

TEST(HogDim, FormulaOverRandomShapes) {
  Rng rng(2);
  for (int t = 0; t < 200; ++t) {
    HogConfig c;
    c.cell_size = 2 + rng.below(20);
    c.bins = 2 + rng.below(12);
    c.block_size = 1 + rng.below(3);
    c.block_stride = 1 + rng.below(3);
    const std::size_t h = c.cell_size * c.block_size + rng.below(100);
    const std::size_t w = c.cell_size * c.block_size + rng.below(100);
    const std::size_t ny = h / c.cell_size, nx = w / c.cell_size;
    const std::size_t by = (ny - c.block_size) / c.block_stride + 1, bx = (nx - c.block_size) / c.block_stride + 1;
    EXPECT_EQ(hog_dim(c, h, w), by * bx * c.block_size * c.block_size * c.bins);
    if (t % 20 == 0) {
      EXPECT_EQ(hog(testing_support::random_image(rng, h, w, 1), c).dim(), hog_dim(c, h, w));
    }
  }
}

TEST(Hog, ConfigValidation) {
  HogConfig c;
  c.cell_size = 1;
  EXPECT_THROW(c.validate(), InputError);
  c = {};
  c.bins = 1;
  EXPECT_THROW(c.validate(), InputError);
  c = {};
  c.clip = 0.0;
  EXPECT_THROW(c.validate(), InputError);
  c = {};
  c.block_size = 0;
  EXPECT_THROW(c.validate(), InputError);
}

TEST(Hog, ConstantImageIsAllZero) {
  const auto f = hog(ImageTensor(299, 299, 3, 0.7), HogConfig{});
  ASSERT_EQ(f.dim(), 36U);
  for (double v : f.values) EXPECT_EQ(v, 0.0);
}

TEST(Hog, VerticalStepEdgeVotesAtZeroDegrees) {
  ImageTensor im(256, 256, 1, 0.0);
  for (std::size_t r = 0; r < 256; ++r)
    for (std::size_t c = 128; c < 256; ++c) im.at(r, c) = 1.0;
  HogConfig cfg;
  const auto hist = cell_histograms(im, cfg);
  // Theta = 0 sits halfway between the centres of bin 0 (10 deg) and bin 8 (170 deg).
  double total = 0.0, at_zero = 0.0;
  for (std::size_t cell = 0; cell < 4; ++cell) {
    for (std::size_t b = 0; b < 9; ++b) {
      total += hist[cell * 9 + b];
      if (b == 0 || b == 8) at_zero += hist[cell * 9 + b];
    }
    EXPECT_DOUBLE_EQ(hist[cell * 9 + 0], hist[cell * 9 + 8]);
  }
  EXPECT_GT(total, 0.0);
  EXPECT_DOUBLE_EQ(at_zero, total);
}

TEST(Hog, MatchesReferenceOnRandomImages) {
  Rng rng(3);
  for (int t = 0; t < 6; ++t) {
    HogConfig cfg;
    cfg.cell_size = 16 + rng.below(40);
    cfg.signed_orientation = t % 2 == 1;
    cfg.bins = 6 + rng.below(6);
    const auto im = testing_support::random_image(rng, 2 * cfg.cell_size + rng.below(60),
                                                  2 * cfg.cell_size + rng.below(60), t % 3 == 0 ? 1 : 3);
    const auto f = hog(im, cfg);
    const auto ref = oracle_hog(im, cfg);
    ASSERT_EQ(f.dim(), ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(f.values[i], ref[i], 1e-9) << i;
  }
}

TEST(Hog, FullSizeMatchesReference) {
  Rng rng(4);
  const auto im = testing_support::random_image(rng, 299, 299, 3);
  const auto f = hog(im, HogConfig{});
  const auto ref = oracle_hog(im, HogConfig{});
  for (std::size_t i = 0; i < 36; ++i) EXPECT_NEAR(f.values[i], ref[i], 1e-5);
}

TEST(Hog, QuarterTurnShiftsBinsByHalf) {
  Rng rng(5);
  HogConfig cfg;
  cfg.cell_size = 16;
  cfg.bins = 8;
  const std::size_t n = 64, cells = n / cfg.cell_size;
  for (int t = 0; t < 3; ++t) {
    const auto im = testing_support::random_image(rng, n, n, 3);
    const auto a = cell_histograms(im, cfg);
    const auto b = cell_histograms(rotate_quarter(im, 1), cfg);
    for (std::size_t cy = 0; cy < cells; ++cy)
      for (std::size_t cx = 0; cx < cells; ++cx)
        for (std::size_t bin = 0; bin < 8; ++bin) {
          // Cell (cy, cx) moves to (cx, cells - 1 - cy); angles gain 90 degrees.
          const double orig = a[(cy * cells + cx) * 8 + bin];
          const double rot = b[(cx * cells + (cells - 1 - cy)) * 8 + (bin + 4) % 8];
          EXPECT_NEAR(orig, rot, 1e-9 * std::max(1.0, orig));
        }
  }
}

TEST(Hog, ScaleInvariant) {
  Rng rng(6);
  HogConfig cfg;
  cfg.cell_size = 32;
  for (int t = 0; t < 5; ++t) {
    const auto im = testing_support::smooth_image(rng, 128, 128, 3);
    const auto base = hog(im, cfg);
    for (double alpha : {0.1, 0.5, 3.0}) {
      ImageTensor scaled = im;
      for (auto& v : scaled.values()) v *= alpha;
      const auto f = hog(scaled, cfg);
      for (std::size_t i = 0; i < f.dim(); ++i) EXPECT_NEAR(f.values[i], base.values[i], 1e-5);
    }
  }
}

TEST(Hog, NonNegativeWithBoundedBlockNorm) {
  Rng rng(7);
  HogConfig cfg;
  cfg.cell_size = 8;
  cfg.block_size = 2;
  const std::size_t block_len = 4 * cfg.bins;
  for (int t = 0; t < 10; ++t) {
    const auto f = hog(testing_support::random_image(rng, 40 + rng.below(30), 40 + rng.below(30), 3), cfg);
    for (std::size_t b = 0; b < f.dim(); b += block_len) {
      double n = 0.0;
      for (std::size_t i = b; i < b + block_len; ++i) {
        EXPECT_GE(f.values[i], 0.0);
        n += f.values[i] * f.values[i];
      }
      EXPECT_LE(std::sqrt(n), 1.0 + 1e-6);
    }
  }
}

TEST(Hog, NonFiniteInputRejected) {
  ImageTensor im(256, 256, 1, 0.5);
  im.at(3, 3) = std::nan("");
  EXPECT_THROW(hog(im, HogConfig{}), InputError);
}

TEST(Hog, SoftSpatialKeepsTotalVoteInsideInterior) {
  // Interior pixels spread their vote over up to four cells; on a 4x4-cell
  // image the total histogram mass of a uniform ramp is unchanged.
  ImageTensor im(64, 64, 1);
  for (std::size_t r = 0; r < 64; ++r)
    for (std::size_t c = 0; c < 64; ++c) im.at(r, c) = 0.01 * static_cast<double>(c);
  HogConfig hard;
  hard.cell_size = 16;
  HogConfig soft = hard;
  soft.soft_spatial = true;
  const auto a = cell_histograms(im, hard);
  const auto b = cell_histograms(im, soft);
  double sa = 0, sb = 0;
  for (double v : a) sa += v;
  for (double v : b) sb += v;
  EXPECT_LT(sb, sa);  // border half-cells lose the share that falls outside
  EXPECT_GT(sb, 0.7 * sa);
}
