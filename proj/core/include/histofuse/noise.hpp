#pragma once

#include <cstdint>
#include <limits>
#include <string_view>

#include "histofuse/image.hpp"

namespace histofuse {

struct NoiseConfig {
  double snr_db = 40.0;
  std::uint64_t seed = 0;
};

/// Mean of squared values over every pixel and channel.
double signal_power(const ImageTensor& image);

/// x + n with n i.i.d. Gaussian, rescaled so that mean(n^2) is exactly
/// mean(x^2) / 10^(snr_db / 10). The result is not clipped. The noise stream
/// is derived from (cfg.seed, image_key) so each sample gets its own draw.
/// Throws InputError for an all-zero image or a non-finite SNR.
ImageTensor inject_noise(const ImageTensor& image, const NoiseConfig& cfg,
                         std::string_view image_key = {});

inline constexpr double kInfiniteSnr = std::numeric_limits<double>::infinity();

/// 10 log10(mean(clean^2) / mean((noisy - clean)^2)); kInfiniteSnr when the
/// images are identical.
double measured_snr(const ImageTensor& clean, const ImageTensor& noisy);

/// Clips to [0, 1] for viewing. Never used on the feature path.
ImageTensor clip_unit(const ImageTensor& image);

}  // namespace histofuse
