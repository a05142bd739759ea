#include "histofuse/noise.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "histofuse/error.hpp"
#include "histofuse/rng.hpp"

namespace histofuse {

double signal_power(const ImageTensor& image) {
  if (image.empty()) return 0.0;
  double sum = 0.0;
  for (double v : image.values()) sum += v * v;
  return sum / static_cast<double>(image.size());
}

ImageTensor inject_noise(const ImageTensor& image, const NoiseConfig& cfg,
                         std::string_view image_key) {
  if (!std::isfinite(cfg.snr_db)) throw InputError("SNR must be finite");
  const double power = signal_power(image);
  if (!(power > 0.0)) throw InputError("SNR is undefined for an all-zero image");

  Rng rng(derive_seed(cfg.seed, fnv1a64(image_key)));
  std::vector<double> noise(image.size());
  double noise_power = 0.0;
  for (std::size_t i = 0; i < noise.size(); i += 2) {
    const auto [a, b] = rng.normal_pair();
    noise[i] = a;
    if (i + 1 < noise.size()) noise[i + 1] = b;
  }
  for (double n : noise) noise_power += n * n;
  noise_power /= static_cast<double>(noise.size());
  const double target = power / std::pow(10.0, cfg.snr_db / 10.0);
  const double gain = std::sqrt(target / noise_power);

  ImageTensor out = image;
  auto values = out.values();
  for (std::size_t i = 0; i < values.size(); ++i) values[i] += gain * noise[i];
  return out;
}

double measured_snr(const ImageTensor& clean, const ImageTensor& noisy) {
  if (!clean.same_shape(noisy)) throw InputError("measured_snr needs images of equal shape");
  const double power = signal_power(clean);
  if (!(power > 0.0)) throw InputError("SNR is undefined for an all-zero image");
  const auto a = clean.values();
  const auto b = noisy.values();
  double noise = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = b[i] - a[i];
    noise += d * d;
  }
  if (noise == 0.0) return kInfiniteSnr;
  noise /= static_cast<double>(a.size());
  return 10.0 * std::log10(power / noise);
}

ImageTensor clip_unit(const ImageTensor& image) {
  ImageTensor out = image;
  for (double& v : out.values()) v = std::clamp(v, 0.0, 1.0);
  return out;
}

}  // namespace histofuse
