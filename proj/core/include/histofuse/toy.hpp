#pragma once

#include <cstdint>
#include <filesystem>

#include "histofuse/image.hpp"

namespace histofuse {

/// Synthetic stand-in for the histology corpus: each class has its own tint
/// and stripe orientation, with per-image jitter in colour, phase and period.
struct ToyCorpusSpec {
  std::size_t per_class = 40;
  std::size_t side = 299;
  std::uint64_t seed = 1;
  double stripe_amplitude = 0.06;
  double tint_jitter = 0.05;
};

ImageTensor toy_image(ClassLabel label, std::size_t index, const ToyCorpusSpec& spec);

/// Writes root/<class_name>/toy_<index>.png for every class.
void write_toy_corpus(const std::filesystem::path& root, const ToyCorpusSpec& spec);

}  // namespace histofuse
