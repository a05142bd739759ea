#include "histofuse/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include <nlohmann/json.hpp>

#include "binary_io.hpp"
#include "histofuse/error.hpp"
#include "histofuse/image_io.hpp"
#include "histofuse/log.hpp"
#include "histofuse/parallel.hpp"
#include "histofuse/rng.hpp"

namespace histofuse {

namespace fs = std::filesystem;

Dataset::Dataset(fs::path root, std::vector<Sample> samples)
    : root_(std::move(root)), samples_(std::move(samples)) {
  std::sort(samples_.begin(), samples_.end(),
            [](const Sample& a, const Sample& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < samples_.size(); ++i) {
    if (samples_[i].id == samples_[i - 1].id) {
      throw InputError("duplicate sample id " + samples_[i].id);
    }
  }
}

const Sample& Dataset::at(const std::string& id) const {
  auto it = std::lower_bound(samples_.begin(), samples_.end(), id,
                             [](const Sample& s, const std::string& key) { return s.id < key; });
  if (it == samples_.end() || it->id != id) throw InputError("unknown sample id " + id);
  return *it;
}

bool Dataset::contains(const std::string& id) const {
  auto it = std::lower_bound(samples_.begin(), samples_.end(), id,
                             [](const Sample& s, const std::string& key) { return s.id < key; });
  return it != samples_.end() && it->id == id;
}

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(kNumClasses, 0);
  for (const auto& s : samples_) ++counts[class_id(s.label)];
  return counts;
}

ImageTensor Dataset::load(const Sample& sample) const { return read_image(sample.path); }

Dataset ingest(const fs::path& root, const IngestOptions& options) {
  if (!fs::is_directory(root)) throw InputError("dataset root is not a directory: " + root.string());

  std::vector<fs::path> class_dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    const std::string name = entry.path().filename().string();
    if (name.starts_with('.')) continue;
    if (!entry.is_directory()) {
      log_warning("ignoring file at dataset root: " + name);
      continue;
    }
    if (!parse_class_name(name)) {
      throw InputError("unknown class directory '" + name + "' in " + root.string() +
                       " (expected colon_aca, colon_n, lung_aca, lung_n, lung_scc)");
    }
    class_dirs.push_back(entry.path());
  }
  std::sort(class_dirs.begin(), class_dirs.end());

  std::vector<Sample> candidates;
  for (const auto& dir : class_dirs) {
    const ClassLabel label = *parse_class_name(dir.filename().string());
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (!entry.is_regular_file() || !has_image_extension(entry.path())) continue;
      Sample s;
      s.id = fs::relative(entry.path(), root).generic_string();
      s.label = label;
      s.path = entry.path();
      candidates.push_back(std::move(s));
    }
  }
  std::sort(candidates.begin(), candidates.end(),
            [](const Sample& a, const Sample& b) { return a.id < b.id; });

  std::vector<std::string> errors(candidates.size());
  parallel_for(candidates.size(), options.threads, [&](std::size_t i) {
    try {
      (void)read_image(candidates[i].path);
    } catch (const InputError& e) {
      errors[i] = e.what();
    }
  });

  std::vector<Sample> samples;
  std::string failed;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (errors[i].empty()) {
      samples.push_back(std::move(candidates[i]));
    } else if (options.lenient) {
      log_warning("skipping undecodable image: " + errors[i]);
    } else {
      failed += "\n  " + candidates[i].path.string();
    }
  }
  if (!failed.empty()) throw InputError("undecodable image files:" + failed);
  return Dataset(root, std::move(samples));
}

namespace {

void validate_ratios(const SplitRatios& r) {
  if (!(r.train > 0 && r.val > 0 && r.test > 0)) {
    throw InputError("split ratios must be positive");
  }
  if (std::abs(r.train + r.val + r.test - 1.0) > 1e-9) {
    throw InputError("split ratios must sum to 1");
  }
}

// Hands `units` extra items to classes in order of decreasing remainder
// (lowest class id on ties), respecting per-class capacity. Loops again if
// one pass is not enough.
void distribute(std::vector<std::size_t>& counts, const std::vector<double>& remainders,
                const std::vector<std::size_t>& capacity, long long units) {
  std::vector<std::size_t> order(counts.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainders[a] > remainders[b]; });
  while (units > 0) {
    bool placed = false;
    for (std::size_t c : order) {
      if (units == 0) break;
      if (counts[c] < capacity[c]) {
        ++counts[c];
        --units;
        placed = true;
      }
    }
    if (!placed) break;
  }
}

}  // namespace

DatasetSplit split(const Dataset& dataset, SplitRatios ratios, std::uint64_t seed) {
  validate_ratios(ratios);
  std::vector<std::vector<std::string>> by_class(kNumClasses);
  for (const auto& s : dataset.samples()) by_class[class_id(s.label)].push_back(s.id);
  for (int c = 0; c < kNumClasses; ++c) {
    if (by_class[c].empty()) {
      throw InputError("class " + std::string(kClassNames[c]) + " has no samples");
    }
  }

  const auto total = static_cast<long long>(dataset.size());
  const long long target_val = std::llround(ratios.val * static_cast<double>(total));
  const long long target_test = std::llround(ratios.test * static_cast<double>(total));
  const long long target_train = total - target_val - target_test;

  // Train counts: floor or ceil of the exact quota, at least one per class.
  std::vector<std::size_t> train(kNumClasses), val(kNumClasses);
  std::vector<double> rem(kNumClasses);
  std::vector<std::size_t> cap(kNumClasses);
  long long assigned = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    const double n = static_cast<double>(by_class[c].size());
    const double quota = ratios.train * n;
    const double base = std::floor(quota + 1e-9);
    train[c] = std::max<std::size_t>(1, static_cast<std::size_t>(base));
    rem[c] = quota - base;
    cap[c] = by_class[c].size();
    assigned += static_cast<long long>(train[c]);
  }
  distribute(train, rem, cap, target_train - assigned);

  // Validation from what remains; test takes the rest.
  assigned = 0;
  for (int c = 0; c < kNumClasses; ++c) {
    const std::size_t left = by_class[c].size() - train[c];
    const double quota = ratios.val * static_cast<double>(by_class[c].size());
    const double base = std::floor(quota + 1e-9);
    val[c] = std::min(left, static_cast<std::size_t>(base));
    rem[c] = quota - base;
    cap[c] = left;
    assigned += static_cast<long long>(val[c]);
  }
  distribute(val, rem, cap, target_val - assigned);

  DatasetSplit out;
  out.seed = seed;
  out.ratios = ratios;
  for (int c = 0; c < kNumClasses; ++c) {
    auto ids = by_class[c];
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(c)));
    for (std::size_t i = ids.size(); i > 1; --i) {
      std::swap(ids[i - 1], ids[rng.below(i)]);
    }
    std::size_t pos = 0;
    for (; pos < train[c]; ++pos) out.train.push_back(ids[pos]);
    for (std::size_t k = 0; k < val[c]; ++k, ++pos) out.val.push_back(ids[pos]);
    for (; pos < ids.size(); ++pos) out.test.push_back(ids[pos]);
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

void write_split_manifest(const fs::path& path, const DatasetSplit& s) {
  nlohmann::ordered_json j;
  j["seed"] = s.seed;
  j["ratios"] = {s.ratios.train, s.ratios.val, s.ratios.test};
  j["train"] = s.train;
  j["val"] = s.val;
  j["test"] = s.test;
  detail::write_text_file(path.string(), j.dump(1) + "\n");
}

DatasetSplit read_split_manifest(const fs::path& path) {
  try {
    const auto j = nlohmann::json::parse(detail::read_text_file(path.string()));
    DatasetSplit s;
    s.seed = j.at("seed").get<std::uint64_t>();
    const auto r = j.at("ratios").get<std::vector<double>>();
    if (r.size() != 3) throw InputError("split manifest ratios must have three entries");
    s.ratios = {r[0], r[1], r[2]};
    s.train = j.at("train").get<std::vector<std::string>>();
    s.val = j.at("val").get<std::vector<std::string>>();
    s.test = j.at("test").get<std::vector<std::string>>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("invalid split manifest " + path.string() + ": " + e.what());
  }
}

ImageTensor resize_bilinear(const ImageTensor& image, std::size_t height, std::size_t width) {
  if (image.empty()) throw InputError("cannot resize an empty image");
  if (height == 0 || width == 0) throw InputError("target size must be nonzero");
  if (height == image.height() && width == image.width()) return image;

  const std::size_t ch = image.channels();
  const double sy = static_cast<double>(image.height()) / static_cast<double>(height);
  const double sx = static_cast<double>(image.width()) / static_cast<double>(width);
  const double max_y = static_cast<double>(image.height() - 1);
  const double max_x = static_cast<double>(image.width() - 1);

  ImageTensor out(height, width, ch);
  for (std::size_t y = 0; y < height; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, max_y);
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, image.height() - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, max_x);
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, image.width() - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t k = 0; k < ch; ++k) {
        const double top = image.at(y0, x0, k) * (1.0 - wx) + image.at(y0, x1, k) * wx;
        const double bottom = image.at(y1, x0, k) * (1.0 - wx) + image.at(y1, x1, k) * wx;
        out.at(y, x, k) = top * (1.0 - wy) + bottom * wy;
      }
    }
  }
  return out;
}

ImageTensor center_crop(const ImageTensor& image, std::size_t side) {
  if (image.empty()) throw InputError("cannot crop an empty image");
  if (side == 0) throw InputError("target side must be nonzero");
  if (image.height() < side || image.width() < side) return resize_bilinear(image, side, side);
  const std::size_t top = (image.height() - side) / 2;
  const std::size_t left = (image.width() - side) / 2;
  ImageTensor out(side, side, image.channels());
  for (std::size_t r = 0; r < side; ++r) {
    for (std::size_t c = 0; c < side; ++c) {
      for (std::size_t k = 0; k < image.channels(); ++k) {
        out.at(r, c, k) = image.at(top + r, left + c, k);
      }
    }
  }
  return out;
}

ImageTensor standardize_size(const ImageTensor& image, std::size_t side, SizeMode mode) {
  if (image.empty()) throw InputError("cannot standardize an empty image");
  if (side == 0) throw InputError("target side must be nonzero");
  return mode == SizeMode::resize ? resize_bilinear(image, side, side) : center_crop(image, side);
}

AugmentParams draw_augment_params(std::uint64_t seed, int max_shift) {
  Rng rng(seed);
  AugmentParams p;
  p.quarter_turns = static_cast<int>(rng.below(4));
  p.dx = static_cast<int>(rng.between(-max_shift, max_shift));
  p.dy = static_cast<int>(rng.between(-max_shift, max_shift));
  return p;
}

ImageTensor rotate_quarter(const ImageTensor& image, int quarter_turns) {
  const int k = ((quarter_turns % 4) + 4) % 4;
  if (k == 0) return image;
  const std::size_t h = image.height();
  const std::size_t w = image.width();
  const std::size_t ch = image.channels();
  const bool swap = (k % 2) == 1;
  ImageTensor out(swap ? w : h, swap ? h : w, ch);
  for (std::size_t i = 0; i < out.height(); ++i) {
    for (std::size_t j = 0; j < out.width(); ++j) {
      std::size_t r = 0;
      std::size_t c = 0;
      switch (k) {
        case 1: r = h - 1 - j; c = i; break;
        case 2: r = h - 1 - i; c = w - 1 - j; break;
        default: r = j; c = w - 1 - i; break;
      }
      for (std::size_t m = 0; m < ch; ++m) out.at(i, j, m) = image.at(r, c, m);
    }
  }
  return out;
}

ImageTensor translate(const ImageTensor& image, int dx, int dy) {
  if (dx == 0 && dy == 0) return image;
  const auto h = static_cast<long long>(image.height());
  const auto w = static_cast<long long>(image.width());
  ImageTensor out(image.height(), image.width(), image.channels());
  for (long long r = 0; r < h; ++r) {
    const auto sr = static_cast<std::size_t>(std::clamp(r - dy, 0LL, h - 1));
    for (long long c = 0; c < w; ++c) {
      const auto sc = static_cast<std::size_t>(std::clamp(c - dx, 0LL, w - 1));
      for (std::size_t m = 0; m < image.channels(); ++m) {
        out.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c), m) = image.at(sr, sc, m);
      }
    }
  }
  return out;
}

ImageTensor apply_augment(const ImageTensor& image, const AugmentParams& params) {
  if (image.height() != image.width()) throw InputError("augmentation needs a square image");
  return translate(rotate_quarter(image, params.quarter_turns), params.dx, params.dy);
}

ImageTensor augment(const ImageTensor& image, std::uint64_t seed) {
  return apply_augment(image, draw_augment_params(seed));
}

}  // namespace histofuse
