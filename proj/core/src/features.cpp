#include "histofuse/features.hpp"

#include <cmath>
#include <unordered_map>

#include "binary_io.hpp"

namespace histofuse {

std::string_view feature_kind_name(FeatureKind kind) {
  switch (kind) {
    case FeatureKind::hog: return "hog";
    case FeatureKind::deep: return "deep";
    case FeatureKind::fused: return "fused";
  }
  return "unknown";
}

FeatureKind parse_feature_kind(std::string_view name) {
  if (name == "hog") return FeatureKind::hog;
  if (name == "deep") return FeatureKind::deep;
  if (name == "fused") return FeatureKind::fused;
  throw InputError("unknown feature kind '" + std::string(name) + "' (hog, deep, fused)");
}

void FeatureMatrix::reserve(std::size_t rows) {
  ids_.reserve(rows);
  labels_.reserve(rows);
  values_.reserve(rows * dim_);
}

void FeatureMatrix::append(std::string id, int label, std::span<const float> row) {
  if (row.size() != dim_) {
    throw InputError("row for '" + id + "' has dimension " + std::to_string(row.size()) +
                     ", matrix expects " + std::to_string(dim_));
  }
  for (float v : row) {
    if (!std::isfinite(v)) throw InputError("non-finite feature value in row '" + id + "'");
  }
  ids_.push_back(std::move(id));
  labels_.push_back(label);
  values_.insert(values_.end(), row.begin(), row.end());
}

void FeatureMatrix::append(std::string id, int label, std::span<const double> row) {
  std::vector<float> narrowed(row.begin(), row.end());
  append(std::move(id), label, std::span<const float>(narrowed));
}

FeatureMatrix FeatureMatrix::subset(std::span<const std::size_t> positions) const {
  FeatureMatrix out(kind_, dim_);
  out.reserve(positions.size());
  for (std::size_t p : positions) {
    if (p >= rows()) throw InputError("row index out of range");
    out.ids_.push_back(ids_[p]);
    out.labels_.push_back(labels_[p]);
    const auto r = row(p);
    out.values_.insert(out.values_.end(), r.begin(), r.end());
  }
  return out;
}

FeatureMatrix FeatureMatrix::select(std::span<const std::string> ids) const {
  std::unordered_map<std::string_view, std::size_t> index;
  index.reserve(ids_.size());
  for (std::size_t i = 0; i < ids_.size(); ++i) index.emplace(ids_[i], i);
  std::vector<std::size_t> positions;
  positions.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = index.find(id);
    if (it == index.end()) throw InputError("feature matrix has no row '" + id + "'");
    positions.push_back(it->second);
  }
  return subset(positions);
}

namespace {
constexpr char kMagic[4] = {'H', 'F', 'V', '1'};
}

std::vector<std::uint8_t> encode_feature_store(const FeatureMatrix& m) {
  detail::ByteWriter w;
  w.raw(std::string_view(kMagic, 4));
  w.u8(static_cast<std::uint8_t>(m.kind()));
  w.u32(static_cast<std::uint32_t>(m.rows()));
  w.u32(static_cast<std::uint32_t>(m.dim()));
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto& id = m.ids()[i];
    if (id.size() > 0xFFFF) throw InputError("sample id longer than 65535 bytes: " + id.substr(0, 64));
    if (m.labels()[i] < 0) throw InputError("negative label for '" + id + "'");
    w.u32(static_cast<std::uint32_t>(m.labels()[i]));
    w.u16(static_cast<std::uint16_t>(id.size()));
    w.raw(id);
    for (float v : m.row(i)) w.f32(v);
  }
  return w.take();
}

FeatureMatrix decode_feature_store(std::span<const std::uint8_t> bytes) {
  using K = FeatureStoreError::Kind;
  if (bytes.size() < 4) throw FeatureStoreError(K::truncated, "feature store truncated: no magic");
  if (!std::equal(bytes.begin(), bytes.begin() + 4, kMagic)) {
    throw FeatureStoreError(K::bad_magic, "feature store has bad magic (expected HFV1)");
  }
  try {
    detail::ByteReader r(bytes.subspan(4));
    const std::uint8_t kind = r.u8();
    if (kind > 2) {
      throw FeatureStoreError(K::bad_kind, "feature store has unknown kind " + std::to_string(kind));
    }
    const std::uint32_t rows = r.u32();
    const std::uint32_t dim = r.u32();
    FeatureMatrix m(static_cast<FeatureKind>(kind), dim);
    // Each row needs at least 6 + 4*dim bytes; refuse absurd headers early.
    const std::uint64_t min_bytes = static_cast<std::uint64_t>(rows) * (6ULL + 4ULL * dim);
    if (min_bytes > r.remaining()) {
      throw FeatureStoreError(K::truncated, "feature store truncated: header promises " +
                                                std::to_string(rows) + " rows of dimension " +
                                                std::to_string(dim));
    }
    m.reserve(rows);
    std::vector<float> row(dim);
    for (std::uint32_t i = 0; i < rows; ++i) {
      const auto label = static_cast<int>(r.u32());
      const std::uint16_t len = r.u16();
      std::string id = r.raw(len);
      for (auto& v : row) v = r.f32();
      m.append(std::move(id), label, std::span<const float>(row));
    }
    if (!r.done()) {
      throw FeatureStoreError(K::dim_mismatch, "feature store payload does not match its header: " +
                                                   std::to_string(r.remaining()) + " trailing bytes");
    }
    return m;
  } catch (const detail::TruncatedError& e) {
    throw FeatureStoreError(K::truncated, std::string("feature store truncated: ") + e.what());
  }
}

void write_feature_store(const std::filesystem::path& path, const FeatureMatrix& matrix) {
  const auto bytes = encode_feature_store(matrix);
  try {
    detail::write_file(path.string(), bytes);
  } catch (const InputError& e) {
    throw FeatureStoreError(FeatureStoreError::Kind::io, e.what());
  }
}

FeatureMatrix read_feature_store(const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = detail::read_file(path.string());
  } catch (const InputError& e) {
    throw FeatureStoreError(FeatureStoreError::Kind::io, e.what());
  }
  return decode_feature_store(bytes);
}

FeatureMatrix fuse(const FeatureMatrix& hog, const FeatureMatrix& deep) {
  if (hog.kind() != FeatureKind::hog || deep.kind() != FeatureKind::deep) {
    throw InputError("fuse expects a hog matrix and a deep matrix, got " +
                     std::string(feature_kind_name(hog.kind())) + " and " +
                     std::string(feature_kind_name(deep.kind())));
  }
  if (hog.rows() != deep.rows()) {
    throw InputError("fuse: row counts differ (" + std::to_string(hog.rows()) + " vs " +
                     std::to_string(deep.rows()) + ")");
  }
  for (std::size_t i = 0; i < hog.rows(); ++i) {
    if (hog.ids()[i] != deep.ids()[i]) {
      throw InputError("fuse: sample ids misaligned at row " + std::to_string(i) + ": '" +
                       hog.ids()[i] + "' vs '" + deep.ids()[i] + "'");
    }
    if (hog.labels()[i] != deep.labels()[i]) {
      throw InputError("fuse: labels disagree for '" + hog.ids()[i] + "'");
    }
  }
  FeatureMatrix out(FeatureKind::fused, hog.dim() + deep.dim());
  out.reserve(hog.rows());
  std::vector<float> row(out.dim());
  for (std::size_t i = 0; i < hog.rows(); ++i) {
    const auto a = hog.row(i);
    const auto b = deep.row(i);
    std::copy(a.begin(), a.end(), row.begin());
    std::copy(b.begin(), b.end(), row.begin() + static_cast<std::ptrdiff_t>(a.size()));
    out.append(hog.ids()[i], hog.labels()[i], std::span<const float>(row));
  }
  return out;
}

Standardizer::Standardizer(std::vector<double> mean, std::vector<double> std)
    : mean_(std::move(mean)), std_(std::move(std)) {
  if (mean_.size() != std_.size()) throw InputError("standardizer mean/std lengths differ");
  for (double& s : std_) s = std::max(s, kStdFloor);
}

Standardizer Standardizer::fit(const FeatureMatrix& train) {
  if (train.rows() < 2) throw InputError("standardizer needs at least two training rows");
  const std::size_t d = train.dim();
  const auto n = static_cast<double>(train.rows());
  std::vector<double> mean(d, 0.0), var(d, 0.0);
  std::vector<float> lo(train.row(0).begin(), train.row(0).end());
  std::vector<float> hi = lo;
  for (std::size_t i = 0; i < train.rows(); ++i) {
    const auto r = train.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      mean[j] += r[j];
      lo[j] = std::min(lo[j], r[j]);
      hi[j] = std::max(hi[j], r[j]);
    }
  }
  for (std::size_t j = 0; j < d; ++j) {
    // Constant columns get their exact value so they map to exactly zero.
    mean[j] = lo[j] == hi[j] ? lo[j] : mean[j] / n;
  }
  for (std::size_t i = 0; i < train.rows(); ++i) {
    const auto r = train.row(i);
    for (std::size_t j = 0; j < d; ++j) {
      const double dv = r[j] - mean[j];
      var[j] += dv * dv;
    }
  }
  for (double& v : var) v = std::sqrt(v / n);
  return Standardizer(std::move(mean), std::move(var));
}

FeatureMatrix Standardizer::apply(const FeatureMatrix& m) const {
  if (m.dim() != mean_.size()) {
    throw InputError("standardizer fitted on dimension " + std::to_string(mean_.size()) +
                     ", got " + std::to_string(m.dim()));
  }
  FeatureMatrix out(m.kind(), m.dim());
  out.reserve(m.rows());
  std::vector<double> row(m.dim());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto r = m.row(i);
    for (std::size_t j = 0; j < m.dim(); ++j) row[j] = (r[j] - mean_[j]) / std_[j];
    out.append(m.ids()[i], m.labels()[i], std::span<const double>(row));
  }
  return out;
}

}  // namespace histofuse
