#include <algorithm>
#include <cmath>
#include <numeric>

#include "histofuse/error.hpp"
#include "model_impl.hpp"

namespace histofuse {

namespace {

double distance(const double* a, const double* b, std::size_t dim, KnnMetric metric) {
  switch (metric) {
    case KnnMetric::euclidean: {
      double s = 0.0;
      for (std::size_t j = 0; j < dim; ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
      return std::sqrt(s);
    }
    case KnnMetric::manhattan: {
      double s = 0.0;
      for (std::size_t j = 0; j < dim; ++j) s += std::abs(a[j] - b[j]);
      return s;
    }
    case KnnMetric::cosine: {
      double ab = 0.0;
      double aa = 0.0;
      double bb = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        ab += a[j] * b[j];
        aa += a[j] * a[j];
        bb += b[j] * b[j];
      }
      // A zero vector is treated as orthogonal to everything.
      if (aa == 0.0 || bb == 0.0) return 1.0;
      return 1.0 - ab / std::sqrt(aa * bb);
    }
  }
  return 0.0;
}

}  // namespace

namespace detail {

void KnnModel::scores(const double* x, std::size_t rows_in, std::size_t dim, int n_classes,
                      double* out) const {
  const auto k = static_cast<std::size_t>(hp.k);
  const auto nc = static_cast<std::size_t>(n_classes);
  std::vector<std::pair<double, std::uint32_t>> d(rows);
  for (std::size_t q = 0; q < rows_in; ++q) {
    const double* xq = x + q * dim;
    for (std::size_t i = 0; i < rows; ++i) {
      d[i] = {distance(xq, this->x.data() + i * dim, dim, hp.metric), static_cast<std::uint32_t>(i)};
    }
    // Pairs compare by distance, then index.
    std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end());
    double* s = out + q * nc;
    std::fill(s, s + nc, 0.0);
    if (hp.weighting == KnnWeighting::uniform) {
      for (std::size_t j = 0; j < k; ++j) s[y[d[j].second]] += 1.0;
    } else {
      // Exact matches take all the weight.
      const bool exact = d[0].first == 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        if (exact) {
          if (d[j].first == 0.0) s[y[d[j].second]] += 1.0;
        } else {
          s[y[d[j].second]] += 1.0 / d[j].first;
        }
      }
    }
    double total = 0.0;
    for (std::size_t c = 0; c < nc; ++c) total += s[c];
    for (std::size_t c = 0; c < nc; ++c) s[c] /= total;
  }
}

void KnnModel::write(ByteWriter& w) const {
  w.u64(rows);
  w.f64s(x);
  w.i32s(y);
}

std::shared_ptr<KnnModel> KnnModel::read(ByteReader& r, const KnnParams& hp, std::size_t dim) {
  auto m = std::make_shared<KnnModel>();
  m->hp = hp;
  m->rows = r.u64();
  m->x = r.f64s();
  m->y = r.i32s();
  if (m->x.size() != m->rows * dim || m->y.size() != m->rows) throw InputError("knn: bad data block");
  if (static_cast<std::size_t>(hp.k) > m->rows) throw InputError("knn: k exceeds stored rows");
  return m;
}

}  // namespace detail

TrainedModel train_knn(const TrainingSet& data, const KnnParams& hp) {
  if (hp.k <= 0) throw InputError("knn: k must be positive");
  if (static_cast<std::size_t>(hp.k) > data.rows) {
    throw InputError("knn: k = " + std::to_string(hp.k) + " exceeds the " +
                     std::to_string(data.rows) + " training rows");
  }
  auto m = std::make_shared<detail::KnnModel>();
  m->hp = hp;
  m->rows = data.rows;
  m->x = data.x;
  m->y = data.y;
  return {m, hp, data.n_classes, data.dim};
}

}  // namespace histofuse
