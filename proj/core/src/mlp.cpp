#include "histofuse/mlp.hpp"

#include <Eigen/Core>
#include <cmath>
#include <numeric>

#include "histofuse/error.hpp"
#include "histofuse/rng.hpp"
#include "model_impl.hpp"

namespace histofuse {

namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const Mat>;
using Map = Eigen::Map<Mat>;
using CVec = Eigen::Map<const Eigen::RowVectorXd>;

void softmax_in_place(Mat& z) {
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    auto row = z.row(i);
    row.array() -= row.maxCoeff();
    row = row.array().exp().matrix();
    row /= row.sum();
  }
}

}  // namespace

MlpNetwork::MlpNetwork(std::size_t input_dim, std::vector<int> hidden, int n_classes)
    : input_dim_(input_dim), n_classes_(n_classes) {
  if (input_dim == 0 || n_classes < 1) throw InputError("mlp: empty input or output layer");
  sizes_.push_back(input_dim);
  for (int h : hidden) {
    if (h <= 0) throw InputError("mlp: hidden widths must be positive");
    sizes_.push_back(static_cast<std::size_t>(h));
  }
  sizes_.push_back(static_cast<std::size_t>(n_classes));
  std::size_t total = 0;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    offsets_.push_back(total);
    total += sizes_[l + 1] * sizes_[l] + sizes_[l + 1];
  }
  params_.assign(total, 0.0);
}

void MlpNetwork::init_he(std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    const double sd = std::sqrt(2.0 / static_cast<double>(sizes_[l]));
    const std::size_t nw = sizes_[l + 1] * sizes_[l];
    double* w = params_.data() + offsets_[l];
    for (std::size_t i = 0; i < nw; ++i) w[i] = sd * rng.normal();
    std::fill(w + nw, w + nw + sizes_[l + 1], 0.0);
  }
}

std::vector<double> MlpNetwork::forward(std::span<const double> x, std::size_t rows) const {
  if (x.size() != rows * input_dim_) throw InputError("mlp: input size mismatch");
  Mat a = CMap(x.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(input_dim_));
  const std::size_t layers = sizes_.size() - 1;
  for (std::size_t l = 0; l < layers; ++l) {
    const auto in = static_cast<Eigen::Index>(sizes_[l]);
    const auto out = static_cast<Eigen::Index>(sizes_[l + 1]);
    CMap w(params_.data() + offsets_[l], out, in);
    CVec b(params_.data() + offsets_[l] + static_cast<std::size_t>(out * in), out);
    Mat z = a * w.transpose();
    z.rowwise() += b;
    if (l + 1 < layers) z = z.cwiseMax(0.0);
    a = std::move(z);
  }
  softmax_in_place(a);
  return {a.data(), a.data() + a.size()};
}

double MlpNetwork::loss_and_gradient(std::span<const double> x, std::span<const int> y,
                                     std::size_t rows, std::vector<double>* grad) const {
  if (x.size() != rows * input_dim_ || y.size() != rows) throw InputError("mlp: batch size mismatch");
  const std::size_t layers = sizes_.size() - 1;
  std::vector<Mat> acts;  // acts[l] is the input to layer l
  acts.reserve(layers + 1);
  acts.emplace_back(CMap(x.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(input_dim_)));
  for (std::size_t l = 0; l < layers; ++l) {
    const auto in = static_cast<Eigen::Index>(sizes_[l]);
    const auto out = static_cast<Eigen::Index>(sizes_[l + 1]);
    CMap w(params_.data() + offsets_[l], out, in);
    CVec b(params_.data() + offsets_[l] + static_cast<std::size_t>(out * in), out);
    Mat z = acts.back() * w.transpose();
    z.rowwise() += b;
    if (l + 1 < layers) z = z.cwiseMax(0.0);
    acts.push_back(std::move(z));
  }
  Mat& logits = acts.back();
  double loss = 0.0;
  for (std::size_t i = 0; i < rows; ++i) {
    auto row = logits.row(static_cast<Eigen::Index>(i));
    const double m = row.maxCoeff();
    const double lse = m + std::log((row.array() - m).exp().sum());
    loss += lse - row(y[i]);
  }
  const double inv = 1.0 / static_cast<double>(rows);
  loss *= inv;
  if (grad == nullptr) return loss;

  grad->assign(params_.size(), 0.0);
  Mat delta = logits;
  softmax_in_place(delta);
  for (std::size_t i = 0; i < rows; ++i) delta(static_cast<Eigen::Index>(i), y[i]) -= 1.0;
  delta *= inv;
  for (std::size_t l = layers; l-- > 0;) {
    const auto in = static_cast<Eigen::Index>(sizes_[l]);
    const auto out = static_cast<Eigen::Index>(sizes_[l + 1]);
    Map gw(grad->data() + offsets_[l], out, in);
    Eigen::Map<Eigen::RowVectorXd> gb(grad->data() + offsets_[l] + static_cast<std::size_t>(out * in), out);
    gw.noalias() = delta.transpose() * acts[l];
    gb = delta.colwise().sum();
    if (l == 0) break;
    CMap w(params_.data() + offsets_[l], out, in);
    Mat prev = delta * w;
    // ReLU derivative: the stored activation is positive where z was.
    prev = (acts[l].array() > 0.0).select(prev, 0.0);
    delta = std::move(prev);
  }
  return loss;
}

namespace detail {

void MlpModel::scores(const double* x, std::size_t rows, std::size_t dim, int n_classes,
                      double* out) const {
  const auto p = net.forward({x, rows * dim}, rows);
  std::copy(p.begin(), p.end(), out);
  (void)n_classes;
}

void MlpModel::write(ByteWriter& w) const {
  std::vector<int> sizes;
  for (auto s : net.layer_sizes()) sizes.push_back(static_cast<int>(s));
  w.i32s(sizes);
  w.f64s(net.parameters());
}

std::shared_ptr<MlpModel> MlpModel::read(ByteReader& r, std::size_t dim, int n_classes) {
  const auto sizes = r.i32s();
  if (sizes.size() < 2 || static_cast<std::size_t>(sizes.front()) != dim || sizes.back() != n_classes) {
    throw InputError("mlp: bad layer block");
  }
  MlpNetwork net(dim, std::vector<int>(sizes.begin() + 1, sizes.end() - 1), n_classes);
  auto params = r.f64s();
  if (params.size() != net.parameter_count()) throw InputError("mlp: bad parameter block");
  net.parameters() = std::move(params);
  return std::make_shared<MlpModel>(std::move(net));
}

}  // namespace detail

TrainedModel train_mlp(const TrainingSet& data, const MlpParams& hp, std::uint64_t seed) {
  if (hp.epochs < 0) throw InputError("mlp: epochs must be >= 0");
  if (hp.batch <= 0) throw InputError("mlp: batch must be positive");
  if (!(hp.learning_rate > 0.0)) throw InputError("mlp: learning_rate must be positive");
  if (static_cast<std::size_t>(hp.batch) > data.rows) {
    throw InputError("mlp: batch " + std::to_string(hp.batch) + " exceeds the " +
                     std::to_string(data.rows) + " training rows");
  }
  MlpNetwork net(data.dim, hp.hidden, data.n_classes);
  net.init_he(derive_seed(seed, 0));

  const std::size_t n = data.rows;
  const auto batch = static_cast<std::size_t>(hp.batch);
  const int step_epochs = std::max(1, (hp.epochs + 2) / 3);
  std::vector<double> velocity(net.parameter_count(), 0.0);
  std::vector<double> grad;
  std::vector<std::uint32_t> order(n);
  std::vector<double> bx;
  std::vector<int> by;
  for (int epoch = 0; epoch < hp.epochs; ++epoch) {
    const double lr = hp.learning_rate * std::pow(hp.lr_decay, epoch / step_epochs);
    std::iota(order.begin(), order.end(), 0U);
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(epoch) + 1));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t m = std::min(batch, n - start);
      bx.resize(m * data.dim);
      by.resize(m);
      for (std::size_t j = 0; j < m; ++j) {
        const auto r = order[start + j];
        std::copy(data.row(r), data.row(r) + data.dim, bx.begin() + static_cast<std::ptrdiff_t>(j * data.dim));
        by[j] = data.y[r];
      }
      const double loss = net.loss_and_gradient(bx, by, m, &grad);
      if (!std::isfinite(loss)) {
        throw NumericError("mlp: loss became non-finite in epoch " + std::to_string(epoch + 1));
      }
      auto& p = net.parameters();
      for (std::size_t k = 0; k < p.size(); ++k) {
        velocity[k] = hp.momentum * velocity[k] - lr * grad[k];
        p[k] += velocity[k];
      }
    }
  }
  return {std::make_shared<detail::MlpModel>(std::move(net)), hp, data.n_classes, data.dim};
}

}  // namespace histofuse
