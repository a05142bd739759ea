#include "histofuse/classify.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>
#include <sstream>

#include "binary_io.hpp"
#include "histofuse/error.hpp"
#include "model_impl.hpp"

namespace histofuse {

namespace {

using nlohmann::json;

constexpr std::array<std::string_view, 5> kModelNames = {"tree", "gbm", "knn", "mlp", "svm"};

std::string_view metric_name(KnnMetric m) {
  switch (m) {
    case KnnMetric::euclidean: return "euclidean";
    case KnnMetric::manhattan: return "manhattan";
    case KnnMetric::cosine: return "cosine";
  }
  return "euclidean";
}

std::string_view weighting_name(KnnWeighting w) {
  return w == KnnWeighting::uniform ? "uniform" : "inverse-distance";
}

class ParamReader {
 public:
  ParamReader(ModelKind kind, const ParamMap& params) : kind_(kind), params_(params) {}

  void get(const char* name, int& out) {
    if (const auto* v = find(name)) {
      if (const auto* i = std::get_if<long long>(v)) {
        out = static_cast<int>(*i);
      } else if (const auto* d = std::get_if<double>(v); d && std::floor(*d) == *d) {
        out = static_cast<int>(*d);
      } else {
        bad(name, "an integer");
      }
    }
  }
  void get(const char* name, long long& out) {
    if (const auto* v = find(name)) {
      if (const auto* i = std::get_if<long long>(v)) out = *i;
      else if (const auto* d = std::get_if<double>(v); d && std::floor(*d) == *d) out = static_cast<long long>(*d);
      else bad(name, "an integer");
    }
  }
  void get(const char* name, double& out) {
    if (const auto* v = find(name)) {
      if (const auto* d = std::get_if<double>(v)) out = *d;
      else if (const auto* i = std::get_if<long long>(v)) out = static_cast<double>(*i);
      else bad(name, "a number");
    }
  }
  const std::string* text(const char* name) {
    if (const auto* v = find(name)) {
      if (const auto* s = std::get_if<std::string>(v)) return s;
      bad(name, "a string");
    }
    return nullptr;
  }

  void finish() const {
    for (const auto& [name, value] : params_) {
      if (std::find(used_.begin(), used_.end(), name) == used_.end()) {
        throw InputError("unknown " + std::string(model_kind_name(kind_)) + " parameter '" + name + "'");
      }
    }
  }

 private:
  const ParamValue* find(const char* name) {
    used_.emplace_back(name);
    auto it = params_.find(name);
    return it == params_.end() ? nullptr : &it->second;
  }
  [[noreturn]] void bad(const char* name, const char* what) const {
    throw InputError(std::string(model_kind_name(kind_)) + " parameter '" + name + "' must be " + what);
  }

  ModelKind kind_;
  const ParamMap& params_;
  std::vector<std::string> used_;
};

json to_json_value(const ParamValue& v) {
  return std::visit([](const auto& x) { return json(x); }, v);
}

ParamValue from_json_value(const json& j) {
  if (j.is_number_integer()) return j.get<long long>();
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) return j.get<std::string>();
  throw InputError("hyperparameter values must be numbers or strings");
}

}  // namespace

std::string_view model_kind_name(ModelKind kind) {
  return kModelNames[static_cast<std::size_t>(kind)];
}

ModelKind parse_model_kind(std::string_view name) {
  for (std::size_t i = 0; i < kModelNames.size(); ++i) {
    if (kModelNames[i] == name) return static_cast<ModelKind>(i);
  }
  throw InputError("unknown model kind '" + std::string(name) + "' (expected tree, gbm, knn, mlp or svm)");
}

ModelKind kind_of(const Hyperparams& hp) { return static_cast<ModelKind>(hp.index()); }

Hyperparams default_hyperparams(ModelKind kind) {
  switch (kind) {
    case ModelKind::tree: return TreeParams{};
    case ModelKind::gbm: return GbmParams{};
    case ModelKind::knn: return KnnParams{};
    case ModelKind::mlp: return MlpParams{};
    case ModelKind::svm: return SvmParams{};
  }
  throw InputError("unknown model kind");
}

ParamMap to_param_map(const Hyperparams& hp) {
  ParamMap m;
  std::visit(
      [&m](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, TreeParams>) {
          m["max_depth"] = static_cast<long long>(p.max_depth);
          m["min_leaf"] = static_cast<long long>(p.min_leaf);
        } else if constexpr (std::is_same_v<T, GbmParams>) {
          m["rounds"] = static_cast<long long>(p.rounds);
          m["learning_rate"] = p.learning_rate;
          m["max_depth"] = static_cast<long long>(p.max_depth);
          m["subsample"] = p.subsample;
        } else if constexpr (std::is_same_v<T, KnnParams>) {
          m["k"] = static_cast<long long>(p.k);
          m["metric"] = std::string(metric_name(p.metric));
          m["weighting"] = std::string(weighting_name(p.weighting));
        } else if constexpr (std::is_same_v<T, MlpParams>) {
          m["layers"] = static_cast<long long>(p.hidden.size());
          m["width"] = static_cast<long long>(p.hidden.empty() ? 0 : p.hidden.front());
          const bool uniform = std::all_of(p.hidden.begin(), p.hidden.end(),
                                           [&](int w) { return w == p.hidden.front(); });
          if (!uniform) {
            std::string widths;
            for (int w : p.hidden) widths += (widths.empty() ? "" : ",") + std::to_string(w);
            m["widths"] = widths;
          }
          m["learning_rate"] = p.learning_rate;
          m["momentum"] = p.momentum;
          m["epochs"] = static_cast<long long>(p.epochs);
          m["batch"] = static_cast<long long>(p.batch);
          m["lr_decay"] = p.lr_decay;
        } else {
          m["C"] = p.C;
          m["gamma"] = p.gamma;
          m["tolerance"] = p.tolerance;
          m["max_iter"] = p.max_iter;
        }
      },
      hp);
  return m;
}

Hyperparams hyperparams_from_map(ModelKind kind, const ParamMap& params) {
  ParamReader r(kind, params);
  Hyperparams out = default_hyperparams(kind);
  switch (kind) {
    case ModelKind::tree: {
      auto& p = std::get<TreeParams>(out);
      r.get("max_depth", p.max_depth);
      r.get("min_leaf", p.min_leaf);
      break;
    }
    case ModelKind::gbm: {
      auto& p = std::get<GbmParams>(out);
      r.get("rounds", p.rounds);
      r.get("learning_rate", p.learning_rate);
      r.get("max_depth", p.max_depth);
      r.get("subsample", p.subsample);
      break;
    }
    case ModelKind::knn: {
      auto& p = std::get<KnnParams>(out);
      r.get("k", p.k);
      if (const auto* s = r.text("metric")) {
        if (*s == "euclidean") p.metric = KnnMetric::euclidean;
        else if (*s == "manhattan") p.metric = KnnMetric::manhattan;
        else if (*s == "cosine") p.metric = KnnMetric::cosine;
        else throw InputError("unknown knn metric '" + *s + "'");
      }
      if (const auto* s = r.text("weighting")) {
        if (*s == "uniform") p.weighting = KnnWeighting::uniform;
        else if (*s == "inverse-distance" || *s == "distance") p.weighting = KnnWeighting::inverse_distance;
        else throw InputError("unknown knn weighting '" + *s + "'");
      }
      break;
    }
    case ModelKind::mlp: {
      auto& p = std::get<MlpParams>(out);
      int layers = static_cast<int>(p.hidden.size());
      int width = p.hidden.front();
      r.get("layers", layers);
      r.get("width", width);
      if (layers < 0 || width <= 0) throw InputError("mlp layers must be >= 0 and width > 0");
      p.hidden.assign(static_cast<std::size_t>(layers), width);
      if (const auto* s = r.text("widths")) {
        p.hidden.clear();
        std::stringstream ss(*s);
        std::string item;
        while (std::getline(ss, item, ',')) {
          try {
            p.hidden.push_back(std::stoi(item));
          } catch (const std::exception&) {
            throw InputError("mlp widths must be a comma-separated list of integers");
          }
        }
      }
      r.get("learning_rate", p.learning_rate);
      r.get("momentum", p.momentum);
      r.get("epochs", p.epochs);
      r.get("batch", p.batch);
      r.get("lr_decay", p.lr_decay);
      break;
    }
    case ModelKind::svm: {
      auto& p = std::get<SvmParams>(out);
      r.get("C", p.C);
      r.get("gamma", p.gamma);
      r.get("tolerance", p.tolerance);
      r.get("max_iter", p.max_iter);
      break;
    }
  }
  r.finish();
  return out;
}

std::string describe(const Hyperparams& hp) {
  std::ostringstream out;
  out.precision(6);
  out << model_kind_name(kind_of(hp)) << "(";
  bool first = true;
  for (const auto& [name, value] : to_param_map(hp)) {
    out << (first ? "" : ", ") << name << "=";
    std::visit([&out](const auto& v) { out << v; }, value);
    first = false;
  }
  out << ")";
  return out.str();
}

TrainingSet make_training_set(const FeatureMatrix& matrix, int n_classes) {
  TrainingSet t;
  t.rows = matrix.rows();
  t.dim = matrix.dim();
  const auto v = matrix.values();
  t.x.assign(v.begin(), v.end());
  t.y = matrix.labels();
  int max_label = -1;
  for (int l : t.y) {
    if (l < 0) throw InputError("labels must be non-negative");
    max_label = std::max(max_label, l);
  }
  t.n_classes = n_classes > 0 ? n_classes : max_label + 1;
  if (max_label >= t.n_classes) {
    throw InputError("label " + std::to_string(max_label) + " is outside " + std::to_string(t.n_classes) + " classes");
  }
  return t;
}

int argmax(std::span<const double> values) {
  if (values.empty()) throw InputError("argmax of an empty row");
  int best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  }
  return best;
}

TrainedModel::TrainedModel(std::shared_ptr<const detail::ModelImpl> impl, Hyperparams hp,
                           int n_classes, std::size_t feature_dim)
    : impl_(std::move(impl)), hp_(std::move(hp)), n_classes_(n_classes), feature_dim_(feature_dim) {}

ScoreMatrix TrainedModel::predict_scores(std::span<const double> x, std::size_t rows) const {
  if (x.size() != rows * feature_dim_) {
    throw InputError("feature dimension mismatch: model expects " + std::to_string(feature_dim_) +
                     ", input has " + std::to_string(rows == 0 ? 0 : x.size() / rows));
  }
  ScoreMatrix s;
  s.rows = rows;
  s.cols = static_cast<std::size_t>(n_classes_);
  s.values.assign(rows * s.cols, 0.0);
  if (rows > 0) impl_->scores(x.data(), rows, feature_dim_, n_classes_, s.values.data());
  return s;
}

ScoreMatrix TrainedModel::predict_scores(const FeatureMatrix& matrix) const {
  if (matrix.dim() != feature_dim_) {
    throw InputError("feature dimension mismatch: model expects " + std::to_string(feature_dim_) +
                     ", input has " + std::to_string(matrix.dim()));
  }
  const auto v = matrix.values();
  const std::vector<double> x(v.begin(), v.end());
  return predict_scores(x, matrix.rows());
}

std::vector<int> TrainedModel::predict(std::span<const double> x, std::size_t rows) const {
  const auto s = predict_scores(x, rows);
  std::vector<int> out(rows);
  for (std::size_t i = 0; i < rows; ++i) out[i] = argmax(s.row(i));
  return out;
}

std::vector<int> TrainedModel::predict(const FeatureMatrix& matrix) const {
  const auto s = predict_scores(matrix);
  std::vector<int> out(s.rows);
  for (std::size_t i = 0; i < s.rows; ++i) out[i] = argmax(s.row(i));
  return out;
}

std::string TrainedModel::to_json() const {
  json hp = json::object();
  for (const auto& [name, value] : to_param_map(hp_)) hp[name] = to_json_value(value);
  detail::ByteWriter w;
  impl_->write(w);
  json j;
  j["version"] = "1";
  j["kind"] = std::string(model_kind_name(kind()));
  j["n_classes"] = n_classes_;
  j["feature_dim"] = feature_dim_;
  j["hp"] = hp;
  j["params"] = detail::base64_encode(w.bytes());
  return j.dump(2);
}

TrainedModel TrainedModel::from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw InputError(std::string("model JSON: ") + e.what());
  }
  try {
    if (j.value("version", std::string{}) != "1") throw InputError("model JSON: unsupported version");
    const ModelKind kind = parse_model_kind(j.at("kind").get<std::string>());
    const int n_classes = j.at("n_classes").get<int>();
    const auto dim = j.at("feature_dim").get<std::size_t>();
    if (n_classes < 1 || dim < 1) throw InputError("model JSON: bad n_classes or feature_dim");
    ParamMap params;
    for (const auto& [name, value] : j.at("hp").items()) params[name] = from_json_value(value);
    Hyperparams hp = hyperparams_from_map(kind, params);
    const auto bytes = detail::base64_decode(j.at("params").get<std::string>());
    detail::ByteReader r(bytes);
    auto impl = detail::read_model_impl(hp, r, n_classes, dim);
    if (!r.done()) throw InputError("model JSON: trailing bytes in parameter block");
    return {std::move(impl), hp, n_classes, dim};
  } catch (const json::exception& e) {
    throw InputError(std::string("model JSON: ") + e.what());
  }
}

void TrainedModel::save(const std::filesystem::path& path) const {
  detail::write_text_file(path.string(), to_json() + "\n");
}

TrainedModel TrainedModel::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw InputError("model file not found: " + path.string());
  try {
    return from_json(detail::read_text_file(path.string()));
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

namespace detail {

std::shared_ptr<const ModelImpl> read_model_impl(const Hyperparams& hp, ByteReader& r,
                                                 int n_classes, std::size_t dim) {
  switch (kind_of(hp)) {
    case ModelKind::tree: {
      auto tree = read_tree(r, dim);
      for (const auto& n : tree.nodes) {
        if (n.is_leaf() && n.value.size() != static_cast<std::size_t>(n_classes)) {
          throw InputError("tree: bad leaf value");
        }
      }
      return std::make_shared<TreeModel>(std::move(tree));
    }
    case ModelKind::gbm: return GbmModel::read(r, n_classes, dim);
    case ModelKind::knn: return KnnModel::read(r, std::get<KnnParams>(hp), dim);
    case ModelKind::mlp: return MlpModel::read(r, dim, n_classes);
    case ModelKind::svm: return SvmModel::read(r, n_classes, dim);
  }
  throw InputError("unknown model kind");
}

}  // namespace detail

TrainedModel train(const TrainingSet& data, const Hyperparams& hp, std::uint64_t seed) {
  if (data.rows == 0) throw InputError("training set is empty");
  return std::visit(
      [&](const auto& p) -> TrainedModel {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, TreeParams>) return train_tree(data, p);
        else if constexpr (std::is_same_v<T, GbmParams>) return train_gbm(data, p, seed);
        else if constexpr (std::is_same_v<T, KnnParams>) return train_knn(data, p);
        else if constexpr (std::is_same_v<T, MlpParams>) return train_mlp(data, p, seed);
        else return train_svm(data, p, seed);
      },
      hp);
}

TrainedModel train(const FeatureMatrix& matrix, const Hyperparams& hp, std::uint64_t seed,
                   int n_classes) {
  return train(make_training_set(matrix, n_classes), hp, seed);
}

}  // namespace histofuse
