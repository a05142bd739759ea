#include "histofuse/backend.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>

#include "binary_io.hpp"
#include "histofuse/error.hpp"
#include "histofuse/log.hpp"
#include "histofuse/parallel.hpp"
#include "histofuse/rng.hpp"

namespace histofuse {

namespace {

using nlohmann::json;

std::string join(const std::vector<std::string>& names) {
  std::string out;
  for (const auto& n : names) {
    if (!out.empty()) out += ", ";
    out += n;
  }
  return out;
}

std::array<double, 3> triple(const json& j, const char* key, std::array<double, 3> fallback) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (v.is_number()) {
    const double x = v.get<double>();
    return {x, x, x};
  }
  if (!v.is_array() || v.size() != 3) {
    throw InputError(std::string("sidecar '") + key + "' must be a number or three numbers");
  }
  return {v[0].get<double>(), v[1].get<double>(), v[2].get<double>()};
}

// Static element count per sample from declared shape info, 0 when unknown.
std::size_t declared_dim(const onnx::Graph& g, const std::string& name) {
  auto check = [&](const std::vector<onnx::ValueInfo>& infos) -> std::size_t {
    for (const auto& v : infos) {
      if (v.name != name || !v.has_shape || v.shape.empty()) continue;
      std::size_t n = 1;
      for (std::size_t i = 1; i < v.shape.size(); ++i) {
        if (v.shape[i].value <= 0) return 0;
        n *= static_cast<std::size_t>(v.shape[i].value);
      }
      return n;
    }
    return 0;
  };
  if (auto n = check(g.outputs)) return n;
  return check(g.value_info);
}

}  // namespace

std::filesystem::path sidecar_path(const std::filesystem::path& model_path) {
  auto p = model_path;
  p.replace_filename(model_path.stem().string() + ".meta.json");
  return p;
}

BackendMeta read_backend_meta(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(detail::read_text_file(path.string()));
  } catch (const json::exception& e) {
    throw InputError(path.string() + ": " + e.what());
  }
  BackendMeta m;
  try {
    m.input_name = j.value("input_name", std::string{});
    m.output_name = j.value("output_name", m.output_name);
    m.input_side = j.value("input_side", m.input_side);
    m.scale = triple(j, "scale", m.scale);
    m.offset = triple(j, "offset", m.offset);
    if (j.contains("class_output") && !j.at("class_output").is_null()) {
      m.class_output = j.at("class_output").get<std::string>();
    }
  } catch (const json::exception& e) {
    throw InputError(path.string() + ": " + e.what());
  }
  if (m.input_side == 0) throw InputError(path.string() + ": input_side must be positive");
  return m;
}

void write_backend_meta(const std::filesystem::path& path, const BackendMeta& meta) {
  json j;
  j["input_name"] = meta.input_name;
  j["output_name"] = meta.output_name;
  j["input_side"] = meta.input_side;
  j["scale"] = meta.scale;
  j["offset"] = meta.offset;
  if (meta.class_output) j["class_output"] = *meta.class_output;
  detail::write_text_file(path.string(), j.dump(2) + "\n");
}

Backend Backend::load(const std::filesystem::path& model_path,
                      std::optional<std::string> output_name) {
  Backend b;
  b.model_path_ = model_path;
  auto executor = std::make_shared<const onnx::Executor>(onnx::load_model(model_path));
  const auto& graph = executor->model().graph;
  const auto side = sidecar_path(model_path);
  if (std::filesystem::exists(side)) {
    b.meta_ = read_backend_meta(side);
  } else {
    log_warning("no sidecar " + side.string() + "; using identity preprocessing");
  }
  if (output_name) b.meta_.output_name = *output_name;

  const auto inputs = onnx::runtime_inputs(graph);
  if (inputs.empty()) throw InputError(model_path.string() + ": model has no runtime input");
  const onnx::ValueInfo* input = nullptr;
  if (b.meta_.input_name.empty()) {
    input = inputs.front();
    b.meta_.input_name = input->name;
  } else {
    for (const auto* in : inputs) {
      if (in->name == b.meta_.input_name) input = in;
    }
    if (input == nullptr) {
      throw InputError(model_path.string() + ": no input named '" + b.meta_.input_name + "'");
    }
  }
  if (input->has_shape) {
    if (input->shape.size() != 4) {
      throw InputError(model_path.string() + ": input '" + input->name + "' has rank " +
                       std::to_string(input->shape.size()) + ", expected 4 (NCHW)");
    }
    if (input->shape[1].value > 0 && input->shape[1].value != 3) {
      throw InputError(model_path.string() + ": input '" + input->name +
                       "' must have 3 channels");
    }
  }

  auto check_output = [&](const std::string& name, const char* what) {
    if (executor->produces(name)) return;
    throw InputError(model_path.string() + ": no " + what + " named '" + name +
                     "'; available outputs: " + join(executor->value_names()));
  };
  check_output(b.meta_.output_name, "feature output");
  if (b.meta_.class_output) check_output(*b.meta_.class_output, "class output");
  b.executor_ = std::move(executor);

  b.feature_dim_ = declared_dim(graph, b.meta_.output_name);
  if (b.feature_dim_ == 0) {
    const ImageTensor probe(b.meta_.input_side, b.meta_.input_side, 3, 0.0);
    b.feature_dim_ = b.run_named(probe, b.meta_.output_name).size();
  }
  if (b.feature_dim_ == 0) throw InputError(model_path.string() + ": feature output is empty");
  return b;
}

std::vector<float> Backend::run_named(const ImageTensor& image, const std::string& output) const {
  const std::size_t side = meta_.input_side;
  if (image.height() != side || image.width() != side) {
    throw InputError("backend expects " + std::to_string(side) + "x" + std::to_string(side) +
                     " images, got " + std::to_string(image.height()) + "x" +
                     std::to_string(image.width()));
  }
  if (image.channels() != 3 && image.channels() != 1) {
    throw InputError("backend expects RGB or grayscale images");
  }
  const auto s = static_cast<std::int64_t>(side);
  std::vector<float> data(3 * side * side);
  for (std::size_t c = 0; c < 3; ++c) {
    const std::size_t src_c = image.channels() == 1 ? 0 : c;
    float* plane = data.data() + c * side * side;
    for (std::size_t r = 0; r < side; ++r) {
      for (std::size_t col = 0; col < side; ++col) {
        plane[r * side + col] =
            static_cast<float>(image.at(r, col, src_c) * meta_.scale[c] + meta_.offset[c]);
      }
    }
  }
  std::map<std::string, onnx::Tensor> feeds;
  feeds.emplace(meta_.input_name, onnx::Tensor::of_floats({1, 3, s, s}, std::move(data)));
  auto out = executor_->run(feeds, {output});
  auto& t = out.at(output);
  if (t.type != onnx::DataType::float32) throw InputError("output '" + output + "' is not float");
  for (float v : t.floats) {
    if (!std::isfinite(v)) throw NumericError("output '" + output + "' is not finite");
  }
  return std::move(t.floats);
}

std::vector<double> Backend::features(const ImageTensor& image) const {
  const auto f = run_named(image, meta_.output_name);
  if (f.size() != feature_dim_) {
    throw InputError("feature output size " + std::to_string(f.size()) + " differs from " +
                     std::to_string(feature_dim_));
  }
  return {f.begin(), f.end()};
}

FeatureMatrix Backend::extract(std::span<const ImageTensor> images,
                               std::span<const std::string> ids, std::span<const int> labels,
                               std::size_t threads) const {
  if (ids.size() != images.size() || labels.size() != images.size()) {
    throw InputError("extract: images, ids and labels differ in length");
  }
  std::vector<std::vector<float>> rows(images.size());
  parallel_for(images.size(), threads, [&](std::size_t i) {
    try {
      rows[i] = run_named(images[i], meta_.output_name);
    } catch (const NumericError& e) {
      throw NumericError(ids[i] + ": " + e.what());
    } catch (const Error& e) {
      throw InputError(ids[i] + ": " + e.what());
    }
  });
  FeatureMatrix m(FeatureKind::deep, feature_dim_);
  m.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    m.append(ids[i], labels[i], std::span<const float>(rows[i]));
  }
  return m;
}

std::vector<double> Backend::class_scores(const ImageTensor& image) const {
  if (!meta_.class_output) throw InputError("backend declares no class_output");
  const auto s = run_named(image, *meta_.class_output);
  return {s.begin(), s.end()};
}

int Backend::classify(const ImageTensor& image) const {
  const auto s = class_scores(image);
  if (s.empty()) throw InputError("class output is empty");
  return static_cast<int>(std::max_element(s.begin(), s.end()) - s.begin());
}

std::vector<int> baseline_classify(const Backend& backend, std::span<const ImageTensor> images,
                                   std::size_t threads) {
  if (!backend.has_class_output()) {
    log_warning("backend declares no class_output; skipping the backend-as-classifier baseline");
    return {};
  }
  std::vector<int> labels(images.size());
  parallel_for(images.size(), threads,
               [&](std::size_t i) { labels[i] = backend.classify(images[i]); });
  return labels;
}

onnx::Model build_fixture_model(const FixtureModelSpec& spec) {
  const std::size_t d = spec.feature_dim;
  if (d == 0) throw InputError("fixture feature_dim must be positive");
  Rng rng(spec.seed);
  std::vector<float> conv_w = spec.conv_weights;
  if (conv_w.empty()) {
    // Eighths summing to one keep the constant-image response exact.
    for (std::size_t o = 0; o < d; ++o) {
      const auto a = rng.between(1, 6);
      const auto b = rng.between(1, 7 - a);
      conv_w.push_back(static_cast<float>(a) / 8.0F);
      conv_w.push_back(static_cast<float>(b) / 8.0F);
      conv_w.push_back(static_cast<float>(8 - a - b) / 8.0F);
    }
  }
  std::vector<float> conv_b = spec.conv_bias;
  if (conv_b.empty()) conv_b.assign(d, 0.0F);
  if (conv_w.size() != 3 * d || conv_b.size() != d) throw InputError("fixture conv shape mismatch");

  const auto side = static_cast<std::int64_t>(spec.input_side);
  const auto di = static_cast<std::int64_t>(d);
  onnx::Model m;
  m.producer_name = "histofuse-fixture";
  m.graph.name = "fixture";
  onnx::ValueInfo in;
  in.name = "input";
  in.has_shape = true;
  in.shape = {{1, {}}, {3, {}}, {side, {}}, {side, {}}};
  m.graph.inputs.push_back(in);
  m.graph.initializers.push_back(onnx::Tensor::of_floats({di, 3, 1, 1}, conv_w, "conv_w"));
  m.graph.initializers.push_back(onnx::Tensor::of_floats({di}, conv_b, "conv_b"));

  auto node = [&](std::string op, std::vector<std::string> ins, std::string out) {
    onnx::Node n;
    n.op_type = std::move(op);
    n.name = out + "_node";
    n.inputs = std::move(ins);
    n.outputs = {std::move(out)};
    m.graph.nodes.push_back(std::move(n));
    return &m.graph.nodes.back();
  };
  node("Conv", {"input", "conv_w", "conv_b"}, "conv");
  std::string pooled_from = "conv";
  if (spec.relu) {
    node("Relu", {"conv"}, "relu");
    pooled_from = "relu";
  }
  node("GlobalAveragePool", {pooled_from}, "avg_pool");

  auto out_info = [](std::string name, std::vector<std::int64_t> dims) {
    onnx::ValueInfo v;
    v.name = std::move(name);
    v.has_shape = true;
    for (auto x : dims) v.shape.push_back({x, {}});
    return v;
  };
  m.graph.outputs.push_back(out_info("avg_pool", {1, di, 1, 1}));

  if (spec.class_head) {
    std::vector<float> hw = spec.head_weights;
    if (hw.empty()) {
      for (std::size_t i = 0; i < 5 * d; ++i) hw.push_back(static_cast<float>(rng.normal()));
    }
    std::vector<float> hb = spec.head_bias;
    if (hb.empty()) hb.assign(5, 0.0F);
    if (hw.size() != 5 * d || hb.size() != 5) throw InputError("fixture head shape mismatch");
    m.graph.initializers.push_back(onnx::Tensor::of_floats({5, di}, hw, "head_w"));
    m.graph.initializers.push_back(onnx::Tensor::of_floats({5}, hb, "head_b"));
    node("Flatten", {"avg_pool"}, "flat");
    auto* gemm = node("Gemm", {"flat", "head_w", "head_b"}, "class_output");
    onnx::Attribute trans_b;
    trans_b.name = "transB";
    trans_b.type = onnx::Attribute::Type::integer;
    trans_b.i = 1;
    gemm->attributes.push_back(trans_b);
    m.graph.outputs.push_back(out_info("class_output", {1, 5}));
  }
  return m;
}

void write_fixture_model(const std::filesystem::path& model_path, const FixtureModelSpec& spec) {
  onnx::save_model(model_path, build_fixture_model(spec));
  BackendMeta meta;
  meta.input_name = "input";
  meta.output_name = "avg_pool";
  meta.input_side = spec.input_side;
  if (spec.class_head) meta.class_output = "class_output";
  write_backend_meta(sidecar_path(model_path), meta);
}

}  // namespace histofuse
