#include "histofuse/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <nlohmann/json.hpp>
#include <set>

#include "binary_io.hpp"
#include "histofuse/backend.hpp"
#include "histofuse/log.hpp"
#include "histofuse/noise.hpp"
#include "histofuse/parallel.hpp"
#include "histofuse/rng.hpp"

namespace histofuse {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------- outputs

// Files written by the active run_experiment call, renamed on failure.
std::mutex g_written_mutex;
std::vector<fs::path>* g_written = nullptr;

void note_output(const fs::path& path) {
  std::lock_guard lock(g_written_mutex);
  if (g_written != nullptr) g_written->push_back(path);
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw InputError("cannot create directory " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, std::string_view text) {
  note_output(path);
  detail::write_text_file(path.string(), text);
}

template <typename Fn>
auto in_stage(const char* stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const InputError& e) {
    throw StageError(stage, e.what(), true);
  } catch (const std::exception& e) {
    throw StageError(stage, e.what(), false);
  }
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string shortest(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string pair_name(FeatureKind kind, ModelKind model) {
  return std::string(feature_kind_name(kind)) + "_" + std::string(model_kind_name(model));
}

fs::path feature_path(const ExperimentConfig& cfg, FeatureKind kind, std::string_view split) {
  return cfg.output_dir / "features" / (std::string(feature_kind_name(kind)) + "_" + std::string(split) + ".hfv");
}

// ------------------------------------------------------------ config json

template <typename T>
T field(const json& j, const char* key, const T& fallback, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    throw InputError("config: '" + where + key + "' has the wrong type");
  }
}

void reject_unknown(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
  if (!j.is_object()) throw InputError("config: '" + where + "' must be an object");
  for (const auto& [k, v] : j.items()) {
    if (std::none_of(keys.begin(), keys.end(), [&](const char* a) { return k == a; })) {
      throw InputError("config: unknown key '" + where + k + "'");
    }
  }
}

ParamMap param_map_from_json(const json& j, const std::string& where) {
  if (!j.is_object()) throw InputError("config: '" + where + "' must be an object");
  ParamMap out;
  for (const auto& [k, v] : j.items()) {
    if (v.is_number_integer()) out[k] = v.get<long long>();
    else if (v.is_number()) out[k] = v.get<double>();
    else if (v.is_string()) out[k] = v.get<std::string>();
    else if (v.is_boolean()) out[k] = static_cast<long long>(v.get<bool>());
    else throw InputError("config: '" + where + "." + k + "' must be a number or string");
  }
  return out;
}

json param_map_to_json(const ParamMap& params) {
  json j = json::object();
  for (const auto& [k, v] : params) j[k] = std::visit([](const auto& x) { return json(x); }, v);
  return j;
}

std::string_view objective_name(TuneObjective o) {
  return o == TuneObjective::accuracy ? "accuracy" : "neg_log_loss";
}

// ------------------------------------------------------------- extraction

struct SampleRef {
  std::string id;
  int label = 0;
  const Sample* sample = nullptr;
  std::optional<AugmentParams> augment;
};

constexpr std::uint64_t kAugmentStream = 0x4155474D;

std::vector<SampleRef> sample_refs(const ExperimentConfig& cfg, const Dataset& dataset,
                                   const std::vector<std::string>& ids, bool augmented) {
  std::vector<SampleRef> refs;
  for (const auto& id : ids) {
    const Sample& s = dataset.at(id);
    refs.push_back({id, class_id(s.label), &s, std::nullopt});
    if (!augmented || !cfg.augment.enabled) continue;
    const std::uint64_t base = derive_seed(derive_seed(cfg.seed, kAugmentStream), fnv1a64(id));
    for (int k = 0; k < cfg.augment.copies; ++k) {
      const auto params = draw_augment_params(derive_seed(base, static_cast<std::uint64_t>(k)), cfg.augment.max_shift);
      refs.push_back({id + "#aug" + std::to_string(k + 1), class_id(s.label), &s, params});
    }
  }
  return refs;
}

struct Extracted {
  std::map<FeatureKind, FeatureMatrix> sets;  // hog and/or deep, plus fused
  std::vector<int> baseline;                  // backend head labels, if asked
};

class Extractor {
 public:
  Extractor(const ExperimentConfig& cfg, bool hog, bool deep, bool baseline) : cfg_(cfg), hog_(hog), deep_(deep) {
    if (hog_) {
      cfg.hog.validate();
      hog_dim_ = hog_dim(cfg.hog, cfg.image_side, cfg.image_side);
    }
    if (deep_ || baseline) {
      if (cfg.model_path.empty()) throw InputError("deep features need a backend model path");
      backend_ = Backend::load(cfg.model_path, cfg.output_name);
    }
    baseline_ = baseline && backend_ && backend_->has_class_output();
    if (baseline && !baseline_) log_warning("backend has no class_output; baseline method skipped");
  }

  bool baseline() const { return baseline_; }

  Extracted run(const Dataset& dataset, const std::vector<SampleRef>& refs, std::optional<double> snr_db,
                bool want_fused) const {
    const std::size_t n = refs.size();
    const std::size_t ddim = deep_ ? backend_->feature_dim() : 0;
    std::vector<std::vector<double>> hog_rows(n), deep_rows(n);
    std::vector<int> base(baseline_ ? n : 0);
    parallel_for(n, cfg_.threads, [&](std::size_t i) {
      const auto& r = refs[i];
      try {
        ImageTensor img = standardize_size(dataset.load(*r.sample), cfg_.image_side, cfg_.size_mode);
        if (r.augment) img = apply_augment(img, *r.augment);
        if (snr_db) img = inject_noise(img, {*snr_db, cfg_.noise_seed}, r.id);
        if (hog_) hog_rows[i] = hog(img, cfg_.hog).values;
        if (deep_ || baseline_) {
          const std::size_t side = backend_->input_side();
          const ImageTensor input = img.height() == side && img.width() == side ? img : resize_bilinear(img, side, side);
          if (deep_) deep_rows[i] = backend_->features(input);
          if (baseline_) base[i] = backend_->classify(input);
        }
      } catch (const InputError& e) {
        throw InputError(r.id + ": " + e.what());
      } catch (const std::exception& e) {
        throw Error(r.id + ": " + e.what());
      }
    });
    Extracted out;
    auto assemble = [&](FeatureKind kind, std::size_t dim, const std::vector<std::vector<double>>& rows) {
      FeatureMatrix m(kind, dim);
      m.reserve(n);
      for (std::size_t i = 0; i < n; ++i) m.append(refs[i].id, refs[i].label, std::span<const double>(rows[i]));
      out.sets.emplace(kind, std::move(m));
    };
    if (hog_) assemble(FeatureKind::hog, hog_dim_, hog_rows);
    if (deep_) assemble(FeatureKind::deep, ddim, deep_rows);
    if (hog_ && deep_ && want_fused) {
      out.sets.emplace(FeatureKind::fused, fuse(out.sets.at(FeatureKind::hog), out.sets.at(FeatureKind::deep)));
    }
    out.baseline = std::move(base);
    return out;
  }

 private:
  const ExperimentConfig& cfg_;
  bool hog_ = false;
  bool deep_ = false;
  bool baseline_ = false;
  std::size_t hog_dim_ = 0;
  std::optional<Backend> backend_;
};

bool wants(const ExperimentConfig& cfg, FeatureKind kind) {
  return std::find(cfg.feature_kinds.begin(), cfg.feature_kinds.end(), kind) != cfg.feature_kinds.end();
}

std::uint64_t tune_seed(const ExperimentConfig& cfg, FeatureKind kind, ModelKind model) {
  return derive_seed(cfg.tune.seed, static_cast<std::uint64_t>(kind) * 8 + static_cast<std::uint64_t>(model));
}

std::uint64_t train_seed(const ExperimentConfig& cfg, FeatureKind kind, ModelKind model) {
  return derive_seed(cfg.seed, 64 + static_cast<std::uint64_t>(kind) * 8 + static_cast<std::uint64_t>(model));
}

std::vector<ModelKey> model_keys(const ExperimentConfig& cfg) {
  std::vector<ModelKey> keys;
  for (auto kind : cfg.feature_kinds) {
    for (auto model : cfg.models) keys.emplace_back(kind, model);
  }
  return keys;
}

Hyperparams base_hyperparams(const ExperimentConfig& cfg, ModelKind model) {
  auto it = cfg.hyperparams.find(model);
  return it != cfg.hyperparams.end() ? it->second : default_hyperparams(model);
}

const FeatureSplit& split_of(const FeatureBundle& b, FeatureKind kind) {
  auto it = b.sets.find(kind);
  if (it == b.sets.end()) throw InputError("no " + std::string(feature_kind_name(kind)) + " features available");
  return it->second;
}

}  // namespace

// ------------------------------------------------------------------ config

bool ExperimentConfig::needs_hog() const {
  return std::any_of(feature_kinds.begin(), feature_kinds.end(),
                     [](FeatureKind k) { return k != FeatureKind::deep; });
}

bool ExperimentConfig::needs_deep() const {
  return std::any_of(feature_kinds.begin(), feature_kinds.end(),
                     [](FeatureKind k) { return k != FeatureKind::hog; });
}

ExperimentConfig config_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw InputError(std::string("config is not valid JSON: ") + e.what());
  }
  reject_unknown(j,
                 {"dataset_root", "split", "seed", "image_side", "size_mode", "lenient", "augment", "hog", "backend",
                  "feature_kinds", "models", "tune", "hyperparams", "snr_levels", "noise_seed", "baseline",
                  "retune_per_level", "svg", "output_dir", "threads"},
                 "");
  ExperimentConfig c;
  c.dataset_root = field<std::string>(j, "dataset_root", "", "");
  c.seed = field<std::uint64_t>(j, "seed", c.seed, "");
  c.image_side = field<std::size_t>(j, "image_side", c.image_side, "");
  const auto mode = field<std::string>(j, "size_mode", "resize", "");
  if (mode == "resize") c.size_mode = SizeMode::resize;
  else if (mode == "center_crop") c.size_mode = SizeMode::center_crop;
  else throw InputError("config: size_mode must be 'resize' or 'center_crop'");
  c.lenient = field<bool>(j, "lenient", c.lenient, "");
  if (auto it = j.find("split"); it != j.end()) {
    reject_unknown(*it, {"train", "val", "test"}, "split.");
    c.ratios.train = field<double>(*it, "train", c.ratios.train, "split.");
    c.ratios.val = field<double>(*it, "val", c.ratios.val, "split.");
    c.ratios.test = field<double>(*it, "test", c.ratios.test, "split.");
  }
  if (auto it = j.find("augment"); it != j.end()) {
    reject_unknown(*it, {"enabled", "copies", "max_shift"}, "augment.");
    c.augment.enabled = field<bool>(*it, "enabled", c.augment.enabled, "augment.");
    c.augment.copies = field<int>(*it, "copies", c.augment.copies, "augment.");
    c.augment.max_shift = field<int>(*it, "max_shift", c.augment.max_shift, "augment.");
  }
  if (auto it = j.find("hog"); it != j.end()) {
    reject_unknown(*it,
                   {"cell_size", "bins", "block_size", "block_stride", "signed_orientation", "clip", "grayscale",
                    "soft_spatial"},
                   "hog.");
    auto& h = c.hog;
    h.cell_size = field<std::size_t>(*it, "cell_size", h.cell_size, "hog.");
    h.bins = field<std::size_t>(*it, "bins", h.bins, "hog.");
    h.block_size = field<std::size_t>(*it, "block_size", h.block_size, "hog.");
    h.block_stride = field<std::size_t>(*it, "block_stride", h.block_stride, "hog.");
    h.signed_orientation = field<bool>(*it, "signed_orientation", h.signed_orientation, "hog.");
    h.clip = field<double>(*it, "clip", h.clip, "hog.");
    h.grayscale = field<bool>(*it, "grayscale", h.grayscale, "hog.");
    h.soft_spatial = field<bool>(*it, "soft_spatial", h.soft_spatial, "hog.");
  }
  if (auto it = j.find("backend"); it != j.end()) {
    reject_unknown(*it, {"model_path", "output_name"}, "backend.");
    c.model_path = field<std::string>(*it, "model_path", "", "backend.");
    if (it->contains("output_name") && !(*it)["output_name"].is_null()) {
      c.output_name = field<std::string>(*it, "output_name", "", "backend.");
    }
  }
  if (auto it = j.find("feature_kinds"); it != j.end()) {
    c.feature_kinds.clear();
    for (const auto& name : field<std::vector<std::string>>(j, "feature_kinds", {}, "")) {
      c.feature_kinds.push_back(parse_feature_kind(name));
    }
  }
  if (auto it = j.find("models"); it != j.end()) {
    c.models.clear();
    for (const auto& name : field<std::vector<std::string>>(j, "models", {}, "")) {
      c.models.push_back(parse_model_kind(name));
    }
  }
  if (auto it = j.find("tune"); it != j.end()) {
    reject_unknown(*it, {"enabled", "budget", "n_init", "seed", "objective"}, "tune.");
    auto& t = c.tune;
    t.enabled = field<bool>(*it, "enabled", t.enabled, "tune.");
    t.budget = field<std::size_t>(*it, "budget", t.budget, "tune.");
    t.n_init = field<std::size_t>(*it, "n_init", t.n_init, "tune.");
    t.seed = field<std::uint64_t>(*it, "seed", t.seed, "tune.");
    const auto obj = field<std::string>(*it, "objective", "accuracy", "tune.");
    if (obj == "accuracy") t.objective = TuneObjective::accuracy;
    else if (obj == "neg_log_loss") t.objective = TuneObjective::neg_log_loss;
    else throw InputError("config: tune.objective must be 'accuracy' or 'neg_log_loss'");
  }
  if (auto it = j.find("hyperparams"); it != j.end()) {
    if (!it->is_object()) throw InputError("config: 'hyperparams' must be an object");
    for (const auto& [name, params] : it->items()) {
      const ModelKind kind = parse_model_kind(name);
      c.hyperparams[kind] = hyperparams_from_map(kind, param_map_from_json(params, "hyperparams." + name));
    }
  }
  c.snr_levels = field<std::vector<double>>(j, "snr_levels", c.snr_levels, "");
  c.noise_seed = field<std::uint64_t>(j, "noise_seed", c.noise_seed, "");
  c.baseline = field<bool>(j, "baseline", c.baseline, "");
  c.retune_per_level = field<bool>(j, "retune_per_level", c.retune_per_level, "");
  c.svg = field<bool>(j, "svg", c.svg, "");
  c.output_dir = field<std::string>(j, "output_dir", c.output_dir.string(), "");
  c.threads = field<std::size_t>(j, "threads", c.threads, "");
  return c;
}

ExperimentConfig read_config(const fs::path& path) {
  const std::string text = detail::read_text_file(path.string());
  try {
    const json j = json::parse(text);
    if (j.is_object() && j.contains("config") && j.contains("outputs")) return config_from_json(j["config"].dump());
  } catch (const json::exception& e) {
    throw InputError(path.string() + ": " + e.what());
  }
  try {
    return config_from_json(text);
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

std::string config_to_json(const ExperimentConfig& c) {
  json j;
  j["dataset_root"] = c.dataset_root.string();
  j["split"] = {{"train", c.ratios.train}, {"val", c.ratios.val}, {"test", c.ratios.test}};
  j["seed"] = c.seed;
  j["image_side"] = c.image_side;
  j["size_mode"] = c.size_mode == SizeMode::resize ? "resize" : "center_crop";
  j["lenient"] = c.lenient;
  j["augment"] = {{"enabled", c.augment.enabled}, {"copies", c.augment.copies}, {"max_shift", c.augment.max_shift}};
  j["hog"] = {{"cell_size", c.hog.cell_size},
              {"bins", c.hog.bins},
              {"block_size", c.hog.block_size},
              {"block_stride", c.hog.block_stride},
              {"signed_orientation", c.hog.signed_orientation},
              {"clip", c.hog.clip},
              {"grayscale", c.hog.grayscale},
              {"soft_spatial", c.hog.soft_spatial}};
  j["backend"] = {{"model_path", c.model_path.string()},
                  {"output_name", c.output_name ? json(*c.output_name) : json(nullptr)}};
  j["feature_kinds"] = json::array();
  for (auto k : c.feature_kinds) j["feature_kinds"].push_back(feature_kind_name(k));
  j["models"] = json::array();
  for (auto m : c.models) j["models"].push_back(model_kind_name(m));
  j["tune"] = {{"enabled", c.tune.enabled},
               {"budget", c.tune.budget},
               {"n_init", c.tune.n_init},
               {"seed", c.tune.seed},
               {"objective", objective_name(c.tune.objective)}};
  j["hyperparams"] = json::object();
  for (const auto& [kind, hp] : c.hyperparams) {
    j["hyperparams"][std::string(model_kind_name(kind))] = param_map_to_json(to_param_map(hp));
  }
  j["snr_levels"] = c.snr_levels;
  j["noise_seed"] = c.noise_seed;
  j["baseline"] = c.baseline;
  j["retune_per_level"] = c.retune_per_level;
  j["svg"] = c.svg;
  j["output_dir"] = c.output_dir.string();
  j["threads"] = c.threads;
  return j.dump(2) + "\n";
}

void validate_config(const ExperimentConfig& c) {
  if (c.dataset_root.empty()) throw InputError("config: dataset_root is required");
  if (!fs::is_directory(c.dataset_root)) throw InputError("dataset root not found: " + c.dataset_root.string());
  if (c.feature_kinds.empty()) throw InputError("config: at least one feature kind is required");
  if (c.models.empty()) throw InputError("config: at least one model is required");
  if (std::set<FeatureKind>(c.feature_kinds.begin(), c.feature_kinds.end()).size() != c.feature_kinds.size()) {
    throw InputError("config: feature kinds repeat");
  }
  if (std::set<ModelKind>(c.models.begin(), c.models.end()).size() != c.models.size()) {
    throw InputError("config: models repeat");
  }
  const auto& r = c.ratios;
  if (!(r.train > 0.0 && r.val >= 0.0 && r.test > 0.0) || std::abs(r.train + r.val + r.test - 1.0) > 1e-9) {
    throw InputError("config: split ratios must be non-negative, train and test positive, summing to 1");
  }
  if (c.image_side < 8) throw InputError("config: image_side must be at least 8");
  if (c.augment.copies < 0) throw InputError("config: augment.copies must be non-negative");
  if (c.augment.max_shift < 0) throw InputError("config: augment.max_shift must be non-negative");
  if (c.needs_hog()) {
    c.hog.validate();
    hog_layout(c.hog, c.image_side, c.image_side);
  }
  if (c.needs_deep() || (c.baseline && !c.model_path.empty())) {
    if (c.model_path.empty()) throw InputError("config: deep features need backend.model_path");
    if (!fs::is_regular_file(c.model_path)) throw InputError("backend model not found: " + c.model_path.string());
  }
  if (c.tune.enabled) {
    if (c.tune.n_init == 0) throw InputError("config: tune.n_init must be positive");
    if (c.tune.budget < c.tune.n_init) throw InputError("config: tune.budget is smaller than tune.n_init");
    if (r.val <= 0.0) throw InputError("config: tuning needs a validation split");
  }
  for (double s : c.snr_levels) {
    if (!std::isfinite(s)) throw InputError("config: SNR levels must be finite");
  }
  if (c.threads == 0) throw InputError("config: threads must be positive");
}

// ---------------------------------------------------------------- features

FeatureBundle extract_features(const ExperimentConfig& cfg) {
  in_stage("config", [&] { validate_config(cfg); });
  in_stage("output", [&] { ensure_dir(cfg.output_dir / "features"); });
  const Dataset dataset = in_stage("ingest", [&] { return ingest(cfg.dataset_root, {cfg.lenient, cfg.threads}); });
  FeatureBundle bundle;
  bundle.split = in_stage("split", [&] {
    auto s = split(dataset, cfg.ratios, cfg.seed);
    const auto path = cfg.output_dir / "split.json";
    note_output(path);
    write_split_manifest(path, s);
    return s;
  });
  in_stage("features", [&] {
    const Extractor ex(cfg, cfg.needs_hog(), cfg.needs_deep(), false);
    const std::pair<const char*, const std::vector<std::string>*> parts[] = {
        {"train", &bundle.split.train}, {"val", &bundle.split.val}, {"test", &bundle.split.test}};
    for (const auto& [name, ids] : parts) {
      const bool train = std::string_view(name) == "train";
      Extracted e = ex.run(dataset, sample_refs(cfg, dataset, *ids, train), std::nullopt, wants(cfg, FeatureKind::fused));
      for (auto& [kind, m] : e.sets) {
        const auto path = feature_path(cfg, kind, name);
        note_output(path);
        write_feature_store(path, m);
        if (!wants(cfg, kind)) continue;
        auto& fsplit = bundle.sets[kind];
        (train ? fsplit.train : std::string_view(name) == "val" ? fsplit.val : fsplit.test) = std::move(m);
      }
    }
  });
  return bundle;
}

FeatureBundle load_features(const ExperimentConfig& cfg) {
  return in_stage("features", [&] {
    FeatureBundle b;
    b.split = read_split_manifest(cfg.output_dir / "split.json");
    for (auto kind : cfg.feature_kinds) {
      auto& s = b.sets[kind];
      s.train = read_feature_store(feature_path(cfg, kind, "train"));
      s.val = read_feature_store(feature_path(cfg, kind, "val"));
      s.test = read_feature_store(feature_path(cfg, kind, "test"));
    }
    return b;
  });
}

// ------------------------------------------------------------ standardizer

std::map<FeatureKind, Standardizer> fit_standardizers(const FeatureBundle& features) {
  std::map<FeatureKind, Standardizer> out;
  for (const auto& [kind, s] : features.sets) out.emplace(kind, Standardizer::fit(s.train));
  return out;
}

std::string standardizer_to_json(const Standardizer& s) {
  return json{{"mean", s.mean()}, {"std", s.std()}}.dump() + "\n";
}

Standardizer standardizer_from_json(std::string_view text) {
  try {
    const json j = json::parse(text);
    auto mean = j.at("mean").get<std::vector<double>>();
    auto sd = j.at("std").get<std::vector<double>>();
    if (mean.size() != sd.size()) throw InputError("standardizer mean and std differ in length");
    return Standardizer(std::move(mean), std::move(sd));
  } catch (const json::exception& e) {
    throw InputError(std::string("bad standardizer: ") + e.what());
  }
}

// -------------------------------------------------------- tune/train/eval

std::map<ModelKey, TuneOutcome> tune_models(const ExperimentConfig& cfg, const FeatureBundle& features,
                                            const std::map<FeatureKind, Standardizer>& standardizers) {
  return in_stage("tune", [&] {
    const auto keys = model_keys(cfg);
    std::vector<TuneOutcome> outcomes(keys.size());
    if (cfg.tune.enabled) ensure_dir(cfg.output_dir / "histories");
    parallel_for(keys.size(), cfg.threads, [&](std::size_t i) {
      const auto [kind, model] = keys[i];
      outcomes[i].hyperparams = base_hyperparams(cfg, model);
      if (!cfg.tune.enabled) return;
      const auto& s = split_of(features, kind);
      const auto& st = standardizers.at(kind);
      BoSettings bo;
      bo.budget = cfg.tune.budget;
      bo.n_init = cfg.tune.n_init;
      bo.seed = tune_seed(cfg, kind, model);
      auto r = tune(model, default_space(model), st.apply(s.train), st.apply(s.val), bo, cfg.tune.objective,
                    kNumClasses);
      const auto path = cfg.output_dir / "histories" / (pair_name(kind, model) + ".jsonl");
      note_output(path);
      write_history(path, r.history, false);
      log_info("tuned " + pair_name(kind, model) + ": " + describe(r.best));
      outcomes[i] = {r.best, std::move(r.history)};
    });
    std::map<ModelKey, TuneOutcome> out;
    json tuned = json::object();
    for (std::size_t i = 0; i < keys.size(); ++i) {
      tuned[std::string(feature_kind_name(keys[i].first)) + "/" + std::string(model_kind_name(keys[i].second))] =
          param_map_to_json(to_param_map(outcomes[i].hyperparams));
      out.emplace(keys[i], std::move(outcomes[i]));
    }
    ensure_dir(cfg.output_dir);
    write_text(cfg.output_dir / "tuned.json", tuned.dump(2) + "\n");
    return out;
  });
}

std::map<ModelKey, Hyperparams> read_tuned(const fs::path& path) {
  const std::string text = detail::read_text_file(path.string());
  std::map<ModelKey, Hyperparams> out;
  try {
    for (const auto& [key, params] : json::parse(text).items()) {
      const auto slash = key.find('/');
      if (slash == std::string::npos) throw InputError(path.string() + ": bad key '" + key + "'");
      const auto kind = parse_feature_kind(key.substr(0, slash));
      const auto model = parse_model_kind(key.substr(slash + 1));
      out.emplace(ModelKey{kind, model}, hyperparams_from_map(model, param_map_from_json(params, key)));
    }
  } catch (const json::exception& e) {
    throw InputError(path.string() + ": " + e.what());
  }
  return out;
}

std::vector<ModelRun> train_models(const ExperimentConfig& cfg, const FeatureBundle& features,
                                   const std::map<FeatureKind, Standardizer>& standardizers,
                                   const std::map<ModelKey, Hyperparams>& hyperparams) {
  return in_stage("train", [&] {
    ensure_dir(cfg.output_dir / "models");
    for (const auto& [kind, st] : standardizers) {
      write_text(cfg.output_dir / "models" / (std::string(feature_kind_name(kind)) + "_standardizer.json"),
                 standardizer_to_json(st));
    }
    const auto keys = model_keys(cfg);
    std::vector<std::optional<TrainedModel>> models(keys.size());
    parallel_for(keys.size(), cfg.threads, [&](std::size_t i) {
      const auto [kind, model] = keys[i];
      auto it = hyperparams.find(keys[i]);
      const Hyperparams hp = it != hyperparams.end() ? it->second : base_hyperparams(cfg, model);
      const auto train_set = standardizers.at(kind).apply(split_of(features, kind).train);
      models[i] = train(train_set, hp, train_seed(cfg, kind, model), kNumClasses);
      const auto path = cfg.output_dir / "models" / (pair_name(kind, model) + ".json");
      note_output(path);
      models[i]->save(path);
    });
    std::vector<ModelRun> runs;
    for (std::size_t i = 0; i < keys.size(); ++i) runs.push_back({keys[i].first, *models[i], std::nullopt, {}});
    return runs;
  });
}

std::vector<ReportRow> evaluate_models(const ExperimentConfig& cfg, const FeatureBundle& features,
                                       const std::map<FeatureKind, Standardizer>& standardizers,
                                       std::vector<ModelRun>& runs) {
  return in_stage("eval", [&] {
    std::map<FeatureKind, FeatureMatrix> tests;
    for (const auto& run : runs) {
      if (!tests.contains(run.feature_kind)) {
        tests.emplace(run.feature_kind, standardizers.at(run.feature_kind).apply(split_of(features, run.feature_kind).test));
      }
    }
    parallel_for(runs.size(), cfg.threads, [&](std::size_t i) {
      runs[i].report = evaluate(runs[i].model, tests.at(runs[i].feature_kind));
    });
    std::vector<ReportRow> rows;
    for (const auto& run : runs) {
      const std::string kind(feature_kind_name(run.feature_kind));
      const std::string model(model_kind_name(run.model.kind()));
      rows.push_back({model, kind, std::nullopt, run.report.auc_macro, run.report.accuracy});
      const auto dir = cfg.output_dir / "roc" / kind;
      ensure_dir(dir);
      for (std::size_t c = 0; c < run.report.roc.size(); ++c) {
        if (run.report.roc[c].empty()) continue;
        const std::string stem = "roc_" + model + "_" + std::string(kClassNames.at(c));
        note_output(dir / (stem + ".csv"));
        write_roc_csv(dir / (stem + ".csv"), run.report.roc[c]);
        if (cfg.svg) {
          note_output(dir / (stem + ".svg"));
          write_roc_svg(dir / (stem + ".svg"), run.report.roc[c], model + " / " + kind + " / " + stem.substr(5 + model.size()));
        }
      }
    }
    write_text(cfg.output_dir / "report.csv", report_csv(rows));
    return rows;
  });
}

ExperimentResult train_and_evaluate(const ExperimentConfig& cfg, FeatureBundle features) {
  ExperimentResult r;
  r.standardizers = in_stage("standardize", [&] { return fit_standardizers(features); });
  auto tuned = tune_models(cfg, features, r.standardizers);
  std::map<ModelKey, Hyperparams> hp;
  for (const auto& [key, t] : tuned) hp.emplace(key, t.hyperparams);
  r.runs = train_models(cfg, features, r.standardizers, hp);
  for (auto& run : r.runs) run.history = tuned.at({run.feature_kind, run.model.kind()}).history;
  r.rows = evaluate_models(cfg, features, r.standardizers, r.runs);
  r.features = std::move(features);
  return r;
}

ExperimentResult load_experiment(const ExperimentConfig& cfg) {
  ExperimentResult r;
  r.features = load_features(cfg);
  in_stage("models", [&] {
    for (auto kind : cfg.feature_kinds) {
      const auto path = cfg.output_dir / "models" / (std::string(feature_kind_name(kind)) + "_standardizer.json");
      r.standardizers.emplace(kind, standardizer_from_json(detail::read_text_file(path.string())));
    }
    for (const auto& [kind, model] : model_keys(cfg)) {
      ModelRun run{kind, TrainedModel::load(cfg.output_dir / "models" / (pair_name(kind, model) + ".json")),
                   std::nullopt, {}};
      const auto hist = cfg.output_dir / "histories" / (pair_name(kind, model) + ".jsonl");
      if (fs::exists(hist)) run.history = read_history(hist);
      const auto test = r.standardizers.at(kind).apply(split_of(r.features, kind).test);
      run.report = evaluate(run.model, test);
      r.rows.push_back({std::string(model_kind_name(model)), std::string(feature_kind_name(kind)), std::nullopt,
                        run.report.auc_macro, run.report.accuracy});
      r.runs.push_back(std::move(run));
    }
  });
  return r;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  std::vector<fs::path> written;
  {
    std::lock_guard lock(g_written_mutex);
    if (g_written != nullptr) throw Error("run_experiment is already running in this process");
    g_written = &written;
  }
  struct Release {
    ~Release() {
      std::lock_guard lock(g_written_mutex);
      g_written = nullptr;
    }
  } release;
  try {
    ExperimentResult r = train_and_evaluate(cfg, extract_features(cfg));
    in_stage("manifest", [&] {
      json outputs = json::object();
      std::vector<fs::path> files = written;
      std::sort(files.begin(), files.end());
      files.erase(std::unique(files.begin(), files.end()), files.end());
      for (const auto& f : files) {
        const auto bytes = detail::read_file(f.string());
        outputs[fs::relative(f, cfg.output_dir).generic_string()] =
            hex64(fnv1a64({reinterpret_cast<const char*>(bytes.data()), bytes.size()}));
      }
      json m;
      m["version"] = "1";
      m["config"] = json::parse(config_to_json(cfg));
      m["seeds"] = {{"master", cfg.seed}, {"tune", cfg.tune.seed}, {"noise", cfg.noise_seed}};
      m["training_data"] = "clean";
      m["retune_per_level"] = cfg.retune_per_level;
      m["outputs"] = outputs;
      m["split_sizes"] = {{"train", r.features.split.train.size()},
                          {"val", r.features.split.val.size()},
                          {"test", r.features.split.test.size()}};
      write_text(cfg.output_dir / "manifest.json", m.dump(2) + "\n");
    });
    return r;
  } catch (const std::exception& e) {
    std::sort(written.begin(), written.end());
    written.erase(std::unique(written.begin(), written.end()), written.end());
    for (const auto& f : written) {
      std::error_code ec;
      if (fs::exists(f, ec)) fs::rename(f, fs::path(f.string() + ".partial"), ec);
    }
    if (dynamic_cast<const StageError*>(&e) != nullptr) throw;
    throw StageError("run", e.what(), dynamic_cast<const InputError*>(&e) != nullptr);
  }
}

// ------------------------------------------------------------------- sweep

std::vector<SweepRow> noise_sweep(const ExperimentConfig& cfg, const ExperimentResult& result,
                                  std::span<const double> levels) {
  if (levels.empty()) throw StageError("sweep", "no SNR levels given", true);
  return in_stage("sweep", [&] {
    for (double l : levels) {
      if (!std::isfinite(l)) throw InputError("SNR levels must be finite");
    }
    const Dataset dataset = ingest(cfg.dataset_root, {cfg.lenient, cfg.threads});
    std::set<FeatureKind> kinds;
    for (const auto& run : result.runs) kinds.insert(run.feature_kind);
    const bool need_hog = kinds.contains(FeatureKind::hog) || kinds.contains(FeatureKind::fused);
    const bool need_deep = kinds.contains(FeatureKind::deep) || kinds.contains(FeatureKind::fused);
    const bool want_baseline = cfg.baseline && !cfg.model_path.empty();
    if (cfg.baseline && cfg.model_path.empty()) log_warning("no backend model; baseline method skipped");
    const Extractor ex(cfg, need_hog, need_deep, want_baseline);
    const auto test_refs = sample_refs(cfg, dataset, result.features.split.test, false);
    std::vector<int> truth;
    for (const auto& r : test_refs) truth.push_back(r.label);

    std::vector<SweepRow> rows;
    for (double level : levels) {
      log_info("sweep at " + shortest(level) + " dB");
      Extracted noisy = ex.run(dataset, test_refs, level, kinds.contains(FeatureKind::fused));
      if (!cfg.retune_per_level) {
        for (const auto& run : result.runs) {
          const auto test = result.standardizers.at(run.feature_kind).apply(noisy.sets.at(run.feature_kind));
          rows.push_back({std::string(feature_kind_name(run.feature_kind)), std::string(model_kind_name(run.model.kind())),
                          level, accuracy(run.model.predict(test), truth)});
        }
      } else {
        // Tune and train again on features of noisy train and val images.
        ExperimentConfig level_cfg = cfg;
        level_cfg.output_dir = cfg.output_dir / "retune" / (shortest(level) + "dB");
        level_cfg.feature_kinds.assign(kinds.begin(), kinds.end());
        FeatureBundle b;
        b.split = result.features.split;
        Extracted tr = ex.run(dataset, sample_refs(cfg, dataset, b.split.train, true), level, kinds.contains(FeatureKind::fused));
        Extracted va = ex.run(dataset, sample_refs(cfg, dataset, b.split.val, false), level, kinds.contains(FeatureKind::fused));
        for (auto k : kinds) b.sets[k] = {tr.sets.at(k), va.sets.at(k), noisy.sets.at(k)};
        const auto st = fit_standardizers(b);
        std::map<ModelKey, Hyperparams> hp;
        for (const auto& [key, t] : tune_models(level_cfg, b, st)) hp.emplace(key, t.hyperparams);
        for (const auto& run : train_models(level_cfg, b, st, hp)) {
          const auto test = st.at(run.feature_kind).apply(b.sets.at(run.feature_kind).test);
          rows.push_back({std::string(feature_kind_name(run.feature_kind)), std::string(model_kind_name(run.model.kind())),
                          level, accuracy(run.model.predict(test), truth)});
        }
      }
      if (ex.baseline()) rows.push_back({std::string(kBaselineMethod), "backend", level, accuracy(noisy.baseline, truth)});
    }
    std::stable_sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) {
      if (a.method != b.method) return a.method < b.method;
      if (a.model != b.model) return a.model < b.model;
      return a.snr_db > b.snr_db;
    });
    ensure_dir(cfg.output_dir);
    write_text(cfg.output_dir / "sweep.csv", sweep_csv(rows));
    return rows;
  });
}

std::string sweep_csv(std::span<const SweepRow> rows) {
  std::string out = "method,model,snr_db,accuracy_pct\n";
  for (const auto& r : rows) {
    out += r.method + "," + r.model + "," + shortest(r.snr_db) + "," + format_percent(r.accuracy) + "\n";
  }
  return out;
}

std::vector<double> parse_snr_levels(std::string_view text) {
  std::vector<double> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = std::min(text.find(',', start), text.size());
    auto item = text.substr(start, comma - start);
    while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
    while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
    double v = 0.0;
    const auto r = std::from_chars(item.data(), item.data() + item.size(), v);
    if (item.empty() || r.ec != std::errc() || r.ptr != item.data() + item.size() || !std::isfinite(v)) {
      throw InputError("bad SNR level '" + std::string(item) + "' in '" + std::string(text) + "'");
    }
    out.push_back(v);
    start = comma + 1;
  }
  return out;
}

}  // namespace histofuse
