// histofuse command-line driver.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "histofuse/backend.hpp"
#include "histofuse/log.hpp"
#include "histofuse/pipeline.hpp"
#include "histofuse/toy.hpp"

namespace fs = std::filesystem;
using namespace histofuse;

namespace {

struct GlobalOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::size_t> threads;
  bool quiet = false;
};

ExperimentConfig load_config(const GlobalOptions& g) {
  if (g.config.empty()) throw InputError("--config is required for this command");
  ExperimentConfig cfg = read_config(g.config);
  if (g.seed) cfg.seed = *g.seed;
  if (!g.out.empty()) cfg.output_dir = g.out;
  if (g.threads) cfg.threads = *g.threads;
  return cfg;
}

// Prints a CSV file as aligned columns.
void print_table(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::vector<std::size_t> widths;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (widths.size() <= i) widths.push_back(0);
      widths[i] = std::max(widths[i], cells[i].size());
    }
    rows.push_back(std::move(cells));
  }
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) {
      std::printf("%-*s%s", static_cast<int>(widths[i]), r[i].c_str(), i + 1 < r.size() ? "  " : "\n");
    }
  }
}

FeatureMatrix read_split_features(const ExperimentConfig& cfg, FeatureKind kind, const char* split) {
  return read_feature_store(cfg.output_dir / "features" /
                            (std::string(feature_kind_name(kind)) + "_" + split + ".hfv"));
}

int cmd_toy(const std::string& dir, std::size_t per_class, std::size_t side, std::size_t fixture_dim,
            std::uint64_t seed) {
  const fs::path root(dir);
  ToyCorpusSpec spec;
  spec.per_class = per_class;
  spec.side = side;
  spec.seed = seed;
  write_toy_corpus(root / "images", spec);
  FixtureModelSpec fx;
  fx.feature_dim = fixture_dim;
  fx.input_side = side;
  fx.seed = seed;
  write_fixture_model(root / "fixture.onnx", fx);

  ExperimentConfig cfg;
  cfg.dataset_root = root / "images";
  cfg.model_path = root / "fixture.onnx";
  cfg.image_side = side;
  // Keep at least a 2x2 cell grid on small toy images.
  cfg.hog.cell_size = std::min<std::size_t>(cfg.hog.cell_size, side / 2);
  cfg.output_dir = root / "out";
  cfg.tune.budget = 8;
  cfg.tune.n_init = 4;
  std::ofstream(root / "config.json") << config_to_json(cfg);
  std::printf("wrote %zu images, fixture model and %s\n", per_class * kNumClasses,
              (root / "config.json").string().c_str());
  return 0;
}

int run(int argc, char** argv) {
  CLI::App app{"Histopathology feature fusion: HOG and deep features, classifiers, noise sweeps"};
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("--config", g.config, "Experiment config (JSON) or run manifest");
  app.add_option("--seed", g.seed, "Override the master seed");
  app.add_option("--out", g.out, "Override the output directory");
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_flag("-q,--quiet", g.quiet, "Only print warnings");

  auto* toy = app.add_subcommand("toy", "Write a synthetic corpus, fixture backend and config");
  std::string toy_dir = "toy";
  std::size_t per_class = 40;
  std::size_t side = 299;
  std::size_t fixture_dim = 8;
  std::uint64_t toy_seed = 1;
  toy->add_option("dir", toy_dir, "Target directory")->required();
  toy->add_option("--per-class", per_class, "Images per class")->check(CLI::PositiveNumber);
  toy->add_option("--side", side, "Image side in pixels")->check(CLI::Range(8, 4096));
  toy->add_option("--fixture-dim", fixture_dim, "Fixture feature width")->check(CLI::PositiveNumber);
  toy->add_option("--toy-seed", toy_seed, "Seed for the synthetic images");

  auto* ingest_cmd = app.add_subcommand("ingest", "Scan the dataset and print class counts");
  auto* split_cmd = app.add_subcommand("split", "Write the stratified split manifest");
  auto* hog_cmd = app.add_subcommand("hog", "Extract HOG features");
  auto* deep_cmd = app.add_subcommand("deep", "Extract deep features with the backend");
  auto* fuse_cmd = app.add_subcommand("fuse", "Concatenate HOG and deep feature files");
  auto* tune_cmd = app.add_subcommand("tune", "Tune hyperparameters on the validation split");
  auto* train_cmd = app.add_subcommand("train", "Train models (tuned.json if present)");
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate trained models on the test split");
  auto* sweep_cmd = app.add_subcommand("sweep", "Noise sweep over SNR levels");
  auto* report_cmd = app.add_subcommand("report", "Print report.csv and sweep.csv");
  auto* run_cmd = app.add_subcommand("run", "Full experiment, then the noise sweep");

  std::string levels;
  bool svg = false;
  bool retune = false;
  for (auto* c : {sweep_cmd, run_cmd}) {
    c->add_option("--levels", levels, "Comma-separated SNR levels in dB");
    c->add_flag("--retune-per-level", retune, "Tune and train again on noisy data at every level");
  }
  for (auto* c : {eval_cmd, run_cmd}) c->add_flag("--svg", svg, "Also render ROC curves as SVG");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  if (g.quiet) set_log_level(LogLevel::warning);

  if (toy->parsed()) return cmd_toy(toy_dir, per_class, side, fixture_dim, toy_seed);

  ExperimentConfig cfg = load_config(g);
  if (svg) cfg.svg = true;
  if (retune) cfg.retune_per_level = true;
  if (!levels.empty()) cfg.snr_levels = parse_snr_levels(levels);

  if (ingest_cmd->parsed()) {
    const Dataset d = ingest(cfg.dataset_root, {cfg.lenient, cfg.threads});
    const auto counts = d.class_counts();
    for (int c = 0; c < kNumClasses; ++c) {
      std::printf("%-10s %zu\n", std::string(kClassNames[static_cast<std::size_t>(c)]).c_str(),
                  counts[static_cast<std::size_t>(c)]);
    }
    std::printf("%-10s %zu\n", "total", d.size());
  } else if (split_cmd->parsed()) {
    validate_config(cfg);
    const Dataset d = ingest(cfg.dataset_root, {cfg.lenient, cfg.threads});
    const auto s = split(d, cfg.ratios, cfg.seed);
    fs::create_directories(cfg.output_dir);
    write_split_manifest(cfg.output_dir / "split.json", s);
    std::printf("train %zu  val %zu  test %zu\n", s.train.size(), s.val.size(), s.test.size());
  } else if (hog_cmd->parsed() || deep_cmd->parsed()) {
    cfg.feature_kinds = {hog_cmd->parsed() ? FeatureKind::hog : FeatureKind::deep};
    const auto b = extract_features(cfg);
    const auto& s = b.sets.begin()->second;
    std::printf("%s features: dim %zu, rows train %zu val %zu test %zu\n",
                std::string(feature_kind_name(b.sets.begin()->first)).c_str(), s.train.dim(), s.train.rows(),
                s.val.rows(), s.test.rows());
  } else if (fuse_cmd->parsed()) {
    for (const char* part : {"train", "val", "test"}) {
      const auto fused = fuse(read_split_features(cfg, FeatureKind::hog, part),
                              read_split_features(cfg, FeatureKind::deep, part));
      write_feature_store(cfg.output_dir / "features" / (std::string("fused_") + part + ".hfv"), fused);
      std::printf("fused %s: %zu rows, dim %zu\n", part, fused.rows(), fused.dim());
    }
  } else if (tune_cmd->parsed()) {
    const auto b = load_features(cfg);
    for (const auto& [key, t] : tune_models(cfg, b, fit_standardizers(b))) {
      std::printf("%s/%s  %s\n", std::string(feature_kind_name(key.first)).c_str(),
                  std::string(model_kind_name(key.second)).c_str(), describe(t.hyperparams).c_str());
    }
  } else if (train_cmd->parsed()) {
    const auto b = load_features(cfg);
    std::map<ModelKey, Hyperparams> hp;
    if (fs::exists(cfg.output_dir / "tuned.json")) hp = read_tuned(cfg.output_dir / "tuned.json");
    const auto runs = train_models(cfg, b, fit_standardizers(b), hp);
    std::printf("trained %zu models under %s\n", runs.size(), (cfg.output_dir / "models").string().c_str());
  } else if (eval_cmd->parsed()) {
    auto r = load_experiment(cfg);
    evaluate_models(cfg, r.features, r.standardizers, r.runs);
    print_table(cfg.output_dir / "report.csv");
  } else if (sweep_cmd->parsed()) {
    const auto r = load_experiment(cfg);
    noise_sweep(cfg, r, cfg.snr_levels);
    print_table(cfg.output_dir / "sweep.csv");
  } else if (report_cmd->parsed()) {
    print_table(cfg.output_dir / "report.csv");
    if (fs::exists(cfg.output_dir / "sweep.csv")) {
      std::printf("\n");
      print_table(cfg.output_dir / "sweep.csv");
    }
  } else if (run_cmd->parsed()) {
    const auto r = run_experiment(cfg);
    print_table(cfg.output_dir / "report.csv");
    if (!cfg.snr_levels.empty()) {
      noise_sweep(cfg, r, cfg.snr_levels);
      std::printf("\n");
      print_table(cfg.output_dir / "sweep.csv");
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const StageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.user_error() ? 1 : 2;
  } catch (const InputError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 2;
  }
}
