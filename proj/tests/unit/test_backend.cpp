#include <gtest/gtest.h>

#include <fstream>

#include "histofuse/backend.hpp"
#include "histofuse/log.hpp"
#include "test_support.hpp"

using namespace histofuse;
using testing_support::Rng;
using testing_support::TempDir;

namespace {

struct CaptureLog {
  std::vector<std::string> warnings;
  LogSink old;
  CaptureLog() {
    old = set_log_sink([this](LogLevel level, std::string_view msg) {
      if (level == LogLevel::warning) warnings.emplace_back(msg);
    });
  }
  ~CaptureLog() { set_log_sink(old); }
};

FixtureModelSpec small_spec() {
  FixtureModelSpec s;
  s.input_side = 16;
  return s;
}

}  // namespace

TEST(Backend, FixtureConstantImage) {
  TempDir dir;
  auto spec = small_spec();
  spec.input_side = 299;
  write_fixture_model(dir / "fx.onnx", spec);
  const auto b = Backend::load(dir / "fx.onnx");
  EXPECT_EQ(b.feature_dim(), 8U);
  EXPECT_EQ(b.input_side(), 299U);
  for (double c : {0.0, 0.25, 0.7}) {
    const ImageTensor im(299, 299, 3, c);
    const auto f = b.features(im);
    ASSERT_EQ(f.size(), 8U);
    for (double v : f) EXPECT_NEAR(v, c, 1e-6);
  }
}

TEST(Backend, DeterministicRowsAndShape) {
  TempDir dir;
  write_fixture_model(dir / "fx.onnx", small_spec());
  const auto b = Backend::load(dir / "fx.onnx");
  Rng rng(3);
  std::vector<ImageTensor> images;
  std::vector<std::string> ids;
  std::vector<int> labels;
  for (int i = 0; i < 6; ++i) {
    images.push_back(testing_support::random_image(rng, 16, 16, 3));
    ids.push_back("im" + std::to_string(i));
    labels.push_back(i % 5);
  }
  images.push_back(images[2]);
  ids.push_back("dup");
  labels.push_back(0);
  const auto m = b.extract(images, ids, labels, 3);
  EXPECT_EQ(m.kind(), FeatureKind::deep);
  EXPECT_EQ(m.rows(), 7U);
  EXPECT_EQ(m.dim(), 8U);
  EXPECT_EQ(m.ids(), ids);
  for (std::size_t j = 0; j < 8; ++j) EXPECT_EQ(m.at(2, j), m.at(6, j));
  const auto serial = b.extract(images, ids, labels, 1);
  EXPECT_EQ(serial, m);
}

TEST(Backend, MatchesHandComputation) {
  TempDir dir;
  auto spec = small_spec();
  spec.feature_dim = 2;
  spec.conv_weights = {0.5F, 0.25F, 0.25F, -1.0F, 1.0F, 0.0F};
  spec.conv_bias = {0.0F, 0.1F};
  spec.head_weights = {1, 0, 0, 1, 1, 1, -1, 0, 0, -1};
  spec.head_bias = {0, 0, -0.5F, 0, 0};
  write_fixture_model(dir / "fx.onnx", spec);
  const auto b = Backend::load(dir / "fx.onnx");
  Rng rng(4);
  std::vector<ImageTensor> images;
  for (int t = 0; t < 3; ++t) images.push_back(testing_support::random_image(rng, 16, 16, 3));
  const auto labels = baseline_classify(b, images);
  ASSERT_EQ(labels.size(), 3U);
  for (int t = 0; t < 3; ++t) {
    double f0 = 0, f1 = 0;
    for (std::size_t r = 0; r < 16; ++r)
      for (std::size_t c = 0; c < 16; ++c) {
        const auto& im = images[t];
        f0 += std::max(0.0, 0.5 * im.at(r, c, 0) + 0.25 * im.at(r, c, 1) + 0.25 * im.at(r, c, 2));
        f1 += std::max(0.0, -im.at(r, c, 0) + im.at(r, c, 1) + 0.1);
      }
    f0 /= 256;
    f1 /= 256;
    const auto feat = b.features(images[t]);
    EXPECT_NEAR(feat[0], f0, 1e-6);
    EXPECT_NEAR(feat[1], f1, 1e-6);
    const double scores[5] = {f0, f1, f0 + f1 - 0.5, -f0, -f1};
    const auto got = b.class_scores(images[t]);
    int best = 0;
    for (int k = 0; k < 5; ++k) {
      EXPECT_NEAR(got[k], scores[k], 1e-6);
      if (scores[k] > scores[best]) best = k;
    }
    EXPECT_EQ(labels[t], best);
  }
}

TEST(Backend, UnknownOutputListsNames) {
  TempDir dir;
  write_fixture_model(dir / "fx.onnx", small_spec());
  try {
    Backend::load(dir / "fx.onnx", std::string("mixed_7c"));
    FAIL();
  } catch (const InputError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("mixed_7c"), std::string::npos);
    EXPECT_NE(msg.find("avg_pool"), std::string::npos);
    EXPECT_NE(msg.find("class_output"), std::string::npos);
  }
  // Any produced intermediate may serve as the feature layer.
  EXPECT_NO_THROW(Backend::load(dir / "fx.onnx", std::string("relu")));
}

TEST(Backend, RejectsNonImageInput) {
  TempDir dir;
  auto model = build_fixture_model(small_spec());
  model.graph.inputs[0].shape = {{1, {}}, {3, {}}};
  onnx::save_model(dir / "bad.onnx", model);
  EXPECT_THROW(Backend::load(dir / "bad.onnx"), InputError);
  model.graph.inputs[0].shape = {{1, {}}, {4, {}}, {16, {}}, {16, {}}};
  onnx::save_model(dir / "bad4.onnx", model);
  EXPECT_THROW(Backend::load(dir / "bad4.onnx"), InputError);
}

TEST(Backend, WrongImageSide) {
  TempDir dir;
  write_fixture_model(dir / "fx.onnx", small_spec());
  const auto b = Backend::load(dir / "fx.onnx");
  EXPECT_THROW(b.features(ImageTensor(17, 16, 3, 0.0)), InputError);
}

TEST(Backend, NoClassHead) {
  TempDir dir;
  auto spec = small_spec();
  spec.class_head = false;
  write_fixture_model(dir / "fx.onnx", spec);
  const auto b = Backend::load(dir / "fx.onnx");
  EXPECT_FALSE(b.has_class_output());
  CaptureLog log;
  std::vector<ImageTensor> images(2, ImageTensor(16, 16, 3, 0.5));
  EXPECT_TRUE(baseline_classify(b, images).empty());
  ASSERT_EQ(log.warnings.size(), 1U);
  EXPECT_NE(log.warnings[0].find("class_output"), std::string::npos);
  EXPECT_THROW(b.class_scores(images[0]), InputError);
}

TEST(Backend, SidecarRoundTripAndPreprocessing) {
  TempDir dir;
  BackendMeta meta;
  meta.input_name = "input";
  meta.output_name = "avg_pool";
  meta.input_side = 16;
  meta.scale = {2.0, 2.0, 2.0};
  meta.offset = {-1.0, -1.0, -1.0};
  meta.class_output = "class_output";
  write_backend_meta(dir / "x.meta.json", meta);
  const auto back = read_backend_meta(dir / "x.meta.json");
  EXPECT_EQ(back.input_name, meta.input_name);
  EXPECT_EQ(back.input_side, 16U);
  EXPECT_EQ(back.scale, meta.scale);
  EXPECT_EQ(back.offset, meta.offset);
  EXPECT_EQ(back.class_output, meta.class_output);
  EXPECT_EQ(sidecar_path("/a/b/net.onnx"), std::filesystem::path("/a/b/net.meta.json"));

  // Scale 2, offset -1 maps a constant 0.75 image to 0.5 before the network.
  auto spec = small_spec();
  spec.relu = false;
  onnx::save_model(dir / "x.onnx", build_fixture_model(spec));
  const auto b = Backend::load(dir / "x.onnx");
  for (double v : b.features(ImageTensor(16, 16, 3, 0.75))) EXPECT_NEAR(v, 0.5, 1e-6);

  std::ofstream(dir / "bad.meta.json") << "{ not json";
  EXPECT_THROW(read_backend_meta(dir / "bad.meta.json"), InputError);
}

TEST(Backend, MissingSidecarWarns) {
  TempDir dir;
  onnx::save_model(dir / "bare.onnx", build_fixture_model(small_spec()));
  CaptureLog log;
  const auto b = Backend::load(dir / "bare.onnx");
  EXPECT_FALSE(log.warnings.empty());
  EXPECT_EQ(b.meta().input_side, 299U);
}
