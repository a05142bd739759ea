#include <gtest/gtest.h>

#include <cmath>

#include "histofuse/onnx.hpp"
#include "test_support.hpp"

using namespace histofuse;
using namespace histofuse::onnx;
using testing_support::Rng;
using testing_support::TempDir;

namespace {

Attribute ints_attr(std::string name, std::vector<std::int64_t> v) {
  Attribute a;
  a.name = std::move(name);
  a.type = Attribute::Type::ints;
  a.ints = std::move(v);
  return a;
}

Attribute int_attr(std::string name, std::int64_t v) {
  Attribute a;
  a.name = std::move(name);
  a.type = Attribute::Type::integer;
  a.i = v;
  return a;
}

Tensor random_tensor(Rng& rng, std::vector<std::int64_t> dims, std::string name = {}) {
  std::size_t n = 1;
  for (auto d : dims) n *= static_cast<std::size_t>(d);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return Tensor::of_floats(std::move(dims), std::move(v), std::move(name));
}

// One-node graph with input "x"; further inputs are initializers.
Model single_node(const std::string& op, std::vector<Tensor> inits, std::vector<Attribute> attrs) {
  Model m;
  Node n;
  n.op_type = op;
  n.inputs = {"x"};
  for (auto& t : inits) n.inputs.push_back(t.name);
  n.outputs = {"y"};
  n.attributes = std::move(attrs);
  m.graph.nodes.push_back(n);
  m.graph.initializers = std::move(inits);
  ValueInfo in;
  in.name = "x";
  m.graph.inputs.push_back(in);
  ValueInfo out;
  out.name = "y";
  m.graph.outputs.push_back(out);
  return m;
}

Tensor run1(const Model& m, const Tensor& x) {
  Executor ex(m);
  return ex.run({{"x", x}}, {"y"}).at("y");
}

float at4(const Tensor& t, std::int64_t a, std::int64_t b, std::int64_t c, std::int64_t d) {
  return t.floats[static_cast<std::size_t>(((a * t.dims[1] + b) * t.dims[2] + c) * t.dims[3] + d)];
}

}  // namespace

TEST(OnnxConv, MatchesDirectLoops) {
  Rng rng(11);
  for (int trial = 0; trial < 12; ++trial) {
    const std::int64_t group = 1 + static_cast<std::int64_t>(rng.below(2));
    const std::int64_t cg = 1 + static_cast<std::int64_t>(rng.below(3));
    const std::int64_t c = cg * group, m = group * (1 + static_cast<std::int64_t>(rng.below(3)));
    const std::int64_t kh = 1 + static_cast<std::int64_t>(rng.below(3)), kw = 1 + static_cast<std::int64_t>(rng.below(3));
    const std::int64_t s = 1 + static_cast<std::int64_t>(rng.below(2)), dil = 1 + static_cast<std::int64_t>(rng.below(2));
    const std::int64_t p = static_cast<std::int64_t>(rng.below(2));
    const std::int64_t h = 7 + static_cast<std::int64_t>(rng.below(4)), w = 6 + static_cast<std::int64_t>(rng.below(4));
    const auto x = random_tensor(rng, {2, c, h, w});
    const auto wt = random_tensor(rng, {m, cg, kh, kw}, "w");
    const auto bias = random_tensor(rng, {m}, "b");
    const auto model = single_node("Conv", {wt, bias},
                                   {ints_attr("strides", {s, s}), ints_attr("dilations", {dil, dil}),
                                    ints_attr("pads", {p, p, p, p}), int_attr("group", group)});
    const auto y = run1(model, x);
    const std::int64_t oh = (h + 2 * p - (kh - 1) * dil - 1) / s + 1;
    const std::int64_t ow = (w + 2 * p - (kw - 1) * dil - 1) / s + 1;
    ASSERT_EQ(y.dims, (std::vector<std::int64_t>{2, m, oh, ow}));
    const std::int64_t mg = m / group;
    for (std::int64_t b = 0; b < 2; ++b)
      for (std::int64_t o = 0; o < m; ++o)
        for (std::int64_t i = 0; i < oh; ++i)
          for (std::int64_t j = 0; j < ow; ++j) {
            double acc = bias.floats[static_cast<std::size_t>(o)];
            const std::int64_t g = o / mg;
            for (std::int64_t ch = 0; ch < cg; ++ch)
              for (std::int64_t u = 0; u < kh; ++u)
                for (std::int64_t v = 0; v < kw; ++v) {
                  const std::int64_t ii = i * s - p + u * dil, jj = j * s - p + v * dil;
                  if (ii < 0 || ii >= h || jj < 0 || jj >= w) continue;
                  acc += static_cast<double>(at4(wt, o, ch, u, v)) * at4(x, b, g * cg + ch, ii, jj);
                }
            EXPECT_NEAR(at4(y, b, o, i, j), acc, 1e-4);
          }
  }
}

TEST(OnnxGemm, TransposesAndBias) {
  Rng rng(12);
  for (int ta = 0; ta < 2; ++ta)
    for (int tb = 0; tb < 2; ++tb) {
      const std::int64_t m = 3, k = 4, n = 5;
      const auto a = random_tensor(rng, ta ? std::vector<std::int64_t>{k, m} : std::vector<std::int64_t>{m, k});
      const auto b = random_tensor(rng, tb ? std::vector<std::int64_t>{n, k} : std::vector<std::int64_t>{k, n}, "b");
      const auto c = random_tensor(rng, {n}, "c");
      Attribute alpha;
      alpha.name = "alpha";
      alpha.type = Attribute::Type::floating;
      alpha.f = 0.5F;
      const auto y = run1(single_node("Gemm", {b, c}, {int_attr("transA", ta), int_attr("transB", tb), alpha}), a);
      ASSERT_EQ(y.dims, (std::vector<std::int64_t>{m, n}));
      for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) {
          double acc = 0;
          for (std::int64_t q = 0; q < k; ++q) {
            const float av = ta ? a.floats[q * m + i] : a.floats[i * k + q];
            const float bv = tb ? b.floats[j * k + q] : b.floats[q * n + j];
            acc += static_cast<double>(av) * bv;
          }
          EXPECT_NEAR(y.floats[i * n + j], 0.5 * acc + c.floats[j], 1e-5);
        }
    }
}

TEST(OnnxPool, MaxAndAverage) {
  Rng rng(13);
  const auto x = random_tensor(rng, {1, 2, 6, 7});
  for (int is_max = 0; is_max < 2; ++is_max)
    for (int include_pad = 0; include_pad < 2; ++include_pad) {
      const auto y = run1(single_node(is_max ? "MaxPool" : "AveragePool", {},
                                      {ints_attr("kernel_shape", {3, 3}), ints_attr("strides", {2, 2}),
                                       ints_attr("pads", {1, 1, 1, 1}), int_attr("count_include_pad", include_pad)}),
                          x);
      ASSERT_EQ(y.dims, (std::vector<std::int64_t>{1, 2, 3, 4}));
      for (std::int64_t c = 0; c < 2; ++c)
        for (std::int64_t i = 0; i < 3; ++i)
          for (std::int64_t j = 0; j < 4; ++j) {
            double best = -1e300, sum = 0;
            int n_in = 0;
            for (std::int64_t u = 0; u < 3; ++u)
              for (std::int64_t v = 0; v < 3; ++v) {
                const std::int64_t ii = i * 2 - 1 + u, jj = j * 2 - 1 + v;
                if (ii < 0 || ii >= 6 || jj < 0 || jj >= 7) continue;
                best = std::max<double>(best, at4(x, 0, c, ii, jj));
                sum += at4(x, 0, c, ii, jj);
                ++n_in;
              }
            const double want = is_max ? best : sum / (include_pad ? 9 : n_in);
            EXPECT_NEAR(at4(y, 0, c, i, j), want, 1e-5);
          }
    }
}

TEST(OnnxOps, GlobalPoolSoftmaxAndBroadcast) {
  Rng rng(14);
  const auto x = random_tensor(rng, {2, 3, 4, 5});
  const auto gp = run1(single_node("GlobalAveragePool", {}, {}), x);
  ASSERT_EQ(gp.dims, (std::vector<std::int64_t>{2, 3, 1, 1}));
  for (std::int64_t b = 0; b < 2; ++b)
    for (std::int64_t c = 0; c < 3; ++c) {
      double s = 0;
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 5; ++j) s += at4(x, b, c, i, j);
      EXPECT_NEAR(gp.floats[b * 3 + c], s / 20, 1e-6);
    }

  const auto z = random_tensor(rng, {3, 4});
  const auto sm = run1(single_node("Softmax", {}, {}), z);
  for (int i = 0; i < 3; ++i) {
    double denom = 0;
    for (int j = 0; j < 4; ++j) denom += std::exp(static_cast<double>(z.floats[i * 4 + j]));
    for (int j = 0; j < 4; ++j) EXPECT_NEAR(sm.floats[i * 4 + j], std::exp(z.floats[i * 4 + j]) / denom, 1e-6);
  }

  const auto row = random_tensor(rng, {1, 4}, "r");
  const auto sum = run1(single_node("Add", {row}, {}), z);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) EXPECT_FLOAT_EQ(sum.floats[i * 4 + j], z.floats[i * 4 + j] + row.floats[j]);

  const auto flat = run1(single_node("Flatten", {}, {}), x);
  EXPECT_EQ(flat.dims, (std::vector<std::int64_t>{2, 60}));
  EXPECT_EQ(flat.floats, x.floats);

  const auto tr = run1(single_node("Transpose", {}, {ints_attr("perm", {1, 0})}), z);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) EXPECT_EQ(tr.floats[j * 3 + i], z.floats[i * 4 + j]);
}

TEST(OnnxModel, SerializeRoundTrip) {
  Rng rng(15);
  auto m = single_node("Conv", {random_tensor(rng, {4, 3, 3, 3}, "w")}, {ints_attr("pads", {1, 1, 1, 1})});
  m.producer_name = "unit";
  m.graph.name = "g";
  m.graph.inputs[0].has_shape = true;
  m.graph.inputs[0].shape = {{1, {}}, {3, {}}, {-1, "h"}, {-1, "w"}};
  TempDir dir;
  save_model(dir / "m.onnx", m);
  const auto back = load_model(dir / "m.onnx");
  EXPECT_EQ(back.producer_name, "unit");
  EXPECT_EQ(back.opset, m.opset);
  ASSERT_EQ(back.graph.nodes.size(), 1U);
  EXPECT_EQ(back.graph.nodes[0].op_type, "Conv");
  EXPECT_EQ(back.graph.nodes[0].inputs, m.graph.nodes[0].inputs);
  ASSERT_EQ(back.graph.initializers.size(), 1U);
  EXPECT_EQ(back.graph.initializers[0].floats, m.graph.initializers[0].floats);
  EXPECT_EQ(back.graph.initializers[0].dims, m.graph.initializers[0].dims);
  ASSERT_EQ(back.graph.inputs[0].shape.size(), 4U);
  EXPECT_EQ(back.graph.inputs[0].shape[2].param, "h");
  EXPECT_EQ(serialize_model(back), serialize_model(m));

  const auto x = random_tensor(rng, {1, 3, 5, 5});
  EXPECT_EQ(run1(back, x).floats, run1(m, x).floats);
}

TEST(OnnxModel, Errors) {
  const std::vector<std::uint8_t> junk = {0xff, 0xff, 0xff, 0xff, 0x0f};
  EXPECT_THROW(parse_model(junk), InputError);
  EXPECT_THROW(load_model("/nonexistent.onnx"), InputError);
  auto m = single_node("NoSuchOp", {}, {});
  Executor ex(m);
  EXPECT_THROW(ex.run({{"x", Tensor::of_floats({1}, {0})}}, {"y"}), InputError);
  EXPECT_THROW(ex.run({{"x", Tensor::of_floats({1}, {0})}}, {"missing"}), InputError);
  EXPECT_TRUE(ex.produces("y"));
  EXPECT_EQ(runtime_inputs(m.graph).size(), 1U);
}
