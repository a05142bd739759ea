#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <set>
#include <string>

#include "histofuse/error.hpp"
#include "histofuse/onnx.hpp"

namespace histofuse::onnx {

namespace {

using Dims = std::vector<std::int64_t>;
using Inputs = std::vector<const Tensor*>;
using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

[[noreturn]] void fail(const Node& node, const std::string& what) {
  throw InputError("ONNX " + node.op_type + " '" + node.name + "': " + what);
}

std::int64_t product(const Dims& d, std::size_t from = 0, std::size_t to = SIZE_MAX) {
  std::int64_t p = 1;
  for (std::size_t i = from; i < std::min(to, d.size()); ++i) p *= d[i];
  return p;
}

std::int64_t norm_axis(const Node& node, std::int64_t axis, std::size_t rank) {
  const auto r = static_cast<std::int64_t>(rank);
  if (axis < -r || axis >= r) fail(node, "axis " + std::to_string(axis) + " out of range");
  return axis < 0 ? axis + r : axis;
}

std::int64_t attr_int(const Node& n, std::string_view name, std::int64_t fallback) {
  const auto* a = n.attribute(name);
  return a ? a->i : fallback;
}

float attr_float(const Node& n, std::string_view name, float fallback) {
  const auto* a = n.attribute(name);
  return a ? a->f : fallback;
}

Dims attr_ints(const Node& n, std::string_view name, Dims fallback = {}) {
  const auto* a = n.attribute(name);
  return a ? a->ints : fallback;
}

std::string attr_string(const Node& n, std::string_view name, std::string fallback) {
  const auto* a = n.attribute(name);
  return a ? a->s : fallback;
}

const Tensor& need(const Node& node, const Inputs& in, std::size_t i) {
  if (i >= in.size() || in[i] == nullptr) fail(node, "missing input " + std::to_string(i));
  return *in[i];
}

const Tensor& need_float(const Node& node, const Inputs& in, std::size_t i) {
  const Tensor& t = need(node, in, i);
  if (t.type != DataType::float32) fail(node, "input " + std::to_string(i) + " must be float");
  return t;
}

Dims int_values(const Node& node, const Inputs& in, std::size_t i) {
  const Tensor& t = need(node, in, i);
  if (t.type != DataType::int64) fail(node, "input " + std::to_string(i) + " must be integer");
  return t.ints;
}

bool has_input(const Inputs& in, std::size_t i) { return i < in.size() && in[i] != nullptr; }

Tensor reshaped(const Tensor& t, Dims dims) {
  Tensor out = t;
  out.name.clear();
  out.dims = std::move(dims);
  return out;
}

// Row-major strides for `dims` aligned to an output of rank `rank`, with zero
// stride on broadcast axes.
std::vector<std::int64_t> broadcast_strides(const Dims& dims, const Dims& out) {
  const std::size_t rank = out.size();
  std::vector<std::int64_t> s(rank, 0);
  std::int64_t acc = 1;
  for (std::size_t i = rank; i-- > 0;) {
    const auto k = static_cast<std::int64_t>(i) - static_cast<std::int64_t>(rank - dims.size());
    if (k < 0) continue;
    const auto d = dims[static_cast<std::size_t>(k)];
    s[i] = d == 1 ? 0 : acc;
    acc *= d;
  }
  return s;
}

Dims broadcast_dims(const Node& node, const Dims& a, const Dims& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Dims out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const auto ia = static_cast<std::int64_t>(i) - static_cast<std::int64_t>(rank - a.size());
    const auto ib = static_cast<std::int64_t>(i) - static_cast<std::int64_t>(rank - b.size());
    const std::int64_t da = ia >= 0 ? a[static_cast<std::size_t>(ia)] : 1;
    const std::int64_t db = ib >= 0 ? b[static_cast<std::size_t>(ib)] : 1;
    if (da != db && da != 1 && db != 1) fail(node, "shapes do not broadcast");
    out[i] = da == 1 ? db : da;
  }
  return out;
}

// Calls fn(out_index, a_offset, b_offset) for every output element.
template <typename Fn>
void for_each_broadcast(const Dims& out, const std::vector<std::int64_t>& sa,
                        const std::vector<std::int64_t>& sb, Fn fn) {
  const std::int64_t n = product(out);
  const std::size_t rank = out.size();
  std::vector<std::int64_t> idx(rank, 0);
  std::int64_t ia = 0;
  std::int64_t ib = 0;
  for (std::int64_t o = 0; o < n; ++o) {
    fn(o, ia, ib);
    for (std::size_t i = rank; i-- > 0;) {
      ++idx[i];
      ia += sa[i];
      ib += sb[i];
      if (idx[i] < out[i]) break;
      ia -= sa[i] * out[i];
      ib -= sb[i] * out[i];
      idx[i] = 0;
    }
  }
}

template <typename T, typename F>
std::vector<T> broadcast_apply(const Node& node, const std::vector<T>& a, const Dims& ad,
                               const std::vector<T>& b, const Dims& bd, Dims& od, F f) {
  od = broadcast_dims(node, ad, bd);
  std::vector<T> out(static_cast<std::size_t>(product(od)));
  if (ad == bd) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i], b[i]);
    return out;
  }
  for_each_broadcast(od, broadcast_strides(ad, od), broadcast_strides(bd, od),
                     [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
                       out[static_cast<std::size_t>(o)] =
                           f(a[static_cast<std::size_t>(ia)], b[static_cast<std::size_t>(ib)]);
                     });
  return out;
}

Tensor binary(const Node& node, const Inputs& in) {
  const Tensor& a = need(node, in, 0);
  const Tensor& b = need(node, in, 1);
  if (a.type != b.type) fail(node, "mixed operand types");
  const std::string& op = node.op_type;
  Tensor out;
  out.type = a.type;
  if (a.type == DataType::float32) {
    std::function<float(float, float)> f;
    if (op == "Add") f = [](float x, float y) { return x + y; };
    else if (op == "Sub") f = [](float x, float y) { return x - y; };
    else if (op == "Mul") f = [](float x, float y) { return x * y; };
    else f = [](float x, float y) { return x / y; };
    out.floats = broadcast_apply(node, a.floats, a.dims, b.floats, b.dims, out.dims, f);
  } else {
    std::function<std::int64_t(std::int64_t, std::int64_t)> f;
    if (op == "Add") f = [](std::int64_t x, std::int64_t y) { return x + y; };
    else if (op == "Sub") f = [](std::int64_t x, std::int64_t y) { return x - y; };
    else if (op == "Mul") f = [](std::int64_t x, std::int64_t y) { return x * y; };
    else
      f = [&node](std::int64_t x, std::int64_t y) {
        if (y == 0) fail(node, "integer division by zero");
        return x / y;
      };
    out.ints = broadcast_apply(node, a.ints, a.dims, b.ints, b.dims, out.dims, f);
  }
  return out;
}

template <typename F>
Tensor unary(const Node& node, const Inputs& in, F f) {
  Tensor out = need_float(node, in, 0);
  out.name.clear();
  for (auto& v : out.floats) v = f(v);
  return out;
}

// ---------------------------------------------------------------- spatial

struct Window {
  std::int64_t kh, kw, sh, sw, dh, dw, pt, pl, pb, pr, oh, ow;
};

Window window(const Node& node, std::int64_t h, std::int64_t w, std::int64_t kh,
              std::int64_t kw, bool ceil_mode) {
  Window win{};
  win.kh = kh;
  win.kw = kw;
  const Dims strides = attr_ints(node, "strides", {1, 1});
  const Dims dil = attr_ints(node, "dilations", {1, 1});
  const Dims pads = attr_ints(node, "pads", {0, 0, 0, 0});
  if (strides.size() != 2 || dil.size() != 2 || pads.size() != 4) {
    fail(node, "only 2-D windows are supported");
  }
  win.sh = strides[0];
  win.sw = strides[1];
  win.dh = dil[0];
  win.dw = dil[1];
  win.pt = pads[0];
  win.pl = pads[1];
  win.pb = pads[2];
  win.pr = pads[3];
  const std::int64_t ekh = (kh - 1) * win.dh + 1;
  const std::int64_t ekw = (kw - 1) * win.dw + 1;
  const std::string auto_pad = attr_string(node, "auto_pad", "NOTSET");
  if (auto_pad == "SAME_UPPER" || auto_pad == "SAME_LOWER") {
    win.oh = (h + win.sh - 1) / win.sh;
    win.ow = (w + win.sw - 1) / win.sw;
    const std::int64_t th = std::max<std::int64_t>(0, (win.oh - 1) * win.sh + ekh - h);
    const std::int64_t tw = std::max<std::int64_t>(0, (win.ow - 1) * win.sw + ekw - w);
    const bool upper = auto_pad == "SAME_UPPER";
    win.pt = upper ? th / 2 : th - th / 2;
    win.pl = upper ? tw / 2 : tw - tw / 2;
    win.pb = th - win.pt;
    win.pr = tw - win.pl;
    return win;
  }
  if (auto_pad == "VALID") win.pt = win.pl = win.pb = win.pr = 0;
  else if (auto_pad != "NOTSET") fail(node, "unknown auto_pad " + auto_pad);
  auto out_size = [&](std::int64_t in, std::int64_t p0, std::int64_t p1, std::int64_t ek,
                      std::int64_t s) {
    const std::int64_t span = in + p0 + p1 - ek;
    if (span < 0) fail(node, "window larger than padded input");
    std::int64_t o = (ceil_mode ? (span + s - 1) / s : span / s) + 1;
    // A ceil-mode window must start inside the input or the leading pad.
    if (ceil_mode && (o - 1) * s >= in + p0) --o;
    return o;
  };
  win.oh = out_size(h, win.pt, win.pb, ekh, win.sh);
  win.ow = out_size(w, win.pl, win.pr, ekw, win.sw);
  return win;
}

Tensor conv(const Node& node, const Inputs& in) {
  const Tensor& x = need_float(node, in, 0);
  const Tensor& wt = need_float(node, in, 1);
  if (x.dims.size() != 4 || wt.dims.size() != 4) fail(node, "only 2-D convolution is supported");
  const std::int64_t n = x.dims[0], c = x.dims[1], h = x.dims[2], w = x.dims[3];
  const std::int64_t m = wt.dims[0], cg = wt.dims[1], kh = wt.dims[2], kw = wt.dims[3];
  const std::int64_t group = attr_int(node, "group", 1);
  if (group <= 0 || c != cg * group || m % group != 0) fail(node, "channel/group mismatch");
  const Window win = window(node, h, w, kh, kw, false);
  const std::int64_t mg = m / group;
  const std::int64_t rows = cg * kh * kw;
  const std::int64_t cols = win.oh * win.ow;
  Tensor out;
  out.dims = {n, m, win.oh, win.ow};
  out.floats.assign(static_cast<std::size_t>(n * m * cols), 0.0F);
  const bool pointwise = kh == 1 && kw == 1 && win.sh == 1 && win.sw == 1 && win.pt == 0 &&
                         win.pl == 0 && win.pb == 0 && win.pr == 0;
  std::vector<float> col;
  if (!pointwise) col.resize(static_cast<std::size_t>(rows * cols));
  for (std::int64_t b = 0; b < n; ++b) {
    for (std::int64_t g = 0; g < group; ++g) {
      const float* src = x.floats.data() + (b * c + g * cg) * h * w;
      const float* colp = src;
      if (!pointwise) {
        for (std::int64_t ch = 0; ch < cg; ++ch) {
          for (std::int64_t ki = 0; ki < kh; ++ki) {
            for (std::int64_t kj = 0; kj < kw; ++kj) {
              float* dst = col.data() + ((ch * kh + ki) * kw + kj) * cols;
              for (std::int64_t oi = 0; oi < win.oh; ++oi) {
                const std::int64_t ii = oi * win.sh - win.pt + ki * win.dh;
                for (std::int64_t oj = 0; oj < win.ow; ++oj) {
                  const std::int64_t jj = oj * win.sw - win.pl + kj * win.dw;
                  dst[oi * win.ow + oj] = (ii >= 0 && ii < h && jj >= 0 && jj < w)
                                              ? src[(ch * h + ii) * w + jj]
                                              : 0.0F;
                }
              }
            }
          }
        }
        colp = col.data();
      }
      Eigen::Map<const RowMat> wm(wt.floats.data() + g * mg * rows, mg, rows);
      Eigen::Map<const RowMat> cm(colp, rows, cols);
      Eigen::Map<RowMat> om(out.floats.data() + (b * m + g * mg) * cols, mg, cols);
      om.noalias() = wm * cm;
    }
  }
  if (has_input(in, 2)) {
    const Tensor& bias = need_float(node, in, 2);
    if (static_cast<std::int64_t>(bias.floats.size()) != m) fail(node, "bias size mismatch");
    for (std::int64_t b = 0; b < n; ++b) {
      for (std::int64_t o = 0; o < m; ++o) {
        float* p = out.floats.data() + (b * m + o) * cols;
        for (std::int64_t i = 0; i < cols; ++i) p[i] += bias.floats[static_cast<std::size_t>(o)];
      }
    }
  }
  return out;
}

Tensor pool(const Node& node, const Inputs& in, bool is_max) {
  const Tensor& x = need_float(node, in, 0);
  if (x.dims.size() != 4) fail(node, "only 2-D pooling is supported");
  const Dims k = attr_ints(node, "kernel_shape");
  if (k.size() != 2) fail(node, "kernel_shape must have two entries");
  const std::int64_t n = x.dims[0], c = x.dims[1], h = x.dims[2], w = x.dims[3];
  const Window win = window(node, h, w, k[0], k[1], attr_int(node, "ceil_mode", 0) != 0);
  const bool include_pad = attr_int(node, "count_include_pad", 0) != 0;
  Tensor out;
  out.dims = {n, c, win.oh, win.ow};
  out.floats.resize(static_cast<std::size_t>(n * c * win.oh * win.ow));
  float* dst = out.floats.data();
  for (std::int64_t p = 0; p < n * c; ++p) {
    const float* src = x.floats.data() + p * h * w;
    for (std::int64_t oi = 0; oi < win.oh; ++oi) {
      for (std::int64_t oj = 0; oj < win.ow; ++oj) {
        float best = -std::numeric_limits<float>::infinity();
        double sum = 0.0;
        std::int64_t count = 0;
        for (std::int64_t ki = 0; ki < win.kh; ++ki) {
          const std::int64_t ii = oi * win.sh - win.pt + ki * win.dh;
          for (std::int64_t kj = 0; kj < win.kw; ++kj) {
            const std::int64_t jj = oj * win.sw - win.pl + kj * win.dw;
            const bool inside = ii >= 0 && ii < h && jj >= 0 && jj < w;
            if (inside) {
              const float v = src[ii * w + jj];
              best = std::max(best, v);
              sum += v;
              ++count;
            } else if (include_pad && ii >= -win.pt && ii < h + win.pb && jj >= -win.pl &&
                       jj < w + win.pr) {
              ++count;
            }
          }
        }
        *dst++ = is_max ? best : (count > 0 ? static_cast<float>(sum / count) : 0.0F);
      }
    }
  }
  return out;
}

Tensor global_pool(const Node& node, const Inputs& in, bool is_max) {
  const Tensor& x = need_float(node, in, 0);
  if (x.dims.size() < 3) fail(node, "input must have spatial dimensions");
  const std::int64_t outer = x.dims[0] * x.dims[1];
  const std::int64_t inner = product(x.dims, 2);
  Tensor out;
  out.dims = x.dims;
  for (std::size_t i = 2; i < out.dims.size(); ++i) out.dims[i] = 1;
  out.floats.resize(static_cast<std::size_t>(outer));
  for (std::int64_t p = 0; p < outer; ++p) {
    const float* src = x.floats.data() + p * inner;
    if (is_max) {
      out.floats[static_cast<std::size_t>(p)] = *std::max_element(src, src + inner);
    } else {
      double s = 0.0;
      for (std::int64_t i = 0; i < inner; ++i) s += src[i];
      out.floats[static_cast<std::size_t>(p)] = static_cast<float>(s / static_cast<double>(inner));
    }
  }
  return out;
}

Tensor batch_norm(const Node& node, const Inputs& in) {
  Tensor out = need_float(node, in, 0);
  out.name.clear();
  const auto& scale = need_float(node, in, 1).floats;
  const auto& bias = need_float(node, in, 2).floats;
  const auto& mean = need_float(node, in, 3).floats;
  const auto& var = need_float(node, in, 4).floats;
  if (out.dims.size() < 2) fail(node, "input must be at least rank 2");
  const std::int64_t c = out.dims[1];
  const std::int64_t inner = product(out.dims, 2);
  const float eps = attr_float(node, "epsilon", 1e-5F);
  for (const auto* v : {&scale, &bias, &mean, &var}) {
    if (static_cast<std::int64_t>(v->size()) != c) fail(node, "parameter size mismatch");
  }
  for (std::int64_t b = 0; b < out.dims[0]; ++b) {
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const auto k = static_cast<std::size_t>(ch);
      const float a = scale[k] / std::sqrt(var[k] + eps);
      const float s = bias[k] - mean[k] * a;
      float* p = out.floats.data() + (b * c + ch) * inner;
      for (std::int64_t i = 0; i < inner; ++i) p[i] = p[i] * a + s;
    }
  }
  return out;
}

// ---------------------------------------------------------------- linear algebra

Tensor gemm(const Node& node, const Inputs& in) {
  const Tensor& a = need_float(node, in, 0);
  const Tensor& b = need_float(node, in, 1);
  if (a.dims.size() != 2 || b.dims.size() != 2) fail(node, "operands must be 2-D");
  const bool ta = attr_int(node, "transA", 0) != 0;
  const bool tb = attr_int(node, "transB", 0) != 0;
  const float alpha = attr_float(node, "alpha", 1.0F);
  const float beta = attr_float(node, "beta", 1.0F);
  Eigen::Map<const RowMat> am(a.floats.data(), a.dims[0], a.dims[1]);
  Eigen::Map<const RowMat> bm(b.floats.data(), b.dims[0], b.dims[1]);
  RowMat r;
  if (ta && tb) r = am.transpose() * bm.transpose();
  else if (ta) r = am.transpose() * bm;
  else if (tb) r = am * bm.transpose();
  else {
    if (a.dims[1] != b.dims[0]) fail(node, "inner dimensions differ");
    r = am * bm;
  }
  r *= alpha;
  Tensor out;
  out.dims = {r.rows(), r.cols()};
  out.floats.assign(r.data(), r.data() + r.size());
  if (has_input(in, 2) && beta != 0.0F) {
    const Tensor& c = need_float(node, in, 2);
    Dims od;
    out.floats = broadcast_apply(node, out.floats, out.dims, c.floats, c.dims, od,
                                 [beta](float x, float y) { return x + beta * y; });
    if (od != out.dims) fail(node, "C does not broadcast to the output");
  }
  return out;
}

Tensor matmul(const Node& node, const Inputs& in) {
  Tensor a = need_float(node, in, 0);
  Tensor b = need_float(node, in, 1);
  const bool a_vec = a.dims.size() == 1;
  const bool b_vec = b.dims.size() == 1;
  if (a_vec) a.dims.insert(a.dims.begin(), 1);
  if (b_vec) b.dims.push_back(1);
  const std::int64_t k = a.dims.back();
  if (b.dims[b.dims.size() - 2] != k) fail(node, "inner dimensions differ");
  const std::int64_t nn = b.dims.back();
  Dims out_dims;
  Tensor out;
  if (b.dims.size() == 2) {
    const std::int64_t rows = product(a.dims, 0, a.dims.size() - 1);
    Eigen::Map<const RowMat> am(a.floats.data(), rows, k);
    Eigen::Map<const RowMat> bm(b.floats.data(), k, nn);
    out.floats.resize(static_cast<std::size_t>(rows * nn));
    Eigen::Map<RowMat>(out.floats.data(), rows, nn).noalias() = am * bm;
    out_dims.assign(a.dims.begin(), a.dims.end() - 1);
  } else {
    if (a.dims.size() != b.dims.size() ||
        !std::equal(a.dims.begin(), a.dims.end() - 2, b.dims.begin())) {
      fail(node, "batched operands must share batch dimensions");
    }
    const std::int64_t m = a.dims[a.dims.size() - 2];
    const std::int64_t batch = product(a.dims, 0, a.dims.size() - 2);
    out.floats.resize(static_cast<std::size_t>(batch * m * nn));
    for (std::int64_t i = 0; i < batch; ++i) {
      Eigen::Map<const RowMat> am(a.floats.data() + i * m * k, m, k);
      Eigen::Map<const RowMat> bm(b.floats.data() + i * k * nn, k, nn);
      Eigen::Map<RowMat>(out.floats.data() + i * m * nn, m, nn).noalias() = am * bm;
    }
    out_dims.assign(a.dims.begin(), a.dims.end() - 1);
  }
  out_dims.push_back(nn);
  if (b_vec) out_dims.pop_back();
  if (a_vec) out_dims.erase(out_dims.end() - (b_vec ? 1 : 2));
  out.dims = out_dims;
  return out;
}

Tensor softmax(const Node& node, const Inputs& in, std::int64_t opset) {
  Tensor out = need_float(node, in, 0);
  out.name.clear();
  const std::size_t rank = out.dims.size();
  std::int64_t outer = 0;
  std::int64_t len = 0;
  std::int64_t inner = 0;
  if (opset >= 13) {
    const auto axis = static_cast<std::size_t>(norm_axis(node, attr_int(node, "axis", -1), rank));
    outer = product(out.dims, 0, axis);
    len = out.dims[axis];
    inner = product(out.dims, axis + 1);
  } else {
    const auto axis = static_cast<std::size_t>(norm_axis(node, attr_int(node, "axis", 1), rank));
    outer = product(out.dims, 0, axis);
    len = product(out.dims, axis);
    inner = 1;
  }
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t i = 0; i < inner; ++i) {
      float* p = out.floats.data() + o * len * inner + i;
      float mx = -std::numeric_limits<float>::infinity();
      for (std::int64_t j = 0; j < len; ++j) mx = std::max(mx, p[j * inner]);
      double s = 0.0;
      for (std::int64_t j = 0; j < len; ++j) {
        p[j * inner] = std::exp(p[j * inner] - mx);
        s += p[j * inner];
      }
      for (std::int64_t j = 0; j < len; ++j) p[j * inner] = static_cast<float>(p[j * inner] / s);
    }
  }
  return out;
}

// ---------------------------------------------------------------- shape ops

Tensor flatten(const Node& node, const Inputs& in) {
  const Tensor& x = need(node, in, 0);
  auto axis = attr_int(node, "axis", 1);
  if (axis < 0) axis += static_cast<std::int64_t>(x.dims.size());
  if (axis < 0 || axis > static_cast<std::int64_t>(x.dims.size())) fail(node, "axis out of range");
  const auto a = static_cast<std::size_t>(axis);
  return reshaped(x, {product(x.dims, 0, a), product(x.dims, a)});
}

Tensor reshape(const Node& node, const Inputs& in) {
  const Tensor& x = need(node, in, 0);
  Dims shape = int_values(node, in, 1);
  const bool allow_zero = attr_int(node, "allowzero", 0) != 0;
  std::int64_t known = 1;
  std::size_t infer = SIZE_MAX;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == 0 && !allow_zero) {
      if (i >= x.dims.size()) fail(node, "zero in shape beyond input rank");
      shape[i] = x.dims[i];
    }
    if (shape[i] == -1) {
      if (infer != SIZE_MAX) fail(node, "more than one -1 in shape");
      infer = i;
    } else {
      known *= shape[i];
    }
  }
  const auto total = static_cast<std::int64_t>(x.numel());
  if (infer != SIZE_MAX) {
    if (known == 0 || total % known != 0) fail(node, "cannot infer dimension");
    shape[infer] = total / known;
  } else if (known != total) {
    fail(node, "element count changes");
  }
  return reshaped(x, shape);
}

template <typename T>
std::vector<T> transpose_data(const std::vector<T>& src, const Dims& dims, const Dims& perm) {
  const std::size_t rank = dims.size();
  Dims out_dims(rank);
  std::vector<std::int64_t> in_stride(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_stride[i - 1] = in_stride[i] * dims[i];
  std::vector<std::int64_t> s(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_dims[i] = dims[static_cast<std::size_t>(perm[i])];
    s[i] = in_stride[static_cast<std::size_t>(perm[i])];
  }
  std::vector<T> out(src.size());
  std::vector<std::int64_t> zero(rank, 0);
  for_each_broadcast(out_dims, s, zero, [&](std::int64_t o, std::int64_t ia, std::int64_t) {
    out[static_cast<std::size_t>(o)] = src[static_cast<std::size_t>(ia)];
  });
  return out;
}

Tensor transpose(const Node& node, const Inputs& in) {
  const Tensor& x = need(node, in, 0);
  const std::size_t rank = x.dims.size();
  Dims perm = attr_ints(node, "perm");
  if (perm.empty()) {
    for (std::size_t i = 0; i < rank; ++i) perm.push_back(static_cast<std::int64_t>(rank - 1 - i));
  }
  if (perm.size() != rank) fail(node, "perm has wrong length");
  Tensor out;
  out.type = x.type;
  for (auto p : perm) out.dims.push_back(x.dims[static_cast<std::size_t>(norm_axis(node, p, rank))]);
  if (x.type == DataType::float32) out.floats = transpose_data(x.floats, x.dims, perm);
  else out.ints = transpose_data(x.ints, x.dims, perm);
  return out;
}

Tensor concat(const Node& node, const Inputs& in) {
  const Tensor& first = need(node, in, 0);
  const auto axis = static_cast<std::size_t>(
      norm_axis(node, attr_int(node, "axis", 0), first.dims.size()));
  Tensor out;
  out.type = first.type;
  out.dims = first.dims;
  out.dims[axis] = 0;
  for (std::size_t i = 0; i < in.size(); ++i) {
    const Tensor& t = need(node, in, i);
    if (t.type != first.type || t.dims.size() != first.dims.size()) fail(node, "operand mismatch");
    for (std::size_t d = 0; d < t.dims.size(); ++d) {
      if (d != axis && t.dims[d] != first.dims[d]) fail(node, "operand shapes differ");
    }
    out.dims[axis] += t.dims[axis];
  }
  const std::int64_t outer = product(first.dims, 0, axis);
  const std::int64_t inner = product(first.dims, axis + 1);
  for (std::int64_t o = 0; o < outer; ++o) {
    for (const auto* t : in) {
      const std::int64_t chunk = t->dims[axis] * inner;
      if (t->type == DataType::float32) {
        auto it = t->floats.begin() + o * chunk;
        out.floats.insert(out.floats.end(), it, it + chunk);
      } else {
        auto it = t->ints.begin() + o * chunk;
        out.ints.insert(out.ints.end(), it, it + chunk);
      }
    }
  }
  return out;
}

Tensor gather(const Node& node, const Inputs& in) {
  const Tensor& x = need(node, in, 0);
  const Tensor& idx = need(node, in, 1);
  if (idx.type != DataType::int64) fail(node, "indices must be integer");
  const auto axis = static_cast<std::size_t>(
      norm_axis(node, attr_int(node, "axis", 0), x.dims.size()));
  const std::int64_t outer = product(x.dims, 0, axis);
  const std::int64_t len = x.dims[axis];
  const std::int64_t inner = product(x.dims, axis + 1);
  Tensor out;
  out.type = x.type;
  out.dims.assign(x.dims.begin(), x.dims.begin() + static_cast<std::ptrdiff_t>(axis));
  out.dims.insert(out.dims.end(), idx.dims.begin(), idx.dims.end());
  out.dims.insert(out.dims.end(), x.dims.begin() + static_cast<std::ptrdiff_t>(axis) + 1,
                  x.dims.end());
  for (std::int64_t o = 0; o < outer; ++o) {
    for (auto j : idx.ints) {
      if (j < 0) j += len;
      if (j < 0 || j >= len) fail(node, "index out of range");
      const std::int64_t off = (o * len + j) * inner;
      if (x.type == DataType::float32) {
        out.floats.insert(out.floats.end(), x.floats.begin() + off, x.floats.begin() + off + inner);
      } else {
        out.ints.insert(out.ints.end(), x.ints.begin() + off, x.ints.begin() + off + inner);
      }
    }
  }
  return out;
}

Dims axes_of(const Node& node, const Inputs& in, std::int64_t opset, std::int64_t input_opset) {
  if (opset >= input_opset) return has_input(in, 1) ? int_values(node, in, 1) : Dims{};
  return attr_ints(node, "axes");
}

Tensor squeeze(const Node& node, const Inputs& in, std::int64_t opset) {
  const Tensor& x = need(node, in, 0);
  Dims axes = axes_of(node, in, opset, 13);
  std::set<std::int64_t> drop;
  for (auto a : axes) drop.insert(norm_axis(node, a, x.dims.size()));
  Dims dims;
  for (std::size_t i = 0; i < x.dims.size(); ++i) {
    const bool listed = drop.count(static_cast<std::int64_t>(i)) > 0;
    if (listed && x.dims[i] != 1) fail(node, "cannot squeeze a non-unit axis");
    if (listed || (axes.empty() && x.dims[i] == 1)) continue;
    dims.push_back(x.dims[i]);
  }
  return reshaped(x, dims);
}

Tensor unsqueeze(const Node& node, const Inputs& in, std::int64_t opset) {
  const Tensor& x = need(node, in, 0);
  const Dims axes = axes_of(node, in, opset, 13);
  const std::size_t rank = x.dims.size() + axes.size();
  std::set<std::int64_t> add;
  for (auto a : axes) add.insert(norm_axis(node, a, rank));
  Dims dims;
  std::size_t k = 0;
  for (std::size_t i = 0; i < rank; ++i) {
    if (add.count(static_cast<std::int64_t>(i)) > 0) dims.push_back(1);
    else dims.push_back(x.dims[k++]);
  }
  return reshaped(x, dims);
}

Tensor reduce_mean(const Node& node, const Inputs& in, std::int64_t opset) {
  const Tensor& x = need_float(node, in, 0);
  const std::size_t rank = x.dims.size();
  Dims axes = axes_of(node, in, opset, 18);
  const bool keep = attr_int(node, "keepdims", 1) != 0;
  std::vector<bool> reduce(rank, axes.empty());
  for (auto a : axes) reduce[static_cast<std::size_t>(norm_axis(node, a, rank))] = true;
  Dims kept(rank);
  Dims out_dims;
  for (std::size_t i = 0; i < rank; ++i) {
    kept[i] = reduce[i] ? 1 : x.dims[i];
    if (!reduce[i] || keep) out_dims.push_back(kept[i]);
  }
  const std::int64_t n_out = product(kept);
  const std::int64_t count = static_cast<std::int64_t>(x.numel()) / std::max<std::int64_t>(n_out, 1);
  std::vector<double> acc(static_cast<std::size_t>(n_out), 0.0);
  // Walk the input once, mapping each element onto its reduced slot.
  std::vector<std::int64_t> in_stride(rank, 1);
  std::vector<std::int64_t> out_stride = broadcast_strides(kept, x.dims);
  for (std::size_t i = rank; i-- > 1;) in_stride[i - 1] = in_stride[i] * x.dims[i];
  for_each_broadcast(x.dims, in_stride, out_stride,
                     [&](std::int64_t, std::int64_t ia, std::int64_t io) {
                       acc[static_cast<std::size_t>(io)] += x.floats[static_cast<std::size_t>(ia)];
                     });
  Tensor out;
  out.dims = out_dims;
  for (double v : acc) out.floats.push_back(static_cast<float>(v / static_cast<double>(count)));
  return out;
}

Tensor pad(const Node& node, const Inputs& in, std::int64_t opset) {
  const Tensor& x = need_float(node, in, 0);
  if (attr_string(node, "mode", "constant") != "constant") fail(node, "only constant mode is supported");
  Dims pads;
  float value = 0.0F;
  if (opset >= 11) {
    pads = int_values(node, in, 1);
    if (has_input(in, 2)) {
      const Tensor& v = need_float(node, in, 2);
      if (!v.floats.empty()) value = v.floats[0];
    }
  } else {
    pads = attr_ints(node, "pads");
    value = attr_float(node, "value", 0.0F);
  }
  const std::size_t rank = x.dims.size();
  if (pads.size() != 2 * rank) fail(node, "pads has wrong length");
  Tensor out;
  for (std::size_t i = 0; i < rank; ++i) {
    out.dims.push_back(x.dims[i] + pads[i] + pads[i + rank]);
    if (out.dims.back() < 0) fail(node, "negative output size");
  }
  out.floats.assign(static_cast<std::size_t>(product(out.dims)), value);
  std::vector<std::int64_t> idx(rank, 0);
  std::vector<std::int64_t> out_stride(rank, 1);
  for (std::size_t i = rank; i-- > 1;) out_stride[i - 1] = out_stride[i] * out.dims[i];
  const std::int64_t n = static_cast<std::int64_t>(x.numel());
  for (std::int64_t e = 0; e < n; ++e) {
    std::int64_t off = 0;
    bool inside = true;
    for (std::size_t i = 0; i < rank; ++i) {
      const std::int64_t p = idx[i] + pads[i];
      if (p < 0 || p >= out.dims[i]) inside = false;
      off += p * out_stride[i];
    }
    if (inside) out.floats[static_cast<std::size_t>(off)] = x.floats[static_cast<std::size_t>(e)];
    for (std::size_t i = rank; i-- > 0;) {
      if (++idx[i] < x.dims[i]) break;
      idx[i] = 0;
    }
  }
  return out;
}

Tensor cast(const Node& node, const Inputs& in) {
  const Tensor& x = need(node, in, 0);
  const auto to = attr_int(node, "to", 1);
  Tensor out;
  out.dims = x.dims;
  if (to == 1 || to == 11) {
    out.type = DataType::float32;
    if (x.type == DataType::float32) out.floats = x.floats;
    else out.floats.assign(x.ints.begin(), x.ints.end());
  } else if (to == 6 || to == 7 || to == 9) {
    out.type = DataType::int64;
    if (x.type == DataType::int64) {
      out.ints = x.ints;
    } else {
      for (float v : x.floats) out.ints.push_back(static_cast<std::int64_t>(v));
    }
    if (to == 9) {
      for (auto& v : out.ints) v = v != 0 ? 1 : 0;
    }
  } else {
    fail(node, "unsupported cast target " + std::to_string(to));
  }
  return out;
}

Tensor constant(const Node& node) {
  if (const auto* a = node.attribute("value")) return a->t;
  if (const auto* a = node.attribute("value_float")) return Tensor::of_floats({}, {a->f});
  if (const auto* a = node.attribute("value_floats")) {
    return Tensor::of_floats({static_cast<std::int64_t>(a->floats.size())}, a->floats);
  }
  if (const auto* a = node.attribute("value_int")) return Tensor::of_ints({}, {a->i});
  if (const auto* a = node.attribute("value_ints")) {
    return Tensor::of_ints({static_cast<std::int64_t>(a->ints.size())}, a->ints);
  }
  fail(node, "no supported value attribute");
}

Tensor shape_of(const Node& node, const Inputs& in) {
  const Tensor& x = need(node, in, 0);
  const auto rank = static_cast<std::int64_t>(x.dims.size());
  auto clamp = [rank](std::int64_t v) {
    if (v < 0) v += rank;
    return std::clamp<std::int64_t>(v, 0, rank);
  };
  const std::int64_t start = clamp(attr_int(node, "start", 0));
  const std::int64_t end = clamp(attr_int(node, "end", rank));
  Dims d(x.dims.begin() + start, x.dims.begin() + std::max(start, end));
  return Tensor::of_ints({static_cast<std::int64_t>(d.size())}, d);
}

Tensor clip(const Node& node, const Inputs& in, std::int64_t opset) {
  float lo = -std::numeric_limits<float>::infinity();
  float hi = std::numeric_limits<float>::infinity();
  if (opset >= 11) {
    if (has_input(in, 1)) lo = need_float(node, in, 1).floats.at(0);
    if (has_input(in, 2)) hi = need_float(node, in, 2).floats.at(0);
  } else {
    lo = attr_float(node, "min", lo);
    hi = attr_float(node, "max", hi);
  }
  return unary(node, in, [lo, hi](float v) { return std::min(std::max(v, lo), hi); });
}

std::vector<Tensor> evaluate(const Node& node, const Inputs& in, std::int64_t opset) {
  if (!node.domain.empty() && node.domain != "ai.onnx") {
    fail(node, "operators from domain '" + node.domain + "' are not supported");
  }
  const std::string& op = node.op_type;
  if (op == "Conv") return {conv(node, in)};
  if (op == "Relu") return {unary(node, in, [](float v) { return v > 0.0F ? v : 0.0F; })};
  if (op == "LeakyRelu") {
    const float alpha = attr_float(node, "alpha", 0.01F);
    return {unary(node, in, [alpha](float v) { return v >= 0.0F ? v : alpha * v; })};
  }
  if (op == "Sigmoid") return {unary(node, in, [](float v) { return 1.0F / (1.0F + std::exp(-v)); })};
  if (op == "Tanh") return {unary(node, in, [](float v) { return std::tanh(v); })};
  if (op == "Clip") return {clip(node, in, opset)};
  if (op == "BatchNormalization") return {batch_norm(node, in)};
  if (op == "MaxPool") return {pool(node, in, true)};
  if (op == "AveragePool") return {pool(node, in, false)};
  if (op == "GlobalAveragePool") return {global_pool(node, in, false)};
  if (op == "GlobalMaxPool") return {global_pool(node, in, true)};
  if (op == "Add" || op == "Sub" || op == "Mul" || op == "Div") return {binary(node, in)};
  if (op == "Gemm") return {gemm(node, in)};
  if (op == "MatMul") return {matmul(node, in)};
  if (op == "Softmax") return {softmax(node, in, opset)};
  if (op == "Flatten") return {flatten(node, in)};
  if (op == "Reshape") return {reshape(node, in)};
  if (op == "Transpose") return {transpose(node, in)};
  if (op == "Concat") return {concat(node, in)};
  if (op == "Gather") return {gather(node, in)};
  if (op == "Squeeze") return {squeeze(node, in, opset)};
  if (op == "Unsqueeze") return {unsqueeze(node, in, opset)};
  if (op == "ReduceMean") return {reduce_mean(node, in, opset)};
  if (op == "Pad") return {pad(node, in, opset)};
  if (op == "Cast") return {cast(node, in)};
  if (op == "Constant") return {constant(node)};
  if (op == "Shape") return {shape_of(node, in)};
  if (op == "Identity" || op == "Dropout") {
    Tensor t = need(node, in, 0);
    t.name.clear();
    return {t};
  }
  fail(node, "unsupported operator");
}

}  // namespace

Executor::Executor(Model model) : model_(std::move(model)) {
  const auto& g = model_.graph;
  for (std::size_t i = 0; i < g.initializers.size(); ++i) initializer_index_[g.initializers[i].name] = i;
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    for (const auto& o : g.nodes[i].outputs) {
      if (!o.empty()) producer_[o] = i;
    }
  }
}

std::vector<std::string> Executor::value_names() const {
  std::vector<std::string> names;
  for (const auto& o : model_.graph.outputs) names.push_back(o.name);
  for (const auto& n : model_.graph.nodes) {
    for (const auto& o : n.outputs) {
      if (!o.empty() && std::find(names.begin(), names.end(), o) == names.end()) names.push_back(o);
    }
  }
  return names;
}

bool Executor::produces(const std::string& name) const { return producer_.count(name) > 0; }

std::map<std::string, Tensor> Executor::run(const std::map<std::string, Tensor>& feeds,
                                             const std::vector<std::string>& outputs) const {
  const auto& g = model_.graph;
  // Mark the nodes that the requested outputs depend on.
  std::vector<bool> needed(g.nodes.size(), false);
  std::vector<std::string> stack(outputs.begin(), outputs.end());
  std::set<std::string> seen;
  while (!stack.empty()) {
    std::string name = std::move(stack.back());
    stack.pop_back();
    if (name.empty() || !seen.insert(name).second) continue;
    if (feeds.count(name) > 0) continue;
    auto it = producer_.find(name);
    if (it == producer_.end()) {
      if (initializer_index_.count(name) > 0) continue;
      throw InputError("ONNX: no value named '" + name + "'");
    }
    if (needed[it->second]) continue;
    needed[it->second] = true;
    for (const auto& in : g.nodes[it->second].inputs) stack.push_back(in);
  }

  std::map<std::string, Tensor> env;
  auto lookup = [&](const std::string& name) -> const Tensor* {
    if (name.empty()) return nullptr;
    if (auto it = feeds.find(name); it != feeds.end()) return &it->second;
    if (auto it = env.find(name); it != env.end()) return &it->second;
    if (auto it = initializer_index_.find(name); it != initializer_index_.end()) {
      return &g.initializers[it->second];
    }
    throw InputError("ONNX: value '" + name + "' is used before it is produced");
  };
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    if (!needed[i]) continue;
    const Node& node = g.nodes[i];
    Inputs in;
    in.reserve(node.inputs.size());
    for (const auto& name : node.inputs) in.push_back(lookup(name));
    auto results = evaluate(node, in, model_.opset);
    for (std::size_t k = 0; k < results.size() && k < node.outputs.size(); ++k) {
      if (!node.outputs[k].empty()) {
        results[k].name = node.outputs[k];
        env[node.outputs[k]] = std::move(results[k]);
      }
    }
  }

  std::map<std::string, Tensor> result;
  for (const auto& name : outputs) {
    const Tensor* t = lookup(name);
    if (t == nullptr) throw InputError("ONNX: empty output name");
    result[name] = *t;
  }
  return result;
}

}  // namespace histofuse::onnx
