#include <cstring>
#include <string>

#include "binary_io.hpp"
#include "histofuse/error.hpp"
#include "histofuse/onnx.hpp"
#include "onnx.pb.h"

// Conversion between the protobuf messages generated from onnx.proto and the
// plain structs the interpreter works on.

namespace histofuse::onnx {

namespace {

template <typename T>
std::vector<T> copy_le(const std::string& raw, std::size_t n, const std::string& name) {
  if (raw.size() != n * sizeof(T)) {
    throw InputError("ONNX: raw data of tensor '" + name + "' has wrong size");
  }
  std::vector<T> out(n);
  detail::ByteReader r({reinterpret_cast<const std::uint8_t*>(raw.data()), raw.size()});
  for (auto& v : out) {
    if constexpr (sizeof(T) == 8) v = std::bit_cast<T>(r.u64());
    else v = std::bit_cast<T>(r.u32());
  }
  return out;
}

Tensor from_proto(const ::onnx::TensorProto& p) {
  if (p.data_location() == ::onnx::TensorProto_DataLocation_EXTERNAL) {
    throw InputError("ONNX: tensor '" + p.name() + "' uses external data, which is not supported");
  }
  Tensor t;
  t.name = p.name();
  t.dims.assign(p.dims().begin(), p.dims().end());
  const std::size_t n = t.numel();
  const bool raw = p.has_raw_data();
  switch (p.data_type()) {
    case ::onnx::TensorProto_DataType_FLOAT:
      t.type = DataType::float32;
      if (raw) t.floats = copy_le<float>(p.raw_data(), n, t.name);
      else t.floats.assign(p.float_data().begin(), p.float_data().end());
      break;
    case ::onnx::TensorProto_DataType_DOUBLE: {
      t.type = DataType::float32;
      if (raw) {
        const auto d = copy_le<double>(p.raw_data(), n, t.name);
        t.floats.assign(d.begin(), d.end());
      } else {
        t.floats.assign(p.double_data().begin(), p.double_data().end());
      }
      break;
    }
    case ::onnx::TensorProto_DataType_INT64:
      t.type = DataType::int64;
      if (raw) t.ints = copy_le<std::int64_t>(p.raw_data(), n, t.name);
      else t.ints.assign(p.int64_data().begin(), p.int64_data().end());
      break;
    case ::onnx::TensorProto_DataType_INT32: {
      t.type = DataType::int64;
      if (raw) {
        const auto d = copy_le<std::int32_t>(p.raw_data(), n, t.name);
        t.ints.assign(d.begin(), d.end());
      } else {
        t.ints.assign(p.int32_data().begin(), p.int32_data().end());
      }
      break;
    }
    default:
      throw InputError("ONNX: tensor '" + t.name + "' has unsupported data type " +
                       std::to_string(p.data_type()));
  }
  const std::size_t have = t.type == DataType::float32 ? t.floats.size() : t.ints.size();
  if (have != n) {
    throw InputError("ONNX: tensor '" + t.name + "' holds " + std::to_string(have) +
                     " values for " + std::to_string(n) + " elements");
  }
  return t;
}

void to_proto(const Tensor& t, ::onnx::TensorProto& p) {
  p.set_name(t.name);
  for (auto d : t.dims) p.add_dims(d);
  detail::ByteWriter raw;
  if (t.type == DataType::float32) {
    p.set_data_type(::onnx::TensorProto_DataType_FLOAT);
    for (float v : t.floats) raw.f32(v);
  } else {
    p.set_data_type(::onnx::TensorProto_DataType_INT64);
    for (auto v : t.ints) raw.i64(v);
  }
  p.set_raw_data(std::string(raw.bytes().begin(), raw.bytes().end()));
}

ValueInfo from_proto(const ::onnx::ValueInfoProto& p) {
  ValueInfo v;
  v.name = p.name();
  if (p.has_type() && p.type().has_tensor_type()) {
    const auto& tt = p.type().tensor_type();
    v.elem_type = static_cast<DataType>(tt.elem_type());
    if (tt.has_shape()) {
      v.has_shape = true;
      for (const auto& d : tt.shape().dim()) {
        Dimension dim;
        if (d.has_dim_value()) dim.value = d.dim_value();
        if (d.has_dim_param()) dim.param = d.dim_param();
        v.shape.push_back(std::move(dim));
      }
    }
  }
  return v;
}

void to_proto(const ValueInfo& v, ::onnx::ValueInfoProto& p) {
  p.set_name(v.name);
  auto* tt = p.mutable_type()->mutable_tensor_type();
  tt->set_elem_type(static_cast<std::int32_t>(v.elem_type));
  if (!v.has_shape) return;
  auto* shape = tt->mutable_shape();
  for (const auto& d : v.shape) {
    auto* dim = shape->add_dim();
    if (d.value >= 0) dim->set_dim_value(d.value);
    else if (!d.param.empty()) dim->set_dim_param(d.param);
  }
}

Attribute from_proto(const ::onnx::AttributeProto& p) {
  Attribute a;
  a.name = p.name();
  a.type = static_cast<Attribute::Type>(p.type());
  a.f = p.f();
  a.i = p.i();
  a.s = p.s();
  if (p.has_t()) a.t = from_proto(p.t());
  a.floats.assign(p.floats().begin(), p.floats().end());
  a.ints.assign(p.ints().begin(), p.ints().end());
  a.strings.assign(p.strings().begin(), p.strings().end());
  return a;
}

void to_proto(const Attribute& a, ::onnx::AttributeProto& p) {
  p.set_name(a.name);
  p.set_type(static_cast<::onnx::AttributeProto_AttributeType>(a.type));
  switch (a.type) {
    case Attribute::Type::floating: p.set_f(a.f); break;
    case Attribute::Type::integer: p.set_i(a.i); break;
    case Attribute::Type::string: p.set_s(a.s); break;
    case Attribute::Type::tensor: to_proto(a.t, *p.mutable_t()); break;
    case Attribute::Type::floats:
      for (float v : a.floats) p.add_floats(v);
      break;
    case Attribute::Type::ints:
      for (auto v : a.ints) p.add_ints(v);
      break;
    case Attribute::Type::strings:
      for (const auto& s : a.strings) p.add_strings(s);
      break;
    case Attribute::Type::undefined: break;
  }
}

}  // namespace

std::size_t Tensor::numel() const {
  std::size_t n = 1;
  for (auto d : dims) n *= static_cast<std::size_t>(d);
  return n;
}

Tensor Tensor::of_floats(std::vector<std::int64_t> dims, std::vector<float> data, std::string name) {
  Tensor t;
  t.name = std::move(name);
  t.dims = std::move(dims);
  t.type = DataType::float32;
  t.floats = std::move(data);
  if (t.floats.size() != t.numel()) throw InputError("tensor data does not match its shape");
  return t;
}

Tensor Tensor::of_ints(std::vector<std::int64_t> dims, std::vector<std::int64_t> data, std::string name) {
  Tensor t;
  t.name = std::move(name);
  t.dims = std::move(dims);
  t.type = DataType::int64;
  t.ints = std::move(data);
  if (t.ints.size() != t.numel()) throw InputError("tensor data does not match its shape");
  return t;
}

const Attribute* Node::attribute(std::string_view attr_name) const {
  for (const auto& a : attributes) {
    if (a.name == attr_name) return &a;
  }
  return nullptr;
}

Model parse_model(std::span<const std::uint8_t> bytes) {
  ::onnx::ModelProto p;
  if (bytes.size() > static_cast<std::size_t>(INT32_MAX) ||
      !p.ParseFromArray(bytes.data(), static_cast<int>(bytes.size()))) {
    throw InputError("ONNX: not a valid model protobuf");
  }
  if (!p.has_graph()) throw InputError("ONNX: model has no graph");
  Model m;
  m.ir_version = p.ir_version();
  m.producer_name = p.producer_name();
  m.opset = 0;
  for (const auto& op : p.opset_import()) {
    if (op.domain().empty() || op.domain() == "ai.onnx") m.opset = op.version();
  }
  if (m.opset == 0) m.opset = 13;
  const auto& g = p.graph();
  m.graph.name = g.name();
  for (const auto& n : g.node()) {
    Node node;
    node.name = n.name();
    node.op_type = n.op_type();
    node.domain = n.domain();
    node.inputs.assign(n.input().begin(), n.input().end());
    node.outputs.assign(n.output().begin(), n.output().end());
    for (const auto& a : n.attribute()) node.attributes.push_back(from_proto(a));
    m.graph.nodes.push_back(std::move(node));
  }
  for (const auto& t : g.initializer()) m.graph.initializers.push_back(from_proto(t));
  for (const auto& v : g.input()) m.graph.inputs.push_back(from_proto(v));
  for (const auto& v : g.output()) m.graph.outputs.push_back(from_proto(v));
  for (const auto& v : g.value_info()) m.graph.value_info.push_back(from_proto(v));
  return m;
}

Model load_model(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw InputError("model file not found: " + path.string());
  const auto bytes = detail::read_file(path.string());
  try {
    return parse_model(bytes);
  } catch (const InputError& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> serialize_model(const Model& model) {
  ::onnx::ModelProto p;
  p.set_ir_version(model.ir_version);
  if (!model.producer_name.empty()) p.set_producer_name(model.producer_name);
  auto* op = p.add_opset_import();
  op->set_domain("");
  op->set_version(model.opset);
  auto* g = p.mutable_graph();
  g->set_name(model.graph.name);
  for (const auto& n : model.graph.nodes) {
    auto* node = g->add_node();
    for (const auto& i : n.inputs) node->add_input(i);
    for (const auto& o : n.outputs) node->add_output(o);
    if (!n.name.empty()) node->set_name(n.name);
    node->set_op_type(n.op_type);
    if (!n.domain.empty()) node->set_domain(n.domain);
    for (const auto& a : n.attributes) to_proto(a, *node->add_attribute());
  }
  for (const auto& t : model.graph.initializers) to_proto(t, *g->add_initializer());
  for (const auto& v : model.graph.inputs) to_proto(v, *g->add_input());
  for (const auto& v : model.graph.outputs) to_proto(v, *g->add_output());
  for (const auto& v : model.graph.value_info) to_proto(v, *g->add_value_info());
  const std::string s = p.SerializeAsString();
  return {s.begin(), s.end()};
}

void save_model(const std::filesystem::path& path, const Model& model) {
  detail::write_file(path.string(), serialize_model(model));
}

std::vector<const ValueInfo*> runtime_inputs(const Graph& graph) {
  std::vector<const ValueInfo*> out;
  for (const auto& in : graph.inputs) {
    bool is_init = false;
    for (const auto& t : graph.initializers) {
      if (t.name == in.name) {
        is_init = true;
        break;
      }
    }
    if (!is_init) out.push_back(&in);
  }
  return out;
}

}  // namespace histofuse::onnx
