#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

// ONNX model reader, writer and CPU interpreter. Only the parts of
// the schema needed for inference graphs are kept; other fields
// are dropped. Tensors are float32 (activations, weights) or int64 (shapes).

namespace histofuse::onnx {

enum class DataType : std::int32_t { undefined = 0, float32 = 1, int32 = 6, int64 = 7, float64 = 11 };

struct Tensor {
  std::string name;
  std::vector<std::int64_t> dims;
  DataType type = DataType::float32;
  std::vector<float> floats;   // float32 payload
  std::vector<std::int64_t> ints;  // int64/int32 payload

  std::size_t numel() const;
  static Tensor of_floats(std::vector<std::int64_t> dims, std::vector<float> data,
                          std::string name = {});
  static Tensor of_ints(std::vector<std::int64_t> dims, std::vector<std::int64_t> data,
                        std::string name = {});
};

struct Attribute {
  enum class Type : std::int32_t {
    undefined = 0, floating = 1, integer = 2, string = 3, tensor = 4,
    floats = 6, ints = 7, strings = 8
  };
  std::string name;
  Type type = Type::undefined;
  float f = 0.0F;
  std::int64_t i = 0;
  std::string s;
  Tensor t;
  std::vector<float> floats;
  std::vector<std::int64_t> ints;
  std::vector<std::string> strings;
};

struct Dimension {
  std::int64_t value = -1;  // -1 when symbolic or absent
  std::string param;
};

struct ValueInfo {
  std::string name;
  DataType elem_type = DataType::float32;
  std::vector<Dimension> shape;
  bool has_shape = false;
};

struct Node {
  std::string name;
  std::string op_type;
  std::string domain;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::vector<Attribute> attributes;

  const Attribute* attribute(std::string_view attr_name) const;
};

struct Graph {
  std::string name;
  std::vector<Node> nodes;
  std::vector<Tensor> initializers;
  std::vector<ValueInfo> inputs;
  std::vector<ValueInfo> outputs;
  std::vector<ValueInfo> value_info;
};

struct Model {
  std::int64_t ir_version = 8;
  std::string producer_name;
  std::int64_t opset = 13;
  Graph graph;
};

/// Throws InputError on a malformed model or unsupported tensor encodings.
Model parse_model(std::span<const std::uint8_t> bytes);
Model load_model(const std::filesystem::path& path);
std::vector<std::uint8_t> serialize_model(const Model& model);
void save_model(const std::filesystem::path& path, const Model& model);

/// Graph inputs that are not initializers.
std::vector<const ValueInfo*> runtime_inputs(const Graph& graph);

/// Evaluates a parsed graph node by node. Immutable after construction, so a
/// single executor may serve concurrent run() calls.
class Executor {
 public:
  explicit Executor(Model model);

  const Model& model() const { return model_; }

  /// Every tensor name the graph can produce (graph outputs and node outputs).
  std::vector<std::string> value_names() const;
  bool produces(const std::string& name) const;

  /// Runs the nodes needed for `outputs` and returns them by name.
  std::map<std::string, Tensor> run(const std::map<std::string, Tensor>& feeds,
                                    const std::vector<std::string>& outputs) const;

 private:
  Model model_;
  std::map<std::string, std::size_t> initializer_index_;
  std::map<std::string, std::size_t> producer_;  // value name -> node index
};

}  // namespace histofuse::onnx
