#pragma once

// Minimal static-graph ONNX interpreter: float32 and int64 tensors, CPU,
// one thread per call. Covers the operator set produced by common
// encoder-decoder segmentation exports.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "onnx.pb.h"

namespace tvol::onnx_rt {

enum class DType { Float, Int64 };

struct Value {
  DType type = DType::Float;
  std::vector<std::int64_t> shape;
  std::vector<float> f;
  std::vector<std::int64_t> i;

  static Value floats(std::vector<std::int64_t> shape, std::vector<float> data);
  static Value ints(std::vector<std::int64_t> shape, std::vector<std::int64_t> data);

  std::size_t numel() const;
  bool is_float() const { return type == DType::Float; }
  std::vector<std::int64_t> to_ints() const;
  std::vector<float> to_floats() const;
};

std::size_t numel(const std::vector<std::int64_t>& shape);
std::string shape_str(const std::vector<std::int64_t>& shape);

struct OpContext {
  std::int64_t opset = 13;
};

using Inputs = std::vector<const Value*>;  // nullptr marks an omitted optional input
using OpFn = std::function<std::vector<Value>(const OpContext&, const onnx::NodeProto&, const Inputs&)>;

const std::map<std::string, OpFn>& op_table();

/// Load-time checks for attribute values the kernels do not implement.
/// Returns an explanation when the node is unsupported.
std::optional<std::string> unsupported_reason(const onnx::NodeProto& node);

Value from_tensor_proto(const onnx::TensorProto& t);

const onnx::AttributeProto* find_attr(const onnx::NodeProto& n, const std::string& name);
std::int64_t attr_int(const onnx::NodeProto& n, const std::string& name, std::int64_t def);
float attr_float(const onnx::NodeProto& n, const std::string& name, float def);
std::string attr_string(const onnx::NodeProto& n, const std::string& name, const std::string& def);
std::vector<std::int64_t> attr_ints(const onnx::NodeProto& n, const std::string& name,
                                    std::vector<std::int64_t> def = {});

class Graph {
 public:
  explicit Graph(const onnx::ModelProto& model);

  /// Runs the graph on one input and returns the single output.
  Value run(Value input) const;

  const std::vector<std::int64_t>& input_dims() const { return input_dims_; }    // -1 = symbolic
  const std::vector<std::int64_t>& output_dims() const { return output_dims_; }  // -1 = symbolic
  std::int64_t opset() const { return ctx_.opset; }

 private:
  struct Step {
    onnx::NodeProto node;
    std::vector<int> inputs;   // slot per input, -1 for omitted
    std::vector<int> outputs;  // slot per output, -1 for unnamed
    std::vector<int> release;  // slots whose last reader is this step
  };

  OpContext ctx_;
  std::vector<Value> constants_;      // initializers, indexed by slot
  std::vector<bool> is_constant_;
  int input_slot_ = -1;
  int output_slot_ = -1;
  std::size_t slot_count_ = 0;
  std::vector<Step> steps_;
  std::vector<std::int64_t> input_dims_;
  std::vector<std::int64_t> output_dims_;
};

}  // namespace tvol::onnx_rt
