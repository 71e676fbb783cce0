#include <cstring>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>

#include "runtime.hpp"
#include "tvol/error.hpp"

namespace tvol::onnx_rt {

std::size_t numel(const std::vector<std::int64_t>& shape) {
  std::size_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw std::runtime_error("negative dimension in " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const std::vector<std::int64_t>& shape) {
  std::string s = "(";
  for (std::size_t k = 0; k < shape.size(); ++k) s += (k ? "," : "") + std::to_string(shape[k]);
  return s + ")";
}

Value Value::floats(std::vector<std::int64_t> shape, std::vector<float> data) {
  if (onnx_rt::numel(shape) != data.size()) throw std::runtime_error("float tensor size does not match " + shape_str(shape));
  Value v;
  v.type = DType::Float;
  v.shape = std::move(shape);
  v.f = std::move(data);
  return v;
}

Value Value::ints(std::vector<std::int64_t> shape, std::vector<std::int64_t> data) {
  if (onnx_rt::numel(shape) != data.size()) throw std::runtime_error("int tensor size does not match " + shape_str(shape));
  Value v;
  v.type = DType::Int64;
  v.shape = std::move(shape);
  v.i = std::move(data);
  return v;
}

std::size_t Value::numel() const { return is_float() ? f.size() : i.size(); }

std::vector<std::int64_t> Value::to_ints() const {
  if (!is_float()) return i;
  std::vector<std::int64_t> out(f.size());
  for (std::size_t k = 0; k < f.size(); ++k) out[k] = static_cast<std::int64_t>(f[k]);
  return out;
}

std::vector<float> Value::to_floats() const {
  if (is_float()) return f;
  std::vector<float> out(i.size());
  for (std::size_t k = 0; k < i.size(); ++k) out[k] = static_cast<float>(i[k]);
  return out;
}

namespace {

template <typename T>
std::vector<T> raw_as(const std::string& raw, std::size_t count) {
  if (raw.size() != count * sizeof(T)) throw Error(ErrorKind::InvalidGraph, "tensor raw_data has the wrong length");
  std::vector<T> out(count);
  // ONNX raw_data is little-endian, which matches every supported host.
  std::memcpy(out.data(), raw.data(), raw.size());
  return out;
}

float half_to_float(std::uint16_t h) {
  const std::uint32_t sign = (h & 0x8000u) << 16;
  std::uint32_t exp = (h >> 10) & 0x1f;
  std::uint32_t mant = h & 0x3ff;
  std::uint32_t bits;
  if (exp == 0) {
    if (mant == 0) {
      bits = sign;
    } else {
      exp = 127 - 15 + 1;
      while (!(mant & 0x400)) {
        mant <<= 1;
        --exp;
      }
      bits = sign | (exp << 23) | ((mant & 0x3ff) << 13);
    }
  } else if (exp == 31) {
    bits = sign | 0x7f800000u | (mant << 13);
  } else {
    bits = sign | ((exp + 127 - 15) << 23) | (mant << 13);
  }
  float f;
  std::memcpy(&f, &bits, sizeof f);
  return f;
}

}  // namespace

Value from_tensor_proto(const onnx::TensorProto& t) {
  if (t.data_location() == onnx::TensorProto::EXTERNAL)
    throw Error(ErrorKind::InvalidGraph, "tensor '" + t.name() + "' uses external data");
  std::vector<std::int64_t> shape(t.dims().begin(), t.dims().end());
  std::size_t count = 1;
  for (auto d : shape) count *= static_cast<std::size_t>(d);
  const bool raw = t.has_raw_data();
  switch (t.data_type()) {
    case onnx::TensorProto::FLOAT: {
      auto v = raw ? raw_as<float>(t.raw_data(), count) : std::vector<float>(t.float_data().begin(), t.float_data().end());
      if (v.size() != count) throw Error(ErrorKind::InvalidGraph, "tensor '" + t.name() + "' size mismatch");
      return Value::floats(shape, std::move(v));
    }
    case onnx::TensorProto::DOUBLE: {
      auto d = raw ? raw_as<double>(t.raw_data(), count)
                   : std::vector<double>(t.double_data().begin(), t.double_data().end());
      return Value::floats(shape, std::vector<float>(d.begin(), d.end()));
    }
    case onnx::TensorProto::FLOAT16: {
      std::vector<float> v(count);
      if (raw) {
        const auto h = raw_as<std::uint16_t>(t.raw_data(), count);
        for (std::size_t k = 0; k < count; ++k) v[k] = half_to_float(h[k]);
      } else {
        for (std::size_t k = 0; k < count; ++k) v[k] = half_to_float(static_cast<std::uint16_t>(t.int32_data(static_cast<int>(k))));
      }
      return Value::floats(shape, std::move(v));
    }
    case onnx::TensorProto::INT64: {
      auto v = raw ? raw_as<std::int64_t>(t.raw_data(), count)
                   : std::vector<std::int64_t>(t.int64_data().begin(), t.int64_data().end());
      return Value::ints(shape, std::move(v));
    }
    case onnx::TensorProto::INT32: {
      auto v = raw ? raw_as<std::int32_t>(t.raw_data(), count)
                   : std::vector<std::int32_t>(t.int32_data().begin(), t.int32_data().end());
      return Value::ints(shape, std::vector<std::int64_t>(v.begin(), v.end()));
    }
    case onnx::TensorProto::UINT8:
    case onnx::TensorProto::BOOL: {
      std::vector<std::int64_t> v;
      if (raw) {
        const auto b = raw_as<std::uint8_t>(t.raw_data(), count);
        v.assign(b.begin(), b.end());
      } else {
        v.assign(t.int32_data().begin(), t.int32_data().end());
      }
      return Value::ints(shape, std::move(v));
    }
    default:
      throw Error(ErrorKind::InvalidGraph,
                  "tensor '" + t.name() + "' has unsupported data type " + std::to_string(t.data_type()));
  }
}

const onnx::AttributeProto* find_attr(const onnx::NodeProto& n, const std::string& name) {
  for (const auto& a : n.attribute())
    if (a.name() == name) return &a;
  return nullptr;
}

std::int64_t attr_int(const onnx::NodeProto& n, const std::string& name, std::int64_t def) {
  const auto* a = find_attr(n, name);
  return a ? a->i() : def;
}

float attr_float(const onnx::NodeProto& n, const std::string& name, float def) {
  const auto* a = find_attr(n, name);
  return a ? a->f() : def;
}

std::string attr_string(const onnx::NodeProto& n, const std::string& name, const std::string& def) {
  const auto* a = find_attr(n, name);
  return a ? a->s() : def;
}

std::vector<std::int64_t> attr_ints(const onnx::NodeProto& n, const std::string& name, std::vector<std::int64_t> def) {
  const auto* a = find_attr(n, name);
  if (!a) return def;
  return {a->ints().begin(), a->ints().end()};
}

namespace {

std::vector<std::int64_t> dims_of(const onnx::ValueInfoProto& vi) {
  std::vector<std::int64_t> d;
  if (!vi.type().has_tensor_type() || !vi.type().tensor_type().has_shape()) return d;
  for (const auto& dim : vi.type().tensor_type().shape().dim()) d.push_back(dim.has_dim_value() ? dim.dim_value() : -1);
  return d;
}

}  // namespace

Graph::Graph(const onnx::ModelProto& model) {
  ctx_.opset = 0;
  for (const auto& o : model.opset_import())
    if (o.domain().empty() || o.domain() == "ai.onnx") ctx_.opset = o.version();
  if (ctx_.opset == 0) throw Error(ErrorKind::InvalidGraph, "model declares no default-domain opset");
  const auto& g = model.graph();

  std::map<std::string, int> slot;
  auto slot_of = [&](const std::string& name) {
    auto [it, fresh] = slot.emplace(name, static_cast<int>(slot.size()));
    return it->second;
  };

  std::map<int, Value> init;
  for (const auto& t : g.initializer()) init[slot_of(t.name())] = from_tensor_proto(t);

  std::vector<const onnx::ValueInfoProto*> inputs;
  for (const auto& vi : g.input())
    if (!slot.count(vi.name()) || !init.count(slot.at(vi.name()))) inputs.push_back(&vi);
  if (inputs.size() != 1)
    throw Error(ErrorKind::InvalidGraph, "graph must have exactly one image input, found " + std::to_string(inputs.size()));
  const auto& in_vi = *inputs[0];
  if (in_vi.type().tensor_type().elem_type() != onnx::TensorProto::FLOAT)
    throw Error(ErrorKind::InvalidGraph, "graph input must be float32");
  input_slot_ = slot_of(in_vi.name());
  input_dims_ = dims_of(in_vi);
  if (g.output_size() != 1)
    throw Error(ErrorKind::InvalidGraph, "graph must have exactly one output, found " + std::to_string(g.output_size()));
  output_dims_ = dims_of(g.output(0));

  std::set<int> available;
  for (const auto& [s, v] : init) available.insert(s);
  available.insert(input_slot_);
  for (const auto& node : g.node()) {
    if (auto why = unsupported_reason(node))
      throw Error(ErrorKind::InvalidGraph, "unsupported " + *why + " (node '" + node.name() + "')");
    Step step;
    step.node = node;
    for (const auto& name : node.input()) {
      if (name.empty()) {
        step.inputs.push_back(-1);
        continue;
      }
      const auto it = slot.find(name);
      if (it == slot.end() || !available.count(it->second))
        throw Error(ErrorKind::InvalidGraph, "node '" + node.name() + "' reads '" + name + "' before it is produced");
      step.inputs.push_back(it->second);
    }
    for (const auto& name : node.output()) {
      if (name.empty()) {
        step.outputs.push_back(-1);
        continue;
      }
      const int s = slot_of(name);
      available.insert(s);
      step.outputs.push_back(s);
    }
    steps_.push_back(std::move(step));
  }
  const auto out_it = slot.find(g.output(0).name());
  if (out_it == slot.end() || !available.count(out_it->second))
    throw Error(ErrorKind::InvalidGraph, "graph output '" + g.output(0).name() + "' is never produced");
  output_slot_ = out_it->second;

  slot_count_ = slot.size();
  constants_.resize(slot_count_);
  is_constant_.assign(slot_count_, false);
  for (auto& [s, v] : init) {
    constants_[static_cast<std::size_t>(s)] = std::move(v);
    is_constant_[static_cast<std::size_t>(s)] = true;
  }

  // Free each intermediate after its last reader.
  std::vector<int> last_use(slot_count_, -1);
  for (std::size_t k = 0; k < steps_.size(); ++k)
    for (int s : steps_[k].inputs)
      if (s >= 0) last_use[static_cast<std::size_t>(s)] = static_cast<int>(k);
  for (std::size_t s = 0; s < slot_count_; ++s)
    if (last_use[s] >= 0 && !is_constant_[s] && static_cast<int>(s) != output_slot_)
      steps_[static_cast<std::size_t>(last_use[s])].release.push_back(static_cast<int>(s));
}

Value Graph::run(Value input) const {
  if (!input.is_float()) throw Error(ErrorKind::ShapeMismatch, "graph input must be float");
  if (input.shape.size() != input_dims_.size() && !input_dims_.empty())
    throw Error(ErrorKind::ShapeMismatch, "input rank " + std::to_string(input.shape.size()) + " but graph expects " +
                                              shape_str(input_dims_));
  for (std::size_t k = 0; k < input_dims_.size(); ++k)
    if (input_dims_[k] >= 0 && input_dims_[k] != input.shape[k])
      throw Error(ErrorKind::ShapeMismatch, "input " + shape_str(input.shape) + " does not fit graph input " +
                                                shape_str(input_dims_));

  std::vector<std::optional<Value>> locals(slot_count_);
  locals[static_cast<std::size_t>(input_slot_)] = std::move(input);
  auto get = [&](int s) -> const Value* {
    if (s < 0) return nullptr;
    const auto k = static_cast<std::size_t>(s);
    if (is_constant_[k]) return &constants_[k];
    return locals[k] ? &*locals[k] : nullptr;
  };

  const auto& table = op_table();
  for (const auto& step : steps_) {
    Inputs in;
    in.reserve(step.inputs.size());
    for (int s : step.inputs) in.push_back(get(s));
    std::vector<Value> out;
    try {
      out = table.at(step.node.op_type())(ctx_, step.node, in);
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      throw Error(ErrorKind::ExecutorFailure,
                  step.node.op_type() + " node '" + step.node.name() + "': " + e.what());
    }
    for (std::size_t k = 0; k < step.outputs.size() && k < out.size(); ++k)
      if (step.outputs[k] >= 0) locals[static_cast<std::size_t>(step.outputs[k])] = std::move(out[k]);
    for (int s : step.release) locals[static_cast<std::size_t>(s)].reset();
  }
  const Value* result = get(output_slot_);
  if (!result) throw Error(ErrorKind::ExecutorFailure, "graph produced no output");
  if (!result->is_float()) throw Error(ErrorKind::ExecutorFailure, "graph output is not float");
  return *result;
}

}  // namespace tvol::onnx_rt
