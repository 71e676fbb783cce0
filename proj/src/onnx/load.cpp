#include <spdlog/spdlog.h>

#include <fstream>
#include <iterator>
#include <memory>

#include "runtime.hpp"
#include "tvol/onnx_model.hpp"

namespace tvol::onnx {

namespace {

class GraphExecutor final : public inference::Executor {
 public:
  explicit GraphExecutor(std::shared_ptr<const onnx_rt::Graph> g) : graph_(std::move(g)) {}

  inference::Tensor run(const inference::Tensor& input) const override {
    onnx_rt::Value out = graph_->run(onnx_rt::Value::floats(input.shape, input.data));
    return inference::Tensor(std::move(out.shape), std::move(out.f));
  }

 private:
  std::shared_ptr<const onnx_rt::Graph> graph_;
};

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace

inference::ModelHandle load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::InvalidGraph, "cannot open model file " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  ::onnx::ModelProto proto;
  if (bytes.empty() || !proto.ParseFromString(bytes))
    throw Error(ErrorKind::InvalidGraph, path.string() + " is not a serialized ONNX model");

  auto graph = std::make_shared<const onnx_rt::Graph>(proto);
  const auto& dims = graph->input_dims();
  if (dims.size() != 4 && dims.size() != 5)
    throw Error(ErrorKind::ShapeMismatch, "model input must be (N,3,H,W) or (N,3,D,H,W), got " +
                                              inference::shape_string(dims));
  if (dims[1] >= 0 && dims[1] != 3)
    throw Error(ErrorKind::ShapeMismatch, "model input has " + std::to_string(dims[1]) + " channels, expected 3");

  inference::ModelHandle m;
  m.executor = std::make_shared<GraphExecutor>(graph);
  m.input_shape.assign(dims.begin() + 1, dims.end());
  m.input_shape[0] = 3;

  const auto& od = graph->output_dims();
  if (od.size() == dims.size() && od[1] > 0) {
    m.output_classes = static_cast<int>(od[1]);
  } else {
    // Symbolic class axis: probe with a small zero input.
    std::vector<std::int64_t> probe{1, 3};
    for (std::size_t k = 2; k < dims.size(); ++k) probe.push_back(dims[k] > 0 ? dims[k] : (dims.size() == 5 ? 32 : 64));
    try {
      const auto out = m.executor->run(inference::Tensor(probe));
      if (out.rank() != dims.size()) throw Error(ErrorKind::ShapeMismatch, "output rank differs from input rank");
      m.output_classes = static_cast<int>(out.shape[1]);
    } catch (const Error& e) {
      throw Error(ErrorKind::InvalidGraph, "cannot determine output classes: " + std::string(e.what()));
    }
  }
  if (m.output_classes != 1 && m.output_classes != 2)
    throw Error(ErrorKind::ShapeMismatch, "model outputs " + std::to_string(m.output_classes) +
                                              " classes, expected 1 or 2");

  m.model_id = path.stem().string() + "@" + fnv1a_hex(bytes);
  m.metadata.decision = m.output_classes == 2 ? inference::Decision{inference::ArgmaxTwoClass{}}
                                              : inference::Decision{inference::SigmoidThreshold{0.5}};
  if (const auto side = read_sidecar(path)) {
    const auto decision = m.metadata.decision;
    m.metadata = side->metadata;
    if (!side->has_decision) m.metadata.decision = decision;
    if (side->model_id) m.model_id = *side->model_id;
  } else {
    spdlog::warn("no metadata sidecar {} for model {}; using defaults (any normalization, water/fat/in_phase, "
                 "slice axis 2, {})",
                 sidecar_path(path).string(), path.string(), inference::to_string(m.metadata.decision));
  }
  const bool argmax = std::holds_alternative<inference::ArgmaxTwoClass>(m.metadata.decision);
  if (argmax != (m.output_classes == 2))
    throw Error(ErrorKind::DecisionMismatch, "decision rule " + inference::to_string(m.metadata.decision) +
                                                 " does not fit " + std::to_string(m.output_classes) + " output classes");
  inference::validate_handle(m);
  return m;
}

}  // namespace tvol::onnx
