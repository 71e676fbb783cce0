#pragma once

// Loading of exported ONNX segmentation graphs plus their JSON metadata sidecar.
// Graph execution lives in the compiled `tvol` library (src/onnx).

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>

#include "json.hpp"
#include "tvol/error.hpp"
#include "tvol/inference.hpp"

namespace tvol::onnx {

/// Sidecar next to the graph: model.onnx -> model.json.
inline std::filesystem::path sidecar_path(const std::filesystem::path& model_path) {
  auto p = model_path;
  return p.replace_extension(".json");
}

struct Sidecar {
  inference::ModelMetadata metadata;
  bool has_decision = false;
  std::optional<std::string> model_id;
};

/// Keys: normalization_hash, channel_order, slice_axis, decision, model_id. All optional.
inline Sidecar parse_sidecar(const nlohmann::json& j) {
  Sidecar s;
  try {
    if (j.contains("normalization_hash")) s.metadata.normalization_hash = j.at("normalization_hash").get<std::string>();
    if (j.contains("channel_order")) {
      const auto order = j.at("channel_order").get<std::vector<std::string>>();
      if (order.size() != 3) throw Error(ErrorKind::InvalidConfig, "channel_order must list three channels");
      for (int i = 0; i < 3; ++i) s.metadata.channel_order[i] = order[i];
    }
    if (j.contains("slice_axis")) s.metadata.slice_axis = j.at("slice_axis").get<int>();
    if (j.contains("decision")) {
      s.metadata.decision = inference::parse_decision(j.at("decision").get<std::string>());
      s.has_decision = true;
    }
    if (j.contains("model_id")) s.model_id = j.at("model_id").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("model sidecar: ") + e.what());
  }
  if (s.metadata.slice_axis < 0 || s.metadata.slice_axis > 2)
    throw Error(ErrorKind::InvalidConfig, "model sidecar: slice_axis must be 0, 1 or 2");
  return s;
}

inline std::optional<Sidecar> read_sidecar(const std::filesystem::path& model_path) {
  const auto path = sidecar_path(model_path);
  std::ifstream in(path);
  if (!in) return std::nullopt;
  try {
    return parse_sidecar(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::InvalidConfig, path.string() + ": " + e.what());
  }
}

inline nlohmann::ordered_json sidecar_json(const inference::ModelMetadata& m, const std::string& model_id = {}) {
  nlohmann::ordered_json j;
  j["normalization_hash"] = m.normalization_hash;
  j["channel_order"] = m.channel_order;
  j["slice_axis"] = m.slice_axis;
  j["decision"] = inference::to_string(m.decision);
  if (!model_id.empty()) j["model_id"] = model_id;
  return j;
}

/// Parses and validates a graph with exactly one float image input of shape
/// (N,3,H,W) or (N,3,D,H,W). Metadata comes from the sidecar when present,
/// otherwise defaults are used and a warning is logged.
/// Errors: InvalidGraph (missing/unparsable file, unsupported op, bad wiring),
/// ShapeMismatch (channel count, rank, output classes).
inference::ModelHandle load_model(const std::filesystem::path& path);

}  // namespace tvol::onnx
