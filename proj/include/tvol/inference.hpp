#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "tvol/cohort.hpp"
#include "tvol/error.hpp"
#include "tvol/geometry.hpp"
#include "tvol/preprocess.hpp"

namespace tvol::inference {

/// Dense row-major float tensor.
struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<float> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::int64_t> s, float fill = 0.0f) : shape(std::move(s)), data(element_count(shape), fill) {}
  Tensor(std::vector<std::int64_t> s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != element_count(shape)) throw Error(ErrorKind::ShapeMismatch, "tensor data does not match shape");
  }

  static std::size_t element_count(const std::vector<std::int64_t>& s) {
    std::size_t n = 1;
    for (auto d : s) n *= static_cast<std::size_t>(d);
    return n;
  }
  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
};

inline std::string shape_string(const std::vector<std::int64_t>& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + ")";
}

/// The pluggable execution boundary: NC[D]HW in, NK[D]HW logits out.
/// Implementations must be safe to call concurrently.
class Executor {
 public:
  virtual ~Executor() = default;
  virtual Tensor run(const Tensor& input) const = 0;
};

struct ArgmaxTwoClass {
  bool operator==(const ArgmaxTwoClass&) const = default;
};
struct SigmoidThreshold {
  double threshold = 0.5;
  bool operator==(const SigmoidThreshold&) const = default;
};
using Decision = std::variant<ArgmaxTwoClass, SigmoidThreshold>;

inline std::string to_string(const Decision& d) {
  if (std::holds_alternative<ArgmaxTwoClass>(d)) return "argmax";
  char buf[64];
  std::snprintf(buf, sizeof buf, "sigmoid:%.17g", std::get<SigmoidThreshold>(d).threshold);
  return buf;
}

/// Accepts "argmax", "sigmoid" or "sigmoid:<t>".
inline Decision parse_decision(const std::string& s) {
  if (s == "argmax") return ArgmaxTwoClass{};
  if (s == "sigmoid") return SigmoidThreshold{};
  if (s.rfind("sigmoid:", 0) == 0) {
    try {
      return SigmoidThreshold{std::stod(s.substr(8))};
    } catch (...) {
    }
  }
  throw Error(ErrorKind::InvalidConfig, "unknown decision rule '" + s + "'");
}

struct ModelMetadata {
  std::string normalization_hash;  // empty: accepts any normalization
  std::array<std::string, 3> channel_order{"water", "fat", "in_phase"};
  int slice_axis = 2;
  Decision decision = ArgmaxTwoClass{};
};

struct ModelHandle {
  std::shared_ptr<const Executor> executor;
  /// Per-sample input shape without the batch axis: (3,H,W) or (3,D,H,W); -1 = dynamic.
  std::vector<std::int64_t> input_shape;
  int output_classes = 2;
  ModelMetadata metadata;
  std::string model_id;

  bool is_3d() const { return input_shape.size() == 4; }
};

inline void validate_handle(const ModelHandle& m) {
  if (!m.executor) throw Error(ErrorKind::InvalidGraph, "model has no executor");
  if (m.input_shape.size() != 3 && m.input_shape.size() != 4)
    throw Error(ErrorKind::ShapeMismatch, "model input must be (3,H,W) or (3,D,H,W), got " + shape_string(m.input_shape));
  if (m.input_shape[0] != 3)
    throw Error(ErrorKind::ShapeMismatch, "model input must have 3 channels, got " + std::to_string(m.input_shape[0]));
  if (m.output_classes != 1 && m.output_classes != 2)
    throw Error(ErrorKind::ShapeMismatch, "model must output 1 or 2 classes, got " + std::to_string(m.output_classes));
}

/// Per-voxel logits on a volume grid; class planes are stored one after another.
struct PredictionVolume {
  VolumeGeometry geometry;
  int classes = 1;
  std::vector<float> logits;

  std::span<const float> plane(int k) const {
    const std::size_t n = geometry.voxel_count();
    return {logits.data() + static_cast<std::size_t>(k) * n, n};
  }
};

/// Places slice planes (each classes x H x W) back into a volume. Slice i
/// goes to position slice_indices[i] along `axis`.
inline PredictionVolume restack(const std::vector<std::vector<float>>& planes,
                                std::span<const std::int64_t> slice_indices, int axis,
                                const VolumeGeometry& geometry, int classes) {
  const auto [p, q] = preprocess::plane_axes(axis);
  const std::int64_t count = geometry.dims[axis];
  if (static_cast<std::int64_t>(planes.size()) != count || slice_indices.size() != planes.size())
    throw Error(ErrorKind::CountMismatch, std::to_string(planes.size()) + " slices for dims[" + std::to_string(axis) +
                                              "] = " + std::to_string(count));
  std::vector<char> seen(static_cast<std::size_t>(count), 0);
  for (auto s : slice_indices) {
    if (s < 0 || s >= count || seen[static_cast<std::size_t>(s)])
      throw Error(ErrorKind::CountMismatch, "slice indices are not a permutation of 0.." + std::to_string(count - 1));
    seen[static_cast<std::size_t>(s)] = 1;
  }
  const std::int64_t h = geometry.dims[p];
  const std::int64_t w = geometry.dims[q];
  const std::size_t plane = static_cast<std::size_t>(h * w);
  const std::size_t n = geometry.voxel_count();

  PredictionVolume out{geometry, classes, std::vector<float>(static_cast<std::size_t>(classes) * n)};
  for (std::size_t i = 0; i < planes.size(); ++i) {
    if (planes[i].size() != static_cast<std::size_t>(classes) * plane)
      throw Error(ErrorKind::ShapeMismatch, "slice plane has wrong size");
    const std::int64_t s = slice_indices[i];
    for (int k = 0; k < classes; ++k) {
      const float* src = planes[i].data() + static_cast<std::size_t>(k) * plane;
      float* dst = out.logits.data() + static_cast<std::size_t>(k) * n;
      for (std::int64_t r = 0; r < h; ++r)
        for (std::int64_t c = 0; c < w; ++c)
          dst[preprocess::voxel_index(geometry, axis, s, r, c)] = src[static_cast<std::size_t>(r * w + c)];
    }
  }
  return out;
}

inline Tensor run_executor(const ModelHandle& model, const Tensor& input) {
  try {
    return model.executor->run(input);
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw Error(ErrorKind::ExecutorFailure, e.what());
  }
}

/// Runs a 2D model slice by slice in micro-batches and restacks the logits.
/// Each slice's logits depend only on that slice.
inline PredictionVolume predict_subject(const ModelHandle& model, const preprocess::SliceBatch& batch,
                                        std::size_t inference_batch_size = 128) {
  validate_handle(model);
  if (model.is_3d()) throw Error(ErrorKind::ShapeMismatch, "3D model given a 2D slice batch");
  if ((model.input_shape[1] >= 0 && model.input_shape[1] != batch.height) ||
      (model.input_shape[2] >= 0 && model.input_shape[2] != batch.width))
    throw Error(ErrorKind::ShapeMismatch, "slice shape (3," + std::to_string(batch.height) + "," +
                                              std::to_string(batch.width) + ") does not match model input " +
                                              shape_string(model.input_shape));
  if (inference_batch_size == 0) inference_batch_size = 1;

  const std::size_t plane = batch.plane_size();
  const std::size_t in_len = 3 * plane;
  const int k = model.output_classes;
  std::vector<std::vector<float>> logits(batch.slices.size());

  for (std::size_t start = 0; start < batch.slices.size(); start += inference_batch_size) {
    const std::size_t n = std::min(inference_batch_size, batch.slices.size() - start);
    Tensor input({static_cast<std::int64_t>(n), 3, batch.height, batch.width});
    for (std::size_t i = 0; i < n; ++i) {
      const auto& s = batch.slices[start + i];
      if (s.size() != in_len) throw Error(ErrorKind::ShapeMismatch, "slice payload has wrong length");
      std::copy(s.begin(), s.end(), input.data.begin() + static_cast<std::ptrdiff_t>(i * in_len));
    }
    const Tensor out = run_executor(model, input);
    const std::vector<std::int64_t> expected{static_cast<std::int64_t>(n), k, batch.height, batch.width};
    if (out.shape != expected)
      throw Error(ErrorKind::ExecutorFailure, "model produced " + shape_string(out.shape) + ", expected " +
                                                  shape_string(expected));
    const std::size_t out_len = static_cast<std::size_t>(k) * plane;
    for (std::size_t i = 0; i < n; ++i)
      logits[start + i].assign(out.data.begin() + static_cast<std::ptrdiff_t>(i * out_len),
                               out.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * out_len));
  }
  return restack(logits, batch.slice_indices, batch.slice_axis, batch.geometry, k);
}

/// Whole-volume path for models whose input is (3,D,H,W). The tensor axes
/// are (N, C, x, y, z) with z fastest.
inline PredictionVolume predict_volume(const ModelHandle& model, const cohort::ChannelStack& stack) {
  validate_handle(model);
  if (!model.is_3d()) throw Error(ErrorKind::ShapeMismatch, "2D model given a whole volume");
  const VolumeGeometry& g = stack.geometry();
  const Dims& d = g.dims;
  for (int i = 0; i < 3; ++i)
    if (model.input_shape[i + 1] >= 0 && model.input_shape[i + 1] != d[i])
      throw Error(ErrorKind::ShapeMismatch, "volume does not match model input " + shape_string(model.input_shape));

  const std::size_t n = g.voxel_count();
  Tensor input({1, 3, d[0], d[1], d[2]});
  for (int c = 0; c < 3; ++c) {
    const auto& src = stack.channels[c].data();
    float* dst = input.data.data() + static_cast<std::size_t>(c) * n;
    for (std::int64_t z = 0; z < d[2]; ++z)
      for (std::int64_t y = 0; y < d[1]; ++y)
        for (std::int64_t x = 0; x < d[0]; ++x)
          dst[static_cast<std::size_t>((x * d[1] + y) * d[2] + z)] = src[g.index(x, y, z)];
  }
  const Tensor out = run_executor(model, input);
  const int k = model.output_classes;
  if (out.shape != std::vector<std::int64_t>{1, k, d[0], d[1], d[2]})
    throw Error(ErrorKind::ExecutorFailure, "model produced " + shape_string(out.shape));

  PredictionVolume pred{g, k, std::vector<float>(static_cast<std::size_t>(k) * n)};
  for (int c = 0; c < k; ++c) {
    const float* src = out.data.data() + static_cast<std::size_t>(c) * n;
    float* dst = pred.logits.data() + static_cast<std::size_t>(c) * n;
    for (std::int64_t z = 0; z < d[2]; ++z)
      for (std::int64_t y = 0; y < d[1]; ++y)
        for (std::int64_t x = 0; x < d[0]; ++x)
          dst[g.index(x, y, z)] = src[static_cast<std::size_t>((x * d[1] + y) * d[2] + z)];
  }
  return pred;
}

/// Two-class: foreground iff fg logit > bg logit (ties are background).
/// Single-class: foreground iff sigmoid(logit) > t.
inline SegmentationMask to_mask(const PredictionVolume& pred, const Decision& decision) {
  const std::size_t n = pred.geometry.voxel_count();
  if (pred.logits.size() != static_cast<std::size_t>(pred.classes) * n)
    throw Error(ErrorKind::ShapeMismatch, "logit grid does not match geometry");
  std::vector<std::uint8_t> bits(n, 0);
  if (std::holds_alternative<ArgmaxTwoClass>(decision)) {
    if (pred.classes != 2) throw Error(ErrorKind::DecisionMismatch, "argmax needs two class planes");
    const auto bg = pred.plane(0);
    const auto fg = pred.plane(1);
    for (std::size_t i = 0; i < n; ++i) bits[i] = fg[i] > bg[i] ? 1 : 0;
  } else {
    if (pred.classes != 1) throw Error(ErrorKind::DecisionMismatch, "sigmoid threshold needs one class plane");
    const double t = std::get<SigmoidThreshold>(decision).threshold;
    const auto fg = pred.plane(0);
    for (std::size_t i = 0; i < n; ++i) bits[i] = 1.0 / (1.0 + std::exp(-static_cast<double>(fg[i]))) > t ? 1 : 0;
  }
  return SegmentationMask(pred.geometry, std::move(bits));
}

/// Foreground logit +1 where the water channel exceeds the threshold, -1 elsewhere.
class StubThresholdExecutor final : public Executor {
 public:
  explicit StubThresholdExecutor(float threshold) : threshold_(threshold) {}

  Tensor run(const Tensor& input) const override {
    if (input.rank() < 3 || input.shape[1] != 3)
      throw Error(ErrorKind::ShapeMismatch, "stub model expects (N,3,...) input, got " + shape_string(input.shape));
    std::vector<std::int64_t> out_shape = input.shape;
    out_shape[1] = 1;
    Tensor out(out_shape);
    std::size_t spatial = 1;
    for (std::size_t i = 2; i < input.rank(); ++i) spatial *= static_cast<std::size_t>(input.shape[i]);
    for (std::int64_t b = 0; b < input.shape[0]; ++b) {
      const float* water = input.data.data() + static_cast<std::size_t>(b) * 3 * spatial;
      float* dst = out.data.data() + static_cast<std::size_t>(b) * spatial;
      for (std::size_t i = 0; i < spatial; ++i) dst[i] = water[i] > threshold_ ? 1.0f : -1.0f;
    }
    return out;
  }

 private:
  float threshold_;
};

inline ModelHandle stub_threshold_model(double intensity_threshold, bool volumetric = false) {
  ModelHandle m;
  m.executor = std::make_shared<StubThresholdExecutor>(static_cast<float>(intensity_threshold));
  m.input_shape = volumetric ? std::vector<std::int64_t>{3, -1, -1, -1} : std::vector<std::int64_t>{3, -1, -1};
  m.output_classes = 1;
  m.metadata.decision = SigmoidThreshold{0.5};
  char buf[64];
  std::snprintf(buf, sizeof buf, "stub-threshold:%.9g", intensity_threshold);
  m.model_id = buf;
  return m;
}

}  // namespace tvol::inference
