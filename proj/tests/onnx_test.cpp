#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>

#include "onnx.pb.h"
#include "runtime.hpp"
#include "test_util.hpp"
#include "tvol/onnx_model.hpp"

using namespace tvol;
using tvol::onnx_rt::Value;
using tvol::testing::TempDir;

namespace {

// ---------------------------------------------------------------------------
// Graph construction helpers

::onnx::TensorProto tensor(const std::string& name, const std::vector<std::int64_t>& dims, const std::vector<float>& v) {
  ::onnx::TensorProto t;
  t.set_name(name);
  t.set_data_type(::onnx::TensorProto::FLOAT);
  for (auto d : dims) t.add_dims(d);
  for (float x : v) t.add_float_data(x);
  return t;
}

::onnx::TensorProto int_tensor(const std::string& name, const std::vector<std::int64_t>& v) {
  ::onnx::TensorProto t;
  t.set_name(name);
  t.set_data_type(::onnx::TensorProto::INT64);
  t.add_dims(static_cast<std::int64_t>(v.size()));
  t.set_raw_data(std::string(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(std::int64_t)));
  return t;
}

void set_dims(::onnx::ValueInfoProto* vi, const std::string& name, const std::vector<std::int64_t>& dims) {
  vi->set_name(name);
  auto* tt = vi->mutable_type()->mutable_tensor_type();
  tt->set_elem_type(::onnx::TensorProto::FLOAT);
  auto* shape = tt->mutable_shape();
  for (auto d : dims) {
    auto* dim = shape->add_dim();
    if (d < 0)
      dim->set_dim_param("n");
    else
      dim->set_dim_value(d);
  }
}

struct ModelBuilder {
  ::onnx::ModelProto model;

  explicit ModelBuilder(std::int64_t opset = 17) {
    model.set_ir_version(8);
    auto* o = model.add_opset_import();
    o->set_domain("");
    o->set_version(opset);
  }
  ::onnx::GraphProto* g() { return model.mutable_graph(); }
  void input(const std::string& name, const std::vector<std::int64_t>& dims) { set_dims(g()->add_input(), name, dims); }
  void output(const std::string& name, const std::vector<std::int64_t>& dims) { set_dims(g()->add_output(), name, dims); }
  void init(const ::onnx::TensorProto& t) { *g()->add_initializer() = t; }
  ::onnx::NodeProto* node(const std::string& op, std::vector<std::string> in, std::vector<std::string> out) {
    auto* n = g()->add_node();
    n->set_op_type(op);
    n->set_name(op + std::to_string(g()->node_size()));
    for (auto& s : in) n->add_input(s);
    for (auto& s : out) n->add_output(s);
    return n;
  }
  void save(const std::filesystem::path& p) const {
    std::ofstream out(p, std::ios::binary);
    model.SerializeToOstream(&out);
  }
};

void attr_ints(::onnx::NodeProto* n, const std::string& name, const std::vector<std::int64_t>& v) {
  auto* a = n->add_attribute();
  a->set_name(name);
  a->set_type(::onnx::AttributeProto::INTS);
  for (auto x : v) a->add_ints(x);
}
void attr_int(::onnx::NodeProto* n, const std::string& name, std::int64_t v) {
  auto* a = n->add_attribute();
  a->set_name(name);
  a->set_type(::onnx::AttributeProto::INT);
  a->set_i(v);
}
void attr_str(::onnx::NodeProto* n, const std::string& name, const std::string& v) {
  auto* a = n->add_attribute();
  a->set_name(name);
  a->set_type(::onnx::AttributeProto::STRING);
  a->set_s(v);
}

std::vector<float> random_floats(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  std::vector<float> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

std::size_t count(const std::vector<std::int64_t>& s) {
  std::size_t n = 1;
  for (auto d : s) n *= static_cast<std::size_t>(d);
  return n;
}

// ---------------------------------------------------------------------------
// Brute-force references, written from the operator definitions.

struct ConvCase {
  std::int64_t n, c, m, group;
  std::vector<std::int64_t> in, k, stride, dil, pads;  // pads: begins then ends
};

std::vector<float> conv_reference(const ConvCase& cc, const std::vector<float>& x, const std::vector<float>& w,
                                  const std::vector<float>& b, std::vector<std::int64_t>& out_shape) {
  const std::size_t sp = cc.in.size();
  std::vector<std::int64_t> out(sp);
  for (std::size_t s = 0; s < sp; ++s)
    out[s] = (cc.in[s] + cc.pads[s] + cc.pads[s + sp] - ((cc.k[s] - 1) * cc.dil[s] + 1)) / cc.stride[s] + 1;
  out_shape = {cc.n, cc.m};
  out_shape.insert(out_shape.end(), out.begin(), out.end());
  std::vector<float> y(count(out_shape));
  const std::int64_t cg = cc.c / cc.group, mg = cc.m / cc.group;
  std::vector<std::int64_t> o(sp), kk(sp);
  std::size_t yi = 0;
  for (std::int64_t n = 0; n < cc.n; ++n)
    for (std::int64_t m = 0; m < cc.m; ++m) {
      const std::size_t positions = count(out);
      for (std::size_t p = 0; p < positions; ++p) {
        std::size_t rem = p;
        for (std::size_t s = sp; s-- > 0;) {
          o[s] = static_cast<std::int64_t>(rem % static_cast<std::size_t>(out[s]));
          rem /= static_cast<std::size_t>(out[s]);
        }
        double acc = b.empty() ? 0.0 : b[static_cast<std::size_t>(m)];
        for (std::int64_t c = 0; c < cg; ++c) {
          const std::size_t kvol = count(cc.k);
          for (std::size_t q = 0; q < kvol; ++q) {
            std::size_t r2 = q;
            for (std::size_t s = sp; s-- > 0;) {
              kk[s] = static_cast<std::int64_t>(r2 % static_cast<std::size_t>(cc.k[s]));
              r2 /= static_cast<std::size_t>(cc.k[s]);
            }
            std::int64_t xoff = (n * cc.c + (m / mg) * cg + c);
            bool inside = true;
            for (std::size_t s = 0; s < sp; ++s) {
              const std::int64_t i = o[s] * cc.stride[s] - cc.pads[s] + kk[s] * cc.dil[s];
              inside = inside && i >= 0 && i < cc.in[s];
              xoff = xoff * cc.in[s] + i;
            }
            if (!inside) continue;
            acc += static_cast<double>(x[static_cast<std::size_t>(xoff)]) *
                   w[static_cast<std::size_t>((m * cg + c) * static_cast<std::int64_t>(kvol)) + q];
          }
        }
        y[yi++] = static_cast<float>(acc);
      }
    }
  return y;
}

Value run_single(ModelBuilder& mb, Value x) {
  onnx_rt::Graph g(mb.model);
  return g.run(std::move(x));
}

}  // namespace

TEST(OnnxOps, ConvMatchesBruteForce) {
  std::mt19937_64 rng(3);
  const std::vector<ConvCase> cases{
      {1, 3, 4, 1, {9, 7}, {3, 3}, {1, 1}, {1, 1}, {1, 1, 1, 1}},
      {2, 4, 6, 2, {10, 8}, {3, 2}, {2, 1}, {1, 2}, {1, 0, 2, 1}},
      {1, 4, 4, 4, {8, 8}, {3, 3}, {2, 2}, {1, 1}, {1, 1, 1, 1}},
      {1, 2, 3, 1, {5, 6, 7}, {3, 3, 3}, {1, 2, 1}, {1, 1, 2}, {1, 1, 0, 1, 0, 2}},
      {1, 3, 2, 1, {11}, {5}, {3}, {1}, {2, 2}},
  };
  for (const auto& cc : cases) {
    std::vector<std::int64_t> xshape{cc.n, cc.c};
    xshape.insert(xshape.end(), cc.in.begin(), cc.in.end());
    std::vector<std::int64_t> wshape{cc.m, cc.c / cc.group};
    wshape.insert(wshape.end(), cc.k.begin(), cc.k.end());
    const auto x = random_floats(count(xshape), rng);
    const auto w = random_floats(count(wshape), rng);
    const auto b = random_floats(static_cast<std::size_t>(cc.m), rng);
    std::vector<std::int64_t> yshape;
    const auto ref = conv_reference(cc, x, w, b, yshape);

    ModelBuilder mb;
    mb.input("x", xshape);
    mb.output("y", yshape);
    mb.init(tensor("w", wshape, w));
    mb.init(tensor("b", {cc.m}, b));
    auto* n = mb.node("Conv", {"x", "w", "b"}, {"y"});
    attr_ints(n, "strides", cc.stride);
    attr_ints(n, "dilations", cc.dil);
    attr_ints(n, "pads", cc.pads);
    attr_int(n, "group", cc.group);
    const Value y = run_single(mb, Value::floats(xshape, x));
    ASSERT_EQ(y.shape, yshape);
    for (std::size_t i = 0; i < ref.size(); ++i) ASSERT_NEAR(y.f[i], ref[i], 1e-5) << i;
  }
}

TEST(OnnxOps, ConvSameUpperPadding) {
  std::mt19937_64 rng(4);
  ModelBuilder mb;
  mb.input("x", {1, 1, 7, 6});
  mb.output("y", {1, 1, 4, 3});
  const auto w = random_floats(9, rng);
  mb.init(tensor("w", {1, 1, 3, 3}, w));
  auto* n = mb.node("Conv", {"x", "w"}, {"y"});
  attr_str(n, "auto_pad", "SAME_UPPER");
  attr_ints(n, "strides", {2, 2});
  const auto x = random_floats(42, rng);
  const Value y = run_single(mb, Value::floats({1, 1, 7, 6}, x));
  // out = ceil(in/2): (4,3); total pad rows = (4-1)*2+3-7 = 2 -> 1/1, cols = (3-1)*2+3-6 = 1 -> 0/1
  ConvCase cc{1, 1, 1, 1, {7, 6}, {3, 3}, {2, 2}, {1, 1}, {1, 0, 1, 1}};
  std::vector<std::int64_t> s;
  const auto ref = conv_reference(cc, x, w, {}, s);
  ASSERT_EQ(y.shape, s);
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.f[i], ref[i], 1e-5);
}

TEST(OnnxOps, ConvTransposeMatchesScatterDefinition) {
  std::mt19937_64 rng(5);
  const std::int64_t C = 4, M = 2, H = 5, W = 4, k = 3, s = 2, pad = 1, op = 1;
  const auto x = random_floats(static_cast<std::size_t>(C * H * W), rng);
  const auto w = random_floats(static_cast<std::size_t>(C * M * k * k), rng);
  const std::int64_t OH = s * (H - 1) + op + k - 2 * pad, OW = s * (W - 1) + op + k - 2 * pad;
  std::vector<double> ref(static_cast<std::size_t>(M * OH * OW), 0.0);
  for (std::int64_t c = 0; c < C; ++c)
    for (std::int64_t m = 0; m < M; ++m)
      for (std::int64_t i = 0; i < H; ++i)
        for (std::int64_t j = 0; j < W; ++j)
          for (std::int64_t a = 0; a < k; ++a)
            for (std::int64_t b = 0; b < k; ++b) {
              const std::int64_t oi = i * s - pad + a, oj = j * s - pad + b;
              if (oi < 0 || oi >= OH || oj < 0 || oj >= OW) continue;
              ref[static_cast<std::size_t>((m * OH + oi) * OW + oj)] +=
                  static_cast<double>(x[static_cast<std::size_t>((c * H + i) * W + j)]) *
                  w[static_cast<std::size_t>(((c * M + m) * k + a) * k + b)];
            }
  ModelBuilder mb;
  mb.input("x", {1, C, H, W});
  mb.output("y", {1, M, OH, OW});
  mb.init(tensor("w", {C, M, k, k}, w));
  auto* n = mb.node("ConvTranspose", {"x", "w"}, {"y"});
  attr_ints(n, "strides", {s, s});
  attr_ints(n, "pads", {pad, pad, pad, pad});
  attr_ints(n, "output_padding", {op, op});
  const Value y = run_single(mb, Value::floats({1, C, H, W}, x));
  ASSERT_EQ(y.shape, (std::vector<std::int64_t>{1, M, OH, OW}));
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.f[i], ref[i], 1e-5);
}

TEST(OnnxOps, PoolingWithPaddingAndCeilMode) {
  // 1x1x3x3 input 1..9, kernel 2, stride 2, ceil mode -> 2x2
  std::vector<float> x{1, 2, 3, 4, 5, 6, 7, 8, 9};
  for (const char* op : {"MaxPool", "AveragePool"}) {
    ModelBuilder mb;
    mb.input("x", {1, 1, 3, 3});
    mb.output("y", {1, 1, 2, 2});
    auto* n = mb.node(op, {"x"}, {"y"});
    attr_ints(n, "kernel_shape", {2, 2});
    attr_ints(n, "strides", {2, 2});
    attr_int(n, "ceil_mode", 1);
    const Value y = run_single(mb, Value::floats({1, 1, 3, 3}, x));
    ASSERT_EQ(y.shape, (std::vector<std::int64_t>{1, 1, 2, 2}));
    if (std::string(op) == "MaxPool")
      EXPECT_EQ(y.f, (std::vector<float>{5, 6, 8, 9}));
    else
      EXPECT_EQ(y.f, (std::vector<float>{3, 4.5f, 7.5f, 9}));
  }
}

TEST(OnnxOps, ResizeModes) {
  const std::vector<float> x{0, 1, 2, 3};  // 1x1x2x2
  auto run = [&](const std::string& mode, const std::string& ctm) {
    ModelBuilder mb(13);
    mb.input("x", {1, 1, 2, 2});
    mb.output("y", {1, 1, 4, 4});
    mb.init(tensor("scales", {4}, {1, 1, 2, 2}));
    auto* n = mb.node("Resize", {"x", "", "scales"}, {"y"});
    attr_str(n, "mode", mode);
    attr_str(n, "coordinate_transformation_mode", ctm);
    if (mode == "nearest") attr_str(n, "nearest_mode", "floor");
    return run_single(mb, Value::floats({1, 1, 2, 2}, x)).f;
  };
  EXPECT_EQ(run("nearest", "asymmetric"), (std::vector<float>{0, 0, 1, 1, 0, 0, 1, 1, 2, 2, 3, 3, 2, 2, 3, 3}));
  const auto lin = run("linear", "align_corners");
  // corners preserved, row 0 interpolates 0..1 in thirds
  EXPECT_FLOAT_EQ(lin[0], 0.0f);
  EXPECT_FLOAT_EQ(lin[3], 1.0f);
  EXPECT_FLOAT_EQ(lin[12], 2.0f);
  EXPECT_FLOAT_EQ(lin[15], 3.0f);
  EXPECT_NEAR(lin[1], 1.0f / 3.0f, 1e-6);
  const auto hp = run("linear", "half_pixel");
  // half_pixel: output 1 maps to 0.25
  EXPECT_NEAR(hp[1], 0.25f, 1e-6);
  EXPECT_NEAR(hp[0], 0.0f, 1e-6);
}

TEST(OnnxOps, ShapeSubgraphFeedsReshape) {
  // y = Reshape(x, Concat(Shape(x)[0:2], [-1])) : (1,2,3,4) -> (1,2,12)
  ModelBuilder mb;
  mb.input("x", {1, 2, 3, 4});
  mb.output("y", {1, 2, 12});
  mb.init(int_tensor("s0", {0}));
  mb.init(int_tensor("s1", {2}));
  mb.init(int_tensor("minus1", {-1}));
  mb.node("Shape", {"x"}, {"shp"});
  mb.node("Slice", {"shp", "s0", "s1"}, {"head"});
  auto* c = mb.node("Concat", {"head", "minus1"}, {"target"});
  attr_int(c, "axis", 0);
  mb.node("Reshape", {"x", "target"}, {"y"});
  std::vector<float> x(24);
  std::iota(x.begin(), x.end(), 0.0f);
  const Value y = run_single(mb, Value::floats({1, 2, 3, 4}, x));
  EXPECT_EQ(y.shape, (std::vector<std::int64_t>{1, 2, 12}));
  EXPECT_EQ(y.f, x);
}

TEST(OnnxOps, BroadcastingAndSoftmax) {
  ModelBuilder mb;
  mb.input("x", {1, 2, 2, 2});
  mb.output("y", {1, 2, 2, 2});
  mb.init(tensor("bias", {1, 2, 1, 1}, {10, -10}));
  mb.node("Add", {"x", "bias"}, {"t"});
  auto* s = mb.node("Softmax", {"t"}, {"y"});
  attr_int(s, "axis", 1);
  const Value y = run_single(mb, Value::floats({1, 2, 2, 2}, {0, 0, 0, 0, 0, 0, 0, 0}));
  for (int i = 0; i < 4; ++i) {
    EXPECT_NEAR(y.f[static_cast<std::size_t>(i)] + y.f[static_cast<std::size_t>(i + 4)], 1.0f, 1e-6);
    EXPECT_GT(y.f[static_cast<std::size_t>(i)], 0.99f);
  }
}

TEST(OnnxOps, RuntimeFailuresAreExecutorFailures) {
  ModelBuilder mb;
  mb.input("x", {1, 3, -1, -1});
  mb.output("y", {1, 3, -1, -1});
  mb.init(tensor("b", {1, 3, 2, 2}, std::vector<float>(12, 1.0f)));
  mb.node("Add", {"x", "b"}, {"y"});
  onnx_rt::Graph g(mb.model);
  try {
    g.run(Value::floats({1, 3, 3, 3}, std::vector<float>(27)));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ExecutorFailure);
  }
}

// ---------------------------------------------------------------------------
// load_model

namespace {

void write_identity_model(const std::filesystem::path& p, std::int64_t channels, std::int64_t classes,
                          std::vector<std::int64_t> spatial = {-1, -1}) {
  ModelBuilder mb;
  std::vector<std::int64_t> in{-1, channels}, out{-1, classes};
  in.insert(in.end(), spatial.begin(), spatial.end());
  out.insert(out.end(), spatial.begin(), spatial.end());
  mb.input("image", in);
  mb.output("logits", out);
  std::vector<float> w(static_cast<std::size_t>(classes * channels), 0.0f);
  w[0] = 1.0f;
  std::vector<std::int64_t> wshape{classes, channels};
  for (std::size_t k = 0; k < spatial.size(); ++k) wshape.push_back(1);
  mb.init(tensor("w", wshape, w));
  mb.node("Conv", {"image", "w"}, {"logits"});
  mb.save(p);
}

}  // namespace

TEST(LoadModel, TwoClassGraphWithDefaults) {
  TempDir dir;
  write_identity_model(dir / "m.onnx", 3, 2, {224, 162});
  const auto m = tvol::onnx::load_model(dir / "m.onnx");
  EXPECT_EQ(m.input_shape, (std::vector<std::int64_t>{3, 224, 162}));
  EXPECT_EQ(m.output_classes, 2);
  EXPECT_FALSE(m.is_3d());
  EXPECT_EQ(inference::to_string(m.metadata.decision), "argmax");
  EXPECT_EQ(m.metadata.slice_axis, 2);
  EXPECT_TRUE(m.metadata.normalization_hash.empty());
  EXPECT_EQ(m.model_id.rfind("m@", 0), 0u);
}

TEST(LoadModel, SidecarIsApplied) {
  TempDir dir;
  write_identity_model(dir / "net.onnx", 3, 1);
  std::ofstream(dir / "net.json") << R"({"normalization_hash": "0123456789abcdef", "slice_axis": 1,
                                         "decision": "sigmoid:0.7", "model_id": "unet-r34"})";
  const auto m = tvol::onnx::load_model(dir / "net.onnx");
  EXPECT_EQ(m.output_classes, 1);
  EXPECT_EQ(m.metadata.normalization_hash, "0123456789abcdef");
  EXPECT_EQ(m.metadata.slice_axis, 1);
  EXPECT_EQ(inference::to_string(m.metadata.decision), inference::to_string(inference::SigmoidThreshold{0.7}));
  EXPECT_EQ(m.model_id, "unet-r34");
}

TEST(LoadModel, SidecarDecisionMustFitClasses) {
  TempDir dir;
  write_identity_model(dir / "net.onnx", 3, 1);
  std::ofstream(dir / "net.json") << R"({"decision": "argmax"})";
  try {
    tvol::onnx::load_model(dir / "net.onnx");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::DecisionMismatch);
  }
}

TEST(LoadModel, FourChannelInputIsShapeMismatch) {
  TempDir dir;
  write_identity_model(dir / "m.onnx", 4, 2);
  try {
    tvol::onnx::load_model(dir / "m.onnx");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ShapeMismatch);
  }
}

TEST(LoadModel, ThreeClassOutputIsShapeMismatch) {
  TempDir dir;
  write_identity_model(dir / "m.onnx", 3, 3);
  try {
    tvol::onnx::load_model(dir / "m.onnx");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ShapeMismatch);
  }
}

TEST(LoadModel, MissingAndGarbageFilesAreInvalidGraph) {
  TempDir dir;
  for (const auto& p : {dir / "absent.onnx", dir / "garbage.onnx"}) {
    if (p.filename() == "garbage.onnx") std::ofstream(p) << "\xff\xff\xff not protobuf";
    try {
      tvol::onnx::load_model(p);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::InvalidGraph);
    }
  }
}

TEST(LoadModel, UnsupportedOperatorIsInvalidGraph) {
  TempDir dir;
  ModelBuilder mb;
  mb.input("x", {1, 3, 4, 4});
  mb.output("y", {1, 1, 4, 4});
  mb.node("NonMaxSuppression", {"x"}, {"y"});
  mb.save(dir / "m.onnx");
  try {
    tvol::onnx::load_model(dir / "m.onnx");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidGraph);
  }
}

TEST(LoadModel, TwoImageInputsAreInvalidGraph) {
  TempDir dir;
  ModelBuilder mb;
  mb.input("x", {1, 3, 4, 4});
  mb.input("z", {1, 3, 4, 4});
  mb.output("y", {1, 3, 4, 4});
  mb.node("Add", {"x", "z"}, {"y"});
  mb.save(dir / "m.onnx");
  try {
    tvol::onnx::load_model(dir / "m.onnx");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidGraph);
  }
}

TEST(LoadModel, VolumetricGraphUsesWholeVolumePath) {
  TempDir dir;
  write_identity_model(dir / "v.onnx", 3, 1, {-1, -1, -1});
  const auto m = tvol::onnx::load_model(dir / "v.onnx");
  EXPECT_TRUE(m.is_3d());
  const VolumeGeometry g({5, 4, 3}, {1, 1, 1});
  std::array<VoxelVolume, 3> ch;
  for (int c = 0; c < 3; ++c) {
    std::vector<float> v(g.voxel_count());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(i % 7) - 3.0f + static_cast<float>(c);
    ch[c] = VoxelVolume(g, v);
  }
  const auto stack = cohort::make_stack("s", ch);
  const auto pred = inference::predict_volume(m, stack);
  for (std::size_t i = 0; i < g.voxel_count(); ++i) EXPECT_EQ(pred.logits[i], stack.channels[0].data()[i]);
}

TEST(LoadModel, IdentityGraphRestacksToInput) {
  TempDir dir;
  write_identity_model(dir / "m.onnx", 3, 1);
  const auto m = tvol::onnx::load_model(dir / "m.onnx");
  const VolumeGeometry g({6, 5, 4}, {1, 1, 1});
  std::array<VoxelVolume, 3> ch;
  for (int c = 0; c < 3; ++c) {
    std::vector<float> v(g.voxel_count());
    std::iota(v.begin(), v.end(), static_cast<float>(100 * c));
    ch[c] = VoxelVolume(g, v);
  }
  const auto stack = cohort::make_stack("s", ch);
  for (int axis = 0; axis < 3; ++axis) {
    const auto pred = inference::predict_subject(m, preprocess::extract_slices(stack, axis), 3);
    EXPECT_EQ(pred.logits, stack.channels[0].data()) << axis;
  }
}
