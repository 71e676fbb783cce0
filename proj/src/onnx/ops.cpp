#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "runtime.hpp"

namespace tvol::onnx_rt {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

std::vector<std::int64_t> row_strides(const std::vector<std::int64_t>& shape) {
  std::vector<std::int64_t> s(shape.size(), 1);
  for (std::size_t k = shape.size(); k-- > 1;) s[k - 1] = s[k] * shape[k];
  return s;
}

std::int64_t norm_axis(std::int64_t axis, std::size_t rank) {
  const auto r = static_cast<std::int64_t>(rank);
  if (axis < -r || axis >= r) fail("axis " + std::to_string(axis) + " out of range for rank " + std::to_string(r));
  return axis < 0 ? axis + r : axis;
}

const Value& need(const Inputs& in, std::size_t k, const char* what) {
  if (k >= in.size() || !in[k]) fail(std::string("missing input ") + what);
  return *in[k];
}

const Value& need_float(const Inputs& in, std::size_t k, const char* what) {
  const Value& v = need(in, k, what);
  if (!v.is_float()) fail(std::string(what) + " must be float");
  return v;
}

std::vector<Value> one(Value v) {
  std::vector<Value> out;
  out.push_back(std::move(v));
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename F>
OpFn unary(F f) {
  return [f](const OpContext&, const onnx::NodeProto& n, const Inputs& in) {
    const Value& x = need_float(in, 0, "X");
    std::vector<float> y(x.f.size());
    for (std::size_t k = 0; k < y.size(); ++k) y[k] = f(x.f[k], n);
    return one(Value::floats(x.shape, std::move(y)));
  };
}

std::vector<std::int64_t> broadcast_shape(const std::vector<std::int64_t>& a, const std::vector<std::int64_t>& b) {
  const std::size_t r = std::max(a.size(), b.size());
  std::vector<std::int64_t> out(r);
  for (std::size_t k = 0; k < r; ++k) {
    const std::int64_t da = k < r - a.size() ? 1 : a[k - (r - a.size())];
    const std::int64_t db = k < r - b.size() ? 1 : b[k - (r - b.size())];
    if (da != db && da != 1 && db != 1) fail("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    out[k] = da == 1 ? db : da;
  }
  return out;
}

// Element strides of `s` aligned to `out`, 0 on broadcast axes.
std::vector<std::int64_t> aligned_strides(const std::vector<std::int64_t>& s, const std::vector<std::int64_t>& out) {
  const auto st = row_strides(s);
  std::vector<std::int64_t> r(out.size(), 0);
  const std::size_t off = out.size() - s.size();
  for (std::size_t k = 0; k < s.size(); ++k) r[off + k] = s[k] == 1 ? 0 : st[k];
  return r;
}

template <typename T, typename F>
std::vector<T> broadcast_apply(const std::vector<std::int64_t>& sa, const std::vector<T>& a,
                               const std::vector<std::int64_t>& sb, const std::vector<T>& b,
                               std::vector<std::int64_t>& out_shape, F f) {
  out_shape = broadcast_shape(sa, sb);
  const std::size_t n = numel(out_shape);
  std::vector<T> out(n);
  if (n == 0) return out;
  if (a.size() == n && b.size() == n) {
    for (std::size_t k = 0; k < n; ++k) out[k] = f(a[k], b[k]);
    return out;
  }
  if (b.size() == 1 && a.size() == n) {
    for (std::size_t k = 0; k < n; ++k) out[k] = f(a[k], b[0]);
    return out;
  }
  if (a.size() == 1 && b.size() == n) {
    for (std::size_t k = 0; k < n; ++k) out[k] = f(a[0], b[k]);
    return out;
  }
  const std::size_t r = out_shape.size();
  const auto as = aligned_strides(sa, out_shape);
  const auto bs = aligned_strides(sb, out_shape);
  const std::int64_t inner = out_shape[r - 1];
  const std::int64_t ai = as[r - 1], bi = bs[r - 1];
  std::vector<std::int64_t> idx(r, 0);
  std::size_t o = 0;
  while (o < n) {
    std::int64_t pa = 0, pb = 0;
    for (std::size_t k = 0; k + 1 < r; ++k) {
      pa += idx[k] * as[k];
      pb += idx[k] * bs[k];
    }
    for (std::int64_t j = 0; j < inner; ++j) out[o++] = f(a[static_cast<std::size_t>(pa + j * ai)], b[static_cast<std::size_t>(pb + j * bi)]);
    for (std::size_t k = r - 1; k-- > 0;) {
      if (++idx[k] < out_shape[k]) break;
      idx[k] = 0;
    }
  }
  return out;
}

template <typename FF, typename FI>
OpFn binary(FF ff, FI fi) {
  return [ff, fi](const OpContext&, const onnx::NodeProto&, const Inputs& in) {
    const Value& a = need(in, 0, "A");
    const Value& b = need(in, 1, "B");
    std::vector<std::int64_t> shape;
    if (a.is_float() || b.is_float()) {
      auto out = broadcast_apply(a.shape, a.to_floats(), b.shape, b.to_floats(), shape, ff);
      return one(Value::floats(shape, std::move(out)));
    }
    auto out = broadcast_apply(a.shape, a.i, b.shape, b.i, shape, fi);
    return one(Value::ints(shape, std::move(out)));
  };
}

std::vector<Value> clip(const OpContext& ctx, const onnx::NodeProto& n, const Inputs& in) {
  const Value& x = need_float(in, 0, "X");
  float lo = -std::numeric_limits<float>::infinity(), hi = std::numeric_limits<float>::infinity();
  if (ctx.opset < 11) {
    lo = attr_float(n, "min", lo);
    hi = attr_float(n, "max", hi);
  } else {
    if (in.size() > 1 && in[1]) lo = in[1]->to_floats().at(0);
    if (in.size() > 2 && in[2]) hi = in[2]->to_floats().at(0);
  }
  std::vector<float> y(x.f.size());
  for (std::size_t k = 0; k < y.size(); ++k) y[k] = std::min(std::max(x.f[k], lo), hi);
  return one(Value::floats(x.shape, std::move(y)));
}

std::vector<Value> softmax(const OpContext& ctx, const onnx::NodeProto& n, const Inputs& in) {
  const Value& x = need_float(in, 0, "X");
  const std::int64_t axis = norm_axis(attr_int(n, "axis", ctx.opset >= 13 ? -1 : 1), x.shape.size());
  std::int64_t outer = 1, len = 1, inner = 1;
  for (std::int64_t k = 0; k < axis; ++k) outer *= x.shape[static_cast<std::size_t>(k)];
  if (ctx.opset >= 13) {
    len = x.shape[static_cast<std::size_t>(axis)];
    for (std::size_t k = static_cast<std::size_t>(axis) + 1; k < x.shape.size(); ++k) inner *= x.shape[k];
  } else {
    for (std::size_t k = static_cast<std::size_t>(axis); k < x.shape.size(); ++k) len *= x.shape[k];
  }
  std::vector<float> y(x.f.size());
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t i = 0; i < inner; ++i) {
      const std::size_t base = static_cast<std::size_t>(o * len * inner + i);
      float m = -std::numeric_limits<float>::infinity();
      for (std::int64_t l = 0; l < len; ++l) m = std::max(m, x.f[base + static_cast<std::size_t>(l * inner)]);
      double sum = 0.0;
      for (std::int64_t l = 0; l < len; ++l) {
        const auto p = base + static_cast<std::size_t>(l * inner);
        y[p] = std::exp(x.f[p] - m);
        sum += y[p];
      }
      for (std::int64_t l = 0; l < len; ++l) y[base + static_cast<std::size_t>(l * inner)] /= static_cast<float>(sum);
    }
  return one(Value::floats(x.shape, std::move(y)));
}

// ---------------------------------------------------------------------------
// Convolution and pooling share a spatial geometry padded to three axes.

struct Window {
  int spatial = 0;
  std::array<std::int64_t, 3> in{1, 1, 1}, out{1, 1, 1}, k{1, 1, 1}, stride{1, 1, 1}, dil{1, 1, 1}, pad{0, 0, 0},
      pad_end{0, 0, 0};
};

// Places ONNX per-spatial-axis attributes into the trailing slots of a 3-axis window.
void place(std::array<std::int64_t, 3>& dst, const std::vector<std::int64_t>& src, int spatial, std::size_t offset = 0) {
  for (int s = 0; s < spatial; ++s) dst[static_cast<std::size_t>(3 - spatial + s)] = src[offset + static_cast<std::size_t>(s)];
}

Window make_window(const onnx::NodeProto& n, const std::vector<std::int64_t>& x_shape,
                   const std::vector<std::int64_t>& kernel, bool pooling) {
  Window w;
  w.spatial = static_cast<int>(x_shape.size()) - 2;
  if (w.spatial < 1 || w.spatial > 3) fail("only 1 to 3 spatial axes are supported, got input " + shape_str(x_shape));
  const auto sp = static_cast<std::size_t>(w.spatial);
  const std::vector<std::int64_t> in(x_shape.begin() + 2, x_shape.end());
  if (kernel.size() != sp) fail("kernel rank does not match input");
  const auto strides = attr_ints(n, "strides", std::vector<std::int64_t>(sp, 1));
  const auto dil = attr_ints(n, "dilations", std::vector<std::int64_t>(sp, 1));
  auto pads = attr_ints(n, "pads", std::vector<std::int64_t>(2 * sp, 0));
  if (strides.size() != sp || dil.size() != sp || pads.size() != 2 * sp) fail("window attribute rank mismatch");
  const std::string auto_pad = attr_string(n, "auto_pad", "NOTSET");
  const bool ceil_mode = pooling && attr_int(n, "ceil_mode", 0) != 0;

  for (std::size_t s = 0; s < sp; ++s) {
    const std::int64_t eff = (kernel[s] - 1) * dil[s] + 1;
    if (auto_pad == "SAME_UPPER" || auto_pad == "SAME_LOWER") {
      const std::int64_t o = (in[s] + strides[s] - 1) / strides[s];
      const std::int64_t total = std::max<std::int64_t>(0, (o - 1) * strides[s] + eff - in[s]);
      const std::int64_t small = total / 2;
      pads[s] = auto_pad == "SAME_UPPER" ? small : total - small;
      pads[s + sp] = total - pads[s];
    } else if (auto_pad == "VALID") {
      pads[s] = pads[s + sp] = 0;
    } else if (auto_pad != "NOTSET") {
      fail("auto_pad " + auto_pad + " not supported");
    }
  }
  place(w.in, in, w.spatial);
  place(w.k, kernel, w.spatial);
  place(w.stride, strides, w.spatial);
  place(w.dil, dil, w.spatial);
  place(w.pad, pads, w.spatial);
  place(w.pad_end, pads, w.spatial, sp);
  for (std::size_t a = 0; a < 3; ++a) {
    const std::int64_t eff = (w.k[a] - 1) * w.dil[a] + 1;
    const std::int64_t span = w.in[a] + w.pad[a] + w.pad_end[a] - eff;
    if (span < 0) fail("window larger than padded input");
    std::int64_t o = (ceil_mode ? (span + w.stride[a] - 1) / w.stride[a] : span / w.stride[a]) + 1;
    // a window may not start in the trailing padding
    if (ceil_mode && (o - 1) * w.stride[a] >= w.in[a] + w.pad[a]) --o;
    w.out[a] = o;
  }
  return w;
}

std::vector<std::int64_t> output_shape(std::int64_t n, std::int64_t c, const Window& w) {
  std::vector<std::int64_t> s{n, c};
  for (int a = 3 - w.spatial; a < 3; ++a) s.push_back(w.out[static_cast<std::size_t>(a)]);
  return s;
}

// Range [lo, hi) of output positions o with 0 <= o*stride - pad + off < in.
std::pair<std::int64_t, std::int64_t> valid_range(std::int64_t off, std::int64_t pad, std::int64_t stride,
                                                  std::int64_t in, std::int64_t out) {
  const std::int64_t lo_num = pad - off;
  const std::int64_t lo = lo_num <= 0 ? 0 : (lo_num + stride - 1) / stride;
  const std::int64_t hi_num = in - 1 + pad - off;
  if (hi_num < 0) return {0, 0};
  return {std::min(lo, out), std::min(out, hi_num / stride + 1)};
}

std::vector<Value> conv(const OpContext&, const onnx::NodeProto& n, const Inputs& in) {
  const Value& x = need_float(in, 0, "X");
  const Value& wv = need_float(in, 1, "W");
  const Value* b = in.size() > 2 ? in[2] : nullptr;
  if (x.shape.size() != wv.shape.size()) fail("Conv weight rank does not match input");
  const std::int64_t group = attr_int(n, "group", 1);
  const std::int64_t N = x.shape[0], C = x.shape[1], M = wv.shape[0];
  if (group < 1 || C % group || M % group || wv.shape[1] != C / group)
    fail("Conv channels: input " + shape_str(x.shape) + ", weight " + shape_str(wv.shape) + ", group " + std::to_string(group));
  const Window w = make_window(n, x.shape, attr_ints(n, "kernel_shape", {wv.shape.begin() + 2, wv.shape.end()}), false);
  if (b && b->numel() != static_cast<std::size_t>(M)) fail("Conv bias size mismatch");
  const std::int64_t Cg = C / group, Mg = M / group;
  const std::int64_t in_plane = w.in[0] * w.in[1] * w.in[2];
  const std::int64_t out_plane = w.out[0] * w.out[1] * w.out[2];
  const std::int64_t kvol = w.k[0] * w.k[1] * w.k[2];
  std::vector<float> y(static_cast<std::size_t>(N * M * out_plane), 0.0f);

  for (std::int64_t ni = 0; ni < N; ++ni)
    for (std::int64_t m = 0; m < M; ++m) {
      float* yo = y.data() + (ni * M + m) * out_plane;
      if (b) std::fill(yo, yo + out_plane, b->f[static_cast<std::size_t>(m)]);
      const std::int64_t g = m / Mg;
      for (std::int64_t c = 0; c < Cg; ++c) {
        const float* xi = x.f.data() + (ni * C + g * Cg + c) * in_plane;
        const float* wk = wv.f.data() + (m * Cg + c) * kvol;
        for (std::int64_t kd = 0; kd < w.k[0]; ++kd)
          for (std::int64_t kh = 0; kh < w.k[1]; ++kh)
            for (std::int64_t kw = 0; kw < w.k[2]; ++kw) {
              const float wt = wk[(kd * w.k[1] + kh) * w.k[2] + kw];
              const auto [d0, d1] = valid_range(kd * w.dil[0], w.pad[0], w.stride[0], w.in[0], w.out[0]);
              const auto [h0, h1] = valid_range(kh * w.dil[1], w.pad[1], w.stride[1], w.in[1], w.out[1]);
              const auto [w0, w1] = valid_range(kw * w.dil[2], w.pad[2], w.stride[2], w.in[2], w.out[2]);
              for (std::int64_t od = d0; od < d1; ++od) {
                const std::int64_t id = od * w.stride[0] - w.pad[0] + kd * w.dil[0];
                for (std::int64_t oh = h0; oh < h1; ++oh) {
                  const std::int64_t ih = oh * w.stride[1] - w.pad[1] + kh * w.dil[1];
                  float* yr = yo + (od * w.out[1] + oh) * w.out[2];
                  const std::int64_t off = (id * w.in[1] + ih) * w.in[2] - w.pad[2] + kw * w.dil[2];
                  const std::int64_t sw = w.stride[2];
                  if (sw == 1)
                    for (std::int64_t ow = w0; ow < w1; ++ow) yr[ow] += wt * xi[off + ow];
                  else
                    for (std::int64_t ow = w0; ow < w1; ++ow) yr[ow] += wt * xi[off + ow * sw];
                }
              }
            }
      }
    }
  return one(Value::floats(output_shape(N, M, w), std::move(y)));
}

std::vector<Value> conv_transpose(const OpContext&, const onnx::NodeProto& n, const Inputs& in) {
  const Value& x = need_float(in, 0, "X");
  const Value& wv = need_float(in, 1, "W");
  const Value* b = in.size() > 2 ? in[2] : nullptr;
  if (x.shape.size() != wv.shape.size()) fail("ConvTranspose weight rank does not match input");
  const std::int64_t group = attr_int(n, "group", 1);
  const std::int64_t N = x.shape[0], C = x.shape[1];
  if (group < 1 || C % group || wv.shape[0] != C) fail("ConvTranspose channel mismatch");
  const std::int64_t Mg = wv.shape[1], M = Mg * group, Cg = C / group;
  if (b && b->numel() != static_cast<std::size_t>(M)) fail("ConvTranspose bias size mismatch");

  const int spatial = static_cast<int>(x.shape.size()) - 2;
  if (spatial < 1 || spatial > 3) fail("ConvTranspose needs 1 to 3 spatial axes");
  const auto sp = static_cast<std::size_t>(spatial);
  const auto kernel = attr_ints(n, "kernel_shape", {wv.shape.begin() + 2, wv.shape.end()});
  const auto strides = attr_ints(n, "strides", std::vector<std::int64_t>(sp, 1));
  const auto dil = attr_ints(n, "dilations", std::vector<std::int64_t>(sp, 1));
  const auto out_pad = attr_ints(n, "output_padding", std::vector<std::int64_t>(sp, 0));
  auto pads = attr_ints(n, "pads", std::vector<std::int64_t>(2 * sp, 0));
  const auto out_shape_attr = attr_ints(n, "output_shape");
  const std::string auto_pad = attr_string(n, "auto_pad", "NOTSET");
  if (kernel.size() != sp || strides.size() != sp || dil.size() != sp || out_pad.size() != sp || pads.size() != 2 * sp)
    fail("ConvTranspose attribute rank mismatch");

  Window w;
  w.spatial = spatial;
  std::vector<std::int64_t> in_sp(x.shape.begin() + 2, x.shape.end()), out_sp(sp);
  for (std::size_t s = 0; s < sp; ++s) {
    const std::int64_t eff = (kernel[s] - 1) * dil[s] + 1;
    const std::int64_t full = strides[s] * (in_sp[s] - 1) + out_pad[s] + eff;
    if (!out_shape_attr.empty() || auto_pad == "SAME_UPPER" || auto_pad == "SAME_LOWER") {
      const std::int64_t target = !out_shape_attr.empty() ? out_shape_attr[out_shape_attr.size() - sp + s]
                                                           : in_sp[s] * strides[s];
      const std::int64_t total = std::max<std::int64_t>(0, full - target);
      if (auto_pad == "SAME_LOWER") {
        pads[s] = total - total / 2;
        pads[s + sp] = total / 2;
      } else {
        pads[s] = total / 2;
        pads[s + sp] = total - total / 2;
      }
    } else if (auto_pad == "VALID") {
      pads[s] = pads[s + sp] = 0;
    }
    out_sp[s] = full - pads[s] - pads[s + sp];
    if (out_sp[s] < 1) fail("ConvTranspose output would be empty");
  }
  place(w.in, in_sp, spatial);
  place(w.out, out_sp, spatial);
  place(w.k, kernel, spatial);
  place(w.stride, strides, spatial);
  place(w.dil, dil, spatial);
  place(w.pad, pads, spatial);

  const std::int64_t in_plane = w.in[0] * w.in[1] * w.in[2];
  const std::int64_t out_plane = w.out[0] * w.out[1] * w.out[2];
  const std::int64_t kvol = w.k[0] * w.k[1] * w.k[2];
  std::vector<float> y(static_cast<std::size_t>(N * M * out_plane), 0.0f);
  for (std::int64_t ni = 0; ni < N; ++ni)
    for (std::int64_t m = 0; m < M; ++m) {
      float* yo = y.data() + (ni * M + m) * out_plane;
      if (b) std::fill(yo, yo + out_plane, b->f[static_cast<std::size_t>(m)]);
      const std::int64_t g = m / Mg, mg = m % Mg;
      for (std::int64_t cg = 0; cg < Cg; ++cg) {
        const std::int64_t c = g * Cg + cg;
        const float* xi = x.f.data() + (ni * C + c) * in_plane;
        const float* wk = wv.f.data() + (c * Mg + mg) * kvol;
        for (std::int64_t kd = 0; kd < w.k[0]; ++kd)
          for (std::int64_t kh = 0; kh < w.k[1]; ++kh)
            for (std::int64_t kw = 0; kw < w.k[2]; ++kw) {
              const float wt = wk[(kd * w.k[1] + kh) * w.k[2] + kw];
              for (std::int64_t id = 0; id < w.in[0]; ++id) {
                const std::int64_t od = id * w.stride[0] - w.pad[0] + kd * w.dil[0];
                if (od < 0 || od >= w.out[0]) continue;
                for (std::int64_t ih = 0; ih < w.in[1]; ++ih) {
                  const std::int64_t oh = ih * w.stride[1] - w.pad[1] + kh * w.dil[1];
                  if (oh < 0 || oh >= w.out[1]) continue;
                  const float* xr = xi + (id * w.in[1] + ih) * w.in[2];
                  float* yr = yo + (od * w.out[1] + oh) * w.out[2];
                  for (std::int64_t iw = 0; iw < w.in[2]; ++iw) {
                    const std::int64_t ow = iw * w.stride[2] - w.pad[2] + kw * w.dil[2];
                    if (ow >= 0 && ow < w.out[2]) yr[ow] += wt * xr[iw];
                  }
                }
              }
            }
      }
    }
  return one(Value::floats(output_shape(N, M, w), std::move(y)));
}

std::vector<Value> pool(const onnx::NodeProto& n, const Inputs& in, bool is_max) {
  const Value& x = need_float(in, 0, "X");
  const auto kernel = attr_ints(n, "kernel_shape");
  const Window w = make_window(n, x.shape, kernel, true);
  const bool include_pad = attr_int(n, "count_include_pad", 0) != 0;
  const std::int64_t N = x.shape[0], C = x.shape[1];
  const std::int64_t in_plane = w.in[0] * w.in[1] * w.in[2];
  const std::int64_t out_plane = w.out[0] * w.out[1] * w.out[2];
  std::vector<float> y(static_cast<std::size_t>(N * C * out_plane));
  for (std::int64_t p = 0; p < N * C; ++p) {
    const float* xi = x.f.data() + p * in_plane;
    float* yo = y.data() + p * out_plane;
    for (std::int64_t od = 0; od < w.out[0]; ++od)
      for (std::int64_t oh = 0; oh < w.out[1]; ++oh)
        for (std::int64_t ow = 0; ow < w.out[2]; ++ow) {
          float best = -std::numeric_limits<float>::infinity();
          double sum = 0.0;
          std::int64_t count = 0, padded_count = 0;
          for (std::int64_t kd = 0; kd < w.k[0]; ++kd) {
            const std::int64_t id = od * w.stride[0] - w.pad[0] + kd * w.dil[0];
            for (std::int64_t kh = 0; kh < w.k[1]; ++kh) {
              const std::int64_t ih = oh * w.stride[1] - w.pad[1] + kh * w.dil[1];
              for (std::int64_t kw = 0; kw < w.k[2]; ++kw) {
                const std::int64_t iw = ow * w.stride[2] - w.pad[2] + kw * w.dil[2];
                const bool inside = id >= 0 && id < w.in[0] && ih >= 0 && ih < w.in[1] && iw >= 0 && iw < w.in[2];
                const bool in_padded = id < w.in[0] + w.pad_end[0] && ih < w.in[1] + w.pad_end[1] &&
                                       iw < w.in[2] + w.pad_end[2];
                padded_count += in_padded;
                if (!inside) continue;
                const float v = xi[(id * w.in[1] + ih) * w.in[2] + iw];
                best = std::max(best, v);
                sum += v;
                ++count;
              }
            }
          }
          float& dst = yo[(od * w.out[1] + oh) * w.out[2] + ow];
          if (is_max)
            dst = best;
          else
            dst = static_cast<float>(sum / static_cast<double>(std::max<std::int64_t>(1, include_pad ? padded_count : count)));
        }
  }
  return one(Value::floats(output_shape(N, C, w), std::move(y)));
}

std::vector<Value> global_pool(const Inputs& in, bool is_max) {
  const Value& x = need_float(in, 0, "X");
  if (x.shape.size() < 3) fail("global pooling needs spatial axes");
  const std::int64_t nc = x.shape[0] * x.shape[1];
  const std::size_t plane = numel(x.shape) / static_cast<std::size_t>(nc);
  std::vector<float> y(static_cast<std::size_t>(nc));
  for (std::int64_t p = 0; p < nc; ++p) {
    const float* xi = x.f.data() + static_cast<std::size_t>(p) * plane;
    if (is_max) {
      y[static_cast<std::size_t>(p)] = *std::max_element(xi, xi + plane);
    } else {
      double s = 0.0;
      for (std::size_t k = 0; k < plane; ++k) s += xi[k];
      y[static_cast<std::size_t>(p)] = static_cast<float>(s / static_cast<double>(plane));
    }
  }
  std::vector<std::int64_t> shape(x.shape.size(), 1);
  shape[0] = x.shape[0];
  shape[1] = x.shape[1];
  return one(Value::floats(shape, std::move(y)));
}

std::vector<Value> batch_norm(const OpContext&, const onnx::NodeProto& n, const Inputs& in) {
  const Value& x = need_float(in, 0, "X");
  const auto scale = need(in, 1, "scale").to_floats();
  const auto bias = need(in, 2, "B").to_floats();
  const auto mean = need(in, 3, "mean").to_floats();
  const auto var = need(in, 4, "var").to_floats();
  const float eps = attr_float(n, "epsilon", 1e-5f);
  if (x.shape.size() < 2) fail("BatchNormalization needs (N,C,...)");
  const std::int64_t N = x.shape[0], C = x.shape[1];
  if (scale.size() != static_cast<std::size_t>(C) || bias.size() != scale.size() || mean.size() != scale.size() ||
      var.size() != scale.size())
    fail("BatchNormalization parameter size mismatch");
  const std::size_t plane = numel(x.shape) / static_cast<std::size_t>(N * C);
  std::vector<float> y(x.f.size());
  for (std::int64_t ni = 0; ni < N; ++ni)
    for (std::int64_t c = 0; c < C; ++c) {
      const auto ci = static_cast<std::size_t>(c);
      const float a = scale[ci] / std::sqrt(var[ci] + eps);
      const float s = bias[ci] - a * mean[ci];
      const std::size_t base = static_cast<std::size_t>(ni * C + c) * plane;
      for (std::size_t k = 0; k < plane; ++k) y[base + k] = a * x.f[base + k] + s;
    }
  return one(Value::floats(x.shape, std::move(y)));
}

// ---------------------------------------------------------------------------
// Resize

double source_coord(const std::string& mode, double x, double scale, std::int64_t len_in, std::int64_t len_out) {
  if (mode == "half_pixel") return (x + 0.5) / scale - 0.5;
  if (mode == "pytorch_half_pixel") return len_out > 1 ? (x + 0.5) / scale - 0.5 : 0.0;
  if (mode == "align_corners") return len_out == 1 ? 0.0 : x * static_cast<double>(len_in - 1) / static_cast<double>(len_out - 1);
  if (mode == "asymmetric") return x / scale;
  if (mode == "tf_half_pixel_for_nn") return (x + 0.5) / scale;
  fail("coordinate_transformation_mode " + mode + " not supported");
}

std::int64_t nearest_index(const std::string& mode, double x) {
  if (mode == "floor") return static_cast<std::int64_t>(std::floor(x));
  if (mode == "ceil") return static_cast<std::int64_t>(std::ceil(x));
  const double f = std::floor(x);
  if (x - f == 0.5) return static_cast<std::int64_t>(mode == "round_prefer_ceil" ? f + 1 : f);
  if (mode == "round_prefer_floor" || mode == "round_prefer_ceil") return static_cast<std::int64_t>(std::round(x));
  fail("nearest_mode " + mode + " not supported");
}

// Resamples one axis; other axes are copied.
Value resample_axis(const Value& x, std::size_t axis, std::int64_t out_len, double scale, bool linear,
                    const std::string& ctm, const std::string& nearest_mode) {
  const std::int64_t in_len = x.shape[axis];
  std::int64_t outer = 1, inner = 1;
  for (std::size_t k = 0; k < axis; ++k) outer *= x.shape[k];
  for (std::size_t k = axis + 1; k < x.shape.size(); ++k) inner *= x.shape[k];

  std::vector<std::int64_t> i0(static_cast<std::size_t>(out_len)), i1(static_cast<std::size_t>(out_len));
  std::vector<float> frac(static_cast<std::size_t>(out_len), 0.0f);
  for (std::int64_t o = 0; o < out_len; ++o) {
    const double src = source_coord(ctm, static_cast<double>(o), scale, in_len, out_len);
    const auto oi = static_cast<std::size_t>(o);
    if (linear) {
      const double c = std::clamp(src, 0.0, static_cast<double>(in_len - 1));
      i0[oi] = static_cast<std::int64_t>(std::floor(c));
      i1[oi] = std::min(i0[oi] + 1, in_len - 1);
      frac[oi] = static_cast<float>(c - static_cast<double>(i0[oi]));
    } else {
      i0[oi] = i1[oi] = std::clamp<std::int64_t>(nearest_index(nearest_mode, src), 0, in_len - 1);
    }
  }
  std::vector<std::int64_t> shape = x.shape;
  shape[axis] = out_len;
  std::vector<float> y(numel(shape));
  for (std::int64_t o = 0; o < outer; ++o)
    for (std::int64_t l = 0; l < out_len; ++l) {
      const auto li = static_cast<std::size_t>(l);
      const float* a = x.f.data() + (o * in_len + i0[li]) * inner;
      const float* b = x.f.data() + (o * in_len + i1[li]) * inner;
      float* dst = y.data() + (o * out_len + l) * inner;
      const float t = frac[li];
      if (t == 0.0f)
        std::copy(a, a + inner, dst);
      else
        for (std::int64_t k = 0; k < inner; ++k) dst[k] = a[k] + t * (b[k] - a[k]);
    }
  return Value::floats(shape, std::move(y));
}

std::vector<Value> resize_impl(const Value& x, const std::vector<double>& scales, const std::vector<std::int64_t>& sizes,
                               const std::string& mode, const std::string& ctm, const std::string& nearest_mode) {
  if (mode != "nearest" && mode != "linear" && mode != "bilinear" && mode != "trilinear")
    fail("resize mode " + mode + " not supported");
  const bool linear = mode != "nearest";
  const std::size_t r = x.shape.size();
  std::vector<std::int64_t> out(r);
  std::vector<double> sc(r);
  for (std::size_t k = 0; k < r; ++k) {
    if (!sizes.empty()) {
      out[k] = sizes[k];
      sc[k] = static_cast<double>(sizes[k]) / static_cast<double>(x.shape[k]);
    } else {
      sc[k] = scales[k];
      out[k] = static_cast<std::int64_t>(std::floor(static_cast<double>(x.shape[k]) * scales[k]));
    }
    if (out[k] < 1) fail("resize output axis would be empty");
  }
  Value cur = x;
  for (std::size_t k = 0; k < r; ++k)
    if (out[k] != cur.shape[k] || sc[k] != 1.0) cur = resample_axis(cur, k, out[k], sc[k], linear, ctm, nearest_mode);
  return one(std::move(cur));
}

std::vector<Value> resize(const OpContext& ctx, const onnx::NodeProto& n, const Inputs& in) {
  const Value& x = need_float(in, 0, "X");
  const std::string mode = attr_string(n, "mode", "nearest");
  std::vector<double> scales;
  std::vector<std::int64_t> sizes;
  std::string ctm = "asymmetric", nearest_mode = "floor";
  if (ctx.opset < 11) {
    for (float s : need(in, 1, "scales").to_floats()) scales.push_back(s);
  } else {
    ctm = attr_string(n, "coordinate_transformation_mode", "half_pixel");
    nearest_mode = attr_string(n, "nearest_mode", "round_prefer_floor");
    if (in.size() > 3 && in[3] && in[3]->numel() > 0) sizes = in[3]->to_ints();
    else if (in.size() > 2 && in[2] && in[2]->numel() > 0)
      for (float s : in[2]->to_floats()) scales.push_back(s);
    else fail("Resize needs scales or sizes");
  }
  if ((sizes.empty() ? scales.size() : sizes.size()) != x.shape.size()) fail("Resize scales/sizes rank mismatch");
  return resize_impl(x, scales, sizes, mode, ctm, nearest_mode);
}

std::vector<Value> upsample(const OpContext& ctx, const onnx::NodeProto& n, const Inputs& in) {
  const Value& x = need_float(in, 0, "X");
  std::vector<double> scales;
  if (ctx.opset >= 9) {
    for (float s : need(in, 1, "scales").to_floats()) scales.push_back(s);
  } else {
    const auto* a = find_attr(n, "scales");
    if (!a) fail("Upsample needs scales");
    for (float s : a->floats()) scales.push_back(s);
  }
  if (scales.size() != x.shape.size()) fail("Upsample scales rank mismatch");
  return resize_impl(x, scales, {}, attr_string(n, "mode", "nearest"), "asymmetric", "floor");
}

// ---------------------------------------------------------------------------
// Shape manipulation (float or int64 payloads)

template <typename T>
std::vector<T>& payload(Value& v);
template <>
std::vector<float>& payload<float>(Value& v) { return v.f; }
template <>
std::vector<std::int64_t>& payload<std::int64_t>(Value& v) { return v.i; }
template <typename T>
const std::vector<T>& payload(const Value& v) { return payload<T>(const_cast<Value&>(v)); }

Value with_shape(const Value& x, std::vector<std::int64_t> shape) {
  if (numel(shape) != x.numel()) fail("cannot view " + shape_str(x.shape) + " as " + shape_str(shape));
  Value y = x;
  y.shape = std::move(shape);
  return y;
}

// Gathers y[out_index] = x[map(out_index)], with map given per axis as input offsets.
template <typename T>
std::vector<T> gather_by_axes(const std::vector<T>& x, const std::vector<std::int64_t>& x_shape,
                              const std::vector<std::vector<std::int64_t>>& src_of_axis) {
  const auto xs = row_strides(x_shape);
  std::vector<std::int64_t> out_shape;
  for (const auto& a : src_of_axis) out_shape.push_back(static_cast<std::int64_t>(a.size()));
  const std::size_t n = numel(out_shape);
  std::vector<T> y(n);
  if (n == 0) return y;
  const std::size_t r = out_shape.size();
  std::vector<std::int64_t> idx(r, 0);
  for (std::size_t o = 0; o < n; ++o) {
    std::int64_t p = 0;
    for (std::size_t k = 0; k < r; ++k) p += src_of_axis[k][static_cast<std::size_t>(idx[k])] * xs[k];
    y[o] = x[static_cast<std::size_t>(p)];
    for (std::size_t k = r; k-- > 0;) {
      if (++idx[k] < out_shape[k]) break;
      idx[k] = 0;
    }
  }
  return y;
}

Value gather_axes(const Value& x, const std::vector<std::vector<std::int64_t>>& src) {
  std::vector<std::int64_t> shape;
  for (const auto& a : src) shape.push_back(static_cast<std::int64_t>(a.size()));
  if (x.is_float()) return Value::floats(shape, gather_by_axes(x.f, x.shape, src));
  return Value::ints(shape, gather_by_axes(x.i, x.shape, src));
}

std::vector<Value> concat(const OpContext&, const onnx::NodeProto& n, const Inputs& in) {
  std::vector<const Value*> parts;
  for (const auto* v : in)
    if (v) parts.push_back(v);
  if (parts.empty()) fail("Concat needs inputs");
  const auto& s0 = parts[0]->shape;
  const std::int64_t axis = norm_axis(attr_int(n, "axis", 0), s0.size());
  const bool fl = parts[0]->is_float();
  std::vector<std::int64_t> shape = s0;
  shape[static_cast<std::size_t>(axis)] = 0;
  for (const auto* p : parts) {
    if (p->shape.size() != s0.size() || p->is_float() != fl) fail("Concat inputs disagree in rank or type");
    for (std::size_t k = 0; k < s0.size(); ++k)
      if (static_cast<std::int64_t>(k) != axis && p->shape[k] != s0[k]) fail("Concat shape mismatch");
    shape[static_cast<std::size_t>(axis)] += p->shape[static_cast<std::size_t>(axis)];
  }
  std::int64_t outer = 1;
  for (std::int64_t k = 0; k < axis; ++k) outer *= s0[static_cast<std::size_t>(k)];
  Value y;
  y.type = parts[0]->type;
  y.shape = shape;
  auto run = [&](auto tag) {
    using T = decltype(tag);
    auto& out = payload<T>(y);
    out.reserve(numel(shape));
    for (std::int64_t o = 0; o < outer; ++o)
      for (const auto* p : parts) {
        const auto& src = payload<T>(*p);
        const std::size_t chunk = src.size() / static_cast<std::size_t>(outer);
        out.insert(out.end(), src.begin() + static_cast<std::ptrdiff_t>(o * static_cast<std::int64_t>(chunk)),
                   src.begin() + static_cast<std::ptrdiff_t>((o + 1) * static_cast<std::int64_t>(chunk)));
      }
  };
  if (fl) run(float{});
  else run(std::int64_t{});
  return one(std::move(y));
}

std::vector<Value> shape_op(const OpContext&, const onnx::NodeProto& n, const Inputs& in) {
  const Value& x = need(in, 0, "data");
  const auto r = static_cast<std::int64_t>(x.shape.size());
  std::int64_t start = attr_int(n, "start", 0), end = attr_int(n, "end", r);
  if (start < 0) start += r;
  if (end < 0) end += r;
  start = std::clamp<std::int64_t>(start, 0, r);
  end = std::clamp<std::int64_t>(end, start, r);
  std::vector<std::int64_t> s(x.shape.begin() + start, x.shape.begin() + end);
  return one(Value::ints({static_cast<std::int64_t>(s.size())}, s));
}

std::vector<Value> gather(const OpContext&, const onnx::NodeProto& n, const Inputs& in) {
  const Value& x = need(in, 0, "data");
  const Value& idx = need(in, 1, "indices");
  const auto axis = static_cast<std::size_t>(norm_axis(attr_int(n, "axis", 0), x.shape.size()));
  auto ids = idx.to_ints();
  const std::int64_t len = x.shape[axis];
  for (auto& v : ids) {
    if (v < 0) v += len;
    if (v < 0 || v >= len) fail("Gather index out of range");
  }
  std::int64_t outer = 1, inner = 1;
  for (std::size_t k = 0; k < axis; ++k) outer *= x.shape[k];
  for (std::size_t k = axis + 1; k < x.shape.size(); ++k) inner *= x.shape[k];
  std::vector<std::int64_t> shape(x.shape.begin(), x.shape.begin() + static_cast<std::ptrdiff_t>(axis));
  shape.insert(shape.end(), idx.shape.begin(), idx.shape.end());
  shape.insert(shape.end(), x.shape.begin() + static_cast<std::ptrdiff_t>(axis) + 1, x.shape.end());
  Value y;
  y.type = x.type;
  y.shape = shape;
  auto run = [&](auto tag) {
    using T = decltype(tag);
    const auto& src = payload<T>(x);
    auto& out = payload<T>(y);
    out.reserve(numel(shape));
    for (std::int64_t o = 0; o < outer; ++o)
      for (auto v : ids) {
        const auto b = src.begin() + static_cast<std::ptrdiff_t>((o * len + v) * inner);
        out.insert(out.end(), b, b + inner);
      }
  };
  if (x.is_float()) run(float{});
  else run(std::int64_t{});
  return one(std::move(y));
}

std::vector<std::int64_t> axes_input(const OpContext& ctx, const onnx::NodeProto& n, const Inputs& in, int since) {
  if (ctx.opset >= since) return in.size() > 1 && in[1] ? in[1]->to_ints() : std::vector<std::int64_t>{};
  return attr_ints(n, "axes");
}

std::vector<Value> unsqueeze(const OpContext& ctx, const onnx::NodeProto& n, const Inputs& in) {
  const Value& x = need(in, 0, "data");
  auto axes = axes_input(ctx, n, in, 13);
  const std::size_t r = x.shape.size() + axes.size();
  std::vector<bool> inserted(r, false);
  for (auto a : axes) inserted[static_cast<std::size_t>(norm_axis(a, r))] = true;
  std::vector<std::int64_t> shape;
  std::size_t src = 0;
  for (std::size_t k = 0; k < r; ++k) shape.push_back(inserted[k] ? 1 : x.shape.at(src++));
  return one(with_shape(x, shape));
}

std::vector<Value> squeeze(const OpContext& ctx, const onnx::NodeProto& n, const Inputs& in) {
  const Value& x = need(in, 0, "data");
  const auto axes = axes_input(ctx, n, in, 13);
  std::vector<bool> drop(x.shape.size(), false);
  if (axes.empty())
    for (std::size_t k = 0; k < x.shape.size(); ++k) drop[k] = x.shape[k] == 1;
  for (auto a : axes) {
    const auto k = static_cast<std::size_t>(norm_axis(a, x.shape.size()));
    if (x.shape[k] != 1) fail("Squeeze of a non-unit axis");
    drop[k] = true;
  }
  std::vector<std::int64_t> shape;
  for (std::size_t k = 0; k < x.shape.size(); ++k)
    if (!drop[k]) shape.push_back(x.shape[k]);
  return one(with_shape(x, shape));
}

std::vector<Value> cast(const OpContext&, const onnx::NodeProto& n, const Inputs& in) {
  const Value& x = need(in, 0, "input");
  const auto to = attr_int(n, "to", 1);
  switch (to) {
    case onnx::TensorProto::FLOAT:
    case onnx::TensorProto::DOUBLE:
    case onnx::TensorProto::FLOAT16:
      return one(Value::floats(x.shape, x.to_floats()));
    case onnx::TensorProto::INT64:
    case onnx::TensorProto::INT32:
    case onnx::TensorProto::INT16:
    case onnx::TensorProto::INT8:
    case onnx::TensorProto::UINT8:
    case onnx::TensorProto::BOOL:
      if (to == onnx::TensorProto::BOOL && x.is_float()) {
        std::vector<std::int64_t> b(x.f.size());
        for (std::size_t k = 0; k < b.size(); ++k) b[k] = x.f[k] != 0.0f;
        return one(Value::ints(x.shape, b));
      }
      return one(Value::ints(x.shape, x.to_ints()));
    default:
      fail("Cast to type " + std::to_string(to) + " not supported");
  }
}

std::vector<Value> reshape(const OpContext& ctx, const onnx::NodeProto& n, const Inputs& in) {
  const Value& x = need(in, 0, "data");
  auto shape = ctx.opset >= 5 ? need(in, 1, "shape").to_ints() : attr_ints(n, "shape");
  const bool allow_zero = attr_int(n, "allowzero", 0) != 0;
  std::int64_t known = 1;
  int infer = -1;
  for (std::size_t k = 0; k < shape.size(); ++k) {
    if (shape[k] == 0 && !allow_zero) shape[k] = x.shape.at(k);
    if (shape[k] == -1) {
      if (infer >= 0) fail("Reshape with two -1 entries");
      infer = static_cast<int>(k);
    } else {
      known *= shape[k];
    }
  }
  if (infer >= 0) {
    if (known == 0) fail("Reshape cannot infer with a zero dimension");
    shape[static_cast<std::size_t>(infer)] = static_cast<std::int64_t>(x.numel()) / known;
  }
  return one(with_shape(x, shape));
}

std::vector<Value> flatten(const OpContext&, const onnx::NodeProto& n, const Inputs& in) {
  const Value& x = need(in, 0, "input");
  const auto axis = static_cast<std::size_t>(norm_axis(attr_int(n, "axis", 1), x.shape.size() + 1));
  std::int64_t a = 1;
  for (std::size_t k = 0; k < axis; ++k) a *= x.shape[k];
  return one(with_shape(x, {a, static_cast<std::int64_t>(x.numel()) / std::max<std::int64_t>(a, 1)}));
}

std::vector<Value> transpose(const OpContext&, const onnx::NodeProto& n, const Inputs& in) {
  const Value& x = need(in, 0, "data");
  const std::size_t r = x.shape.size();
  std::vector<std::int64_t> rev(r);
  for (std::size_t k = 0; k < r; ++k) rev[k] = static_cast<std::int64_t>(r - 1 - k);
  const auto perm = attr_ints(n, "perm", rev);
  if (perm.size() != r) fail("Transpose perm rank mismatch");
  // out axis k walks input axis perm[k]; build via strided gather
  const auto xs = row_strides(x.shape);
  std::vector<std::int64_t> shape(r), step(r);
  for (std::size_t k = 0; k < r; ++k) {
    shape[k] = x.shape[static_cast<std::size_t>(perm[k])];
    step[k] = xs[static_cast<std::size_t>(perm[k])];
  }
  const std::size_t total = x.numel();
  Value y;
  y.type = x.type;
  y.shape = shape;
  auto run = [&](auto tag) {
    using T = decltype(tag);
    const auto& src = payload<T>(x);
    auto& out = payload<T>(y);
    out.resize(total);
    std::vector<std::int64_t> idx(r, 0);
    for (std::size_t o = 0; o < total; ++o) {
      std::int64_t p = 0;
      for (std::size_t k = 0; k < r; ++k) p += idx[k] * step[k];
      out[o] = src[static_cast<std::size_t>(p)];
      for (std::size_t k = r; k-- > 0;) {
        if (++idx[k] < shape[k]) break;
        idx[k] = 0;
      }
    }
  };
  if (x.is_float()) run(float{});
  else run(std::int64_t{});
  return one(std::move(y));
}

std::vector<Value> slice(const OpContext& ctx, const onnx::NodeProto& n, const Inputs& in) {
  const Value& x = need(in, 0, "data");
  std::vector<std::int64_t> starts, ends, axes, steps;
  if (ctx.opset >= 10) {
    starts = need(in, 1, "starts").to_ints();
    ends = need(in, 2, "ends").to_ints();
    if (in.size() > 3 && in[3]) axes = in[3]->to_ints();
    if (in.size() > 4 && in[4]) steps = in[4]->to_ints();
  } else {
    starts = attr_ints(n, "starts");
    ends = attr_ints(n, "ends");
    axes = attr_ints(n, "axes");
  }
  if (axes.empty())
    for (std::size_t k = 0; k < starts.size(); ++k) axes.push_back(static_cast<std::int64_t>(k));
  if (steps.empty()) steps.assign(starts.size(), 1);
  if (ends.size() != starts.size() || axes.size() != starts.size() || steps.size() != starts.size())
    fail("Slice parameter lengths differ");
  std::vector<std::vector<std::int64_t>> src(x.shape.size());
  for (std::size_t k = 0; k < x.shape.size(); ++k) {
    src[k].resize(static_cast<std::size_t>(x.shape[k]));
    std::iota(src[k].begin(), src[k].end(), 0);
  }
  for (std::size_t j = 0; j < starts.size(); ++j) {
    const auto a = static_cast<std::size_t>(norm_axis(axes[j], x.shape.size()));
    const std::int64_t dim = x.shape[a], step = steps[j];
    if (step == 0) fail("Slice step 0");
    std::int64_t s = starts[j], e = ends[j];
    if (s < 0) s += dim;
    if (e < 0) e += dim;
    if (step > 0) {
      s = std::clamp<std::int64_t>(s, 0, dim);
      e = std::clamp<std::int64_t>(e, 0, dim);
    } else {
      s = std::clamp<std::int64_t>(s, 0, dim - 1);
      e = std::clamp<std::int64_t>(e, -1, dim - 1);
    }
    src[a].clear();
    for (std::int64_t v = s; step > 0 ? v < e : v > e; v += step) src[a].push_back(v);
  }
  return one(gather_axes(x, src));
}

std::vector<Value> pad(const OpContext& ctx, const onnx::NodeProto& n, const Inputs& in) {
  const Value& x = need(in, 0, "data");
  const std::size_t r = x.shape.size();
  std::vector<std::int64_t> pads;
  float cval = 0.0f;
  if (ctx.opset >= 11) {
    pads = need(in, 1, "pads").to_ints();
    if (in.size() > 2 && in[2] && in[2]->numel() > 0) cval = in[2]->to_floats()[0];
    if (in.size() > 3 && in[3]) {
      const auto ax = in[3]->to_ints();
      std::vector<std::int64_t> full(2 * r, 0);
      for (std::size_t j = 0; j < ax.size(); ++j) {
        const auto a = static_cast<std::size_t>(norm_axis(ax[j], r));
        full[a] = pads[j];
        full[a + r] = pads[j + ax.size()];
      }
      pads = full;
    }
  } else {
    pads = attr_ints(n, "pads");
    cval = attr_float(n, "value", 0.0f);
  }
  if (pads.size() != 2 * r) fail("Pad needs 2*rank pads");
  const std::string mode = attr_string(n, "mode", "constant");
  if (!x.is_float()) fail("Pad supports float data only");
  std::vector<std::int64_t> shape(r);
  for (std::size_t k = 0; k < r; ++k) {
    shape[k] = x.shape[k] + pads[k] + pads[k + r];
    if (shape[k] < 0) fail("Pad produces negative size");
  }
  const auto xs = row_strides(x.shape);
  const std::size_t total = numel(shape);
  std::vector<float> y(total);
  std::vector<std::int64_t> idx(r, 0);
  for (std::size_t o = 0; o < total; ++o) {
    std::int64_t p = 0;
    bool outside = false;
    for (std::size_t k = 0; k < r; ++k) {
      std::int64_t s = idx[k] - pads[k];
      const std::int64_t d = x.shape[k];
      if (s < 0 || s >= d) {
        if (mode == "constant") {
          outside = true;
          break;
        } else if (mode == "edge") {
          s = std::clamp<std::int64_t>(s, 0, d - 1);
        } else if (mode == "reflect") {
          if (d == 1) s = 0;
          const std::int64_t period = 2 * (d - 1);
          while (d > 1 && (s < 0 || s >= d)) {
            s = ((s % period) + period) % period;
            if (s >= d) s = period - s;
          }
        } else {
          fail("Pad mode " + mode + " not supported");
        }
      }
      p += s * xs[k];
    }
    y[o] = outside ? cval : x.f[static_cast<std::size_t>(p)];
    for (std::size_t k = r; k-- > 0;) {
      if (++idx[k] < shape[k]) break;
      idx[k] = 0;
    }
  }
  return one(Value::floats(shape, std::move(y)));
}

std::vector<Value> constant(const OpContext&, const onnx::NodeProto& n, const Inputs&) {
  if (const auto* a = find_attr(n, "value")) return one(from_tensor_proto(a->t()));
  if (const auto* a = find_attr(n, "value_float")) return one(Value::floats({}, {a->f()}));
  if (const auto* a = find_attr(n, "value_floats"))
    return one(Value::floats({a->floats_size()}, {a->floats().begin(), a->floats().end()}));
  if (const auto* a = find_attr(n, "value_int")) return one(Value::ints({}, {a->i()}));
  if (const auto* a = find_attr(n, "value_ints"))
    return one(Value::ints({a->ints_size()}, {a->ints().begin(), a->ints().end()}));
  fail("Constant without a supported value attribute");
}

std::vector<Value> constant_of_shape(const OpContext&, const onnx::NodeProto& n, const Inputs& in) {
  const auto shape = need(in, 0, "input").to_ints();
  const std::size_t count = numel(shape);
  if (const auto* a = find_attr(n, "value")) {
    const Value v = from_tensor_proto(a->t());
    if (v.is_float()) return one(Value::floats(shape, std::vector<float>(count, v.f.at(0))));
    return one(Value::ints(shape, std::vector<std::int64_t>(count, v.i.at(0))));
  }
  return one(Value::floats(shape, std::vector<float>(count, 0.0f)));
}

std::vector<Value> identity(const OpContext&, const onnx::NodeProto&, const Inputs& in) {
  return one(need(in, 0, "input"));
}

// ---------------------------------------------------------------------------
// Dense products

std::vector<Value> gemm(const OpContext&, const onnx::NodeProto& n, const Inputs& in) {
  const Value& a = need_float(in, 0, "A");
  const Value& b = need_float(in, 1, "B");
  if (a.shape.size() != 2 || b.shape.size() != 2) fail("Gemm needs 2-D operands");
  const bool ta = attr_int(n, "transA", 0) != 0, tb = attr_int(n, "transB", 0) != 0;
  const float alpha = attr_float(n, "alpha", 1.0f), beta = attr_float(n, "beta", 1.0f);
  const std::int64_t M = ta ? a.shape[1] : a.shape[0], K = ta ? a.shape[0] : a.shape[1];
  const std::int64_t Kb = tb ? b.shape[1] : b.shape[0], N = tb ? b.shape[0] : b.shape[1];
  if (K != Kb) fail("Gemm inner dimensions differ");
  std::vector<float> y(static_cast<std::size_t>(M * N), 0.0f);
  if (in.size() > 2 && in[2]) {
    std::vector<std::int64_t> s;
    const auto c = broadcast_apply(in[2]->shape, in[2]->f, {M, N}, y, s, [](float u, float) { return u; });
    for (std::size_t k = 0; k < y.size(); ++k) y[k] = beta * c[k];
  }
  for (std::int64_t i = 0; i < M; ++i)
    for (std::int64_t j = 0; j < N; ++j) {
      double acc = 0.0;
      for (std::int64_t k = 0; k < K; ++k)
        acc += static_cast<double>(a.f[static_cast<std::size_t>(ta ? k * M + i : i * K + k)]) *
               b.f[static_cast<std::size_t>(tb ? j * K + k : k * N + j)];
      y[static_cast<std::size_t>(i * N + j)] += alpha * static_cast<float>(acc);
    }
  return one(Value::floats({M, N}, std::move(y)));
}

std::vector<Value> matmul(const OpContext&, const onnx::NodeProto&, const Inputs& in) {
  Value a = need_float(in, 0, "A");
  Value b = need_float(in, 1, "B");
  const bool a_vec = a.shape.size() == 1, b_vec = b.shape.size() == 1;
  if (a_vec) a.shape.insert(a.shape.begin(), 1);
  if (b_vec) b.shape.push_back(1);
  const std::int64_t M = a.shape[a.shape.size() - 2], K = a.shape.back();
  const std::int64_t Kb = b.shape[b.shape.size() - 2], N = b.shape.back();
  if (K != Kb) fail("MatMul inner dimensions differ");
  const std::vector<std::int64_t> ba(a.shape.begin(), a.shape.end() - 2), bb(b.shape.begin(), b.shape.end() - 2);
  const auto batch = broadcast_shape(ba, bb);
  const std::size_t nb = numel(batch);
  const auto as = aligned_strides(ba, batch), bs = aligned_strides(bb, batch);
  std::vector<float> y(nb * static_cast<std::size_t>(M * N));
  std::vector<std::int64_t> idx(batch.size(), 0);
  for (std::size_t t = 0; t < nb; ++t) {
    std::int64_t pa = 0, pb = 0;
    for (std::size_t k = 0; k < batch.size(); ++k) {
      pa += idx[k] * as[k];
      pb += idx[k] * bs[k];
    }
    const float* A = a.f.data() + pa * M * K;
    const float* B = b.f.data() + pb * K * N;
    float* Y = y.data() + static_cast<std::int64_t>(t) * M * N;
    for (std::int64_t i = 0; i < M; ++i)
      for (std::int64_t k = 0; k < K; ++k) {
        const float av = A[i * K + k];
        for (std::int64_t j = 0; j < N; ++j) Y[i * N + j] += av * B[k * N + j];
      }
    for (std::size_t k = batch.size(); k-- > 0;) {
      if (++idx[k] < batch[k]) break;
      idx[k] = 0;
    }
  }
  std::vector<std::int64_t> shape = batch;
  if (!a_vec) shape.push_back(M);
  if (!b_vec) shape.push_back(N);
  return one(Value::floats(shape, std::move(y)));
}

}  // namespace

const std::map<std::string, OpFn>& op_table() {
  static const std::map<std::string, OpFn> table = [] {
    std::map<std::string, OpFn> t;
    using N = onnx::NodeProto;
    t["Relu"] = unary([](float x, const N&) { return x > 0.0f ? x : 0.0f; });
    t["LeakyRelu"] = unary([](float x, const N& n) { return x >= 0.0f ? x : attr_float(n, "alpha", 0.01f) * x; });
    t["Elu"] = unary([](float x, const N& n) { return x >= 0.0f ? x : attr_float(n, "alpha", 1.0f) * (std::exp(x) - 1.0f); });
    t["Sigmoid"] = unary([](float x, const N&) { return 1.0f / (1.0f + std::exp(-x)); });
    t["HardSigmoid"] = unary([](float x, const N& n) {
      return std::clamp(attr_float(n, "alpha", 0.2f) * x + attr_float(n, "beta", 0.5f), 0.0f, 1.0f);
    });
    t["HardSwish"] = unary([](float x, const N&) { return x * std::clamp(x / 6.0f + 0.5f, 0.0f, 1.0f); });
    t["Softplus"] = unary([](float x, const N&) { return std::log1p(std::exp(x)); });
    t["Tanh"] = unary([](float x, const N&) { return std::tanh(x); });
    t["Exp"] = unary([](float x, const N&) { return std::exp(x); });
    t["Log"] = unary([](float x, const N&) { return std::log(x); });
    t["Sqrt"] = unary([](float x, const N&) { return std::sqrt(x); });
    t["Neg"] = unary([](float x, const N&) { return -x; });
    t["Abs"] = unary([](float x, const N&) { return std::fabs(x); });
    t["Floor"] = unary([](float x, const N&) { return std::floor(x); });
    t["Ceil"] = unary([](float x, const N&) { return std::ceil(x); });
    t["Erf"] = unary([](float x, const N&) { return std::erf(x); });
    t["Reciprocal"] = unary([](float x, const N&) { return 1.0f / x; });
    t["Clip"] = clip;
    t["Softmax"] = softmax;
    t["Add"] = binary([](float a, float b) { return a + b; }, [](std::int64_t a, std::int64_t b) { return a + b; });
    t["Sub"] = binary([](float a, float b) { return a - b; }, [](std::int64_t a, std::int64_t b) { return a - b; });
    t["Mul"] = binary([](float a, float b) { return a * b; }, [](std::int64_t a, std::int64_t b) { return a * b; });
    t["Div"] = binary([](float a, float b) { return a / b; }, [](std::int64_t a, std::int64_t b) {
      if (b == 0) throw std::runtime_error("integer division by zero");
      return a / b;
    });
    t["Pow"] = binary([](float a, float b) { return std::pow(a, b); },
                      [](std::int64_t a, std::int64_t b) { return static_cast<std::int64_t>(std::pow(a, b)); });
    t["Max"] = binary([](float a, float b) { return std::max(a, b); }, [](std::int64_t a, std::int64_t b) { return std::max(a, b); });
    t["Min"] = binary([](float a, float b) { return std::min(a, b); }, [](std::int64_t a, std::int64_t b) { return std::min(a, b); });
    t["Conv"] = conv;
    t["ConvTranspose"] = conv_transpose;
    t["BatchNormalization"] = batch_norm;
    t["MaxPool"] = [](const OpContext&, const N& n, const Inputs& in) { return pool(n, in, true); };
    t["AveragePool"] = [](const OpContext&, const N& n, const Inputs& in) { return pool(n, in, false); };
    t["GlobalAveragePool"] = [](const OpContext&, const N&, const Inputs& in) { return global_pool(in, false); };
    t["GlobalMaxPool"] = [](const OpContext&, const N&, const Inputs& in) { return global_pool(in, true); };
    t["Resize"] = resize;
    t["Upsample"] = upsample;
    t["Concat"] = concat;
    t["Shape"] = shape_op;
    t["Gather"] = gather;
    t["Unsqueeze"] = unsqueeze;
    t["Squeeze"] = squeeze;
    t["Cast"] = cast;
    t["Reshape"] = reshape;
    t["Flatten"] = flatten;
    t["Transpose"] = transpose;
    t["Slice"] = slice;
    t["Pad"] = pad;
    t["Constant"] = constant;
    t["ConstantOfShape"] = constant_of_shape;
    t["Identity"] = identity;
    t["Dropout"] = identity;
    t["Gemm"] = gemm;
    t["MatMul"] = matmul;
    return t;
  }();
  return table;
}

std::optional<std::string> unsupported_reason(const onnx::NodeProto& node) {
  const std::string& op = node.op_type();
  if (!node.domain().empty() && node.domain() != "ai.onnx") return "operator domain '" + node.domain() + "'";
  if (!op_table().count(op)) return "operator " + op;
  if (op == "Resize" || op == "Upsample") {
    const auto mode = attr_string(node, "mode", "nearest");
    if (mode != "nearest" && mode != "linear" && mode != "bilinear" && mode != "trilinear") return op + " mode " + mode;
    if (op == "Resize" && attr_int(node, "antialias", 0) != 0) return "Resize antialias";
  }
  if ((op == "MaxPool") && node.output_size() > 1 && !node.output(1).empty()) return "MaxPool indices output";
  if (op == "Pad") {
    const auto mode = attr_string(node, "mode", "constant");
    if (mode != "constant" && mode != "edge" && mode != "reflect") return "Pad mode " + mode;
  }
  return std::nullopt;
}

}  // namespace tvol::onnx_rt
