#pragma once

// Dense nested-loop reference inference. Uses the batchnorm formula and the
// uniform quantizer directly, never folded thresholds or bit planes.

#include <algorithm>
#include <climits>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "qnnstream/error.hpp"
#include "qnnstream/netdesc.hpp"
#include "qnnstream/params.hpp"
#include "qnnstream/quant.hpp"

namespace qnn {

struct DenseTensor {
  int h = 0, w = 0, c = 0;
  std::vector<std::int32_t> v;

  DenseTensor() = default;
  DenseTensor(int h_, int w_, int c_) : h(h_), w(w_), c(c_), v(std::size_t(h_) * w_ * c_, 0) {}
  DenseTensor(int h_, int w_, int c_, std::vector<std::int32_t> data)
      : h(h_), w(w_), c(c_), v(std::move(data)) {
    if (v.size() != std::size_t(h) * w * c)
      throw ShapeError("dense tensor " + std::to_string(h) + "x" + std::to_string(w) + "x" +
                       std::to_string(c) + " needs " + std::to_string(std::size_t(h) * w * c) +
                       " elements, got " + std::to_string(v.size()));
  }

  std::int32_t& at(int y, int x, int ch) { return v[(std::size_t(y) * w + x) * c + ch]; }
  std::int32_t at(int y, int x, int ch) const { return v[(std::size_t(y) * w + x) * c + ch]; }
};

inline std::int32_t fit16(std::int64_t v, const char* where) {
  if (v < -32768 || v > 32767)
    throw OverflowError(std::string(where) + ": value " + std::to_string(v) +
                        " does not fit 16 bits");
  return static_cast<std::int32_t>(v);
}

/// Cross-correlation with +-1 weights over the input padded by `pad_value`.
inline DenseTensor dense_conv(const DenseTensor& in, const WeightBlock& w, int s, int p,
                              std::int32_t pad_value = 0) {
  if (in.c != w.in_ch) throw ShapeError("dense_conv: channel mismatch");
  const int k = w.k;
  const int oh = (in.h + 2 * p - k) / s + 1;
  const int ow = (in.w + 2 * p - k) / s + 1;
  if (in.h + 2 * p < k || in.w + 2 * p < k || oh <= 0 || ow <= 0)
    throw ShapeError("dense_conv: window larger than input");
  DenseTensor out(oh, ow, w.out_ch);
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox)
      for (int o = 0; o < w.out_ch; ++o) {
        std::int64_t acc = 0;
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx) {
            const int y = oy * s + ky - p, x = ox * s + kx - p;
            const bool inside = y >= 0 && y < in.h && x >= 0 && x < in.w;
            for (int ch = 0; ch < in.c; ++ch)
              acc += std::int64_t{w.weight(o, ky, kx, ch)} * (inside ? in.at(y, x, ch) : pad_value);
          }
        if (acc > INT32_MAX || acc < INT32_MIN) throw OverflowError("dense_conv: 32-bit overflow");
        out.at(oy, ox, o) = static_cast<std::int32_t>(acc);
      }
  return out;
}

inline DenseTensor dense_max_pool(const DenseTensor& in, int k, int s, int p,
                                  std::int32_t pad_value) {
  const int oh = (in.h + 2 * p - k) / s + 1, ow = (in.w + 2 * p - k) / s + 1;
  DenseTensor out(oh, ow, in.c);
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox)
      for (int ch = 0; ch < in.c; ++ch) {
        std::int32_t m = INT32_MIN;
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx) {
            const int y = oy * s + ky - p, x = ox * s + kx - p;
            const bool inside = y >= 0 && y < in.h && x >= 0 && x < in.w;
            m = std::max(m, inside ? in.at(y, x, ch) : pad_value);
          }
        out.at(oy, ox, ch) = m;
      }
  return out;
}

/// Window mean rounded half away from zero.
inline DenseTensor dense_avg_pool(const DenseTensor& in, int k, int s) {
  const int oh = (in.h - k) / s + 1, ow = (in.w - k) / s + 1;
  DenseTensor out(oh, ow, in.c);
  const double n = double(k) * k;
  for (int oy = 0; oy < oh; ++oy)
    for (int ox = 0; ox < ow; ++ox)
      for (int ch = 0; ch < in.c; ++ch) {
        std::int64_t sum = 0;
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx) sum += in.at(oy * s + ky, ox * s + kx, ch);
        out.at(oy, ox, ch) = static_cast<std::int32_t>(std::round(double(sum) / n));
      }
  return out;
}

inline DenseTensor dense_activate(const DenseTensor& acc, const std::vector<BnParams>& bn,
                                  double d, int bits) {
  DenseTensor out(acc.h, acc.w, acc.c);
  for (int y = 0; y < acc.h; ++y)
    for (int x = 0; x < acc.w; ++x)
      for (int ch = 0; ch < acc.c; ++ch)
        out.at(y, x, ch) = static_cast<std::int32_t>(
            quantize_reference(batchnorm(acc.at(y, x, ch), bn[ch]), d, bits).code);
  return out;
}

inline void check16(const DenseTensor& t, const char* where) {
  for (auto v : t.v) fit16(v, where);
}

struct InferResult {
  DenseTensor output;
  int argmax = 0;
  std::vector<DenseTensor> layers;  // output of every layer, input first
};

inline InferResult dense_infer(const NetworkSpec& net, const NetworkParams& params,
                               const DenseTensor& image) {
  if (net.shapes.size() != net.layers.size()) throw ShapeError("network has not been validated");
  if (params.layers.size() != net.layers.size())
    throw ParamError("parameters do not match the network");
  const Shape in0 = net.input_shape();
  if (image.h != in0.h || image.w != in0.w || image.c != in0.c)
    throw ShapeError("image is " + std::to_string(image.h) + "x" + std::to_string(image.w) +
                     "x" + std::to_string(image.c) + ", network expects " + to_string(in0));
  InferResult r;
  DenseTensor x = image;
  r.layers.push_back(x);
  std::optional<DenseTensor> last_sum;  // raw sum of the previous residual block

  for (std::size_t i = 1; i < net.layers.size(); ++i) {
    const auto& lp = params.layers[i];
    const StreamType in_t = net.types[i - 1];
    std::optional<DenseTensor> sum_here;
    auto need = [&](const auto& opt, const char* what) -> const auto& {
      if (!opt) throw ParamError("layer " + std::to_string(i) + ": missing " + what);
      return *opt;
    };
    std::visit(
        [&](const auto& l) {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, ConvLayer>) {
            DenseTensor acc = dense_conv(x, need(lp.weights, "weights"), l.s, l.p, 0);
            if (l.fused()) {
              x = dense_activate(acc, lp.bn, lp.d, l.act_bits);
            } else {
              check16(acc, "conv");
              x = std::move(acc);
            }
          } else if constexpr (std::is_same_v<T, FcLayer>) {
            DenseTensor flat(1, 1, static_cast<int>(x.v.size()), x.v);
            DenseTensor acc = dense_conv(flat, need(lp.weights, "weights"), 1, 0, 0);
            if (l.fused()) {
              x = dense_activate(acc, lp.bn, lp.d, l.act_bits);
            } else {
              check16(acc, "fc");
              x = std::move(acc);
            }
          } else if constexpr (std::is_same_v<T, PoolLayer>) {
            if (l.max)
              x = dense_max_pool(x, l.k, l.s, l.p,
                                 in_t.kind == ElementKind::Accum ? -32768 : 0);
            else
              x = dense_avg_pool(x, l.k, l.s);
          } else if constexpr (std::is_same_v<T, ResidualLayer>) {
            const DenseTensor a =
                dense_activate(dense_conv(x, need(lp.weights, "weights"), l.s, 1, 0), lp.bn,
                               lp.d, net.act_bits);
            DenseTensor b = dense_conv(a, need(lp.weights_b, "second weights"), 1, 1, 0);
            check16(b, "residual conv");
            DenseTensor skip;
            if (l.proj) {
              skip = dense_conv(x, need(lp.proj, "projection weights"), l.s, 0, 0);
              check16(skip, "projection");
            } else {
              skip = last_sum ? *last_sum : x;
            }
            DenseTensor sum(b.h, b.w, b.c);
            for (std::size_t j = 0; j < sum.v.size(); ++j)
              sum.v[j] = fit16(std::int64_t{b.v[j]} + skip.v[j], "residual add");
            x = dense_activate(sum, lp.post_bn, lp.d, net.act_bits);
            sum_here = std::move(sum);
          }
        },
        net.layers[i]);
    last_sum = std::move(sum_here);
    r.layers.push_back(x);
  }
  r.output = x;
  r.argmax = static_cast<int>(std::max_element(x.v.begin(), x.v.end()) - x.v.begin());
  return r;
}

}  // namespace qnn
