#pragma once

// Parameter blobs: layout, census, loading (binarize + fold) and a seeded
// generator for synthetic parameters.
//
// Blob layout, all little-endian:
//   "QNNP" | u32 version (1) | u32 layer count L | f32 d[L] | payload
// L counts every layer after the input; d is 0 for layers that do not
// quantize. Payload, per layer in network order, only the parts it has:
//   weights   (cache order: output channel outer, then row, column, channel)
//   gamma[O] mu[O] inv_std[O] beta[O]        (layers that apply batchnorm)
// A residual block stores: first conv weights, first conv batchnorm,
// second conv weights, projection weights (if any), then the batchnorm
// applied after the skip addition.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "qnnstream/error.hpp"
#include "qnnstream/netdesc.hpp"
#include "qnnstream/quant.hpp"

namespace qnn {

inline constexpr std::array<char, 4> kParamMagic = {'Q', 'N', 'N', 'P'};
inline constexpr std::uint32_t kParamVersion = 1;

/// Float counts one layer contributes to the blob.
struct LayerCensus {
  std::size_t weights = 0;    // main (or first residual) convolution
  std::size_t bn = 0;         // 4 * O when batchnorm follows it
  std::size_t weights_b = 0;  // second residual convolution
  std::size_t proj = 0;       // projection shortcut
  std::size_t post_bn = 0;    // batchnorm after the skip addition
  int k = 0, in_ch = 0, out_ch = 0;

  std::size_t total() const { return weights + bn + weights_b + proj + post_bn; }
};

inline std::vector<LayerCensus> param_census(const NetworkSpec& net) {
  std::vector<LayerCensus> out;
  for (std::size_t i = 1; i < net.layers.size(); ++i) {
    const Shape prev = net.shapes[i - 1];
    LayerCensus c;
    std::visit(
        [&](const auto& l) {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, ConvLayer>) {
            c.k = l.k;
            c.in_ch = prev.c;
            c.out_ch = l.o;
            c.weights = static_cast<std::size_t>(l.k) * l.k * prev.c * l.o;
            c.bn = l.fused() ? 4 * static_cast<std::size_t>(l.o) : 0;
          } else if constexpr (std::is_same_v<T, FcLayer>) {
            c.k = 1;
            c.in_ch = static_cast<int>(prev.elements());
            c.out_ch = l.o;
            c.weights = prev.elements() * l.o;
            c.bn = l.fused() ? 4 * static_cast<std::size_t>(l.o) : 0;
          } else if constexpr (std::is_same_v<T, ResidualLayer>) {
            c.k = 3;
            c.in_ch = prev.c;
            c.out_ch = l.o;
            c.weights = 9 * static_cast<std::size_t>(prev.c) * l.o;
            c.bn = 4 * static_cast<std::size_t>(l.o);
            c.weights_b = 9 * static_cast<std::size_t>(l.o) * l.o;
            c.proj = l.proj ? static_cast<std::size_t>(prev.c) * l.o : 0;
            c.post_bn = 4 * static_cast<std::size_t>(l.o);
          }
        },
        net.layers[i]);
    out.push_back(c);
  }
  return out;
}

/// Unprocessed per-layer floats, one entry per layer after the input.
struct RawLayer {
  float d = 0.0f;
  std::vector<float> weights, bn, weights_b, proj, post_bn;
};

struct RawParams {
  std::vector<RawLayer> layers;
};

/// Loaded, hardware-ready parameters of one layer. Batchnorm values are
/// kept next to their folded thresholds so a reference model can use them.
struct LayerParams {
  double d = 0.0;
  std::optional<WeightBlock> weights;
  std::vector<BnParams> bn;
  std::optional<ThresholdSet> thresholds;
  std::optional<WeightBlock> weights_b;
  std::optional<WeightBlock> proj;
  std::vector<BnParams> post_bn;
  std::optional<ThresholdSet> post;
};

/// Indexed like NetworkSpec::layers; entry 0 (the input) is empty.
struct NetworkParams {
  std::vector<LayerParams> layers;
};

namespace detail {

inline std::vector<BnParams> unpack_bn(std::span<const float> v, int o) {
  std::vector<BnParams> bn(o);
  for (int c = 0; c < o; ++c)
    bn[c] = BnParams{v[c], v[o + c], v[2 * o + c], v[3 * o + c]};
  return bn;
}

inline void check_finite(std::span<const float> v, const std::string& what) {
  for (std::size_t j = 0; j < v.size(); ++j)
    if (!std::isfinite(v[j]))
      throw ParamError(what + ": non-finite value at " + std::to_string(j));
}

inline void check_len(std::span<const float> v, std::size_t want, const std::string& what) {
  if (v.size() != want)
    throw ParamError(what + ": expected " + std::to_string(want) + " floats, got " +
                     std::to_string(v.size()));
}

}  // namespace detail

/// Binarizes weights and folds batchnorm for every layer.
inline NetworkParams make_params(const NetworkSpec& net, const RawParams& raw) {
  const auto census = param_census(net);
  if (raw.layers.size() != census.size())
    throw ParamError("expected parameters for " + std::to_string(census.size()) +
                     " layers, got " + std::to_string(raw.layers.size()));
  NetworkParams out;
  out.layers.resize(net.layers.size());
  for (std::size_t i = 0; i < census.size(); ++i) {
    const auto& c = census[i];
    const auto& r = raw.layers[i];
    const auto& spec = net.layers[i + 1];
    const std::string where = "layer " + std::to_string(i + 1);
    auto& lp = out.layers[i + 1];
    detail::check_len(r.weights, c.weights, where + " weights");
    detail::check_len(r.bn, c.bn, where + " batchnorm");
    detail::check_len(r.weights_b, c.weights_b, where + " second weights");
    detail::check_len(r.proj, c.proj, where + " projection weights");
    detail::check_len(r.post_bn, c.post_bn, where + " post-add batchnorm");
    for (const auto* v : {&r.weights, &r.bn, &r.weights_b, &r.proj, &r.post_bn})
      detail::check_finite(*v, where);
    if (c.weights == 0) continue;

    lp.d = r.d;
    if (is_quantizing(spec)) {
      if (!(r.d > 0.0f)) throw ParamError(where + ": d must be positive");
      if (static_cast<float>(layer_d(spec)) != r.d)
        throw ParamError(where + ": d in parameters (" + std::to_string(r.d) +
                         ") differs from network description (" +
                         std::to_string(layer_d(spec)) + ")");
    }
    const int bits = std::holds_alternative<ResidualLayer>(spec)
                         ? net.act_bits
                         : net.types[i + 1].bits;
    try {
      lp.weights = binarize_weights(r.weights, c.k, c.in_ch, c.out_ch);
      if (c.bn) {
        lp.bn = detail::unpack_bn(r.bn, c.out_ch);
        lp.thresholds = fold_batchnorm(lp.bn, lp.d, bits);
      }
      if (c.weights_b) lp.weights_b = binarize_weights(r.weights_b, 3, c.out_ch, c.out_ch);
      if (c.proj) lp.proj = binarize_weights(r.proj, 1, c.in_ch, c.out_ch);
      if (c.post_bn) {
        lp.post_bn = detail::unpack_bn(r.post_bn, c.out_ch);
        lp.post = fold_batchnorm(lp.post_bn, lp.d, bits);
      }
    } catch (const DegenerateChannelError& e) {
      throw DegenerateChannelError(where + ": " + e.what());
    }
  }
  return out;
}

namespace detail {

class ByteWriter {
 public:
  std::vector<std::uint8_t> bytes;
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float f) { u32(std::bit_cast<std::uint32_t>(f)); }
  void floats(std::span<const float> v) {
    for (float f : v) f32(f);
  }
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> b) : b_(b) {}
  std::size_t remaining() const { return b_.size() - at_; }
  std::uint32_t u32() {
    if (remaining() < 4) throw ParamError("parameter blob truncated at byte " + std::to_string(at_));
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{b_[at_ + i]} << (8 * i);
    at_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::vector<float> floats(std::size_t n) {
    if (remaining() < 4 * n)
      throw ParamError("parameter blob length mismatch: need " + std::to_string(4 * n) +
                       " more bytes at offset " + std::to_string(at_) + ", have " +
                       std::to_string(remaining()));
    std::vector<float> v(n);
    for (auto& f : v) f = f32();
    return v;
  }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t at_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> write_params_blob(const RawParams& raw) {
  detail::ByteWriter w;
  for (char ch : kParamMagic) w.bytes.push_back(static_cast<std::uint8_t>(ch));
  w.u32(kParamVersion);
  w.u32(static_cast<std::uint32_t>(raw.layers.size()));
  for (const auto& l : raw.layers) w.f32(l.d);
  for (const auto& l : raw.layers) {
    w.floats(l.weights);
    w.floats(l.bn);
    w.floats(l.weights_b);
    w.floats(l.proj);
    w.floats(l.post_bn);
  }
  return w.bytes;
}

/// Splits a blob into per-layer floats according to the network's census.
inline RawParams read_params_blob(std::span<const std::uint8_t> blob, const NetworkSpec& net) {
  if (blob.size() < 12 || std::memcmp(blob.data(), kParamMagic.data(), 4) != 0)
    throw ParamError("not a parameter blob (bad magic)");
  detail::ByteReader r(blob.subspan(4));
  if (const auto v = r.u32(); v != kParamVersion)
    throw ParamError("unsupported parameter blob version " + std::to_string(v));
  const auto census = param_census(net);
  const auto count = r.u32();
  if (count != census.size())
    throw ParamError("blob has " + std::to_string(count) + " layers, network has " +
                     std::to_string(census.size()));
  RawParams raw;
  raw.layers.resize(count);
  for (auto& l : raw.layers) l.d = r.f32();
  for (std::size_t i = 0; i < count; ++i) {
    auto& l = raw.layers[i];
    const auto& c = census[i];
    l.weights = r.floats(c.weights);
    l.bn = r.floats(c.bn);
    l.weights_b = r.floats(c.weights_b);
    l.proj = r.floats(c.proj);
    l.post_bn = r.floats(c.post_bn);
  }
  if (r.remaining() != 0)
    throw ParamError("parameter blob length mismatch: " + std::to_string(r.remaining()) +
                     " trailing bytes");
  return raw;
}

inline NetworkParams load_params(std::span<const std::uint8_t> blob, const NetworkSpec& net) {
  return make_params(net, read_params_blob(blob, net));
}

/// Seeded synthetic parameters. Weights are uniform in [-1, 1]; batchnorm
/// statistics are scaled to the expected accumulator spread so activation
/// codes come out spread over all levels, with roughly one channel in five
/// getting a negative scale.
inline RawParams random_raw_params(const NetworkSpec& net, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> uni(-1.0f, 1.0f);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const auto census = param_census(net);

  auto weights = [&](std::size_t n) {
    std::vector<float> v(n);
    for (auto& x : v) x = uni(rng);
    return v;
  };
  auto code_rms = [](int bits) {
    const double top = (1 << bits) - 1;
    return std::sqrt(top * (2 * top + 1) / 6.0);
  };
  auto bn = [&](int o, double spread, double d, int bits) {
    std::vector<float> g(o), mu(o), inv(o), b(o);
    const double levels = 1 << bits;
    for (int c = 0; c < o; ++c) {
      const double sign = u01(rng) < 0.2 ? -1.0 : 1.0;
      g[c] = static_cast<float>(sign * (0.5 + u01(rng)) * levels * d / 4.0);
      mu[c] = static_cast<float>((u01(rng) - 0.5) * spread);
      inv[c] = static_cast<float>(1.0 / std::max(spread, 1e-3));
      b[c] = static_cast<float>((0.3 + 0.4 * u01(rng)) * levels * d);
    }
    std::vector<float> all;
    for (const auto* v : {&g, &mu, &inv, &b}) all.insert(all.end(), v->begin(), v->end());
    return all;
  };

  RawParams raw;
  for (std::size_t i = 0; i < census.size(); ++i) {
    const auto& c = census[i];
    const auto& spec = net.layers[i + 1];
    const StreamType in_t = net.types[i];
    RawLayer l;
    l.d = static_cast<float>(layer_d(spec));
    const double d = l.d > 0 ? l.d : 1.0;
    const int out_bits = std::holds_alternative<ResidualLayer>(spec) ? net.act_bits
                                                                     : std::max(1, net.types[i + 1].bits);
    const double fan_in = static_cast<double>(c.k) * c.k * c.in_ch;
    const double spread = std::sqrt(fan_in) * code_rms(in_t.bits);
    l.weights = weights(c.weights);
    if (c.bn) l.bn = bn(c.out_ch, spread, d, out_bits);
    l.weights_b = weights(c.weights_b);
    l.proj = weights(c.proj);
    if (c.post_bn) {
      const double sb = std::sqrt(9.0 * c.out_ch) * code_rms(net.act_bits);
      l.post_bn = bn(c.out_ch, 1.5 * sb, d, out_bits);
    }
    raw.layers.push_back(std::move(l));
  }
  return raw;
}

}  // namespace qnn
