#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "qnnstream/qnnstream.hpp"

namespace qnn::testing {

inline int pick(std::mt19937_64& rng, std::initializer_list<int> v) {
  std::uniform_int_distribution<std::size_t> d(0, v.size() - 1);
  return *(v.begin() + d(rng));
}

inline int uniform(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

struct RandomNetOptions {
  int max_depth = 8;
  int max_hw = 16;
  int max_channels = 8;
  bool residual = true;
};

/// Random valid network: 1 to max_depth layers after the input, mixing
/// convolutions (K in {1,3,5,7,11}, S in {1,2,4}, P in {0,1,3}), pooling,
/// residual blocks and a trailing fully connected layer.
inline NetworkSpec random_network(std::mt19937_64& rng, const RandomNetOptions& o = {}) {
  NetworkSpec net;
  net.name = "random";
  net.act_bits = uniform(rng, 1, 3);
  InputLayer in;
  in.h = uniform(rng, 1, o.max_hw);
  in.w = uniform(rng, 1, o.max_hw);
  in.c = uniform(rng, 1, o.max_channels);
  in.bits = uniform(rng, 0, 3) == 0 ? uniform(rng, 1, 7) : 8;
  net.layers.push_back(in);
  int h = in.h, w = in.w, c = in.c, bits = in.bits;
  const int depth = uniform(rng, 1, o.max_depth);
  const double ds[] = {0.5, 1.0, 2.0, 3.0};

  for (int i = 0; i < depth; ++i) {
    const bool last = i + 1 == depth;
    const int roll = uniform(rng, 0, 99);
    if (roll < 40 || (roll >= 80 && !last)) {
      ConvLayer l;
      l.p = pick(rng, {0, 1, 3});
      std::vector<int> ks;
      for (int k : {1, 3, 5, 7, 11})
        if (k <= h + 2 * l.p && k <= w + 2 * l.p) ks.push_back(k);
      l.k = ks[uniform(rng, 0, static_cast<int>(ks.size()) - 1)];
      l.s = pick(rng, {1, 2, 4});
      l.o = uniform(rng, 1, o.max_channels);
      l.d = ds[uniform(rng, 0, 3)];
      const long bound = static_cast<long>(l.k) * l.k * c * ((1 << bits) - 1);
      const bool unfused = last && bound <= 32767 && uniform(rng, 0, 1) == 0;
      l.act_bits = unfused ? 0 : (uniform(rng, 0, 2) == 0 ? uniform(rng, 1, 3) : net.act_bits);
      if (unfused) l.d = 0.0;
      net.layers.push_back(l);
      h = window_out(h, l.k, l.s, l.p);
      w = window_out(w, l.k, l.s, l.p);
      c = l.o;
      bits = l.act_bits;
    } else if (roll < 55) {
      PoolLayer l;
      l.max = uniform(rng, 0, 2) != 0;
      l.k = pick(rng, {1, 2, 3});
      l.s = pick(rng, {1, 2});
      l.p = l.max && l.k > 1 ? uniform(rng, 0, 1) : 0;
      if (l.k > h + 2 * l.p || l.k > w + 2 * l.p) {
        l.k = 1;
        l.p = 0;
      }
      net.layers.push_back(l);
      h = window_out(h, l.k, l.s, l.p);
      w = window_out(w, l.k, l.s, l.p);
    } else if (roll < 80 && o.residual) {
      ResidualLayer l;
      l.s = uniform(rng, 0, 2) == 0 ? 2 : 1;
      l.o = uniform(rng, 0, 1) ? c : uniform(rng, 1, o.max_channels);
      l.proj = l.s != 1 || l.o != c || uniform(rng, 0, 3) == 0;
      l.d = ds[uniform(rng, 0, 3)];
      net.layers.push_back(l);
      h = window_out(h, 3, l.s, 1);
      w = window_out(w, 3, l.s, 1);
      c = l.o;
      bits = net.act_bits;
    } else {
      FcLayer l;
      l.o = uniform(rng, 1, o.max_channels);
      l.d = ds[uniform(rng, 0, 3)];
      const long bound = static_cast<long>(h) * w * c * ((1 << bits) - 1);
      const bool unfused = last && bound <= 32767 && uniform(rng, 0, 1) == 0;
      l.act_bits = unfused ? 0 : net.act_bits;
      if (unfused) l.d = 0.0;
      net.layers.push_back(l);
      h = w = 1;
      c = l.o;
      bits = l.act_bits;
    }
  }
  validate(net);
  return net;
}

inline PixelStream random_image(std::mt19937_64& rng, const NetworkSpec& net) {
  const auto t = net.types.front();
  std::vector<std::int32_t> v(net.input_shape().elements());
  for (auto& x : v) x = uniform(rng, 0, (1 << t.bits) - 1);
  return PixelStream(net.input_shape(), t, std::move(v));
}

inline DenseTensor to_dense(const PixelStream& s) {
  return DenseTensor(s.shape.h, s.shape.w, s.shape.c, s.data);
}

inline WeightBlock random_weights(std::mt19937_64& rng, int k, int in_ch, int out_ch) {
  std::vector<float> raw(static_cast<std::size_t>(k) * k * in_ch * out_ch);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  for (auto& x : raw) x = u(rng);
  return binarize_weights(raw, k, in_ch, out_ch);
}

inline PixelStream random_codes(std::mt19937_64& rng, Shape s, int bits) {
  std::vector<std::int32_t> v(s.elements());
  for (auto& x : v) x = uniform(rng, 0, (1 << bits) - 1);
  return PixelStream(s, {ElementKind::Code, bits}, std::move(v));
}

}  // namespace qnn::testing
