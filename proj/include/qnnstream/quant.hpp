#pragma once

// Quantized arithmetic: packed binary weights, bit-plane popcount dot
// products and batchnorm folded into integer activation thresholds.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "qnnstream/error.hpp"

namespace qnn {

/// Fixed-length bit vector packed into 64-bit words, bit j of the vector is
/// bit (j % 64) of word j / 64. Unused high bits of the last word stay zero.
class BitVec {
 public:
  BitVec() = default;
  explicit BitVec(std::size_t n) : size_(n), words_((n + 63) / 64, 0) {}

  std::size_t size() const { return size_; }
  std::span<const std::uint64_t> words() const { return words_; }

  bool get(std::size_t j) const { return (words_[j >> 6] >> (j & 63)) & 1u; }
  void set(std::size_t j, bool v) {
    const std::uint64_t m = std::uint64_t{1} << (j & 63);
    if (v)
      words_[j >> 6] |= m;
    else
      words_[j >> 6] &= ~m;
  }

  std::size_t popcount() const {
    std::size_t n = 0;
    for (auto w : words_) n += std::popcount(w);
    return n;
  }

  friend bool operator==(const BitVec&, const BitVec&) = default;

 private:
  std::size_t size_ = 0;
  std::vector<std::uint64_t> words_;
};

/// Binary filter weights of one layer, stored the way the weight cache holds
/// them: one entry per output channel, each entry k*k*in_ch bits in
/// (row, column, channel) order with the channel fastest. Bit 1 is +1,
/// bit 0 is -1.
struct WeightBlock {
  int k = 0;
  int in_ch = 0;
  int out_ch = 0;
  std::vector<BitVec> entries;

  std::size_t entry_bits() const {
    return static_cast<std::size_t>(k) * k * in_ch;
  }
  static std::size_t index(int ky, int kx, int c, int k, int in_ch) {
    return (static_cast<std::size_t>(ky) * k + kx) * in_ch + c;
  }
  int weight(int o, int ky, int kx, int c) const {
    return entries[o].get(index(ky, kx, c, k, in_ch)) ? 1 : -1;
  }

  friend bool operator==(const WeightBlock&, const WeightBlock&) = default;
};

/// Sign binarization. `raw` is in cache order: output channel outermost, then
/// filter row, filter column, input channel. Zero maps to +1.
inline WeightBlock binarize_weights(std::span<const float> raw, int k,
                                    int in_ch, int out_ch) {
  if (k <= 0 || in_ch <= 0 || out_ch <= 0)
    throw ShapeError("binarize_weights: non-positive filter dimension");
  const std::size_t per = static_cast<std::size_t>(k) * k * in_ch;
  if (raw.size() != per * out_ch)
    throw ShapeError("binarize_weights: expected " +
                     std::to_string(per * out_ch) + " weights, got " +
                     std::to_string(raw.size()));
  WeightBlock wb{k, in_ch, out_ch, {}};
  wb.entries.reserve(out_ch);
  for (int o = 0; o < out_ch; ++o) {
    BitVec e(per);
    for (std::size_t j = 0; j < per; ++j) e.set(j, raw[o * per + j] >= 0.0f);
    wb.entries.push_back(std::move(e));
  }
  return wb;
}

/// Sum over j of w_j * b_j for w_j in {-1,+1} (packed as 0/1) and b_j in {0,1}:
/// 2 * popcount(w & b) - popcount(b).
inline std::int64_t plane_dot(const BitVec& weights, const BitVec& plane) {
  if (weights.size() != plane.size())
    throw ShapeError("plane_dot: length mismatch");
  const auto w = weights.words();
  const auto b = plane.words();
  std::int64_t both = 0, ones = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    both += std::popcount(w[i] & b[i]);
    ones += std::popcount(b[i]);
  }
  return 2 * both - ones;
}

/// Unsigned n-bit activation codes split into n bit planes, plane b holding
/// bit b of every code.
struct BitPlanes {
  int bits = 0;
  std::vector<BitVec> planes;

  BitPlanes() = default;
  BitPlanes(std::size_t n, int bit_width)
      : bits(bit_width), planes(bit_width, BitVec(n)) {}

  std::size_t size() const { return planes.empty() ? 0 : planes[0].size(); }

  void set_code(std::size_t j, std::uint32_t code) {
    for (int b = 0; b < bits; ++b) planes[b].set(j, (code >> b) & 1u);
  }
};

inline BitPlanes make_planes(std::span<const std::int32_t> codes, int bits) {
  if (bits < 1 || bits > 16)
    throw InvalidQuantizerError("activation bit-width must be in [1, 16]");
  BitPlanes p(codes.size(), bits);
  const std::int64_t limit = std::int64_t{1} << bits;
  for (std::size_t j = 0; j < codes.size(); ++j) {
    if (codes[j] < 0 || codes[j] >= limit)
      throw InvalidQuantizerError("code " + std::to_string(codes[j]) +
                                  " out of range for " + std::to_string(bits) +
                                  "-bit activations");
    p.set_code(j, static_cast<std::uint32_t>(codes[j]));
  }
  return p;
}

/// Shift-add of per-plane popcount dot products.
inline std::int64_t quantized_dot(const BitVec& weights, const BitPlanes& x) {
  if (weights.size() != x.size()) throw ShapeError("quantized_dot: length mismatch");
  std::int64_t acc = 0;
  for (int b = 0; b < x.bits; ++b) acc += plane_dot(weights, x.planes[b]) << b;
  return acc;
}

inline std::int64_t quantized_dot(const BitVec& weights,
                                  std::span<const std::int32_t> codes,
                                  int bits) {
  if (weights.size() != codes.size())
    throw ShapeError("quantized_dot: length mismatch");
  return quantized_dot(weights, make_planes(codes, bits));
}

/// n-bit activation level.
struct ActCode {
  std::uint32_t code = 0;
  int bits = 2;

  friend bool operator==(const ActCode&, const ActCode&) = default;
};

/// Signed accumulator of a given width. Construction checks the range.
struct Accum {
  std::int64_t value = 0;
  int width = 16;

  static Accum checked(std::int64_t v, int width = 16) {
    const std::int64_t hi = (std::int64_t{1} << (width - 1)) - 1;
    const std::int64_t lo = -(std::int64_t{1} << (width - 1));
    if (v < lo || v > hi)
      throw OverflowError("value " + std::to_string(v) + " overflows " +
                          std::to_string(width) + "-bit accumulator");
    return Accum{v, width};
  }
};

inline std::int64_t check_width(std::int64_t v, int width = 16) {
  return Accum::checked(v, width).value;
}

struct BnParams {
  double gamma = 1.0;
  double mu = 0.0;
  double inv_std = 1.0;
  double beta = 0.0;
};

/// gamma * (a - mu) * inv_std + beta
inline double batchnorm(double a, const BnParams& p) {
  return p.gamma * (a - p.mu) * p.inv_std + p.beta;
}

/// clamp(floor(y / d), 0, 2^n - 1); the lowest range starts at 0.
inline ActCode quantize_reference(double y, double d, int bits) {
  if (!(d > 0.0)) throw InvalidQuantizerError("range size d must be positive");
  const double top = static_cast<double>((1u << bits) - 1);
  const double level = std::floor(y / d);
  if (!(level > 0.0)) return ActCode{0, bits};  // also catches NaN
  return ActCode{static_cast<std::uint32_t>(std::min(level, top)), bits};
}

/// Folded batchnorm + n-bit activation for one output channel.
struct ChannelThresholds {
  double tau = 0.0;       // BatchNorm(tau) == 0
  double step = 0.0;      // d / (gamma * inv_std), negative when descending
  bool ascending = true;  // sign of gamma * inv_std
  int bits = 2;
  // Integer thresholds, strictly increasing. Ascending channels map a to the
  // count of thresholds <= a; descending channels to the count >= a.
  std::vector<std::int64_t> thresholds;
};

struct ThresholdSet {
  int bits = 2;
  std::vector<ChannelThresholds> channels;
};

namespace detail {

// Integer accumulators never get near this; it keeps thresholds finite when
// the step is tiny.
inline constexpr std::int64_t kThresholdClamp = std::int64_t{1} << 40;

inline std::int64_t clamp_to_int(double t) {
  const double c = static_cast<double>(kThresholdClamp);
  if (!(t > -c)) return -kThresholdClamp;
  if (!(t < c)) return kThresholdClamp;
  return static_cast<std::int64_t>(t);
}

}  // namespace detail

/// Solves BatchNorm(t) = alpha * d for alpha = 1 .. 2^n - 1 and rounds each
/// endpoint to the integer boundary of the level it starts, so that applying
/// the thresholds to an integer accumulator agrees exactly with
/// floor(BatchNorm(a) / d).
inline ChannelThresholds fold_batchnorm(const BnParams& p, double d, int bits) {
  const double scale = p.gamma * p.inv_std;
  if (!std::isfinite(scale) || scale == 0.0)
    throw DegenerateChannelError("gamma * inv_std must be finite and non-zero");
  if (!(d > 0.0) || !std::isfinite(d))
    throw InvalidQuantizerError("range size d must be positive");
  if (bits < 1 || bits > 8)
    throw InvalidQuantizerError("activation bit-width must be in [1, 8]");

  ChannelThresholds ct;
  ct.bits = bits;
  ct.tau = p.mu - p.beta / scale;
  ct.step = d / scale;
  ct.ascending = scale > 0.0;

  const int levels = (1 << bits) - 1;
  const auto reaches = [&](std::int64_t a, int alpha) {
    return batchnorm(static_cast<double>(a), p) / d >= alpha;
  };
  const std::int64_t lim = detail::kThresholdClamp;
  ct.thresholds.reserve(levels);
  for (int alpha = 1; alpha <= levels; ++alpha) {
    const double t = ct.tau + alpha * ct.step;
    if (ct.ascending) {
      // smallest integer a with level(a) >= alpha
      std::int64_t a = detail::clamp_to_int(std::ceil(t));
      while (a > -lim && reaches(a - 1, alpha)) --a;
      while (a < lim && !reaches(a, alpha)) ++a;
      ct.thresholds.push_back(a);
    } else {
      // largest integer a with level(a) >= alpha
      std::int64_t a = detail::clamp_to_int(std::floor(t));
      while (a < lim && reaches(a + 1, alpha)) ++a;
      while (a > -lim && !reaches(a, alpha)) --a;
      ct.thresholds.push_back(a);
    }
  }
  if (!ct.ascending) std::reverse(ct.thresholds.begin(), ct.thresholds.end());
  return ct;
}

inline ThresholdSet fold_batchnorm(std::span<const BnParams> channels, double d,
                                   int bits) {
  ThresholdSet ts;
  ts.bits = bits;
  ts.channels.reserve(channels.size());
  for (const auto& p : channels) ts.channels.push_back(fold_batchnorm(p, d, bits));
  return ts;
}

/// Binary search for the range holding `a`. A value equal to a threshold
/// belongs to the range that threshold opens.
inline ActCode apply_threshold(std::int64_t a, const ChannelThresholds& ct) {
  const auto& t = ct.thresholds;
  std::size_t code;
  if (ct.ascending)
    code = std::upper_bound(t.begin(), t.end(), a) - t.begin();
  else
    code = t.end() - std::lower_bound(t.begin(), t.end(), a);
  return ActCode{static_cast<std::uint32_t>(code), ct.bits};
}

}  // namespace qnn
