#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "qnnstream/quant.hpp"

using namespace qnn;

namespace {

std::int64_t scalar_dot(const BitVec& w, const std::vector<std::int32_t>& x) {
  std::int64_t s = 0;
  for (std::size_t j = 0; j < x.size(); ++j) s += (w.get(j) ? 1 : -1) * x[j];
  return s;
}

}  // namespace

TEST(BitVec, SetGetPopcount) {
  BitVec v(130);
  v.set(0, true);
  v.set(64, true);
  v.set(129, true);
  EXPECT_TRUE(v.get(129));
  EXPECT_FALSE(v.get(128));
  EXPECT_EQ(v.popcount(), 3u);
  v.set(64, false);
  EXPECT_EQ(v.popcount(), 2u);
}

TEST(PlaneDot, BinaryPlane) {
  // w = +1 -1 +1 +1, b = 1 1 0 1 -> 1 - 1 + 0 + 1 = 1
  BitVec w(4), b(4);
  for (int j : {0, 2, 3}) w.set(j, true);
  for (int j : {0, 1, 3}) b.set(j, true);
  EXPECT_EQ(plane_dot(w, b), 1);
}

TEST(PlaneDot, LengthMismatchThrows) {
  EXPECT_THROW(plane_dot(BitVec(3), BitVec(4)), ShapeError);
}

TEST(QuantizedDot, TwoBitExample) {
  // codes {1, 2, 3}, weights {+1, -1, +1} -> 1 - 2 + 3 = 2
  BitVec w(3);
  w.set(0, true);
  w.set(2, true);
  const std::vector<std::int32_t> codes{1, 2, 3};
  EXPECT_EQ(quantized_dot(w, codes, 2), 2);
}

TEST(QuantizedDot, EightBitFirstLayer) {
  BitVec w(1);
  const std::vector<std::int32_t> px{255};
  EXPECT_EQ(quantized_dot(w, px, 8), -255);
  w.set(0, true);
  EXPECT_EQ(quantized_dot(w, px, 8), 255);
}

TEST(QuantizedDot, RejectsOutOfRangeCode) {
  const std::vector<std::int32_t> codes{4};
  EXPECT_THROW(quantized_dot(BitVec(1), codes, 2), InvalidQuantizerError);
}

TEST(QuantizedDot, RandomLongVectors) {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 1 + rng() % 4704;
    const int bits = 1 + static_cast<int>(rng() % 4);
    BitVec w(n);
    std::vector<std::int32_t> x(n);
    for (std::size_t j = 0; j < n; ++j) {
      w.set(j, rng() & 1);
      x[j] = static_cast<std::int32_t>(rng() % (1u << bits));
    }
    EXPECT_EQ(quantized_dot(w, x, bits), scalar_dot(w, x));
  }
}

TEST(Binarize, SignWithZeroPositive) {
  const std::vector<float> raw{0.5f, -0.1f, 0.0f, -0.0f};
  const auto wb = binarize_weights(raw, 1, 2, 2);
  EXPECT_EQ(wb.weight(0, 0, 0, 0), 1);
  EXPECT_EQ(wb.weight(0, 0, 0, 1), -1);
  EXPECT_EQ(wb.weight(1, 0, 0, 0), 1);
  EXPECT_EQ(wb.weight(1, 0, 0, 1), 1);
}

TEST(Binarize, CacheOrderChannelFastest) {
  // K=2, I=2, O=1: index = (ky*2 + kx)*2 + c
  std::vector<float> raw(8, -1.0f);
  raw[WeightBlock::index(1, 0, 1, 2, 2)] = 1.0f;
  const auto wb = binarize_weights(raw, 2, 2, 1);
  EXPECT_EQ(wb.weight(0, 1, 0, 1), 1);
  EXPECT_EQ(wb.entries[0].popcount(), 1u);
  EXPECT_THROW(binarize_weights(raw, 2, 2, 2), ShapeError);
}

TEST(Accum, CheckedRange) {
  EXPECT_EQ(Accum::checked(32767).value, 32767);
  EXPECT_EQ(Accum::checked(-32768).value, -32768);
  EXPECT_THROW(Accum::checked(32768), OverflowError);
  EXPECT_THROW(check_width(-32769), OverflowError);
}

TEST(QuantizeReference, ClampsAndFloors) {
  EXPECT_EQ(quantize_reference(-0.5, 1.0, 2).code, 0u);
  EXPECT_EQ(quantize_reference(0.0, 1.0, 2).code, 0u);
  EXPECT_EQ(quantize_reference(1.0, 1.0, 2).code, 1u);
  EXPECT_EQ(quantize_reference(2.99, 1.0, 2).code, 2u);
  EXPECT_EQ(quantize_reference(100.0, 1.0, 2).code, 3u);
  EXPECT_EQ(quantize_reference(5.0, 2.0, 3).code, 2u);
  EXPECT_THROW(quantize_reference(1.0, 0.0, 2), InvalidQuantizerError);
}

TEST(FoldBatchnorm, IdentityThresholds) {
  // gamma = i = 1, mu = beta = 0, d = 1: thresholds at 1, 2, 3
  const auto ct = fold_batchnorm(BnParams{1.0, 0.0, 1.0, 0.0}, 1.0, 2);
  EXPECT_TRUE(ct.ascending);
  EXPECT_DOUBLE_EQ(ct.tau, 0.0);
  EXPECT_DOUBLE_EQ(ct.step, 1.0);
  EXPECT_EQ(ct.thresholds, (std::vector<std::int64_t>{1, 2, 3}));
  EXPECT_EQ(apply_threshold(0, ct).code, 0u);
  EXPECT_EQ(apply_threshold(1, ct).code, 1u);
  EXPECT_EQ(apply_threshold(7, ct).code, 3u);
}

TEST(FoldBatchnorm, NegativeScaleDescends) {
  const BnParams p{-2.0, 3.0, 0.5, 1.5};
  const auto ct = fold_batchnorm(p, 0.5, 2);
  EXPECT_FALSE(ct.ascending);
  EXPECT_LT(ct.step, 0.0);
  EXPECT_TRUE(std::is_sorted(ct.thresholds.begin(), ct.thresholds.end()));
  for (std::int64_t a = -20; a <= 20; ++a)
    EXPECT_EQ(apply_threshold(a, ct).code, quantize_reference(batchnorm(a, p), 0.5, 2).code)
        << "a=" << a;
}

TEST(FoldBatchnorm, BoundaryOnIntegerThreshold) {
  // BatchNorm(a)/d hits exactly 1.0 at a = 4
  const BnParams p{1.0, 4.0, 1.0, 2.0};
  const auto ct = fold_batchnorm(p, 2.0, 1);
  EXPECT_EQ(apply_threshold(3, ct).code, 0u);
  EXPECT_EQ(apply_threshold(4, ct).code, 1u);
}

TEST(FoldBatchnorm, Errors) {
  EXPECT_THROW(fold_batchnorm(BnParams{0.0, 0.0, 1.0, 0.0}, 1.0, 2), DegenerateChannelError);
  EXPECT_THROW(fold_batchnorm(BnParams{1.0, 0.0, 0.0, 0.0}, 1.0, 2), DegenerateChannelError);
  EXPECT_THROW(fold_batchnorm(BnParams{1.0, 0.0, 1.0, 0.0}, 0.0, 2), InvalidQuantizerError);
  EXPECT_THROW(fold_batchnorm(BnParams{1.0, 0.0, 1.0, 0.0}, 1.0, 0), InvalidQuantizerError);
}

TEST(FoldBatchnorm, TinyStepClampsThresholds) {
  const BnParams p{1e-12, 0.0, 1e-12, 0.5};
  const auto ct = fold_batchnorm(p, 1.0, 2);
  for (auto t : ct.thresholds) EXPECT_LE(std::abs(t), std::int64_t{1} << 40);
  EXPECT_EQ(apply_threshold(0, ct).code, 0u);
}
