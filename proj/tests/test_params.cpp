#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "support.hpp"

using namespace qnn;
using namespace qnn::testing;

namespace {

const char* kOneConv = "input 3 3 1 8\nconv k=3 s=1 p=0 o=1 d=1\n";

RawParams one_conv_raw(float w = 0.5f) {
  RawParams raw;
  raw.layers.push_back(RawLayer{1.0f, std::vector<float>(9, w), {1.0f, 0.0f, 1.0f, 0.0f}, {}, {}, {}});
  return raw;
}

}  // namespace

TEST(Params, CensusSingleConv) {
  const auto net = parse_netdesc(kOneConv);
  const auto c = param_census(net);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c[0].weights, 9u);
  EXPECT_EQ(c[0].bn, 4u);
  EXPECT_EQ(c[0].total(), 13u);
}

TEST(Params, CensusResidualAndFc) {
  const auto net = parse_netdesc(
      "input 8 8 3 8\nconv k=3 s=1 p=1 o=4 d=1\nresblock o=6 s=2 d=1 proj\n"
      "maxpool k=2 s=2\nfc o=5 act=none\n");
  const auto c = param_census(net);
  ASSERT_EQ(c.size(), 4u);
  EXPECT_EQ(c[1].weights, 9u * 4 * 6);
  EXPECT_EQ(c[1].bn, 24u);
  EXPECT_EQ(c[1].weights_b, 9u * 6 * 6);
  EXPECT_EQ(c[1].proj, 4u * 6);
  EXPECT_EQ(c[1].post_bn, 24u);
  EXPECT_EQ(c[2].total(), 0u);
  EXPECT_EQ(c[3].weights, 2u * 2 * 6 * 5);
  EXPECT_EQ(c[3].bn, 0u);
  EXPECT_EQ(c[3].in_ch, 24);
}

TEST(Params, NonNegativeWeightsBinarizeToPlusOne) {
  const auto net = parse_netdesc(kOneConv);
  auto raw = one_conv_raw(0.0f);
  raw.layers[0].weights[4] = 3.0f;
  const auto p = make_params(net, raw);
  ASSERT_TRUE(p.layers[1].weights);
  EXPECT_EQ(p.layers[1].weights->entries[0].popcount(), 9u);
  raw.layers[0].weights[4] = -1e-6f;
  EXPECT_EQ(make_params(net, raw).layers[1].weights->weight(0, 1, 1, 0), -1);
}

TEST(Params, RejectsBadValues) {
  const auto net = parse_netdesc(kOneConv);
  auto raw = one_conv_raw();
  raw.layers[0].weights[3] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(make_params(net, raw), ParamError);
  raw = one_conv_raw();
  raw.layers[0].bn[2] = std::numeric_limits<float>::infinity();
  EXPECT_THROW(make_params(net, raw), ParamError);
  raw = one_conv_raw();
  raw.layers[0].bn[0] = 0.0f;  // gamma
  EXPECT_THROW(make_params(net, raw), DegenerateChannelError);
  raw = one_conv_raw();
  raw.layers[0].bn[2] = 0.0f;  // inv_std
  EXPECT_THROW(make_params(net, raw), DegenerateChannelError);
  raw = one_conv_raw();
  raw.layers[0].d = 2.0f;
  EXPECT_THROW(make_params(net, raw), ParamError);
  raw = one_conv_raw();
  raw.layers[0].d = 0.0f;
  EXPECT_THROW(make_params(net, raw), ParamError);
  raw = one_conv_raw();
  raw.layers[0].weights.pop_back();
  EXPECT_THROW(make_params(net, raw), ParamError);
  raw = one_conv_raw();
  raw.layers.push_back(raw.layers[0]);
  EXPECT_THROW(make_params(net, raw), ParamError);
}

TEST(Params, DegenerateErrorNamesTheLayer) {
  const auto net = parse_netdesc(kOneConv);
  auto raw = one_conv_raw();
  raw.layers[0].bn[0] = 0.0f;
  try {
    make_params(net, raw);
    FAIL();
  } catch (const DegenerateChannelError& e) {
    EXPECT_NE(std::string(e.what()).find("layer 1"), std::string::npos);
  }
}

TEST(Params, BlobRoundTrip) {
  std::mt19937_64 rng(77);
  for (int i = 0; i < 30; ++i) {
    const auto net = random_network(rng);
    const auto raw = random_raw_params(net, 100 + i);
    const auto blob = write_params_blob(raw);
    const auto back = read_params_blob(blob, net);
    ASSERT_EQ(back.layers.size(), raw.layers.size());
    for (std::size_t l = 0; l < raw.layers.size(); ++l) {
      EXPECT_EQ(back.layers[l].d, raw.layers[l].d);
      EXPECT_EQ(back.layers[l].weights, raw.layers[l].weights);
      EXPECT_EQ(back.layers[l].bn, raw.layers[l].bn);
      EXPECT_EQ(back.layers[l].weights_b, raw.layers[l].weights_b);
      EXPECT_EQ(back.layers[l].proj, raw.layers[l].proj);
      EXPECT_EQ(back.layers[l].post_bn, raw.layers[l].post_bn);
    }
    EXPECT_EQ(write_params_blob(back), blob);
    EXPECT_NO_THROW(load_params(blob, net));
  }
}

TEST(Params, BlobLayout) {
  const auto net = parse_netdesc(kOneConv);
  const auto blob = write_params_blob(one_conv_raw());
  // magic, version, count, one d, 13 floats
  EXPECT_EQ(blob.size(), 4u + 4 + 4 + 4 + 13 * 4);
  EXPECT_EQ(std::string(blob.begin(), blob.begin() + 4), "QNNP");
}

TEST(Params, BlobRejectsMalformed) {
  const auto net = parse_netdesc(kOneConv);
  const auto good = write_params_blob(one_conv_raw());
  auto bad = good;
  bad[0] = 'X';
  EXPECT_THROW(read_params_blob(bad, net), ParamError);
  bad = good;
  bad[4] = 2;
  EXPECT_THROW(read_params_blob(bad, net), ParamError);
  bad = good;
  bad[8] = 2;
  EXPECT_THROW(read_params_blob(bad, net), ParamError);
  bad = good;
  bad.pop_back();
  EXPECT_THROW(read_params_blob(bad, net), ParamError);
  bad = good;
  bad.push_back(0);
  EXPECT_THROW(read_params_blob(bad, net), ParamError);
  EXPECT_THROW(read_params_blob(std::vector<std::uint8_t>{}, net), ParamError);
  const auto other = parse_netdesc("input 3 3 1 8\nconv k=3 s=1 p=0 o=2 d=1\n");
  EXPECT_THROW(read_params_blob(good, other), ParamError);
}

TEST(Params, RandomParamsAreUsable) {
  for (const auto& net : {build_vgg_like(), build_resnet18(32, 10), build_alexnet(67, 10)}) {
    const auto p = make_params(net, random_raw_params(net, 1));
    EXPECT_EQ(p.layers.size(), net.layers.size());
    EXPECT_FALSE(p.layers[0].weights);
  }
  const auto net = build_vgg_like();
  EXPECT_EQ(random_raw_params(net, 5).layers[0].weights,
            random_raw_params(net, 5).layers[0].weights);
  EXPECT_NE(random_raw_params(net, 5).layers[0].weights,
            random_raw_params(net, 6).layers[0].weights);
}
