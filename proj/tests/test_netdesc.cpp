#include <gtest/gtest.h>

#include <random>

#include "support.hpp"

using namespace qnn;
using namespace qnn::testing;

namespace {

std::size_t parse_error_line(const std::string& text) {
  try {
    parse_netdesc(text);
  } catch (const ParseError& e) {
    return e.line;
  }
  ADD_FAILURE() << "no ParseError for:\n" << text;
  return 0;
}

}  // namespace

TEST(Netdesc, ParsesSingleConv) {
  const auto net = parse_netdesc("input 32 32 3 8\nconv k=3 s=1 p=1 o=64 d=4\n");
  ASSERT_EQ(net.layers.size(), 2u);
  const auto& c = std::get<ConvLayer>(net.layers[1]);
  EXPECT_EQ(c.k, 3);
  EXPECT_EQ(c.s, 1);
  EXPECT_EQ(c.p, 1);
  EXPECT_EQ(c.o, 64);
  EXPECT_DOUBLE_EQ(c.d, 4.0);
  EXPECT_EQ(c.act_bits, 2);
  EXPECT_EQ(net.output_shape(), (Shape{32, 32, 64}));
  EXPECT_EQ(net.types.back(), (StreamType{ElementKind::Code, 2}));
}

TEST(Netdesc, CommentsAndBlankLines) {
  const auto net = parse_netdesc(
      "# tiny\n\ninput 8 8 1 8   # gray\n  maxpool k=2 s=2\n\nfc o=3 act=none\n");
  EXPECT_EQ(net.layers.size(), 3u);
  EXPECT_EQ(net.output_shape(), (Shape{1, 1, 3}));
  EXPECT_EQ(net.types.back().kind, ElementKind::Accum);
}

TEST(Netdesc, ErrorsReportTheLine) {
  EXPECT_EQ(parse_error_line("input 8 8 3 8\nconv k=3 s=x p=1 o=4 d=1\n"), 2u);
  EXPECT_EQ(parse_error_line("input 8 8 3 8\n\nconv k=3 s=0 o=4 d=1\n"), 3u);
  EXPECT_EQ(parse_error_line("input 8 8 3 8\nfoo k=3\n"), 2u);
  EXPECT_EQ(parse_error_line("input 8 8 3 8\nconv k=3 s=1 o=4\n"), 2u);
  EXPECT_EQ(parse_error_line("input 8 8 3 8\nconv k=3 s=1 o=4 d=1 q=2\n"), 2u);
  EXPECT_EQ(parse_error_line("input 8 8 3 8\nconv k=3 s=1 s=2 o=4 d=1\n"), 2u);
  EXPECT_EQ(parse_error_line("input 8 8 3\n"), 1u);
  EXPECT_EQ(parse_error_line("input 8 8 3 8\nresblock o=4 d=1 fast\n"), 2u);
  EXPECT_EQ(parse_error_line("input 8 8 3 8\nconv k=3 s=1 o=4 d=1 act=9\n"), 2u);
}

TEST(Netdesc, ShapeErrorsMapToTheLine) {
  // 4x4 input cannot take an unpadded 5x5 window.
  EXPECT_EQ(parse_error_line("input 4 4 1 8\nconv k=3 s=1 o=2 d=1\nconv k=5 s=1 o=2 d=1\n"), 3u);
  // Identity block cannot change the channel count.
  EXPECT_EQ(parse_error_line("input 8 8 3 8\n# note\nresblock o=4 d=1\n"), 3u);
  // Accumulators cannot feed a convolution.
  EXPECT_EQ(parse_error_line("input 8 8 3 8\nconv k=1 s=1 o=4 act=none\nconv k=1 s=1 o=4 d=1\n"),
            3u);
  EXPECT_EQ(parse_error_line("input 8 8 3 8\nconv k=1 s=1 o=4 d=0\n"), 2u);
  EXPECT_EQ(parse_error_line("input 8 8 3 8\nconv k=1 s=1 o=4 d=-1\n"), 2u);
  EXPECT_EQ(parse_error_line("conv k=1 s=1 o=4 d=1\n"), 1u);
  EXPECT_THROW(parse_netdesc(""), ParseError);
}

TEST(Netdesc, ValidateRejectsBadSpecs) {
  NetworkSpec net;
  EXPECT_THROW(validate(net), ShapeError);
  net.layers.push_back(InputLayer{8, 8, 3, 9});
  EXPECT_THROW(validate(net), ShapeError);
  net.layers[0] = InputLayer{8, 8, 3, 8};
  net.layers.push_back(InputLayer{8, 8, 3, 8});
  EXPECT_THROW(validate(net), ShapeError);
  net.layers.pop_back();
  net.layers.push_back(PoolLayer{false, 2, 2, 1});
  EXPECT_THROW(validate(net), ShapeError);
}

TEST(Netdesc, RoundTrip) {
  std::mt19937_64 rng(0x5EED);
  for (int i = 0; i < 200; ++i) {
    auto net = random_network(rng);
    // The text format has no network-level width; residual outputs use 2.
    net.act_bits = 2;
    try {
      validate(net);
    } catch (const ShapeError&) {
      continue;
    }
    const auto text = emit_netdesc(net);
    const auto back = parse_netdesc(text, net.name);
    EXPECT_EQ(back, net) << text;
    EXPECT_EQ(back.shapes, net.shapes);
    EXPECT_EQ(emit_netdesc(back), text);
  }
  for (const auto& net : {build_resnet18(), build_alexnet(), build_vgg_like()})
    EXPECT_EQ(parse_netdesc(emit_netdesc(net)), net) << net.name;
}

TEST(Netdesc, ResNet18Shapes) {
  const auto net = build_resnet18();
  ASSERT_EQ(net.layers.size(), 13u);
  EXPECT_EQ(net.shapes[1], (Shape{112, 112, 64}));
  EXPECT_EQ(net.shapes[2], (Shape{56, 56, 64}));
  EXPECT_EQ(net.shapes[4], (Shape{56, 56, 64}));
  EXPECT_EQ(net.shapes[6], (Shape{28, 28, 128}));
  EXPECT_EQ(net.shapes[8], (Shape{14, 14, 256}));
  EXPECT_EQ(net.shapes[10], (Shape{7, 7, 512}));
  EXPECT_EQ(net.shapes[11], (Shape{1, 1, 512}));
  EXPECT_EQ(net.output_shape(), (Shape{1, 1, 1000}));
  EXPECT_EQ(net.types.back().kind, ElementKind::Accum);
  int proj = 0;
  for (const auto& l : net.layers)
    if (auto* r = std::get_if<ResidualLayer>(&l)) proj += r->proj;
  EXPECT_EQ(proj, 3);
  EXPECT_EQ(build_resnet18(32, 10).output_shape(), (Shape{1, 1, 10}));
}

TEST(Netdesc, AlexNetShapes) {
  const auto net = build_alexnet();
  EXPECT_EQ(net.shapes[1], (Shape{55, 55, 96}));
  EXPECT_EQ(net.shapes[2], (Shape{27, 27, 96}));
  EXPECT_EQ(net.shapes[3], (Shape{27, 27, 256}));
  EXPECT_EQ(net.shapes[4], (Shape{13, 13, 256}));
  EXPECT_EQ(net.shapes[7], (Shape{13, 13, 256}));
  EXPECT_EQ(net.shapes[8], (Shape{6, 6, 256}));
  EXPECT_EQ(net.shapes[9], (Shape{1, 1, 4096}));
  EXPECT_EQ(net.shapes[10], (Shape{1, 1, 4096}));
  EXPECT_EQ(net.output_shape(), (Shape{1, 1, 1000}));
}

TEST(Netdesc, Builtins) {
  EXPECT_EQ(builtin_network("resnet18").name, "resnet18");
  EXPECT_EQ(builtin_network("vgg").output_shape(), (Shape{1, 1, 10}));
  EXPECT_THROW(builtin_network("lenet"), Error);
  const auto vgg = build_vgg_like();
  EXPECT_EQ(vgg.shapes[9], (Shape{4, 4, 256}));
}

TEST(Netdesc, QuantizingLayers) {
  EXPECT_TRUE(is_quantizing(ConvLayer{}));
  EXPECT_FALSE(is_quantizing(ConvLayer{3, 1, 0, 4, 0, 0.0}));
  EXPECT_TRUE(is_quantizing(ResidualLayer{}));
  EXPECT_FALSE(is_quantizing(PoolLayer{}));
  EXPECT_FALSE(is_quantizing(InputLayer{}));
  EXPECT_DOUBLE_EQ(layer_d(ResidualLayer{4, 1, 2.5, false}), 2.5);
  EXPECT_DOUBLE_EQ(layer_d(FcLayer{4, 0, 3.0}), 0.0);
}
