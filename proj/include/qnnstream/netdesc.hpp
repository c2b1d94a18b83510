#pragma once

// Network description: layer list, shape inference, the line-based text
// format and the builtin models.
//
//   input H W C BITS
//   conv k=K s=S p=P o=O d=D [act=N|none]
//   maxpool k=K s=S [p=P]
//   avgpool k=K s=S
//   resblock o=O s=S d=D [proj]
//   fc o=O d=D [act=N|none]
//   # comment

#include <charconv>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "qnnstream/error.hpp"
#include "qnnstream/stream.hpp"

namespace qnn {

struct InputLayer {
  int h = 0, w = 0, c = 0, bits = 8;
  friend bool operator==(const InputLayer&, const InputLayer&) = default;
};

/// act_bits == 0 means unfused: the stage emits 16-bit accumulators.
struct ConvLayer {
  int k = 3, s = 1, p = 0, o = 1;
  int act_bits = 2;
  double d = 1.0;
  bool fused() const { return act_bits > 0; }
  friend bool operator==(const ConvLayer&, const ConvLayer&) = default;
};

struct PoolLayer {
  bool max = true;
  int k = 2, s = 2, p = 0;
  friend bool operator==(const PoolLayer&, const PoolLayer&) = default;
};

/// Two 3x3 convolutions around a skip connection. The first convolution has
/// stride `s`; `proj` puts a 1x1 stride-s binary convolution on the skip
/// path (needed whenever the shape changes).
struct ResidualLayer {
  int o = 1, s = 1;
  double d = 1.0;
  bool proj = false;
  friend bool operator==(const ResidualLayer&, const ResidualLayer&) = default;
};

/// Fully connected layer run as a 1x1 convolution over the flattened input.
struct FcLayer {
  int o = 1;
  int act_bits = 2;
  double d = 1.0;
  bool fused() const { return act_bits > 0; }
  friend bool operator==(const FcLayer&, const FcLayer&) = default;
};

using LayerSpec = std::variant<InputLayer, ConvLayer, PoolLayer, ResidualLayer, FcLayer>;

struct NetworkSpec {
  std::string name;
  int act_bits = 2;  // default activation width, used by residual blocks
  std::vector<LayerSpec> layers;
  // Filled by validate(): output geometry and element type of every layer.
  std::vector<Shape> shapes;
  std::vector<StreamType> types;

  const Shape& input_shape() const { return shapes.front(); }
  const Shape& output_shape() const { return shapes.back(); }

  friend bool operator==(const NetworkSpec& a, const NetworkSpec& b) {
    return a.act_bits == b.act_bits && a.layers == b.layers;
  }
};

inline bool is_quantizing(const LayerSpec& l) {
  if (auto* c = std::get_if<ConvLayer>(&l)) return c->fused();
  if (auto* f = std::get_if<FcLayer>(&l)) return f->fused();
  return std::holds_alternative<ResidualLayer>(l);
}

inline double layer_d(const LayerSpec& l) {
  if (auto* c = std::get_if<ConvLayer>(&l)) return c->fused() ? c->d : 0.0;
  if (auto* f = std::get_if<FcLayer>(&l)) return f->fused() ? f->d : 0.0;
  if (auto* r = std::get_if<ResidualLayer>(&l)) return r->d;
  return 0.0;
}

/// Infers shapes and types along the chain; throws ShapeError naming the
/// layer that does not compose.
inline void validate(NetworkSpec& net) {
  net.shapes.clear();
  net.types.clear();
  if (net.layers.empty() || !std::holds_alternative<InputLayer>(net.layers[0]))
    throw ShapeError("network must start with an input layer");
  if (net.act_bits < 1 || net.act_bits > 8)
    throw ShapeError("network activation width must be in [1, 8]");
  auto fail = [](std::size_t i, const std::string& m) {
    throw ShapeError("layer " + std::to_string(i) + ": " + m);
  };
  auto check_d = [&](std::size_t i, double d) {
    if (!(d > 0.0) || !std::isfinite(d)) fail(i, "quantizing layer needs d > 0");
  };
  auto check_bits = [&](std::size_t i, int b) {
    if (b < 0 || b > 8) fail(i, "activation width must be in [1, 8]");
  };
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& layer = net.layers[i];
    if (i == 0) {
      const auto& in = std::get<InputLayer>(layer);
      if (in.h <= 0 || in.w <= 0 || in.c <= 0) fail(i, "input dimensions must be positive");
      if (in.bits < 1 || in.bits > 8) fail(i, "input bits must be in [1, 8]");
      net.shapes.push_back({in.h, in.w, in.c});
      net.types.push_back({ElementKind::Code, in.bits});
      continue;
    }
    const Shape prev = net.shapes.back();
    const StreamType prev_t = net.types.back();
    Shape out;
    StreamType t;
    try {
      std::visit(
          [&](const auto& l) {
            using T = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<T, InputLayer>) {
              fail(i, "only one input layer allowed");
            } else if constexpr (std::is_same_v<T, ConvLayer>) {
              if (prev_t.kind != ElementKind::Code) fail(i, "conv needs activation codes");
              if (l.o <= 0) fail(i, "conv needs o > 0");
              check_bits(i, l.act_bits);
              if (l.fused()) check_d(i, l.d);
              out = {window_out(prev.h, l.k, l.s, l.p), window_out(prev.w, l.k, l.s, l.p), l.o};
              t = l.fused() ? StreamType{ElementKind::Code, l.act_bits}
                            : StreamType{ElementKind::Accum, 16};
            } else if constexpr (std::is_same_v<T, PoolLayer>) {
              if (!l.max && l.p != 0) fail(i, "avgpool takes no padding");
              out = {window_out(prev.h, l.k, l.s, l.p), window_out(prev.w, l.k, l.s, l.p), prev.c};
              t = prev_t;
            } else if constexpr (std::is_same_v<T, ResidualLayer>) {
              if (prev_t.kind != ElementKind::Code) fail(i, "resblock needs activation codes");
              if (l.o <= 0) fail(i, "resblock needs o > 0");
              check_d(i, l.d);
              if (!l.proj && (l.s != 1 || l.o != prev.c))
                fail(i, "resblock changes shape (" + to_string(prev) + " -> o=" +
                            std::to_string(l.o) + ", s=" + std::to_string(l.s) +
                            ") and needs proj");
              out = {window_out(prev.h, 3, l.s, 1), window_out(prev.w, 3, l.s, 1), l.o};
              if (l.proj &&
                  (window_out(prev.h, 1, l.s, 0) != out.h || window_out(prev.w, 1, l.s, 0) != out.w))
                fail(i, "projection shortcut does not match block output");
              t = {ElementKind::Code, net.act_bits};
            } else {
              if (prev_t.kind != ElementKind::Code) fail(i, "fc needs activation codes");
              if (l.o <= 0) fail(i, "fc needs o > 0");
              check_bits(i, l.act_bits);
              if (l.fused()) check_d(i, l.d);
              out = {1, 1, l.o};
              t = l.fused() ? StreamType{ElementKind::Code, l.act_bits}
                            : StreamType{ElementKind::Accum, 16};
            }
          },
          layer);
    } catch (const ShapeError& e) {
      const std::string what = e.what();
      if (what.rfind("layer ", 0) == 0) throw;
      fail(i, what);
    }
    net.shapes.push_back(out);
    net.types.push_back(t);
  }
}

namespace detail {

inline std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

inline int parse_int(std::string_view s, std::size_t line, std::string_view key) {
  int v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size())
    throw ParseError(line, "malformed value '" + std::string(s) + "' for " + std::string(key));
  return v;
}

inline double parse_double(std::string_view s, std::size_t line, std::string_view key) {
  try {
    std::size_t used = 0;
    const double v = std::stod(std::string(s), &used);
    if (used != s.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw ParseError(line, "malformed value '" + std::string(s) + "' for " + std::string(key));
  }
}

}  // namespace detail

/// Parses and validates the line-based network format.
inline NetworkSpec parse_netdesc(std::string_view text, std::string name = "net") {
  NetworkSpec net;
  net.name = std::move(name);
  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t line_no = 0;
  std::vector<std::size_t> layer_lines;
  while (std::getline(in, raw)) {
    ++line_no;
    if (auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
    std::istringstream ls(raw);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    if (tok.empty()) continue;
    const std::string& dir = tok[0];

    if (dir == "input") {
      if (tok.size() != 5) throw ParseError(line_no, "input takes H W C BITS");
      InputLayer l{detail::parse_int(tok[1], line_no, "H"), detail::parse_int(tok[2], line_no, "W"),
                   detail::parse_int(tok[3], line_no, "C"), detail::parse_int(tok[4], line_no, "BITS")};
      net.layers.emplace_back(l);
      layer_lines.push_back(line_no);
      continue;
    }

    std::map<std::string, std::string> kv;
    std::vector<std::string> flags;
    for (std::size_t i = 1; i < tok.size(); ++i) {
      const auto eq = tok[i].find('=');
      if (eq == std::string::npos) {
        flags.push_back(tok[i]);
        continue;
      }
      const auto key = tok[i].substr(0, eq);
      if (kv.count(key)) throw ParseError(line_no, "duplicate key '" + key + "'");
      kv[key] = tok[i].substr(eq + 1);
    }
    auto take_int = [&](const std::string& k, std::optional<int> def = std::nullopt) {
      auto it = kv.find(k);
      if (it == kv.end()) {
        if (def) return *def;
        throw ParseError(line_no, dir + " requires " + k + "=");
      }
      const int v = detail::parse_int(it->second, line_no, k);
      kv.erase(it);
      return v;
    };
    auto take_double = [&](const std::string& k, std::optional<double> def = std::nullopt) {
      auto it = kv.find(k);
      if (it == kv.end()) {
        if (def) return *def;
        throw ParseError(line_no, dir + " requires " + k + "=");
      }
      const double v = detail::parse_double(it->second, line_no, k);
      kv.erase(it);
      return v;
    };
    auto take_act = [&]() {
      auto it = kv.find("act");
      if (it == kv.end()) return net.act_bits;
      const std::string v = it->second;
      kv.erase(it);
      if (v == "none") return 0;
      const int b = detail::parse_int(v, line_no, "act");
      if (b < 1 || b > 8) throw ParseError(line_no, "act must be in [1, 8] or none");
      return b;
    };
    auto no_flags = [&] {
      if (!flags.empty()) throw ParseError(line_no, "unexpected token '" + flags[0] + "'");
    };

    if (dir == "conv") {
      ConvLayer l;
      l.k = take_int("k");
      l.s = take_int("s");
      l.p = take_int("p", 0);
      l.o = take_int("o");
      l.act_bits = take_act();
      l.d = take_double("d", l.act_bits == 0 ? std::optional<double>(0.0) : std::nullopt);
      if (l.act_bits == 0) l.d = 0.0;
      no_flags();
      if (l.k <= 0 || l.s <= 0 || l.p < 0) throw ParseError(line_no, "conv geometry must be positive");
      net.layers.emplace_back(l);
    } else if (dir == "maxpool" || dir == "avgpool") {
      PoolLayer l;
      l.max = dir == "maxpool";
      l.k = take_int("k");
      l.s = take_int("s");
      l.p = l.max ? take_int("p", 0) : 0;
      no_flags();
      if (l.k <= 0 || l.s <= 0 || l.p < 0) throw ParseError(line_no, dir + " geometry must be positive");
      net.layers.emplace_back(l);
    } else if (dir == "resblock") {
      ResidualLayer l;
      l.o = take_int("o");
      l.s = take_int("s", 1);
      l.d = take_double("d");
      for (const auto& f : flags) {
        if (f != "proj") throw ParseError(line_no, "unexpected token '" + f + "'");
        l.proj = true;
      }
      if (l.s <= 0) throw ParseError(line_no, "resblock stride must be positive");
      net.layers.emplace_back(l);
    } else if (dir == "fc") {
      FcLayer l;
      l.o = take_int("o");
      l.act_bits = take_act();
      l.d = take_double("d", l.act_bits == 0 ? std::optional<double>(0.0) : std::nullopt);
      if (l.act_bits == 0) l.d = 0.0;
      no_flags();
      if (l.o <= 0) throw ParseError(line_no, "fc needs o > 0");
      net.layers.emplace_back(l);
    } else {
      throw ParseError(line_no, "unknown directive '" + dir + "'");
    }
    if (!kv.empty()) throw ParseError(line_no, "unknown key '" + kv.begin()->first + "'");
    layer_lines.push_back(line_no);
  }
  try {
    validate(net);
  } catch (const ShapeError& e) {
    // Map "layer N: ..." back to the source line.
    const std::string what = e.what();
    std::size_t idx = 0;
    if (std::sscanf(what.c_str(), "layer %zu:", &idx) == 1 && idx < layer_lines.size())
      throw ParseError(layer_lines[idx], what.substr(what.find(':') + 2));
    throw ParseError(line_no, what);
  }
  return net;
}

/// Text that parse_netdesc turns back into an equal spec.
inline std::string emit_netdesc(const NetworkSpec& net) {
  std::ostringstream os;
  os << "# " << net.name << "\n";
  auto act = [&](int bits) {
    if (bits == 0) return std::string(" act=none");
    if (bits == net.act_bits) return std::string();
    return " act=" + std::to_string(bits);
  };
  for (const auto& layer : net.layers) {
    std::visit(
        [&](const auto& l) {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, InputLayer>) {
            os << "input " << l.h << ' ' << l.w << ' ' << l.c << ' ' << l.bits;
          } else if constexpr (std::is_same_v<T, ConvLayer>) {
            os << "conv k=" << l.k << " s=" << l.s << " p=" << l.p << " o=" << l.o;
            if (l.fused()) os << " d=" << detail::fmt_double(l.d);
            os << act(l.act_bits);
          } else if constexpr (std::is_same_v<T, PoolLayer>) {
            os << (l.max ? "maxpool" : "avgpool") << " k=" << l.k << " s=" << l.s;
            if (l.p) os << " p=" << l.p;
          } else if constexpr (std::is_same_v<T, ResidualLayer>) {
            os << "resblock o=" << l.o << " s=" << l.s << " d=" << detail::fmt_double(l.d);
            if (l.proj) os << " proj";
          } else {
            os << "fc o=" << l.o;
            if (l.fused()) os << " d=" << detail::fmt_double(l.d);
            os << act(l.act_bits);
          }
        },
        layer);
    os << "\n";
  }
  return os.str();
}

// Builtin models. 2-bit activations, 8-bit RGB input, range size 1.

inline NetworkSpec build_resnet18(int input_size = 224, int classes = 1000) {
  NetworkSpec net;
  net.name = "resnet18";
  net.layers.emplace_back(InputLayer{input_size, input_size, 3, 8});
  net.layers.emplace_back(ConvLayer{7, 2, 3, 64, 2, 1.0});
  net.layers.emplace_back(PoolLayer{true, 3, 2, 1});
  int ch = 64;
  for (int width : {64, 128, 256, 512}) {
    for (int b = 0; b < 2; ++b) {
      const bool down = b == 0 && width != ch;
      net.layers.emplace_back(ResidualLayer{width, down ? 2 : 1, 1.0, down});
    }
    ch = width;
  }
  const int spatial = (input_size + 31) / 32;
  net.layers.emplace_back(PoolLayer{false, spatial, 1, 0});
  net.layers.emplace_back(FcLayer{classes, 0, 0.0});
  validate(net);
  return net;
}

/// Single-tower AlexNet: 11x11/96/s4, 5x5/256, 3x3/384, 3x3/384, 3x3/256,
/// then 4096, 4096 and 1000 fully connected.
inline NetworkSpec build_alexnet(int input_size = 227, int classes = 1000) {
  NetworkSpec net;
  net.name = "alexnet";
  net.layers.emplace_back(InputLayer{input_size, input_size, 3, 8});
  net.layers.emplace_back(ConvLayer{11, 4, 0, 96, 2, 1.0});
  net.layers.emplace_back(PoolLayer{true, 3, 2, 0});
  net.layers.emplace_back(ConvLayer{5, 1, 2, 256, 2, 1.0});
  net.layers.emplace_back(PoolLayer{true, 3, 2, 0});
  net.layers.emplace_back(ConvLayer{3, 1, 1, 384, 2, 1.0});
  net.layers.emplace_back(ConvLayer{3, 1, 1, 384, 2, 1.0});
  net.layers.emplace_back(ConvLayer{3, 1, 1, 256, 2, 1.0});
  net.layers.emplace_back(PoolLayer{true, 3, 2, 0});
  net.layers.emplace_back(FcLayer{4096, 2, 1.0});
  net.layers.emplace_back(FcLayer{4096, 2, 1.0});
  net.layers.emplace_back(FcLayer{classes, 0, 0.0});
  validate(net);
  return net;
}

/// Three blocks of two 3x3 convolutions and a 2x2 max pool (64, 128, 256
/// channels), then fully connected 512, 512, classes.
inline NetworkSpec build_vgg_like(int input_size = 32, int classes = 10) {
  NetworkSpec net;
  net.name = "vgg_like";
  net.layers.emplace_back(InputLayer{input_size, input_size, 3, 8});
  for (int width : {64, 128, 256}) {
    net.layers.emplace_back(ConvLayer{3, 1, 1, width, 2, 1.0});
    net.layers.emplace_back(ConvLayer{3, 1, 1, width, 2, 1.0});
    net.layers.emplace_back(PoolLayer{true, 2, 2, 0});
  }
  net.layers.emplace_back(FcLayer{512, 2, 1.0});
  net.layers.emplace_back(FcLayer{512, 2, 1.0});
  net.layers.emplace_back(FcLayer{classes, 0, 0.0});
  validate(net);
  return net;
}

inline NetworkSpec builtin_network(std::string_view name) {
  if (name == "resnet18") return build_resnet18();
  if (name == "alexnet") return build_alexnet();
  if (name == "vgg_like" || name == "vgg") return build_vgg_like();
  throw Error("unknown builtin network '" + std::string(name) + "'");
}

}  // namespace qnn
