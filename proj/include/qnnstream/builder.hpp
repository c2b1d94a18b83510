#pragma once

// Maps a NetworkSpec (and optionally its parameters) onto a StageGraph.
//
// Residual block i expands to, in stage order:
//   [Li.proj]  1x1 stride-s binary conv on the skip path (accumulators)
//   Li.conv_a  3x3 stride-s, batchnorm + activation folded in
//   Li.conv_b  3x3 stride 1, accumulators
//   Li.add     conv_b + skip, then the post-add thresholds
// The skip input of an identity block is the previous adder's raw sum when
// the previous layer is also a residual block, otherwise the block input
// itself. Every block has exactly one skip edge.

#include <memory>
#include <string>
#include <variant>

#include "qnnstream/graph.hpp"
#include "qnnstream/netdesc.hpp"
#include "qnnstream/params.hpp"

namespace qnn {

struct BuildOptions {
  // Capacity of every non-skip edge; 0 means one scan line of the producer.
  std::size_t fifo_capacity = 0;
};

namespace detail {

struct Src {
  int stage = -1;  // -1: host input 0
  int port = 0;
};

class GraphBuilder {
 public:
  GraphBuilder(StageGraph& g, const BuildOptions& opt) : g_(g), opt_(opt) {
    g_.inputs.resize(1);
  }

  int add_stage(StageDesc st, int input_slots, int ports) {
    st.inputs.assign(input_slots, -1);
    st.outputs.resize(ports);
    g_.stages.push_back(std::move(st));
    return static_cast<int>(g_.stages.size()) - 1;
  }

  std::size_t chain_capacity(const Shape& s) const {
    return opt_.fifo_capacity ? opt_.fifo_capacity
                              : static_cast<std::size_t>(s.w) * s.c;
  }

  int connect(Src from, int consumer, int slot, const Shape& shape, StreamType type,
              std::size_t capacity, bool skip = false) {
    EdgeDesc e;
    e.producer = from.stage;
    e.producer_port = from.port;
    e.consumer = consumer;
    e.consumer_slot = slot;
    e.shape = shape;
    e.type = type;
    e.bits = skip || type.kind == ElementKind::Accum ? 16 : type.bits;
    e.capacity = capacity;
    e.skip = skip;
    const std::string from_name =
        from.stage < 0 ? "host" : g_.stages[from.stage].name + (from.port ? ":sum" : "");
    const std::string to_name = consumer < 0 ? "host" : g_.stages[consumer].name;
    e.name = from_name + "->" + to_name;
    const int id = static_cast<int>(g_.edges.size());
    g_.edges.push_back(std::move(e));
    if (from.stage < 0)
      g_.inputs[0].push_back(id);
    else
      g_.stages[from.stage].outputs[from.port].push_back(id);
    if (consumer < 0)
      g_.outputs.push_back(id);
    else
      g_.stages[consumer].inputs[slot] = id;
    return id;
  }

 private:
  StageGraph& g_;
  const BuildOptions& opt_;
};

template <class T>
std::shared_ptr<const T> share(const std::optional<T>& v) {
  return v ? std::make_shared<const T>(*v) : nullptr;
}

}  // namespace detail

/// Without parameters the graph carries geometry only (enough for cycle and
/// resource estimates, not for run()).
inline StageGraph build_graph(const NetworkSpec& net, const NetworkParams* params = nullptr,
                              const BuildOptions& opt = {}) {
  if (net.shapes.size() != net.layers.size())
    throw ShapeError("network has not been validated");
  if (params && params->layers.size() != net.layers.size())
    throw ParamError("parameters cover " + std::to_string(params->layers.size()) +
                     " layers, network has " + std::to_string(net.layers.size()));
  StageGraph g;
  detail::GraphBuilder b(g, opt);
  detail::Src cur;
  detail::Src skip_sum{-2, 0};  // adder port carrying the previous block's raw sum

  auto next_is_identity_block = [&](std::size_t i) {
    if (i + 1 >= net.layers.size()) return false;
    const auto* r = std::get_if<ResidualLayer>(&net.layers[i + 1]);
    return r && !r->proj;
  };

  for (std::size_t i = 1; i < net.layers.size(); ++i) {
    const Shape in = net.shapes[i - 1];
    const StreamType in_t = net.types[i - 1];
    const Shape out = net.shapes[i];
    const StreamType out_t = net.types[i];
    const LayerParams* lp = params ? &params->layers[i] : nullptr;
    const std::string prefix = "L" + std::to_string(i) + ".";
    const int layer = static_cast<int>(i);
    const detail::Src prev_skip = skip_sum;
    skip_sum = {-2, 0};

    auto make = [&](const std::string& name, StageKind kind, Shape s_in, StreamType t_in,
                    Shape s_out, StreamType t_out, int k, int s, int p) {
      StageDesc st;
      st.name = prefix + name;
      st.kind = kind;
      st.layer = layer;
      st.in = s_in;
      st.in_type = t_in;
      st.out = s_out;
      st.out_type = t_out;
      st.k = k;
      st.s = s;
      st.p = p;
      return st;
    };

    std::visit(
        [&](const auto& l) {
          using T = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<T, ConvLayer> || std::is_same_v<T, FcLayer>) {
            constexpr bool fc = std::is_same_v<T, FcLayer>;
            StageDesc st;
            if constexpr (fc)
              st = make("fc", StageKind::Conv, Shape{1, 1, static_cast<int>(in.elements())},
                        in_t, out, out_t, 1, 1, 0);
            else
              st = make("conv", StageKind::Conv, in, in_t, out, out_t, l.k, l.s, l.p);
            if (lp) {
              st.weights = detail::share(lp->weights);
              st.thresholds = detail::share(lp->thresholds);
            }
            const int id = b.add_stage(std::move(st), 1, 1);
            b.connect(cur, id, 0, in, in_t, b.chain_capacity(in));
            cur = {id, 0};
          } else if constexpr (std::is_same_v<T, PoolLayer>) {
            auto st = make(l.max ? "maxpool" : "avgpool",
                           l.max ? StageKind::MaxPool : StageKind::AvgPool, in, in_t, out,
                           out_t, l.k, l.s, l.p);
            st.pad_value = in_t.kind == ElementKind::Accum ? -32768 : 0;
            const int id = b.add_stage(std::move(st), 1, 1);
            b.connect(cur, id, 0, in, in_t, b.chain_capacity(in));
            cur = {id, 0};
          } else if constexpr (std::is_same_v<T, ResidualLayer>) {
            const StreamType accum{ElementKind::Accum, 16};
            int proj = -1;
            if (l.proj) {
              auto st = make("proj", StageKind::Conv, in, in_t, out, accum, 1, l.s, 0);
              if (lp) st.weights = detail::share(lp->proj);
              proj = b.add_stage(std::move(st), 1, 1);
            }
            auto sa = make("conv_a", StageKind::Conv, in, in_t, out, out_t, 3, l.s, 1);
            if (lp) {
              sa.weights = detail::share(lp->weights);
              sa.thresholds = detail::share(lp->thresholds);
            }
            const int conv_a = b.add_stage(std::move(sa), 1, 1);
            auto sb = make("conv_b", StageKind::Conv, out, out_t, out, accum, 3, 1, 1);
            if (lp) sb.weights = detail::share(lp->weights_b);
            const int conv_b = b.add_stage(std::move(sb), 1, 1);
            auto sd = make("add", StageKind::Add, out, accum, out, out_t, 1, 1, 0);
            if (lp) sd.thresholds = detail::share(lp->post);
            const bool feeds_skip = next_is_identity_block(i);
            const int add = b.add_stage(std::move(sd), 2, feeds_skip ? 2 : 1);

            if (proj >= 0) b.connect(cur, proj, 0, in, in_t, b.chain_capacity(in));
            b.connect(cur, conv_a, 0, in, in_t, b.chain_capacity(in));
            b.connect({conv_a, 0}, conv_b, 0, out, out_t, b.chain_capacity(out));
            b.connect({conv_b, 0}, add, 0, out, accum, b.chain_capacity(out));
            if (proj >= 0)
              b.connect({proj, 0}, add, 1, out, accum, skip_buffer_capacity(out.c, out.w, 3),
                        true);
            else if (prev_skip.stage >= 0)
              b.connect(prev_skip, add, 1, in, accum, skip_buffer_capacity(in.c, in.w, 3), true);
            else
              b.connect(cur, add, 1, in, in_t, skip_buffer_capacity(in.c, in.w, 3), true);
            cur = {add, 0};
            if (feeds_skip) skip_sum = {add, 1};
          }
        },
        net.layers[i]);
  }
  b.connect(cur, -1, 0, net.output_shape(), net.types.back(),
            b.chain_capacity(net.output_shape()));
  return g;
}

inline CycleReport estimate_cycles(const NetworkSpec& net, const CycleModel& m = {}) {
  return estimate_cycles(build_graph(net), m);
}

}  // namespace qnn
