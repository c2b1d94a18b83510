#pragma once

// Single-stage streaming kernels. Each builds a small stage graph and runs
// it on the engine, so the values and cycle counts are the ones a full
// network would see for that stage.

#include <optional>
#include <string>

#include "qnnstream/engine.hpp"
#include "qnnstream/graph.hpp"
#include "qnnstream/quant.hpp"
#include "qnnstream/stream.hpp"

namespace qnn {

struct ConvStageSpec {
  int k = 3, s = 1, p = 0;
  WeightBlock weights;
  std::optional<ThresholdSet> thresholds;  // set: fused activation
  std::int32_t pad_code = 0;
  std::size_t line_buffer = 0;  // 0: I*L*(K-1) + I*K

  int in_channels() const { return weights.in_ch; }
  int out_channels() const { return weights.out_ch; }
};

struct StageResult {
  PixelStream output;
  StageCycles cycles;
};

namespace detail {

inline StageResult run_one_stage(StageDesc st, const PixelStream& input,
                                 const CycleModel& m, std::size_t out_capacity = 0) {
  StageGraph g;
  g.inputs.resize(1);
  EdgeDesc in;
  in.name = "host->" + st.name;
  in.consumer = 0;
  in.shape = input.shape;
  in.type = input.type;
  in.bits = input.type.kind == ElementKind::Accum ? 16 : input.type.bits;
  in.capacity = static_cast<std::size_t>(input.shape.w) * input.shape.c;
  EdgeDesc out;
  out.name = st.name + "->host";
  out.producer = 0;
  out.shape = st.out;
  out.type = st.out_type;
  out.bits = st.out_type.kind == ElementKind::Accum ? 16 : st.out_type.bits;
  out.capacity = out_capacity ? out_capacity : static_cast<std::size_t>(st.out.w) * st.out.c;
  g.edges = {in, out};
  g.inputs[0] = {0};
  g.outputs = {1};
  st.inputs = {0};
  st.outputs = {{1}};
  g.stages.push_back(std::move(st));
  RunOptions opt;
  opt.model = m;
  auto r = run(g, input, opt);
  return {std::move(r.outputs.front()), r.report.stages.front()};
}

inline StageDesc conv_desc(const ConvStageSpec& spec, const PixelStream& input,
                           const std::string& name) {
  if (input.type.kind != ElementKind::Code)
    throw ShapeError(name + ": input must be activation codes");
  if (input.shape.c != spec.weights.in_ch)
    throw ShapeError(name + ": input has " + std::to_string(input.shape.c) +
                     " channels, weights expect " + std::to_string(spec.weights.in_ch));
  if (spec.weights.k != spec.k)
    throw ShapeError(name + ": weight block is " + std::to_string(spec.weights.k) +
                     "x" + std::to_string(spec.weights.k) + ", stage K=" +
                     std::to_string(spec.k));
  if (spec.thresholds && static_cast<int>(spec.thresholds->channels.size()) != spec.weights.out_ch)
    throw ShapeError(name + ": threshold count does not match output channels");
  StageDesc st;
  st.name = name;
  st.kind = StageKind::Conv;
  st.in = input.shape;
  st.in_type = input.type;
  st.k = spec.k;
  st.s = spec.s;
  st.p = spec.p;
  st.pad_value = spec.pad_code;
  st.line_buffer = spec.line_buffer;
  st.out = {window_out(input.shape.h, spec.k, spec.s, spec.p),
            window_out(input.shape.w, spec.k, spec.s, spec.p), spec.weights.out_ch};
  st.out_type = spec.thresholds ? StreamType{ElementKind::Code, spec.thresholds->bits}
                                : StreamType{ElementKind::Accum, 16};
  st.weights = std::make_shared<const WeightBlock>(spec.weights);
  if (spec.thresholds) st.thresholds = std::make_shared<const ThresholdSet>(*spec.thresholds);
  return st;
}

inline StageDesc pool_desc(StageKind kind, int k, int s, int p, const PixelStream& input) {
  StageDesc st;
  st.name = kind == StageKind::MaxPool ? "maxpool" : "avgpool";
  st.kind = kind;
  st.in = input.shape;
  st.in_type = input.type;
  st.out_type = input.type;
  st.k = k;
  st.s = s;
  st.p = p;
  st.pad_value = input.type.kind == ElementKind::Accum ? -32768 : 0;
  st.out = {window_out(input.shape.h, k, s, p), window_out(input.shape.w, k, s, p),
            input.shape.c};
  return st;
}

}  // namespace detail

/// Binary convolution over a code stream; fused stages emit codes, the rest
/// 16-bit accumulators.
inline StageResult conv_stage(const ConvStageSpec& spec, const PixelStream& input,
                              const CycleModel& m = {}) {
  return detail::run_one_stage(detail::conv_desc(spec, input, "conv"), input, m);
}

/// First layer: raw 8-bit pixels added or subtracted under the +-1 weights.
inline StageResult first_conv_stage(const ConvStageSpec& spec, const PixelStream& input,
                                    const CycleModel& m = {}) {
  if (input.type != StreamType{ElementKind::Code, 8})
    throw ShapeError("first_conv_stage: input must be 8-bit pixels");
  return detail::run_one_stage(detail::conv_desc(spec, input, "first_conv"), input, m);
}

inline StageResult max_pool_stage(int k, int s, const PixelStream& input,
                                  const CycleModel& m = {}, int p = 0) {
  return detail::run_one_stage(detail::pool_desc(StageKind::MaxPool, k, s, p, input), input, m);
}

inline StageResult avg_pool_stage(int k, int s, const PixelStream& input,
                                  const CycleModel& m = {}) {
  return detail::run_one_stage(detail::pool_desc(StageKind::AvgPool, k, s, 0, input), input, m);
}

/// Fully connected layer: the 1x1xI input through a K=1 convolution.
inline StageResult fc_as_conv(const WeightBlock& weights, const PixelStream& input,
                              const std::optional<ThresholdSet>& thresholds = std::nullopt,
                              const CycleModel& m = {}) {
  if (weights.k != 1) throw ShapeError("fc_as_conv: weights must be 1x1");
  if (input.shape.h != 1 || input.shape.w != 1)
    throw ShapeError("fc_as_conv: input must be 1x1xI, got " + to_string(input.shape));
  ConvStageSpec spec;
  spec.k = 1;
  spec.weights = weights;
  spec.thresholds = thresholds;
  return detail::run_one_stage(detail::conv_desc(spec, input, "fc"), input, m);
}

struct ResidualResult {
  PixelStream skip_out;  // conv1(reg_in) + skip_in
  PixelStream act;       // thresholds applied to skip_out
  PixelStream reg_out;   // conv2(act)
  CycleReport report;    // stages: conv1, add, conv2
  std::uint64_t skip_wait = 0;
  std::size_t skip_capacity = 0;
};

/// Skip-connection block: reg_in -> conv1 (unfused) -> + skip_in -> split
/// into the raw sum and its activation, which feeds conv2. The skip input
/// waits in a buffer of I*(L*(K-1)+K) elements.
inline ResidualResult residual_block(const ConvStageSpec& conv1, const ThresholdSet& add_act,
                                     const ConvStageSpec& conv2, const PixelStream& skip_in,
                                     const PixelStream& reg_in, const CycleModel& m = {}) {
  if (conv1.thresholds) throw ShapeError("residual_block: conv1 must be unfused");
  auto c1 = detail::conv_desc(conv1, reg_in, "conv1");
  if (skip_in.shape != c1.out)
    throw ShapeError("residual_block: skip input " + to_string(skip_in.shape) +
                     " does not match conv1 output " + to_string(c1.out));
  if (static_cast<int>(add_act.channels.size()) != c1.out.c)
    throw ShapeError("residual_block: threshold count does not match channels");
  const StreamType act_t{ElementKind::Code, add_act.bits};
  const PixelStream act_probe(c1.out, act_t);
  auto c2 = detail::conv_desc(conv2, act_probe, "conv2");

  StageDesc add;
  add.name = "add";
  add.kind = StageKind::Add;
  add.in = c1.out;
  add.in_type = {ElementKind::Accum, 16};
  add.out = c1.out;
  add.out_type = act_t;
  add.thresholds = std::make_shared<const ThresholdSet>(add_act);

  StageGraph g;
  auto edge = [&](std::string name, int from, int port, int to, int slot, Shape shape,
                  StreamType t, std::size_t cap, bool skip) {
    EdgeDesc e;
    e.name = std::move(name);
    e.producer = from;
    e.producer_port = port;
    e.consumer = to;
    e.consumer_slot = slot;
    e.shape = shape;
    e.type = t;
    e.bits = skip || t.kind == ElementKind::Accum ? 16 : t.bits;
    e.capacity = cap;
    e.skip = skip;
    g.edges.push_back(e);
    return static_cast<int>(g.edges.size()) - 1;
  };
  const Shape o = c1.out;
  const auto line = [](const Shape& s) { return static_cast<std::size_t>(s.w) * s.c; };
  const std::size_t skip_cap = skip_buffer_capacity(o.c, o.w, conv1.k);
  const int e_in = edge("host->conv1", -1, 0, 0, 0, reg_in.shape, reg_in.type, line(reg_in.shape), false);
  const int e_skip = edge("host->add", -1, 0, 1, 1, o, skip_in.type, skip_cap, true);
  const int e_c1 = edge("conv1->add", 0, 0, 1, 0, o, add.in_type, line(o), false);
  const int e_act = edge("add->conv2", 1, 0, 2, 0, o, act_t, line(o), false);
  const int e_act_out = edge("add->host", 1, 0, -1, 0, o, act_t, line(o), false);
  const int e_sum = edge("add:sum->host", 1, 1, -1, 0, o, add.in_type, line(o), false);
  const int e_out = edge("conv2->host", 2, 0, -1, 0, c2.out, c2.out_type, line(c2.out), false);
  c1.inputs = {e_in};
  c1.outputs = {{e_c1}};
  add.inputs = {e_c1, e_skip};
  add.outputs = {{e_act, e_act_out}, {e_sum}};
  c2.inputs = {e_act};
  c2.outputs = {{e_out}};
  g.stages = {c1, add, c2};
  g.inputs = {{e_in}, {e_skip}};
  g.outputs = {e_sum, e_act_out, e_out};

  const PixelStream ins[] = {reg_in, skip_in};
  RunOptions opt;
  opt.model = m;
  auto r = run(g, ins, opt);
  ResidualResult res;
  res.skip_out = std::move(r.outputs[0]);
  res.act = std::move(r.outputs[1]);
  res.reg_out = std::move(r.outputs[2]);
  res.report = r.report;
  res.skip_wait = r.report.stages[1].skip_wait;
  res.skip_capacity = skip_cap;
  return res;
}

}  // namespace qnn
