#pragma once

// Stage graph descriptors and the closed-form cycle model.

#include <algorithm>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "qnnstream/quant.hpp"
#include "qnnstream/stream.hpp"

namespace qnn {

/// How many cycles consuming input costs: one per pixel (all channels at
/// once) or one per channel element.
enum class CinMode { Pixel, Element };

struct CycleModel {
  CinMode cin = CinMode::Pixel;
  std::uint64_t c_mac = 1;  // cycles per output channel at a valid position
};

inline const char* to_string(CinMode m) {
  return m == CinMode::Pixel ? "pixel" : "element";
}

enum class StageKind { Conv, MaxPool, AvgPool, Add };

inline const char* to_string(StageKind k) {
  switch (k) {
    case StageKind::Conv: return "conv";
    case StageKind::MaxPool: return "maxpool";
    case StageKind::AvgPool: return "avgpool";
    case StageKind::Add: return "add";
  }
  return "?";
}

/// One pipeline stage. `in` is the geometry the stage scans; for a fully
/// connected layer that is the producer's stream flattened to 1x1xN, which
/// leaves the depth-first element order untouched.
struct StageDesc {
  std::string name;
  StageKind kind = StageKind::Conv;
  int layer = -1;  // index of the network layer the stage came from
  Shape in;
  Shape out;
  StreamType in_type;
  StreamType out_type;
  int k = 1, s = 1, p = 0;
  std::int32_t pad_value = 0;
  std::size_t line_buffer = 0;  // line buffer capacity; 0 selects the minimal size
  std::shared_ptr<const WeightBlock> weights;       // Conv
  std::shared_ptr<const ThresholdSet> thresholds;   // fused Conv, Add
  std::vector<int> inputs;                // edge ids; Add: {conv, skip}
  std::vector<std::vector<int>> outputs;  // port -> edge ids (broadcast)

  int padded_h() const { return in.h + 2 * p; }
  int padded_w() const { return in.w + 2 * p; }
  std::uint64_t in_positions() const {
    return static_cast<std::uint64_t>(padded_h()) * padded_w();
  }
  std::uint64_t valid_positions() const {
    return static_cast<std::uint64_t>(out.h) * out.w;
  }
  /// Padded pixels consumed up to and including the first full window.
  std::uint64_t first_window_pixels() const {
    return static_cast<std::uint64_t>(k - 1) * padded_w() + k;
  }
  std::size_t line_buffer_elements() const {
    return line_buffer ? line_buffer : line_buffer_capacity(in.c, padded_w(), k);
  }
};

/// Producer/consumer -1 means the host side of the pipeline.
struct EdgeDesc {
  std::string name;
  int producer = -1;
  int producer_port = 0;
  int consumer = -1;
  int consumer_slot = 0;
  int bits = 2;
  std::size_t capacity = 1;
  bool skip = false;
  Shape shape;
  StreamType type;
};

struct StageGraph {
  std::vector<StageDesc> stages;
  std::vector<EdgeDesc> edges;
  // Per host input stream, the edges it feeds (more than one when the first
  // layer's output is needed by two stages).
  std::vector<std::vector<int>> inputs;
  std::vector<int> outputs;  // edges drained by the host

  std::size_t skip_edge_count() const {
    return std::count_if(edges.begin(), edges.end(),
                         [](const EdgeDesc& e) { return e.skip; });
  }
};

struct StageCycles {
  std::string name;
  int layer = -1;
  std::uint64_t busy = 0;   // cycles spent consuming or computing
  std::uint64_t fill = 0;   // busy cycles elapsed at the first emitted element
  std::uint64_t stall = 0;  // total - busy
  // Timed simulation only (zero in analytic estimates).
  std::uint64_t wait = 0;          // cycles blocked on empty inputs / full outputs
  std::uint64_t first_output = 0;  // logical cycle of the first emission
  std::uint64_t last_output = 0;
  std::uint64_t skip_wait = 0;     // Add: cycles the skip side lagged the conv side
};

struct CycleReport {
  CycleModel model;
  std::vector<StageCycles> stages;
  std::uint64_t total = 0;         // max busy + sum of fills + link latency
  std::size_t bottleneck = 0;      // index of the stage with the largest busy
  std::uint64_t link_latency = 0;  // added by device boundaries
  std::uint64_t makespan = 0;      // timed simulation: cycle of the last output

  double wall_ms(double clock_mhz) const {
    return static_cast<double>(total) / (clock_mhz * 1e3);
  }
};

/// Busy cycles and fill latency of one stage under `m`.
inline StageCycles stage_cycles(const StageDesc& st, const CycleModel& m) {
  StageCycles c;
  c.name = st.name;
  c.layer = st.layer;
  const bool per_pixel = m.cin == CinMode::Pixel;
  switch (st.kind) {
    case StageKind::Conv: {
      const std::uint64_t cin = per_pixel ? 1 : st.in.c;
      c.busy = st.in_positions() * cin + st.valid_positions() * st.out.c * m.c_mac;
      c.fill = st.first_window_pixels() * cin + m.c_mac;
      break;
    }
    case StageKind::MaxPool:
    case StageKind::AvgPool: {
      const std::uint64_t cin = per_pixel ? 1 : st.in.c;
      c.busy = st.in_positions() * cin;
      c.fill = per_pixel ? st.first_window_pixels()
                         : (st.first_window_pixels() - 1) * st.in.c + 1;
      break;
    }
    case StageKind::Add: {
      const std::uint64_t cin = per_pixel ? 1 : st.out.c;
      c.busy = st.valid_positions() * cin;
      c.fill = 1;
      break;
    }
  }
  return c;
}

/// Pipeline total = max stage busy + sum of stage fill latencies
/// (+ link latency). Fills in `r.stages` must already be set.
inline void finalize_totals(CycleReport& r) {
  std::uint64_t max_busy = 0, fills = 0;
  for (std::size_t i = 0; i < r.stages.size(); ++i) {
    if (r.stages[i].busy > max_busy) {
      max_busy = r.stages[i].busy;
      r.bottleneck = i;
    }
    fills += r.stages[i].fill;
  }
  r.total = max_busy + fills + r.link_latency;
  for (auto& s : r.stages) s.stall = r.total - s.busy;
}

/// Analytic estimate; needs only geometry, not parameters.
inline CycleReport estimate_cycles(const StageGraph& g, const CycleModel& m = {},
                                   std::uint64_t link_latency = 0) {
  CycleReport r;
  r.model = m;
  r.link_latency = link_latency;
  for (const auto& st : g.stages) r.stages.push_back(stage_cycles(st, m));
  finalize_totals(r);
  return r;
}

}  // namespace qnn
