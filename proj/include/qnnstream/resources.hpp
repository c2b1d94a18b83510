#pragma once

// On-chip storage estimate and the contiguous device partitioner.
//
// Block RAM is modeled as M20K blocks (20 Kbit, 512 x 40 at minimum depth).
// A weight cache has O entries of K*K*I bits read once per clock, so it
// occupies ceil(K*K*I / 40) blocks side by side, times ceil(O / 512) deep.
// Line buffers live in flip-flops; skip buffers and parameter caches in
// block RAM. Logic (ALM/LUT) usage is not modeled.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "qnnstream/builder.hpp"
#include "qnnstream/engine.hpp"
#include "qnnstream/error.hpp"
#include "qnnstream/graph.hpp"

namespace qnn {

inline constexpr std::uint64_t kBramBits = 20 * 1024;
inline constexpr std::uint64_t kBramWidth = 40;
inline constexpr std::uint64_t kBramDepth = 512;
inline constexpr std::uint64_t kBnEntryBits = 64;

struct DeviceBudget {
  std::uint64_t bram_blocks = 2567;
  std::uint64_t ff_bits = 1'050'000;
  std::uint64_t alm_count = 262'400;  // informational
};

struct StageResources {
  std::string name;
  int layer = -1;
  std::uint64_t weight_raw_bits = 0;
  std::uint64_t weight_blocks = 0;
  double weight_waste = 0.0;  // unused fraction of the weight-cache depth
  std::uint64_t bn_bits = 0;
  std::uint64_t bn_blocks = 0;
  std::uint64_t line_buffer_bits = 0;  // flip-flops
  std::uint64_t skip_buffer_bits = 0;
  std::uint64_t skip_blocks = 0;

  std::uint64_t bram_blocks() const { return weight_blocks + bn_blocks + skip_blocks; }
  std::uint64_t bram_bits() const { return bram_blocks() * kBramBits; }
  std::uint64_t ff_bits() const { return line_buffer_bits; }
};

struct ResourceReport {
  std::vector<StageResources> stages;
  std::uint64_t weight_raw_bits = 0;
  std::uint64_t bn_bits = 0;
  std::uint64_t line_buffer_bits = 0;
  std::uint64_t skip_buffer_bits = 0;
  std::uint64_t bram_blocks = 0;

  std::uint64_t bram_bits() const { return bram_blocks * kBramBits; }
};

inline std::uint64_t ceil_div(std::uint64_t a, std::uint64_t b) { return (a + b - 1) / b; }

/// Blocks for a cache of `entries` words of `width` bits, one word per clock.
inline std::uint64_t cache_blocks(std::uint64_t entries, std::uint64_t width) {
  if (entries == 0 || width == 0) return 0;
  return ceil_div(width, kBramWidth) * ceil_div(entries, kBramDepth);
}

/// Unused fraction of the allocated depth of a cache with `entries` words.
inline double cache_waste(std::uint64_t entries) {
  if (entries == 0) return 0.0;
  const std::uint64_t depth = ceil_div(entries, kBramDepth) * kBramDepth;
  return 1.0 - static_cast<double>(entries) / static_cast<double>(depth);
}

inline ResourceReport estimate_resources(const StageGraph& g) {
  ResourceReport r;
  for (const auto& st : g.stages) {
    StageResources s;
    s.name = st.name;
    s.layer = st.layer;
    if (st.kind == StageKind::Conv) {
      const std::uint64_t width = static_cast<std::uint64_t>(st.k) * st.k * st.in.c;
      const std::uint64_t o = st.out.c;
      s.weight_raw_bits = width * o;
      s.weight_blocks = cache_blocks(o, width);
      s.weight_waste = cache_waste(o);
    }
    const bool has_bn = (st.kind == StageKind::Conv && st.out_type.kind == ElementKind::Code) ||
                        st.kind == StageKind::Add;
    if (has_bn) {
      s.bn_bits = static_cast<std::uint64_t>(st.out.c) * kBnEntryBits;
      s.bn_blocks = cache_blocks(st.out.c, kBnEntryBits);
    }
    if (st.kind != StageKind::Add && st.k > 1) {
      const int elem = st.in_type.kind == ElementKind::Accum ? 16 : st.in_type.bits;
      s.line_buffer_bits = st.line_buffer_elements() * static_cast<std::uint64_t>(elem);
    }
    if (st.kind == StageKind::Add && st.inputs.size() > 1 && st.inputs[1] >= 0) {
      const auto& e = g.edges[st.inputs[1]];
      s.skip_buffer_bits = e.capacity * 16;
      s.skip_blocks = ceil_div(s.skip_buffer_bits, kBramBits);
    }
    r.weight_raw_bits += s.weight_raw_bits;
    r.bn_bits += s.bn_bits;
    r.line_buffer_bits += s.line_buffer_bits;
    r.skip_buffer_bits += s.skip_buffer_bits;
    r.bram_blocks += s.bram_blocks();
    r.stages.push_back(std::move(s));
  }
  return r;
}

inline ResourceReport estimate_resources(const NetworkSpec& net) {
  return estimate_resources(build_graph(net));
}

struct DeviceLoad {
  std::uint64_t bram_blocks = 0;
  std::uint64_t ff_bits = 0;
};

inline DeviceLoad device_load(const ResourceReport& r, const DeviceRange& d) {
  DeviceLoad l;
  for (std::size_t s = d.first; s <= d.last; ++s) {
    l.bram_blocks += r.stages[s].bram_blocks();
    l.ff_bits += r.stages[s].ff_bits();
  }
  return l;
}

namespace detail {

inline void check_stage_budgets(const ResourceReport& res, const DeviceBudget& budget) {
  if (res.stages.empty()) throw PartitionError("graph has no stages");
  for (const auto& s : res.stages)
    if (s.bram_blocks() > budget.bram_blocks || s.ff_bits() > budget.ff_bits)
      throw PartitionError("stage " + s.name + " needs " + std::to_string(s.bram_blocks()) +
                           " BRAM blocks and " + std::to_string(s.ff_bits()) +
                           " FF bits, over the per-device budget");
}

inline bool fits(const ResourceReport& res, const DeviceBudget& budget, std::size_t a,
                 std::size_t b) {
  const auto l = device_load(res, {a, b});
  return l.bram_blocks <= budget.bram_blocks && l.ff_bits <= budget.ff_bits;
}

}  // namespace detail

/// Contiguous split into exactly `count` devices minimizing the largest
/// per-device BRAM load.
inline Partition partition_balanced(const StageGraph& g, const DeviceBudget& budget,
                                    std::size_t count) {
  const auto res = estimate_resources(g);
  detail::check_stage_budgets(res, budget);
  const std::size_t n = res.stages.size();
  if (count == 0 || count > n)
    throw PartitionError("cannot split " + std::to_string(n) + " stages into " +
                         std::to_string(count) + " devices");
  // best[d][j]: minimal max BRAM load placing stages [0, j) on d devices.
  constexpr std::uint64_t inf = std::numeric_limits<std::uint64_t>::max();
  std::vector<std::vector<std::uint64_t>> best(count + 1, std::vector<std::uint64_t>(n + 1, inf));
  std::vector<std::vector<std::size_t>> cut(count + 1, std::vector<std::size_t>(n + 1, 0));
  best[0][0] = 0;
  for (std::size_t d = 1; d <= count; ++d)
    for (std::size_t j = d; j <= n; ++j)
      for (std::size_t i = d - 1; i < j; ++i) {
        if (best[d - 1][i] == inf || !detail::fits(res, budget, i, j - 1)) continue;
        const std::uint64_t load =
            std::max(best[d - 1][i], device_load(res, {i, j - 1}).bram_blocks);
        if (load < best[d][j]) {
          best[d][j] = load;
          cut[d][j] = i;
        }
      }
  if (best[count][n] == inf)
    throw PartitionError("no split into " + std::to_string(count) + " devices fits the budget");
  Partition part(count);
  for (std::size_t d = count, j = n; d > 0; --d) {
    const std::size_t i = cut[d][j];
    part[d - 1] = {i, j - 1};
    j = i;
  }
  return part;
}

/// Fewest contiguous devices (greedy first-fit over the stage order), then
/// among splits with that count the one with the smallest maximum BRAM load.
inline Partition partition_network(const StageGraph& g, const DeviceBudget& budget,
                                   std::size_t max_devices = 8) {
  const auto res = estimate_resources(g);
  detail::check_stage_budgets(res, budget);
  std::size_t count = 1;
  for (std::size_t first = 0, s = 0; s < res.stages.size(); ++s)
    if (!detail::fits(res, budget, first, s)) {
      ++count;
      first = s;
    }
  if (count > max_devices)
    throw PartitionError("network needs " + std::to_string(count) + " devices, at most " +
                         std::to_string(max_devices) + " allowed");
  return partition_balanced(g, budget, count);
}

inline Partition partition_network(const NetworkSpec& net, const DeviceBudget& budget,
                                   std::size_t max_devices = 8) {
  return partition_network(build_graph(net), budget, max_devices);
}

}  // namespace qnn
