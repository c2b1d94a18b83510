#pragma once

// Executes a StageGraph: every stage is a node that fires whenever it has
// input and its output FIFOs have room. Elements carry logical timestamps,
// so the cycle accounting comes out the same whatever order (or thread) the
// nodes are fired in.

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <exception>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "qnnstream/error.hpp"
#include "qnnstream/fifo.hpp"
#include "qnnstream/graph.hpp"
#include "qnnstream/quant.hpp"
#include "qnnstream/stream.hpp"

namespace qnn {

/// Contiguous stage range [first, last] placed on one device.
struct DeviceRange {
  std::size_t first = 0;
  std::size_t last = 0;
};

using Partition = std::vector<DeviceRange>;

struct LinkReport {
  std::size_t boundary = 0;  // between device `boundary` and `boundary + 1`
  std::vector<int> edges;    // edges crossing this boundary
  double required_bps = 0.0;
  double capacity_bps = 0.0;
  bool pass = true;
};

struct PartitionReport {
  Partition devices;
  std::vector<LinkReport> links;
  double clock_mhz = 0.0;
  bool all_pass = true;
};

inline std::vector<int> device_of_stages(const StageGraph& g, const Partition& part) {
  if (part.empty()) throw PartitionError("partition has no devices");
  std::vector<int> dev(g.stages.size(), -1);
  std::size_t next = 0;
  for (std::size_t d = 0; d < part.size(); ++d) {
    const auto& r = part[d];
    if (r.first != next || r.last < r.first || r.last >= g.stages.size())
      throw PartitionError("device " + std::to_string(d) +
                           " range is not contiguous with the previous one");
    for (std::size_t s = r.first; s <= r.last; ++s) dev[s] = static_cast<int>(d);
    next = r.last + 1;
  }
  if (next != g.stages.size())
    throw PartitionError("partition does not cover every stage");
  return dev;
}

/// Bandwidth each daisy-chain link needs when elements cross it at one per
/// cycle: element bits x clock, summed over every edge crossing the link.
inline PartitionReport simulate_partition(const StageGraph& g, const Partition& part,
                                          double clock_mhz,
                                          double link_capacity_bps = 2e9) {
  if (!(clock_mhz > 0.0)) throw Error("clock must be positive");
  const auto dev = device_of_stages(g, part);
  PartitionReport rep;
  rep.devices = part;
  rep.clock_mhz = clock_mhz;
  for (std::size_t b = 0; b + 1 < part.size(); ++b) {
    LinkReport link;
    link.boundary = b;
    link.capacity_bps = link_capacity_bps;
    for (std::size_t e = 0; e < g.edges.size(); ++e) {
      const auto& ed = g.edges[e];
      if (ed.producer < 0 || ed.consumer < 0) continue;
      const int from = dev[ed.producer], to = dev[ed.consumer];
      if (from <= static_cast<int>(b) && to > static_cast<int>(b)) {
        link.edges.push_back(static_cast<int>(e));
        link.required_bps += ed.bits * clock_mhz * 1e6;
      }
    }
    link.pass = link.required_bps <= link.capacity_bps;
    rep.all_pass = rep.all_pass && link.pass;
    rep.links.push_back(std::move(link));
  }
  return rep;
}

struct FifoStats {
  std::string name;
  std::size_t capacity = 0;
  std::size_t max_occupancy = 0;
  std::size_t pushed = 0;
  std::size_t popped = 0;
};

struct RunOptions {
  CycleModel model;
  unsigned workers = 1;           // 1 = round-robin on the calling thread
  const Partition* partition = nullptr;
  std::uint64_t link_latency = 0;  // cycles added per device boundary crossed
};

struct RunResult {
  std::vector<PixelStream> outputs;
  CycleReport report;
  std::vector<FifoStats> fifos;
};

namespace detail {

struct OutLink {
  Fifo* fifo;
  std::uint64_t delay;
};

class Node {
 public:
  virtual ~Node() = default;
  virtual bool fire() = 0;
  virtual bool finished() const = 0;
  virtual std::string name() const = 0;
};

class Ports {
 public:
  std::vector<std::vector<OutLink>> ports;

  bool can_push(std::size_t port) const {
    for (const auto& l : ports[port])
      if (!l.fifo->can_push()) return false;
    return true;
  }
  std::uint64_t space_time(std::size_t port) const {
    std::uint64_t t = 0;
    for (const auto& l : ports[port]) t = std::max(t, l.fifo->space_time());
    return t;
  }
  void push(std::size_t port, std::int32_t v, std::uint64_t t) {
    for (const auto& l : ports[port]) l.fifo->push(Element{v, t + l.delay});
  }
};

// Timing bookkeeping shared by every stage kind.
struct Clock {
  std::uint64_t t = 0;
  StageCycles stats;
  bool emitted = false;

  void stall_until(std::uint64_t when) {
    if (when > t) {
      stats.wait += when - t;
      t = when;
    }
  }
  void work(std::uint64_t cycles) {
    t += cycles;
    stats.busy += cycles;
  }
  void on_emit() {
    if (!emitted) {
      emitted = true;
      stats.fill = stats.busy;
      stats.first_output = t;
    }
    stats.last_output = t;
  }
};

// Convolution and pooling: scan the (virtually) padded input depth-first,
// keep a line buffer, act at every valid window position.
class WindowNode final : public Node {
 public:
  WindowNode(const StageDesc& st, Fifo* in, Ports out, const CycleModel& m)
      : st_(st), in_(in), out_(std::move(out)), m_(m),
        lb_(st.line_buffer_elements()),
        positions_(st.in_positions()) {
    if (st_.kind == StageKind::Conv) {
      if (!st_.weights) throw ParamError("stage '" + st_.name + "' has no weights");
      if (st_.in_type.kind != ElementKind::Code)
        throw ShapeError("stage '" + st_.name + "' needs activation codes");
      planes_ = BitPlanes(st_.weights->entry_bits(), st_.in_type.bits);
    }
    clock_.stats.name = st_.name;
    clock_.stats.layer = st_.layer;
    update_position();
  }

  bool finished() const override { return done_; }
  std::string name() const override { return st_.name; }
  const StageCycles& stats() const { return clock_.stats; }

  bool fire() override {
    bool progress = false;
    const bool per_pixel = m_.cin == CinMode::Pixel;
    const int chans = st_.in.c;
    while (true) {
      if (phase_ == Phase::Compute) {
        if (!out_.can_push(0)) return progress;
        clock_.stall_until(out_.space_time(0));
        const std::int64_t acc = quantized_dot(st_.weights->entries[oc_], planes_);
        std::int32_t v;
        if (st_.thresholds)
          v = static_cast<std::int32_t>(
              apply_threshold(acc, st_.thresholds->channels[oc_]).code);
        else
          v = static_cast<std::int32_t>(check_width(acc, 16));
        clock_.work(m_.c_mac);
        clock_.on_emit();
        out_.push(0, v, clock_.t);
        progress = true;
        if (++oc_ == st_.out.c) phase_ = Phase::Consume;
        continue;
      }
      if (phase_ == Phase::Emit) {
        if (!out_.can_push(0)) return progress;
        clock_.stall_until(out_.space_time(0));
        clock_.on_emit();
        out_.push(0, pending_[pending_at_], clock_.t);
        progress = true;
        if (++pending_at_ == pending_.size()) phase_ = Phase::Consume;
        continue;
      }
      if (pos_ == positions_) {
        done_ = true;
        return progress;
      }
      if (is_pad_) {
        progress = true;
        if (per_pixel) {
          for (int c = 0; c < chans; ++c) lb_.push(st_.pad_value);
          clock_.work(1);
          finish_pixel();
          continue;
        }
        lb_.push(st_.pad_value);
        clock_.work(1);
        if (valid_ && st_.kind != StageKind::Conv) {
          pending_.assign(1, pool_value(ch_));
          pending_at_ = 0;
          phase_ = Phase::Emit;
        }
        if (++ch_ < chans) continue;
        ch_ = 0;
        finish_pixel();
        continue;
      }
      const auto e = in_->peek();
      if (!e) return progress;
      if (per_pixel) {
        if (ch_ == 0) pixel_ready_ = clock_.t;
        pixel_ready_ = std::max(pixel_ready_, e->time);
        in_->pop(std::max(clock_.t, e->time));
        lb_.push(e->value);
        progress = true;
        if (++ch_ < chans) continue;
        ch_ = 0;
        clock_.stall_until(pixel_ready_);
        clock_.work(1);
        finish_pixel();
      } else {
        clock_.stall_until(e->time);
        in_->pop(clock_.t);
        lb_.push(e->value);
        clock_.work(1);
        progress = true;
        if (valid_ && st_.kind != StageKind::Conv) {
          pending_.assign(1, pool_value(ch_));
          pending_at_ = 0;
          phase_ = Phase::Emit;
        }
        if (++ch_ < chans) continue;
        ch_ = 0;
        finish_pixel();
      }
    }
  }

 private:
  enum class Phase { Consume, Compute, Emit };

  void update_position() {
    if (pos_ >= positions_) return;
    const int wp = st_.padded_w();
    py_ = static_cast<int>(pos_ / wp);
    px_ = static_cast<int>(pos_ % wp);
    const int p = st_.p;
    is_pad_ = py_ < p || py_ >= p + st_.in.h || px_ < p || px_ >= p + st_.in.w;
    const int k = st_.k, s = st_.s;
    valid_ = py_ >= k - 1 && px_ >= k - 1 && (py_ - k + 1) % s == 0 &&
             (px_ - k + 1) % s == 0 && (py_ - k + 1) / s < st_.out.h &&
             (px_ - k + 1) / s < st_.out.w;
  }

  std::size_t window_index(int ky, int kx, int c) const {
    const std::size_t row = py_ - st_.k + 1 + ky;
    const std::size_t col = px_ - st_.k + 1 + kx;
    return (row * st_.padded_w() + col) * st_.in.c + c;
  }

  std::int32_t pool_value(int c) const {
    const int k = st_.k;
    if (st_.kind == StageKind::MaxPool) {
      std::int32_t best = lb_.at(window_index(0, 0, c));
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx)
          best = std::max(best, lb_.at(window_index(ky, kx, c)));
      return best;
    }
    std::int64_t sum = 0;
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) sum += lb_.at(window_index(ky, kx, c));
    return static_cast<std::int32_t>(round_half_away(sum, std::int64_t{k} * k));
  }

 public:
  static std::int64_t round_half_away(std::int64_t sum, std::int64_t n) {
    const std::int64_t mag = (2 * (sum < 0 ? -sum : sum) + n) / (2 * n);
    return sum < 0 ? -mag : mag;
  }

 private:
  // Called once all channels of the current padded position are in.
  void finish_pixel() {
    if (valid_) {
      if (st_.kind == StageKind::Conv) {
        const int k = st_.k, c_in = st_.in.c;
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx)
            for (int c = 0; c < c_in; ++c)
              planes_.set_code(WeightBlock::index(ky, kx, c, k, c_in),
                               static_cast<std::uint32_t>(lb_.at(window_index(ky, kx, c))));
        oc_ = 0;
        phase_ = Phase::Compute;
      } else if (m_.cin == CinMode::Pixel) {
        pending_.resize(st_.in.c);
        for (int c = 0; c < st_.in.c; ++c) pending_[c] = pool_value(c);
        pending_at_ = 0;
        phase_ = Phase::Emit;
      }
    }
    ++pos_;
    update_position();
  }

  const StageDesc& st_;
  Fifo* in_;
  Ports out_;
  CycleModel m_;
  LineBuffer<std::int32_t> lb_;
  std::uint64_t positions_;
  std::uint64_t pos_ = 0;
  int py_ = 0, px_ = 0;
  bool is_pad_ = false, valid_ = false;
  int ch_ = 0;
  std::uint64_t pixel_ready_ = 0;
  Phase phase_ = Phase::Consume;
  int oc_ = 0;
  BitPlanes planes_;
  std::vector<std::int32_t> pending_;
  std::size_t pending_at_ = 0;
  bool done_ = false;
  Clock clock_;

 public:
  const Clock& clock() const { return clock_; }
};

// Residual adder: conv output + delayed skip, then split into the raw sum
// (skip path, port 1) and its activation (regular path, port 0).
class AddNode final : public Node {
 public:
  AddNode(const StageDesc& st, Fifo* conv, Fifo* skip, Ports out, const CycleModel& m)
      : st_(st), conv_(conv), skip_(skip), out_(std::move(out)), m_(m),
        total_(st.out.elements()) {
    if (!st_.thresholds) throw ParamError("stage '" + st_.name + "' has no thresholds");
    clock_.stats.name = st_.name;
    clock_.stats.layer = st_.layer;
    sums_.resize(st_.out.c);
  }

  bool finished() const override { return done_ >= total_; }
  std::string name() const override { return st_.name; }
  const Clock& clock() const { return clock_; }

  bool fire() override {
    bool progress = false;
    const bool per_pixel = m_.cin == CinMode::Pixel;
    const int chans = st_.out.c;
    const bool has_skip_port = out_.ports.size() > 1;
    while (true) {
      if (emitting_ < pending_) {
        const auto c = static_cast<int>((done_) % chans);
        if (!out_.can_push(0) || (has_skip_port && !out_.can_push(1))) return progress;
        std::uint64_t when = out_.space_time(0);
        if (has_skip_port) when = std::max(when, out_.space_time(1));
        clock_.stall_until(when);
        const std::int32_t sum = sums_[c];
        clock_.on_emit();
        out_.push(0, static_cast<std::int32_t>(
                         apply_threshold(sum, st_.thresholds->channels[c]).code),
                  clock_.t);
        if (has_skip_port) out_.push(1, sum, clock_.t);
        ++emitting_;
        ++done_;
        progress = true;
        continue;
      }
      if (done_ >= total_) return progress;
      emitting_ = pending_ = 0;
      const auto ce = conv_->peek();
      const auto se = skip_->peek();
      if (!ce || !se) return progress;
      const std::uint64_t lead = std::max(clock_.t, ce->time);
      if (se->time > lead) clock_.stats.skip_wait += se->time - lead;
      const std::uint64_t ready = std::max(lead, se->time);
      const int c = static_cast<int>((done_ + ch_) % chans);
      sums_[c] = static_cast<std::int32_t>(
          check_width(std::int64_t{ce->value} + se->value, 16));
      progress = true;
      if (per_pixel) {
        if (ch_ == 0) pixel_ready_ = clock_.t;
        pixel_ready_ = std::max(pixel_ready_, ready);
        conv_->pop(ready);
        skip_->pop(ready);
        if (++ch_ < chans) continue;
        ch_ = 0;
        clock_.stall_until(pixel_ready_);
        clock_.work(1);
        pending_ = chans;
      } else {
        clock_.stall_until(ready);
        conv_->pop(clock_.t);
        skip_->pop(clock_.t);
        clock_.work(1);
        pending_ = 1;
      }
    }
  }

 private:
  const StageDesc& st_;
  Fifo* conv_;
  Fifo* skip_;
  Ports out_;
  CycleModel m_;
  std::size_t total_;
  std::size_t done_ = 0;
  std::size_t pending_ = 0, emitting_ = 0;
  int ch_ = 0;
  std::uint64_t pixel_ready_ = 0;
  std::vector<std::int32_t> sums_;
  Clock clock_;
};

class SourceNode final : public Node {
 public:
  SourceNode(const PixelStream& data, Ports out, std::string name)
      : data_(data), out_(std::move(out)), name_(std::move(name)) {}
  bool finished() const override { return next_ == data_.data.size(); }
  std::string name() const override { return name_; }
  bool fire() override {
    bool progress = false;
    while (next_ < data_.data.size() && out_.can_push(0)) {
      out_.push(0, data_.data[next_++], out_.space_time(0));
      progress = true;
    }
    return progress;
  }

 private:
  const PixelStream& data_;
  Ports out_;
  std::string name_;
  std::size_t next_ = 0;
};

class SinkNode final : public Node {
 public:
  SinkNode(Fifo* in, std::size_t expected, std::string name)
      : in_(in), expected_(expected), name_(std::move(name)) {
    values_.reserve(expected);
  }
  bool finished() const override { return values_.size() == expected_; }
  std::string name() const override { return name_; }
  bool fire() override {
    bool progress = false;
    while (auto e = in_->peek()) {
      in_->pop(e->time);
      values_.push_back(e->value);
      last_time_ = std::max(last_time_, e->time);
      progress = true;
    }
    return progress;
  }
  std::vector<std::int32_t>& values() { return values_; }
  std::uint64_t last_time() const { return last_time_; }

 private:
  Fifo* in_;
  std::size_t expected_;
  std::string name_;
  std::vector<std::int32_t> values_;
  std::uint64_t last_time_ = 0;
};

inline std::vector<std::string> unfinished(const std::vector<std::unique_ptr<Node>>& nodes) {
  std::vector<std::string> names;
  for (const auto& n : nodes)
    if (!n->finished()) names.push_back(n->name());
  return names;
}

inline std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (const auto& x : v) s += (s.empty() ? "" : ", ") + x;
  return s;
}

inline void run_sequential(std::vector<std::unique_ptr<Node>>& nodes) {
  while (true) {
    bool progress = false;
    bool all_done = true;
    for (auto& n : nodes) {
      progress = n->fire() || progress;
      all_done = all_done && n->finished();
    }
    if (all_done) return;
    if (!progress) {
      auto blocked = unfinished(nodes);
      throw DeadlockError("pipeline deadlock, blocked: " + join(blocked), blocked);
    }
  }
}

// Each worker fires its own subset of nodes. A worker that completes a full
// pass without progress parks until some other worker makes progress; when
// every worker is parked at the same epoch nothing can ever fire again.
inline void run_parallel(std::vector<std::unique_ptr<Node>>& nodes, unsigned workers) {
  std::mutex m;
  std::condition_variable cv;
  std::uint64_t epoch = 0;
  unsigned idle = 0;
  bool stop = false, deadlock = false;
  std::exception_ptr failure;

  auto worker = [&](unsigned id) {
    try {
      while (true) {
        std::uint64_t seen;
        {
          std::lock_guard lk(m);
          if (stop) return;
          seen = epoch;
        }
        bool progress = false;
        for (std::size_t i = id; i < nodes.size(); i += workers)
          progress = nodes[i]->fire() || progress;
        std::unique_lock lk(m);
        if (progress) {
          ++epoch;
          idle = 0;
          cv.notify_all();
          continue;
        }
        if (epoch != seen) continue;
        if (++idle == workers) {
          bool all = true;
          for (const auto& n : nodes) all = all && n->finished();
          deadlock = !all;
          stop = true;
          cv.notify_all();
          return;
        }
        cv.wait(lk, [&] { return stop || epoch != seen; });
        if (stop) return;
      }
    } catch (...) {
      std::lock_guard lk(m);
      if (!failure) failure = std::current_exception();
      stop = true;
      cv.notify_all();
    }
  };

  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker, w);
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
  if (deadlock) {
    auto blocked = unfinished(nodes);
    throw DeadlockError("pipeline deadlock, blocked: " + join(blocked), blocked);
  }
}

}  // namespace detail

inline void validate_stream(const PixelStream& s, const EdgeDesc& e) {
  if (s.shape.elements() != e.shape.elements() || s.data.size() != e.shape.elements())
    throw ShapeError("input for '" + e.name + "' has shape " + to_string(s.shape) +
                     ", expected " + to_string(e.shape));
  if (e.type.kind == ElementKind::Code) {
    const std::int64_t limit = std::int64_t{1} << e.type.bits;
    for (std::size_t i = 0; i < s.data.size(); ++i)
      if (s.data[i] < 0 || s.data[i] >= limit)
        throw ShapeError("input element " + std::to_string(i) + " = " +
                         std::to_string(s.data[i]) + " out of range for " +
                         std::to_string(e.type.bits) + "-bit codes");
  }
}

/// Streams `inputs` through the graph. Outputs are the host-drained edges in
/// graph order. The cycle report is identical for any worker count.
inline RunResult run(const StageGraph& g, std::span<const PixelStream> inputs,
                     const RunOptions& opt = {}) {
  if (inputs.size() != g.inputs.size())
    throw ShapeError("graph takes " + std::to_string(g.inputs.size()) +
                     " input streams, got " + std::to_string(inputs.size()));
  for (std::size_t i = 0; i < inputs.size(); ++i)
    for (int e : g.inputs[i]) validate_stream(inputs[i], g.edges[e]);

  std::vector<int> dev;
  std::size_t devices = 1;
  if (opt.partition) {
    dev = device_of_stages(g, *opt.partition);
    devices = opt.partition->size();
  }

  std::vector<std::unique_ptr<Fifo>> fifos;
  fifos.reserve(g.edges.size());
  for (const auto& e : g.edges)
    fifos.push_back(std::make_unique<Fifo>(e.capacity, e.bits, e.name));

  auto delay_of = [&](int edge) -> std::uint64_t {
    const auto& e = g.edges[edge];
    if (dev.empty() || e.producer < 0 || e.consumer < 0) return 0;
    return static_cast<std::uint64_t>(dev[e.consumer] - dev[e.producer]) * opt.link_latency;
  };
  auto ports_of = [&](const std::vector<std::vector<int>>& outs) {
    detail::Ports p;
    for (const auto& port : outs) {
      std::vector<detail::OutLink> links;
      for (int e : port) links.push_back({fifos[e].get(), delay_of(e)});
      p.ports.push_back(std::move(links));
    }
    return p;
  };

  std::vector<std::unique_ptr<detail::Node>> nodes;
  for (std::size_t i = 0; i < g.inputs.size(); ++i) {
    detail::Ports p;
    std::vector<detail::OutLink> links;
    for (int e : g.inputs[i]) links.push_back({fifos[e].get(), 0});
    p.ports.push_back(std::move(links));
    nodes.push_back(std::make_unique<detail::SourceNode>(
        inputs[i], std::move(p), "host-in" + std::to_string(i)));
  }
  std::vector<const detail::Clock*> clocks;
  for (const auto& st : g.stages) {
    if (st.kind == StageKind::Add) {
      auto n = std::make_unique<detail::AddNode>(st, fifos[st.inputs.at(0)].get(),
                                                 fifos[st.inputs.at(1)].get(),
                                                 ports_of(st.outputs), opt.model);
      clocks.push_back(&n->clock());
      nodes.push_back(std::move(n));
    } else {
      auto n = std::make_unique<detail::WindowNode>(st, fifos[st.inputs.at(0)].get(),
                                                    ports_of(st.outputs), opt.model);
      clocks.push_back(&n->clock());
      nodes.push_back(std::move(n));
    }
  }
  std::vector<detail::SinkNode*> sinks;
  for (std::size_t i = 0; i < g.outputs.size(); ++i) {
    const auto& e = g.edges[g.outputs[i]];
    auto n = std::make_unique<detail::SinkNode>(fifos[g.outputs[i]].get(),
                                                e.shape.elements(),
                                                "host-out" + std::to_string(i));
    sinks.push_back(n.get());
    nodes.push_back(std::move(n));
  }

  if (opt.workers <= 1)
    detail::run_sequential(nodes);
  else
    detail::run_parallel(nodes, std::min<unsigned>(opt.workers, nodes.size()));

  RunResult res;
  for (std::size_t i = 0; i < g.outputs.size(); ++i) {
    const auto& e = g.edges[g.outputs[i]];
    res.outputs.emplace_back(e.shape, e.type, std::move(sinks[i]->values()));
    res.report.makespan = std::max(res.report.makespan, sinks[i]->last_time());
  }
  res.report.model = opt.model;
  res.report.link_latency = (devices - 1) * opt.link_latency;
  for (const auto* c : clocks) res.report.stages.push_back(c->stats);
  finalize_totals(res.report);
  for (std::size_t e = 0; e < fifos.size(); ++e)
    res.fifos.push_back({g.edges[e].name, fifos[e]->capacity(), fifos[e]->max_occupancy(),
                         fifos[e]->pushed(), fifos[e]->popped()});
  return res;
}

inline RunResult run(const StageGraph& g, const PixelStream& input,
                     const RunOptions& opt = {}) {
  return run(g, std::span<const PixelStream>(&input, 1), opt);
}

}  // namespace qnn
