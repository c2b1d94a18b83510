// qnnstream: run, estimate, partition and check streaming QNN pipelines.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <iterator>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "qnnstream/qnnstream.hpp"

namespace {

using nlohmann::ordered_json;

constexpr double kReferenceCycles = 1.85e6;

struct Config {
  std::string net;
  std::string params;
  std::string image;
  std::vector<int> image_dims;
  std::vector<double> clocks{105.0};
  std::string cin_mode = "pixel";
  double link_gbps = 2.0;
  std::size_t max_devices = 8;
  std::uint64_t budget_bram = qnn::DeviceBudget{}.bram_blocks;
  std::uint64_t budget_ff = qnn::DeviceBudget{}.ff_bits;
  std::size_t devices = 0;
  std::string format = "human";
  unsigned workers = 1;
  int perturb_layer = -1;
  std::uint64_t seed = 1;
  std::string out;
};

std::vector<std::uint8_t> read_file(const std::string& path, const char* what) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw qnn::Error(std::string("cannot read ") + what + " file '" + path + "'");
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw qnn::Error("cannot write '" + path + "'");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

qnn::NetworkSpec load_net(const std::string& arg) {
  if (arg.empty()) throw qnn::Error("--net is required");
  std::ifstream f(arg);
  if (f) {
    std::stringstream ss;
    ss << f.rdbuf();
    return qnn::parse_netdesc(ss.str(), arg);
  }
  try {
    return qnn::builtin_network(arg);
  } catch (const qnn::Error&) {
    throw qnn::Error("cannot read network file '" + arg + "' (and it is not a builtin name)");
  }
}

qnn::CycleModel model_of(const Config& c) {
  qnn::CycleModel m;
  m.cin = c.cin_mode == "element" ? qnn::CinMode::Element : qnn::CinMode::Pixel;
  return m;
}

qnn::PixelStream load_image(const Config& c, const qnn::NetworkSpec& net) {
  if (c.image.empty()) throw qnn::Error("--image is required");
  if (c.image_dims.size() != 3) throw qnn::Error("--image-dims needs H W C");
  const qnn::Shape dims{c.image_dims[0], c.image_dims[1], c.image_dims[2]};
  if (dims != net.input_shape())
    throw qnn::ShapeError("image dims " + qnn::to_string(dims) + " do not match network input " +
                          qnn::to_string(net.input_shape()));
  const auto bytes = read_file(c.image, "image");
  if (bytes.size() != dims.elements())
    throw qnn::ShapeError("image file '" + c.image + "' has " + std::to_string(bytes.size()) +
                          " bytes, expected " + std::to_string(dims.elements()));
  std::vector<std::int32_t> v(bytes.begin(), bytes.end());
  const auto t = net.types.front();
  for (std::size_t i = 0; i < v.size(); ++i)
    if (v[i] >= (1 << t.bits))
      throw qnn::ShapeError("image byte " + std::to_string(i) + " exceeds " +
                            std::to_string(t.bits) + "-bit input range");
  return qnn::PixelStream(dims, t, std::move(v));
}

qnn::NetworkParams load_params_file(const Config& c, const qnn::NetworkSpec& net) {
  if (c.params.empty()) throw qnn::Error("--params is required");
  return qnn::load_params(read_file(c.params, "params"), net);
}

int argmax(const std::vector<std::int32_t>& v) {
  return v.empty() ? 0 : static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::string fmt(double v, int prec) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

ordered_json stages_json(const qnn::CycleReport& r) {
  ordered_json a = ordered_json::array();
  for (const auto& s : r.stages)
    a.push_back({{"name", s.name}, {"busy", s.busy}, {"fill", s.fill}, {"stall", s.stall}});
  return a;
}

void print_stages(const qnn::CycleReport& r) {
  std::printf("%-14s %12s %10s %12s\n", "stage", "busy", "fill", "stall");
  for (const auto& s : r.stages)
    std::printf("%-14s %12llu %10llu %12llu\n", s.name.c_str(),
                static_cast<unsigned long long>(s.busy), static_cast<unsigned long long>(s.fill),
                static_cast<unsigned long long>(s.stall));
}

int cmd_run(const Config& c) {
  const auto net = load_net(c.net);
  const auto params = load_params_file(c, net);
  const auto image = load_image(c, net);
  const auto g = qnn::build_graph(net, &params);
  qnn::RunOptions opt;
  opt.model = model_of(c);
  opt.workers = c.workers;
  const auto res = qnn::run(g, image, opt);
  const double clock = c.clocks.front();
  const int cls = argmax(res.outputs.front().data);
  if (c.format == "json") {
    ordered_json j;
    j["class"] = cls;
    j["stages"] = stages_json(res.report);
    j["total_cycles"] = res.report.total;
    j["wall_ms"] = res.report.wall_ms(clock);
    std::cout << j.dump() << "\n";
    return 0;
  }
  std::printf("network: %s\nclass: %d\n", net.name.c_str(), cls);
  print_stages(res.report);
  std::printf("total cycles: %llu\nwall time at %s MHz: %s ms\n",
              static_cast<unsigned long long>(res.report.total), fmt(clock, 1).c_str(),
              fmt(res.report.wall_ms(clock), 3).c_str());
  return 0;
}

int cmd_estimate(const Config& c) {
  const auto net = load_net(c.net);
  const auto m = model_of(c);
  const auto g = qnn::build_graph(net);
  const auto r = qnn::estimate_cycles(g, m);
  const auto res = qnn::estimate_resources(g);
  const bool calibrate = net.name == "resnet18";
  const double delta = (static_cast<double>(r.total) - kReferenceCycles) / kReferenceCycles * 100.0;
  if (c.format == "json") {
    ordered_json j;
    j["network"] = net.name;
    j["cin_mode"] = c.cin_mode;
    j["c_mac"] = m.c_mac;
    j["stages"] = stages_json(r);
    j["total_cycles"] = r.total;
    j["bottleneck"] = r.stages.empty() ? "" : r.stages[r.bottleneck].name;
    ordered_json sweep = ordered_json::array();
    for (double clk : c.clocks) sweep.push_back({{"clock_mhz", clk}, {"wall_ms", r.wall_ms(clk)}});
    j["wall_ms"] = sweep;
    j["resources"] = {{"weight_bits", res.weight_raw_bits},
                      {"bn_bits", res.bn_bits},
                      {"line_buffer_bits", res.line_buffer_bits},
                      {"skip_buffer_bits", res.skip_buffer_bits},
                      {"bram_blocks", res.bram_blocks},
                      {"bram_kbits", res.bram_bits() / 1024}};
    if (calibrate) j["calibration"] = {{"target_cycles", kReferenceCycles}, {"delta_pct", delta}};
    std::cout << j.dump() << "\n";
    return 0;
  }
  std::printf("network: %s (cin=%s, c_mac=%llu)\n", net.name.c_str(), c.cin_mode.c_str(),
              static_cast<unsigned long long>(m.c_mac));
  print_stages(r);
  std::printf("total cycles: %llu (bottleneck %s)\n", static_cast<unsigned long long>(r.total),
              r.stages.empty() ? "-" : r.stages[r.bottleneck].name.c_str());
  for (double clk : c.clocks)
    std::printf("wall time at %s MHz: %s ms\n", fmt(clk, 1).c_str(), fmt(r.wall_ms(clk), 3).c_str());
  if (calibrate)
    std::printf("calibration: %llu vs 1.85e6 cycles, delta %+.1f%%\n",
                static_cast<unsigned long long>(r.total), delta);
  std::printf("resources: weights %llu bits, bn %llu bits, line buffers %llu FF bits, "
              "skip buffers %llu bits, %llu BRAM blocks (%llu Kbits)\n",
              static_cast<unsigned long long>(res.weight_raw_bits),
              static_cast<unsigned long long>(res.bn_bits),
              static_cast<unsigned long long>(res.line_buffer_bits),
              static_cast<unsigned long long>(res.skip_buffer_bits),
              static_cast<unsigned long long>(res.bram_blocks),
              static_cast<unsigned long long>(res.bram_bits() / 1024));
  return 0;
}

int cmd_partition(const Config& c) {
  const auto net = load_net(c.net);
  const auto g = qnn::build_graph(net);
  const qnn::DeviceBudget budget{c.budget_bram, c.budget_ff, qnn::DeviceBudget{}.alm_count};
  const auto part = c.devices ? qnn::partition_balanced(g, budget, c.devices)
                              : qnn::partition_network(g, budget, c.max_devices);
  const double clock = c.clocks.front();
  const auto rep = qnn::simulate_partition(g, part, clock, c.link_gbps * 1e9);
  const auto res = qnn::estimate_resources(g);
  if (c.format == "json") {
    ordered_json j;
    j["network"] = net.name;
    ordered_json devs = ordered_json::array();
    for (const auto& d : part) {
      const auto l = qnn::device_load(res, d);
      devs.push_back({{"first", g.stages[d.first].name},
                      {"last", g.stages[d.last].name},
                      {"bram_blocks", l.bram_blocks},
                      {"ff_bits", l.ff_bits}});
    }
    j["devices"] = devs;
    ordered_json links = ordered_json::array();
    for (const auto& l : rep.links)
      links.push_back({{"boundary", l.boundary},
                       {"required_mbps", l.required_bps / 1e6},
                       {"capacity_mbps", l.capacity_bps / 1e6},
                       {"pass", l.pass}});
    j["links"] = links;
    j["all_pass"] = rep.all_pass;
    std::cout << j.dump() << "\n";
  } else {
    std::printf("network: %s, %zu device(s)\n", net.name.c_str(), part.size());
    for (std::size_t d = 0; d < part.size(); ++d) {
      const auto l = qnn::device_load(res, part[d]);
      std::printf("device %zu: %s .. %s  BRAM %llu/%llu blocks, FF %llu/%llu bits\n", d,
                  g.stages[part[d].first].name.c_str(), g.stages[part[d].last].name.c_str(),
                  static_cast<unsigned long long>(l.bram_blocks),
                  static_cast<unsigned long long>(budget.bram_blocks),
                  static_cast<unsigned long long>(l.ff_bits),
                  static_cast<unsigned long long>(budget.ff_bits));
    }
    for (const auto& l : rep.links)
      std::printf("link %zu->%zu: %s Mbps required, %s Mbps capacity, %s\n", l.boundary,
                  l.boundary + 1, fmt(l.required_bps / 1e6, 1).c_str(),
                  fmt(l.capacity_bps / 1e6, 1).c_str(), l.pass ? "PASS" : "FAIL");
  }
  return rep.all_pass ? 0 : 2;
}

int cmd_compare(const Config& c) {
  const auto net = load_net(c.net);
  const auto params = load_params_file(c, net);
  const auto image = load_image(c, net);
  auto engine_params = params;
  if (c.perturb_layer >= 0) {
    if (static_cast<std::size_t>(c.perturb_layer) >= net.layers.size() ||
        !engine_params.layers[c.perturb_layer].weights)
      throw qnn::Error("--perturb-layer " + std::to_string(c.perturb_layer) +
                       " has no weights");
    auto& e = engine_params.layers[c.perturb_layer].weights->entries.front();
    for (std::size_t i = 0; i < e.size(); ++i) e.set(i, !e.get(i));
  }
  const auto g = qnn::build_graph(net, &engine_params);
  qnn::RunOptions opt;
  opt.model = model_of(c);
  opt.workers = c.workers;
  const auto res = qnn::run(g, image, opt);
  const auto ref = qnn::dense_infer(
      net, params, qnn::DenseTensor(image.shape.h, image.shape.w, image.shape.c, image.data));
  const auto& got = res.outputs.front().data;
  const auto& want = ref.output.v;
  std::size_t first = 0;
  while (first < got.size() && first < want.size() && got[first] == want[first]) ++first;
  const bool match = first == got.size() && got.size() == want.size();
  if (c.format == "json") {
    ordered_json j;
    j["verdict"] = match ? "MATCH" : "MISMATCH";
    j["elements"] = want.size();
    if (!match)
      j["first_mismatch"] = {{"index", first},
                             {"engine", first < got.size() ? got[first] : 0},
                             {"oracle", first < want.size() ? want[first] : 0}};
    std::cout << j.dump() << "\n";
  } else if (match) {
    std::printf("MATCH (%zu elements)\n", want.size());
  } else {
    std::printf("MISMATCH at element %zu: engine %d, oracle %d\n", first,
                first < got.size() ? got[first] : 0, first < want.size() ? want[first] : 0);
  }
  return match ? 0 : 2;
}

int cmd_genparams(const Config& c) {
  const auto net = load_net(c.net);
  if (c.out.empty()) throw qnn::Error("--out is required");
  const auto blob = qnn::write_params_blob(qnn::random_raw_params(net, c.seed));
  write_file(c.out, blob);
  std::printf("wrote %zu bytes to %s\n", blob.size(), c.out.c_str());
  return 0;
}

int cmd_genimage(const Config& c) {
  if (c.image_dims.size() != 3) throw qnn::Error("--image-dims needs H W C");
  if (c.out.empty()) throw qnn::Error("--out is required");
  std::mt19937_64 rng(c.seed);
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(c.image_dims[0]) * c.image_dims[1] *
                                  c.image_dims[2]);
  for (auto& b : bytes) b = static_cast<std::uint8_t>(rng() & 0xff);
  write_file(c.out, bytes);
  std::printf("wrote %zu bytes to %s\n", bytes.size(), c.out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Streaming quantized neural network model"};
  app.require_subcommand(1);
  Config c;

  auto net_opt = [&](CLI::App* s) {
    s->add_option("--net", c.net, "network description file or builtin name")->required();
  };
  auto model_opts = [&](CLI::App* s) {
    s->add_option("--cin-mode", c.cin_mode, "input cost per pixel or per channel element")
        ->check(CLI::IsMember({"pixel", "element"}));
    s->add_option("--format", c.format)->check(CLI::IsMember({"human", "json"}));
  };
  auto clock_opt = [&](CLI::App* s, bool many) {
    auto* o = s->add_option("--clock-mhz", c.clocks, "clock frequency in MHz")
                  ->check(CLI::PositiveNumber);
    if (!many) o->expected(1);
  };
  auto data_opts = [&](CLI::App* s) {
    s->add_option("--params", c.params, "parameter blob")->required();
    s->add_option("--image", c.image, "raw 8-bit image, channel fastest")->required();
    s->add_option("--image-dims", c.image_dims, "H W C")->expected(3)->required();
    s->add_option("--workers", c.workers, "engine worker threads")->check(CLI::PositiveNumber);
  };

  auto* run = app.add_subcommand("run", "stream one image through the pipeline");
  net_opt(run);
  data_opts(run);
  model_opts(run);
  clock_opt(run, false);

  auto* est = app.add_subcommand("estimate", "analytic cycle and resource estimate");
  net_opt(est);
  model_opts(est);
  clock_opt(est, true);

  auto* part = app.add_subcommand("partition", "split the pipeline across devices");
  net_opt(part);
  clock_opt(part, false);
  part->add_option("--format", c.format)->check(CLI::IsMember({"human", "json"}));
  part->add_option("--link-gbps", c.link_gbps)->check(CLI::PositiveNumber);
  part->add_option("--max-devices", c.max_devices)->check(CLI::PositiveNumber);
  part->add_option("--budget-bram", c.budget_bram, "M20K blocks per device")
      ->check(CLI::PositiveNumber);
  part->add_option("--budget-ff", c.budget_ff, "flip-flop bits per device")
      ->check(CLI::PositiveNumber);
  part->add_option("--devices", c.devices, "force this many devices")
      ->check(CLI::PositiveNumber);

  auto* cmp = app.add_subcommand("compare", "check the pipeline against the dense reference");
  net_opt(cmp);
  data_opts(cmp);
  model_opts(cmp);
  cmp->add_option("--perturb-layer", c.perturb_layer,
                  "invert the first filter of this layer in the pipeline copy");

  auto* gp = app.add_subcommand("genparams", "write random parameters for a network");
  net_opt(gp);
  gp->add_option("--seed", c.seed);
  gp->add_option("--out", c.out)->required();

  auto* gi = app.add_subcommand("genimage", "write a random raw image");
  gi->add_option("--image-dims", c.image_dims, "H W C")->expected(3)->required();
  gi->add_option("--seed", c.seed);
  gi->add_option("--out", c.out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*run) return cmd_run(c);
    if (*est) return cmd_estimate(c);
    if (*part) return cmd_partition(c);
    if (*cmp) return cmd_compare(c);
    if (*gp) return cmd_genparams(c);
    if (*gi) return cmd_genimage(c);
  } catch (const qnn::PartitionError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
