// SPDX-License-Identifier: Apache-2.0
//
// seqbal — token load-balancing planner and training-step simulator.
//
// Subcommands:
//   simulate        run scenario steps over one or more topologies
//   plan            build and print one routing plan from a seq-lens file
//   fit-gamma       fit (k, gamma) to a latency CSV
//   oracle-compare  greedy vs exhaustive-optimal quality report
//
// Exit codes: 0 ok, 1 config/parse error, 2 simulation invariant violation,
// 3 oracle quality failure.
#include <cmath>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "seqbal/balancer.hpp"
#include "seqbal/data_sim.hpp"
#include "seqbal/error.hpp"
#include "seqbal/exchange.hpp"
#include "seqbal/metrics.hpp"
#include "seqbal/rng.hpp"
#include "seqbal/simulator.hpp"
#include "seqbal/topology.hpp"
#include "seqbal/workload_model.hpp"

namespace {

using namespace seqbal;

std::string format_fixed(double v, int digits) {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(digits);
  out << v;
  return out.str();
}

std::string format_wir(double wir) {
  if (std::isinf(wir)) return "inf";
  return format_fixed(wir, 2);
}

std::string format_tps(double tps) { return format_fixed(tps / 1000.0, 2) + "K"; }

std::string format_hfu(double hfu) { return format_fixed(hfu * 100.0, 2) + "%"; }

struct SimulateOptions {
  std::string preset;
  std::string data_codes;
  std::string scenario_file;
  int group_size = 0;
  std::string topologies = "none,g1n32,g2n16,g4n8,g8n4";
  int world = 32;
  std::uint64_t seed = 0;
  int steps = 20;
  std::string gamma_preset = "h100";
  double gamma_override = 0.0;
  double k = 4.0e-15;
  int n_blocks = 57;
  int d_model = 3072;
  int n_heads = 24;
  double peak_flops = 989e12;
  double intra_bw = 400e9;
  double inter_bw = 50e9;
  int bytes_per_element = 2;
  int gpus_per_node = 8;
  int payload_width = 0;  // 0 = n_heads
  bool no_verify = false;
  bool serial = false;
  std::string format = "markdown";
};

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(text);
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

WorkloadModel model_from(const SimulateOptions& opt) {
  WorkloadModel model;
  if (opt.d_model % opt.n_heads != 0) {
    throw ConfigError("d_model must be divisible by n_heads");
  }
  model.shape = ModelShape{opt.d_model, opt.n_heads, opt.d_model / opt.n_heads, opt.n_blocks};
  if (opt.gamma_override > 0.0) {
    model.gamma = opt.gamma_override;
  } else if (opt.gamma_preset == "h100") {
    model.gamma = kGammaH100;
  } else if (opt.gamma_preset == "h100-fit") {
    model.gamma = kGammaH100LatencyFit;
  } else {
    throw ConfigError("unknown gamma preset '" + opt.gamma_preset +
                      "'; known: h100 (0.49), h100-fit (0.385)");
  }
  model.k = opt.k;
  model.validate();
  return model;
}

ShardingGroupConfig data_from(const SimulateOptions& opt) {
  int sources = 0;
  sources += !opt.preset.empty();
  sources += !opt.data_codes.empty();
  sources += !opt.scenario_file.empty();
  if (sources != 1) {
    throw ConfigError("specify exactly one of --preset, --data-codes, --scenario");
  }
  if (!opt.preset.empty()) return scenario_preset(opt.preset);
  if (!opt.scenario_file.empty()) return parse_scenario_file(opt.scenario_file);

  ShardingGroupConfig config;
  for (const std::string& code : split_list(opt.data_codes)) {
    config.streams.push_back(parse_data_code(code));
    config.group_size += config.streams.back().gpus;
  }
  if (opt.group_size > 0) config.group_size = opt.group_size;
  config.validate();
  return config;
}

struct TableRow {
  std::string topology;
  StepMetrics mean;
};

int cmd_simulate(const SimulateOptions& opt) {
  ScenarioConfig config;
  config.data = data_from(opt);
  config.world_size = opt.world;
  config.seed = opt.seed;
  config.steps = opt.steps;
  config.model = model_from(opt);
  config.cost.peak_flops = opt.peak_flops;
  config.cost.intra_node_bw = opt.intra_bw;
  config.cost.inter_node_bw = opt.inter_bw;
  config.cost.bytes_per_element = opt.bytes_per_element;
  config.cost.gpus_per_node = opt.gpus_per_node;
  config.payload_width = opt.payload_width > 0 ? opt.payload_width : opt.n_heads;
  config.verify = !opt.no_verify;
  config.exec = opt.serial ? Exec::Serial : Exec::Parallel;

  std::vector<TableRow> rows;
  for (const std::string& topo : split_list(opt.topologies)) {
    if (topo == "none") {
      config.topology.reset();
    } else {
      config.topology = parse_topology(topo);
    }
    config.validate();
    const RunSummary summary = simulate_run(config);
    rows.push_back({topo == "none" ? "w/o Balancer" : topo, summary.mean});
  }

  if (opt.format == "json") {
    nlohmann::json j;
    j["world_size"] = opt.world;
    j["seed"] = opt.seed;
    j["steps"] = opt.steps;
    j["gamma"] = config.model.gamma;
    j["rows"] = nlohmann::json::array();
    for (const TableRow& row : rows) {
      j["rows"].push_back({{"topology", row.topology},
                           {"wir", row.mean.wir},
                           {"fbl_s", row.mean.fbl_s},
                           {"tps", row.mean.tps},
                           {"hfu", row.mean.hfu},
                           {"comm_s", row.mean.comm_s},
                           {"total_tokens", row.mean.total_tokens}});
    }
    std::cout << j.dump(2) << "\n";
  } else if (opt.format == "csv") {
    std::cout << "topology,wir,fbl_s,tps,hfu,comm_s\n";
    for (const TableRow& row : rows) {
      std::cout << row.topology << "," << row.mean.wir << "," << row.mean.fbl_s << ","
                << row.mean.tps << "," << row.mean.hfu << "," << row.mean.comm_s << "\n";
    }
  } else {
    std::cout << "| Topology | WIR | FBL | TPS | HFU |\n";
    std::cout << "|---|---|---|---|---|\n";
    for (const TableRow& row : rows) {
      std::cout << "| " << row.topology << " | " << format_wir(row.mean.wir) << " | "
                << format_fixed(row.mean.fbl_s, 2) << "s | " << format_tps(row.mean.tps)
                << " | " << format_hfu(row.mean.hfu) << " |\n";
    }
  }
  return 0;
}

int cmd_plan(const std::string& lens_file, const std::string& topo, int d_model,
             int n_heads, double gamma) {
  std::ifstream in(lens_file);
  if (!in) throw ConfigError("cannot open seq-lens file: " + lens_file);
  nlohmann::json j = nlohmann::json::parse(in, nullptr, true, true);
  if (!j.is_array()) throw ConfigError("seq-lens file must be a JSON array of arrays");

  std::vector<std::vector<SequenceInfo>> per_rank;
  std::uint64_t id = 0;
  for (const auto& rank_lens : j) {
    if (!rank_lens.is_array()) throw ConfigError("each rank entry must be an array");
    std::vector<SequenceInfo> seqs;
    for (const auto& l : rank_lens) {
      const std::int64_t len = l.get<std::int64_t>();
      if (len < 0) throw ConfigError("sequence lengths must be >= 0");
      seqs.push_back({id++, len});
    }
    per_rank.push_back(std::move(seqs));
  }

  WorkloadModel model;
  if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
  model.shape = ModelShape{d_model, n_heads, d_model / n_heads, 1};
  model.gamma = gamma;

  const Topology topology = parse_topology(topo);
  const WorldLayout layout = replicate(topology, static_cast<int>(per_rank.size()));
  const PlanResult result = plan_routing(per_rank, model, layout);
  std::cout << plan_to_json(result.plan, result.report) << "\n";
  return 0;
}

int cmd_fit_gamma(const std::string& csv_path, int d_model, const std::string& out_path) {
  const auto samples = read_latency_csv_file(csv_path);
  const GammaFit fit = fit_gamma(samples, d_model);

  // One-parameter fit of t = k1 * flops for the uncorrected comparison curve.
  long double num = 0, den = 0;
  for (const auto& s : samples) {
    const long double w = flops_per_block(s.seq_len, d_model);
    num += w * s.latency_s;
    den += w * w;
  }
  const double k1 = static_cast<double>(num / den);

  std::cout << "k = " << fit.k << "\n";
  std::cout << "gamma = " << fit.gamma << "\n";
  std::cout << "r_squared = " << fit.r_squared << "\n";

  std::ostream* out = &std::cout;
  std::ofstream file;
  if (!out_path.empty()) {
    file.open(out_path);
    if (!file) throw ConfigError("cannot open output file: " + out_path);
    out = &file;
  }
  *out << "seq_len,measured_s,flops_model_s,gamma_model_s\n";
  for (const auto& s : samples) {
    const double d = static_cast<double>(d_model);
    const double l = static_cast<double>(s.seq_len);
    const double eq1 = k1 * flops_per_block(s.seq_len, d_model);
    const double eq2 = fit.k * (24.0 * l * d * d + fit.gamma * 4.0 * l * l * d);
    *out << s.seq_len << "," << s.latency_s << "," << eq1 << "," << eq2 << "\n";
  }
  return 0;
}

int cmd_oracle_compare(int trials, int n, int m, std::uint64_t seed) {
  if (n < 1 || n > 14) throw ConfigError("n must be in [1, 14]");
  if (m < 1 || m > 4) throw ConfigError("m must be in [1, 4]");
  if (trials < 1) throw ConfigError("trials must be >= 1");

  std::vector<ComputeBag> bags(m);
  for (int j = 0; j < m; ++j) {
    bags[j].bag_id = j;
    bags[j].gpu_ranks = {j};
  }

  CounterRng rng({seed});
  double ratio_sum = 0.0, ratio_max = 0.0;
  for (int t = 0; t < trials; ++t) {
    std::vector<double> w(n);
    for (double& x : w) x = static_cast<double>(rng.next_int(1, 100));

    std::vector<SequenceWorkload> items;
    for (std::size_t i = 0; i < w.size(); ++i) {
      items.push_back({static_cast<std::uint64_t>(i), w[i]});
    }
    std::vector<double> load(m, 0.0);
    for (const auto& a : assign_to_bags(items, bags)) load[a.assigned_bag] += a.workload;
    const double greedy = *std::max_element(load.begin(), load.end());
    const double optimal = brute_force_assign(w, std::vector<int>(m, 1)).max_per_gpu;
    const double ratio = greedy / optimal;
    ratio_sum += ratio;
    ratio_max = std::max(ratio_max, ratio);
  }

  std::cout << "trials = " << trials << ", n = " << n << ", m = " << m << "\n";
  std::cout << "mean greedy/optimal max-load ratio = " << ratio_sum / trials << "\n";
  std::cout << "max  greedy/optimal max-load ratio = " << ratio_max << "\n";
  if (ratio_max > 2.0) {
    std::cout << "FAIL: max ratio exceeds 2.0\n";
    return 3;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Token load-balancing planner and training-step simulator"};
  app.require_subcommand(1);

  SimulateOptions sim;
  CLI::App* simulate = app.add_subcommand("simulate", "Run simulated training steps");
  simulate->add_option("--preset", sim.preset,
                       "Scenario preset: lowres_image, mixed_image, joint_image_video");
  simulate->add_option("--data-codes", sim.data_codes, "Comma-separated data codes");
  simulate->add_option("--scenario", sim.scenario_file, "Scenario file path");
  simulate->add_option("--group-size", sim.group_size, "Override sharding group size");
  simulate->add_option("--topologies", sim.topologies,
                       "Comma-separated topology specs; 'none' disables balancing");
  simulate->add_option("--world", sim.world, "Number of simulated ranks");
  simulate->add_option("--seed", sim.seed, "RNG seed");
  simulate->add_option("--steps", sim.steps, "Steps per topology");
  simulate->add_option("--gamma-preset", sim.gamma_preset, "h100 (0.49) or h100-fit (0.385)");
  simulate->add_option("--gamma", sim.gamma_override, "Explicit gamma value");
  simulate->add_option("--k", sim.k, "Seconds per gamma-weighted FLOP");
  simulate->add_option("--blocks", sim.n_blocks, "Transformer block count");
  simulate->add_option("--d-model", sim.d_model, "Embedding width");
  simulate->add_option("--n-heads", sim.n_heads, "Attention head count");
  simulate->add_option("--peak-flops", sim.peak_flops, "Peak FLOP/s per GPU");
  simulate->add_option("--intra-bw", sim.intra_bw, "Intra-node bandwidth B/s");
  simulate->add_option("--inter-bw", sim.inter_bw, "Inter-node bandwidth B/s");
  simulate->add_option("--bytes-per-element", sim.bytes_per_element, "Payload element size");
  simulate->add_option("--gpus-per-node", sim.gpus_per_node, "Node width in ranks");
  simulate->add_option("--payload-dim", sim.payload_width,
                       "Witness payload width (default: n_heads)");
  simulate->add_flag("--no-verify", sim.no_verify, "Skip inline invariant checks");
  simulate->add_flag("--exec-serial", sim.serial, "Serial reference kernels");
  simulate->add_option("--format", sim.format, "markdown (default), json, csv");

  std::string plan_file, plan_topo;
  int plan_d_model = 3072, plan_heads = 24;
  double plan_gamma = kGammaH100;
  CLI::App* plan = app.add_subcommand("plan", "Plan routing for a seq-lens file");
  plan->add_option("lens-file", plan_file, "JSON array of per-rank length arrays")->required();
  plan->add_option("--topology", plan_topo, "Topology spec")->required();
  plan->add_option("--d-model", plan_d_model, "Embedding width");
  plan->add_option("--n-heads", plan_heads, "Attention head count");
  plan->add_option("--gamma", plan_gamma, "Gamma correction");

  std::string fit_csv, fit_out;
  int fit_d_model = 3072;
  CLI::App* fit = app.add_subcommand("fit-gamma", "Fit (k, gamma) to a latency CSV");
  fit->add_option("csv", fit_csv, "CSV with header seq_len,latency_s")->required();
  fit->add_option("--d-model", fit_d_model, "Embedding width");
  fit->add_option("--out", fit_out, "Write prediction CSV here instead of stdout");

  int oc_trials = 1000, oc_n = 8, oc_m = 2;
  std::uint64_t oc_seed = 0;
  CLI::App* oracle = app.add_subcommand("oracle-compare", "Greedy vs optimal quality");
  oracle->add_option("--trials", oc_trials, "Random instances");
  oracle->add_option("--n", oc_n, "Sequences per instance (<= 14)");
  oracle->add_option("--m", oc_m, "Single-GPU bags per instance (<= 4)");
  oracle->add_option("--seed", oc_seed, "RNG seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (simulate->parsed()) return cmd_simulate(sim);
    if (plan->parsed()) return cmd_plan(plan_file, plan_topo, plan_d_model, plan_heads, plan_gamma);
    if (fit->parsed()) return cmd_fit_gamma(fit_csv, fit_d_model, fit_out);
    if (oracle->parsed()) return cmd_oracle_compare(oc_trials, oc_n, oc_m, oc_seed);
  } catch (const IntegrityError& e) {
    std::cerr << "invariant violation: " << e.what() << "\n";
    return 2;
  } catch (const FitError& e) {
    std::cerr << "fit error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
