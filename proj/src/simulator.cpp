// SPDX-License-Identifier: Apache-2.0
#include "seqbal/simulator.hpp"

#include <cmath>

#include "seqbal/error.hpp"

namespace seqbal {

void ScenarioConfig::validate() const {
  model.validate();
  cost.validate();
  data.validate();
  if (world_size < 1) throw ConfigError("world_size must be >= 1");
  if (steps < 1) throw ConfigError("steps must be >= 1");
  if (world_size % data.group_size != 0) {
    throw ConfigError("world_size " + std::to_string(world_size) +
                      " is not a multiple of the data sharding group " +
                      std::to_string(data.group_size));
  }
  if (topology.has_value()) {
    replicate(*topology, world_size);  // checks divisibility
    for (const ComputeBag& bag : topology->bags) {
      if (model.shape.n_heads % bag.size() != 0) {
        throw ConfigError("bag of " + std::to_string(bag.size()) +
                          " GPUs does not divide n_heads " +
                          std::to_string(model.shape.n_heads));
      }
    }
  }
  if (payload_width < 1 || payload_width % model.shape.n_heads != 0) {
    throw ConfigError("payload_width must be a positive multiple of n_heads");
  }
}

namespace {

double relative_gap(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return scale > 0.0 ? std::abs(a - b) / scale : 0.0;
}

}  // namespace

StepResult simulate_step(const ScenarioConfig& config, std::int64_t step) {
  config.validate();

  std::vector<std::vector<SampleMeta>> batches(config.world_size);
  for (int r = 0; r < config.world_size; ++r) {
    batches[r] = next_batch(config.data, r, step, config.seed);
  }
  const auto seq_info = gather_sequence_info(batches);

  double input_workload = 0.0;
  double forward_flops = 0.0;
  std::int64_t total_tokens = 0;
  for (const auto& rank_seqs : seq_info) {
    for (const SequenceInfo& s : rank_seqs) {
      input_workload += gamma_weighted_workload(s.length, config.model);
      forward_flops += static_cast<double>(config.model.shape.n_blocks) *
                       flops_per_block(s.length, config.model.shape.d_model);
      total_tokens += s.length;
    }
  }

  RoutingPlan plan;
  BalanceReport report;
  const WorldLayout* layout_ptr = nullptr;
  WorldLayout layout;
  if (config.topology.has_value()) {
    layout = replicate(*config.topology, config.world_size);
    layout_ptr = &layout;
    PlanResult planned = plan_routing(seq_info, config.model, layout);
    plan = std::move(planned.plan);
    report = std::move(planned.report);
  } else {
    plan = identity_plan(seq_info);
    report.per_gpu_workload.assign(config.world_size, 0.0);
    for (int r = 0; r < config.world_size; ++r) {
      for (const SequenceInfo& s : seq_info[r]) {
        report.per_gpu_workload[r] += gamma_weighted_workload(s.length, config.model);
      }
    }
    report.total_workload = input_workload;
    report.wir = workload_imbalance_ratio(report.per_gpu_workload);
  }

  // Conservation: planning must neither create nor destroy work.
  double planned_workload = 0.0;
  for (double w : report.per_gpu_workload) planned_workload += w;
  if (relative_gap(planned_workload, input_workload) > 1e-9) {
    throw IntegrityError("workload not conserved by planning: input " +
                         std::to_string(input_workload) + ", planned " +
                         std::to_string(planned_workload));
  }

  ExchangeStats stats;
  if (config.verify) {
    const World world = make_world(batches, config.payload_width, config.model.shape.n_heads);
    const std::uint64_t original_checksum = content_checksum(world);

    World routed = route(world, plan, config.exec);
    ++stats.route_collectives;
    if (content_checksum(routed) != original_checksum) {
      throw IntegrityError("token content not conserved by route");
    }

    // One attention layout round-trip per multi-GPU bag stands in for the
    // per-block exchanges; costs are accounted per block below.
    if (layout_ptr != nullptr) {
      for (int rep = 0; rep < layout.num_replicas(); ++rep) {
        for (const ComputeBag& unit_bag : layout.unit.bags) {
          if (unit_bag.size() < 2) continue;
          const ComputeBag bag = global_bag(layout, rep, unit_bag.bag_id);
          const World before = routed;
          pre_attn(routed, bag, config.exec);
          if (content_checksum(routed) != original_checksum) {
            throw IntegrityError("token content not conserved by pre_attn");
          }
          post_attn(routed, bag, config.exec);
          if (!worlds_bitwise_equal(before, routed)) {
            throw IntegrityError("post_attn did not invert pre_attn");
          }
        }
      }
    }

    // Simulated transformer output: every row shifts by a deterministic
    // per-row delta. The reverse route must carry the mutated payload home.
    World mutated = routed;
    for (RankBuffer& buf : mutated.ranks) {
      for (std::int64_t r = 0; r < buf.num_rows(); ++r) {
        const double delta = block_perturbation(buf.sample_ids[r], buf.positions[r]);
        for (int c = 0; c < buf.width; ++c) buf.payload[r * buf.width + c] += delta;
      }
    }
    World returned = reverse_route(mutated, plan, config.exec);
    ++stats.reverse_collectives;

    World expected = world;
    for (RankBuffer& buf : expected.ranks) {
      for (std::int64_t r = 0; r < buf.num_rows(); ++r) {
        const double delta = block_perturbation(buf.sample_ids[r], buf.positions[r]);
        for (int c = 0; c < buf.width; ++c) buf.payload[r * buf.width + c] += delta;
      }
    }
    if (!worlds_bitwise_equal(returned, expected)) {
      throw IntegrityError("reverse route did not restore the original world");
    }
  } else {
    stats.route_collectives = 1;
    stats.reverse_collectives = 1;
  }

  bool any_multi_gpu_bag = false;
  if (layout_ptr != nullptr) {
    for (const ComputeBag& bag : layout.unit.bags) {
      if (bag.size() > 1) any_multi_gpu_bag = true;
    }
  }
  stats.intra_bag_exchange_phases =
      any_multi_gpu_bag ? 2LL * config.model.shape.n_blocks : 0;

  StepResult result;
  result.stats = stats;
  StepMetrics& m = result.metrics;
  m.per_gpu_workload = report.per_gpu_workload;
  m.wir = report.wir;
  CommBreakdown comm;
  m.fbl_s = estimate_fbl(report.per_gpu_workload, plan, config.model, config.cost,
                         layout_ptr, &comm);
  m.comm_s = comm.total_s;
  m.total_tokens = total_tokens;
  m.total_forward_flops = forward_flops;
  m.tps = tokens_per_second(total_tokens, m.fbl_s);
  m.hfu = hardware_flops_utilization(forward_flops, m.fbl_s, config.world_size, config.cost);
  return result;
}

RunSummary simulate_run(const ScenarioConfig& config) {
  RunSummary summary;
  for (int step = 0; step < config.steps; ++step) {
    StepResult r = simulate_step(config, step);
    summary.per_step.push_back(r.metrics);
    summary.stats_per_step = r.stats;
  }
  StepMetrics& mean = summary.mean;
  mean.wir = 0.0;  // override the default before accumulating
  for (const StepMetrics& m : summary.per_step) {
    mean.wir += m.wir;
    mean.fbl_s += m.fbl_s;
    mean.tps += m.tps;
    mean.hfu += m.hfu;
    mean.comm_s += m.comm_s;
    mean.total_tokens += m.total_tokens;
    mean.total_forward_flops += m.total_forward_flops;
  }
  const double n = static_cast<double>(summary.per_step.size());
  mean.wir /= n;
  mean.fbl_s /= n;
  mean.tps /= n;
  mean.hfu /= n;
  mean.comm_s /= n;
  mean.total_tokens = static_cast<std::int64_t>(mean.total_tokens / summary.per_step.size());
  mean.total_forward_flops /= n;
  return summary;
}

}  // namespace seqbal
