// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "seqbal/balancer.hpp"
#include "seqbal/data_sim.hpp"
#include "seqbal/exchange.hpp"
#include "seqbal/metrics.hpp"
#include "seqbal/topology.hpp"
#include "seqbal/workload_model.hpp"

namespace seqbal {

struct ScenarioConfig {
  std::optional<Topology> topology;  // nullopt = no balancer
  ShardingGroupConfig data;
  int world_size = 32;
  std::uint64_t seed = 0;
  int steps = 20;
  WorkloadModel model;
  CostModel cost;
  int payload_width = 24;  // witness width; multiple of model.shape.n_heads
  Exec exec = Exec::Parallel;
  bool verify = true;  // inline conservation + reversibility checks

  void validate() const;  // throws ConfigError
};

// Collective counts implied by one step's plan. Ulysses phases count 2 per
// transformer block when at least one bag has more than one GPU.
struct ExchangeStats {
  int route_collectives = 0;
  int reverse_collectives = 0;
  std::int64_t intra_bag_exchange_phases = 0;
};

struct StepResult {
  StepMetrics metrics;
  ExchangeStats stats;
};

// One training step: generate batches, plan, route, run the attention
// layout transform once per multi-GPU bag (cost accounted per block),
// reverse-route, and score the step. With verify on, token conservation
// and bit-exact reversibility are checked inline; violations raise
// IntegrityError.
StepResult simulate_step(const ScenarioConfig& config, std::int64_t step);

// Convenience: metrics averaged over config.steps steps.
struct RunSummary {
  StepMetrics mean;
  std::vector<StepMetrics> per_step;
  ExchangeStats stats_per_step;
};

RunSummary simulate_run(const ScenarioConfig& config);

}  // namespace seqbal
