// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "seqbal/balancer.hpp"
#include "seqbal/topology.hpp"
#include "seqbal/workload_model.hpp"

namespace seqbal {

// Bandwidth-only communication model plus the hardware peak used for HFU.
// Defaults: H100 bf16 dense peak, NVLink-class intra-node and
// Ethernet/IB-class inter-node bandwidth, bf16 elements, 8-GPU nodes.
struct CostModel {
  double peak_flops = 989e12;      // FLOP/s per GPU
  double intra_node_bw = 400e9;    // bytes/s
  double inter_node_bw = 50e9;     // bytes/s
  int bytes_per_element = 2;
  int gpus_per_node = 8;

  void validate() const;  // throws ConfigError
};

// Max/min of per-GPU workloads. All zero -> 1.0 (nothing to imbalance);
// min zero with max positive -> +infinity. Throws ConfigError on empty
// input.
double workload_imbalance_ratio(const std::vector<double>& per_gpu_workloads);

struct CommBreakdown {
  double route_s = 0.0;              // one direction of the sequence exchange
  double ulysses_per_block_s = 0.0;  // both intra-bag phases of one block
  double total_s = 0.0;
};

// Forward+backward latency for one step:
//   compute = 4 * k * n_blocks * max per-GPU gamma-weighted workload
//             (forward m, backward 2m, recomputation m)
//   comm    = route + reverse (each: max over ranks of bytes/bandwidth)
//           + 2 intra-bag exchanges per block for every bag larger than one
//             GPU (head-slice redistribution moves q,k,v out and the
//             attention output back, so the outbound phase carries 3x the
//             token bytes and the return phase 1x).
// The bandwidth of a phase is intra-node only when every cross-rank move in
// it stays inside one node of gpus_per_node consecutive ranks.
// `layout` may be null for the no-balancer case (no collectives at all).
double estimate_fbl(const std::vector<double>& per_gpu_workloads, const RoutingPlan& plan,
                    const WorkloadModel& model, const CostModel& cost,
                    const WorldLayout* layout, CommBreakdown* breakdown = nullptr);

// Aggregate throughput over every GPU in scope.
double tokens_per_second(std::int64_t total_tokens, double fbl_s);

// 4m / (peak * num_gpus * fbl): m is the UNWEIGHTED forward FLOP count —
// gamma plays no role in useful-work accounting.
double hardware_flops_utilization(double total_forward_flops, double fbl_s, int num_gpus,
                                  const CostModel& cost);

struct StepMetrics {
  double wir = 1.0;
  double fbl_s = 0.0;
  double tps = 0.0;
  double hfu = 0.0;
  double comm_s = 0.0;
  std::int64_t total_tokens = 0;
  double total_forward_flops = 0.0;  // the m in the 4m convention
  std::vector<double> per_gpu_workload;
};

}  // namespace seqbal
