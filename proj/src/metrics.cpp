// SPDX-License-Identifier: Apache-2.0
#include "seqbal/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "seqbal/error.hpp"

namespace seqbal {

void CostModel::validate() const {
  if (!(peak_flops > 0) || !(intra_node_bw > 0) || !(inter_node_bw > 0)) {
    throw ConfigError("cost model rates must be positive");
  }
  if (bytes_per_element < 1) throw ConfigError("bytes_per_element must be >= 1");
  if (gpus_per_node < 1) throw ConfigError("gpus_per_node must be >= 1");
}

double workload_imbalance_ratio(const std::vector<double>& per_gpu_workloads) {
  if (per_gpu_workloads.empty()) throw ConfigError("WIR of empty workload list");
  double lo = per_gpu_workloads.front(), hi = per_gpu_workloads.front();
  for (double w : per_gpu_workloads) {
    if (!(w >= 0.0)) throw ConfigError("negative per-GPU workload");
    lo = std::min(lo, w);
    hi = std::max(hi, w);
  }
  if (hi == 0.0) return 1.0;  // idle world: nothing to imbalance
  if (lo == 0.0) return std::numeric_limits<double>::infinity();
  return hi / lo;
}

namespace {

struct PhaseBytes {
  std::vector<double> sent;
  std::vector<double> recv;
  bool all_intra_node = true;
  bool any_traffic = false;
};

double phase_seconds(const PhaseBytes& phase, const CostModel& cost) {
  if (!phase.any_traffic) return 0.0;
  double busiest = 0.0;
  for (std::size_t r = 0; r < phase.sent.size(); ++r) {
    busiest = std::max(busiest, std::max(phase.sent[r], phase.recv[r]));
  }
  const double bw = phase.all_intra_node ? cost.intra_node_bw : cost.inter_node_bw;
  return busiest / bw;
}

}  // namespace

double estimate_fbl(const std::vector<double>& per_gpu_workloads, const RoutingPlan& plan,
                    const WorkloadModel& model, const CostModel& cost,
                    const WorldLayout* layout, CommBreakdown* breakdown) {
  model.validate();
  cost.validate();
  const double max_w =
      *std::max_element(per_gpu_workloads.begin(), per_gpu_workloads.end());
  // Forward m, backward 2m, recomputation m.
  const double compute_s = 4.0 * model.k * model.shape.n_blocks * max_w;

  const double token_bytes =
      static_cast<double>(model.shape.d_model) * cost.bytes_per_element;
  auto node_of = [&](int rank) { return rank / cost.gpus_per_node; };

  // Sequence-exchange phase (the reverse direction moves the same bytes the
  // opposite way, so one phase time covers both directions symmetrically).
  PhaseBytes route_phase;
  route_phase.sent.assign(plan.world_size, 0.0);
  route_phase.recv.assign(plan.world_size, 0.0);
  for (const ChunkAssignment& c : plan.chunks) {
    if (c.source_rank == c.target_rank || c.end == c.start) continue;
    const double bytes = static_cast<double>(c.end - c.start) * token_bytes;
    route_phase.sent[c.source_rank] += bytes;
    route_phase.recv[c.target_rank] += bytes;
    route_phase.any_traffic = true;
    if (node_of(c.source_rank) != node_of(c.target_rank)) {
      route_phase.all_intra_node = false;
    }
  }
  const double route_s = phase_seconds(route_phase, cost);

  // Intra-bag attention-layout exchanges: per block, the outbound phase
  // carries q, k and v (3x token bytes) and the return phase the attention
  // output (1x). Bags exchange concurrently, so a phase costs as much as
  // its slowest bag.
  double ulysses_block_s = 0.0;
  if (layout != nullptr) {
    // Tokens each member rank holds after routing.
    std::vector<double> rank_tokens(plan.world_size, 0.0);
    for (const ChunkAssignment& c : plan.chunks) {
      rank_tokens[c.target_rank] += static_cast<double>(c.end - c.start);
    }
    double out_phase = 0.0, back_phase = 0.0;
    for (int rep = 0; rep < layout->num_replicas(); ++rep) {
      for (const ComputeBag& unit_bag : layout->unit.bags) {
        const int g = unit_bag.size();
        if (g < 2) continue;
        const ComputeBag bag = global_bag(*layout, rep, unit_bag.bag_id);
        bool intra = true;
        for (int r : bag.gpu_ranks) {
          if (node_of(r) != node_of(bag.gpu_ranks.front())) intra = false;
        }
        double bag_tokens = 0.0, busiest = 0.0;
        for (int r : bag.gpu_ranks) bag_tokens += rank_tokens[r];
        for (int r : bag.gpu_ranks) {
          const double held = rank_tokens[r];
          const double sent = held * (g - 1) / g;
          const double recv = (bag_tokens - held) / g;
          busiest = std::max(busiest, std::max(sent, recv));
        }
        const double bw = intra ? cost.intra_node_bw : cost.inter_node_bw;
        const double one_tensor_s = busiest * token_bytes / bw;
        out_phase = std::max(out_phase, 3.0 * one_tensor_s);
        back_phase = std::max(back_phase, one_tensor_s);
      }
    }
    ulysses_block_s = out_phase + back_phase;
  }

  const double comm_s = 2.0 * route_s + model.shape.n_blocks * ulysses_block_s;
  if (breakdown != nullptr) {
    breakdown->route_s = route_s;
    breakdown->ulysses_per_block_s = ulysses_block_s;
    breakdown->total_s = comm_s;
  }
  return compute_s + comm_s;
}

double tokens_per_second(std::int64_t total_tokens, double fbl_s) {
  if (!(fbl_s > 0.0)) throw ConfigError("TPS undefined for non-positive FBL");
  return static_cast<double>(total_tokens) / fbl_s;
}

double hardware_flops_utilization(double total_forward_flops, double fbl_s, int num_gpus,
                                  const CostModel& cost) {
  cost.validate();
  if (!(fbl_s > 0.0)) throw ConfigError("HFU undefined for non-positive FBL");
  if (num_gpus < 1) throw ConfigError("HFU needs at least one GPU");
  return 4.0 * total_forward_flops / (cost.peak_flops * num_gpus * fbl_s);
}

}  // namespace seqbal
