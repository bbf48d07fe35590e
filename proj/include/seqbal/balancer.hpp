// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "seqbal/topology.hpp"
#include "seqbal/workload_model.hpp"

namespace seqbal {

struct SequenceWorkload {
  std::uint64_t sample_id = 0;
  double workload = 0.0;
};

struct SequenceAssignment {
  std::uint64_t sample_id = 0;
  double workload = 0.0;
  int assigned_bag = 0;
};

// Greedy multi-knapsack pass. Target per-GPU workload T = sum(w)/G_total,
// bag capacity c_j = |bag_j| * T. Sequences are taken in descending
// workload order (ties by ascending sample_id); each goes to the
// minimum-occupancy bag among those with remaining capacity >= w, falling
// back to the global minimum-occupancy bag when none fits. Occupancy ties
// break toward the lowest bag id. Capacities are never recomputed mid-pass.
std::vector<SequenceAssignment> assign_to_bags(std::vector<SequenceWorkload> workloads,
                                               const std::vector<ComputeBag>& bags);

// Even contiguous split of l tokens into `parts` chunks: the first
// (l mod parts) chunks get ceil(l/parts) tokens, the rest floor(l/parts).
// Chunks may be empty when l < parts.
std::vector<std::int64_t> chunk_lengths(std::int64_t total_len, int parts);

struct ChunkAssignment {
  std::uint64_t sample_id = 0;
  int chunk_index = 0;
  std::int64_t start = 0;  // token range within the sequence, half-open
  std::int64_t end = 0;
  int source_rank = 0;
  int target_rank = 0;

  bool operator==(const ChunkAssignment&) const = default;
};

struct SequenceInfo {
  std::uint64_t sample_id = 0;
  std::int64_t length = 0;
};

// A contiguous run of one sequence's tokens as packed on some rank.
struct Segment {
  std::uint64_t sample_id = 0;
  std::int64_t first_pos = 0;
  std::int64_t length = 0;

  bool operator==(const Segment&) const = default;
};

// The full chunk -> (source rank, target rank) mapping for one exchange,
// plus the packed layouts on both sides. `recv` order is the packing order
// on the receiving rank; `origin`/`target` describe the before/after worlds
// so the inverse plan can restore the exact original packing.
struct RoutingPlan {
  int world_size = 0;
  std::vector<ChunkAssignment> chunks;
  std::vector<std::vector<int>> send;             // per rank: chunk indices, plan order
  std::vector<std::vector<int>> recv;             // per rank: chunk indices, packing order
  std::vector<std::vector<Segment>> origin;       // pre-exchange layout
  std::vector<std::vector<Segment>> target;       // post-exchange layout

  bool operator==(const RoutingPlan&) const = default;
};

struct BalanceReport {
  std::vector<double> per_gpu_workload;   // gamma-weighted, one per global rank
  std::vector<double> per_bag_occupancy;  // replica-major, assigned/capacity
  int capacity_violations = 0;            // sequences placed via the fallback
  double total_workload = 0.0;
  double wir = 1.0;
};

struct PlanResult {
  RoutingPlan plan;
  BalanceReport report;
};

// Gathers (sample_id, total_len) metadata per rank, weighs each sequence
// with the gamma-corrected model, assigns sequences to bags independently
// per replica, chunks them across bag members, and emits the routing plan
// with its balance report. Deterministic given inputs.
PlanResult plan_routing(const std::vector<std::vector<SequenceInfo>>& per_rank_seqs,
                        const WorkloadModel& model, const WorldLayout& layout);

// Plan that keeps every sequence where it is (the "no balancer" case).
RoutingPlan identity_plan(const std::vector<std::vector<SequenceInfo>>& per_rank_seqs);

// Swaps source/target of every chunk; applying a plan and then its reverse
// restores every token to its origin rank in the original packing order.
// An involution: reverse_plan(reverse_plan(p)) == p.
RoutingPlan reverse_plan(const RoutingPlan& plan);

// {"chunks":[{sample_id,chunk_index,start,end,src,dst}],
//  "origins":[[{sample_id,first_pos,len}]], "report":{...}}
std::string plan_to_json(const RoutingPlan& plan, const BalanceReport& report);
PlanResult plan_from_json(const std::string& text);

struct BruteForceResult {
  double max_per_gpu = 0.0;
  std::vector<int> assignment;  // bag index per sequence
};

// Exhaustive optimum of max per-GPU workload, where a sequence in a bag of
// G GPUs contributes w/G to each member. Refuses instances beyond
// 14 sequences or 4 bags.
BruteForceResult brute_force_assign(const std::vector<double>& workloads,
                                    const std::vector<int>& bag_sizes);

struct UniformMove {
  int src_rank = 0;
  int dst_rank = 0;
  std::int64_t count = 0;

  bool operator==(const UniformMove&) const = default;
};

// Redistribution of identical-cost items (T5 strings): post-counts differ
// by at most 1 and total moved items are minimal. Ranks holding more keep
// more: the +1 slots go to the largest current counts (ties toward the
// lower rank).
struct UniformPlan {
  std::vector<std::int64_t> final_counts;
  std::vector<UniformMove> moves;
  std::int64_t total_moved = 0;
};

UniformPlan balance_uniform_items(const std::vector<std::int64_t>& counts);

// Moves that send every relocated item back where it came from.
UniformPlan reverse_uniform_plan(const UniformPlan& plan,
                                 const std::vector<std::int64_t>& original_counts);

}  // namespace seqbal
