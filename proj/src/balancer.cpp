// SPDX-License-Identifier: Apache-2.0
#include "seqbal/balancer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "json.hpp"
#include "seqbal/error.hpp"
#include "seqbal/metrics.hpp"

namespace seqbal {

std::vector<SequenceAssignment> assign_to_bags(std::vector<SequenceWorkload> workloads,
                                               const std::vector<ComputeBag>& bags) {
  if (bags.empty()) throw ConfigError("assign_to_bags: no bags");
  for (const auto& w : workloads) {
    if (!(w.workload >= 0.0)) throw ConfigError("assign_to_bags: negative workload");
  }

  int total_gpus = 0;
  for (const ComputeBag& bag : bags) total_gpus += bag.size();
  double total = 0.0;
  for (const auto& w : workloads) total += w.workload;
  const double target_per_gpu = total / total_gpus;

  const std::size_t m = bags.size();
  std::vector<double> capacity(m), assigned(m, 0.0);
  for (std::size_t j = 0; j < m; ++j) capacity[j] = bags[j].size() * target_per_gpu;

  auto occupancy = [&](std::size_t j) {
    if (capacity[j] > 0.0) return assigned[j] / capacity[j];
    return assigned[j] > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
  };

  std::sort(workloads.begin(), workloads.end(), [](const auto& a, const auto& b) {
    if (a.workload != b.workload) return a.workload > b.workload;
    return a.sample_id < b.sample_id;
  });

  std::vector<SequenceAssignment> result;
  result.reserve(workloads.size());
  for (const SequenceWorkload& w : workloads) {
    std::size_t best = m;      // among bags with enough remaining capacity
    std::size_t fallback = m;  // among all bags
    double best_occ = 0.0, fallback_occ = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      const double occ = occupancy(j);
      if (capacity[j] - assigned[j] >= w.workload && (best == m || occ < best_occ)) {
        best = j;
        best_occ = occ;
      }
      if (fallback == m || occ < fallback_occ) {
        fallback = j;
        fallback_occ = occ;
      }
    }
    const std::size_t pick = best != m ? best : fallback;
    assigned[pick] += w.workload;
    result.push_back({w.sample_id, w.workload, bags[pick].bag_id});
  }
  return result;
}

std::vector<std::int64_t> chunk_lengths(std::int64_t total_len, int parts) {
  if (parts < 1) throw ConfigError("chunk_lengths: parts must be >= 1");
  if (total_len < 0) throw ConfigError("chunk_lengths: negative length");
  std::vector<std::int64_t> lens(parts, total_len / parts);
  const std::int64_t rem = total_len % parts;
  for (std::int64_t i = 0; i < rem; ++i) ++lens[i];
  return lens;
}

namespace {

struct PlacedSequence {
  std::uint64_t sample_id;
  std::int64_t length;
  double workload;
  int origin_rank;
};

void finalize_manifests(RoutingPlan& plan) {
  plan.send.assign(plan.world_size, {});
  plan.recv.assign(plan.world_size, {});
  for (std::size_t i = 0; i < plan.chunks.size(); ++i) {
    plan.send[plan.chunks[i].source_rank].push_back(static_cast<int>(i));
    plan.recv[plan.chunks[i].target_rank].push_back(static_cast<int>(i));
  }
}

void fill_target_layout(RoutingPlan& plan) {
  plan.target.assign(plan.world_size, {});
  for (int r = 0; r < plan.world_size; ++r) {
    for (int ci : plan.recv[r]) {
      const ChunkAssignment& c = plan.chunks[ci];
      plan.target[r].push_back({c.sample_id, c.start, c.end - c.start});
    }
  }
}

}  // namespace

PlanResult plan_routing(const std::vector<std::vector<SequenceInfo>>& per_rank_seqs,
                        const WorkloadModel& model, const WorldLayout& layout) {
  model.validate();
  const int world = layout.world_size;
  if (static_cast<int>(per_rank_seqs.size()) != world) {
    throw ConfigError("plan_routing: sequence metadata for " +
                      std::to_string(per_rank_seqs.size()) + " ranks, world is " +
                      std::to_string(world));
  }
  for (const ComputeBag& bag : layout.unit.bags) {
    if (model.shape.n_heads % bag.size() != 0) {
      throw ConfigError("bag of " + std::to_string(bag.size()) +
                        " GPUs does not divide n_heads " +
                        std::to_string(model.shape.n_heads));
    }
  }

  RoutingPlan plan;
  plan.world_size = world;
  plan.origin.resize(world);
  for (int r = 0; r < world; ++r) {
    for (const SequenceInfo& s : per_rank_seqs[r]) {
      plan.origin[r].push_back({s.sample_id, 0, s.length});
    }
  }

  BalanceReport report;
  report.per_gpu_workload.assign(world, 0.0);

  const int unit = layout.unit.unit_size;
  const std::size_t bags_per_unit = layout.unit.bags.size();
  for (int rep = 0; rep < layout.num_replicas(); ++rep) {
    const int rank_base = rep * unit;

    std::vector<PlacedSequence> seqs;
    std::vector<SequenceWorkload> workloads;
    for (int local = 0; local < unit; ++local) {
      const int rank = rank_base + local;
      for (const SequenceInfo& s : per_rank_seqs[rank]) {
        const double w = gamma_weighted_workload(s.length, model);
        seqs.push_back({s.sample_id, s.length, w, rank});
        workloads.push_back({s.sample_id, w});
        report.total_workload += w;
      }
    }

    auto assignments = assign_to_bags(workloads, layout.unit.bags);

    // Recover the fallback count: a placement violated capacity whenever the
    // bag had less remaining capacity than the sequence at assignment time.
    // Replay occupancy in assignment order to count them.
    {
      int total_gpus = unit;
      double total = 0.0;
      for (const auto& w : workloads) total += w.workload;
      std::vector<double> cap(bags_per_unit), asg(bags_per_unit, 0.0);
      for (std::size_t j = 0; j < bags_per_unit; ++j) {
        cap[j] = layout.unit.bags[j].size() * (total / total_gpus);
      }
      for (const SequenceAssignment& a : assignments) {
        if (cap[a.assigned_bag] - asg[a.assigned_bag] < a.workload) {
          ++report.capacity_violations;
        }
        asg[a.assigned_bag] += a.workload;
      }
      for (std::size_t j = 0; j < bags_per_unit; ++j) {
        report.per_bag_occupancy.push_back(cap[j] > 0.0 ? asg[j] / cap[j]
                                           : asg[j] > 0.0
                                               ? std::numeric_limits<double>::infinity()
                                               : 0.0);
      }
    }

    // Per-bag sequence lists in assignment order drive both chunking and the
    // receive-side packing order.
    std::vector<std::vector<const PlacedSequence*>> by_bag(bags_per_unit);
    {
      // assignments reference sequences by sample_id; index them once.
      std::vector<std::pair<std::uint64_t, const PlacedSequence*>> index;
      index.reserve(seqs.size());
      for (const PlacedSequence& s : seqs) index.emplace_back(s.sample_id, &s);
      std::sort(index.begin(), index.end(),
                [](const auto& a, const auto& b) { return a.first < b.first; });
      for (const SequenceAssignment& a : assignments) {
        auto it = std::lower_bound(index.begin(), index.end(), a.sample_id,
                                   [](const auto& p, std::uint64_t id) { return p.first < id; });
        by_bag[a.assigned_bag].push_back(it->second);
      }
    }

    for (std::size_t b = 0; b < bags_per_unit; ++b) {
      const ComputeBag& bag = layout.unit.bags[b];
      const int bag_gpus = bag.size();
      double bag_load = 0.0;
      for (const PlacedSequence* s : by_bag[b]) bag_load += s->workload;
      for (int r : bag.gpu_ranks) {
        report.per_gpu_workload[rank_base + r] = bag_load / bag_gpus;
      }
      for (const PlacedSequence* s : by_bag[b]) {
        const auto lens = chunk_lengths(s->length, bag_gpus);
        std::int64_t cursor = 0;
        for (int i = 0; i < bag_gpus; ++i) {
          ChunkAssignment chunk;
          chunk.sample_id = s->sample_id;
          chunk.chunk_index = i;
          chunk.start = cursor;
          chunk.end = cursor + lens[i];
          chunk.source_rank = s->origin_rank;
          chunk.target_rank = rank_base + bag.gpu_ranks[i];
          cursor = chunk.end;
          plan.chunks.push_back(chunk);
        }
      }
    }
  }

  finalize_manifests(plan);
  fill_target_layout(plan);
  report.wir = workload_imbalance_ratio(report.per_gpu_workload);
  return {std::move(plan), std::move(report)};
}

RoutingPlan identity_plan(const std::vector<std::vector<SequenceInfo>>& per_rank_seqs) {
  RoutingPlan plan;
  plan.world_size = static_cast<int>(per_rank_seqs.size());
  plan.origin.resize(plan.world_size);
  for (int r = 0; r < plan.world_size; ++r) {
    for (const SequenceInfo& s : per_rank_seqs[r]) {
      plan.origin[r].push_back({s.sample_id, 0, s.length});
      plan.chunks.push_back({s.sample_id, 0, 0, s.length, r, r});
    }
  }
  finalize_manifests(plan);
  fill_target_layout(plan);
  return plan;
}

RoutingPlan reverse_plan(const RoutingPlan& plan) {
  RoutingPlan rev;
  rev.world_size = plan.world_size;
  rev.origin = plan.target;
  rev.target = plan.origin;
  rev.chunks.reserve(plan.chunks.size());
  for (const ChunkAssignment& c : plan.chunks) {
    ChunkAssignment r = c;
    std::swap(r.source_rank, r.target_rank);
    rev.chunks.push_back(r);
  }

  rev.send.assign(rev.world_size, {});
  rev.recv.assign(rev.world_size, {});
  for (std::size_t i = 0; i < rev.chunks.size(); ++i) {
    rev.send[rev.chunks[i].source_rank].push_back(static_cast<int>(i));
  }
  // Receive order must reproduce the destination packing: for each rank,
  // chunks sort by (segment index in the destination layout, start).
  for (int r = 0; r < rev.world_size; ++r) {
    std::vector<int> incoming;
    for (std::size_t i = 0; i < rev.chunks.size(); ++i) {
      if (rev.chunks[i].target_rank == r) incoming.push_back(static_cast<int>(i));
    }
    const auto& segs = rev.target[r];
    auto segment_index = [&](const ChunkAssignment& c) -> std::size_t {
      for (std::size_t s = 0; s < segs.size(); ++s) {
        if (segs[s].sample_id == c.sample_id && c.start >= segs[s].first_pos &&
            c.end <= segs[s].first_pos + segs[s].length) {
          return s;
        }
      }
      throw IntegrityError("reverse_plan: chunk of sample " +
                           std::to_string(c.sample_id) +
                           " does not fit any destination segment");
    };
    std::sort(incoming.begin(), incoming.end(), [&](int a, int b) {
      const auto sa = segment_index(rev.chunks[a]);
      const auto sb = segment_index(rev.chunks[b]);
      if (sa != sb) return sa < sb;
      return rev.chunks[a].start < rev.chunks[b].start;
    });
    rev.recv[r] = std::move(incoming);
  }
  return rev;
}

std::string plan_to_json(const RoutingPlan& plan, const BalanceReport& report) {
  nlohmann::json j;
  j["world_size"] = plan.world_size;
  j["chunks"] = nlohmann::json::array();
  for (const ChunkAssignment& c : plan.chunks) {
    j["chunks"].push_back({{"sample_id", c.sample_id},
                           {"chunk_index", c.chunk_index},
                           {"start", c.start},
                           {"end", c.end},
                           {"src", c.source_rank},
                           {"dst", c.target_rank}});
  }
  j["origins"] = nlohmann::json::array();
  for (const auto& segs : plan.origin) {
    nlohmann::json rank_segs = nlohmann::json::array();
    for (const Segment& s : segs) {
      rank_segs.push_back(
          {{"sample_id", s.sample_id}, {"first_pos", s.first_pos}, {"len", s.length}});
    }
    j["origins"].push_back(std::move(rank_segs));
  }
  j["report"] = {{"per_gpu_workload", report.per_gpu_workload},
                 {"per_bag_occupancy", report.per_bag_occupancy},
                 {"capacity_violations", report.capacity_violations},
                 {"total_workload", report.total_workload},
                 {"wir", report.wir}};
  return j.dump();
}

PlanResult plan_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  PlanResult result;
  RoutingPlan& plan = result.plan;
  plan.world_size = j.at("world_size").get<int>();
  for (const auto& c : j.at("chunks")) {
    plan.chunks.push_back({c.at("sample_id").get<std::uint64_t>(),
                           c.at("chunk_index").get<int>(), c.at("start").get<std::int64_t>(),
                           c.at("end").get<std::int64_t>(), c.at("src").get<int>(),
                           c.at("dst").get<int>()});
  }
  plan.origin.resize(plan.world_size);
  const auto& origins = j.at("origins");
  if (static_cast<int>(origins.size()) != plan.world_size) {
    throw ConfigError("plan JSON: origins size does not match world_size");
  }
  for (int r = 0; r < plan.world_size; ++r) {
    for (const auto& s : origins[r]) {
      plan.origin[r].push_back({s.at("sample_id").get<std::uint64_t>(),
                                s.at("first_pos").get<std::int64_t>(),
                                s.at("len").get<std::int64_t>()});
    }
  }
  finalize_manifests(plan);
  fill_target_layout(plan);
  if (j.contains("report")) {
    const auto& rep = j["report"];
    result.report.per_gpu_workload = rep.at("per_gpu_workload").get<std::vector<double>>();
    result.report.per_bag_occupancy = rep.at("per_bag_occupancy").get<std::vector<double>>();
    result.report.capacity_violations = rep.at("capacity_violations").get<int>();
    result.report.total_workload = rep.at("total_workload").get<double>();
    result.report.wir = rep.at("wir").get<double>();
  }
  return result;
}

BruteForceResult brute_force_assign(const std::vector<double>& workloads,
                                    const std::vector<int>& bag_sizes) {
  if (workloads.size() > 14) {
    throw ConfigError("brute_force_assign: refusing more than 14 sequences");
  }
  if (bag_sizes.size() > 4) {
    throw ConfigError("brute_force_assign: refusing more than 4 bags");
  }
  if (bag_sizes.empty()) throw ConfigError("brute_force_assign: no bags");
  for (int g : bag_sizes) {
    if (g < 1) throw ConfigError("brute_force_assign: bag size must be >= 1");
  }

  const std::size_t n = workloads.size();
  const std::size_t m = bag_sizes.size();

  // Largest-first ordering makes the max-load pruning bite early.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return workloads[a] > workloads[b]; });

  std::vector<double> load(m, 0.0);
  std::vector<int> current(n, 0), best_assign(n, 0);
  double best = std::numeric_limits<double>::infinity();

  auto dfs = [&](auto&& self, std::size_t depth, double running_max) -> void {
    if (running_max >= best) return;
    if (depth == n) {
      best = running_max;
      best_assign = current;
      return;
    }
    const std::size_t item = order[depth];
    for (std::size_t j = 0; j < m; ++j) {
      // Identical empty bags are symmetric; trying one of them is enough.
      if (load[j] == 0.0) {
        bool seen_equal_empty = false;
        for (std::size_t p = 0; p < j; ++p) {
          if (load[p] == 0.0 && bag_sizes[p] == bag_sizes[j]) {
            seen_equal_empty = true;
            break;
          }
        }
        if (seen_equal_empty) continue;
      }
      load[j] += workloads[item];
      current[item] = static_cast<int>(j);
      self(self, depth + 1, std::max(running_max, load[j] / bag_sizes[j]));
      load[j] -= workloads[item];
    }
  };
  dfs(dfs, 0, 0.0);

  return {best, best_assign};
}

UniformPlan balance_uniform_items(const std::vector<std::int64_t>& counts) {
  UniformPlan plan;
  const std::size_t n = counts.size();
  if (n == 0) return plan;
  std::int64_t total = 0;
  for (std::int64_t c : counts) {
    if (c < 0) throw ConfigError("balance_uniform_items: negative count");
    total += c;
  }
  const std::int64_t base = total / static_cast<std::int64_t>(n);
  const std::int64_t rem = total % static_cast<std::int64_t>(n);

  // Give the +1 slots to the ranks already holding the most; that choice
  // minimizes the number of moved items. Ties go to the lower rank.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return counts[a] > counts[b]; });
  plan.final_counts.assign(n, base);
  for (std::int64_t i = 0; i < rem; ++i) ++plan.final_counts[order[i]];

  // Pair surpluses with deficits in rank order.
  std::vector<std::pair<int, std::int64_t>> surplus, deficit;
  for (std::size_t r = 0; r < n; ++r) {
    const std::int64_t diff = counts[r] - plan.final_counts[r];
    if (diff > 0) surplus.emplace_back(static_cast<int>(r), diff);
    if (diff < 0) deficit.emplace_back(static_cast<int>(r), -diff);
  }
  std::size_t si = 0, di = 0;
  while (si < surplus.size() && di < deficit.size()) {
    const std::int64_t moved = std::min(surplus[si].second, deficit[di].second);
    plan.moves.push_back({surplus[si].first, deficit[di].first, moved});
    plan.total_moved += moved;
    surplus[si].second -= moved;
    deficit[di].second -= moved;
    if (surplus[si].second == 0) ++si;
    if (deficit[di].second == 0) ++di;
  }
  return plan;
}

UniformPlan reverse_uniform_plan(const UniformPlan& plan,
                                 const std::vector<std::int64_t>& original_counts) {
  UniformPlan rev;
  rev.final_counts = original_counts;
  rev.total_moved = plan.total_moved;
  rev.moves.reserve(plan.moves.size());
  for (const UniformMove& m : plan.moves) {
    rev.moves.push_back({m.dst_rank, m.src_rank, m.count});
  }
  return rev;
}

}  // namespace seqbal
