// SPDX-License-Identifier: Apache-2.0
#include "seqbal/balancer.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "seqbal/error.hpp"
#include "seqbal/rng.hpp"

namespace seqbal {
namespace {

std::vector<ComputeBag> single_gpu_bags(int m) {
  std::vector<ComputeBag> bags(m);
  for (int i = 0; i < m; ++i) {
    bags[i].bag_id = i;
    bags[i].gpu_ranks = {i};
  }
  return bags;
}

WorkloadModel test_model(double gamma = 0.49) {
  WorkloadModel m;
  m.shape = ModelShape{3072, 24, 128, 57};
  m.gamma = gamma;
  return m;
}

TEST(AssignToBags, HandTracedGreedyWithFallback) {
  // T = 24/2 = 12 per GPU. 10 -> bag0 (tie, lowest id); 8 -> bag1 (only
  // fit); 5 fits nowhere -> fallback to min occupancy bag1; 1 -> bag0.
  std::vector<SequenceWorkload> w{{0, 10}, {1, 8}, {2, 5}, {3, 1}};
  const auto result = assign_to_bags(w, single_gpu_bags(2));
  ASSERT_EQ(result.size(), 4u);
  EXPECT_EQ(result[0].sample_id, 0u);
  EXPECT_EQ(result[0].assigned_bag, 0);
  EXPECT_EQ(result[1].assigned_bag, 1);
  EXPECT_EQ(result[2].assigned_bag, 1);
  EXPECT_EQ(result[3].assigned_bag, 0);

  double loads[2] = {0, 0};
  for (const auto& a : result) loads[a.assigned_bag] += a.workload;
  EXPECT_DOUBLE_EQ(loads[0], 11);
  EXPECT_DOUBLE_EQ(loads[1], 13);
}

TEST(AssignToBags, EqualWorkloadsSpreadOnePerBag) {
  std::vector<SequenceWorkload> w{{0, 4}, {1, 4}, {2, 4}, {3, 4}};
  const auto result = assign_to_bags(w, single_gpu_bags(4));
  std::vector<int> used;
  for (const auto& a : result) used.push_back(a.assigned_bag);
  std::sort(used.begin(), used.end());
  EXPECT_EQ(used, (std::vector<int>{0, 1, 2, 3}));
}

TEST(AssignToBags, SingleBagTakesEverything) {
  std::vector<SequenceWorkload> w{{0, 4}, {1, 1}, {2, 9}};
  for (const auto& a : assign_to_bags(w, single_gpu_bags(1))) {
    EXPECT_EQ(a.assigned_bag, 0);
  }
}

TEST(AssignToBags, DescendingOrderWithIdTieBreak) {
  std::vector<SequenceWorkload> w{{7, 5}, {3, 5}, {9, 8}};
  const auto result = assign_to_bags(w, single_gpu_bags(1));
  EXPECT_EQ(result[0].sample_id, 9u);
  EXPECT_EQ(result[1].sample_id, 3u);
  EXPECT_EQ(result[2].sample_id, 7u);
}

TEST(AssignToBags, RejectsBadInput) {
  EXPECT_THROW(assign_to_bags({{0, 1}}, {}), ConfigError);
  EXPECT_THROW(assign_to_bags({{0, -1}}, single_gpu_bags(1)), ConfigError);
}

TEST(AssignToBags, AllZeroWorkloadsAreLegal) {
  std::vector<SequenceWorkload> w{{0, 0}, {1, 0}};
  EXPECT_EQ(assign_to_bags(w, single_gpu_bags(2)).size(), 2u);
}

TEST(ChunkLengths, EvenSplit) {
  EXPECT_EQ(chunk_lengths(10, 2), (std::vector<std::int64_t>{5, 5}));
}

TEST(ChunkLengths, RemainderFirst) {
  EXPECT_EQ(chunk_lengths(10, 4), (std::vector<std::int64_t>{3, 3, 2, 2}));
}

TEST(ChunkLengths, ShortSequenceLeavesEmptyChunks) {
  EXPECT_EQ(chunk_lengths(3, 8), (std::vector<std::int64_t>{1, 1, 1, 0, 0, 0, 0, 0}));
}

TEST(ChunkLengths, CoverageProperty) {
  CounterRng rng({5});
  for (int i = 0; i < 300; ++i) {
    const std::int64_t l = rng.next_int(0, 10000);
    const int g = static_cast<int>(rng.next_int(1, 16));
    const auto lens = chunk_lengths(l, g);
    EXPECT_EQ(std::accumulate(lens.begin(), lens.end(), std::int64_t{0}), l);
    for (std::size_t j = 1; j < lens.size(); ++j) {
      EXPECT_GE(lens[j - 1], lens[j]);
      EXPECT_LE(lens[j - 1] - lens[j], 1);
    }
  }
}

std::vector<std::vector<SequenceInfo>> per_rank(std::vector<std::vector<std::int64_t>> lens) {
  std::vector<std::vector<SequenceInfo>> out(lens.size());
  std::uint64_t id = 0;
  for (std::size_t r = 0; r < lens.size(); ++r) {
    for (std::int64_t l : lens[r]) out[r].push_back({id++, l});
  }
  return out;
}

TEST(PlanRouting, AlreadyBalancedWorldNeedsNoMovement) {
  const WorldLayout layout = replicate(parse_topology("g1n4"), 4);
  const auto seqs = per_rank({{500}, {500}, {500}, {500}});
  const PlanResult result = plan_routing(seqs, test_model(), layout);
  EXPECT_DOUBLE_EQ(result.report.wir, 1.0);
  for (const ChunkAssignment& c : result.plan.chunks) {
    EXPECT_EQ(c.source_rank, c.target_rank);
  }
}

TEST(PlanRouting, SingleLoadedRankSpreadsOverEightGpuBag) {
  const WorldLayout layout = replicate(parse_topology("g8n1"), 8);
  const auto seqs = per_rank({{800, 640, 320}, {}, {}, {}, {}, {}, {}, {}});
  const PlanResult result = plan_routing(seqs, test_model(), layout);
  // One bag: every per-GPU workload is bag_total/8, exactly equal.
  for (double w : result.report.per_gpu_workload) {
    EXPECT_DOUBLE_EQ(w, result.report.per_gpu_workload[0]);
  }
  EXPECT_DOUBLE_EQ(result.report.wir, 1.0);
  // Every sequence splits into 8 contiguous covering chunks.
  std::int64_t covered = 0;
  for (const ChunkAssignment& c : result.plan.chunks) covered += c.end - c.start;
  EXPECT_EQ(covered, 800 + 640 + 320);
}

TEST(PlanRouting, ReplicasArePlannedIndependently) {
  const WorldLayout layout = replicate(parse_topology("g1n2"), 4);
  const auto seqs = per_rank({{1000}, {10}, {2000}, {20}});
  const PlanResult result = plan_routing(seqs, test_model(), layout);
  for (const ChunkAssignment& c : result.plan.chunks) {
    EXPECT_EQ(c.source_rank / 2, c.target_rank / 2)
        << "chunk crossed a replica boundary";
  }
}

TEST(PlanRouting, ConservesTotalWorkload) {
  CounterRng rng({31});
  const WorkloadModel model = test_model();
  for (int trial = 0; trial < 50; ++trial) {
    const WorldLayout layout = replicate(parse_topology("g1n2+g2n1+g4n1"), 16);
    std::vector<std::vector<SequenceInfo>> seqs(16);
    std::uint64_t id = 0;
    double input = 0.0;
    for (auto& rank_seqs : seqs) {
      const int n = static_cast<int>(rng.next_int(0, 5));
      for (int i = 0; i < n; ++i) {
        const std::int64_t l = rng.next_int(1, 4096);
        rank_seqs.push_back({id++, l});
        input += gamma_weighted_workload(l, model);
      }
    }
    const PlanResult result = plan_routing(seqs, model, layout);
    double planned = 0.0;
    for (double w : result.report.per_gpu_workload) planned += w;
    EXPECT_NEAR(planned, input, 1e-9 * std::max(1.0, std::abs(input)));

    // Partition: every token of every sequence in exactly one chunk.
    std::map<std::uint64_t, std::vector<std::pair<std::int64_t, std::int64_t>>> ranges;
    for (const ChunkAssignment& c : result.plan.chunks) {
      ranges[c.sample_id].push_back({c.start, c.end});
    }
    for (int r = 0; r < 16; ++r) {
      for (const SequenceInfo& s : seqs[r]) {
        auto& rs = ranges.at(s.sample_id);
        std::sort(rs.begin(), rs.end());
        std::int64_t cursor = 0;
        for (const auto& [start, end] : rs) {
          EXPECT_EQ(start, cursor);
          cursor = end;
        }
        EXPECT_EQ(cursor, s.length);
      }
    }
  }
}

TEST(PlanRouting, DeterministicSerialization) {
  const WorldLayout layout = replicate(parse_topology("g2n2"), 4);
  const auto seqs = per_rank({{100, 7}, {3000}, {42, 42}, {}});
  const PlanResult a = plan_routing(seqs, test_model(), layout);
  const PlanResult b = plan_routing(seqs, test_model(), layout);
  EXPECT_EQ(a.plan, b.plan);
  EXPECT_EQ(plan_to_json(a.plan, a.report), plan_to_json(b.plan, b.report));
}

TEST(PlanRouting, RejectsBagsThatCannotSplitHeads) {
  WorkloadModel model = test_model();
  model.shape = ModelShape{3072, 16, 192, 57};  // 16 heads, g1n2+g2n1+g4n1 ok
  const Topology topo = parse_topology("g8n1");
  model.shape.n_heads = 12;  // 8 does not divide 12
  model.shape.d_head = 256;
  const WorldLayout layout = replicate(topo, 8);
  EXPECT_THROW(plan_routing(per_rank({{10}, {}, {}, {}, {}, {}, {}, {}}), model, layout),
               ConfigError);
}

TEST(PlanJson, RoundTripsThroughText) {
  const WorldLayout layout = replicate(parse_topology("g2n1"), 2);
  const auto seqs = per_rank({{1000}, {10}});
  const PlanResult result = plan_routing(seqs, test_model(), layout);
  const std::string text = plan_to_json(result.plan, result.report);
  const PlanResult parsed = plan_from_json(text);
  EXPECT_EQ(parsed.plan, result.plan);
  EXPECT_EQ(parsed.report.per_gpu_workload, result.report.per_gpu_workload);
}

TEST(ReversePlan, InvolutionAndIdentity) {
  const WorldLayout layout = replicate(parse_topology("g1n2+g2n1"), 4);
  const auto seqs = per_rank({{900, 30}, {64}, {4096}, {128, 128}});
  const PlanResult result = plan_routing(seqs, test_model(), layout);
  const RoutingPlan rev = reverse_plan(result.plan);
  EXPECT_EQ(reverse_plan(rev), result.plan);

  const RoutingPlan ident = identity_plan(seqs);
  EXPECT_EQ(reverse_plan(ident), ident);
}

TEST(BruteForce, MatchesHandEnumeration) {
  const BruteForceResult r = brute_force_assign({10, 8, 5, 1}, {1, 1});
  EXPECT_DOUBLE_EQ(r.max_per_gpu, 13.0);
}

TEST(BruteForce, EqualWorkloadsHitTheMean) {
  const BruteForceResult r = brute_force_assign({6, 6, 6}, {1, 1, 1});
  EXPECT_DOUBLE_EQ(r.max_per_gpu, 6.0);
  EXPECT_DOUBLE_EQ(brute_force_assign({5}, {1}).max_per_gpu, 5.0);
}

TEST(BruteForce, AccountsForBagWidths) {
  // In a 2-GPU bag a sequence costs w/2 per GPU.
  const BruteForceResult r = brute_force_assign({10, 2}, {2, 1});
  EXPECT_DOUBLE_EQ(r.max_per_gpu, 5.0);  // {10} -> bag0, {2} -> bag1
}

TEST(BruteForce, RefusesOversizedInstances) {
  std::vector<double> too_many(15, 1.0);
  EXPECT_THROW(brute_force_assign(too_many, {1, 1}), ConfigError);
  EXPECT_THROW(brute_force_assign({1.0}, {1, 1, 1, 1, 1}), ConfigError);
}

double greedy_max_per_gpu(const std::vector<double>& workloads,
                          const std::vector<ComputeBag>& bags) {
  std::vector<SequenceWorkload> w;
  for (std::size_t i = 0; i < workloads.size(); ++i) {
    w.push_back({static_cast<std::uint64_t>(i), workloads[i]});
  }
  std::vector<double> load(bags.size(), 0.0);
  for (const auto& a : assign_to_bags(w, bags)) load[a.assigned_bag] += a.workload;
  double worst = 0.0;
  for (std::size_t j = 0; j < bags.size(); ++j) {
    worst = std::max(worst, load[j] / bags[j].size());
  }
  return worst;
}

TEST(GreedyQuality, WithinTwoTimesOptimalOnRandomInstances) {
  CounterRng rng({2718});
  double ratio_sum = 0.0, ratio_max = 0.0;
  const int trials = 1000;
  for (int t = 0; t < trials; ++t) {
    const int n = static_cast<int>(rng.next_int(1, 10));
    const int m = static_cast<int>(rng.next_int(1, 3));
    std::vector<double> w(n);
    for (double& x : w) x = static_cast<double>(rng.next_int(1, 100));
    const double greedy = greedy_max_per_gpu(w, single_gpu_bags(m));
    const double optimal = brute_force_assign(w, std::vector<int>(m, 1)).max_per_gpu;
    ASSERT_GT(optimal, 0.0);
    const double ratio = greedy / optimal;
    EXPECT_GE(ratio, 1.0 - 1e-12);
    EXPECT_LE(ratio, 2.0);
    ratio_sum += ratio;
    ratio_max = std::max(ratio_max, ratio);
  }
  EXPECT_LE(ratio_sum / trials, 1.10);
  RecordProperty("mean_ratio", std::to_string(ratio_sum / trials));
  RecordProperty("max_ratio", std::to_string(ratio_max));
}

TEST(BalanceUniformItems, EvensOutWithMinimalMoves) {
  const UniformPlan p = balance_uniform_items({4, 0});
  EXPECT_EQ(p.final_counts, (std::vector<std::int64_t>{2, 2}));
  EXPECT_EQ(p.total_moved, 2);

  const UniformPlan q = balance_uniform_items({3, 3, 3});
  EXPECT_EQ(q.final_counts, (std::vector<std::int64_t>{3, 3, 3}));
  EXPECT_EQ(q.total_moved, 0);
  EXPECT_TRUE(q.moves.empty());

  const UniformPlan r = balance_uniform_items({5, 0, 0});
  EXPECT_EQ(r.final_counts, (std::vector<std::int64_t>{2, 2, 1}));
  EXPECT_EQ(r.total_moved, 3);
}

// Oracle: minimum items moved over all +-1-balanced final distributions,
// found by trying every subset of ranks that could take the extra item.
std::int64_t min_moves_oracle(const std::vector<std::int64_t>& counts) {
  const int n = static_cast<int>(counts.size());
  std::int64_t total = 0;
  for (auto c : counts) total += c;
  const std::int64_t base = total / n;
  const int rem = static_cast<int>(total % n);
  std::int64_t best = INT64_MAX;
  for (int mask = 0; mask < (1 << n); ++mask) {
    if (__builtin_popcount(mask) != rem) continue;
    std::int64_t moved = 0;
    for (int r = 0; r < n; ++r) {
      const std::int64_t final_count = base + ((mask >> r) & 1);
      moved += std::max<std::int64_t>(0, counts[r] - final_count);
    }
    best = std::min(best, moved);
  }
  return best;
}

TEST(BalanceUniformItems, MatchesMinimalMoveOracle) {
  CounterRng rng({55});
  for (int trial = 0; trial < 300; ++trial) {
    const int n = static_cast<int>(rng.next_int(1, 8));
    std::vector<std::int64_t> counts(n);
    for (auto& c : counts) c = rng.next_int(0, 12);
    const UniformPlan p = balance_uniform_items(counts);

    // Final counts are +-1 balanced and conserve the total.
    std::int64_t total = 0, final_total = 0;
    std::int64_t lo = INT64_MAX, hi = INT64_MIN;
    for (int r = 0; r < n; ++r) {
      total += counts[r];
      final_total += p.final_counts[r];
      lo = std::min(lo, p.final_counts[r]);
      hi = std::max(hi, p.final_counts[r]);
    }
    EXPECT_EQ(total, final_total);
    EXPECT_LE(hi - lo, 1);
    EXPECT_EQ(p.total_moved, min_moves_oracle(counts));

    // Moves actually realize the final distribution.
    std::vector<std::int64_t> sim = counts;
    for (const UniformMove& m : p.moves) {
      sim[m.src_rank] -= m.count;
      sim[m.dst_rank] += m.count;
    }
    EXPECT_EQ(sim, p.final_counts);

    // And the inverse returns everything home.
    const UniformPlan rev = reverse_uniform_plan(p, counts);
    for (const UniformMove& m : rev.moves) {
      sim[m.src_rank] -= m.count;
      sim[m.dst_rank] += m.count;
    }
    EXPECT_EQ(sim, counts);
  }
}

}  // namespace
}  // namespace seqbal
