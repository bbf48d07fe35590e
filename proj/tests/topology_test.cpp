// SPDX-License-Identifier: Apache-2.0
#include "seqbal/topology.hpp"

#include <gtest/gtest.h>

#include <set>

#include "seqbal/error.hpp"
#include "seqbal/rng.hpp"

namespace seqbal {
namespace {

std::vector<int> bag_sizes(const Topology& t) {
  std::vector<int> sizes;
  for (const auto& b : t.bags) sizes.push_back(b.size());
  return sizes;
}

TEST(ParseTopology, MixedUnitFromTheGrammarExample) {
  const Topology t = parse_topology("g1n2+g2n1+g4n1");
  EXPECT_EQ(bag_sizes(t), (std::vector<int>{1, 1, 2, 4}));
  EXPECT_EQ(t.unit_size, 8);
  // Contiguous rank ranges in textual order.
  EXPECT_EQ(t.bags[0].gpu_ranks, (std::vector<int>{0}));
  EXPECT_EQ(t.bags[1].gpu_ranks, (std::vector<int>{1}));
  EXPECT_EQ(t.bags[2].gpu_ranks, (std::vector<int>{2, 3}));
  EXPECT_EQ(t.bags[3].gpu_ranks, (std::vector<int>{4, 5, 6, 7}));
}

TEST(ParseTopology, NodeSizedBags) {
  const Topology t = parse_topology("g8n4");
  EXPECT_EQ(bag_sizes(t), (std::vector<int>{8, 8, 8, 8}));
  EXPECT_EQ(t.unit_size, 32);
}

TEST(ParseTopology, DegenerateSingleGpuWorld) {
  const Topology t = parse_topology("g1n1");
  EXPECT_EQ(t.unit_size, 1);
  ASSERT_EQ(t.bags.size(), 1u);
  EXPECT_EQ(t.bags[0].gpu_ranks, (std::vector<int>{0}));
}

TEST(ParseTopology, BenchmarkSweepStrings) {
  EXPECT_EQ(parse_topology("g1n32").unit_size, 32);
  EXPECT_EQ(parse_topology("g2n16").unit_size, 32);
  EXPECT_EQ(parse_topology("g4n8").unit_size, 32);
  EXPECT_EQ(parse_topology("g1n32").bags.size(), 32u);
}

struct BadSpec {
  const char* text;
  std::size_t offset;
};

TEST(ParseTopology, RejectsMalformedSpecsWithOffsets) {
  const BadSpec cases[] = {
      {"", 0},          {"x", 0},        {"g", 1},     {"g0n1", 1},
      {"g1n0", 3},      {"g1n", 3},      {"n1", 0},    {"g1m2", 2},
      {"g1n2+", 5},     {"+g1n1", 0},    {"g1n2 ", 4}, {" g1n2", 0},
      {"g1n2+g2", 7},   {"g1n2g2n1", 4}, {"G1n2", 0},  {"g99999999999999999999n1", 1},
  };
  for (const BadSpec& c : cases) {
    try {
      parse_topology(c.text);
      FAIL() << "expected ParseError for '" << c.text << "'";
    } catch (const ParseError& e) {
      EXPECT_EQ(e.offset(), c.offset) << "spec '" << c.text << "': " << e.what();
    }
  }
}

TEST(FormatTopology, CanonicalFormRoundTrips) {
  const char* specs[] = {"g1n2+g2n1+g4n1", "g8n4", "g1n1", "g2n2+g2n2", "g4n1+g1n4"};
  for (const char* s : specs) {
    const Topology t = parse_topology(s);
    const Topology again = parse_topology(format_topology(t));
    EXPECT_EQ(t, again) << s;
  }
  // Adjacent same-size terms collapse; the parse is identical either way.
  EXPECT_EQ(format_topology(parse_topology("g2n2+g2n2")), "g2n4");
}

TEST(FormatTopology, RandomTopologiesRoundTrip) {
  CounterRng rng({99});
  const int sizes[] = {1, 2, 4, 8};
  for (int trial = 0; trial < 200; ++trial) {
    std::string spec;
    const int terms = static_cast<int>(rng.next_int(1, 4));
    for (int t = 0; t < terms; ++t) {
      if (t > 0) spec += '+';
      spec += 'g' + std::to_string(sizes[rng.next_int(0, 3)]) + 'n' +
              std::to_string(rng.next_int(1, 5));
    }
    const Topology parsed = parse_topology(spec);
    EXPECT_EQ(parse_topology(format_topology(parsed)), parsed) << spec;
  }
}

TEST(Replicate, SingleReplicaCoversWholeWorld) {
  const WorldLayout layout = replicate(parse_topology("g8n4"), 32);
  EXPECT_EQ(layout.num_replicas(), 1);
}

TEST(Replicate, FourReplicasAtUnitOffsets) {
  const WorldLayout layout = replicate(parse_topology("g1n2+g2n1+g4n1"), 32);
  EXPECT_EQ(layout.num_replicas(), 4);
  EXPECT_EQ(global_bag(layout, 2, 3).gpu_ranks, (std::vector<int>{20, 21, 22, 23}));
}

TEST(Replicate, RejectsIncompatibleWorlds) {
  EXPECT_THROW(replicate(parse_topology("g8n1"), 12), ConfigError);
  EXPECT_THROW(replicate(parse_topology("g8n1"), 4), ConfigError);
}

TEST(BagOfRank, FindsBagAndPeers) {
  const WorldLayout g8 = replicate(parse_topology("g8n4"), 32);
  const BagLocation loc = bag_of_rank(g8, 0);
  EXPECT_EQ(loc.replica_id, 0);
  EXPECT_EQ(loc.bag_id, 0);
  EXPECT_EQ(loc.peer_ranks, (std::vector<int>{1, 2, 3, 4, 5, 6, 7}));

  const WorldLayout mixed = replicate(parse_topology("g1n2+g2n1+g4n1"), 8);
  const BagLocation two = bag_of_rank(mixed, 2);
  EXPECT_EQ(two.bag_id, 2);
  EXPECT_EQ(two.peer_ranks, (std::vector<int>{3}));

  const WorldLayout solo = replicate(parse_topology("g1n1"), 1);
  EXPECT_TRUE(bag_of_rank(solo, 0).peer_ranks.empty());

  EXPECT_THROW(bag_of_rank(g8, 32), ConfigError);
  EXPECT_THROW(bag_of_rank(g8, -1), ConfigError);
}

TEST(BagOfRank, SecondReplicaOffsets) {
  const WorldLayout layout = replicate(parse_topology("g1n2+g2n1+g4n1"), 16);
  const BagLocation loc = bag_of_rank(layout, 10);  // replica 1, local 2
  EXPECT_EQ(loc.replica_id, 1);
  EXPECT_EQ(loc.bag_id, 2);
  EXPECT_EQ(loc.peer_ranks, (std::vector<int>{11}));
}

TEST(Partition, BagsOfRandomLayoutsTileTheWorldExactly) {
  CounterRng rng({123});
  const int sizes[] = {1, 2, 4, 8};
  for (int trial = 0; trial < 100; ++trial) {
    std::string spec;
    const int terms = static_cast<int>(rng.next_int(1, 3));
    for (int t = 0; t < terms; ++t) {
      if (t > 0) spec += '+';
      spec += 'g' + std::to_string(sizes[rng.next_int(0, 3)]) + 'n' +
              std::to_string(rng.next_int(1, 3));
    }
    const Topology topo = parse_topology(spec);
    const int replicas = static_cast<int>(rng.next_int(1, 4));
    const WorldLayout layout = replicate(topo, topo.unit_size * replicas);

    std::set<int> covered;
    for (int rep = 0; rep < layout.num_replicas(); ++rep) {
      for (const ComputeBag& bag : layout.unit.bags) {
        for (int r : global_bag(layout, rep, bag.bag_id).gpu_ranks) {
          EXPECT_TRUE(covered.insert(r).second) << "rank " << r << " covered twice";
        }
      }
    }
    EXPECT_EQ(static_cast<int>(covered.size()), layout.world_size);
    EXPECT_EQ(*covered.begin(), 0);
    EXPECT_EQ(*covered.rbegin(), layout.world_size - 1);
  }
}

TEST(LayoutJson, DumpsReplicasAndRanks) {
  const WorldLayout layout = replicate(parse_topology("g2n1"), 4);
  const std::string j = layout_to_json(layout);
  EXPECT_NE(j.find("\"world_size\":4"), std::string::npos);
  EXPECT_NE(j.find("\"ranks\":[2,3]"), std::string::npos);
}

}  // namespace
}  // namespace seqbal
