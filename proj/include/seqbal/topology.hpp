// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace seqbal {

// One term of the topology grammar: N bags of G GPUs each.
struct BagSpec {
  int gpus_per_bag = 1;
  int num_bags = 1;
};

// A group of GPUs that jointly processes a set of sequences. Ranks are
// consecutive so that e.g. an 8-GPU bag maps onto one NVLink node.
struct ComputeBag {
  int bag_id = 0;
  std::vector<int> gpu_ranks;

  int size() const { return static_cast<int>(gpu_ranks.size()); }

  bool operator==(const ComputeBag&) const = default;
};

// One sharding unit: the bags named by a topology string, with unit-local
// ranks [0, unit_size).
struct Topology {
  std::vector<ComputeBag> bags;
  int unit_size = 0;

  bool operator==(const Topology&) const = default;
};

// Grammar: term ('+' term)*, term := 'g' INT 'n' INT, INT >= 1, no
// whitespace. Bags expand in textual order; rank ranges are contiguous in
// that order. Throws ParseError with the byte offset of the problem.
Topology parse_topology(std::string_view spec);

// Canonical form: consecutive equal-size bags collapse into one gGnN term.
// Always re-parses to an identical Topology.
std::string format_topology(const Topology& topo);

// The unit tiled across the world. Replica r covers global ranks
// [r*unit_size, (r+1)*unit_size); balancing never crosses replicas.
struct WorldLayout {
  Topology unit;
  int world_size = 0;

  int num_replicas() const { return unit.unit_size ? world_size / unit.unit_size : 0; }
};

// Throws ConfigError unless world_size is a positive multiple of unit_size.
WorldLayout replicate(const Topology& topo, int world_size);

struct BagLocation {
  int replica_id = 0;
  int bag_id = 0;
  std::vector<int> peer_ranks;  // other global ranks in the same bag
};

BagLocation bag_of_rank(const WorldLayout& layout, int rank);

// The bag's global ranks in a given replica.
ComputeBag global_bag(const WorldLayout& layout, int replica_id, int bag_id);

// {"world_size":..., "unit_size":..., "replicas":[{"bags":[{"ranks":[...]}]}]}
std::string layout_to_json(const WorldLayout& layout);

}  // namespace seqbal
