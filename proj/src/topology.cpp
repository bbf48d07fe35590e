// SPDX-License-Identifier: Apache-2.0
#include "seqbal/topology.hpp"

#include <numeric>

#include "json.hpp"
#include "seqbal/error.hpp"

namespace seqbal {

namespace {

constexpr int kMaxUnitSize = 1 << 20;

// INT per grammar: one or more digits, value >= 1, overflow rejected.
int parse_int(std::string_view s, std::size_t& pos, const char* what) {
  const std::size_t start = pos;
  long long v = 0;
  while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') {
    v = v * 10 + (s[pos] - '0');
    if (v > kMaxUnitSize) throw ParseError(std::string(what) + " value too large", start);
    ++pos;
  }
  if (pos == start) throw ParseError(std::string("expected digits for ") + what, start);
  if (v < 1) throw ParseError(std::string(what) + " must be >= 1", start);
  return static_cast<int>(v);
}

}  // namespace

Topology parse_topology(std::string_view spec) {
  if (spec.empty()) throw ParseError("empty topology spec", 0);

  std::vector<BagSpec> terms;
  std::size_t pos = 0;
  while (true) {
    if (pos >= spec.size() || spec[pos] != 'g') throw ParseError("expected 'g'", pos);
    ++pos;
    BagSpec term;
    term.gpus_per_bag = parse_int(spec, pos, "bag size");
    if (pos >= spec.size() || spec[pos] != 'n') throw ParseError("expected 'n'", pos);
    ++pos;
    term.num_bags = parse_int(spec, pos, "bag count");
    terms.push_back(term);
    if (pos == spec.size()) break;
    if (spec[pos] != '+') throw ParseError("expected '+' or end of spec", pos);
    ++pos;
  }

  Topology topo;
  int next_rank = 0;
  for (const BagSpec& term : terms) {
    for (int i = 0; i < term.num_bags; ++i) {
      ComputeBag bag;
      bag.bag_id = static_cast<int>(topo.bags.size());
      bag.gpu_ranks.resize(term.gpus_per_bag);
      std::iota(bag.gpu_ranks.begin(), bag.gpu_ranks.end(), next_rank);
      next_rank += term.gpus_per_bag;
      if (next_rank > kMaxUnitSize) throw ParseError("unit size too large", 0);
      topo.bags.push_back(std::move(bag));
    }
  }
  topo.unit_size = next_rank;
  return topo;
}

std::string format_topology(const Topology& topo) {
  std::string out;
  std::size_t i = 0;
  while (i < topo.bags.size()) {
    const int size = topo.bags[i].size();
    std::size_t j = i;
    while (j < topo.bags.size() && topo.bags[j].size() == size) ++j;
    if (!out.empty()) out += '+';
    out += 'g' + std::to_string(size) + 'n' + std::to_string(j - i);
    i = j;
  }
  return out;
}

WorldLayout replicate(const Topology& topo, int world_size) {
  if (topo.unit_size < 1) throw ConfigError("topology has no GPUs");
  if (world_size < topo.unit_size) {
    throw ConfigError("world_size " + std::to_string(world_size) +
                      " is smaller than the sharding unit " + std::to_string(topo.unit_size));
  }
  if (world_size % topo.unit_size != 0) {
    throw ConfigError("world_size " + std::to_string(world_size) +
                      " is not a multiple of the sharding unit " +
                      std::to_string(topo.unit_size));
  }
  return WorldLayout{topo, world_size};
}

BagLocation bag_of_rank(const WorldLayout& layout, int rank) {
  if (rank < 0 || rank >= layout.world_size) {
    throw ConfigError("rank " + std::to_string(rank) + " outside world of " +
                      std::to_string(layout.world_size));
  }
  BagLocation loc;
  loc.replica_id = rank / layout.unit.unit_size;
  const int local = rank % layout.unit.unit_size;
  const int offset = loc.replica_id * layout.unit.unit_size;
  for (const ComputeBag& bag : layout.unit.bags) {
    if (local >= bag.gpu_ranks.front() && local <= bag.gpu_ranks.back()) {
      loc.bag_id = bag.bag_id;
      for (int r : bag.gpu_ranks) {
        if (r + offset != rank) loc.peer_ranks.push_back(r + offset);
      }
      return loc;
    }
  }
  throw ConfigError("rank not covered by any bag");  // unreachable for valid layouts
}

ComputeBag global_bag(const WorldLayout& layout, int replica_id, int bag_id) {
  if (replica_id < 0 || replica_id >= layout.num_replicas()) {
    throw ConfigError("replica " + std::to_string(replica_id) + " out of range");
  }
  if (bag_id < 0 || bag_id >= static_cast<int>(layout.unit.bags.size())) {
    throw ConfigError("bag " + std::to_string(bag_id) + " out of range");
  }
  ComputeBag bag = layout.unit.bags[bag_id];
  const int offset = replica_id * layout.unit.unit_size;
  for (int& r : bag.gpu_ranks) r += offset;
  return bag;
}

std::string layout_to_json(const WorldLayout& layout) {
  nlohmann::json j;
  j["world_size"] = layout.world_size;
  j["unit_size"] = layout.unit.unit_size;
  j["unit"] = format_topology(layout.unit);
  j["replicas"] = nlohmann::json::array();
  for (int r = 0; r < layout.num_replicas(); ++r) {
    nlohmann::json rep;
    rep["offset"] = r * layout.unit.unit_size;
    rep["bags"] = nlohmann::json::array();
    for (const ComputeBag& bag : layout.unit.bags) {
      nlohmann::json b;
      b["bag_id"] = bag.bag_id;
      auto ranks = global_bag(layout, r, bag.bag_id).gpu_ranks;
      b["ranks"] = ranks;
      rep["bags"].push_back(std::move(b));
    }
    j["replicas"].push_back(std::move(rep));
  }
  return j.dump();
}

}  // namespace seqbal
