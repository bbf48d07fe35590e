// SPDX-License-Identifier: Apache-2.0
#include "seqbal/exchange.hpp"

#include <algorithm>
#include <cstring>

#include "json.hpp"
#include "seqbal/error.hpp"
#include "seqbal/rng.hpp"

namespace seqbal {

namespace {
constexpr std::uint64_t kPayloadDomain = 0x7061796c6f6164ULL;
constexpr std::uint64_t kPerturbDomain = 0x706572747572ULL;
}  // namespace

double payload_value(std::uint64_t sample_id, std::int64_t position, int col) {
  const std::uint64_t h = derive_key({kPayloadDomain, sample_id,
                                      static_cast<std::uint64_t>(position),
                                      static_cast<std::uint64_t>(col)});
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double block_perturbation(std::uint64_t sample_id, std::int64_t position) {
  const std::uint64_t h =
      derive_key({kPerturbDomain, sample_id, static_cast<std::uint64_t>(position)});
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

World make_world(const std::vector<std::vector<SampleMeta>>& per_rank_samples,
                 int payload_width, int n_heads) {
  if (payload_width < 1 || n_heads < 1 || payload_width % n_heads != 0) {
    throw ConfigError("payload width must be a positive multiple of n_heads");
  }
  World world;
  world.payload_width = payload_width;
  world.n_heads = n_heads;
  world.ranks.resize(per_rank_samples.size());
  for (std::size_t r = 0; r < per_rank_samples.size(); ++r) {
    RankBuffer& buf = world.ranks[r];
    buf.rank = static_cast<int>(r);
    buf.mode = LayoutMode::ChunkFullHeads;
    buf.head_lo = 0;
    buf.head_hi = n_heads;
    buf.width = payload_width;
    std::int64_t rows = 0;
    for (const SampleMeta& s : per_rank_samples[r]) rows += s.total_len();
    buf.sample_ids.resize(rows);
    buf.positions.resize(rows);
    buf.payload.resize(rows * payload_width);
    std::int64_t cursor = 0;
    for (const SampleMeta& s : per_rank_samples[r]) {
      buf.segments.push_back({s.sample_id, 0, s.total_len()});
      for (std::int64_t p = 0; p < s.total_len(); ++p) {
        buf.sample_ids[cursor] = s.sample_id;
        buf.positions[cursor] = p;
        for (int c = 0; c < payload_width; ++c) {
          buf.payload[cursor * payload_width + c] = payload_value(s.sample_id, p, c);
        }
        ++cursor;
      }
    }
  }
  return world;
}

std::vector<std::vector<SequenceInfo>> gather_sequence_info(
    const std::vector<std::vector<SampleMeta>>& per_rank_samples) {
  std::vector<std::vector<SequenceInfo>> info(per_rank_samples.size());
  for (std::size_t r = 0; r < per_rank_samples.size(); ++r) {
    for (const SampleMeta& s : per_rank_samples[r]) {
      info[r].push_back({s.sample_id, s.total_len()});
    }
  }
  return info;
}

namespace {

// Row offset of every origin segment, per rank, in plan layout order.
std::vector<std::vector<std::int64_t>> segment_offsets(
    const std::vector<std::vector<Segment>>& layouts) {
  std::vector<std::vector<std::int64_t>> offsets(layouts.size());
  for (std::size_t r = 0; r < layouts.size(); ++r) {
    std::int64_t cursor = 0;
    offsets[r].reserve(layouts[r].size());
    for (const Segment& s : layouts[r]) {
      offsets[r].push_back(cursor);
      cursor += s.length;
    }
  }
  return offsets;
}

void check_world_matches_layout(const World& world,
                                const std::vector<std::vector<Segment>>& layout,
                                const char* op) {
  if (world.ranks.size() != layout.size()) {
    throw IntegrityError(std::string(op) + ": plan world size " +
                         std::to_string(layout.size()) + " != world ranks " +
                         std::to_string(world.ranks.size()));
  }
  for (std::size_t r = 0; r < layout.size(); ++r) {
    const RankBuffer& buf = world.ranks[r];
    if (buf.mode != LayoutMode::ChunkFullHeads || buf.width != world.payload_width) {
      throw IntegrityError(std::string(op) + ": rank " + std::to_string(r) +
                           " is not in (partial sequences, full heads) layout");
    }
    if (buf.segments.size() != layout[r].size()) {
      throw IntegrityError(std::string(op) + ": rank " + std::to_string(r) + " holds " +
                           std::to_string(buf.segments.size()) + " sequences, plan expects " +
                           std::to_string(layout[r].size()));
    }
    for (std::size_t s = 0; s < layout[r].size(); ++s) {
      if (!(buf.segments[s] == layout[r][s])) {
        throw IntegrityError(std::string(op) + ": rank " + std::to_string(r) +
                             " segment mismatch for sample " +
                             std::to_string(layout[r][s].sample_id));
      }
    }
  }
}

}  // namespace

World route(const World& world, const RoutingPlan& plan, Exec exec) {
  check_world_matches_layout(world, plan.origin, "route");

  World out;
  out.payload_width = world.payload_width;
  out.n_heads = world.n_heads;
  out.ranks.resize(plan.world_size);

  const auto src_offsets = segment_offsets(plan.origin);
  const auto dst_offsets = segment_offsets(plan.target);

  // Destination shells first, then one flat move list.
  for (int r = 0; r < plan.world_size; ++r) {
    RankBuffer& buf = out.ranks[r];
    buf.rank = r;
    buf.mode = LayoutMode::ChunkFullHeads;
    buf.head_lo = 0;
    buf.head_hi = world.n_heads;
    buf.width = world.payload_width;
    buf.segments = plan.target[r];
    std::int64_t rows = 0;
    for (const Segment& s : buf.segments) rows += s.length;
    buf.sample_ids.resize(rows);
    buf.positions.resize(rows);
    buf.payload.resize(rows * buf.width);
  }

  // A chunk's rows live inside the unique segment of the holding rank that
  // contains its token range; the same lookup positions it on both sides.
  auto locate = [](const std::vector<Segment>& segs, const ChunkAssignment& chunk,
                   const char* side) {
    for (std::size_t s = 0; s < segs.size(); ++s) {
      if (segs[s].sample_id == chunk.sample_id && chunk.start >= segs[s].first_pos &&
          chunk.end <= segs[s].first_pos + segs[s].length) {
        return s;
      }
    }
    throw IntegrityError("route: sample " + std::to_string(chunk.sample_id) + " chunk [" +
                         std::to_string(chunk.start) + "," + std::to_string(chunk.end) +
                         ") has no containing " + side + " segment");
  };

  std::vector<BlockMove> moves;
  moves.reserve(plan.chunks.size());
  for (const ChunkAssignment& chunk : plan.chunks) {
    if (chunk.end == chunk.start) continue;  // empty transfer
    const auto& origin_segs = plan.origin[chunk.source_rank];
    const auto& target_segs = plan.target[chunk.target_rank];
    const std::size_t src_seg = locate(origin_segs, chunk, "origin");
    const std::size_t dst_seg = locate(target_segs, chunk, "target");
    BlockMove m;
    m.src_rank = chunk.source_rank;
    m.src_row = src_offsets[chunk.source_rank][src_seg] +
                (chunk.start - origin_segs[src_seg].first_pos);
    m.src_col = 0;
    m.dst_rank = chunk.target_rank;
    m.dst_row = dst_offsets[chunk.target_rank][dst_seg] +
                (chunk.start - target_segs[dst_seg].first_pos);
    m.dst_col = 0;
    m.n_rows = chunk.end - chunk.start;
    m.n_cols = world.payload_width;
    m.copy_meta = true;
    moves.push_back(m);
  }

  apply_block_moves(world, moves, out, exec);
  return out;
}

World reverse_route(const World& world, const RoutingPlan& plan, Exec exec) {
  return route(world, reverse_plan(plan), exec);
}

namespace {

struct BagView {
  std::vector<int> ranks;                 // global ranks, bag order
  std::vector<std::uint64_t> sample_ids;  // bag sequence order
  std::vector<std::int64_t> full_lens;
};

// Validates that all members hold the same ordered sequence set in the
// canonical chunk split and returns the per-sequence full lengths.
BagView check_bag_chunk_layout(const World& world, const ComputeBag& bag) {
  BagView view;
  view.ranks = bag.gpu_ranks;
  const int g = bag.size();
  const RankBuffer& first = world.ranks.at(view.ranks.front());
  for (const Segment& s : first.segments) view.sample_ids.push_back(s.sample_id);

  for (int member = 0; member < g; ++member) {
    const RankBuffer& buf = world.ranks.at(view.ranks[member]);
    if (buf.mode != LayoutMode::ChunkFullHeads) {
      throw IntegrityError("pre_attn: rank " + std::to_string(view.ranks[member]) +
                           " is not in chunk layout");
    }
    if (buf.segments.size() != view.sample_ids.size()) {
      throw IntegrityError("pre_attn: bag members disagree on sequence count");
    }
    for (std::size_t s = 0; s < buf.segments.size(); ++s) {
      if (buf.segments[s].sample_id != view.sample_ids[s]) {
        throw IntegrityError("pre_attn: bag members disagree on sample " +
                             std::to_string(view.sample_ids[s]));
      }
    }
  }
  for (std::size_t s = 0; s < view.sample_ids.size(); ++s) {
    std::int64_t full = 0;
    for (int member = 0; member < g; ++member) {
      full += world.ranks.at(view.ranks[member]).segments[s].length;
    }
    const auto lens = chunk_lengths(full, g);
    std::int64_t start = 0;
    for (int member = 0; member < g; ++member) {
      const Segment& seg = world.ranks.at(view.ranks[member]).segments[s];
      if (seg.first_pos != start || seg.length != lens[member]) {
        throw IntegrityError("pre_attn: sample " + std::to_string(view.sample_ids[s]) +
                             " is not split by the canonical chunk rule");
      }
      start += lens[member];
    }
    view.full_lens.push_back(full);
  }
  return view;
}

}  // namespace

std::vector<std::int64_t> pre_attn(World& world, const ComputeBag& bag, Exec exec) {
  const int g = bag.size();
  if (g == 1) {
    // Single-GPU bag: already holds full sequences and all heads.
    std::vector<std::int64_t> lens;
    for (const Segment& s : world.ranks.at(bag.gpu_ranks[0]).segments) {
      lens.push_back(s.length);
    }
    return lens;
  }
  if (world.n_heads % g != 0) {
    throw ConfigError("pre_attn: bag of " + std::to_string(g) +
                      " GPUs does not divide n_heads " + std::to_string(world.n_heads));
  }
  const BagView view = check_bag_chunk_layout(world, bag);
  const int slice_cols = world.payload_width / g;
  const int heads_per_rank = world.n_heads / g;

  std::int64_t total_rows = 0;
  for (std::int64_t l : view.full_lens) total_rows += l;

  // Shells for the head-sliced buffers.
  World staged;
  staged.payload_width = world.payload_width;
  staged.n_heads = world.n_heads;
  staged.ranks.resize(world.ranks.size());
  for (int member = 0; member < g; ++member) {
    RankBuffer& buf = staged.ranks[view.ranks[member]];
    buf.rank = view.ranks[member];
    buf.mode = LayoutMode::FullSeqPartialHeads;
    buf.head_lo = member * heads_per_rank;
    buf.head_hi = (member + 1) * heads_per_rank;
    buf.width = slice_cols;
    buf.sample_ids.resize(total_rows);
    buf.positions.resize(total_rows);
    buf.payload.resize(total_rows * slice_cols);
    std::int64_t cursor = 0;
    for (std::size_t s = 0; s < view.sample_ids.size(); ++s) {
      buf.segments.push_back({view.sample_ids[s], 0, view.full_lens[s]});
      cursor += view.full_lens[s];
    }
  }

  std::vector<BlockMove> moves;
  for (int src_member = 0; src_member < g; ++src_member) {
    const int src_rank = view.ranks[src_member];
    const RankBuffer& src_buf = world.ranks[src_rank];
    std::int64_t src_row = 0, dst_seq_base = 0;
    for (std::size_t s = 0; s < view.sample_ids.size(); ++s) {
      const Segment& seg = src_buf.segments[s];
      for (int dst_member = 0; dst_member < g; ++dst_member) {
        if (seg.length > 0) {
          BlockMove m;
          m.src_rank = src_rank;
          m.src_row = src_row;
          m.src_col = dst_member * slice_cols;
          m.dst_rank = view.ranks[dst_member];
          m.dst_row = dst_seq_base + seg.first_pos;
          m.dst_col = 0;
          m.n_rows = seg.length;
          m.n_cols = slice_cols;
          // Every destination row is covered by exactly one source member,
          // so meta can ride along on every move without overlap.
          m.copy_meta = true;
          moves.push_back(m);
        }
      }
      src_row += seg.length;
      dst_seq_base += view.full_lens[s];
    }
  }
  apply_block_moves(world, moves, staged, exec);
  for (int member = 0; member < g; ++member) {
    world.ranks[view.ranks[member]] = std::move(staged.ranks[view.ranks[member]]);
  }
  return view.full_lens;
}

void post_attn(World& world, const ComputeBag& bag, Exec exec) {
  const int g = bag.size();
  if (g == 1) return;

  // Validate the full-seq layout and recover per-sequence lengths.
  std::vector<std::uint64_t> sample_ids;
  std::vector<std::int64_t> full_lens;
  {
    const RankBuffer& first = world.ranks.at(bag.gpu_ranks.front());
    if (first.mode != LayoutMode::FullSeqPartialHeads) {
      throw IntegrityError("post_attn: bag is not in (full sequences, partial heads) layout");
    }
    for (const Segment& s : first.segments) {
      sample_ids.push_back(s.sample_id);
      full_lens.push_back(s.length);
    }
    const int slice_cols = world.payload_width / g;
    const int heads_per_rank = world.n_heads / g;
    for (int member = 0; member < g; ++member) {
      const RankBuffer& buf = world.ranks.at(bag.gpu_ranks[member]);
      if (buf.mode != LayoutMode::FullSeqPartialHeads || buf.width != slice_cols ||
          buf.head_lo != member * heads_per_rank ||
          buf.head_hi != (member + 1) * heads_per_rank) {
        throw IntegrityError("post_attn: rank " + std::to_string(bag.gpu_ranks[member]) +
                             " head slice does not match its bag position");
      }
      if (buf.segments.size() != sample_ids.size()) {
        throw IntegrityError("post_attn: bag members disagree on sequence count");
      }
      for (std::size_t s = 0; s < sample_ids.size(); ++s) {
        if (buf.segments[s].sample_id != sample_ids[s] ||
            buf.segments[s].length != full_lens[s] || buf.segments[s].first_pos != 0) {
          throw IntegrityError("post_attn: bag members disagree on sample " +
                               std::to_string(sample_ids[s]));
        }
      }
    }
  }
  const int slice_cols = world.payload_width / g;

  // Chunk-layout shells.
  World staged;
  staged.payload_width = world.payload_width;
  staged.n_heads = world.n_heads;
  staged.ranks.resize(world.ranks.size());
  std::vector<std::vector<std::int64_t>> chunk_starts(sample_ids.size());
  std::vector<std::vector<std::int64_t>> chunk_lens_per_seq(sample_ids.size());
  for (std::size_t s = 0; s < sample_ids.size(); ++s) {
    chunk_lens_per_seq[s] = chunk_lengths(full_lens[s], g);
    std::int64_t start = 0;
    for (int member = 0; member < g; ++member) {
      chunk_starts[s].push_back(start);
      start += chunk_lens_per_seq[s][member];
    }
  }
  for (int member = 0; member < g; ++member) {
    RankBuffer& buf = staged.ranks[bag.gpu_ranks[member]];
    buf.rank = bag.gpu_ranks[member];
    buf.mode = LayoutMode::ChunkFullHeads;
    buf.head_lo = 0;
    buf.head_hi = world.n_heads;
    buf.width = world.payload_width;
    std::int64_t rows = 0;
    for (std::size_t s = 0; s < sample_ids.size(); ++s) {
      buf.segments.push_back(
          {sample_ids[s], chunk_starts[s][member], chunk_lens_per_seq[s][member]});
      rows += chunk_lens_per_seq[s][member];
    }
    buf.sample_ids.resize(rows);
    buf.positions.resize(rows);
    buf.payload.resize(rows * buf.width);
  }

  std::vector<BlockMove> moves;
  for (int dst_member = 0; dst_member < g; ++dst_member) {
    const int dst_rank = bag.gpu_ranks[dst_member];
    std::int64_t dst_row = 0, src_seq_base = 0;
    for (std::size_t s = 0; s < sample_ids.size(); ++s) {
      const std::int64_t len = chunk_lens_per_seq[s][dst_member];
      if (len > 0) {
        for (int src_member = 0; src_member < g; ++src_member) {
          BlockMove m;
          m.src_rank = bag.gpu_ranks[src_member];
          m.src_row = src_seq_base + chunk_starts[s][dst_member];
          m.src_col = 0;
          m.dst_rank = dst_rank;
          m.dst_row = dst_row;
          m.dst_col = src_member * slice_cols;
          m.n_rows = len;
          m.n_cols = slice_cols;
          // Meta written once per destination row.
          m.copy_meta = src_member == 0;
          moves.push_back(m);
        }
      }
      dst_row += len;
      src_seq_base += full_lens[s];
    }
  }
  apply_block_moves(world, moves, staged, exec);
  for (int member = 0; member < g; ++member) {
    world.ranks[bag.gpu_ranks[member]] = std::move(staged.ranks[bag.gpu_ranks[member]]);
  }
}

std::uint64_t content_checksum(const World& world) {
  // Sum of per-element mixes: order-independent, so any relocation of the
  // same content maps to the same digest.
  std::uint64_t acc = 0;
  for (const RankBuffer& buf : world.ranks) {
    const int head_cols =
        buf.width == world.payload_width ? 0 : buf.head_lo * (world.payload_width / world.n_heads);
    for (std::int64_t r = 0; r < buf.num_rows(); ++r) {
      for (int c = 0; c < buf.width; ++c) {
        std::uint64_t bits;
        static_assert(sizeof(double) == sizeof(std::uint64_t));
        std::memcpy(&bits, &buf.payload[r * buf.width + c], sizeof(bits));
        const int global_col = head_cols + c;
        acc += derive_key({buf.sample_ids[r], static_cast<std::uint64_t>(buf.positions[r]),
                           static_cast<std::uint64_t>(global_col), bits});
      }
    }
  }
  return acc;
}

bool worlds_bitwise_equal(const World& a, const World& b) {
  if (a.payload_width != b.payload_width || a.n_heads != b.n_heads ||
      a.ranks.size() != b.ranks.size()) {
    return false;
  }
  for (std::size_t r = 0; r < a.ranks.size(); ++r) {
    const RankBuffer& x = a.ranks[r];
    const RankBuffer& y = b.ranks[r];
    if (x.mode != y.mode || x.head_lo != y.head_lo || x.head_hi != y.head_hi ||
        x.width != y.width || x.segments != y.segments ||
        x.sample_ids != y.sample_ids || x.positions != y.positions) {
      return false;
    }
    if (x.payload.size() != y.payload.size()) return false;
    if (!x.payload.empty() &&
        std::memcmp(x.payload.data(), y.payload.data(),
                    x.payload.size() * sizeof(double)) != 0) {
      return false;
    }
  }
  return true;
}

std::string world_to_json(const World& world) {
  nlohmann::json j;
  j["payload_width"] = world.payload_width;
  j["n_heads"] = world.n_heads;
  j["ranks"] = nlohmann::json::array();
  for (const RankBuffer& buf : world.ranks) {
    nlohmann::json r;
    r["rank"] = buf.rank;
    r["mode"] = buf.mode == LayoutMode::ChunkFullHeads ? "partial_seq_full_heads"
                                                       : "full_seq_partial_heads";
    r["heads"] = {buf.head_lo, buf.head_hi};
    r["segments"] = nlohmann::json::array();
    for (const Segment& s : buf.segments) {
      r["segments"].push_back(
          {{"sample_id", s.sample_id}, {"first_pos", s.first_pos}, {"len", s.length}});
    }
    j["ranks"].push_back(std::move(r));
  }
  return j.dump();
}

}  // namespace seqbal
