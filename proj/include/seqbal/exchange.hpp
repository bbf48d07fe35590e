// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "seqbal/balancer.hpp"
#include "seqbal/data_sim.hpp"
#include "seqbal/topology.hpp"

namespace seqbal {

enum class Exec { Serial, Parallel };

enum class LayoutMode { ChunkFullHeads, FullSeqPartialHeads };

// Packed token buffer of one simulated rank. Rows are stored
// structure-of-arrays: ids/positions per row, payload row-major with
// `width` columns. Rows are grouped by sequence (see `segments`), positions
// ascending within a group.
struct RankBuffer {
  int rank = 0;
  LayoutMode mode = LayoutMode::ChunkFullHeads;
  int head_lo = 0;  // heads held, half-open range
  int head_hi = 0;
  int width = 0;  // payload columns currently held
  std::vector<std::uint64_t> sample_ids;
  std::vector<std::int64_t> positions;
  std::vector<double> payload;
  std::vector<Segment> segments;

  std::int64_t num_rows() const { return static_cast<std::int64_t>(sample_ids.size()); }
};

// All rank buffers plus the sharding constants: payload_width is the full
// hidden width W of the witness payload (a simulation knob, independent of
// the workload model's d_model), n_heads the head count H used for the
// attention layout transform. W must be a multiple of H.
struct World {
  int payload_width = 0;
  int n_heads = 0;
  std::vector<RankBuffer> ranks;
};

// Content witness: payload value at (sample, position, column) is a fixed
// 64-bit mix mapped to [0, 1). Recomputable anywhere, which is what makes
// end-to-end reversibility testable on content rather than metadata.
double payload_value(std::uint64_t sample_id, std::int64_t position, int col);

// Deterministic per-row delta standing in for a transformer block's output.
double block_perturbation(std::uint64_t sample_id, std::int64_t position);

// Builds the initial world: each rank holds its samples in order, rows
// filled from payload_value.
World make_world(const std::vector<std::vector<SampleMeta>>& per_rank_samples,
                 int payload_width, int n_heads);

// Per-rank (sample_id, length) metadata in buffer order, the input
// plan_routing expects.
std::vector<std::vector<SequenceInfo>> gather_sequence_info(
    const std::vector<std::vector<SampleMeta>>& per_rank_samples);

// Executes the plan's single all-to-all: every chunk relocates to its
// target rank, receive side packed in plan order. Throws IntegrityError
// naming the sample when the world does not match the plan's origin layout.
World route(const World& world, const RoutingPlan& plan, Exec exec = Exec::Parallel);

// route with the inverse plan: restores original placement and order.
World reverse_route(const World& world, const RoutingPlan& plan, Exec exec = Exec::Parallel);

// Ulysses layout transform for one bag, in place:
// (partial sequences, full heads) -> (full sequences, partial heads).
// Afterwards every member holds all tokens of the bag's sequences,
// restricted to its H/G-head slice. Returns the full per-sequence lengths.
// No-op for single-GPU bags.
std::vector<std::int64_t> pre_attn(World& world, const ComputeBag& bag,
                                   Exec exec = Exec::Parallel);

// Exact inverse of pre_attn: back to (partial sequences, full heads).
void post_attn(World& world, const ComputeBag& bag, Exec exec = Exec::Parallel);

// One rectangular copy between rank buffers. Destination regions of a move
// list are always disjoint, so parallel execution is bit-identical to
// serial execution.
struct BlockMove {
  int src_rank = 0;
  std::int64_t src_row = 0;
  int src_col = 0;
  int dst_rank = 0;
  std::int64_t dst_row = 0;
  int dst_col = 0;
  std::int64_t n_rows = 0;
  int n_cols = 0;
  bool copy_meta = true;  // also copy sample_id/position for the rows
};

// Serial reference kernel.
void apply_block_moves_serial(const World& src, const std::vector<BlockMove>& moves,
                              World& dst);
// OpenMP kernel; must produce bit-identical buffers.
void apply_block_moves_parallel(const World& src, const std::vector<BlockMove>& moves,
                                World& dst);
void apply_block_moves(const World& src, const std::vector<BlockMove>& moves, World& dst,
                       Exec exec);

// Order-independent digest over (sample_id, position, column, value bits);
// invariant under route/reverse_route/pre_attn/post_attn.
std::uint64_t content_checksum(const World& world);

bool worlds_bitwise_equal(const World& a, const World& b);

// Debug snapshot: per-rank segments, layout mode and head range as JSON.
std::string world_to_json(const World& world);

}  // namespace seqbal
