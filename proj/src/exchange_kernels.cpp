// SPDX-License-Identifier: Apache-2.0
//
// The data-moving inner loops of the exchange simulator. Every BlockMove
// list produced by route/pre_attn/post_attn has pairwise-disjoint
// destination regions, so the OpenMP kernel writes the same bytes as the
// serial reference in any schedule; tests assert bit-identical worlds.
#include <cstring>

#include "seqbal/exchange.hpp"

namespace seqbal {

namespace {

inline void copy_one_move(const World& src, const BlockMove& m, World& dst) {
  const RankBuffer& in = src.ranks[m.src_rank];
  RankBuffer& out = dst.ranks[m.dst_rank];
  const int in_w = in.width;
  const int out_w = out.width;
  for (std::int64_t r = 0; r < m.n_rows; ++r) {
    const double* src_row = in.payload.data() + (m.src_row + r) * in_w + m.src_col;
    double* dst_row = out.payload.data() + (m.dst_row + r) * out_w + m.dst_col;
    std::memcpy(dst_row, src_row, sizeof(double) * static_cast<std::size_t>(m.n_cols));
  }
  if (m.copy_meta) {
    std::memcpy(out.sample_ids.data() + m.dst_row, in.sample_ids.data() + m.src_row,
                sizeof(std::uint64_t) * static_cast<std::size_t>(m.n_rows));
    std::memcpy(out.positions.data() + m.dst_row, in.positions.data() + m.src_row,
                sizeof(std::int64_t) * static_cast<std::size_t>(m.n_rows));
  }
}

}  // namespace

void apply_block_moves_serial(const World& src, const std::vector<BlockMove>& moves,
                              World& dst) {
  for (const BlockMove& m : moves) copy_one_move(src, m, dst);
}

void apply_block_moves_parallel(const World& src, const std::vector<BlockMove>& moves,
                                World& dst) {
  const std::int64_t n = static_cast<std::int64_t>(moves.size());
#pragma omp parallel for schedule(dynamic, 8)
  for (std::int64_t i = 0; i < n; ++i) {
    copy_one_move(src, moves[i], dst);
  }
}

void apply_block_moves(const World& src, const std::vector<BlockMove>& moves, World& dst,
                       Exec exec) {
  if (exec == Exec::Serial) {
    apply_block_moves_serial(src, moves, dst);
  } else {
    apply_block_moves_parallel(src, moves, dst);
  }
}

}  // namespace seqbal
