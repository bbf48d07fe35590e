// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace seqbal {

// Spatial patch size of the latent tokenizer: a 16x16 pixel block becomes
// one token. Temporal compression maps 17 pixel frames to 5 latent frames
// and applies only to smooth clips, not sparse keyframes.
inline constexpr int kSpatialStride = 16;
inline constexpr int kTemporalNum = 5;
inline constexpr int kTemporalDen = 17;

// Text prompt lengths are uniform on [0, kMaxTextTokens], mean 196.
inline constexpr int kMaxTextTokens = 392;

// Aspect-ratio bucketing is modeled as one multiplicative factor on the
// spatial token count, uniform on [min, max], drawn once per stream per step.
inline constexpr double kAspectMultMin = 0.96;
inline constexpr double kAspectMultMax = 1.04;

// One synthetic data stream, parsed from a g{G}b{B}i{R}f{F}s{S} code:
// G GPUs, per-GPU batch B, square resolution R, F frames, S=1 when temporal
// compression applies.
struct StreamSpec {
  int gpus = 1;
  int batch_per_gpu = 1;
  int resolution = 256;
  int frames = 1;
  bool smooth = false;

  bool operator==(const StreamSpec&) const = default;
};

StreamSpec parse_data_code(std::string_view code);  // throws ParseError
std::string format_data_code(const StreamSpec& spec);

// The streams hosted by one sharding group of group_size GPUs; stream GPU
// counts must sum to group_size. Worlds larger than one group repeat the
// same configuration every group_size ranks.
struct ShardingGroupConfig {
  std::vector<StreamSpec> streams;
  int group_size = 0;

  void validate() const;  // throws ConfigError
};

// Text file: `group_size N` header line, then one data code per line.
// '#' starts a comment. Errors carry 1-based line numbers.
ShardingGroupConfig parse_scenario(std::istream& in);
ShardingGroupConfig parse_scenario_file(const std::string& path);

// The three benchmark scenarios, data codes verbatim.
ShardingGroupConfig preset_lowres_image();
ShardingGroupConfig preset_mixed_image();
ShardingGroupConfig preset_joint_image_video();
// nullptr-free lookup by name; throws ConfigError for unknown names.
ShardingGroupConfig scenario_preset(std::string_view name);
std::vector<std::string> scenario_preset_names();

struct SampleMeta {
  std::uint64_t sample_id = 0;
  std::int64_t text_len = 0;
  std::int64_t visual_len = 1;
  int origin_rank = 0;

  std::int64_t total_len() const { return text_len + visual_len; }
};

// Latent frame count: F for keyframes, round(F * 5/17) for smooth clips.
// Rounding to nearest keeps the 17 -> 5 anchor exact and maps 85 -> 25.
std::int64_t latent_frames(const StreamSpec& spec);

// round((R/16)^2 * aspect_multiplier) * latent_frames, at least 1.
std::int64_t visual_tokens(const StreamSpec& spec, double aspect_multiplier);

// Index of the stream that owns a group-local rank.
int stream_of_rank(const ShardingGroupConfig& config, int group_rank);

// The per-step multiplier shared by every sample of a stream.
double aspect_multiplier(std::uint64_t seed, std::int64_t step, int stream_index);

// B samples for the stream owning `rank` (a global rank; the stream is
// found via rank mod group_size). Pure function of (config, rank, step,
// seed): text lengths draw from key (seed, step, rank), the aspect
// multiplier from key (seed, step, stream).
std::vector<SampleMeta> next_batch(const ShardingGroupConfig& config, int rank,
                                   std::int64_t step, std::uint64_t seed);

// The sequence-parallel emulation stream: one minimal sample per step
// (text 0, visual 1), so the balancer offloads real work onto this rank.
SampleMeta dummy_sample(int rank, std::int64_t step);

// Stable packing of (step, rank, index) into a unique id.
std::uint64_t make_sample_id(std::int64_t step, int rank, int index);

}  // namespace seqbal
