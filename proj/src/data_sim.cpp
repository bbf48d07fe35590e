// SPDX-License-Identifier: Apache-2.0
#include "seqbal/data_sim.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <sstream>

#include "seqbal/error.hpp"
#include "seqbal/rng.hpp"

namespace seqbal {

namespace {

constexpr std::int64_t kMaxFieldValue = 1 << 20;

std::int64_t parse_field_int(std::string_view s, std::size_t& pos, const char* what) {
  const std::size_t start = pos;
  std::int64_t v = 0;
  while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') {
    v = v * 10 + (s[pos] - '0');
    if (v > kMaxFieldValue) throw ParseError(std::string(what) + " value too large", start);
    ++pos;
  }
  if (pos == start) throw ParseError(std::string("expected digits for ") + what, start);
  return v;
}

void expect_tag(std::string_view s, std::size_t& pos, char tag) {
  if (pos >= s.size() || s[pos] != tag) {
    throw ParseError(std::string("expected '") + tag + "'", pos);
  }
  ++pos;
}

}  // namespace

StreamSpec parse_data_code(std::string_view code) {
  if (code.empty()) throw ParseError("empty data code", 0);
  std::size_t pos = 0;
  StreamSpec spec;

  expect_tag(code, pos, 'g');
  const std::size_t g_at = pos;
  spec.gpus = static_cast<int>(parse_field_int(code, pos, "gpu count"));
  if (spec.gpus < 1) throw ParseError("gpu count must be >= 1", g_at);

  expect_tag(code, pos, 'b');
  const std::size_t b_at = pos;
  spec.batch_per_gpu = static_cast<int>(parse_field_int(code, pos, "batch size"));
  if (spec.batch_per_gpu < 1) throw ParseError("batch size must be >= 1", b_at);

  expect_tag(code, pos, 'i');
  const std::size_t i_at = pos;
  spec.resolution = static_cast<int>(parse_field_int(code, pos, "resolution"));
  if (spec.resolution < 1) throw ParseError("resolution must be >= 1", i_at);
  if (spec.resolution % kSpatialStride != 0) {
    throw ParseError("resolution must be a multiple of " + std::to_string(kSpatialStride), i_at);
  }

  expect_tag(code, pos, 'f');
  const std::size_t f_at = pos;
  spec.frames = static_cast<int>(parse_field_int(code, pos, "frame count"));
  if (spec.frames < 1) throw ParseError("frame count must be >= 1", f_at);

  expect_tag(code, pos, 's');
  if (pos >= code.size() || (code[pos] != '0' && code[pos] != '1')) {
    throw ParseError("smoothness flag must be 0 or 1", pos);
  }
  spec.smooth = code[pos] == '1';
  ++pos;

  if (pos != code.size()) throw ParseError("trailing characters after data code", pos);
  return spec;
}

std::string format_data_code(const StreamSpec& spec) {
  return "g" + std::to_string(spec.gpus) + "b" + std::to_string(spec.batch_per_gpu) + "i" +
         std::to_string(spec.resolution) + "f" + std::to_string(spec.frames) + "s" +
         (spec.smooth ? "1" : "0");
}

void ShardingGroupConfig::validate() const {
  if (group_size < 1) throw ConfigError("group_size must be >= 1");
  if (streams.empty()) throw ConfigError("scenario has no data streams");
  int total = 0;
  for (const StreamSpec& s : streams) total += s.gpus;
  if (total != group_size) {
    throw ConfigError("stream GPU counts sum to " + std::to_string(total) +
                      " but group_size is " + std::to_string(group_size));
  }
}

ShardingGroupConfig parse_scenario(std::istream& in) {
  ShardingGroupConfig config;
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    while (!line.empty() && (line.back() == ' ' || line.back() == '\t')) line.pop_back();
    if (line.empty()) continue;

    if (!have_header) {
      std::istringstream ls(line);
      std::string key;
      ls >> key;
      if (key != "group_size" || !(ls >> config.group_size) || !(ls >> std::ws).eof()) {
        throw ParseError("line " + std::to_string(line_no) +
                             ": expected 'group_size <N>' header",
                         line_no);
      }
      have_header = true;
      continue;
    }
    try {
      config.streams.push_back(parse_data_code(line));
    } catch (const ParseError& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what(), line_no);
    }
  }
  if (!have_header) throw ParseError("scenario file missing 'group_size' header", 0);
  config.validate();
  return config;
}

ShardingGroupConfig parse_scenario_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scenario file: " + path);
  return parse_scenario(in);
}

namespace {

ShardingGroupConfig scenario_from_codes(std::initializer_list<const char*> codes) {
  ShardingGroupConfig config;
  config.group_size = 0;
  for (const char* code : codes) {
    config.streams.push_back(parse_data_code(code));
    config.group_size += config.streams.back().gpus;
  }
  config.validate();
  return config;
}

}  // namespace

ShardingGroupConfig preset_lowres_image() {
  return scenario_from_codes({"g32b32i256f1s0"});
}

ShardingGroupConfig preset_mixed_image() {
  return scenario_from_codes(
      {"g16b4i256f1s0", "g4b5i512f1s0", "g4b5i1024f1s0", "g8b1i2048f1s0"});
}

ShardingGroupConfig preset_joint_image_video() {
  return scenario_from_codes({"g8b4i256f1s0", "g2b5i512f1s0", "g2b5i1024f1s0",
                              "g4b1i2048f1s0", "g1b10i256f4s0", "g3b1i512f4s0",
                              "g8b2i256f85s1", "g4b1i512f85s1"});
}

ShardingGroupConfig scenario_preset(std::string_view name) {
  if (name == "lowres_image") return preset_lowres_image();
  if (name == "mixed_image") return preset_mixed_image();
  if (name == "joint_image_video") return preset_joint_image_video();
  throw ConfigError("unknown scenario preset '" + std::string(name) +
                    "'; known: lowres_image, mixed_image, joint_image_video");
}

std::vector<std::string> scenario_preset_names() {
  return {"lowres_image", "mixed_image", "joint_image_video"};
}

std::int64_t latent_frames(const StreamSpec& spec) {
  if (!spec.smooth) return spec.frames;
  return std::llround(static_cast<double>(spec.frames) * kTemporalNum / kTemporalDen);
}

std::int64_t visual_tokens(const StreamSpec& spec, double aspect_multiplier) {
  const std::int64_t side = spec.resolution / kSpatialStride;
  const std::int64_t spatial = side * side;
  const std::int64_t scaled =
      std::llround(static_cast<double>(spatial) * aspect_multiplier);
  const std::int64_t tokens = scaled * latent_frames(spec);
  return tokens < 1 ? 1 : tokens;
}

int stream_of_rank(const ShardingGroupConfig& config, int group_rank) {
  if (group_rank < 0 || group_rank >= config.group_size) {
    throw ConfigError("rank " + std::to_string(group_rank) + " outside sharding group of " +
                      std::to_string(config.group_size));
  }
  int cursor = 0;
  for (std::size_t i = 0; i < config.streams.size(); ++i) {
    cursor += config.streams[i].gpus;
    if (group_rank < cursor) return static_cast<int>(i);
  }
  throw ConfigError("rank not covered by any stream");
}

namespace {
// Key-domain tags keep the three draw families (text lengths, aspect
// multipliers, payload hashes) in disjoint streams.
constexpr std::uint64_t kTextDomain = 0x7465787421ULL;
constexpr std::uint64_t kAspectDomain = 0x6173706563ULL;
}  // namespace

double aspect_multiplier(std::uint64_t seed, std::int64_t step, int stream_index) {
  CounterRng rng({kAspectDomain, seed, static_cast<std::uint64_t>(step),
                  static_cast<std::uint64_t>(stream_index)});
  return rng.next_real(kAspectMultMin, kAspectMultMax);
}

std::uint64_t make_sample_id(std::int64_t step, int rank, int index) {
  return (static_cast<std::uint64_t>(step) << 32) |
         (static_cast<std::uint64_t>(rank & 0xffff) << 16) |
         static_cast<std::uint64_t>(index & 0xffff);
}

std::vector<SampleMeta> next_batch(const ShardingGroupConfig& config, int rank,
                                   std::int64_t step, std::uint64_t seed) {
  config.validate();
  if (rank < 0) throw ConfigError("rank must be >= 0");
  const int group_rank = rank % config.group_size;
  const int stream_idx = stream_of_rank(config, group_rank);
  const StreamSpec& stream = config.streams[stream_idx];

  const double mult = aspect_multiplier(seed, step, stream_idx);
  CounterRng text_rng({kTextDomain, seed, static_cast<std::uint64_t>(step),
                       static_cast<std::uint64_t>(rank)});

  std::vector<SampleMeta> batch;
  batch.reserve(stream.batch_per_gpu);
  for (int i = 0; i < stream.batch_per_gpu; ++i) {
    SampleMeta sample;
    sample.sample_id = make_sample_id(step, rank, i);
    sample.text_len = text_rng.next_int(0, kMaxTextTokens);
    sample.visual_len = visual_tokens(stream, mult);
    sample.origin_rank = rank;
    batch.push_back(sample);
  }
  return batch;
}

SampleMeta dummy_sample(int rank, std::int64_t step) {
  SampleMeta sample;
  sample.sample_id = make_sample_id(step, rank, 0);
  sample.text_len = 0;
  sample.visual_len = 1;
  sample.origin_rank = rank;
  return sample;
}

}  // namespace seqbal
