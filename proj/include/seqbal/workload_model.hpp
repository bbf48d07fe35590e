// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace seqbal {

// Transformer geometry used by the workload model. n_blocks scales latency
// only; per-block cost depends on d_model alone.
struct ModelShape {
  int d_model = 3072;
  int n_heads = 24;
  int d_head = 128;
  int n_blocks = 57;

  void validate() const;  // throws ConfigError

  // 12B-parameter DiT used in the throughput experiments: 57 blocks,
  // d_model 3072, 24 heads of 128.
  static ModelShape flux();
};

// Gamma presets measured on H100 for FLUX-scale models. The latency-curve
// fit and the throughput benchmarks report different values; both are
// exposed, kGammaH100 is the default.
inline constexpr double kGammaH100 = 0.49;
inline constexpr double kGammaH100LatencyFit = 0.385;

// Maps sequence length to compute cost and latency.
//   gamma  down-weights the attention term (memory-bandwidth bound in
//          practice, so it contributes less latency per FLOP);
//   k      seconds per gamma-weighted FLOP on the target hardware.
struct WorkloadModel {
  ModelShape shape;
  double gamma = kGammaH100;
  double k = 4.0e-15;

  void validate() const;  // throws ConfigError
};

struct LatencySample {
  std::int64_t seq_len = 0;  // tokens
  double latency_s = 0.0;    // per-block seconds
};

// Per-block transformer cost of an l-token sequence at width d:
//   24*l*d^2  linear projections (attention qkvo + feedforward)
//   4*l^2*d   attention score/value matmuls
double flops_per_block(std::int64_t seq_len, std::int64_t d_model);

// Same count as an exact integer; no overflow for l, d up to 2^20.
unsigned __int128 flops_per_block_exact(std::int64_t seq_len, std::int64_t d_model);
std::string u128_to_string(unsigned __int128 v);

// 24*l*d^2 + gamma*4*l^2*d. The balancer's notion of "work".
double gamma_weighted_workload(std::int64_t seq_len, const WorkloadModel& model);

// Work one GPU carries when the sequence is spread over a bag of bag_size
// GPUs. Exactly workload/bag_size: the linear term splits by contiguous
// chunk and the attention term splits by heads, so the division is even.
// Throws ConfigError when bag_size does not divide n_heads.
double per_gpu_workload(std::int64_t seq_len, int bag_size, const WorkloadModel& model);

// Compute-only latency: k * n_blocks * per_gpu_workload. Communication is
// accounted separately in the metrics module.
double estimate_latency(std::int64_t seq_len, int bag_size, const WorkloadModel& model);

struct GammaFit {
  double k = 0.0;
  double gamma = 0.0;
  double r_squared = 0.0;
};

// Ordinary least squares of t = a*l + b*l^2 (closed-form 2x2 normal
// equations on length-normalized inputs), then k = a/(24 d^2) and
// gamma = 6 b d / a.
//
// Samples are PER-BLOCK latencies; callers measuring whole-model time must
// divide by n_blocks first. Throws FitError when all seq_len are equal
// (rank-deficient) or when a fitted coefficient is not positive (data
// inconsistent with the model).
GammaFit fit_gamma(const std::vector<LatencySample>& samples, std::int64_t d_model);

// Strict CSV reader, header `seq_len,latency_s`. Malformed rows are rejected
// with their 1-based line number.
std::vector<LatencySample> read_latency_csv(std::istream& in);
std::vector<LatencySample> read_latency_csv_file(const std::string& path);

}  // namespace seqbal
