// SPDX-License-Identifier: Apache-2.0
#include "seqbal/workload_model.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "seqbal/error.hpp"
#include "seqbal/rng.hpp"

namespace seqbal {
namespace {

TEST(FlopsPerBlock, ZeroLengthSequenceCostsNothing) {
  EXPECT_EQ(flops_per_block(0, 3072), 0.0);
}

TEST(FlopsPerBlock, DirectEvaluation) {
  // 24*1024*3072^2 + 4*1024^2*3072
  EXPECT_EQ(flops_per_block(1024, 3072), 244813135872.0);
  EXPECT_EQ(flops_per_block(1, 1), 28.0);
}

TEST(FlopsPerBlock, LargeInputsDoNotOverflow) {
  const double v = flops_per_block(65536, 8192);
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_EQ(u128_to_string(flops_per_block_exact(65536, 8192)), "246290604621824");
  EXPECT_DOUBLE_EQ(v, 246290604621824.0);
}

TEST(FlopsPerBlock, ExactCountAtUpperBound) {
  // 24*2^60 + 4*2^60 = 28*2^60, beyond int64 range.
  const auto v = flops_per_block_exact(1 << 20, 1 << 20);
  EXPECT_EQ(u128_to_string(v), "32281802128991715328");
}

TEST(FlopsPerBlock, RejectsBadArguments) {
  EXPECT_THROW(flops_per_block(-1, 3072), ConfigError);
  EXPECT_THROW(flops_per_block(10, 0), ConfigError);
  EXPECT_THROW(flops_per_block_exact(1 + (1LL << 20), 16), ConfigError);
}

WorkloadModel model_with(double gamma, int d_model = 3072, int n_heads = 24,
                         int n_blocks = 1, double k = 1.0) {
  WorkloadModel m;
  m.shape = ModelShape{d_model, n_heads, d_model / n_heads, n_blocks};
  m.gamma = gamma;
  m.k = k;
  return m;
}

TEST(GammaWeighted, GammaOneReducesToRawFlops) {
  const auto m = model_with(1.0);
  EXPECT_DOUBLE_EQ(gamma_weighted_workload(1024, m), flops_per_block(1024, 3072));
  EXPECT_EQ(gamma_weighted_workload(0, m), 0.0);
}

TEST(GammaWeighted, LatencyFitPreset) {
  const auto m = model_with(kGammaH100LatencyFit);
  EXPECT_NEAR(gamma_weighted_workload(1024, m), 236888921210.88, 1e-3);
}

TEST(GammaWeighted, StrictlyIncreasingInLength) {
  const auto m = model_with(0.49);
  CounterRng rng({42});
  for (int i = 0; i < 200; ++i) {
    const std::int64_t l = rng.next_int(1, 100000);
    EXPECT_LT(gamma_weighted_workload(l, m), gamma_weighted_workload(l + 1, m));
  }
}

TEST(GammaWeighted, SuperadditiveInLength) {
  // The quadratic attention term makes joining sequences strictly more
  // expensive than processing the parts — the reason chunking helps.
  const auto m = model_with(0.49);
  CounterRng rng({7});
  for (int i = 0; i < 200; ++i) {
    const std::int64_t l1 = rng.next_int(1, 50000);
    const std::int64_t l2 = rng.next_int(1, 50000);
    EXPECT_GT(gamma_weighted_workload(l1 + l2, m),
              gamma_weighted_workload(l1, m) + gamma_weighted_workload(l2, m));
  }
}

TEST(PerGpuWorkload, SingleGpuBagIsIdentity) {
  const auto m = model_with(0.49);
  EXPECT_DOUBLE_EQ(per_gpu_workload(1234, 1, m), gamma_weighted_workload(1234, m));
}

TEST(PerGpuWorkload, EightWaySplit) {
  const auto m = model_with(kGammaH100LatencyFit);
  EXPECT_NEAR(per_gpu_workload(1024, 8, m), 236888921210.88 / 8.0, 1e-3);
}

TEST(PerGpuWorkload, BagEqualToHeadCountIsAccepted) {
  const auto m = model_with(0.49);
  EXPECT_DOUBLE_EQ(per_gpu_workload(10, 24, m), gamma_weighted_workload(10, m) / 24.0);
}

TEST(PerGpuWorkload, RejectsBagNotDividingHeads) {
  const auto m = model_with(0.49);
  EXPECT_THROW(per_gpu_workload(10, 5, m), ConfigError);
  EXPECT_THROW(per_gpu_workload(10, 0, m), ConfigError);
}

TEST(PerGpuWorkload, SplitTimesBagRecoversTotal) {
  const auto m = model_with(0.49);
  CounterRng rng({11});
  const int divisors[] = {1, 2, 3, 4, 6, 8, 12, 24};
  for (int i = 0; i < 200; ++i) {
    const std::int64_t l = rng.next_int(0, 100000);
    const int g = divisors[rng.next_int(0, 7)];
    EXPECT_DOUBLE_EQ(per_gpu_workload(l, g, m) * g, gamma_weighted_workload(l, m));
  }
}

TEST(EstimateLatency, ZeroSequenceIsFree) {
  EXPECT_EQ(estimate_latency(0, 1, model_with(0.49)), 0.0);
}

TEST(EstimateLatency, UnitConstantsChainThroughExamples) {
  EXPECT_DOUBLE_EQ(estimate_latency(1024, 1, model_with(1.0)), 244813135872.0);
}

TEST(EstimateLatency, LinearInBlockCount) {
  auto m1 = model_with(0.49);
  auto m2 = m1;
  m2.shape.n_blocks = 2 * m1.shape.n_blocks;
  EXPECT_DOUBLE_EQ(estimate_latency(777, 2, m2), 2.0 * estimate_latency(777, 2, m1));
}

std::vector<LatencySample> synth_samples(double k, double gamma, std::int64_t d,
                                         const std::vector<std::int64_t>& lens) {
  std::vector<LatencySample> out;
  for (std::int64_t l : lens) {
    const double ld = static_cast<double>(l);
    const double dd = static_cast<double>(d);
    out.push_back({l, k * (24.0 * ld * dd * dd + gamma * 4.0 * ld * ld * dd)});
  }
  return out;
}

TEST(FitGamma, NoiselessRoundTrip) {
  const auto samples = synth_samples(1e-12, 0.385, 3072, {256, 1024, 4096, 16384});
  const GammaFit fit = fit_gamma(samples, 3072);
  EXPECT_LE(std::abs(fit.k - 1e-12) / 1e-12, 1e-9);
  EXPECT_LE(std::abs(fit.gamma - 0.385) / 0.385, 1e-9);
  EXPECT_NEAR(fit.r_squared, 1.0, 1e-12);
}

TEST(FitGamma, GammaOneDegeneratesToRawFlopsModel) {
  const auto samples = synth_samples(3e-13, 1.0, 3072, {128, 512, 2048, 8192, 32768});
  const GammaFit fit = fit_gamma(samples, 3072);
  EXPECT_LE(std::abs(fit.gamma - 1.0), 1e-9);
}

TEST(FitGamma, RejectsRankDeficientDesign) {
  const auto samples = synth_samples(1e-12, 0.385, 3072, {1024, 1024, 1024});
  EXPECT_THROW(fit_gamma(samples, 3072), FitError);
}

TEST(FitGamma, RejectsDataInconsistentWithModel) {
  // Latency DECREASING in length forces a negative coefficient.
  std::vector<LatencySample> samples{{256, 4.0}, {1024, 2.0}, {4096, 1.0}, {16384, 0.5}};
  EXPECT_THROW(fit_gamma(samples, 3072), FitError);
}

TEST(FitGamma, RejectsTooFewOrNonPositiveSamples) {
  EXPECT_THROW(fit_gamma({{1024, 1.0}}, 3072), FitError);
  EXPECT_THROW(fit_gamma({{1024, 1.0}, {2048, -1.0}}, 3072), FitError);
  EXPECT_THROW(fit_gamma({{0, 1.0}, {2048, 1.0}}, 3072), FitError);
}

TEST(FitGamma, ToleratesMultiplicativeNoise) {
  // 5% multiplicative noise; gamma recovered within 15% in >= 95/100
  // resamples. Widely spaced lengths with replicates keep the linear and
  // quadratic coefficients separately identifiable under noise.
  std::vector<std::int64_t> lens;
  for (int rep = 0; rep < 4; ++rep) {
    for (std::int64_t l : {1024, 4096, 16384, 65536}) lens.push_back(l);
  }
  int ok = 0;
  for (int trial = 0; trial < 100; ++trial) {
    CounterRng rng({0xfeedULL, static_cast<std::uint64_t>(trial)});
    auto samples = synth_samples(1e-12, 0.385, 3072, lens);
    for (auto& s : samples) s.latency_s *= 1.0 + rng.next_real(-0.05, 0.05);
    const GammaFit fit = fit_gamma(samples, 3072);
    if (std::abs(fit.gamma - 0.385) / 0.385 <= 0.15) ++ok;
  }
  EXPECT_GE(ok, 95);
}

TEST(LatencyCsv, ParsesWellFormedInput) {
  std::istringstream in("seq_len,latency_s\n256,0.001\n1024,0.004\n");
  const auto samples = read_latency_csv(in);
  ASSERT_EQ(samples.size(), 2u);
  EXPECT_EQ(samples[0].seq_len, 256);
  EXPECT_DOUBLE_EQ(samples[1].latency_s, 0.004);
}

TEST(LatencyCsv, RejectsBadHeaderAndRows) {
  std::istringstream bad_header("len,lat\n1,2\n");
  EXPECT_THROW(read_latency_csv(bad_header), ParseError);

  std::istringstream bad_row("seq_len,latency_s\n256,0.001\nxyz,0.004\n");
  try {
    read_latency_csv(bad_row);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }

  std::istringstream extra_field("seq_len,latency_s\n256,0.001,9\n");
  EXPECT_THROW(read_latency_csv(extra_field), ParseError);

  std::istringstream negative("seq_len,latency_s\n256,-0.5\n");
  EXPECT_THROW(read_latency_csv(negative), ParseError);
}

}  // namespace
}  // namespace seqbal
