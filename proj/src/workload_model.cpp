// SPDX-License-Identifier: Apache-2.0
#include "seqbal/workload_model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <sstream>
#include <string>

#include "seqbal/error.hpp"

namespace seqbal {

void ModelShape::validate() const {
  if (d_model < 1 || n_heads < 1 || d_head < 1 || n_blocks < 1) {
    throw ConfigError("model shape fields must be >= 1");
  }
  if (static_cast<std::int64_t>(n_heads) * d_head != d_model) {
    throw ConfigError("n_heads * d_head must equal d_model (" +
                      std::to_string(n_heads) + " * " + std::to_string(d_head) +
                      " != " + std::to_string(d_model) + ")");
  }
}

ModelShape ModelShape::flux() { return ModelShape{3072, 24, 128, 57}; }

void WorkloadModel::validate() const {
  shape.validate();
  if (!(gamma > 0.0)) throw ConfigError("gamma must be positive");
  if (!(k > 0.0)) throw ConfigError("k must be positive");
}

double flops_per_block(std::int64_t seq_len, std::int64_t d_model) {
  if (seq_len < 0) throw ConfigError("seq_len must be >= 0");
  if (d_model < 1) throw ConfigError("d_model must be >= 1");
  const double l = static_cast<double>(seq_len);
  const double d = static_cast<double>(d_model);
  return 24.0 * l * d * d + 4.0 * l * l * d;
}

unsigned __int128 flops_per_block_exact(std::int64_t seq_len, std::int64_t d_model) {
  if (seq_len < 0) throw ConfigError("seq_len must be >= 0");
  if (d_model < 1) throw ConfigError("d_model must be >= 1");
  if (seq_len > (1LL << 20) || d_model > (1LL << 20)) {
    throw ConfigError("exact FLOP count supports l, d up to 2^20");
  }
  using u128 = unsigned __int128;
  const u128 l = static_cast<u128>(seq_len);
  const u128 d = static_cast<u128>(d_model);
  return 24 * l * d * d + 4 * l * l * d;
}

std::string u128_to_string(unsigned __int128 v) {
  if (v == 0) return "0";
  std::string out;
  while (v > 0) {
    out.push_back(static_cast<char>('0' + static_cast<int>(v % 10)));
    v /= 10;
  }
  std::reverse(out.begin(), out.end());
  return out;
}

double gamma_weighted_workload(std::int64_t seq_len, const WorkloadModel& model) {
  if (seq_len < 0) throw ConfigError("seq_len must be >= 0");
  const double l = static_cast<double>(seq_len);
  const double d = static_cast<double>(model.shape.d_model);
  return 24.0 * l * d * d + model.gamma * 4.0 * l * l * d;
}

double per_gpu_workload(std::int64_t seq_len, int bag_size, const WorkloadModel& model) {
  if (bag_size < 1) throw ConfigError("bag_size must be >= 1");
  if (model.shape.n_heads % bag_size != 0) {
    throw ConfigError("bag size " + std::to_string(bag_size) +
                      " does not divide n_heads " + std::to_string(model.shape.n_heads) +
                      "; the attention head split is infeasible");
  }
  return gamma_weighted_workload(seq_len, model) / static_cast<double>(bag_size);
}

double estimate_latency(std::int64_t seq_len, int bag_size, const WorkloadModel& model) {
  return model.k * static_cast<double>(model.shape.n_blocks) *
         per_gpu_workload(seq_len, bag_size, model);
}

GammaFit fit_gamma(const std::vector<LatencySample>& samples, std::int64_t d_model) {
  if (d_model < 1) throw ConfigError("d_model must be >= 1");
  if (samples.size() < 2) throw FitError("need at least 2 latency samples");

  std::int64_t l_max = 0;
  bool distinct = false;
  for (const auto& s : samples) {
    if (s.seq_len <= 0) throw FitError("seq_len must be positive in every sample");
    if (!(s.latency_s > 0.0)) throw FitError("latency must be positive in every sample");
    if (s.seq_len != samples.front().seq_len) distinct = true;
    l_max = std::max(l_max, s.seq_len);
  }
  if (!distinct) {
    throw FitError("all samples share one seq_len; the design matrix is rank-deficient");
  }

  // Normal equations for t = a'*u + b'*u^2 with u = l/l_max; normalizing
  // keeps the 2x2 system well conditioned across the sampled length range.
  long double s_u2 = 0, s_u3 = 0, s_u4 = 0, s_ut = 0, s_u2t = 0;
  long double s_t = 0;
  for (const auto& s : samples) {
    const long double u = static_cast<long double>(s.seq_len) / l_max;
    const long double u2 = u * u;
    const long double t = s.latency_s;
    s_u2 += u2;
    s_u3 += u2 * u;
    s_u4 += u2 * u2;
    s_ut += u * t;
    s_u2t += u2 * t;
    s_t += t;
  }
  const long double det = s_u2 * s_u4 - s_u3 * s_u3;
  if (!(std::abs(static_cast<double>(det)) > 0.0)) {
    throw FitError("degenerate design matrix; seq_len values do not span the model");
  }
  const long double a_n = (s_ut * s_u4 - s_u2t * s_u3) / det;
  const long double b_n = (s_u2t * s_u2 - s_ut * s_u3) / det;
  const double a = static_cast<double>(a_n / l_max);
  const double b = static_cast<double>(b_n / (static_cast<long double>(l_max) * l_max));
  if (!(a > 0.0) || !(b > 0.0)) {
    throw FitError("fitted coefficients are not positive; data inconsistent with model");
  }

  GammaFit fit;
  const double d = static_cast<double>(d_model);
  fit.k = a / (24.0 * d * d);
  fit.gamma = 6.0 * b * d / a;

  const long double t_mean = s_t / static_cast<long double>(samples.size());
  long double ss_res = 0, ss_tot = 0;
  for (const auto& s : samples) {
    const long double l = static_cast<long double>(s.seq_len);
    const long double pred = static_cast<long double>(a) * l + static_cast<long double>(b) * l * l;
    ss_res += (s.latency_s - pred) * (s.latency_s - pred);
    ss_tot += (s.latency_s - t_mean) * (s.latency_s - t_mean);
  }
  fit.r_squared = ss_tot > 0 ? static_cast<double>(1.0L - ss_res / ss_tot) : 1.0;
  return fit;
}

namespace {

// Strict field parses; no leading/trailing junk, no empty fields.
bool parse_int_strict(const std::string& s, std::int64_t& out) {
  if (s.empty()) return false;
  std::int64_t v = 0;
  for (char c : s) {
    if (c < '0' || c > '9') return false;
    if (v > (INT64_MAX - (c - '0')) / 10) return false;
    v = v * 10 + (c - '0');
  }
  out = v;
  return true;
}

bool parse_double_strict(const std::string& s, double& out) {
  if (s.empty()) return false;
  std::size_t pos = 0;
  try {
    out = std::stod(s, &pos);
  } catch (const std::exception&) {
    return false;
  }
  return pos == s.size() && std::isfinite(out);
}

}  // namespace

std::vector<LatencySample> read_latency_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty latency CSV", 0);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "seq_len,latency_s") {
    throw ParseError("latency CSV must start with header 'seq_len,latency_s', got '" + line + "'", 0);
  }

  std::vector<LatencySample> samples;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos || line.find(',', comma + 1) != std::string::npos) {
      throw ParseError("line " + std::to_string(line_no) + ": expected exactly two fields", line_no);
    }
    LatencySample s;
    if (!parse_int_strict(line.substr(0, comma), s.seq_len) || s.seq_len <= 0) {
      throw ParseError("line " + std::to_string(line_no) + ": bad seq_len '" +
                           line.substr(0, comma) + "'",
                       line_no);
    }
    if (!parse_double_strict(line.substr(comma + 1), s.latency_s) || s.latency_s <= 0.0) {
      throw ParseError("line " + std::to_string(line_no) + ": bad latency_s '" +
                           line.substr(comma + 1) + "'",
                       line_no);
    }
    samples.push_back(s);
  }
  return samples;
}

std::vector<LatencySample> read_latency_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open latency CSV: " + path);
  return read_latency_csv(in);
}

}  // namespace seqbal
