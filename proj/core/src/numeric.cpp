#include "dpmm/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace dpmm {

Rng make_stream(std::uint64_t seed, std::uint64_t stream, std::uint64_t purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    static_cast<std::uint32_t>(purpose), 0x9e3779b9u};
  return Rng(seq);
}

double log_sum_exp(std::span<const double> v) {
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  if (v.empty()) return kNegInf;
  const double hi = *std::max_element(v.begin(), v.end());
  if (hi == kNegInf) return kNegInf;
  if (std::isinf(hi)) return hi;
  double sum = 0.0;
  for (double x : v) sum += std::exp(x - hi);
  return hi + std::log(sum);
}

void normalize_log_weights(std::span<double> log_weights) {
  const double lse = log_sum_exp(log_weights);
  if (!std::isfinite(lse)) throw std::domain_error("normalize_log_weights: no finite weight");
  for (double& w : log_weights) w = std::exp(w - lse);
}

std::size_t sample_log_categorical(std::span<const double> log_weights, Rng& rng) {
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  if (log_weights.empty()) throw std::invalid_argument("sample_log_categorical: empty weights");
  const double hi = *std::max_element(log_weights.begin(), log_weights.end());
  if (hi == kNegInf || std::isnan(hi)) {
    throw std::domain_error("sample_log_categorical: no finite weight");
  }
  // Two passes over exp(w - max): total, then the inverse-CDF walk.
  double total = 0.0;
  for (double w : log_weights) total += std::exp(w - hi);
  double u = sample_uniform(rng) * total;
  std::size_t last = 0;
  for (std::size_t i = 0; i < log_weights.size(); ++i) {
    if (log_weights[i] == kNegInf) continue;
    last = i;
    u -= std::exp(log_weights[i] - hi);
    if (u < 0.0) return i;
  }
  return last;
}

std::size_t sample_cumulative(std::span<const double> cumulative, Rng& rng) {
  if (cumulative.empty() || !(cumulative.back() > 0.0)) {
    throw std::domain_error("sample_cumulative: no mass");
  }
  const double u = sample_uniform(rng) * cumulative.back();
  auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
  if (it == cumulative.end()) --it;
  return static_cast<std::size_t>(it - cumulative.begin());
}

double sample_uniform(Rng& rng) {
  // 53 random bits mapped to [0, 1).
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double sample_gamma(double shape, double rate, Rng& rng) {
  std::gamma_distribution<double> g(shape, 1.0 / rate);
  return g(rng);
}

double sample_beta(double a, double b, Rng& rng) {
  const double x = sample_gamma(a, 1.0, rng);
  const double y = sample_gamma(b, 1.0, rng);
  return x / (x + y);
}

std::vector<double> sample_dirichlet(std::span<const double> params, Rng& rng) {
  std::vector<double> out(params.size());
  if (params.empty()) return out;
  const bool small = std::any_of(params.begin(), params.end(), [](double a) { return a < 1.0; });
  if (!small) {
    double total = 0.0;
    for (std::size_t d = 0; d < params.size(); ++d) {
      out[d] = sample_gamma(params[d], 1.0, rng);
      total += out[d];
    }
    if (total > 0.0 && std::isfinite(total)) {
      for (double& x : out) x /= total;
      return out;
    }
  }
  // G(a) = G(a + 1) * U^(1/a), evaluated as logs.
  for (std::size_t d = 0; d < params.size(); ++d) {
    const double a = params[d];
    double u = sample_uniform(rng);
    while (u == 0.0) u = sample_uniform(rng);
    out[d] = std::log(sample_gamma(a + 1.0, 1.0, rng)) + std::log(u) / a;
  }
  normalize_log_weights(out);
  for (double& x : out) x = std::max(x, std::numeric_limits<double>::min());
  return out;
}

}  // namespace dpmm
