#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace dpmm {

using Rng = std::mt19937_64;

// Derives an independent generator from a master seed and a stream tag
// (worker id, purpose). Same inputs always give the same stream.
Rng make_stream(std::uint64_t seed, std::uint64_t stream, std::uint64_t purpose = 0);

// log(sum(exp(v))). Returns -inf for an empty span or when every entry is -inf.
double log_sum_exp(std::span<const double> v);

// Normalizes log-weights in place into probabilities (sums to one).
void normalize_log_weights(std::span<double> log_weights);

// Draws an index with probability proportional to exp(log_weights[i]).
// Entries of -inf are never selected. Requires at least one finite entry.
std::size_t sample_log_categorical(std::span<const double> log_weights, Rng& rng);

// Draws an index from non-negative (unnormalized) cumulative sums.
std::size_t sample_cumulative(std::span<const double> cumulative, Rng& rng);

double sample_uniform(Rng& rng);
double sample_gamma(double shape, double rate, Rng& rng);
double sample_beta(double a, double b, Rng& rng);

// Dirichlet draw with arbitrary positive parameters. Small shapes are drawn
// in log space so that no coordinate underflows to zero.
std::vector<double> sample_dirichlet(std::span<const double> params, Rng& rng);

}  // namespace dpmm
