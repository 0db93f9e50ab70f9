#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dpmm/numeric.hpp"

namespace dpmm {

// Raised for malformed data, mismatched dimensions and invalid parameters.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Theta = std::vector<double>;
using SuffStats = std::vector<std::uint64_t>;
using ClusterId = std::uint64_t;

// Observations x dimensions matrix of non-negative integer counts, stored
// row-major. Every row has at least one nonzero count.
class CountDataset {
 public:
  CountDataset() = default;
  CountDataset(std::size_t dim, std::vector<std::uint32_t> counts);

  std::size_t size() const { return dim_ == 0 ? 0 : counts_.size() / dim_; }
  std::size_t dim() const { return dim_; }
  bool empty() const { return size() == 0; }

  std::span<const std::uint32_t> row(std::size_t i) const {
    return {counts_.data() + i * dim_, dim_};
  }
  std::uint64_t row_total(std::size_t i) const;
  const std::vector<std::uint32_t>& data() const { return counts_; }

  CountDataset subset(std::span<const std::size_t> rows) const;

  friend bool operator==(const CountDataset&, const CountDataset&) = default;

 private:
  std::size_t dim_ = 0;
  std::vector<std::uint32_t> counts_;
};

struct ModelConfig {
  double alpha = 1.0;          // DP concentration
  double gamma = 1.0;          // symmetric Dirichlet base measure parameter
  std::size_t m = 3;           // auxiliary (empty) feature slots
  double rho = 0.9;            // probability of the empirical proposal branch
  std::size_t sync_interval = 10;
  std::size_t n_workers = 1;
  std::size_t accel_iters = 50;
  std::size_t total_iters = 1000;
  std::uint64_t seed = 0;
  double smoothing_eps = 1e-6;

  // Concentration resampling at synchronization (Gamma(shape, rate) prior).
  bool resample_alpha = true;
  double alpha_prior_shape = 1.0;
  double alpha_prior_rate = 1.0;

  void validate() const;
};

enum class ClusterStatus {
  global,  // instantiated on every worker (K+)
  local,   // new feature known only to one worker (K*)
  empty,   // auxiliary slot (K-)
};

const char* to_string(ClusterStatus s);

// A mixture component: its parameter, occupancy and the elementwise sum of
// the counts assigned to it. `log_theta` caches log(theta).
struct Cluster {
  ClusterId id = 0;
  ClusterStatus status = ClusterStatus::empty;
  std::size_t count = 0;
  SuffStats suffstats;
  Theta theta;
  Theta log_theta;

  Cluster() = default;
  Cluster(ClusterId id, ClusterStatus status, Theta theta);

  void set_theta(Theta t);
  void add(std::span<const std::uint32_t> x);
  void remove(std::span<const std::uint32_t> x);
  void clear_counts();
};

// Uncollapsed global parameters shared by all workers after a synchronization.
struct GlobalState {
  std::vector<Cluster> clusters;  // K+, status global, counts aggregated
  std::vector<double> pi;         // |K+| weights followed by the remainder mass
  double alpha = 1.0;
  std::size_t proposer = 0;       // zero-based worker index
  ClusterId next_id = 0;
};

// log of the multinomial pmf, including the coefficient n! / prod(x_d!).
double log_likelihood(std::span<const std::uint32_t> x, std::span<const double> theta);

double log_multinomial_coefficient(std::span<const std::uint32_t> x);

// sum_d x_d log(theta_d) from cached logs; the coefficient is left out since it
// cancels whenever clusters are compared for the same observation.
inline double log_kernel(std::span<const std::uint32_t> x, std::span<const double> log_theta) {
  double acc = 0.0;
  for (std::size_t d = 0; d < x.size(); ++d) {
    if (x[d] != 0) acc += static_cast<double>(x[d]) * log_theta[d];
  }
  return acc;
}

// log Dirichlet(gamma, ..., gamma) density at theta. Throws InputError when
// theta sits on the boundary and gamma < 1 (unbounded density).
double log_prior_density(std::span<const double> theta, double gamma);

Theta sample_prior(double gamma, std::size_t dim, Rng& rng);

// Draw from Dirichlet(gamma + suffstats).
Theta sample_posterior_theta(std::span<const std::uint64_t> suffstats, double gamma, Rng& rng);

// log Dirichlet-multinomial predictive probability of x for a cluster that has
// already absorbed `suffstats` (all zeros for the prior predictive).
double log_marginal_likelihood(std::span<const std::uint32_t> x,
                               std::span<const std::uint64_t> suffstats, double gamma);

}  // namespace dpmm
