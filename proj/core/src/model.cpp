#include "dpmm/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace dpmm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void require_same_dim(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw InputError(std::string(what) + ": dimension mismatch (" + std::to_string(a) + " vs " +
                     std::to_string(b) + ")");
  }
}

}  // namespace

CountDataset::CountDataset(std::size_t dim, std::vector<std::uint32_t> counts)
    : dim_(dim), counts_(std::move(counts)) {
  if (dim_ == 0) throw InputError("dataset dimension must be >= 1");
  if (counts_.size() % dim_ != 0) throw InputError("dataset rows are ragged");
  for (std::size_t i = 0; i < size(); ++i) {
    if (row_total(i) == 0) {
      throw InputError("row " + std::to_string(i + 1) + " has zero total count");
    }
  }
}

std::uint64_t CountDataset::row_total(std::size_t i) const {
  std::uint64_t total = 0;
  for (auto c : row(i)) total += c;
  return total;
}

CountDataset CountDataset::subset(std::span<const std::size_t> rows) const {
  std::vector<std::uint32_t> out;
  out.reserve(rows.size() * dim_);
  for (auto r : rows) {
    auto x = row(r);
    out.insert(out.end(), x.begin(), x.end());
  }
  return CountDataset(dim_, std::move(out));
}

void ModelConfig::validate() const {
  if (!(alpha > 0.0)) throw InputError("alpha must be > 0");
  if (!(gamma > 0.0)) throw InputError("gamma must be > 0");
  if (m < 1) throw InputError("m must be >= 1");
  if (!(rho >= 0.0 && rho <= 1.0)) throw InputError("rho must lie in [0, 1]");
  if (sync_interval < 1) throw InputError("sync interval must be >= 1");
  if (n_workers < 1) throw InputError("worker count must be >= 1");
  if (accel_iters > total_iters) throw InputError("accel_iters must not exceed total_iters");
  if (!(smoothing_eps >= 0.0)) throw InputError("smoothing_eps must be >= 0");
  if (!(alpha_prior_shape > 0.0) || !(alpha_prior_rate > 0.0)) {
    throw InputError("alpha hyperprior parameters must be > 0");
  }
}

const char* to_string(ClusterStatus s) {
  switch (s) {
    case ClusterStatus::global: return "global";
    case ClusterStatus::local: return "local";
    case ClusterStatus::empty: return "empty";
  }
  return "?";
}

Cluster::Cluster(ClusterId id_, ClusterStatus status_, Theta t) : id(id_), status(status_) {
  suffstats.assign(t.size(), 0);
  set_theta(std::move(t));
}

void Cluster::set_theta(Theta t) {
  theta = std::move(t);
  log_theta.resize(theta.size());
  for (std::size_t d = 0; d < theta.size(); ++d) log_theta[d] = std::log(theta[d]);
  if (suffstats.size() != theta.size()) suffstats.assign(theta.size(), 0);
}

void Cluster::add(std::span<const std::uint32_t> x) {
  for (std::size_t d = 0; d < x.size(); ++d) suffstats[d] += x[d];
  ++count;
}

void Cluster::remove(std::span<const std::uint32_t> x) {
  for (std::size_t d = 0; d < x.size(); ++d) suffstats[d] -= x[d];
  --count;
}

void Cluster::clear_counts() {
  count = 0;
  std::fill(suffstats.begin(), suffstats.end(), 0);
}

double log_multinomial_coefficient(std::span<const std::uint32_t> x) {
  double total = 0.0;
  double acc = 0.0;
  for (auto c : x) {
    total += c;
    acc -= std::lgamma(static_cast<double>(c) + 1.0);
  }
  return acc + std::lgamma(total + 1.0);
}

double log_likelihood(std::span<const std::uint32_t> x, std::span<const double> theta) {
  require_same_dim(x.size(), theta.size(), "log_likelihood");
  double acc = log_multinomial_coefficient(x);
  for (std::size_t d = 0; d < x.size(); ++d) {
    if (x[d] == 0) continue;
    if (theta[d] <= 0.0) return kNegInf;
    acc += static_cast<double>(x[d]) * std::log(theta[d]);
  }
  return acc;
}

double log_prior_density(std::span<const double> theta, double gamma) {
  const double dim = static_cast<double>(theta.size());
  double acc = std::lgamma(dim * gamma) - dim * std::lgamma(gamma);
  if (gamma == 1.0) return acc;
  for (double t : theta) {
    if (t <= 0.0) {
      if (gamma < 1.0) throw InputError("log_prior_density: boundary point with gamma < 1");
      return kNegInf;
    }
    acc += (gamma - 1.0) * std::log(t);
  }
  return acc;
}

Theta sample_prior(double gamma, std::size_t dim, Rng& rng) {
  if (!(gamma > 0.0) || dim == 0) throw InputError("sample_prior: invalid parameters");
  std::vector<double> params(dim, gamma);
  return sample_dirichlet(params, rng);
}

Theta sample_posterior_theta(std::span<const std::uint64_t> suffstats, double gamma, Rng& rng) {
  if (!(gamma > 0.0) || suffstats.empty()) {
    throw InputError("sample_posterior_theta: invalid parameters");
  }
  std::vector<double> params(suffstats.size());
  for (std::size_t d = 0; d < suffstats.size(); ++d) {
    params[d] = gamma + static_cast<double>(suffstats[d]);
  }
  return sample_dirichlet(params, rng);
}

double log_marginal_likelihood(std::span<const std::uint32_t> x,
                               std::span<const std::uint64_t> suffstats, double gamma) {
  require_same_dim(x.size(), suffstats.size(), "log_marginal_likelihood");
  const double dim = static_cast<double>(x.size());
  double n = 0.0;
  double s = 0.0;
  double acc = log_multinomial_coefficient(x);
  for (std::size_t d = 0; d < x.size(); ++d) {
    const double sd = static_cast<double>(suffstats[d]);
    n += x[d];
    s += sd;
    if (x[d] != 0) acc += std::lgamma(gamma + sd + x[d]) - std::lgamma(gamma + sd);
  }
  return acc + std::lgamma(dim * gamma + s) - std::lgamma(dim * gamma + s + n);
}

}  // namespace dpmm
