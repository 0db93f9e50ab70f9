#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "dpmm/model.hpp"
#include "dpmm/numeric.hpp"

namespace dpmm {

// Data-driven feature proposals for empty mixture slots.
//
// Q = (1 - rho) H + rho * sum_i w_i delta(atom_i), where atom_i is the
// smoothed, normalized observation i and w_i is proportional to the inverse of
// its likelihood under its currently assigned cluster. Densities of Q are taken
// with respect to (base measure's reference measure + counting measure on the
// atom set); a point that coincides with an atom is scored by its atom mass.

enum class ProposalBranch { empirical, prior };

const char* to_string(ProposalBranch b);

struct Proposal {
  Theta theta;
  ProposalBranch branch = ProposalBranch::prior;
};

struct MhResult {
  Theta theta;
  bool accepted = false;
  ProposalBranch branch = ProposalBranch::prior;
  double log_beta = 0.0;
  bool numerical_incident = false;  // log beta was NaN; move rejected
};

// Two theta vectors match as atoms when they agree elementwise within this.
inline constexpr double kAtomTolerance = 1e-12;

inline bool atom_match(std::span<const double> a, std::span<const double> b) {
  for (std::size_t d = 0; d < a.size(); ++d) {
    if (std::abs(a[d] - b[d]) > kAtomTolerance) return false;
  }
  return true;
}

// Continuous symmetric Dirichlet base measure H.
class SymmetricDirichlet {
 public:
  static constexpr bool kDiscrete = false;

  SymmetricDirichlet(double gamma, std::size_t dim) : gamma_(gamma), dim_(dim) {}

  Theta sample(Rng& rng) const { return sample_prior(gamma_, dim_, rng); }
  double log_density(std::span<const double> theta) const {
    return log_prior_density(theta, gamma_);
  }
  std::size_t dim() const { return dim_; }
  double gamma() const { return gamma_; }

 private:
  double gamma_;
  std::size_t dim_;
};

// Base measure with finite support: probability masses on listed points.
class DiscreteMeasure {
 public:
  static constexpr bool kDiscrete = true;

  DiscreteMeasure(std::vector<Theta> points, std::vector<double> masses);

  Theta sample(Rng& rng) const;
  // log mass at theta, or -inf when theta is not a support point.
  double log_density(std::span<const double> theta) const;
  std::size_t dim() const { return points_.empty() ? 0 : points_.front().size(); }
  std::span<const Theta> points() const { return points_; }

 private:
  std::vector<Theta> points_;
  std::vector<double> masses_;
  std::vector<double> cumulative_;
};

template <class Base>
class MixtureProposal {
 public:
  // atoms: flat row-major (n_atoms x dim); weights: one per atom, summing to 1.
  MixtureProposal(Base base, double rho, std::vector<double> atoms, std::vector<double> weights)
      : base_(std::move(base)), atoms_(std::move(atoms)), weights_(std::move(weights)) {
    // Without atoms the empirical branch cannot fire; Q reduces to H.
    rho_ = weights_.empty() ? 0.0 : rho;
    cumulative_.resize(weights_.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < weights_.size(); ++i) cumulative_[i] = (acc += weights_[i]);
  }

  const Base& base() const { return base_; }
  double rho() const { return rho_; }
  std::size_t atom_count() const { return weights_.size(); }
  std::span<const double> weights() const { return weights_; }
  std::span<const double> atom(std::size_t i) const {
    return {atoms_.data() + i * base_.dim(), base_.dim()};
  }

  Proposal propose(Rng& rng) const {
    if (rho_ > 0.0 && sample_uniform(rng) < rho_) {
      const std::size_t i = sample_cumulative(cumulative_, rng);
      auto a = atom(i);
      return {Theta(a.begin(), a.end()), ProposalBranch::empirical};
    }
    return {base_.sample(rng), ProposalBranch::prior};
  }

  // Summed weight of all atoms matching theta.
  double atom_mass(std::span<const double> theta) const {
    double mass = 0.0;
    for (std::size_t i = 0; i < weights_.size(); ++i) {
      if (atom_match(atom(i), theta)) mass += weights_[i];
    }
    return mass;
  }

  double log_mixture_density(std::span<const double> theta) const {
    const double atoms = rho_ > 0.0 ? rho_ * atom_mass(theta) : 0.0;
    if constexpr (Base::kDiscrete) {
      const double base_part = rho_ < 1.0 ? (1.0 - rho_) * std::exp(base_.log_density(theta)) : 0.0;
      return std::log(base_part + atoms);
    } else {
      if (atoms > 0.0) return std::log(atoms);
      if (rho_ >= 1.0) return -std::numeric_limits<double>::infinity();
      return std::log1p(-rho_) + base_.log_density(theta);
    }
  }

  // log of (dH / dQ)(theta) with respect to the same dominating measure.
  // Off the atom set this is -log(1 - rho) exactly (the base density
  // cancels). A continuous H puts no mass on atoms, so an atom scores -inf.
  double log_importance_weight(std::span<const double> theta) const {
    constexpr double kInf = std::numeric_limits<double>::infinity();
    const double atoms = rho_ > 0.0 ? rho_ * atom_mass(theta) : 0.0;
    if (atoms == 0.0) return rho_ < 1.0 ? -std::log1p(-rho_) : kInf;
    if constexpr (Base::kDiscrete) {
      return base_.log_density(theta) - log_mixture_density(theta);
    } else {
      return -kInf;
    }
  }

  // One independence Metropolis-Hastings update targeting H with proposal Q.
  MhResult mh_step(std::span<const double> current, Rng& rng) const {
    Proposal p = propose(rng);
    MhResult out;
    out.branch = p.branch;
    // Staying put has ratio one even where both weights are infinite.
    out.log_beta = atom_match(p.theta, current)
                       ? 0.0
                       : log_importance_weight(p.theta) - log_importance_weight(current);
    bool accept = false;
    if (std::isnan(out.log_beta)) {
      out.numerical_incident = true;
    } else if (out.log_beta >= 0.0) {
      accept = true;
    } else if (out.log_beta > -std::numeric_limits<double>::infinity()) {
      accept = std::log(sample_uniform(rng)) < out.log_beta;
    }
    out.accepted = accept;
    if (accept) {
      out.theta = std::move(p.theta);
    } else {
      out.theta.assign(current.begin(), current.end());
    }
    return out;
  }

 private:
  Base base_;
  double rho_ = 0.0;
  std::vector<double> atoms_;
  std::vector<double> weights_;
  std::vector<double> cumulative_;
};

// Everything the empirical proposal may look at: the proposer's shard, the
// shard's assignments and the cluster storage the assignments index into.
struct ProposalContext {
  const CountDataset* data = nullptr;
  std::span<const std::size_t> rows;         // dataset row of each shard observation
  std::span<const std::size_t> assignments;  // cluster index of each shard observation
  std::span<const Cluster> clusters;
  double rho = 0.0;
  double gamma = 1.0;
  double smoothing_eps = 1e-6;
  // Optional per-dataset-row multinomial log coefficients (indexed by row).
  std::span<const double> log_coefficients;
};

struct EmpiricalWeights {
  std::vector<double> weights;
  std::size_t clamped = 0;  // observations whose assigned likelihood was zero
};

// Weights proportional to 1 / f(x_i | theta_{z_i}), computed in log space.
EmpiricalWeights empirical_weights(const ProposalContext& ctx);

// (x + eps) / (total + eps * D). Throws InputError on an all-zero x.
Theta datapoint_to_theta(std::span<const std::uint32_t> x, double smoothing_eps);

// Q built from a proposal context with the symmetric Dirichlet base measure.
class EmpiricalProposal : public MixtureProposal<SymmetricDirichlet> {
 public:
  explicit EmpiricalProposal(const ProposalContext& ctx);
  std::size_t clamped() const { return clamped_; }

 private:
  EmpiricalProposal(const ProposalContext& ctx, EmpiricalWeights w);
  std::size_t clamped_ = 0;
};

Proposal propose(const ProposalContext& ctx, Rng& rng);
double log_mixture_density(std::span<const double> theta, const ProposalContext& ctx);
MhResult mh_step(std::span<const double> theta_current, const ProposalContext& ctx, Rng& rng);

}  // namespace dpmm
