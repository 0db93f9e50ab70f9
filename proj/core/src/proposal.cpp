#include "dpmm/proposal.hpp"

#include <cmath>
#include <limits>

namespace dpmm {

const char* to_string(ProposalBranch b) {
  return b == ProposalBranch::empirical ? "empirical" : "prior";
}

DiscreteMeasure::DiscreteMeasure(std::vector<Theta> points, std::vector<double> masses)
    : points_(std::move(points)), masses_(std::move(masses)) {
  if (points_.empty() || points_.size() != masses_.size()) {
    throw InputError("DiscreteMeasure: need one mass per support point");
  }
  double acc = 0.0;
  for (double w : masses_) {
    if (!(w > 0.0)) throw InputError("DiscreteMeasure: masses must be positive");
    cumulative_.push_back(acc += w);
  }
  for (double& w : masses_) w /= acc;
  for (double& c : cumulative_) c /= acc;
}

Theta DiscreteMeasure::sample(Rng& rng) const { return points_[sample_cumulative(cumulative_, rng)]; }

double DiscreteMeasure::log_density(std::span<const double> theta) const {
  for (std::size_t i = 0; i < points_.size(); ++i) {
    if (atom_match(points_[i], theta)) return std::log(masses_[i]);
  }
  return -std::numeric_limits<double>::infinity();
}

EmpiricalWeights empirical_weights(const ProposalContext& ctx) {
  EmpiricalWeights out;
  const std::size_t n = ctx.rows.size();
  out.weights.resize(n);
  if (n == 0) return out;

  // Negated log likelihoods; +inf (zero likelihood) is clamped afterwards.
  double max_finite = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j) {
    const auto x = ctx.data->row(ctx.rows[j]);
    const Cluster& c = ctx.clusters[ctx.assignments[j]];
    double ll;
    if (!ctx.log_coefficients.empty()) {
      ll = ctx.log_coefficients[ctx.rows[j]] + log_kernel(x, c.log_theta);
      if (std::isnan(ll)) ll = log_likelihood(x, c.theta);
    } else {
      ll = log_likelihood(x, c.theta);
    }
    out.weights[j] = -ll;
    if (std::isfinite(out.weights[j])) max_finite = std::max(max_finite, out.weights[j]);
  }
  if (!std::isfinite(max_finite)) max_finite = 0.0;
  for (double& w : out.weights) {
    if (!std::isfinite(w)) {
      w = max_finite;
      ++out.clamped;
    }
  }
  normalize_log_weights(out.weights);
  return out;
}

Theta datapoint_to_theta(std::span<const std::uint32_t> x, double smoothing_eps) {
  double total = 0.0;
  for (auto c : x) total += c;
  if (total <= 0.0) throw InputError("datapoint_to_theta: observation has zero total count");
  const double denom = total + smoothing_eps * static_cast<double>(x.size());
  Theta theta(x.size());
  for (std::size_t d = 0; d < x.size(); ++d) {
    theta[d] = (static_cast<double>(x[d]) + smoothing_eps) / denom;
  }
  return theta;
}

namespace {

std::vector<double> build_atoms(const ProposalContext& ctx) {
  const std::size_t dim = ctx.data->dim();
  std::vector<double> atoms;
  atoms.reserve(ctx.rows.size() * dim);
  for (auto r : ctx.rows) {
    Theta t = datapoint_to_theta(ctx.data->row(r), ctx.smoothing_eps);
    atoms.insert(atoms.end(), t.begin(), t.end());
  }
  return atoms;
}

}  // namespace

EmpiricalProposal::EmpiricalProposal(const ProposalContext& ctx)
    : EmpiricalProposal(ctx, empirical_weights(ctx)) {}

EmpiricalProposal::EmpiricalProposal(const ProposalContext& ctx, EmpiricalWeights w)
    : MixtureProposal<SymmetricDirichlet>(SymmetricDirichlet(ctx.gamma, ctx.data->dim()), ctx.rho,
                                          build_atoms(ctx), std::move(w.weights)),
      clamped_(w.clamped) {}

Proposal propose(const ProposalContext& ctx, Rng& rng) { return EmpiricalProposal(ctx).propose(rng); }

double log_mixture_density(std::span<const double> theta, const ProposalContext& ctx) {
  return EmpiricalProposal(ctx).log_mixture_density(theta);
}

MhResult mh_step(std::span<const double> theta_current, const ProposalContext& ctx, Rng& rng) {
  return EmpiricalProposal(ctx).mh_step(theta_current, rng);
}

}  // namespace dpmm
