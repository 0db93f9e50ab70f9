#include "dpmm/serial.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>

#include "sweep_common.hpp"

namespace dpmm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::vector<std::size_t> iota_rows(std::size_t n) {
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return rows;
}

// Lloyd's algorithm on row-normalized counts with k-means++ seeding.
std::vector<std::size_t> kmeans_labels(const CountDataset& data, std::size_t k, Rng& rng) {
  const std::size_t n = data.size();
  const std::size_t dim = data.dim();
  std::vector<double> points(n * dim);
  for (std::size_t i = 0; i < n; ++i) {
    const double total = static_cast<double>(data.row_total(i));
    for (std::size_t d = 0; d < dim; ++d) points[i * dim + d] = data.row(i)[d] / total;
  }
  auto dist2 = [&](std::size_t i, const double* c) {
    double acc = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      const double diff = points[i * dim + d] - c[d];
      acc += diff * diff;
    }
    return acc;
  };

  std::vector<double> centers;
  centers.reserve(k * dim);
  auto add_center = [&](std::size_t i) {
    centers.insert(centers.end(), points.begin() + static_cast<std::ptrdiff_t>(i * dim),
                   points.begin() + static_cast<std::ptrdiff_t>((i + 1) * dim));
  };
  add_center(static_cast<std::size_t>(sample_uniform(rng) * static_cast<double>(n)) % n);
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  while (centers.size() / dim < k) {
    const double* last = centers.data() + centers.size() - dim;
    std::vector<double> cumulative(n);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      best[i] = std::min(best[i], dist2(i, last));
      cumulative[i] = (acc += best[i]);
    }
    if (!(acc > 0.0)) break;  // fewer distinct points than k
    add_center(sample_cumulative(cumulative, rng));
  }

  const std::size_t kk = centers.size() / dim;
  std::vector<std::size_t> labels(n, 0);
  for (int iter = 0; iter < 25; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t arg = 0;
      double dbest = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < kk; ++c) {
        const double dd = dist2(i, centers.data() + c * dim);
        if (dd < dbest) {
          dbest = dd;
          arg = c;
        }
      }
      if (labels[i] != arg) changed = true;
      labels[i] = arg;
    }
    std::vector<double> sums(kk * dim, 0.0);
    std::vector<std::size_t> sizes(kk, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++sizes[labels[i]];
      for (std::size_t d = 0; d < dim; ++d) sums[labels[i] * dim + d] += points[i * dim + d];
    }
    for (std::size_t c = 0; c < kk; ++c) {
      if (sizes[c] == 0) continue;
      for (std::size_t d = 0; d < dim; ++d) centers[c * dim + d] = sums[c * dim + d] / sizes[c];
    }
    if (!changed && iter > 0) break;
  }
  return labels;
}

}  // namespace

namespace detail {

std::vector<double> log_coefficients(const CountDataset& data) {
  std::vector<double> out(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) out[i] = log_multinomial_coefficient(data.row(i));
  return out;
}

ProposalContext make_context(const ClusterTable& table, const CountDataset& data,
                             std::span<const std::size_t> rows, std::span<const std::size_t> z,
                             std::span<const double> coefficients, const ModelConfig& config) {
  ProposalContext ctx;
  ctx.data = &data;
  ctx.rows = rows;
  ctx.assignments = z;
  ctx.clusters = table.entries();
  ctx.rho = config.rho;
  ctx.gamma = config.gamma;
  ctx.smoothing_eps = config.smoothing_eps;
  ctx.log_coefficients = coefficients;
  return ctx;
}

void refresh_table_slots(ClusterTable& table, const CountDataset& data,
                         std::span<const std::size_t> rows, std::span<const std::size_t> z,
                         std::span<const double> coefficients, const ModelConfig& config,
                         RefreshMode mode, Rng& rng, KernelStats* stats) {
  normalize_slots(table, config.m, rng, [&] { return sample_prior(config.gamma, data.dim(), rng); });
  const auto slots = table.indices_with(ClusterStatus::empty);
  if (mode == RefreshMode::prior) {
    for (auto k : slots) table[k].set_theta(sample_prior(config.gamma, data.dim(), rng));
    return;
  }

  const EmpiricalProposal proposal(make_context(table, data, rows, z, coefficients, config));
  if (stats) {
    stats->clamped += proposal.clamped();
    if (config.rho > 0.0 && rows.empty()) ++stats->prior_fallback;
  }
  for (auto k : slots) {
    if (mode == RefreshMode::empirical_auto) {
      table[k].set_theta(proposal.propose(rng).theta);
      continue;
    }
    MhResult r = proposal.mh_step(table[k].theta, rng);
    if (stats) {
      ++stats->mh_steps;
      stats->mh_accepted += r.accepted ? 1 : 0;
      stats->incidents += r.numerical_incident ? 1 : 0;
    }
    if (r.accepted) table[k].set_theta(std::move(r.theta));
  }
}

}  // namespace detail

const char* to_string(RefreshMode mode) {
  switch (mode) {
    case RefreshMode::prior: return "prior";
    case RefreshMode::empirical_exact: return "empirical-exact";
    case RefreshMode::empirical_auto: return "empirical-auto";
  }
  return "?";
}

std::vector<Cluster> SerialState::occupied() const {
  std::vector<Cluster> out;
  for (auto i : table.indices_with(ClusterStatus::global)) out.push_back(table[i]);
  return out;
}

std::size_t SerialState::k_plus() const { return table.count_with(ClusterStatus::global); }

void collapsed_log_weights(const ClusterTable& table, std::span<const std::uint32_t> x,
                           double alpha, std::size_t m, std::vector<std::size_t>& indices,
                           std::vector<double>& log_weights) {
  indices.clear();
  log_weights.clear();
  const double log_slot = std::log(alpha / static_cast<double>(m));
  const auto entries = table.entries();
  for (std::size_t k = 0; k < entries.size(); ++k) {
    if (!table.live(k)) continue;
    const Cluster& c = entries[k];
    double prior;
    if (c.status == ClusterStatus::empty) {
      prior = log_slot;
    } else if (c.count == 0) {
      prior = kNegInf;
    } else {
      prior = std::log(static_cast<double>(c.count));
    }
    indices.push_back(k);
    log_weights.push_back(prior == kNegInf ? kNegInf : prior + log_kernel(x, c.log_theta));
  }
}

void initialize_state(SerialState& state, const CountDataset& data, const ModelConfig& config,
                      const InitOptions& init, Rng& rng) {
  if (data.empty()) throw InputError("cannot initialize a sampler on an empty dataset");
  state.table.clear();
  state.next_id = 0;
  state.z.assign(data.size(), 0);

  const std::size_t n = data.size();
  std::vector<std::size_t> labels(n, 0);
  switch (init.kind) {
    case InitOptions::Kind::single:
      break;
    case InitOptions::Kind::random: {
      const std::size_t k = std::max<std::size_t>(1, std::min(init.clusters, n));
      for (auto& l : labels) {
        l = std::min(k - 1, static_cast<std::size_t>(sample_uniform(rng) * static_cast<double>(k)));
      }
      break;
    }
    case InitOptions::Kind::kmeans:
      labels = kmeans_labels(data, std::max<std::size_t>(1, std::min(init.clusters, n)), rng);
      break;
  }

  const std::size_t n_labels = *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<std::size_t> entry_of(n_labels, std::numeric_limits<std::size_t>::max());
  for (std::size_t i = 0; i < n; ++i) {
    auto& e = entry_of[labels[i]];
    if (e == std::numeric_limits<std::size_t>::max()) {
      e = state.table.insert(Cluster(state.next_id++, ClusterStatus::global, Theta(data.dim(), 1.0 / data.dim())));
    }
    state.table[e].add(data.row(i));
    state.z[i] = e;
  }
  for (auto k : state.table.indices_with(ClusterStatus::global)) {
    state.table[k].set_theta(sample_posterior_theta(state.table[k].suffstats, config.gamma, rng));
  }
  detail::normalize_slots(state.table, config.m, rng,
                          [&] { return sample_prior(config.gamma, data.dim(), rng); });
}

void gibbs_sweep_collapsed(SerialState& state, const CountDataset& data, const ModelConfig& config,
                           RefreshMode mode, Rng& rng, KernelStats* stats) {
  const std::vector<std::size_t> rows = iota_rows(data.size());
  const std::vector<double> coefficients =
      mode == RefreshMode::prior ? std::vector<double>{} : detail::log_coefficients(data);

  // Slots consumed mid-sweep are replaced right away: from H in the exact
  // modes, from the (sweep-start) empirical proposal in the approximate one.
  std::optional<EmpiricalProposal> cached;
  if (mode == RefreshMode::empirical_auto) {
    cached.emplace(detail::make_context(state.table, data, rows, state.z, coefficients, config));
  }
  auto fresh = [&]() -> Theta {
    if (cached) return cached->propose(rng).theta;
    return sample_prior(config.gamma, data.dim(), rng);
  };

  std::vector<std::size_t> indices;
  std::vector<double> log_weights;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto x = data.row(i);
    detail::detach(state.table, state.z[i], x, ClusterStatus::global, rng);
    collapsed_log_weights(state.table, x, config.alpha, config.m, indices, log_weights);
    const std::size_t k = indices[sample_log_categorical(log_weights, rng)];
    if (state.table[k].status == ClusterStatus::empty) {
      state.table[k].status = ClusterStatus::global;
      state.table[k].id = state.next_id++;
      state.table.insert(Cluster(0, ClusterStatus::empty, fresh()));
    }
    state.table[k].add(x);
    state.z[i] = k;
  }

  for (auto k : state.table.indices_with(ClusterStatus::global)) {
    state.table[k].set_theta(sample_posterior_theta(state.table[k].suffstats, config.gamma, rng));
  }
  refresh_slots(state, data, config, mode, rng, stats);
}

void refresh_slots(SerialState& state, const CountDataset& data, const ModelConfig& config,
                   RefreshMode mode, Rng& rng, KernelStats* stats) {
  const std::vector<std::size_t> rows = iota_rows(data.size());
  const std::vector<double> coefficients =
      mode == RefreshMode::prior ? std::vector<double>{} : detail::log_coefficients(data);
  detail::refresh_table_slots(state.table, data, rows, state.z, coefficients, config, mode, rng,
                              stats);
}

SerialRunResult run_serial(const CountDataset& data, const ModelConfig& config, RefreshMode mode,
                           const RunOptions& options) {
  config.validate();
  if (options.test && options.test->dim() != data.dim()) {
    throw InputError("train and test dimensions differ");
  }
  SerialRunResult result;
  Rng rng = make_stream(config.seed, 0, 1);
  const RunClock clock(options.clock);
  initialize_state(result.state, data, config, options.init, rng);

  auto record = [&](std::size_t iteration) {
    MetricsRecord r;
    r.iteration = iteration;
    r.wall_seconds = clock.seconds(iteration);
    r.k_plus = result.state.k_plus();
    r.stage = Stage::serial;
    if (options.test) {
      const auto clusters = result.state.occupied();
      r.test_pred_ll = predictive_log_likelihood(*options.test, clusters, config.alpha, config.gamma);
    } else {
      r.test_pred_ll = std::numeric_limits<double>::quiet_NaN();
    }
    result.trace.push_back(r);
    if (options.metrics_sink) options.metrics_sink(r);
    return r.wall_seconds;
  };

  record(0);
  for (std::size_t it = 1; it <= config.total_iters; ++it) {
    gibbs_sweep_collapsed(result.state, data, config, mode, rng, &result.stats);
    result.iterations = it;
    if (record(it) >= options.max_seconds) break;
  }
  return result;
}

}  // namespace dpmm
