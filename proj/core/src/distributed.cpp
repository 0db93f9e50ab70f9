#include "dpmm/distributed.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <unordered_map>

#include "sweep_common.hpp"

namespace dpmm {

namespace {

constexpr ClusterId kLocalBit = ClusterId{1} << 63;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::size_t uniform_index(std::size_t n, Rng& rng) {
  return std::min(n - 1, static_cast<std::size_t>(sample_uniform(rng) * static_cast<double>(n)));
}

void refresh_local_features(WorkerState& worker, double gamma) {
  for (auto k : worker.table.indices_with(ClusterStatus::local)) {
    auto& c = worker.table[k];
    c.set_theta(sample_posterior_theta(c.suffstats, gamma, worker.rng));
  }
}

// Places x into entry k, promoting an auxiliary slot to a new local feature
// and replacing the consumed slot with `fresh()`.
template <class Fresh>
void attach(WorkerState& worker, std::size_t j, std::size_t k, std::span<const std::uint32_t> x,
            Fresh&& fresh) {
  auto& table = worker.table;
  if (table[k].status == ClusterStatus::empty) {
    table[k].status = ClusterStatus::local;
    table[k].id = local_cluster_id(worker.worker_id, worker.next_local++);
    table.insert(Cluster(0, ClusterStatus::empty, fresh()));
  }
  table[k].add(x);
  worker.z[j] = k;
}

}  // namespace

ClusterId local_cluster_id(std::size_t worker_id, std::uint64_t counter) {
  return kLocalBit | (static_cast<ClusterId>(worker_id) << 40) | (counter & ((ClusterId{1} << 40) - 1));
}

bool is_local_cluster_id(ClusterId id) { return (id & kLocalBit) != 0; }

std::vector<std::vector<std::size_t>> shard_data(const CountDataset& data, std::size_t n_workers,
                                                 Rng& rng) {
  const std::size_t n = data.size();
  if (n_workers == 0) throw InputError("shard_data: need at least one worker");
  if (n_workers > n) {
    throw InputError("shard_data: " + std::to_string(n_workers) + " workers for " +
                     std::to_string(n) + " observations");
  }
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[uniform_index(i, rng)]);

  std::vector<std::vector<std::size_t>> shards(n_workers);
  const std::size_t base = n / n_workers;
  const std::size_t extra = n % n_workers;
  std::size_t pos = 0;
  for (std::size_t p = 0; p < n_workers; ++p) {
    const std::size_t size = base + (p < extra ? 1 : 0);
    shards[p].assign(perm.begin() + static_cast<std::ptrdiff_t>(pos),
                     perm.begin() + static_cast<std::ptrdiff_t>(pos + size));
    std::sort(shards[p].begin(), shards[p].end());
    pos += size;
  }
  return shards;
}

void accel_sweep(WorkerState& worker, const CountDataset& data, const GlobalState& global,
                 const ModelConfig& config, std::span<const double> log_coefficients) {
  std::vector<double> own_coefficients;
  if (log_coefficients.empty()) {
    own_coefficients = detail::log_coefficients(data);
    log_coefficients = own_coefficients;
  }
  const EmpiricalProposal cached(
      detail::make_context(worker.table, data, worker.rows, worker.z, log_coefficients, config));
  auto fresh = [&] { return cached.propose(worker.rng).theta; };

  std::vector<std::size_t> indices;
  std::vector<double> log_weights;
  for (std::size_t j = 0; j < worker.rows.size(); ++j) {
    const auto x = data.row(worker.rows[j]);
    detail::detach(worker.table, worker.z[j], x, ClusterStatus::local, worker.rng);
    // K+ entries carry local counts, K* entries their exact counts.
    collapsed_log_weights(worker.table, x, global.alpha, config.m, indices, log_weights);
    const std::size_t k = indices[sample_log_categorical(log_weights, worker.rng)];
    attach(worker, j, k, x, fresh);
  }

  refresh_local_features(worker, config.gamma);
  detail::refresh_table_slots(worker.table, data, worker.rows, worker.z, log_coefficients, config,
                              RefreshMode::empirical_auto, worker.rng, &worker.stats);
}

void exact_log_weights(const WorkerState& worker, const GlobalState& global,
                       std::span<const std::uint32_t> x, std::size_t m,
                       std::vector<std::size_t>& indices, std::vector<double>& log_weights) {
  indices.clear();
  log_weights.clear();
  const auto& table = worker.table;
  const bool proposer = worker.worker_id == global.proposer;
  double log_rest = kNegInf, log_slot = kNegInf;
  if (proposer) {
    std::size_t n_star = 0;
    for (auto k : table.indices_with(ClusterStatus::local)) n_star += table[k].count;
    log_rest = std::log(global.pi.back()) - std::log(global.alpha + static_cast<double>(n_star));
    log_slot = log_rest + std::log(global.alpha / static_cast<double>(m));
  }
  const auto entries = table.entries();
  for (std::size_t k = 0; k < entries.size(); ++k) {
    if (!table.live(k)) continue;
    const Cluster& c = entries[k];
    double prior = kNegInf;
    if (c.status == ClusterStatus::global) {
      // Emptied K+ entries keep their weight until the next sync.
      prior = std::log(global.pi[k]);
    } else if (!proposer) {
      continue;
    } else if (c.status == ClusterStatus::empty) {
      prior = log_slot;
    } else if (c.count > 0) {
      prior = log_rest + std::log(static_cast<double>(c.count));
    }
    indices.push_back(k);
    log_weights.push_back(prior == kNegInf ? kNegInf : prior + log_kernel(x, c.log_theta));
  }
}

void exact_sweep(WorkerState& worker, const CountDataset& data, const GlobalState& global,
                 const ModelConfig& config) {
  const bool proposer = worker.worker_id == global.proposer;
  auto fresh = [&] { return sample_prior(config.gamma, data.dim(), worker.rng); };

  std::vector<std::size_t> indices;
  std::vector<double> log_weights;
  for (std::size_t j = 0; j < worker.rows.size(); ++j) {
    const auto x = data.row(worker.rows[j]);
    detail::detach(worker.table, worker.z[j], x, ClusterStatus::local, worker.rng);
    exact_log_weights(worker, global, x, config.m, indices, log_weights);
    const std::size_t k = indices[sample_log_categorical(log_weights, worker.rng)];
    attach(worker, j, k, x, fresh);
  }
  if (!proposer) return;
  refresh_local_features(worker, config.gamma);
  detail::refresh_table_slots(worker.table, data, worker.rows, worker.z, {}, config,
                              RefreshMode::prior, worker.rng, &worker.stats);
}

SyncMessage make_sync_message(const WorkerState& worker, const GlobalState& global) {
  SyncMessage msg;
  msg.worker_id = worker.worker_id;
  for (std::size_t k = 0; k < global.clusters.size(); ++k) {
    const ClusterId id = global.clusters[k].id;
    if (k >= worker.k_global || worker.table[k].id != id) {
      throw SyncError("make_sync_message: worker K+ view is stale");
    }
    const Cluster& c = worker.table[k];
    msg.global.push_back({id, c.count, c.suffstats});
  }
  for (auto k : worker.table.indices_with(ClusterStatus::local)) {
    const Cluster& c = worker.table[k];
    if (c.count == 0) continue;
    msg.new_features.push_back({c.id, c.theta, c.count, c.suffstats});
  }
  return msg;
}

double resample_concentration(double alpha, std::size_t k, std::size_t n, double shape,
                              double rate, Rng& rng) {
  if (n == 0 || k == 0) return sample_gamma(shape, rate, rng);
  const double nn = static_cast<double>(n);
  const double kk = static_cast<double>(k);
  const double eta = sample_beta(alpha + 1.0, nn, rng);
  const double post_rate = rate - std::log(eta);
  const double odds = (shape + kk - 1.0) / (nn * post_rate);
  const double mix = odds / (1.0 + odds);
  const double post_shape = sample_uniform(rng) < mix ? shape + kk : shape + kk - 1.0;
  return sample_gamma(post_shape, post_rate, rng);
}

SyncOutcome synchronize(std::span<const SyncMessage> messages, const GlobalState& global,
                        const ModelConfig& config, Rng& rng) {
  const std::size_t n_workers = config.n_workers;
  if (messages.size() != n_workers) {
    throw SyncError("synchronize: expected " + std::to_string(n_workers) + " messages, got " +
                    std::to_string(messages.size()));
  }
  std::vector<const SyncMessage*> by_worker(n_workers, nullptr);
  for (const auto& msg : messages) {
    if (msg.worker_id >= n_workers || by_worker[msg.worker_id]) {
      throw SyncError("synchronize: missing or duplicate message for a worker");
    }
    by_worker[msg.worker_id] = &msg;
  }

  const std::size_t k_old = global.clusters.size();
  const std::size_t dim = k_old > 0 ? global.clusters.front().theta.size() : 0;
  std::vector<std::size_t> counts(k_old, 0);
  std::vector<SuffStats> stats(k_old);
  for (std::size_t k = 0; k < k_old; ++k) stats[k].assign(global.clusters[k].theta.size(), 0);
  for (const SyncMessage* msg : by_worker) {
    if (msg->global.size() != k_old) throw SyncError("synchronize: worker K+ view is stale");
    for (std::size_t k = 0; k < k_old; ++k) {
      const auto& e = msg->global[k];
      if (e.id != global.clusters[k].id || e.suffstats.size() != stats[k].size()) {
        throw SyncError("synchronize: worker K+ view does not match the master");
      }
      counts[k] += e.count;
      for (std::size_t d = 0; d < stats[k].size(); ++d) stats[k][d] += e.suffstats[d];
    }
  }

  SyncOutcome out;
  GlobalState& next = out.global;
  next.next_id = global.next_id;
  for (std::size_t k = 0; k < k_old; ++k) {
    if (counts[k] == 0) continue;
    Cluster c(global.clusters[k].id, ClusterStatus::global, global.clusters[k].theta);
    c.count = counts[k];
    c.suffstats = std::move(stats[k]);
    next.clusters.push_back(std::move(c));
  }
  for (const SyncMessage* msg : by_worker) {
    for (const auto& f : msg->new_features) {
      if (f.count == 0) continue;
      if (dim != 0 && f.theta.size() != dim) throw SyncError("synchronize: feature dimension mismatch");
      const ClusterId id = next.next_id++;
      out.renumbered.emplace_back(f.local_id, id);
      Cluster c(id, ClusterStatus::global, f.theta);
      c.count = f.count;
      c.suffstats = f.suffstats;
      next.clusters.push_back(std::move(c));
    }
  }

  std::size_t n_total = 0;
  std::vector<double> weights;
  for (auto& c : next.clusters) {
    c.set_theta(sample_posterior_theta(c.suffstats, config.gamma, rng));
    n_total += c.count;
    weights.push_back(static_cast<double>(c.count));
  }
  weights.push_back(global.alpha);
  next.pi = sample_dirichlet(weights, rng);
  next.alpha = config.resample_alpha
                   ? resample_concentration(global.alpha, next.clusters.size(), n_total,
                                            config.alpha_prior_shape, config.alpha_prior_rate, rng)
                   : global.alpha;
  next.proposer = uniform_index(n_workers, rng);
  return out;
}

void apply_sync(WorkerState& worker, const CountDataset& data, const SyncOutcome& outcome) {
  const auto& clusters = outcome.global.clusters;
  std::unordered_map<ClusterId, ClusterId> renumbered(outcome.renumbered.begin(),
                                                      outcome.renumbered.end());
  std::unordered_map<ClusterId, std::size_t> position;
  for (std::size_t k = 0; k < clusters.size(); ++k) position.emplace(clusters[k].id, k);

  std::vector<std::size_t> new_index(worker.table.capacity(), std::numeric_limits<std::size_t>::max());
  std::vector<Theta> slots;
  for (auto k : worker.table.live_indices()) {
    const Cluster& c = worker.table[k];
    if (c.status == ClusterStatus::empty) {
      slots.push_back(c.theta);
      continue;
    }
    ClusterId id = c.id;
    if (c.status == ClusterStatus::local) {
      auto it = renumbered.find(id);
      if (it == renumbered.end()) continue;  // emptied, nothing points here
      id = it->second;
    }
    auto pos = position.find(id);
    if (pos != position.end()) new_index[k] = pos->second;
  }

  ClusterTable table;
  for (const Cluster& g : clusters) {
    Cluster c(g.id, ClusterStatus::global, g.theta);
    table.insert(std::move(c));
  }
  for (auto& t : slots) table.insert(Cluster(0, ClusterStatus::empty, std::move(t)));

  for (std::size_t j = 0; j < worker.rows.size(); ++j) {
    const std::size_t k = new_index[worker.z[j]];
    if (k == std::numeric_limits<std::size_t>::max()) {
      throw SyncError("apply_sync: observation assigned to a cluster the master dropped");
    }
    table[k].add(data.row(worker.rows[j]));
    worker.z[j] = k;
  }
  worker.table = std::move(table);
  worker.k_global = clusters.size();
}

DistributedSampler::DistributedSampler(const CountDataset& data, const ModelConfig& config,
                                       const InitOptions& init, DistributedOptions options)
    : data_(data),
      config_(config),
      options_(std::move(options)),
      master_rng_(make_stream(config.seed, 0, 3)) {
  config_.validate();
  log_coefficients_ = detail::log_coefficients(data_);

  // Initial partition comes from the serial initializer on the full dataset.
  SerialState init_state;
  initialize_state(init_state, data_, config_, init, master_rng_);
  std::vector<std::size_t> entry_to_global(init_state.table.capacity(), 0);
  for (auto k : init_state.table.indices_with(ClusterStatus::global)) {
    entry_to_global[k] = global_.clusters.size();
    Cluster c = init_state.table[k];
    c.id = global_.next_id++;
    global_.clusters.push_back(std::move(c));
  }
  std::vector<double> weights;
  for (const auto& c : global_.clusters) weights.push_back(static_cast<double>(c.count));
  weights.push_back(config_.alpha);
  global_.pi = sample_dirichlet(weights, master_rng_);
  global_.alpha = config_.alpha;
  global_.proposer = std::min(config_.n_workers - 1,
                              static_cast<std::size_t>(sample_uniform(master_rng_) *
                                                       static_cast<double>(config_.n_workers)));

  auto shards = shard_data(data_, config_.n_workers, master_rng_);
  workers_.resize(config_.n_workers);
  for (std::size_t p = 0; p < config_.n_workers; ++p) {
    WorkerState& w = workers_[p];
    w.worker_id = p;
    w.rng = make_stream(config_.seed, p + 1, 2);
    w.rows = std::move(shards[p]);
    for (const auto& g : global_.clusters) w.table.insert(Cluster(g.id, ClusterStatus::global, g.theta));
    w.k_global = global_.clusters.size();
    w.z.resize(w.rows.size());
    for (std::size_t j = 0; j < w.rows.size(); ++j) {
      const std::size_t k = entry_to_global[init_state.z[w.rows[j]]];
      w.table[k].add(data_.row(w.rows[j]));
      w.z[j] = k;
    }
    detail::normalize_slots(w.table, config_.m, w.rng,
                            [&] { return sample_prior(config_.gamma, data_.dim(), w.rng); });
  }
}

Stage DistributedSampler::stage_of(std::size_t iteration) const {
  // Iteration 0 is the initial state; it belongs to the first stage that runs.
  if (iteration == 0) return config_.accel_iters > 0 ? Stage::accelerated : Stage::exact;
  return iteration <= config_.accel_iters ? Stage::accelerated : Stage::exact;
}

void DistributedSampler::run_worker_iteration(WorkerState& worker, std::size_t iteration) {
  if (stage_of(iteration) == Stage::accelerated) {
    accel_sweep(worker, data_, global_, config_, log_coefficients_);
  } else {
    exact_sweep(worker, data_, global_, config_);
  }
}

void DistributedSampler::advance() {
  if (done()) return;
  const std::size_t start = iteration_ + 1;
  std::size_t end = (iteration_ / config_.sync_interval + 1) * config_.sync_interval;
  if (iteration_ < config_.accel_iters) end = std::min(end, config_.accel_iters);
  end = std::min(end, config_.total_iters);

  const bool interleave = !options_.parallel || options_.observer || workers_.size() == 1;
  if (interleave) {
    for (std::size_t it = start; it <= end; ++it) {
      for (auto& w : workers_) run_worker_iteration(w, it);
      if (options_.observer) options_.observer(it, false, workers_, global_);
    }
  } else {
    std::vector<std::exception_ptr> errors(workers_.size());
    {
      std::vector<std::jthread> threads;
      threads.reserve(workers_.size());
      for (std::size_t p = 0; p < workers_.size(); ++p) {
        threads.emplace_back([&, p] {
          try {
            for (std::size_t it = start; it <= end; ++it) run_worker_iteration(workers_[p], it);
          } catch (...) {
            errors[p] = std::current_exception();
          }
        });
      }
    }
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  std::vector<SyncMessage> messages;
  messages.reserve(workers_.size());
  for (const auto& w : workers_) messages.push_back(make_sync_message(w, global_));
  SyncOutcome outcome = synchronize(messages, global_, config_, master_rng_);
  for (auto& w : workers_) apply_sync(w, data_, outcome);
  global_ = std::move(outcome.global);
  iteration_ = end;
  if (options_.observer) options_.observer(end, true, workers_, global_);
}

std::vector<ClusterId> DistributedSampler::assignments() const {
  std::vector<ClusterId> out(data_.size(), 0);
  for (const auto& w : workers_) {
    for (std::size_t j = 0; j < w.rows.size(); ++j) out[w.rows[j]] = w.table[w.z[j]].id;
  }
  return out;
}

DistributedRunResult run_distributed(const CountDataset& data, const ModelConfig& config,
                                     const RunOptions& options, DistributedOptions dist_options) {
  if (options.test && options.test->dim() != data.dim()) {
    throw InputError("train and test dimensions differ");
  }
  const RunClock clock(options.clock);
  DistributedSampler sampler(data, config, options.init, std::move(dist_options));
  DistributedRunResult result;

  auto record = [&](std::size_t iteration, Stage stage) {
    MetricsRecord r;
    r.iteration = iteration;
    r.wall_seconds = clock.seconds(iteration);
    r.k_plus = sampler.global().clusters.size();
    r.stage = stage;
    r.test_pred_ll = options.test
                         ? predictive_log_likelihood(*options.test, sampler.global(), config)
                         : std::numeric_limits<double>::quiet_NaN();
    result.trace.push_back(r);
    if (options.metrics_sink) options.metrics_sink(r);
    return r.wall_seconds;
  };

  record(0, sampler.stage_of(0));
  while (!sampler.done()) {
    sampler.advance();
    if (record(sampler.iteration(), sampler.stage_of(sampler.iteration())) >= options.max_seconds) break;
  }
  result.iterations = sampler.iteration();
  result.global = sampler.global();
  result.assignments = sampler.assignments();
  for (const auto& w : sampler.workers()) {
    result.stats.mh_steps += w.stats.mh_steps;
    result.stats.mh_accepted += w.stats.mh_accepted;
    result.stats.incidents += w.stats.incidents;
    result.stats.clamped += w.stats.clamped;
    result.stats.prior_fallback += w.stats.prior_fallback;
  }
  return result;
}

}  // namespace dpmm
