#pragma once

#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "dpmm/cluster_table.hpp"
#include "dpmm/metrics.hpp"
#include "dpmm/model.hpp"
#include "dpmm/proposal.hpp"

namespace dpmm {

// How empty auxiliary slots get new parameters after each sweep.
enum class RefreshMode {
  prior,            // fresh draws from H (auxiliary-variable Gibbs baseline)
  empirical_exact,  // one Metropolis-Hastings step with the empirical proposal
  empirical_auto,   // empirical proposal accepted unconditionally (approximate)
};

const char* to_string(RefreshMode mode);

struct InitOptions {
  enum class Kind { single, random, kmeans };
  Kind kind = Kind::single;
  std::size_t clusters = 100;  // for random / kmeans
};

// Single-process sampler state. `z[i]` indexes the table entry holding
// observation i; occupied entries have status global, auxiliary ones empty.
struct SerialState {
  ClusterTable table;
  std::vector<std::size_t> z;
  ClusterId next_id = 0;

  std::vector<Cluster> occupied() const;
  std::size_t k_plus() const;
};

struct KernelStats {
  std::size_t mh_steps = 0;
  std::size_t mh_accepted = 0;
  std::size_t incidents = 0;      // non-finite MH ratios
  std::size_t clamped = 0;        // zero-likelihood observations in empirical weights
  std::size_t prior_fallback = 0; // empirical branch requested on an empty shard
};

// Collapsed allocation scores for x over the live entries of `table`:
// occupied entries score log(count) + log f, empty slots log(alpha/m) + log f
// (multinomial coefficient omitted). Entries with zero count and non-empty
// status score -inf.
void collapsed_log_weights(const ClusterTable& table, std::span<const std::uint32_t> x,
                           double alpha, std::size_t m, std::vector<std::size_t>& indices,
                           std::vector<double>& log_weights);

void initialize_state(SerialState& state, const CountDataset& data, const ModelConfig& config,
                      const InitOptions& init, Rng& rng);

// One allocation pass over all observations in index order, then posterior
// refresh of occupied parameters and refresh_slots().
void gibbs_sweep_collapsed(SerialState& state, const CountDataset& data, const ModelConfig& config,
                           RefreshMode mode, Rng& rng, KernelStats* stats = nullptr);

// Normalizes the slot count to m, then refreshes every slot per `mode`.
void refresh_slots(SerialState& state, const CountDataset& data, const ModelConfig& config,
                   RefreshMode mode, Rng& rng, KernelStats* stats = nullptr);

struct RunOptions {
  const CountDataset* test = nullptr;
  RunClock::Kind clock = RunClock::Kind::wall;
  double max_seconds = std::numeric_limits<double>::infinity();
  InitOptions init;
  std::function<void(const MetricsRecord&)> metrics_sink;
};

struct SerialRunResult {
  SerialState state;
  MetricsTrace trace;
  std::size_t iterations = 0;
  KernelStats stats;
};

// Runs config.total_iters sweeps (or until max_seconds), recording metrics
// after initialization and after every sweep. config.alpha stays fixed.
SerialRunResult run_serial(const CountDataset& data, const ModelConfig& config, RefreshMode mode,
                           const RunOptions& options = {});

}  // namespace dpmm
