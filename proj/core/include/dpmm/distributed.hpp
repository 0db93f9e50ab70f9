#pragma once

#include <functional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "dpmm/cluster_table.hpp"
#include "dpmm/metrics.hpp"
#include "dpmm/model.hpp"
#include "dpmm/serial.hpp"

namespace dpmm {

// Raised when the master cannot merge a complete, consistent set of worker
// messages. Nothing is merged in that case.
class SyncError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// One worker's private view. Table entries [0, |K+|) mirror the global
// clusters in order (count = local count on this worker); new local features
// (K*) and auxiliary slots (K-) follow.
struct WorkerState {
  std::size_t worker_id = 0;
  std::vector<std::size_t> rows;  // dataset rows owned by this worker
  std::vector<std::size_t> z;     // table index of each owned row
  ClusterTable table;
  std::size_t k_global = 0;       // number of leading entries mirroring K+
  std::uint64_t next_local = 0;
  Rng rng;
  KernelStats stats;
};

// Worker-namespaced id for a new local feature; renumbered by the master.
ClusterId local_cluster_id(std::size_t worker_id, std::uint64_t counter);
bool is_local_cluster_id(ClusterId id);

struct SyncMessage {
  struct Entry {
    ClusterId id = 0;
    std::size_t count = 0;
    SuffStats suffstats;
  };
  struct NewFeature {
    ClusterId local_id = 0;
    Theta theta;
    std::size_t count = 0;
    SuffStats suffstats;
  };

  std::size_t worker_id = 0;
  std::vector<Entry> global;  // in K+ order
  std::vector<NewFeature> new_features;
};

struct SyncOutcome {
  GlobalState global;
  std::vector<std::pair<ClusterId, ClusterId>> renumbered;  // local id -> global id
};

// Uniformly random partition of dataset rows into `n_workers` shards whose
// sizes differ by at most one. Each shard lists its rows in ascending order.
std::vector<std::vector<std::size_t>> shard_data(const CountDataset& data, std::size_t n_workers,
                                                 Rng& rng);

// Acceleration-stage pass over a worker's shard: collapsed allocation with
// local counts for K+, exact counts for K*, alpha/m for slots; then K*
// posterior refresh and auto-accepted empirical slot refresh.
void accel_sweep(WorkerState& worker, const CountDataset& data, const GlobalState& global,
                 const ModelConfig& config, std::span<const double> log_coefficients = {});

// Exact-stage pass. Every worker allocates over K+ with weights pi_k; the
// elected proposer may additionally open features from the remainder mass,
// which it splits by the Chinese restaurant rule over its new features and
// auxiliary slots. K+ entries stay allocatable until the next sync even when
// their count drops to zero.
void exact_sweep(WorkerState& worker, const CountDataset& data, const GlobalState& global,
                 const ModelConfig& config);

// Unnormalized log allocation weights used by exact_sweep (exposed for tests).
void exact_log_weights(const WorkerState& worker, const GlobalState& global,
                       std::span<const std::uint32_t> x, std::size_t m,
                       std::vector<std::size_t>& indices, std::vector<double>& log_weights);

SyncMessage make_sync_message(const WorkerState& worker, const GlobalState& global);

// Master step: union K+ with every K*_p, aggregate counts and suffstats, prune
// empty clusters, draw theta, pi and (optionally) alpha, elect a proposer.
SyncOutcome synchronize(std::span<const SyncMessage> messages, const GlobalState& global,
                        const ModelConfig& config, Rng& rng);

// Installs the broadcast global state on a worker and remaps its assignments.
void apply_sync(WorkerState& worker, const CountDataset& data, const SyncOutcome& outcome);

// Escobar-West auxiliary-variable draw of alpha given k clusters and n items
// under a Gamma(shape, rate) prior.
double resample_concentration(double alpha, std::size_t k, std::size_t n, double shape,
                              double rate, Rng& rng);

struct DistributedOptions {
  // Run workers on threads between barriers; otherwise interleave them on the
  // calling thread. Results are identical either way.
  bool parallel = true;
  // Called after every iteration (synced = false) and after every
  // synchronization (synced = true). Setting it forces interleaved execution.
  std::function<void(std::size_t iteration, bool synced, std::span<const WorkerState> workers,
                     const GlobalState& global)>
      observer;
};

class DistributedSampler {
 public:
  DistributedSampler(const CountDataset& data, const ModelConfig& config,
                     const InitOptions& init = {}, DistributedOptions options = {});

  bool done() const { return iteration_ >= config_.total_iters; }
  std::size_t iteration() const { return iteration_; }
  Stage stage_of(std::size_t iteration) const;

  // Runs iterations up to the next synchronization point, then synchronizes.
  void advance();

  const GlobalState& global() const { return global_; }
  std::span<const WorkerState> workers() const { return workers_; }
  const ModelConfig& config() const { return config_; }

  // Global cluster id of every dataset row (valid right after a sync).
  std::vector<ClusterId> assignments() const;

 private:
  void run_worker_iteration(WorkerState& worker, std::size_t iteration);

  const CountDataset& data_;
  ModelConfig config_;
  DistributedOptions options_;
  Rng master_rng_;
  GlobalState global_;
  std::vector<WorkerState> workers_;
  std::vector<double> log_coefficients_;
  std::size_t iteration_ = 0;
};

struct DistributedRunResult {
  GlobalState global;
  std::vector<ClusterId> assignments;
  MetricsTrace trace;
  std::size_t iterations = 0;
  KernelStats stats;
};

// Runs the two-stage schedule, recording metrics at initialization and after
// every synchronization. max_seconds is checked at synchronization points.
DistributedRunResult run_distributed(const CountDataset& data, const ModelConfig& config,
                                     const RunOptions& options = {},
                                     DistributedOptions dist_options = {});

}  // namespace dpmm
