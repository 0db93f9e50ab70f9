// Acceptance suite: one PASS/FAIL line per criterion. Exit status is nonzero
// when any criterion fails.
//
//   dpmm_acceptance <path-to-dpmm-cli> [criterion numbers...]

#include <fmt/format.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>
#include <unistd.h>

#include "../support/partition_oracle.hpp"
#include "dpmm/data_io.hpp"
#include "dpmm/distributed.hpp"
#include "dpmm/metrics.hpp"
#include "dpmm/proposal.hpp"
#include "dpmm/serial.hpp"

namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string cli_path;

// Tolerances and sizes fixed by the acceptance contract.
constexpr double kTvTolerance = 0.05;
constexpr std::size_t kBurnIn = 5000;
constexpr std::size_t kSamples = 50000;
constexpr double kKsTolerance = 0.02;
constexpr std::size_t kChainSteps = 100000;
constexpr double kTimeCap = 60.0;
constexpr int kSeeds = 5;
constexpr int kSeedsRequired = 4;

const std::vector<std::vector<unsigned>> kTinyRows = {
    {4, 0, 0}, {3, 1, 0}, {0, 4, 0}, {0, 3, 1}, {1, 1, 2}};

dpmm::CountDataset tiny_dataset() {
  std::vector<std::uint32_t> flat;
  for (const auto& r : kTinyRows) flat.insert(flat.end(), r.begin(), r.end());
  return dpmm::CountDataset(3, flat);
}

dpmm::ModelConfig tiny_config() {
  dpmm::ModelConfig c;
  c.alpha = 1.0;
  c.gamma = 1.0;
  c.m = 3;
  c.rho = 0.5;
  c.resample_alpha = false;
  c.seed = 20240611;
  return c;
}

Outcome serial_partition_tv(dpmm::RefreshMode mode) {
  const auto data = tiny_dataset();
  const auto config = tiny_config();
  const auto exact = oracle::posterior(kTinyRows, config.alpha, config.gamma);
  dpmm::Rng rng = dpmm::make_stream(config.seed, 0, 1);
  dpmm::SerialState state;
  dpmm::initialize_state(state, data, config, {}, rng);
  std::map<oracle::Labels, std::size_t> counts;
  for (std::size_t it = 0; it < kBurnIn + kSamples; ++it) {
    dpmm::gibbs_sweep_collapsed(state, data, config, mode, rng);
    if (it >= kBurnIn) ++counts[oracle::canonical<std::size_t>(state.z)];
  }
  const double tv = oracle::total_variation(exact, counts);
  return {tv <= kTvTolerance, fmt::format("{} TV={:.4f} over {} partitions visited of {}",
                                          dpmm::to_string(mode), tv, counts.size(), exact.size())};
}

Outcome criterion1() {
  const auto a = serial_partition_tv(dpmm::RefreshMode::empirical_exact);
  const auto b = serial_partition_tv(dpmm::RefreshMode::prior);
  return {a.pass && b.pass, a.detail + "; " + b.detail};
}

Outcome criterion2() {
  // Two-dimensional toy shard with four observations.
  const dpmm::CountDataset data(2, {3, 1, 1, 4, 2, 2, 6, 1});
  const std::vector<std::size_t> rows = {0, 1, 2, 3};
  const std::vector<std::size_t> assign = {0, 0, 1, 1};
  std::vector<dpmm::Cluster> clusters = {
      dpmm::Cluster(0, dpmm::ClusterStatus::global, {0.6, 0.4}),
      dpmm::Cluster(1, dpmm::ClusterStatus::global, {0.3, 0.7}),
  };

  bool pass = true;
  std::string detail;
  for (double rho : {0.0, 0.3, 0.7}) {
    dpmm::ProposalContext ctx;
    ctx.data = &data;
    ctx.rows = rows;
    ctx.assignments = assign;
    ctx.clusters = clusters;
    ctx.rho = rho;
    ctx.gamma = 2.0;
    ctx.smoothing_eps = 1e-6;

    dpmm::Rng rng = dpmm::make_stream(77, static_cast<std::uint64_t>(rho * 10), 5);
    dpmm::Theta theta = dpmm::sample_prior(2.0, 2, rng);
    std::vector<double> first;
    first.reserve(kChainSteps);
    std::size_t rejected = 0;
    bool beta_not_one = false;
    for (std::size_t s = 0; s < kChainSteps; ++s) {
      auto r = dpmm::mh_step(theta, ctx, rng);
      if (!r.accepted) ++rejected;
      if (r.log_beta != 0.0) beta_not_one = true;
      theta = std::move(r.theta);
      first.push_back(theta[0]);
    }
    const double ks = oracle::ks_distance(first, oracle::beta22_cdf);
    bool ok = ks < kKsTolerance;
    if (rho == 0.0) ok = ok && rejected == 0 && !beta_not_one;
    pass = pass && ok;
    detail += fmt::format("{}rho={} KS={:.4f}{}", detail.empty() ? "" : "; ", rho, ks,
                          rho == 0.0 ? fmt::format(" rejections={}", rejected) : "");
  }
  return {pass, detail};
}

Outcome criterion3() {
  const auto data = tiny_dataset();
  auto config = tiny_config();
  config.n_workers = 1;
  config.accel_iters = 0;
  config.total_iters = kBurnIn + kSamples;
  const auto exact = oracle::posterior(kTinyRows, config.alpha, config.gamma);

  std::map<oracle::Labels, std::size_t> counts;
  dpmm::DistributedOptions opts;
  opts.observer = [&](std::size_t it, bool synced, std::span<const dpmm::WorkerState> workers,
                      const dpmm::GlobalState&) {
    if (synced || it <= kBurnIn) return;
    ++counts[oracle::canonical<std::size_t>(workers[0].z)];
  };
  dpmm::DistributedSampler sampler(data, config, {}, opts);
  while (!sampler.done()) sampler.advance();
  const double tv = oracle::total_variation(exact, counts);
  return {tv <= kTvTolerance, fmt::format("P=1 exact stage TV={:.4f}", tv)};
}

struct SyntheticRuns {
  std::vector<std::string> c4_lines;
  int c4_wins = 0;
  int c4_final_wins = 0;
  int c5_within = 0;
  std::string c5_detail;
};

const SyntheticRuns& synthetic_runs() {
  static const SyntheticRuns runs = [] {
    SyntheticRuns out;
    for (int seed = 1; seed <= kSeeds; ++seed) {
      dpmm::SyntheticSpec spec;
      spec.dim = 10;
      spec.n_train = 1000;
      spec.n_test = 100;
      spec.alpha = 1.0;
      spec.gamma = 1.0;
      spec.trials_per_obs = 100;
      spec.seed = static_cast<std::uint64_t>(seed);
      const auto data = dpmm::generate_synthetic(spec);

      dpmm::RunOptions options;
      options.test = &data.test;
      options.clock = dpmm::RunClock::Kind::wall;
      options.max_seconds = kTimeCap;

      dpmm::ModelConfig acc;
      acc.n_workers = 4;
      acc.accel_iters = 50;
      acc.sync_interval = 10;
      acc.rho = 0.9;
      acc.m = 3;
      acc.seed = static_cast<std::uint64_t>(seed);
      const auto a = dpmm::run_distributed(data.train, acc, options);

      dpmm::ModelConfig ser = acc;
      ser.n_workers = 1;
      const auto s = dpmm::run_serial(data.train, ser, dpmm::RefreshMode::prior, options);

      // Compare where the acceleration stage hands over to the exact stage,
      // against the serial state last recorded by then.
      const dpmm::MetricsRecord* handover = &a.trace.front();
      for (const auto& r : a.trace) {
        if (r.stage == dpmm::Stage::accelerated) handover = &r;
      }
      auto serial_at = [&](double t) {
        const dpmm::MetricsRecord* best = &s.trace.front();
        for (const auto& r : s.trace) {
          if (r.wall_seconds <= t) best = &r;
        }
        return *best;
      };
      const auto s_handover = serial_at(handover->wall_seconds);
      const auto s_final = serial_at(a.trace.back().wall_seconds);
      const bool win = handover->test_pred_ll >= s_handover.test_pred_ll;
      const bool final_win = a.trace.back().test_pred_ll >= s_final.test_pred_ll;
      out.c4_wins += win;
      out.c4_final_wins += final_win;
      out.c4_lines.push_back(fmt::format(
          "seed {}: t={:.3f}s accelerated it{} {:.2f} vs serial it{} {:.2f}{}; end t={:.3f}s "
          "{:.2f} vs {:.2f}",
          seed, handover->wall_seconds, handover->iteration, handover->test_pred_ll,
          s_handover.iteration, s_handover.test_pred_ll, win ? "" : " (behind)",
          a.trace.back().wall_seconds, a.trace.back().test_pred_ll, s_final.test_pred_ll));

      const std::size_t k_true = data.truth.num_clusters();
      const std::size_t k_final = a.global.clusters.size();
      const bool within = 2 * k_final >= k_true && k_final <= 2 * k_true;
      out.c5_within += within;
      out.c5_detail += fmt::format("{}seed {}: K+={} K_true={}", out.c5_detail.empty() ? "" : "; ",
                                   seed, k_final, k_true);
    }
    return out;
  }();
  return runs;
}

Outcome criterion4() {
  const auto& runs = synthetic_runs();
  std::string detail = fmt::format("{}/{} seeds at handover (final-time {}/{})", runs.c4_wins,
                                    kSeeds, runs.c4_final_wins, kSeeds);
  for (const auto& l : runs.c4_lines) detail += "\n      " + l;
  return {runs.c4_wins >= kSeedsRequired, detail};
}

Outcome criterion5() {
  const auto& runs = synthetic_runs();
  return {runs.c5_within >= kSeedsRequired,
          fmt::format("{}/{} within [K/2, 2K]: {}", runs.c5_within, kSeeds, runs.c5_detail)};
}

// Collects every invariant violation seen during a run.
struct InvariantChecker {
  const dpmm::CountDataset& data;
  const dpmm::ModelConfig& config;
  std::size_t checks = 0;
  std::vector<std::string> failures;

  void fail(std::size_t it, const std::string& what) {
    if (failures.size() < 10) failures.push_back(fmt::format("iteration {}: {}", it, what));
  }

  bool on_simplex(std::span<const double> theta) const {
    double sum = 0.0;
    for (double t : theta) {
      if (!(t > 0.0) || !std::isfinite(t)) return false;
      sum += t;
    }
    return std::abs(sum - 1.0) <= 1e-12;
  }

  void check_worker(std::size_t it, const dpmm::WorkerState& w, const dpmm::GlobalState& g) {
    const std::size_t dim = data.dim();
    std::vector<std::size_t> counts(w.table.capacity(), 0);
    std::vector<dpmm::SuffStats> stats(w.table.capacity(), dpmm::SuffStats(dim, 0));
    for (std::size_t j = 0; j < w.rows.size(); ++j) {
      const std::size_t k = w.z[j];
      if (!w.table.live(k)) {
        fail(it, fmt::format("worker {} row {} points at a dead entry", w.worker_id, w.rows[j]));
        return;
      }
      ++counts[k];
      const auto x = data.row(w.rows[j]);
      for (std::size_t d = 0; d < dim; ++d) stats[k][d] += x[d];
    }
    std::size_t slots = 0;
    for (auto k : w.table.live_indices()) {
      const auto& c = w.table[k];
      if (c.count != counts[k]) fail(it, fmt::format("worker {} entry {} count drift", w.worker_id, k));
      if (c.suffstats != stats[k]) {
        fail(it, fmt::format("worker {} entry {} suffstats drift", w.worker_id, k));
      }
      if (!on_simplex(c.theta)) fail(it, fmt::format("worker {} entry {} off simplex", w.worker_id, k));
      for (std::size_t d = 0; d < dim; ++d) {
        if (c.log_theta[d] != std::log(c.theta[d])) {
          fail(it, fmt::format("worker {} entry {} stale log theta", w.worker_id, k));
          break;
        }
      }
      if (c.status == dpmm::ClusterStatus::empty) ++slots;
    }
    if (slots != config.m) {
      fail(it, fmt::format("worker {} holds {} slots, expected {}", w.worker_id, slots, config.m));
    }
    if (w.k_global != g.clusters.size()) fail(it, "worker K+ size differs from master");
    for (std::size_t k = 0; k < std::min(w.k_global, g.clusters.size()); ++k) {
      if (w.table[k].status != dpmm::ClusterStatus::global || w.table[k].id != g.clusters[k].id || w.table[k].theta != g.clusters[k].theta) {
        fail(it, fmt::format("worker {} K+ entry {} differs from master", w.worker_id, k));
      }
    }
  }

  void operator()(std::size_t it, bool synced, std::span<const dpmm::WorkerState> workers,
                  const dpmm::GlobalState& g) {
    ++checks;
    std::size_t rows = 0;
    for (const auto& w : workers) {
      check_worker(it, w, g);
      rows += w.rows.size();
    }
    if (rows != data.size()) fail(it, "shards do not cover the dataset");
    if (!synced) return;

    // Post-sync identity: master totals equal the sum of the workers' views.
    double pi_sum = 0.0;
    for (double p : g.pi) pi_sum += p;
    if (g.pi.size() != g.clusters.size() + 1 || std::abs(pi_sum - 1.0) > 1e-12) {
      fail(it, "pi is not a distribution over K+ and the remainder");
    }
    std::size_t total = 0;
    std::set<dpmm::ClusterId> ids;
    for (std::size_t k = 0; k < g.clusters.size(); ++k) {
      const auto& c = g.clusters[k];
      if (c.count == 0) fail(it, "master kept an empty cluster");
      if (!ids.insert(c.id).second) fail(it, "duplicate global id");
      std::size_t n = 0;
      dpmm::SuffStats s(data.dim(), 0);
      for (const auto& w : workers) {
        n += w.table[k].count;
        for (std::size_t d = 0; d < data.dim(); ++d) s[d] += w.table[k].suffstats[d];
      }
      if (n != c.count || s != c.suffstats) fail(it, fmt::format("cluster {} totals differ", c.id));
      total += c.count;
    }
    if (total != data.size()) fail(it, "master counts do not sum to N");
    for (const auto& w : workers) {
      if (w.table.count_with(dpmm::ClusterStatus::local) != 0) fail(it, "local features survived sync");
    }
  }
};

Outcome criterion6() {
  dpmm::SyntheticSpec spec;
  spec.seed = 6;
  const auto data = dpmm::generate_synthetic(spec);
  dpmm::ModelConfig config;
  config.n_workers = 4;
  config.total_iters = 200;
  config.accel_iters = 50;
  config.sync_interval = 10;
  config.seed = 6;
  InvariantChecker checker{data.train, config, 0, {}};
  dpmm::DistributedOptions opts;
  opts.observer = std::ref(checker);
  dpmm::DistributedSampler sampler(data.train, config, {}, opts);
  checker(0, true, sampler.workers(), sampler.global());
  while (!sampler.done()) sampler.advance();
  std::string detail = fmt::format("{} checkpoints, {} violations", checker.checks, checker.failures.size());
  for (const auto& f : checker.failures) detail += "\n      " + f;
  return {checker.failures.empty(), detail};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int run_cli(const std::string& args) {
  const std::string cmd = fmt::format("\"{}\" {} > /dev/null 2>&1", cli_path, args);
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

Outcome criterion7() {
  if (cli_path.empty()) return {false, "no CLI path given"};
  const fs::path dir = fs::temp_directory_path() / fmt::format("dpmm_acceptance_{}", ::getpid());
  fs::remove_all(dir);
  fs::create_directories(dir);
  if (run_cli(fmt::format("generate --dim 10 --train 300 --test 50 --seed 5 --out {}", dir.string())) != 0) {
    return {false, "generate failed"};
  }
  const std::string train = (dir / "train.csv").string(), test = (dir / "test.csv").string();
  bool pass = true;
  std::string detail;
  for (const std::string mode : {"collapsed", "collapsed-empirical", "uncollapsed", "accelerated"}) {
    const int workers = mode.rfind("collapsed", 0) == 0 ? 1 : 4;
    const fs::path first = dir / (mode + "_1"), second = dir / (mode + "_2");
    const int rc1 = run_cli(fmt::format(
        "run --mode {} --workers {} --train {} --test {} --iters 60 --accel-iters 20 --sync-every 5 "
        "--seed 9 --clock logical --out {}",
        mode, workers, train, test, first.string()));
    const int rc2 = run_cli(fmt::format("run --manifest {} --out {}",
                                        (first / "manifest.json").string(), second.string()));
    bool same = rc1 == 0 && rc2 == 0;
    for (const char* f : {"metrics.csv", "features.csv"}) {
      const auto a = slurp(first / f);
      same = same && !a.empty() && a == slurp(second / f);
    }
    pass = pass && same;
    detail += fmt::format("{}{} {}", detail.empty() ? "" : "; ", mode, same ? "identical" : "DIFFERENT");
  }
  fs::remove_all(dir);
  return {pass, detail};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc > 1) cli_path = argv[1];
  std::set<int> only;
  for (int i = 2; i < argc; ++i) only.insert(std::atoi(argv[i]));

  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"exact serial samplers match the enumerated partition posterior", criterion1},
      {"empirical-proposal kernel leaves the prior invariant", criterion2},
      {"single-worker exact stage matches the enumerated partition posterior", criterion3},
      {"accelerated sampler keeps up with the collapsed baseline", criterion4},
      {"final cluster count stays within a factor of two of the truth", criterion5},
      {"conservation invariants hold through a 4-worker run", criterion6},
      {"runs replayed from a manifest are bit-identical", criterion7},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i + 1);
    if (!only.empty() && !only.count(n)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    fmt::print("{} criterion {}: {} | {}\n", o.pass ? "PASS" : "FAIL", n, criteria[i].first, o.detail);
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
