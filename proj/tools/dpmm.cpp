// dpmm: generate synthetic count data, fit DP mixtures of multinomials and
// evaluate saved models.

#include <CLI11.hpp>
#include <fmt/format.h>
#include <fmt/ostream.h>
#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <string>

#include "dpmm/data_io.hpp"
#include "dpmm/distributed.hpp"
#include "dpmm/metrics.hpp"
#include "dpmm/model.hpp"
#include "dpmm/serial.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr int kOk = 0;
constexpr int kRuntimeError = 1;
constexpr int kUsageError = 2;

// Bad flag values; reported like parse errors.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Mode { collapsed, collapsed_empirical, uncollapsed, accelerated };

const std::map<std::string, Mode> kModes = {
    {"collapsed", Mode::collapsed},
    {"collapsed-empirical", Mode::collapsed_empirical},
    {"uncollapsed", Mode::uncollapsed},
    {"accelerated", Mode::accelerated},
};

const std::map<std::string, dpmm::InitOptions::Kind> kInits = {
    {"single", dpmm::InitOptions::Kind::single},
    {"random", dpmm::InitOptions::Kind::random},
    {"kmeans", dpmm::InitOptions::Kind::kmeans},
};

const std::map<std::string, dpmm::RunClock::Kind> kClocks = {
    {"wall", dpmm::RunClock::Kind::wall},
    {"logical", dpmm::RunClock::Kind::logical},
};

template <class Map>
std::string name_of(const Map& map, typename Map::mapped_type value) {
  for (const auto& [k, v] : map) {
    if (v == value) return k;
  }
  return "?";
}

template <class Map>
typename Map::mapped_type lookup(const Map& map, const std::string& key, const char* what) {
  auto it = map.find(key);
  if (it == map.end()) throw UsageError(fmt::format("unknown {} '{}'", what, key));
  return it->second;
}

struct RunSettings {
  Mode mode = Mode::accelerated;
  std::string train;
  std::string test;
  std::string out = ".";
  dpmm::ModelConfig config;
  double max_seconds = std::numeric_limits<double>::infinity();
  dpmm::InitOptions init;
  dpmm::RunClock::Kind clock = dpmm::RunClock::Kind::wall;
};

json config_json(const RunSettings& s) {
  const auto& c = s.config;
  json j;
  j["mode"] = name_of(kModes, s.mode);
  j["train"] = s.train;
  j["test"] = s.test;
  j["workers"] = c.n_workers;
  j["iters"] = c.total_iters;
  j["accel_iters"] = c.accel_iters;
  j["sync_every"] = c.sync_interval;
  j["m"] = c.m;
  j["rho"] = c.rho;
  j["alpha"] = c.alpha;
  j["gamma"] = c.gamma;
  j["eps"] = c.smoothing_eps;
  j["resample_alpha"] = c.resample_alpha;
  j["alpha_prior_shape"] = c.alpha_prior_shape;
  j["alpha_prior_rate"] = c.alpha_prior_rate;
  // JSON has no infinity; null means uncapped.
  j["max_seconds"] = std::isfinite(s.max_seconds) ? json(s.max_seconds) : json(nullptr);
  j["seed"] = c.seed;
  j["init"] = name_of(kInits, s.init.kind);
  j["init_k"] = s.init.clusters;
  j["clock"] = name_of(kClocks, s.clock);
  return j;
}

RunSettings settings_from_json(const json& j) {
  RunSettings s;
  auto& c = s.config;
  s.mode = lookup(kModes, j.at("mode").get<std::string>(), "mode");
  s.train = j.at("train").get<std::string>();
  s.test = j.value("test", std::string());
  c.n_workers = j.at("workers").get<std::size_t>();
  c.total_iters = j.at("iters").get<std::size_t>();
  c.accel_iters = j.at("accel_iters").get<std::size_t>();
  c.sync_interval = j.at("sync_every").get<std::size_t>();
  c.m = j.at("m").get<std::size_t>();
  c.rho = j.at("rho").get<double>();
  c.alpha = j.at("alpha").get<double>();
  c.gamma = j.at("gamma").get<double>();
  c.smoothing_eps = j.at("eps").get<double>();
  c.resample_alpha = j.at("resample_alpha").get<bool>();
  c.alpha_prior_shape = j.at("alpha_prior_shape").get<double>();
  c.alpha_prior_rate = j.at("alpha_prior_rate").get<double>();
  if (!j.at("max_seconds").is_null()) s.max_seconds = j.at("max_seconds").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  s.init.kind = lookup(kInits, j.at("init").get<std::string>(), "init");
  s.init.clusters = j.at("init_k").get<std::size_t>();
  s.clock = lookup(kClocks, j.at("clock").get<std::string>(), "clock");
  return s;
}

std::string run_id(const json& config) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char ch : config.dump()) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return fmt::format("{:016x}", h);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out.flush()) throw std::runtime_error("write failed for " + path.string());
}

void write_assignments(const fs::path& path, std::span<const dpmm::ClusterId> ids) {
  std::string text = "observation_id,cluster_id\n";
  for (std::size_t i = 0; i < ids.size(); ++i) text += fmt::format("{},{}\n", i, ids[i]);
  write_text(path, text);
}

void validate_settings(RunSettings& s) {
  if (s.train.empty()) throw UsageError("--train is required");
  if (s.max_seconds <= 0.0) throw UsageError("--max-seconds must be > 0");
  if (s.init.clusters == 0) throw UsageError("--init-k must be >= 1");
  const bool serial = s.mode == Mode::collapsed || s.mode == Mode::collapsed_empirical;
  if (serial && s.config.n_workers != 1) throw UsageError("collapsed modes run on a single worker");
  if (s.mode == Mode::uncollapsed) s.config.accel_iters = 0;
  try {
    s.config.validate();
  } catch (const dpmm::InputError& e) {
    throw UsageError(e.what());
  }
}

int cmd_run(RunSettings s, const std::string& manifest_in) {
  if (!manifest_in.empty()) {
    std::ifstream in(manifest_in);
    if (!in) throw dpmm::InputError("cannot open manifest " + manifest_in);
    const json manifest = json::parse(in);
    const std::string out = s.out;
    s = settings_from_json(manifest.at("config"));
    s.out = out;
  }
  validate_settings(s);

  const dpmm::CountDataset train = dpmm::load_counts(s.train);
  std::optional<dpmm::CountDataset> test;
  if (!s.test.empty()) test = dpmm::load_counts(s.test);
  fs::create_directories(s.out);
  const fs::path out(s.out);

  dpmm::RunOptions options;
  options.test = test ? &*test : nullptr;
  options.clock = s.clock;
  options.max_seconds = s.max_seconds;
  options.init = s.init;

  dpmm::MetricsTrace trace;
  std::vector<dpmm::Cluster> clusters;
  std::vector<dpmm::ClusterId> assignments;
  dpmm::KernelStats stats;
  std::size_t iterations = 0;
  double final_alpha = s.config.alpha;

  if (s.mode == Mode::collapsed || s.mode == Mode::collapsed_empirical) {
    const auto mode = s.mode == Mode::collapsed ? dpmm::RefreshMode::prior
                                                : dpmm::RefreshMode::empirical_exact;
    auto result = dpmm::run_serial(train, s.config, mode, options);
    trace = std::move(result.trace);
    clusters = result.state.occupied();
    for (auto k : result.state.z) assignments.push_back(result.state.table[k].id);
    stats = result.stats;
    iterations = result.iterations;
  } else {
    auto result = dpmm::run_distributed(train, s.config, options);
    trace = std::move(result.trace);
    clusters = result.global.clusters;
    assignments = std::move(result.assignments);
    stats = result.stats;
    iterations = result.iterations;
    final_alpha = result.global.alpha;
  }

  dpmm::emit_trace(trace, out / "metrics.csv");
  dpmm::write_popularity(out / "popularity.csv", dpmm::feature_popularity(clusters));
  dpmm::write_features(out / "features.csv", clusters);
  write_assignments(out / "assignments.csv", assignments);

  json manifest;
  manifest["config"] = config_json(s);
  manifest["run_id"] = run_id(manifest["config"]);
  manifest["output_dir"] = s.out;
  json results;
  results["iterations"] = iterations;
  results["final_alpha"] = final_alpha;
  results["k_plus"] = clusters.size();
  results["final_test_pred_ll"] =
      trace.empty() || !test ? json(nullptr) : json(trace.back().test_pred_ll);
  results["mh_steps"] = stats.mh_steps;
  results["mh_accepted"] = stats.mh_accepted;
  results["numerical_incidents"] = stats.incidents;
  results["clamped_likelihoods"] = stats.clamped;
  manifest["results"] = results;
  write_text(out / "manifest.json", manifest.dump(2) + "\n");

  fmt::print("run {} finished: {} iterations, {} clusters\n", manifest["run_id"].get<std::string>(),
             iterations, clusters.size());
  return kOk;
}

int cmd_generate(const dpmm::SyntheticSpec& spec, const std::string& out_dir, bool binary) {
  try {
    spec.validate();
  } catch (const dpmm::InputError& e) {
    throw UsageError(e.what());
  }
  const auto data = dpmm::generate_synthetic(spec);
  fs::create_directories(out_dir);
  const fs::path out(out_dir);
  if (binary) {
    dpmm::write_dense_binary(out / "train.bin", data.train);
    if (spec.n_test > 0) dpmm::write_dense_binary(out / "test.bin", data.test);
  } else {
    dpmm::write_csv(out / "train.csv", data.train);
    if (spec.n_test > 0) dpmm::write_csv(out / "test.csv", data.test);
  }
  dpmm::write_truth(out / "truth.csv", data.truth, spec.n_train);
  fmt::print("generated {} train / {} test rows, {} true clusters\n", spec.n_train, spec.n_test,
             data.truth.num_clusters());
  return kOk;
}

std::vector<std::pair<dpmm::ClusterId, std::size_t>> read_popularity(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw dpmm::InputError("cannot open " + path.string());
  std::vector<std::pair<dpmm::ClusterId, std::size_t>> out;
  std::string line;
  std::getline(in, line);
  if (line.rfind("cluster_id,count", 0) != 0) throw dpmm::InputError("popularity file: missing header");
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto comma = line.find(',');
    try {
      std::size_t used = 0;
      const auto id = std::stoull(line.substr(0, comma), &used);
      const auto count = std::stoull(line.substr(comma + 1));
      if (comma == std::string::npos || used != comma) throw std::invalid_argument("layout");
      out.emplace_back(id, count);
    } catch (const std::logic_error&) {
      throw dpmm::InputError(fmt::format("{}: line {}: malformed", path.string(), line_no));
    }
  }
  return out;
}

int cmd_eval(const std::string& features, const std::string& counts, const std::string& test_path,
             double alpha, double gamma) {
  if (alpha < 0.0) throw UsageError("--alpha must be >= 0");
  if (!(gamma > 0.0)) throw UsageError("--gamma must be > 0");
  auto clusters = dpmm::read_features(features);
  if (!counts.empty()) {
    std::map<dpmm::ClusterId, std::size_t> by_id;
    for (auto [id, n] : read_popularity(counts)) by_id[id] = n;
    for (auto& c : clusters) {
      auto it = by_id.find(c.id);
      if (it == by_id.end()) {
        throw dpmm::InputError(fmt::format("cluster {} missing from {}", c.id, counts));
      }
      c.count = it->second;
    }
  }
  const auto test = dpmm::load_counts(test_path);
  fmt::print("{:.17g}\n", dpmm::predictive_log_likelihood(test, clusters, alpha, gamma));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dirichlet process mixtures of multinomials"};
  app.require_subcommand(1);

  dpmm::SyntheticSpec spec;
  std::string gen_out = ".";
  bool gen_binary = false;
  auto* gen = app.add_subcommand("generate", "Draw a synthetic dataset from the DPMM prior");
  gen->add_option("--dim", spec.dim, "Dimensions")->capture_default_str();
  gen->add_option("--train", spec.n_train, "Training observations")->capture_default_str();
  gen->add_option("--test", spec.n_test, "Test observations")->capture_default_str();
  gen->add_option("--alpha", spec.alpha, "Concentration")->capture_default_str();
  gen->add_option("--gamma", spec.gamma, "Dirichlet base parameter")->capture_default_str();
  gen->add_option("--trials", spec.trials_per_obs, "Total count per observation")->capture_default_str();
  gen->add_option("--seed", spec.seed, "Random seed")->capture_default_str();
  gen->add_option("--out", gen_out, "Output directory")->capture_default_str();
  gen->add_flag("--binary", gen_binary, "Write dense binary instead of CSV");

  RunSettings run;
  std::string mode = "accelerated", init = "single", clock = "wall", manifest;
  bool fixed_alpha = false;
  auto* run_cmd = app.add_subcommand("run", "Fit a model");
  run_cmd->add_option("--mode", mode, "collapsed | collapsed-empirical | uncollapsed | accelerated")
      ->capture_default_str();
  run_cmd->add_option("--train", run.train, "Training counts (CSV or dense binary)");
  run_cmd->add_option("--test", run.test, "Held-out counts");
  run_cmd->add_option("--workers", run.config.n_workers, "Workers")->capture_default_str();
  run_cmd->add_option("--iters", run.config.total_iters, "Total iterations")->capture_default_str();
  run_cmd->add_option("--accel-iters", run.config.accel_iters, "Acceleration-stage iterations")
      ->capture_default_str();
  run_cmd->add_option("--sync-every", run.config.sync_interval, "Iterations between syncs")
      ->capture_default_str();
  run_cmd->add_option("--m", run.config.m, "Auxiliary slots")->capture_default_str();
  run_cmd->add_option("--rho", run.config.rho, "Empirical branch probability")->capture_default_str();
  run_cmd->add_option("--alpha", run.config.alpha, "Concentration")->capture_default_str();
  run_cmd->add_option("--gamma", run.config.gamma, "Dirichlet base parameter")->capture_default_str();
  run_cmd->add_option("--eps", run.config.smoothing_eps, "Data-point smoothing")->capture_default_str();
  run_cmd->add_flag("--fixed-alpha", fixed_alpha, "Do not resample alpha at syncs");
  run_cmd->add_option("--max-seconds", run.max_seconds, "Time cap, checked at iteration boundaries");
  run_cmd->add_option("--seed", run.config.seed, "Random seed")->capture_default_str();
  run_cmd->add_option("--init", init, "single | random | kmeans")->capture_default_str();
  run_cmd->add_option("--init-k", run.init.clusters, "Initial clusters for random/kmeans")
      ->capture_default_str();
  run_cmd->add_option("--clock", clock, "wall | logical (seconds = iterations)")->capture_default_str();
  run_cmd->add_option("--out", run.out, "Output directory")->capture_default_str();
  auto* manifest_opt =
      run_cmd->add_option("--manifest", manifest, "Replay the configuration of a manifest.json");

  std::string features, counts, eval_test;
  double eval_alpha = 1.0, eval_gamma = 1.0;
  auto* eval = app.add_subcommand("eval", "Predictive log likelihood of a saved model");
  eval->add_option("--features", features, "features.csv")->required();
  eval->add_option("--counts", counts, "popularity.csv overriding the feature counts");
  eval->add_option("--test", eval_test, "Held-out counts")->required();
  eval->add_option("--alpha", eval_alpha, "Concentration")->capture_default_str();
  eval->add_option("--gamma", eval_gamma, "Dirichlet base parameter")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsageError;
  }

  try {
    if (gen->parsed()) return cmd_generate(spec, gen_out, gen_binary);
    if (run_cmd->parsed()) {
      if (manifest_opt->count() > 0) {
        for (const auto* opt : run_cmd->get_options()) {
          if (opt != manifest_opt && opt->count() > 0 && opt->get_name() != "--out") {
            throw UsageError("--manifest cannot be combined with " + opt->get_name());
          }
        }
      } else {
        run.mode = lookup(kModes, mode, "mode");
        run.init.kind = lookup(kInits, init, "init");
        run.clock = lookup(kClocks, clock, "clock");
        run.config.resample_alpha = !fixed_alpha;
      }
      return cmd_run(run, manifest);
    }
    return cmd_eval(features, counts, eval_test, eval_alpha, eval_gamma);
  } catch (const UsageError& e) {
    fmt::print(std::cerr, "usage error: {}\n", e.what());
    return kUsageError;
  } catch (const std::exception& e) {
    fmt::print(std::cerr, "error: {}\n", e.what());
    return kRuntimeError;
  }
}
