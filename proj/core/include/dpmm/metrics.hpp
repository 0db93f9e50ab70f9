#pragma once

#include <chrono>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dpmm/model.hpp"

namespace dpmm {

enum class Stage { accelerated, exact, serial };

const char* to_string(Stage s);
Stage stage_from_string(const std::string& s);

struct MetricsRecord {
  std::size_t iteration = 0;
  double wall_seconds = 0.0;
  double test_pred_ll = 0.0;
  std::size_t k_plus = 0;
  Stage stage = Stage::serial;

  friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

using MetricsTrace = std::vector<MetricsRecord>;

// Time source for traces. `wall` measures seconds since construction;
// `logical` reports the iteration number, which makes traces reproducible.
class RunClock {
 public:
  enum class Kind { wall, logical };

  explicit RunClock(Kind kind = Kind::wall)
      : kind_(kind), start_(std::chrono::steady_clock::now()) {}

  Kind kind() const { return kind_; }
  double seconds(std::size_t iteration) const;

 private:
  Kind kind_;
  std::chrono::steady_clock::time_point start_;
};

// Sum over test rows of log[ sum_k n_k/(N+alpha) f(x|theta_k)
//                            + alpha/(N+alpha) p(x | prior predictive) ].
// Clusters with n_k = 0 are ignored. Throws InputError when no cluster is
// occupied.
double predictive_log_likelihood(const CountDataset& test, std::span<const Cluster> clusters,
                                 double alpha, double gamma);

double predictive_log_likelihood(const CountDataset& test, const GlobalState& global,
                                 const ModelConfig& config);

// (cluster id, count) sorted by count descending, ties by id ascending.
std::vector<std::pair<ClusterId, std::size_t>> feature_popularity(std::span<const Cluster> clusters);
std::vector<std::pair<ClusterId, std::size_t>> feature_popularity(const GlobalState& global);

// CSV header: iteration,wall_seconds,test_pred_ll,k_plus,stage. Reals use 17
// significant digits. Throws InputError when wall_seconds decreases.
void write_trace(std::ostream& out, std::span<const MetricsRecord> records);
void emit_trace(std::span<const MetricsRecord> records, const std::filesystem::path& path);
MetricsTrace read_trace(const std::filesystem::path& path);

void write_popularity(const std::filesystem::path& path,
                      std::span<const std::pair<ClusterId, std::size_t>> popularity);

// features.csv: cluster_id,count,theta_0..theta_{D-1}
void write_features(const std::filesystem::path& path, std::span<const Cluster> clusters);
std::vector<Cluster> read_features(const std::filesystem::path& path);

}  // namespace dpmm
