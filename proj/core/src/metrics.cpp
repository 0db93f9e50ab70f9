#include "dpmm/metrics.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "dpmm/numeric.hpp"

namespace dpmm {

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_real(const std::string& s, std::size_t line_no) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    // stod rejects "nan"/"inf" spellings from some writers; accept ours.
    if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw InputError(fmt::format("line {}: bad number '{}'", line_no, s));
  }
}

std::uint64_t parse_uint(const std::string& s, std::size_t line_no) {
  try {
    std::size_t used = 0;
    const auto v = std::stoull(s, &used);
    if (used != s.size() || s.front() == '-') throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw InputError(fmt::format("line {}: bad integer '{}'", line_no, s));
  }
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  return out;
}

}  // namespace

const char* to_string(Stage s) {
  switch (s) {
    case Stage::accelerated: return "accelerated";
    case Stage::exact: return "exact";
    case Stage::serial: return "serial";
  }
  return "?";
}

Stage stage_from_string(const std::string& s) {
  if (s == "accelerated") return Stage::accelerated;
  if (s == "exact") return Stage::exact;
  if (s == "serial") return Stage::serial;
  throw InputError("unknown stage '" + s + "'");
}

double RunClock::seconds(std::size_t iteration) const {
  if (kind_ == Kind::logical) return static_cast<double>(iteration);
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
}

double predictive_log_likelihood(const CountDataset& test, std::span<const Cluster> clusters,
                                 double alpha, double gamma) {
  double n_total = 0.0;
  for (const Cluster& c : clusters) n_total += static_cast<double>(c.count);
  if (n_total <= 0.0) throw InputError("predictive_log_likelihood: model has no occupied cluster");
  if (alpha < 0.0) throw InputError("predictive_log_likelihood: alpha must be >= 0");

  const double log_norm = std::log(n_total + alpha);
  const SuffStats zero(test.dim(), 0);
  std::vector<double> terms;
  terms.reserve(clusters.size() + 1);
  double total = 0.0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto x = test.row(i);
    terms.clear();
    for (const Cluster& c : clusters) {
      if (c.count == 0) continue;
      if (c.theta.size() != x.size()) throw InputError("predictive_log_likelihood: dimension mismatch");
      terms.push_back(std::log(static_cast<double>(c.count)) - log_norm + log_likelihood(x, c.theta));
    }
    if (alpha > 0.0) {
      terms.push_back(std::log(alpha) - log_norm + log_marginal_likelihood(x, zero, gamma));
    }
    total += log_sum_exp(terms);
  }
  return total;
}

double predictive_log_likelihood(const CountDataset& test, const GlobalState& global,
                                 const ModelConfig& config) {
  return predictive_log_likelihood(test, global.clusters, global.alpha, config.gamma);
}

std::vector<std::pair<ClusterId, std::size_t>> feature_popularity(std::span<const Cluster> clusters) {
  std::vector<std::pair<ClusterId, std::size_t>> out;
  out.reserve(clusters.size());
  for (const Cluster& c : clusters) out.emplace_back(c.id, c.count);
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  return out;
}

std::vector<std::pair<ClusterId, std::size_t>> feature_popularity(const GlobalState& global) {
  return feature_popularity(global.clusters);
}

void write_trace(std::ostream& out, std::span<const MetricsRecord> records) {
  for (std::size_t i = 1; i < records.size(); ++i) {
    if (records[i].wall_seconds < records[i - 1].wall_seconds) {
      throw InputError(fmt::format("trace record {} goes back in time", i));
    }
  }
  out << "iteration,wall_seconds,test_pred_ll,k_plus,stage\n";
  for (const auto& r : records) {
    out << fmt::format("{},{:.17g},{:.17g},{},{}\n", r.iteration, r.wall_seconds, r.test_pred_ll,
                       r.k_plus, to_string(r.stage));
  }
}

void emit_trace(std::span<const MetricsRecord> records, const std::filesystem::path& path) {
  std::ostringstream buf;
  write_trace(buf, records);
  auto out = open_out(path);
  out << buf.str();
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

MetricsTrace read_trace(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  MetricsTrace out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 || line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != 5) throw InputError(fmt::format("line {}: expected 5 fields", line_no));
    MetricsRecord r;
    r.iteration = parse_uint(cells[0], line_no);
    r.wall_seconds = parse_real(cells[1], line_no);
    r.test_pred_ll = parse_real(cells[2], line_no);
    r.k_plus = parse_uint(cells[3], line_no);
    r.stage = stage_from_string(cells[4]);
    out.push_back(r);
  }
  return out;
}

void write_popularity(const std::filesystem::path& path,
                      std::span<const std::pair<ClusterId, std::size_t>> popularity) {
  auto out = open_out(path);
  out << "cluster_id,count\n";
  for (const auto& [id, count] : popularity) out << id << ',' << count << '\n';
}

void write_features(const std::filesystem::path& path, std::span<const Cluster> clusters) {
  auto out = open_out(path);
  const std::size_t dim = clusters.empty() ? 0 : clusters.front().theta.size();
  out << "cluster_id,count";
  for (std::size_t d = 0; d < dim; ++d) out << ",theta_" << d;
  out << '\n';
  for (const Cluster& c : clusters) {
    out << c.id << ',' << c.count;
    for (double t : c.theta) out << fmt::format(",{:.17g}", t);
    out << '\n';
  }
}

std::vector<Cluster> read_features(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  std::vector<Cluster> out;
  std::string line;
  std::size_t line_no = 0;
  std::size_t dim = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (line_no == 1) {
      if (cells.size() < 2 || cells[0] != "cluster_id") {
        throw InputError("features file: missing header");
      }
      dim = cells.size() - 2;
      continue;
    }
    if (cells.size() != dim + 2) throw InputError(fmt::format("line {}: wrong field count", line_no));
    Theta theta(dim);
    for (std::size_t d = 0; d < dim; ++d) theta[d] = parse_real(cells[d + 2], line_no);
    Cluster c(parse_uint(cells[0], line_no), ClusterStatus::global, std::move(theta));
    c.count = parse_uint(cells[1], line_no);
    out.push_back(std::move(c));
  }
  if (out.empty()) throw InputError("features file has no clusters: " + path.string());
  return out;
}

}  // namespace dpmm
