#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "dpmm/model.hpp"

namespace dpmm {

struct SyntheticSpec {
  std::size_t dim = 10;
  std::size_t n_train = 1000;
  std::size_t n_test = 100;
  double alpha = 1.0;
  double gamma = 1.0;
  std::uint32_t trials_per_obs = 100;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticTruth {
  // Cluster of every observation, train rows first, then test rows.
  std::vector<std::size_t> assignments;
  std::vector<Theta> thetas;

  std::size_t num_clusters() const { return thetas.size(); }
};

struct SyntheticData {
  CountDataset train;
  CountDataset test;
  SyntheticTruth truth;
};

// Draws n_train + n_test observations from the DPMM prior: a sequential
// Chinese restaurant partition, theta_k ~ Dirichlet(gamma), and
// x ~ Multinomial(trials_per_obs, theta_{z}).
SyntheticData generate_synthetic(const SyntheticSpec& spec);

enum class CountFormat { csv, dense_binary, detect };

// CSV: comma-separated non-negative integers, lines starting with '#' are
// skipped. Dense binary: "DPMM", u32 version 1, u64 N, u64 D, N*D u32 counts,
// all little-endian. `detect` looks for the binary magic.
CountDataset load_counts(const std::filesystem::path& path, CountFormat format = CountFormat::detect);

void write_csv(const std::filesystem::path& path, const CountDataset& data);
void write_dense_binary(const std::filesystem::path& path, const CountDataset& data);

// truth.csv: observation_id,cluster_id,split over train then test rows.
void write_truth(const std::filesystem::path& path, const SyntheticTruth& truth, std::size_t n_train);

}  // namespace dpmm
