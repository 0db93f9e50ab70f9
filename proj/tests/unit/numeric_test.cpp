#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "dpmm/numeric.hpp"

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

TEST(LogSumExp, MatchesDirectSum) {
  std::vector<double> v{std::log(1.0), std::log(2.0), std::log(3.0)};
  EXPECT_NEAR(dpmm::log_sum_exp(v), std::log(6.0), 1e-14);
}

TEST(LogSumExp, SurvivesLargeMagnitudes) {
  std::vector<double> v{-1000.0, -1000.0};
  EXPECT_NEAR(dpmm::log_sum_exp(v), -1000.0 + std::log(2.0), 1e-12);
  std::vector<double> w{800.0, 800.0};
  EXPECT_NEAR(dpmm::log_sum_exp(w), 800.0 + std::log(2.0), 1e-12);
}

TEST(LogSumExp, EmptyAndAllNegativeInfinity) {
  EXPECT_EQ(dpmm::log_sum_exp(std::vector<double>{}), -kInf);
  EXPECT_EQ(dpmm::log_sum_exp(std::vector<double>{-kInf, -kInf}), -kInf);
}

TEST(NormalizeLogWeights, SumsToOne) {
  std::vector<double> v{-1.0, -1.0, -1.0 + std::log(2.0), -kInf};
  dpmm::normalize_log_weights(v);
  EXPECT_NEAR(v[0], 0.25, 1e-15);
  EXPECT_NEAR(v[2], 0.5, 1e-15);
  EXPECT_EQ(v[3], 0.0);
  EXPECT_NEAR(std::accumulate(v.begin(), v.end(), 0.0), 1.0, 1e-15);
}

TEST(SampleLogCategorical, NeverPicksNegativeInfinity) {
  auto rng = dpmm::make_stream(1, 0);
  std::vector<double> v{-kInf, 0.0, -kInf};
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(dpmm::sample_log_categorical(v, rng), 1u);
}

TEST(SampleLogCategorical, FrequenciesFollowWeights) {
  auto rng = dpmm::make_stream(2, 0);
  std::vector<double> v{std::log(1.0), std::log(3.0)};
  const int n = 100000;
  int ones = 0;
  for (int i = 0; i < n; ++i) ones += dpmm::sample_log_categorical(v, rng) == 1 ? 1 : 0;
  EXPECT_NEAR(ones / double(n), 0.75, 0.01);
}

TEST(SampleLogCategorical, RejectsDegenerateInput) {
  auto rng = dpmm::make_stream(3, 0);
  EXPECT_THROW(dpmm::sample_log_categorical(std::vector<double>{}, rng), std::invalid_argument);
  EXPECT_THROW(dpmm::sample_log_categorical(std::vector<double>{-kInf}, rng), std::domain_error);
}

TEST(MakeStream, DeterministicAndDistinct) {
  auto a = dpmm::make_stream(7, 1, 2);
  auto b = dpmm::make_stream(7, 1, 2);
  auto c = dpmm::make_stream(7, 2, 2);
  auto d = dpmm::make_stream(7, 1, 3);
  const auto va = a(), vb = b(), vc = c(), vd = d();
  EXPECT_EQ(va, vb);
  EXPECT_NE(va, vc);
  EXPECT_NE(va, vd);
}

TEST(SampleDirichlet, MeanMatchesParameters) {
  auto rng = dpmm::make_stream(4, 0);
  std::vector<double> params{8.0, 2.0, 1.0};
  std::vector<double> mean(3, 0.0);
  const int n = 50000;
  for (int i = 0; i < n; ++i) {
    auto p = dpmm::sample_dirichlet(params, rng);
    EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-12);
    for (int k = 0; k < 3; ++k) mean[k] += p[k] / n;
  }
  EXPECT_NEAR(mean[0], 8.0 / 11.0, 0.005);
  EXPECT_NEAR(mean[1], 2.0 / 11.0, 0.005);
  EXPECT_NEAR(mean[2], 1.0 / 11.0, 0.005);
}

TEST(SampleDirichlet, TinyShapesStayPositive) {
  auto rng = dpmm::make_stream(5, 0);
  std::vector<double> params(5, 1e-3);
  for (int i = 0; i < 1000; ++i) {
    auto p = dpmm::sample_dirichlet(params, rng);
    double total = 0.0;
    for (double x : p) {
      EXPECT_GT(x, 0.0);
      total += x;
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
  }
}

TEST(SampleGammaBeta, Moments) {
  auto rng = dpmm::make_stream(6, 0);
  const int n = 100000;
  double g = 0.0, b = 0.0;
  for (int i = 0; i < n; ++i) {
    g += dpmm::sample_gamma(3.0, 2.0, rng) / n;
    b += dpmm::sample_beta(2.0, 6.0, rng) / n;
  }
  EXPECT_NEAR(g, 1.5, 0.02);
  EXPECT_NEAR(b, 0.25, 0.005);
}

}  // namespace
