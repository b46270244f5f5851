// Copyright 2026 The SCPL Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "scpl/error.hpp"
#include "scpl/gradcheck.hpp"
#include "scpl/scl_loss.hpp"

namespace scpl {
namespace {

double loss_of(const std::vector<double>& z, const std::vector<int>& labels, std::size_t d, double tau,
               SclVariant v = SclVariant::kPerAnchor) {
  Tape tape;
  return supcon_loss(tape, Tensor({labels.size(), d}, z), labels, tau, v).item();
}

TEST(PositiveMask, TwoClasses) {
  const auto m = build_positive_mask({0, 0, 1});
  const bool expected[3][3] = {{1, 1, 0}, {1, 1, 0}, {0, 0, 1}};
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      EXPECT_EQ(m.same_label[i * 3 + j], expected[i][j]);
      EXPECT_EQ(m.not_self[i * 3 + j], i != j);
    }
  EXPECT_EQ(m.positives_of(0), 1u);
  EXPECT_EQ(m.positives_of(2), 0u);
}

TEST(PositiveMask, AllEqualAndAllDistinct) {
  const auto same = build_positive_mask({4, 4, 4, 4});
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(same.positives_of(i), 3u);
  const auto distinct = build_positive_mask({0, 1, 2, 3});
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(distinct.positives_of(i), 0u);
}

TEST(PositiveMask, SingleSampleRejected) { EXPECT_THROW(build_positive_mask({1}), ShapeError); }

TEST(SupCon, TwoIdenticalSameLabelIsZero) {
  EXPECT_NEAR(loss_of({1, 2, 1, 2}, {3, 3}, 2, 0.1), 0.0, 1e-15);
}

TEST(SupCon, TwoSameLabelAnyAngleIsZero) {
  EXPECT_NEAR(loss_of({1, 0, 0.3, 0.9}, {0, 0}, 2, 0.1), 0.0, 1e-15);
  EXPECT_NEAR(loss_of({1, 0, -1, 0.1}, {0, 0}, 2, 0.5), 0.0, 1e-15);
}

TEST(SupCon, FourSampleBatchMatchesBruteForce) {
  std::mt19937_64 rng(2);
  const auto z = oracle::random_matrix(rng, 4 * 3);
  const std::vector<int> labels = {0, 0, 1, 1};
  EXPECT_NEAR(loss_of(z, labels, 3, 0.1), oracle::supcon_bruteforce(z, labels, 3, 0.1), 1e-10);
}

TEST(SupCon, NoPositivesIsAnError) {
  try {
    loss_of({1, 0, 0, 1, 1, 1}, {0, 1, 2}, 2, 0.1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "no positive pairs in batch");
  }
}

TEST(SupCon, NonPositiveTemperatureRejected) {
  EXPECT_THROW(loss_of({1, 0, 0, 1}, {0, 0}, 2, 0.0), ConfigError);
  EXPECT_THROW(loss_of({1, 0, 0, 1}, {0, 0}, 2, -1.0), ConfigError);
}

TEST(SupCon, AnchorsWithoutPositivesContributeNothing) {
  std::mt19937_64 rng(8);
  const auto z = oracle::random_matrix(rng, 5 * 4);
  const std::vector<int> labels = {0, 0, 1, 2, 3};
  EXPECT_NEAR(loss_of(z, labels, 4, 0.2), oracle::supcon_bruteforce(z, labels, 4, 0.2), 1e-10);
}

TEST(SupCon, PermutationInvariant) {
  std::mt19937_64 rng(4);
  const std::size_t b = 7, d = 3;
  const auto z = oracle::random_matrix(rng, b * d);
  const std::vector<int> labels = {0, 1, 0, 2, 1, 2, 0};
  std::vector<std::size_t> perm(b);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<double> zp(b * d);
  std::vector<int> lp(b);
  for (std::size_t i = 0; i < b; ++i) {
    lp[i] = labels[perm[i]];
    for (std::size_t k = 0; k < d; ++k) zp[i * d + k] = z[perm[i] * d + k];
  }
  EXPECT_NEAR(loss_of(z, labels, d, 0.1), loss_of(zp, lp, d, 0.1), 1e-12);
}

TEST(SupCon, ScaleInvariant) {
  std::mt19937_64 rng(6);
  auto z = oracle::random_matrix(rng, 6 * 4);
  const std::vector<int> labels = {0, 0, 1, 1, 2, 2};
  const double base = loss_of(z, labels, 4, 0.1);
  for (double& v : z) v *= 37.5;
  EXPECT_NEAR(loss_of(z, labels, 4, 0.1), base, 1e-12);
}

TEST(SupCon, PerAnchorTermsNonNegative) {
  std::mt19937_64 rng(10);
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t b = 3 + rng() % 8, d = 2 + rng() % 4;
    const auto z = oracle::random_matrix(rng, b * d);
    std::vector<int> labels(b);
    for (auto& l : labels) l = static_cast<int>(rng() % 3);
    labels[1] = labels[0];
    // Each anchor alone: keep only its own label group positive via the oracle.
    const auto zn = oracle::normalize_rows(z, b, d);
    for (std::size_t i = 0; i < b; ++i) {
      double denom = 0.0;
      for (std::size_t j = 0; j < b; ++j)
        if (j != i) denom += std::exp(oracle::dot(zn, i, j, d) / 0.1);
      for (std::size_t p = 0; p < b; ++p)
        if (p != i && labels[p] == labels[i]) EXPECT_GE(-std::log(std::exp(oracle::dot(zn, i, p, d) / 0.1) / denom), 0.0);
    }
    EXPECT_GE(loss_of(z, labels, d, 0.1), 0.0);
  }
}

TEST(SupCon, StableForLargeLogits) {
  // 1/tau = 10^4 puts logits near 10^4 in magnitude.
  std::mt19937_64 rng(12);
  const auto z = oracle::random_matrix(rng, 6 * 3);
  const double v = loss_of(z, {0, 0, 1, 1, 2, 2}, 3, 1e-4);
  EXPECT_TRUE(std::isfinite(v));
}

TEST(SupCon, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(13);
  for (int rep = 0; rep < 30; ++rep) {
    const std::size_t b = 2 + rng() % 15, d = 1 + rng() % 8;
    std::vector<int> labels(b);
    for (auto& l : labels) l = static_cast<int>(rng() % 3);
    labels[1] = labels[0];
    const Tensor z({b, d}, oracle::random_matrix(rng, b * d, 0.2, 1.0));
    const double err = finite_diff_check(
        [&](Tape& t, const Tensor& x) { return supcon_loss(t, x, labels, 0.1); }, z, 1e-5);
    EXPECT_LT(err, 1e-4);
  }
}

TEST(GlobalMaskSumVariant, TwoIdenticalUsesGlobalDivisor) {
  // mask.sum() = 4 for two same-label rows; both terms are log(1) = 0.
  EXPECT_NEAR(loss_of({1, 0, 1, 0}, {0, 0}, 2, 0.1, SclVariant::kGlobalMaskSum), 0.0, 1e-15);
  EXPECT_NEAR(oracle::supcon_mask_sum_trace({1, 0, 1, 0}, {0, 0}, 2, 0.1), 0.0, 1e-15);
  EXPECT_EQ(build_positive_mask({0, 0}).same_label_total(), 4u);
}

TEST(GlobalMaskSumVariant, MatchesLiteralTrace) {
  std::mt19937_64 rng(14);
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t b = 2 + rng() % 15, d = 1 + rng() % 8;
    std::vector<int> labels(b);
    for (auto& l : labels) l = static_cast<int>(rng() % 4);
    labels[1] = labels[0];
    const auto z = oracle::random_matrix(rng, b * d);
    Tape tape;
    const double got = supcon_loss_global_mask_sum(tape, Tensor({b, d}, z), labels, 0.1).item();
    EXPECT_NEAR(got, oracle::supcon_mask_sum_trace(z, labels, d, 0.1), 1e-10);
  }
}

TEST(GlobalMaskSumVariant, DiffersFromPerAnchorForm) {
  std::mt19937_64 rng(15);
  const auto z = oracle::random_matrix(rng, 4 * 3);
  const std::vector<int> labels = {0, 0, 0, 1};
  const double a = loss_of(z, labels, 3, 0.1, SclVariant::kPerAnchor);
  const double b = loss_of(z, labels, 3, 0.1, SclVariant::kGlobalMaskSum);
  EXPECT_GT(std::abs(a - b), 1e-6);
}

TEST(GlobalMaskSumVariant, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(16);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t b = 2 + rng() % 10, d = 2 + rng() % 5;
    std::vector<int> labels(b);
    for (auto& l : labels) l = static_cast<int>(rng() % 2);
    labels[1] = labels[0];
    const Tensor z({b, d}, oracle::random_matrix(rng, b * d, 0.2, 1.0));
    EXPECT_LT(finite_diff_check([&](Tape& t, const Tensor& x) { return supcon_loss_global_mask_sum(t, x, labels, 0.1); },
                                z, 1e-5),
              1e-4);
  }
}

TEST(CrossEntropy, MatchesOracleAndIsSummed) {
  std::mt19937_64 rng(17);
  const auto logits = oracle::random_matrix(rng, 5 * 4, -3, 3);
  const std::vector<int> labels = {0, 3, 2, 2, 1};
  Tape tape;
  const double got = cross_entropy(tape, Tensor({5, 4}, logits), labels).item();
  EXPECT_NEAR(got, oracle::cross_entropy(logits, labels, 4), 1e-12);
}

TEST(CrossEntropy, LabelOutOfRangeThrows) {
  Tape tape;
  EXPECT_THROW(cross_entropy(tape, Tensor::zeros({2, 3}), {0, 3}), ShapeError);
}

}  // namespace
}  // namespace scpl
