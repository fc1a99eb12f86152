#include <doctest.h>

#include <stdexcept>

#include <limits>

#include "oracles.hpp"
#include "sp/hungarian.hpp"
#include "sp/rng.hpp"

using sp::Tensor;

TEST_CASE("match_hungarian: 2x2 permutation enumeration") {
  const Tensor cost = Tensor::from_data({2, 2}, {1, 2, 2, 1});
  const auto result = sp::match_hungarian(cost);
  REQUIRE(result.pairs.size() == 2);
  CHECK(result.pairs[0] == std::pair<int, int>{0, 0});
  CHECK(result.pairs[1] == std::pair<int, int>{1, 1});
  CHECK(result.total_cost == doctest::Approx(2.0));
  CHECK(result.unmatched_kernels.empty());
}

TEST_CASE("match_hungarian: diagonal-dominant identity assignment") {
  Tensor cost({5, 5});
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j) cost(i, j) = i == j ? 0.0 : 1.0;
  const auto result = sp::match_hungarian(cost);
  CHECK(result.total_cost == doctest::Approx(0.0));
  for (int i = 0; i < 5; ++i) CHECK(result.pairs[i] == std::pair<int, int>{i, i});
}

TEST_CASE("match_hungarian: rectangular 6x4 equals brute force") {
  sp::SplitMix64 rng(55);
  Tensor cost({6, 4});
  for (auto& v : cost.values()) v = rng.next_in(-3, 3);
  const auto result = sp::match_hungarian(cost);
  REQUIRE(result.pairs.size() == 4);
  CHECK(result.unmatched_kernels.size() == 2);
  CHECK(result.total_cost ==
        doctest::Approx(oracle::brute_force_min_assignment(cost)).epsilon(1e-12));
}

TEST_CASE("match_hungarian: exhaustive-oracle sweep over all sizes <= 7") {
  sp::SplitMix64 rng(56);
  for (int n = 1; n <= 7; ++n)
    for (int l = 1; l <= 7; ++l)
      for (int trial = 0; trial < 2; ++trial) {
        Tensor cost({static_cast<std::size_t>(n), static_cast<std::size_t>(l)});
        for (auto& v : cost.values()) v = rng.next_in(-10, 10);
        const auto result = sp::match_hungarian(cost);
        CHECK(result.pairs.size() == static_cast<std::size_t>(std::min(n, l)));
        CHECK(result.total_cost ==
              doctest::Approx(oracle::brute_force_min_assignment(cost))
                  .epsilon(1e-10));

        // Injectivity post-check.
        std::vector<char> row_seen(n, 0), col_seen(l, 0);
        for (const auto& [r, c] : result.pairs) {
          CHECK(!row_seen[r]);
          CHECK(!col_seen[c]);
          row_seen[r] = 1;
          col_seen[c] = 1;
        }
      }
}

TEST_CASE("match_hungarian: rejects non-finite costs") {
  Tensor cost = Tensor::from_data({1, 2}, {1.0, std::numeric_limits<double>::infinity()});
  CHECK_THROWS_AS(sp::match_hungarian(cost), std::invalid_argument);
  Tensor nan_cost =
      Tensor::from_data({1, 1}, {std::numeric_limits<double>::quiet_NaN()});
  CHECK_THROWS_AS(sp::match_hungarian(nan_cost), std::invalid_argument);
}
