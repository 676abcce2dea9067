#include <cmath>
#include <cstring>
#include <random>
#include <stdexcept>

#include "chanprobe/correlation.hpp"
#include "chanprobe/parallel.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace chanprobe;

namespace {

PairCorrelations hand_built(std::vector<double> coefficients, std::size_t channels) {
  PairCorrelations pc;
  pc.layer_name = "conv";
  pc.channels = channels;
  pc.coefficients = std::move(coefficients);
  pc.degenerate.assign(channels, false);
  return pc;
}

}  // namespace

TEST_CASE("pearson on small exact cases") {
  CHECK(pearson(std::vector<double>{1, 2, 3}, std::vector<double>{2, 4, 6}) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(pearson(std::vector<double>{1, 2, 3}, std::vector<double>{3, 2, 1}) == doctest::Approx(-1.0).epsilon(1e-15));
  // Covariance sum 4, deviation-square sums 5 and 5.
  CHECK(pearson(std::vector<double>{1, 2, 3, 4}, std::vector<double>{1, 3, 2, 4}) ==
        doctest::Approx(0.8).epsilon(1e-15));
  CHECK(pearson(std::vector<double>{5, 5, 5}, std::vector<double>{1, 2, 3}) == 0.0);
  CHECK(pearson(std::vector<double>{1, 2, 3}, std::vector<double>{7, 7, 7}) == 0.0);
}

TEST_CASE("pearson argument errors") {
  CHECK_THROWS_AS(pearson(std::vector<double>{1, 2}, std::vector<double>{1, 2, 3}), std::invalid_argument);
  CHECK_THROWS_AS(pearson(std::vector<double>{1}, std::vector<double>{1}), std::invalid_argument);
}

TEST_CASE("pearson properties on random vectors") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal;
  std::uniform_int_distribution<int> len(2, 300);
  std::uniform_real_distribution<double> coef(-5.0, 5.0);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = len(rng);
    std::vector<double> x(n), y(n);
    for (int i = 0; i < n; ++i) {
      x[i] = normal(rng);
      y[i] = 0.3 * x[i] + normal(rng);
    }
    const double r = pearson(x, y);
    CHECK(std::fabs(r) <= 1.0);
    CHECK(r == pearson(y, x));
    CHECK(r == doctest::Approx(oracle::pearson_hp(x, y)).epsilon(1e-12));

    double a = coef(rng);
    if (std::fabs(a) < 1e-3) a = 1.0;
    const double b = coef(rng);
    std::vector<double> ax(n);
    for (int i = 0; i < n; ++i) ax[i] = a * x[i] + b;
    CHECK(pearson(ax, y) == doctest::Approx((a > 0 ? 1 : -1) * r).epsilon(1e-10));
  }
}

TEST_CASE("fixed reductions cross block boundaries in a fixed order") {
  std::vector<double> x(detail::kReduceBlock * 3 + 7, 0.1);
  const double s = detail::fixed_sum(x.data(), x.size());
  CHECK(s == doctest::Approx(0.1 * static_cast<double>(x.size())));
  CHECK(detail::fixed_dot(x.data(), x.data(), x.size()) == doctest::Approx(0.01 * static_cast<double>(x.size())));
}

TEST_CASE("layer correlations") {
  SUBCASE("two identical channels give one pair at 1 in both modes") {
    ActivationTrace t({{"l", 2}}, 4, {1, 1, 2, 2, 4, 4, 3, 3});
    for (auto mode : {CorrelationMode::signed_value, CorrelationMode::absolute}) {
      const auto pc = layer_correlations(t, 0, mode);
      REQUIRE(pc.coefficients.size() == 1);
      CHECK(pc.coefficients[0] == doctest::Approx(1.0).epsilon(1e-15));
    }
  }
  SUBCASE("four channels give six pairs") {
    std::mt19937_64 rng(1);
    const auto t = oracle::latent_trace(rng, 10, {4});
    CHECK(layer_correlations(t, 0).pairs().size() == 6);
  }
  SUBCASE("absolute mode folds the sign") {
    ActivationTrace t({{"l", 2}}, 3, {1, 3, 2, 2, 3, 1});
    CHECK(layer_correlations(t, 0, CorrelationMode::signed_value).coefficients[0] ==
          doctest::Approx(-1.0).epsilon(1e-15));
    CHECK(layer_correlations(t, 0, CorrelationMode::absolute).coefficients[0] ==
          doctest::Approx(1.0).epsilon(1e-15));
  }
  SUBCASE("too few rows and unknown layer") {
    ActivationTrace t({{"l", 2}}, 2, {1, 2, 3, 4});
    CHECK_THROWS_AS(layer_correlations(t, 0), std::invalid_argument);
    ActivationTrace ok({{"l", 2}}, 3, {1, 2, 3, 4, 5, 7});
    CHECK_THROWS_AS(layer_correlations(ok, 1), TraceError);
  }
  SUBCASE("degenerate channels carry the zero sentinel") {
    ActivationTrace t({{"l", 3}}, 3, {5, 1, 2, 5, 2, 4, 5, 3, 7});
    const auto pc = layer_correlations(t, 0);
    CHECK(pc.degenerate == std::vector<bool>{true, false, false});
    CHECK(pc.at(0, 1) == 0.0);
    CHECK(pc.at(0, 2) == 0.0);
    CHECK(pc.at(1, 2) > 0.9);
  }
}

TEST_CASE("layer correlations equal column-wise pearson exactly") {
  std::mt19937_64 rng(5);
  const auto t = oracle::latent_trace(rng, 50, {2, 5}, 2);
  const auto pc = layer_correlations(t, 1);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = i + 1; j < 5; ++j) {
      const auto xi = oracle::column(t, 2 + i);
      const auto xj = oracle::column(t, 2 + j);
      CHECK(pc.at(i, j) == pearson(xi, xj));
    }
  }
  const auto slice = slice_by_class(t, 1);
  const auto spc = layer_correlations(slice, 1);
  CHECK(spc.source == "class:class1");
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = i + 1; j < 5; ++j) {
      CHECK(spc.at(i, j) == pearson(oracle::column(t, 2 + i, &slice.rows), oracle::column(t, 2 + j, &slice.rows)));
    }
  }
}

TEST_CASE("layer correlations do not depend on the worker count") {
  std::mt19937_64 rng(9);
  const auto t = oracle::latent_trace(rng, 1500, {40});
  set_worker_count(1);
  const auto one = layer_correlations(t, 0);
  set_worker_count(4);
  const auto four = layer_correlations(t, 0);
  set_worker_count(1);
  REQUIRE(one.coefficients.size() == four.coefficients.size());
  CHECK(std::memcmp(one.coefficients.data(), four.coefficients.data(), one.coefficients.size() * sizeof(double)) == 0);
}

TEST_CASE("top-k sizing and ordering") {
  CHECK(topk_size(0.05, 6) == 1);
  CHECK(topk_size(1.0, 6) == 6);
  CHECK(topk_size(2.0 / 3.0, 3) == 2);
  CHECK(topk_size(0.05, 130816) == 6541);
  CHECK_THROWS_AS(topk_size(0.0, 6), std::invalid_argument);
  CHECK_THROWS_AS(topk_size(1.5, 6), std::invalid_argument);

  // Pairs (0,1) (0,2) (0,3) (1,2) (1,3) (2,3)
  const auto pc = hand_built({0.1, 0.5, -0.2, 0.9, 0.3, 0.5}, 4);
  const auto one = topk_pairs(pc, 0.05);
  REQUIRE(one.pairs.size() == 1);
  CHECK(one.pairs[0] == ChannelPair{1, 2, 0.9});

  const auto all = topk_pairs(pc, 1.0);
  REQUIRE(all.pairs.size() == 6);
  CHECK(all.pairs[0] == ChannelPair{1, 2, 0.9});
  CHECK(all.pairs[1] == ChannelPair{0, 2, 0.5});
  CHECK(all.pairs[2] == ChannelPair{2, 3, 0.5});
  CHECK(all.pairs[5] == ChannelPair{0, 3, -0.2});

  const auto ties = topk_pairs(hand_built({0.9, 0.9, 0.1}, 3), 2.0 / 3.0);
  REQUIRE(ties.pairs.size() == 2);
  CHECK(ties.pairs[0] == ChannelPair{0, 1, 0.9});
  CHECK(ties.pairs[1] == ChannelPair{0, 2, 0.9});

  CHECK_THROWS_AS(topk_pairs(hand_built({}, 1), 0.5), std::invalid_argument);
}

TEST_CASE("top-k skips pairs touching degenerate channels") {
  auto pc = hand_built({0.0, 0.0, 0.4}, 3);
  pc.degenerate = {true, false, false};
  const auto top = topk_pairs(pc, 1.0);
  REQUIRE(top.pairs.size() == 1);
  CHECK(top.pairs[0] == ChannelPair{1, 2, 0.4});
}

TEST_CASE("correlation distance") {
  const auto a = hand_built({0.9, 0.5, 0.3}, 3);
  CHECK(corr_distance(a, a, topk_pairs(a, 1.0)) == 0.0);

  const auto single_a = hand_built({0.9}, 2);
  const auto single_b = hand_built({0.4}, 2);
  CHECK(corr_distance(single_a, single_b, topk_pairs(single_a, 1.0)) == doctest::Approx(0.5));

  const auto b = hand_built({0.8, 0.7, 0.0}, 3);
  CHECK(corr_distance(a, b, topk_pairs(a, 1.0)) == doctest::Approx(0.6));
  CHECK(corr_distance(a, b, topk_pairs(a, 1.0)) == corr_distance(b, a, topk_pairs(a, 1.0)));

  auto other = hand_built({0.9, 0.5, 0.3}, 3);
  other.layer_name = "elsewhere";
  CHECK_THROWS_AS(corr_distance(a, other, topk_pairs(a, 1.0)), std::invalid_argument);
}

TEST_CASE("json export") {
  const auto pc = hand_built({0.5, -0.25, 1.0}, 3);
  CHECK(to_json(pc).dump() == R"({"layer":"conv","pairs":[[0,1,0.5],[0,2,-0.25],[1,2,1.0]]})");
  CHECK(to_json(topk_pairs(pc, 0.3)).dump() == R"({"layer":"conv","pairs":[[1,2,1.0]]})");
}
