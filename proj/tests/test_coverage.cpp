#include <random>
#include <stdexcept>

#include "chanprobe/coverage.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace chanprobe;

TEST_CASE("upper bounds are column maxima") {
  ActivationTrace t({{"l", 2}}, 3, {1.0f, 0.0f, 3.5f, -1.0f, 2.0f, -0.5f});
  const auto universe = t.all_channels();
  CHECK(upper_bounds(t, universe) == std::vector<double>{3.5, 0.0});

  ActivationTrace single({{"l", 3}}, 1, {4.0f, -2.0f, 0.25f});
  CHECK(upper_bounds(single, single.all_channels()) == std::vector<double>{4.0, -2.0, 0.25});

  ActivationTrace empty({{"l", 3}}, 0, {});
  CHECK_THROWS_AS(upper_bounds(empty, empty.all_channels()), std::invalid_argument);
}

TEST_CASE("upper bounds match a full scan") {
  std::mt19937_64 rng(3);
  const auto t = oracle::latent_trace(rng, 100, {5, 7});
  const auto bounds = upper_bounds(t, t.all_channels());
  for (std::size_t c = 0; c < t.total_channels(); ++c) {
    double best = t.at(0, c);
    for (std::size_t r = 0; r < t.num_samples(); ++r) best = std::max<double>(best, t.at(r, c));
    CHECK(bounds[c] == best);
  }
}

TEST_CASE("boundary coverage examples") {
  ActivationTrace train({{"l", 4}}, 2, {1, 1, 1, 1, 2, 2, 2, 2});
  CHECK(boundary_coverage(train, train, train.all_channels()).fraction == 0.0);

  ActivationTrace equal({{"l", 4}}, 1, {2, 2, 2, 2});
  CHECK(boundary_coverage(train, equal, train.all_channels()).fraction == 0.0);

  ActivationTrace one({{"l", 4}}, 2, {0, 0, 2.5f, 0, 2, 2, 2, 2});
  const auto r = boundary_coverage(train, one, train.all_channels());
  CHECK(r.fraction == 0.25);
  CHECK(r.covered == std::vector<bool>{false, false, true, false});

  ActivationTrace none({{"l", 4}}, 0, {});
  CHECK(boundary_coverage(train, none, train.all_channels()).fraction == 0.0);

  ActivationTrace other({{"m", 4}}, 1, {9, 9, 9, 9});
  CHECK_THROWS_AS(boundary_coverage(train, other, train.all_channels()), TraceError);
  CHECK_THROWS_AS(boundary_coverage(train, one, {}), std::invalid_argument);
}

TEST_CASE("boundary coverage matches the double loop and is monotone") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 30; ++trial) {
    const auto train = oracle::latent_trace(rng, 20 + trial, {3, 4});
    const auto test = oracle::latent_trace(rng, 5 + trial, {3, 4});
    std::vector<std::size_t> cols(train.total_channels());
    for (std::size_t c = 0; c < cols.size(); ++c) cols[c] = c;
    const auto report = boundary_coverage(train, test, train.all_channels());
    CHECK(report.fraction == oracle::coverage_brute(train, test, cols));

    // Appending test rows never lowers coverage; appending train rows never raises it.
    const auto extra = oracle::latent_trace(rng, 3, {3, 4});
    std::vector<float> more(test.intensities().begin(), test.intensities().end());
    more.insert(more.end(), extra.intensities().begin(), extra.intensities().end());
    const ActivationTrace bigger_test(test.layers(), test.num_samples() + 3, more);
    CHECK(boundary_coverage(train, bigger_test, train.all_channels()).fraction >= report.fraction);

    std::vector<float> more_train(train.intensities().begin(), train.intensities().end());
    more_train.insert(more_train.end(), extra.intensities().begin(), extra.intensities().end());
    const ActivationTrace bigger_train(train.layers(), train.num_samples() + 3, more_train);
    CHECK(boundary_coverage(bigger_train, test, train.all_channels()).fraction <= report.fraction);

    // Restriction to one layer agrees with recomputation.
    const auto sub = coverage_universe(train, {"conv2"});
    CHECK(report.fraction_over(sub) == boundary_coverage(train, test, sub).fraction);
  }
}

TEST_CASE("universe selection and exports") {
  ActivationTrace train({{"a", 1}, {"b", 2}}, 1, {1, 1, 1});
  ActivationTrace test({{"a", 1}, {"b", 2}}, 1, {0, 3, 1});
  CHECK(coverage_universe(train, {}).size() == 3);
  CHECK(coverage_universe(train, {"b", "b"}).size() == 2);
  CHECK_THROWS_AS(coverage_universe(train, {"zz"}), TraceError);
  const auto r = boundary_coverage(train, test, coverage_universe(train, {"b"}));
  CHECK(r.fraction == 0.5);
  CHECK(to_json(r).dump() ==
        R"({"fraction":0.5,"covered":[{"layer":"b","channel":0}],"bounds":[{"layer":"b","channel":0,"upper":1.0,"test_max":3.0},{"layer":"b","channel":1,"upper":1.0,"test_max":1.0}]})");
  CHECK(to_csv(r) == "layer,channel,upper_bound,test_max,covered\nb,0,1,3,1\nb,1,1,1,0\n");
}
