// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "msas/losses.hpp"
#include "msas/metrics.hpp"
#include "oracles.hpp"
#include "test_helpers.hpp"

using msas::CounterRng;

TEST_CASE("qwk perfect agreement", "[metrics]") {
    std::vector<int> a = {0, 2, 1, 3, 0};
    CHECK(msas::qwk(a, a, 0, 3) == 1.0);
}

TEST_CASE("qwk full reversal is exactly -1", "[metrics]") {
    CHECK(msas::qwk({0, 1, 2}, {2, 1, 0}, 0, 2) == -1.0);
}

TEST_CASE("qwk matches the brute-force oracle on random vectors", "[metrics]") {
    CounterRng rng(314);
    for (int trial = 0; trial < 100; ++trial) {
        const int smin = static_cast<int>(rng.next_below(5));
        const int r = 2 + static_cast<int>(rng.next_below(60));
        const int smax = smin + r - 1;
        const int n = 1 + static_cast<int>(rng.next_below(50));
        std::vector<int> a(static_cast<std::size_t>(n)), b(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            a[static_cast<std::size_t>(i)] = smin + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(r)));
            b[static_cast<std::size_t>(i)] = smin + static_cast<int>(rng.next_below(static_cast<std::uint64_t>(r)));
        }
        const double mine = msas::qwk(a, b, smin, smax);
        const double ref = oracle::brute_qwk(a, b, smin, smax);
        REQUIRE(std::abs(mine - ref) < 1e-10);
    }
}

TEST_CASE("qwk symmetry and shift invariance", "[metrics]") {
    CounterRng rng(99);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 3 + static_cast<int>(rng.next_below(20));
        std::vector<int> a(static_cast<std::size_t>(n)), b(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            a[static_cast<std::size_t>(i)] = static_cast<int>(rng.next_below(7));
            b[static_cast<std::size_t>(i)] = static_cast<int>(rng.next_below(7));
        }
        const double ab = msas::qwk(a, b, 0, 6);
        CHECK(msas::qwk(b, a, 0, 6) == ab);
        std::vector<int> as = a, bs = b;
        for (auto& v : as) v += 10;
        for (auto& v : bs) v += 10;
        CHECK(msas::qwk(as, bs, 10, 16) == ab);
    }
}

TEST_CASE("qwk degenerate cases", "[metrics]") {
    // both raters constant and equal: zero denominator, defined as 1
    CHECK(msas::qwk({2, 2, 2}, {2, 2, 2}, 0, 4) == 1.0);
    // constant but unequal: regular formula applies
    CHECK(msas::qwk({0, 0, 0}, {2, 2, 2}, 0, 4) == 0.0);
    CHECK_THROWS_AS(msas::qwk({0, 1}, {0}, 0, 1), msas::ShapeError);
    CHECK_THROWS_AS(msas::qwk({0, 5}, {0, 1}, 0, 4), msas::ValueError);
}

TEST_CASE("rmse values", "[metrics]") {
    CHECK(msas::rmse({1, 2, 3}, {1, 2, 3}) == 0.0);
    CHECK_THAT(msas::rmse({0, 0}, {3, 4}), Catch::Matchers::WithinAbs(std::sqrt(12.5), 1e-12));
    CHECK_THROWS_AS(msas::rmse({1}, {1, 2}), msas::ShapeError);
}

TEST_CASE("rmse triangle bound on random triples", "[metrics]") {
    CounterRng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 2 + static_cast<int>(rng.next_below(10));
        std::vector<double> a(static_cast<std::size_t>(n)), b(static_cast<std::size_t>(n)),
            c(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            a[static_cast<std::size_t>(i)] = rng.next_uniform_double() * 10 - 5;
            b[static_cast<std::size_t>(i)] = rng.next_uniform_double() * 10 - 5;
            c[static_cast<std::size_t>(i)] = rng.next_uniform_double() * 10 - 5;
        }
        REQUIRE(msas::rmse(a, c) <= msas::rmse(a, b) + msas::rmse(b, c) + 1e-12);
    }
}

TEST_CASE("rmse squared equals the mse loss", "[metrics]") {
    std::vector<double> a = {0.1, 0.7, 0.4}, b = {0.2, 0.5, 0.9};
    const double r = msas::rmse(a, b);
    CHECK_THAT(r * r, Catch::Matchers::WithinAbs(msas::losses::mse(a, b), 1e-12));
}

TEST_CASE("evaluate_prompt round trip", "[metrics]") {
    auto spec = msas::find_spec(testutil::asap_specs(), 7);
    std::vector<double> labels = {0, 5, 15, 20, 30};
    std::vector<double> preds;
    for (double s : labels) preds.push_back(msas::normalize_score(s, spec));
    auto m = msas::evaluate_prompt(preds, labels, spec);
    REQUIRE(m.has_qwk);
    CHECK(m.qwk == 1.0);
    CHECK(m.rmse < 1e-9);
}

TEST_CASE("evaluate_prompt constant predictions match the oracle", "[metrics]") {
    auto spec = msas::find_spec(testutil::asap_specs(), 3);
    std::vector<double> labels = {0, 1, 2, 3, 1, 2};
    std::vector<double> preds(labels.size(), 0.5);  // denormalizes to 2 everywhere
    auto m = msas::evaluate_prompt(preds, labels, spec);
    std::vector<int> pi(labels.size(), 2), li(labels.begin(), labels.end());
    CHECK(m.qwk == oracle::brute_qwk(pi, li, 0, 3));
    CHECK(m.qwk <= 0.0);
}

TEST_CASE("evaluate_prompt on a continuous prompt reports rmse only", "[metrics]") {
    auto spec = msas::crp_prompt_spec();
    std::vector<double> labels = {-3.68, 0.0, 1.72};
    std::vector<double> preds = {0.0, 0.5, 1.0};
    auto m = msas::evaluate_prompt(preds, labels, spec);
    CHECK_FALSE(m.has_qwk);
    CHECK(m.rmse > 0.0);
}
