// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "msas/losses.hpp"
#include "oracles.hpp"

using msas::CounterRng;
using msas::LossWeights;
using msas::Tape;
using msas::Tensor;
namespace L = msas::losses;

TEST_CASE("mse values", "[losses]") {
    CHECK(L::mse({0.3, 0.7}, {0.3, 0.7}) == 0.0);
    CHECK(L::mse({0.5, 0.5}, {0.0, 1.0}) == 0.25);
    CHECK_THROWS_AS(L::mse({}, {}), msas::ShapeError);
    CHECK_THROWS_AS(L::mse({0.1}, {0.1, 0.2}), msas::ShapeError);
}

TEST_CASE("sim values", "[losses]") {
    CHECK_THAT(L::sim({0.4, 0.8}, {0.4, 0.8}), Catch::Matchers::WithinAbs(0.0, 1e-12));
    CHECK(L::sim({1, 0}, {0, 1}) == 1.0);
    CHECK_THAT(L::sim({0.2, 0.6}, {0.1, 0.3}), Catch::Matchers::WithinAbs(0.0, 1e-12));
    bool degenerate = false;
    CHECK(L::sim({0, 0}, {1, 1}, &degenerate) == 1.0);
    CHECK(degenerate);
    CHECK_THROWS_AS(L::sim({1.0}, {1.0}), msas::ShapeError);
}

TEST_CASE("mr single pair cases", "[losses]") {
    // enumeration oracle for one pair: label order says j above i, prediction
    // disagrees by 0.5, so the hinge fires with exactly that separation
    {
        const double yi = 0.8, yj = 0.3, li = 0.7, lj = 0.9, b = 0.0;
        const int r = li > lj ? 1 : (li < lj ? -1 : 0);
        const double expect = std::max(0.0, -r * (yi - yj) + b);
        CHECK(expect == 0.5);
        CHECK(L::mr({yi, yj}, {li, lj}, b) == expect);
    }
    // tie case: loss is |y_i - y_j|
    CHECK_THAT(L::mr({0.4, 0.1}, {0.5, 0.5}, 0.0), Catch::Matchers::WithinAbs(0.3, 1e-12));
    // exact tie predicted exactly contributes zero
    CHECK(L::mr({0.2, 0.2}, {0.5, 0.5}, 0.0) == 0.0);
    // perfectly ordered strict batch
    CHECK(L::mr({0.9, 0.5, 0.1}, {1.0, 0.6, 0.2}, 0.0) == 0.0);
    CHECK_THROWS_AS(L::mr({0.1}, {0.1}, 0.0), msas::ShapeError);
}

TEST_CASE("mr margin shifts the hinge", "[losses]") {
    // correct order but inside the margin still pays
    CHECK_THAT(L::mr({0.6, 0.5}, {1.0, 0.0}, 0.3), Catch::Matchers::WithinAbs(0.2, 1e-12));
}

TEST_CASE("losses are invariant under identical permutation", "[losses]") {
    CounterRng rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 3 + static_cast<int>(rng.next_below(6));
        std::vector<double> y(static_cast<std::size_t>(n)), yh(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            y[static_cast<std::size_t>(i)] = rng.next_uniform_double();
            yh[static_cast<std::size_t>(i)] = rng.next_uniform_double();
        }
        std::vector<std::size_t> perm(static_cast<std::size_t>(n));
        for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
        msas::deterministic_shuffle(perm, rng);
        std::vector<double> yp(static_cast<std::size_t>(n)), yhp(static_cast<std::size_t>(n));
        for (std::size_t i = 0; i < perm.size(); ++i) {
            yp[i] = y[perm[i]];
            yhp[i] = yh[perm[i]];
        }
        REQUIRE_THAT(L::mse(yp, yhp), Catch::Matchers::WithinAbs(L::mse(y, yh), 1e-12));
        REQUIRE_THAT(L::sim(yp, yhp), Catch::Matchers::WithinAbs(L::sim(y, yh), 1e-12));
        REQUIRE_THAT(L::mr(yp, yhp, 0.0), Catch::Matchers::WithinAbs(L::mr(y, yh, 0.0), 1e-12));
    }
}

TEST_CASE("mr with zero margin is scale-equivariant", "[losses]") {
    CounterRng rng(23);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 3 + static_cast<int>(rng.next_below(5));
        std::vector<double> y(static_cast<std::size_t>(n)), yh(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            y[static_cast<std::size_t>(i)] = rng.next_uniform_double() + 0.01 * i;  // no exact y ties
            yh[static_cast<std::size_t>(i)] = rng.next_uniform_double();
        }
        const double c = 0.25 + 3.0 * rng.next_uniform_double();
        std::vector<double> yc = y;
        for (auto& v : yc) v *= c;
        REQUIRE_THAT(L::mr(yc, yh, 0.0), Catch::Matchers::WithinAbs(c * L::mr(y, yh, 0.0), 1e-9));
    }
}

TEST_CASE("combined composes its terms", "[losses]") {
    const std::vector<double> y = {0.5, 0.5}, yh = {0.0, 1.0};
    LossWeights mse_only{1.0, 0.0, 0.0, 0.0, 0.0};
    CHECK(L::combined(y, yh, mse_only) == L::mse(y, yh));

    LossWeights all{1.0, 1.0, 1.0, 0.0, 0.0};
    CHECK_THAT(L::combined(y, yh, all),
               Catch::Matchers::WithinAbs(L::mse(y, yh) + L::mr(y, yh, 0.0) + L::sim(y, yh), 1e-12));

    // exact predictions on a strictly ordered batch: zero under any weights
    const std::vector<double> o = {0.9, 0.4, 0.1};
    CHECK(L::combined(o, o, all) == 0.0);

    LossWeights invalid{0.0, 0.0, 0.0, 0.0, 0.0};
    CHECK_THROWS_AS(L::combined(y, yh, invalid), msas::ValueError);
}

TEST_CASE("rdrop consistency values", "[losses]") {
    CHECK(L::rdrop_consistency({0.3, 0.4}, {0.3, 0.4}) == 0.0);
    CHECK_THAT(L::rdrop_consistency({0.2}, {0.6}), Catch::Matchers::WithinAbs(0.16, 1e-9));
    CHECK_THROWS_AS(L::rdrop_consistency({0.1}, {0.1, 0.2}), msas::ShapeError);
}

TEST_CASE("tensor loss ops agree with the double reference", "[losses]") {
    CounterRng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 2 + static_cast<int>(rng.next_below(8));
        Tensor y = Tensor::zeros({n});
        std::vector<float> labels(static_cast<std::size_t>(n));
        std::vector<double> yd(static_cast<std::size_t>(n)), ld(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            y(i) = rng.next_uniform();
            labels[static_cast<std::size_t>(i)] = rng.next_uniform();
            yd[static_cast<std::size_t>(i)] = y(i);
            ld[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(i)];
        }
        CHECK_THAT(msas::mse_op(nullptr, y, labels).value(),
                   Catch::Matchers::WithinAbs(L::mse(yd, ld), 1e-6));
        CHECK_THAT(msas::sim_op(nullptr, y, labels).value(),
                   Catch::Matchers::WithinAbs(L::sim(yd, ld), 1e-6));
        CHECK_THAT(msas::mr_op(nullptr, y, labels, 0.0f).value(),
                   Catch::Matchers::WithinAbs(L::mr(yd, ld, 0.0), 1e-6));
        LossWeights w{1.0, 0.7, 0.4, 0.0, 0.0};
        CHECK_THAT(msas::combined_op(nullptr, y, labels, w).value(),
                   Catch::Matchers::WithinAbs(L::combined(yd, ld, w), 1e-5));
    }
}

TEST_CASE("combined_op gradient matches double-path finite differences", "[losses]") {
    CounterRng rng(47);
    const LossWeights w{1.0, 0.8, 0.6, 0.0, 0.0};
    for (int trial = 0; trial < 10; ++trial) {
        const int n = 3 + static_cast<int>(rng.next_below(6));
        Tensor y = Tensor::zeros({n}, true);
        std::vector<float> labels(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            // distinct predictions and labels keep pairs off hinge kinks
            y(i) = 0.1f + 0.8f * rng.next_uniform() + 0.001f * i;
            labels[static_cast<std::size_t>(i)] = rng.next_uniform();
        }
        Tape tape;
        Tensor loss = msas::combined_op(&tape, y, labels, w);
        tape.backward(loss);

        std::vector<double> ld(labels.begin(), labels.end());
        auto eval = [&]() {
            std::vector<double> yd(static_cast<std::size_t>(n));
            for (int i = 0; i < n; ++i) yd[static_cast<std::size_t>(i)] = y(i);
            return L::combined(yd, ld, w);
        };
        auto fd = oracle::finite_diff(y, eval, 1e-4);
        for (int i = 0; i < n; ++i) {
            INFO("trial " << trial << " element " << i);
            REQUIRE(oracle::rel_err(y.grad()[static_cast<std::size_t>(i)],
                                    fd[static_cast<std::size_t>(i)]) < 1e-4);
        }
    }
}

TEST_CASE("sim_op degenerate batch has zero gradient", "[losses]") {
    Tensor y = Tensor::zeros({3}, true);
    Tape tape;
    bool degenerate = false;
    Tensor loss = msas::sim_op(&tape, y, {0.5f, 0.5f, 0.5f}, &degenerate);
    CHECK(degenerate);
    CHECK(loss.value() == 1.0f);
    CHECK_FALSE(loss.requires_grad());
    CHECK(y.grad() == std::vector<float>{0, 0, 0});
}

TEST_CASE("rdrop_op gradients flow to both passes", "[losses]") {
    Tensor y1 = Tensor::from_data({2}, {0.2f, 0.7f}, true);
    Tensor y2 = Tensor::from_data({2}, {0.6f, 0.1f}, true);
    Tape tape;
    Tensor c = msas::rdrop_op(&tape, y1, y2);
    CHECK_THAT(c.value(), Catch::Matchers::WithinAbs((0.16 + 0.36) / 2.0, 1e-6));
    tape.backward(c);
    CHECK_THAT(y1.grad()[0], Catch::Matchers::WithinAbs(-0.4, 1e-6));
    CHECK_THAT(y2.grad()[0], Catch::Matchers::WithinAbs(0.4, 1e-6));
    CHECK_THAT(y1.grad()[1], Catch::Matchers::WithinAbs(0.6, 1e-6));
}
