#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "spar/rng.hpp"
#include "spar/weighting.hpp"

using namespace spar;

TEST_CASE("weight: uniform+soft is identically 1") {
    WeightingConfig cfg{Sensitivity::uniform, Filter::soft, 0.3, 100.0};
    for (double at : {-5.0, -0.1, 0.0, 0.1, 7.0}) CHECK(weight(cfg, at) == 1.0);
}

TEST_CASE("weight: exponential at zero advantage; hard filter prunes the boundary") {
    WeightingConfig expo{Sensitivity::exponential, Filter::soft, 0.3, 100.0};
    CHECK(weight(expo, 0.0) == doctest::Approx(1.0));
    WeightingConfig hard{Sensitivity::exponential, Filter::hard, 0.3, 100.0};
    CHECK(weight(hard, 0.0) == 0.0);  // strict indicator
    CHECK(weight(hard, 1e-9) > 0.0);
}

TEST_CASE("weight: exp identity at T=1") {
    WeightingConfig cfg{Sensitivity::exponential, Filter::soft, 1.0, 100.0};
    CHECK(weight(cfg, std::log(2.0)) == doctest::Approx(2.0));
}

TEST_CASE("weight: clipped at weight_clip") {
    WeightingConfig cfg{Sensitivity::exponential, Filter::soft, 0.1, 100.0};
    CHECK(weight(cfg, 10.0) == 100.0);
}

TEST_CASE("normalize_weights: basic cases") {
    const auto u = normalize_weights(std::vector<double>{1, 1, 1, 1});
    for (double w : u) CHECK(w == doctest::Approx(0.25));
    const auto v = normalize_weights(std::vector<double>{2, 0, 0});
    CHECK(v[0] == doctest::Approx(1.0));
    CHECK(v[1] == 0.0);
    CHECK(v[2] == 0.0);
}

TEST_CASE("normalize_weights: softmax identity for two advantages") {
    WeightingConfig cfg{Sensitivity::exponential, Filter::soft, 0.3, 1e9};
    const std::vector<double> at = {1.0, 0.5};
    const std::vector<double> ws = {weight(cfg, at[0]), weight(cfg, at[1])};
    const auto omega = normalize_weights(ws, at);
    const double sig = 1.0 / (1.0 + std::exp(-0.5 / 0.3));
    CHECK(omega[0] == doctest::Approx(sig).epsilon(1e-12));
    CHECK(omega[1] == doctest::Approx(1.0 - sig).epsilon(1e-12));
}

TEST_CASE("normalize_weights: all hard-filtered falls back to the best advantage") {
    const std::vector<double> ws = {0.0, 0.0, 0.0};
    const std::vector<double> at = {-3.0, -0.5, -1.0};
    const auto omega = normalize_weights(ws, at);
    CHECK(omega[0] == 0.0);
    CHECK(omega[1] == 1.0);
    CHECK(omega[2] == 0.0);
    // Tie breaks to the lowest index.
    const auto tie = normalize_weights(std::vector<double>{0.0, 0.0},
                                       std::vector<double>{-1.0, -1.0});
    CHECK(tie[0] == 1.0);
}

TEST_CASE("property: normalized weights sum to 1 and are non-negative") {
    Rng rng(5);
    for (int trial = 0; trial < 200; ++trial) {
        WeightingConfig cfg{rng.uniform() < 0.5 ? Sensitivity::uniform : Sensitivity::exponential,
                            rng.uniform() < 0.5 ? Filter::soft : Filter::hard,
                            rng.uniform(0.05, 2.0), 100.0};
        const int n = 2 + static_cast<int>(rng.below(8));
        std::vector<double> at(static_cast<std::size_t>(n)), ws(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            at[static_cast<std::size_t>(i)] = rng.uniform(-3, 3);
            ws[static_cast<std::size_t>(i)] = weight(cfg, at[static_cast<std::size_t>(i)]);
        }
        const auto omega = normalize_weights(ws, at);
        double sum = 0;
        for (double w : omega) {
            CHECK(w >= 0.0);
            sum += w;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("property: hard filter zeroes exactly the non-positive advantages") {
    WeightingConfig cfg{Sensitivity::exponential, Filter::hard, 0.3, 100.0};
    Rng rng(6);
    for (int i = 0; i < 500; ++i) {
        const double at = rng.uniform(-2, 2);
        const double w = weight(cfg, at);
        if (at > 0.0)
            CHECK(w > 0.0);
        else
            CHECK(w == 0.0);
    }
}

TEST_CASE("property: argmax weight non-increasing in temperature") {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> at = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        // make entries distinct
        at[1] += 1.5;
        at[2] -= 1.5;
        double prev = 2.0;
        for (double t : {0.05, 0.1, 0.3, 1.0, 3.0}) {
            WeightingConfig cfg{Sensitivity::exponential, Filter::soft, t, 1e12};
            std::vector<double> ws;
            for (double a : at) ws.push_back(weight(cfg, a));
            const auto omega = normalize_weights(ws, at);
            const double top = omega[1];  // at[1] is the argmax by construction
            CHECK(top <= prev + 1e-12);
            prev = top;
        }
    }
}

TEST_CASE("property: soft-exponential weights are shift invariant") {
    WeightingConfig cfg{Sensitivity::exponential, Filter::soft, 0.3, 1e30};
    Rng rng(8);
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<double> at = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1),
                                  rng.uniform(-1, 1)};
        const double shift = rng.uniform(-2, 2);
        std::vector<double> ws, ws_shifted;
        for (double a : at) {
            ws.push_back(weight(cfg, a));
            ws_shifted.push_back(weight(cfg, a + shift));
        }
        const auto o1 = normalize_weights(ws, at);
        const auto o2 = normalize_weights(ws_shifted, at);
        for (std::size_t i = 0; i < o1.size(); ++i)
            CHECK(o1[i] == doctest::Approx(o2[i]).epsilon(1e-9));
    }
}
