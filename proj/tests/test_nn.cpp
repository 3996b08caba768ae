#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "spar/checkpoint.hpp"
#include "spar/errors.hpp"
#include "spar/nn.hpp"
#include "spar/rng.hpp"

using namespace spar;

namespace {

// Independent dense-layer oracle: plain nested loops over explicit matrices.
std::vector<double> oracle_forward(const nn::ParamGraph& g, const std::vector<double>& x) {
    std::vector<double> cur = x;
    for (int l = 0; l < g.num_layers(); ++l) {
        const int in = g.layer_sizes[static_cast<std::size_t>(l)];
        const int out = g.layer_sizes[static_cast<std::size_t>(l) + 1];
        const double* w = g.params.data() + g.weight_offset(l);
        const double* b = g.params.data() + g.bias_offset(l);
        std::vector<double> next(static_cast<std::size_t>(out));
        for (int o = 0; o < out; ++o) {
            double acc = b[o];
            for (int i = 0; i < in; ++i) acc += w[o * in + i] * cur[static_cast<std::size_t>(i)];
            switch (g.activations[static_cast<std::size_t>(l)]) {
                case nn::Act::relu: acc = acc > 0 ? acc : 0; break;
                case nn::Act::tanh: acc = std::tanh(acc); break;
                case nn::Act::identity: break;
            }
            next[static_cast<std::size_t>(o)] = acc;
        }
        cur = std::move(next);
    }
    return cur;
}

double scalar_objective(const nn::ParamGraph& g, const std::vector<double>& x,
                        const std::vector<double>& upstream) {
    const auto y = nn::forward(g, x);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += upstream[i] * y[i];
    return s;
}

// Max relative error between analytic and central-difference gradients.
double fd_max_rel_error(const nn::ParamGraph& g, const std::vector<double>& x,
                        const std::vector<double>& upstream, double h) {
    const auto grads = nn::backward(g, x, upstream);
    double worst = 0.0;
    nn::ParamGraph gp = g;
    for (std::size_t i = 0; i < g.params.size(); ++i) {
        gp.params = g.params;
        gp.params[i] += h;
        const double fp = scalar_objective(gp, x, upstream);
        gp.params[i] -= 2 * h;
        const double fm = scalar_objective(gp, x, upstream);
        const double fd = (fp - fm) / (2 * h);
        const double denom = std::max({std::abs(fd), std::abs(grads.params[i]), 1e-6});
        worst = std::max(worst, std::abs(fd - grads.params[i]) / denom);
    }
    auto xp = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        xp = x;
        xp[i] += h;
        const double fp = scalar_objective(g, xp, upstream);
        xp[i] -= 2 * h;
        const double fm = scalar_objective(g, xp, upstream);
        const double fd = (fp - fm) / (2 * h);
        const double denom = std::max({std::abs(fd), std::abs(grads.input[i]), 1e-6});
        worst = std::max(worst, std::abs(fd - grads.input[i]) / denom);
    }
    return worst;
}

// Rejects relu kink points: any |preactivation| < 1e-3 disqualifies the probe.
bool near_relu_kink(const nn::ParamGraph& g, const std::vector<double>& x) {
    std::vector<double> cur = x;
    for (int l = 0; l < g.num_layers(); ++l) {
        const int in = g.layer_sizes[static_cast<std::size_t>(l)];
        const int out = g.layer_sizes[static_cast<std::size_t>(l) + 1];
        const double* w = g.params.data() + g.weight_offset(l);
        const double* b = g.params.data() + g.bias_offset(l);
        std::vector<double> next(static_cast<std::size_t>(out));
        for (int o = 0; o < out; ++o) {
            double acc = b[o];
            for (int i = 0; i < in; ++i) acc += w[o * in + i] * cur[static_cast<std::size_t>(i)];
            if (g.activations[static_cast<std::size_t>(l)] == nn::Act::relu &&
                std::abs(acc) < 1e-3)
                return true;
            next[static_cast<std::size_t>(o)] =
                g.activations[static_cast<std::size_t>(l)] == nn::Act::relu
                    ? (acc > 0 ? acc : 0)
                    : (g.activations[static_cast<std::size_t>(l)] == nn::Act::tanh
                           ? std::tanh(acc)
                           : acc);
        }
        cur = std::move(next);
    }
    return false;
}

}  // namespace

TEST_CASE("forward: identity single layer reproduces input") {
    nn::ParamGraph g;
    g.layer_sizes = {2, 2};
    g.activations = {nn::Act::identity};
    g.params = {1, 0, 0, 1, 0, 0};  // identity weights, zero bias
    const auto y = nn::forward(g, std::vector<double>{0.3, -0.7});
    CHECK(y[0] == doctest::Approx(0.3));
    CHECK(y[1] == doctest::Approx(-0.7));
}

TEST_CASE("forward: all-zero params give zero output") {
    auto g = nn::make_mlp(3, {5, 4}, 2, 7);
    std::fill(g.params.begin(), g.params.end(), 0.0);
    for (const auto x : {std::vector<double>{1, 2, 3}, std::vector<double>{-1, 0, 9}}) {
        const auto y = nn::forward(g, x);
        CHECK(y[0] == 0.0);
        CHECK(y[1] == 0.0);
    }
}

TEST_CASE("forward: matches an independent matrix oracle on a seeded 2-4-1 relu net") {
    const auto g = nn::make_mlp(2, {4}, 1, 42, nn::Act::relu);
    const std::vector<double> x = {1.0, 1.0};
    const auto y = nn::forward(g, x);
    const auto yo = oracle_forward(g, x);
    CHECK(y[0] == doctest::Approx(yo[0]).epsilon(1e-12));
}

TEST_CASE("forward: dimension mismatch rejected") {
    const auto g = nn::make_mlp(2, {4}, 1, 1);
    CHECK_THROWS_AS(nn::forward(g, std::vector<double>{1.0}), DimensionError);
    CHECK_THROWS_AS(nn::backward(g, std::vector<double>{1.0, 2.0}, std::vector<double>{1.0, 2.0}),
                    DimensionError);
}

TEST_CASE("backward: zero upstream gives zero gradients") {
    const auto g = nn::make_mlp(3, {8}, 2, 3, nn::Act::tanh);
    const auto grads = nn::backward(g, std::vector<double>{0.1, -0.2, 0.5},
                                    std::vector<double>{0.0, 0.0});
    for (double v : grads.params) CHECK(v == 0.0);
    for (double v : grads.input) CHECK(v == 0.0);
}

TEST_CASE("backward: linear y = w*x + b analytic case") {
    nn::ParamGraph g;
    g.layer_sizes = {1, 1};
    g.activations = {nn::Act::identity};
    g.params = {3.0, 0.5};  // w, b
    const auto grads = nn::backward(g, std::vector<double>{2.0}, std::vector<double>{1.0});
    CHECK(grads.params[0] == doctest::Approx(2.0));  // dw = x
    CHECK(grads.params[1] == doctest::Approx(1.0));  // db = 1
    CHECK(grads.input[0] == doctest::Approx(3.0));   // dx = w
}

TEST_CASE("backward: seeded 3-8-2 tanh net matches central finite differences") {
    const auto g = nn::make_mlp(3, {8}, 2, 11, nn::Act::tanh);
    Rng rng(99);
    std::vector<double> x(3), up(2);
    for (auto& v : x) v = rng.uniform(-1, 1);
    for (auto& v : up) v = rng.uniform(-1, 1);
    CHECK(fd_max_rel_error(g, x, up, 1e-5) <= 1e-4);
}

TEST_CASE("backward: finite differences across downstream architectures, 32 probes each") {
    struct Arch {
        std::vector<int> sizes;
        nn::Act act;
    };
    // Shapes mirroring desk-preset policy / critic / encoder / decoder nets.
    const std::vector<Arch> archs = {{{2, 32, 32, 2}, nn::Act::relu},
                                     {{6, 32, 32, 1}, nn::Act::relu},
                                     {{4, 32, 32, 32}, nn::Act::relu},
                                     {{20, 32, 32, 4}, nn::Act::relu},
                                     {{3, 16, 16, 2}, nn::Act::tanh}};
    for (const auto& arch : archs) {
        for (int probe = 0; probe < 32; ++probe) {
            std::vector<nn::Act> acts(arch.sizes.size() - 1, arch.act);
            acts.back() = nn::Act::identity;
            Rng rng(derive_seed(1000 + probe, "fd"));
            nn::ParamGraph g;
            std::vector<double> x(static_cast<std::size_t>(arch.sizes.front()));
            do {
                g = nn::make_mlp(arch.sizes, acts, derive_seed(500 + probe, "arch"));
                for (auto& v : x) v = rng.uniform(-1, 1);
            } while (near_relu_kink(g, x));
            std::vector<double> up(static_cast<std::size_t>(arch.sizes.back()));
            for (auto& v : up) v = rng.uniform(-1, 1);
            CHECK(fd_max_rel_error(g, x, up, 1e-5) <= 1e-4);
        }
    }
}

TEST_CASE("forward/backward: bit-deterministic") {
    const auto g = nn::make_mlp(4, {16, 16}, 3, 5, nn::Act::relu);
    const std::vector<double> x = {0.3, -0.4, 0.9, 0.01};
    const std::vector<double> up = {1.0, -2.0, 0.5};
    const auto y1 = nn::forward(g, x);
    const auto y2 = nn::forward(g, x);
    CHECK(y1 == y2);
    const auto g1 = nn::backward(g, x, up);
    const auto g2 = nn::backward(g, x, up);
    CHECK(g1.params == g2.params);
    CHECK(g1.input == g2.input);
}

TEST_CASE("make_mlp: param_count matches sum over layers and init is seed-stable") {
    const auto g = nn::make_mlp(3, {7, 5}, 2, 123);
    CHECK(g.param_count() == 3 * 7 + 7 + 7 * 5 + 5 + 5 * 2 + 2);
    const auto g2 = nn::make_mlp(3, {7, 5}, 2, 123);
    CHECK(g.params == g2.params);
    const auto g3 = nn::make_mlp(3, {7, 5}, 2, 124);
    CHECK(g.params != g3.params);
}

TEST_CASE("adam: zero grads leave params unchanged and bump the step") {
    auto st = nn::make_adam(3, 1e-3);
    const std::vector<double> params = {1.0, -2.0, 0.5};
    const std::vector<double> grads = {0.0, 0.0, 0.0};
    const auto [p2, st2] = nn::adam_step(st, params, grads);
    CHECK(p2 == params);
    CHECK(st2.step == 1);
}

TEST_CASE("adam: global-norm clip scales gradients before the moment update") {
    // One step from zero moments: the update direction depends only on the
    // normalized gradient, so clipped and pre-scaled gradients must agree.
    auto st1 = nn::make_adam(2, 1e-3, 1.0);
    auto st2 = nn::make_adam(2, 1e-3, 0.0);  // no clipping
    std::vector<double> p1 = {0.0, 0.0}, p2 = {0.0, 0.0};
    const std::vector<double> big = {6.0, 8.0};     // norm 10
    const std::vector<double> scaled = {0.6, 0.8};  // same, pre-scaled by 0.1
    nn::adam_step_inplace(st1, p1, big);
    nn::adam_step_inplace(st2, p2, scaled);
    CHECK(p1[0] == doctest::Approx(p2[0]).epsilon(1e-12));
    CHECK(p1[1] == doctest::Approx(p2[1]).epsilon(1e-12));
    CHECK(st1.first_moment[0] == doctest::Approx(st2.first_moment[0]).epsilon(1e-12));
}

TEST_CASE("adam: hand-computed first step with constant gradient") {
    auto st = nn::make_adam(1, 0.1);
    std::vector<double> p = {0.0};
    nn::adam_step_inplace(st, p, std::vector<double>{1.0});
    // Bias-corrected first step: mhat = 1, vhat = 1 -> update = lr/(1+eps).
    CHECK(p[0] == doctest::Approx(-0.1).epsilon(1e-6));
}

TEST_CASE("adam: applied update stays within lr * bias-correction envelope") {
    auto st = nn::make_adam(8, 3e-4);
    std::vector<double> p(8, 0.0);
    Rng rng(7);
    for (int t = 1; t <= 200; ++t) {
        std::vector<double> g(8);
        for (auto& v : g) v = rng.normal(0, 2.0);
        const auto before = p;
        nn::adam_step_inplace(st, p, g);
        const double bc = std::sqrt(1.0 - std::pow(st.beta2, t)) / (1.0 - std::pow(st.beta1, t));
        for (int i = 0; i < 8; ++i)
            CHECK(std::abs(p[static_cast<std::size_t>(i)] - before[static_cast<std::size_t>(i)]) <=
                  st.learning_rate * (1.0 + bc) * (1.0 + 1e-9));
    }
}

TEST_CASE("adam: NaN gradient aborts with a training-divergence error") {
    auto st = nn::make_adam(2, 1e-3);
    std::vector<double> p = {0.0, 0.0};
    const std::vector<double> g = {1.0, std::nan("")};
    CHECK_THROWS_AS(nn::adam_step_inplace(st, p, g), TrainingDivergence);
}

TEST_CASE("polyak: tau=1 returns online") {
    const std::vector<double> target = {1, 2, 3}, online = {4, 5, 6};
    CHECK(nn::polyak_update(target, online, 1.0) == online);
}

TEST_CASE("polyak: paper default tau") {
    const auto out = nn::polyak_update(std::vector<double>{0.0}, std::vector<double>{1.0}, 0.005);
    CHECK(out[0] == doctest::Approx(0.005));
}

TEST_CASE("polyak: fixed point for equal vectors") {
    const std::vector<double> v = {0.25, -1.5, 3.0};
    for (double tau : {0.001, 0.5, 1.0}) {
        const auto out = nn::polyak_update(v, v, tau);
        for (std::size_t i = 0; i < v.size(); ++i)
            CHECK(out[i] == doctest::Approx(v[i]).epsilon(1e-15));
    }
}

TEST_CASE("polyak: length mismatch rejected") {
    CHECK_THROWS_AS(nn::polyak_update(std::vector<double>{1.0}, std::vector<double>{1.0, 2.0}, 0.5),
                    DimensionError);
}

TEST_CASE("gaussian head: NLL gradient matches finite differences") {
    const int dim = 3;
    Rng rng(21);
    std::vector<double> raw(2 * dim), sample(dim), grad(2 * dim);
    for (auto& v : raw) v = rng.uniform(-1.5, 1.5);
    for (auto& v : sample) v = rng.uniform(-1, 1);
    const double base = nn::GaussianHead::nll(raw, sample, grad);
    CHECK(std::isfinite(base));
    const double h = 1e-6;
    for (int i = 0; i < 2 * dim; ++i) {
        auto rp = raw;
        rp[static_cast<std::size_t>(i)] += h;
        std::vector<double> tmp(2 * dim);
        const double fp = nn::GaussianHead::nll(rp, sample, tmp);
        rp[static_cast<std::size_t>(i)] -= 2 * h;
        const double fm = nn::GaussianHead::nll(rp, sample, tmp);
        CHECK(grad[static_cast<std::size_t>(i)] ==
              doctest::Approx((fp - fm) / (2 * h)).epsilon(1e-4));
    }
}

TEST_CASE("checkpoint: round trip preserves entries bit-exactly") {
    Checkpoint ck;
    ck.put("alpha", {1.0, 2.5, -3.75});
    ck.put("beta", {0.1, 0.2, 0.3, 0.4}, {2, 2});
    ck.put_scalar("gamma", 0.99);
    const auto bytes = ck.serialize();
    const auto ck2 = Checkpoint::deserialize(bytes.data(), bytes.size());
    CHECK(ck2.get("alpha") == ck.get("alpha"));
    CHECK(ck2.get("beta") == ck.get("beta"));
    CHECK(ck2.entries.at("beta").dims == std::vector<std::uint32_t>{2, 2});
    CHECK(ck2.get_scalar("gamma") == 0.99);
    const auto bytes2 = ck2.serialize();
    CHECK(bytes == bytes2);
}

TEST_CASE("checkpoint: bad magic rejected") {
    std::vector<std::uint8_t> junk = {'N', 'O', 'P', 'E', 0, 0, 0, 0, 1, 0, 0, 0};
    CHECK_THROWS_AS(Checkpoint::deserialize(junk.data(), junk.size()), IoError);
}
