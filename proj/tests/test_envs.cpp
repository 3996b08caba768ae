#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "spar/dataset.hpp"
#include "spar/envs.hpp"
#include "spar/errors.hpp"

using namespace spar;

namespace {

double l2(std::span<const double> a, std::span<const double> b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

}  // namespace

TEST_CASE("make_env: unknown name rejected") {
    CHECK_THROWS_AS(make_env("no-such-env"), ConfigError);
}

TEST_CASE("unimodal-quad: optimal action attains Q* = 0") {
    const auto env = make_env(EnvName::unimodal_quad);
    Rng rng(3);
    for (int i = 0; i < 50; ++i) {
        const auto s = env.initial_state(rng);
        const auto a = env.optimal_action(s);
        CHECK(env.q_star(s, a) == doctest::Approx(0.0).epsilon(1e-12));
    }
}

TEST_CASE("bimodal-bandit: the two modes score identically") {
    const auto env = make_env(EnvName::bimodal_bandit);
    Rng rng(4);
    for (int i = 0; i < 50; ++i) {
        const auto s = env.initial_state(rng);
        auto a = env.optimal_action(s);
        const double qp = env.q_star(s, a);
        for (auto& v : a) v = -v;
        CHECK(env.q_star(s, a) == doctest::Approx(qp).epsilon(1e-12));
    }
}

TEST_CASE("narrow-ridge: behavior data stays within 0.05 of the ridge (q95)") {
    const auto env = make_env(EnvName::narrow_ridge);
    const auto ds = generate_dataset(env, BehaviorTier::medium, 2000, 9);
    std::vector<double> dists;
    for (const auto& tr : ds.transitions) dists.push_back(env.ridge_distance(tr.action));
    CHECK(quantile_nearest_rank(dists, 0.95) <= 0.05);
}

TEST_CASE("lipschitz probe: |Q*(s,a)-Q*(s,a')| <= L ||a-a'|| on 1e4 triples per env") {
    for (const auto name : {EnvName::unimodal_quad, EnvName::bimodal_bandit,
                            EnvName::narrow_ridge, EnvName::branch_maze}) {
        const auto env = make_env(name);
        Rng rng(derive_seed(17, to_string(name)));
        for (int i = 0; i < 10000; ++i) {
            const auto s = env.initial_state(rng);
            std::vector<double> a(static_cast<std::size_t>(env.action_dim())),
                a2(static_cast<std::size_t>(env.action_dim()));
            for (auto& v : a) v = rng.uniform(-1, 1);
            for (auto& v : a2) v = rng.uniform(-1, 1);
            const double dq = std::abs(env.q_star(s, a) - env.q_star(s, a2));
            CHECK(dq <= env.lipschitz_bound() * l2(a, a2) + 1e-12);
        }
    }
}

TEST_CASE("generate_dataset: deterministic at byte level per seed") {
    const auto env = make_env(EnvName::unimodal_quad);
    const auto d1 = generate_dataset(env, BehaviorTier::medium, 1000, 42);
    const auto d2 = generate_dataset(env, BehaviorTier::medium, 1000, 42);
    CHECK(serialize_dataset(d1) == serialize_dataset(d2));
    const auto d3 = generate_dataset(env, BehaviorTier::medium, 1000, 43);
    CHECK(serialize_dataset(d1) != serialize_dataset(d3));
}

TEST_CASE("generate_dataset: n below 1000 rejected") {
    const auto env = make_env(EnvName::unimodal_quad);
    CHECK_THROWS_AS(generate_dataset(env, BehaviorTier::medium, 999, 0), DimensionError);
}

TEST_CASE("medium tier on unimodal-quad: mean oracle regret in (0.05, 0.5)") {
    const auto env = make_env(EnvName::unimodal_quad);
    const auto ds = generate_dataset(env, BehaviorTier::medium, 5000, 0);
    double regret = 0.0;
    for (const auto& tr : ds.transitions)
        regret += (env.optimal_value(tr.state) - env.q_star(tr.state, tr.action)) / ds.size();
    CHECK(regret > 0.05);
    CHECK(regret < 0.5);
}

TEST_CASE("mixture-expert on bimodal-bandit: mode split balanced") {
    const auto env = make_env(EnvName::bimodal_bandit);
    const auto ds = generate_dataset(env, BehaviorTier::mixture_expert, 5000, 1);
    int near_plus = 0;
    for (const auto& tr : ds.transitions) {
        const auto mode = env.optimal_action(tr.state);
        auto neg = mode;
        for (auto& v : neg) v = -v;
        if (l2(tr.action, mode) < l2(tr.action, neg)) ++near_plus;
    }
    const double frac = static_cast<double>(near_plus) / ds.size();
    CHECK(frac > 0.35);
    CHECK(frac < 0.65);
}

TEST_CASE("normalization: per-dim mean ~0 and std ~1 over the dataset") {
    const auto env = make_env(EnvName::bimodal_bandit);
    auto ds = generate_dataset(env, BehaviorTier::medium, 4000, 5);
    std::vector<double> mean(static_cast<std::size_t>(ds.d_s), 0.0),
        var(static_cast<std::size_t>(ds.d_s), 0.0);
    std::vector<double> norm(static_cast<std::size_t>(ds.d_s));
    for (const auto& tr : ds.transitions) {
        ds.normalize_state(tr.state, norm);
        for (int i = 0; i < ds.d_s; ++i) mean[static_cast<std::size_t>(i)] += norm[static_cast<std::size_t>(i)] / ds.size();
    }
    for (const auto& tr : ds.transitions) {
        ds.normalize_state(tr.state, norm);
        for (int i = 0; i < ds.d_s; ++i) {
            const double d = norm[static_cast<std::size_t>(i)] - mean[static_cast<std::size_t>(i)];
            var[static_cast<std::size_t>(i)] += d * d / ds.size();
        }
    }
    for (int i = 0; i < ds.d_s; ++i) {
        CHECK(std::abs(mean[static_cast<std::size_t>(i)]) <= 1e-9);
        CHECK(std::abs(std::sqrt(var[static_cast<std::size_t>(i)]) - 1.0) <= 1e-9);
    }
}

TEST_CASE("residual_stats: nearest-rank quantile matches brute-force sort") {
    const auto env = make_env(EnvName::unimodal_quad);
    auto ds = generate_dataset(env, BehaviorTier::medium, 2000, 2);
    auto base = nn::make_mlp(2, {8}, 2, 77);
    const double rho = 0.05;
    const auto st = residual_stats(ds, base, rho);

    std::vector<double> mags;
    std::vector<double> norm(static_cast<std::size_t>(ds.d_s));
    for (const auto& tr : ds.transitions) {
        ds.normalize_state(tr.state, norm);
        const auto out = nn::forward(base, norm);
        double m = 0;
        for (int i = 0; i < ds.d_a; ++i)
            m += (tr.action[static_cast<std::size_t>(i)] - out[static_cast<std::size_t>(i)]) *
                 (tr.action[static_cast<std::size_t>(i)] - out[static_cast<std::size_t>(i)]);
        mags.push_back(std::sqrt(m));
    }
    std::sort(mags.begin(), mags.end());
    const auto rank = static_cast<std::size_t>(std::ceil(0.95 * mags.size()));
    CHECK(st.delta_rho == mags[rank - 1]);

    // Quantile definition: at least 95% of magnitudes are <= delta_rho.
    int covered = 0;
    for (double m : mags) covered += m <= st.delta_rho ? 1 : 0;
    CHECK(static_cast<double>(covered) / mags.size() >= 0.95);
}

TEST_CASE("residual_stats: contraction delta_rho < D_A on the medium dataset") {
    const auto env = make_env(EnvName::unimodal_quad);
    auto ds = generate_dataset(env, BehaviorTier::medium, 3000, 3);
    // A base fitted perfectly would give tighter residuals; even an untrained
    // net keeps the quantile under the dataset action diameter here.
    auto base = nn::make_mlp(2, {8}, 2, 12);
    const auto st = residual_stats(ds, base, 0.05);
    CHECK(st.delta_rho < st.action_diameter);
    CHECK(st.action_diameter > 0.0);
}

TEST_CASE("residual_stats: zero residuals when the base reproduces the data") {
    // Constant-action dataset and a bias-only net outputting that constant.
    const auto env = make_env(EnvName::unimodal_quad);
    auto ds = generate_dataset(env, BehaviorTier::medium, 1000, 8);
    for (auto& tr : ds.transitions) tr.action = {0.25, -0.5};
    nn::ParamGraph base;
    base.layer_sizes = {2, 2};
    base.activations = {nn::Act::identity};
    base.params = {0, 0, 0, 0, 0.25, -0.5};
    const auto st = residual_stats(ds, base, 0.05);
    CHECK(st.delta_rho == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("residual_stats: empty dataset rejected") {
    OfflineDataset ds;
    ds.d_s = 2;
    ds.d_a = 2;
    auto base = nn::make_mlp(2, {4}, 2, 1);
    CHECK_THROWS_AS(residual_stats(ds, base, 0.05), DimensionError);
}

TEST_CASE("dataset file: round trip preserves bytes") {
    const auto env = make_env(EnvName::narrow_ridge);
    const auto ds = generate_dataset(env, BehaviorTier::medium, 1000, 6);
    const auto path = std::filesystem::temp_directory_path() / "spar_test_dataset.bin";
    save_dataset(ds, path.string());
    const auto ds2 = load_dataset(path.string());
    CHECK(ds2.size() == ds.size());
    CHECK(ds2.d_s == ds.d_s);
    CHECK(ds2.d_a == ds.d_a);
    CHECK(ds2.meta.env_name == "narrow-ridge");
    CHECK(ds2.meta.seed == 6);
    // Second write of the loaded dataset must be byte-identical.
    const auto path2 = std::filesystem::temp_directory_path() / "spar_test_dataset2.bin";
    save_dataset(ds2, path2.string());
    std::ifstream f1(path, std::ios::binary), f2(path2, std::ios::binary);
    const std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    const std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
    std::filesystem::remove(path);
    std::filesystem::remove(path2);
}

TEST_CASE("dataset file: bad magic rejected") {
    const auto path = std::filesystem::temp_directory_path() / "spar_bad_dataset.bin";
    std::ofstream f(path, std::ios::binary);
    f << "NOTSPARD00000000";
    f.close();
    CHECK_THROWS_AS(load_dataset(path.string()), IoError);
    std::filesystem::remove(path);
}

TEST_CASE("branch-maze: episodic rollouts terminate at the goal with reward shift") {
    const auto env = make_env(EnvName::branch_maze);
    CHECK(env.horizon() == 60);
    CHECK(env.reward_shift() == -1.0);
    const auto ds = generate_dataset(env, BehaviorTier::sparse_diverse, 3000, 11);
    int dones = 0;
    for (const auto& tr : ds.transitions) {
        CHECK(tr.reward >= -1.0);
        CHECK(tr.reward <= 0.0);  // shifted sparse reward
        dones += tr.done ? 1 : 0;
        if (tr.done) CHECK(tr.reward == doctest::Approx(0.0));
    }
    CHECK(dones > 0);  // some episodes reach the goal
}

TEST_CASE("branch-maze: actions clipped to the box and states inside corridors") {
    const auto env = make_env(EnvName::branch_maze);
    const auto ds = generate_dataset(env, BehaviorTier::sparse_diverse, 1500, 13);
    for (const auto& tr : ds.transitions)
        for (double a : tr.action) {
            CHECK(a >= -1.0);
            CHECK(a <= 1.0);
        }
}
