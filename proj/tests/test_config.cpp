#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "spar/config.hpp"
#include "spar/errors.hpp"

using namespace spar;

TEST_CASE("defaults match the shared hyperparameter table") {
    RunConfig cfg;
    CHECK(cfg.batch == 256);
    CHECK(cfg.gamma == 0.99);
    CHECK(cfg.hidden == 256);
    CHECK(cfg.latent_dim == 16);
    CHECK(cfg.beta_kl == 0.5);
    CHECK(cfg.recon_weight == 1.0);
    CHECK(cfg.learning_rate == 3e-4);
    CHECK(cfg.num_critics == 10);
    CHECK(cfg.candidates == 64);
    CHECK(cfg.k_infer == 10);
    CHECK(cfg.projection_period == 10);
    CHECK(cfg.ema_tau == 0.005);
    CHECK(cfg.polyak_tau == 0.005);
    CHECK(cfg.eta_abs == 1e-4);
    CHECK(cfg.eta_rel == 0.01);
    CHECK(cfg.grad_clip == 1.0);
    CHECK(cfg.lambda_g == 0.5);
    CHECK(cfg.lambda_u == 0.5);
    CHECK(cfg.stage1_steps == 1'000'000);
    CHECK(cfg.stage2_steps == 1'000'000);
    CHECK(cfg.dataset_size == 1'000'000);
    CHECK(cfg.eval_freq == 50'000);
    CHECK(cfg.max_consecutive_errors == 10);
    CHECK(cfg.rho == 0.05);
    CHECK(cfg.seeds == std::vector<std::uint64_t>{0, 42, 123});
    // Subsets of 4 are structural in stage 1.
    const auto s1 = cfg.stage1_config(0);
    CHECK(s1.num_critics == 10);
}

TEST_CASE("desk preset shrinks steps, data and eval frequency") {
    RunConfig cfg;
    cfg.desk_scale = true;
    CHECK(cfg.effective_stage1_steps() == 20'000);
    CHECK(cfg.effective_stage2_steps() == 20'000);
    CHECK(cfg.effective_dataset_size() == 50'000);
    CHECK(cfg.effective_eval_freq() == 1'000);
}

TEST_CASE("per-environment auto resolution") {
    RunConfig cfg;
    cfg.env = "unimodal-quad";
    CHECK(cfg.resolved_variant() == Stage2Variant::mlp);
    CHECK(cfg.resolved_expectile_tau() == 0.5);
    CHECK(cfg.resolved_filter() == Filter::hard);
    CHECK(cfg.resolved_temperature() == 1.0);
    CHECK(cfg.resolved_behavior() == BehaviorTier::medium);

    cfg.env = "branch-maze";
    CHECK(cfg.resolved_variant() == Stage2Variant::proj);
    CHECK(cfg.resolved_expectile_tau() == 0.9);
    CHECK(cfg.resolved_filter() == Filter::soft);
    CHECK(cfg.resolved_temperature() == 0.3);
    CHECK(cfg.resolved_behavior() == BehaviorTier::sparse_diverse);

    cfg.expectile_tau = 0.7;
    CHECK(cfg.resolved_expectile_tau() == 0.7);
    cfg.variant = "plas";
    CHECK(cfg.resolved_variant() == Stage2Variant::plas);
}

TEST_CASE("round trip: parse(serialize(cfg)) == cfg") {
    RunConfig cfg;
    cfg.env = "narrow-ridge";
    cfg.seeds = {7, 9};
    cfg.desk_scale = true;
    cfg.lambda_g = 2.0;
    cfg.temperature = 0.1;
    cfg.filter = "hard";
    cfg.output_dir = "/tmp/spar_xyz";
    const auto cfg2 = RunConfig::parse(cfg.serialize());
    CHECK(cfg2 == cfg);
}

TEST_CASE("unknown keys rejected") {
    RunConfig cfg;
    CHECK_THROWS_AS(cfg.set("no.such.key", "1"), ConfigError);
    CHECK_THROWS_AS(RunConfig::parse("bogus = 1\n"), ConfigError);
}

TEST_CASE("malformed values rejected") {
    RunConfig cfg;
    CHECK_THROWS_AS(cfg.set("stage1.steps", "ten"), ConfigError);
    CHECK_THROWS_AS(cfg.set("desk_scale", "maybe"), ConfigError);
    CHECK_THROWS_AS(cfg.set("stage1.lr", "fast"), ConfigError);
    CHECK_THROWS_AS(RunConfig::parse("env unimodal-quad\n"), ConfigError);
}

TEST_CASE("comments and blank lines are tolerated") {
    const auto cfg = RunConfig::parse("# comment\n\nenv = bimodal-bandit # trailing\n");
    CHECK(cfg.env == "bimodal-bandit");
}

TEST_CASE("set/get round trip through string keys") {
    RunConfig cfg;
    cfg.set("stage2.lambda_g", "2");
    CHECK(cfg.lambda_g == 2.0);
    CHECK(cfg.get("stage2.lambda_g") == "2");
    cfg.set("seeds", "1, 2,3");
    CHECK(cfg.seeds == std::vector<std::uint64_t>{1, 2, 3});
    CHECK(cfg.get("seeds") == "1,2,3");
}
