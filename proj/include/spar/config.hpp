#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spar/envs.hpp"
#include "spar/stage1.hpp"
#include "spar/stage2.hpp"
#include "spar/stage3.hpp"
#include "spar/weighting.hpp"

namespace spar {

// Flat dotted-key configuration. Fields marked "auto" (or negative sentinels)
// resolve per environment; raw defaults stay at the global table values so
// serialization round-trips exactly.
struct RunConfig {
    std::string env = "unimodal-quad";
    std::string behavior = "auto";
    std::vector<std::uint64_t> seeds = {0, 42, 123};
    bool desk_scale = false;
    std::string output_dir = "spar_out";

    int dataset_size = 1'000'000;
    double rho = 0.05;

    int stage1_steps = 1'000'000;
    int batch = 256;
    double learning_rate = 3e-4;
    double gamma = 0.99;
    double polyak_tau = 0.005;
    double expectile_tau = -1.0;  // auto: 0.5, 0.9 on branch-maze
    double value_expectile = 0.7;
    int num_critics = 10;
    double lambda_u = 0.5;
    int hidden = 256;
    double grad_clip = 1.0;

    std::string variant = "auto";  // mlp on unimodal-quad, proj elsewhere
    int stage2_steps = 1'000'000;
    double lambda_g = 0.5;
    int latent_dim = 16;
    double beta_kl = 0.5;
    double recon_weight = 1.0;
    int candidates = 64;
    int projection_period = 10;
    double ema_tau = 0.005;

    std::string sensitivity = "exponential";
    std::string filter = "auto";       // hard on the quad/bandit analogues, soft elsewhere
    double temperature = -1.0;         // auto: 1.0 on unimodal-quad, 0.3 elsewhere
    double weight_clip = 100.0;

    double eta_abs = 1e-4;
    double eta_rel = 0.01;
    double gate_epsilon = 1e-8;
    int k_infer = 10;

    int eval_freq = 50'000;
    int log_freq = 1'000;
    int eval_episodes = 20;
    int max_consecutive_errors = 10;

    bool operator==(const RunConfig&) const = default;

    // --- resolved (effective) values ---
    EnvName env_name() const { return env_name_from_string(env); }
    BehaviorTier resolved_behavior() const;
    Stage2Variant resolved_variant() const;
    double resolved_expectile_tau() const;
    Filter resolved_filter() const;
    double resolved_temperature() const;

    int effective_stage1_steps() const { return desk_scale ? 20'000 : stage1_steps; }
    int effective_stage2_steps() const { return desk_scale ? 20'000 : stage2_steps; }
    int effective_dataset_size() const { return desk_scale ? 50'000 : dataset_size; }
    int effective_eval_freq() const { return desk_scale ? 1'000 : eval_freq; }
    // The desk preset also narrows the networks so a full pipeline run fits in
    // minutes on one core.
    std::vector<int> effective_hidden() const;
    std::vector<int> effective_cvae_hidden() const;

    WeightingConfig weighting_config() const;
    Stage1Config stage1_config(std::uint64_t seed) const;
    Stage2Config stage2_config(std::uint64_t seed) const;
    GateConfig gate_config() const;

    void set(const std::string& key, const std::string& value);
    std::string get(const std::string& key) const;
    static std::vector<std::string> keys();

    std::string serialize() const;
    static RunConfig parse(const std::string& text);
    static RunConfig load_file(const std::string& path);
    void save_file(const std::string& path) const;
};

}  // namespace spar
