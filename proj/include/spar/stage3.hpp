#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "spar/envs.hpp"
#include "spar/stage1.hpp"
#include "spar/stage2.hpp"

namespace spar {

struct GateConfig {
    double eta_abs = 1e-4;
    double eta_rel = 0.01;
    double epsilon = 1e-8;  // relative-gain denominator guard
    int k_infer = 10;       // candidates for generative variants; 1 for mlp/plas
};

struct GateCandidate {
    std::vector<double> action;
    double delta_q = 0.0;
    double rel_gain = 0.0;
};

struct GateDecision {
    std::vector<double> chosen_action;
    bool accepted = false;
    double base_q = 0.0;
    std::vector<GateCandidate> candidates;
    int best_index = 0;
};

// Dual-threshold rectification: accept the best candidate iff its predicted
// improvement clears both the absolute and relative thresholds; otherwise
// fall back to the anchor action. Total: never throws on valid inputs.
GateDecision gate_act(const AnchorBundle& bundle, const ResidualPolicy& policy,
                      const GateConfig& cfg, std::span<const double> raw_s, Rng& rng);

struct EvalResult {
    double mean_return = 0.0;
    double regret = 0.0;        // oracle regret per decision (bandit tasks)
    double accept_rate = 0.0;
    double success_rate = 0.0;  // goal-reaching fraction (episodic tasks)
    int episodes = 0;
    int steps = 0;
};

struct EvalRecord {
    int step = 0;
    bool accepted = false;
    double delta_q = 0.0;
    double rel_gain = 0.0;
    std::vector<double> action;
};

// Rolls out the gated policy; policy == nullptr evaluates the bare anchor.
EvalResult evaluate_policy(const OracleEnv& env, const AnchorBundle& bundle,
                           const ResidualPolicy* policy, const GateConfig& cfg, int episodes,
                           std::uint64_t seed, std::vector<EvalRecord>* records = nullptr);

// Length-prefixed binary rows (u32 length, then step u32, accepted u8,
// delta_q f64, rel_gain f64, action f32[d_a]).
void save_eval_records(const std::vector<EvalRecord>& records, const std::string& path);
std::vector<EvalRecord> load_eval_records(const std::string& path);

}  // namespace spar
