#pragma once

#include <string>
#include <vector>

#include "spar/config.hpp"
#include "spar/diagnostics.hpp"
#include "spar/stage3.hpp"
#include "spar/theory.hpp"

namespace spar {

struct SeedOutcome {
    std::uint64_t seed = 0;
    double score = 0.0;  // mean return (bandits) / success rate (episodic)
    double regret = 0.0;
    double accept_rate = 0.0;
    double success_rate = 0.0;
};

struct RunSummary {
    std::string env;
    std::string variant;
    std::string behavior;
    std::vector<SeedOutcome> per_seed;
    double mean_score = 0.0;
    double std_score = 0.0;
    double mean_regret = 0.0;
    double mean_accept = 0.0;
};

struct StagePaths {
    std::string seed_dir;
    std::string dataset;
    std::string stage1_ckpt;
    std::string stage2_ckpt;
    std::string metrics;
    std::string timing;
    std::string eval_records;
    std::string eval_summary;
};

StagePaths seed_paths(const std::string& out_dir, std::uint64_t seed, const std::string& variant);

// Individual pipeline steps (each skips work whose artifact already exists,
// so a rerun resumes deterministically).
void ensure_dataset(const RunConfig& cfg, std::uint64_t seed, const std::string& path);
void ensure_stage1(const RunConfig& cfg, std::uint64_t seed, const std::string& dataset_path,
                   const std::string& ckpt_path, const std::string& metrics_path,
                   const std::string& timing_path);
void ensure_stage2(const RunConfig& cfg, std::uint64_t seed, const std::string& dataset_path,
                   const std::string& stage1_path, const std::string& ckpt_path,
                   const std::string& metrics_path, const std::string& timing_path);
SeedOutcome run_eval(const RunConfig& cfg, std::uint64_t seed, const std::string& stage1_path,
                     const std::string& stage2_path, const std::string& records_path,
                     const std::string& summary_path);

// Full pipeline across cfg.seeds; writes per-seed artifacts plus summary.txt
// (mean and std over seeds) under out_dir.
RunSummary run_pipeline(const RunConfig& cfg, const std::string& out_dir);

enum class AblationAxis : int { lambda_g = 0, lambda_u = 1, temperature_filter = 2,
                                gate_thresholds = 3 };

AblationAxis ablation_axis_from_string(const std::string& s);
std::string to_string(AblationAxis a);

struct AblationCell {
    std::string label;
    RunSummary summary;
};

struct AblationTable {
    AblationAxis axis = AblationAxis::lambda_g;
    std::vector<AblationCell> cells;
};

// Paper-grid ablations; stage-1 artifacts are shared across cells.
AblationTable ablation_grid(const RunConfig& cfg, AblationAxis axis, const std::string& out_dir);
void write_ablation_table(const AblationTable& table, const std::string& path);

// Diagnostics entry points backing the `diagnose` subcommands; each writes a
// key=value summary file and returns the headline numbers.
struct ConflictSummary {
    double mlp_dd = 0.0, mlp_vsd = 0.0;
    double plas_dd = 0.0, plas_vsd = 0.0;
    double proj_dd = 0.0, proj_vsd = 0.0;
    int probes = 0;
};
ConflictSummary diagnose_conflict(const RunConfig& cfg, const std::string& dataset_path,
                                  const std::string& stage1_path, const std::string& out_path);

SupportReport diagnose_support(const RunConfig& cfg, const std::string& dataset_path,
                               const std::string& stage1_path, const std::string& stage2_path,
                               const std::string& out_path);

GeometrySummary diagnose_geometry(const RunConfig& cfg, const std::string& dataset_path,
                                  const std::string& stage1_path, const std::string& out_path);

// Theory verification backing `verify-theory`; writes a pass/fail table plus
// raw trial data and returns overall success.
bool verify_theory_complexity(const std::string& out_path, std::uint64_t seed);
bool verify_theory_bias(const RunConfig& cfg, const std::string& out_path, std::uint64_t seed);
bool verify_theory_drift(const std::string& out_path, std::uint64_t seed);

}  // namespace spar
