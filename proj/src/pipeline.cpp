#include "spar/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "spar/errors.hpp"
#include "spar/metrics.hpp"

namespace spar {

namespace fs = std::filesystem;

namespace {

double now_seconds() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

void append_timing(const std::string& path, const std::string& phase, double seconds) {
    if (path.empty()) return;
    std::ofstream f(path, std::ios::app);
    f << phase << " wallclock_sec=" << seconds << "\n";
}

double score_of(const OracleEnv& env, const EvalResult& res) {
    return env.episodic() ? res.success_rate : res.mean_return;
}

void write_kv_file(const std::string& path,
                   const std::vector<std::pair<std::string, std::string>>& kvs) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    for (const auto& [k, v] : kvs) f << k << "=" << v << "\n";
}

std::string fmt(double v) { return MetricsLog::format_value(v); }

ResidualPolicy policy_snapshot(Stage2Variant variant, const MlpTrainer* mlp,
                               const ProjTrainer* proj, const PlasTrainer* plas) {
    ResidualPolicy p;
    p.variant = variant;
    switch (variant) {
        case Stage2Variant::mlp: p.mlp = mlp->finish(); break;
        case Stage2Variant::cvae:
        case Stage2Variant::proj: p.proj = proj->finish(); break;
        case Stage2Variant::plas: p.plas = plas->finish(); break;
    }
    return p;
}

}  // namespace

StagePaths seed_paths(const std::string& out_dir, std::uint64_t seed, const std::string& variant) {
    StagePaths p;
    p.seed_dir = out_dir + "/seed" + std::to_string(seed);
    p.dataset = p.seed_dir + "/dataset.bin";
    p.stage1_ckpt = p.seed_dir + "/stage1.ckpt";
    p.stage2_ckpt = p.seed_dir + "/stage2_" + variant + ".ckpt";
    p.metrics = p.seed_dir + "/metrics.log";
    p.timing = p.seed_dir + "/timing.log";
    p.eval_records = p.seed_dir + "/eval_records_" + variant + ".bin";
    p.eval_summary = p.seed_dir + "/eval_summary_" + variant + ".txt";
    return p;
}

void ensure_dataset(const RunConfig& cfg, std::uint64_t seed, const std::string& path) {
    if (fs::exists(path)) return;
    const auto env = make_env(cfg.env_name());
    const auto ds = generate_dataset(env, cfg.resolved_behavior(), cfg.effective_dataset_size(),
                                     seed);
    save_dataset(ds, path);
}

void ensure_stage1(const RunConfig& cfg, std::uint64_t seed, const std::string& dataset_path,
                   const std::string& ckpt_path, const std::string& metrics_path,
                   const std::string& timing_path) {
    if (fs::exists(ckpt_path)) return;
    const auto t0 = now_seconds();
    const auto ds = load_dataset(dataset_path);
    const auto env = make_env(cfg.env_name());

    MetricsLog metrics(metrics_path);
    Stage1Trainer trainer(ds, cfg.stage1_config(seed));
    const int steps = cfg.effective_stage1_steps();
    const int log_every = std::max(1, cfg.log_freq);
    const int eval_every = std::max(1, cfg.effective_eval_freq());
    for (int s = 1; s <= steps; ++s) {
        trainer.step();
        if (s % log_every == 0)
            metrics.row(s, "stage1",
                        {{"bc_loss", trainer.last_bc_loss()},
                         {"critic_loss", trainer.last_critic_loss()},
                         {"value_loss", trainer.last_value_loss()}});
        if (s % eval_every == 0) {
            Rng eval_rng(derive_seed(seed, "stage1-eval" + std::to_string(s)));
            double total = 0.0;
            int episodes = 8, eval_steps = 0;
            for (int ep = 0; ep < episodes; ++ep) {
                auto st = env.initial_state(eval_rng);
                for (int t = 0; t < env.horizon(); ++t) {
                    const auto a = trainer.base_action(st);
                    auto sr = env.step(st, a, eval_rng);
                    total += sr.reward;
                    ++eval_steps;
                    if (sr.done) break;
                    st = sr.next_state;
                }
            }
            metrics.row(s, "stage1_eval", {{"eval_return", total / episodes}});
        }
    }
    auto bundle = trainer.finish();
    bundle.to_checkpoint().save(ckpt_path);
    append_timing(timing_path, "stage1", now_seconds() - t0);
}

void ensure_stage2(const RunConfig& cfg, std::uint64_t seed, const std::string& dataset_path,
                   const std::string& stage1_path, const std::string& ckpt_path,
                   const std::string& metrics_path, const std::string& timing_path) {
    if (fs::exists(ckpt_path)) return;
    const auto t0 = now_seconds();
    const auto ds = load_dataset(dataset_path);
    const auto bundle = AnchorBundle::from_checkpoint(Checkpoint::load(stage1_path));
    const auto s2cfg = cfg.stage2_config(seed);
    const int steps = s2cfg.steps;
    const int log_every = std::max(1, cfg.log_freq);

    std::ofstream metrics_file(metrics_path, std::ios::app);
    auto log_row = [&metrics_file](int step, const std::string& phase,
                                   const std::vector<std::pair<std::string, double>>& kvs) {
        metrics_file << "step=" << step << " phase=" << phase;
        for (const auto& [k, v] : kvs) metrics_file << " " << k << "=" << fmt(v);
        metrics_file << "\n";
        metrics_file.flush();
    };

    ResidualPolicy policy;
    switch (s2cfg.variant) {
        case Stage2Variant::mlp: {
            MlpTrainer trainer(bundle, ds, s2cfg);
            for (int s = 1; s <= steps; ++s) {
                trainer.step();
                if (s % log_every == 0)
                    log_row(s, "stage2-mlp",
                            {{"fit_loss", trainer.last_fit_loss()},
                             {"guide_q", trainer.last_guide_value()}});
            }
            policy = policy_snapshot(s2cfg.variant, &trainer, nullptr, nullptr);
            break;
        }
        case Stage2Variant::cvae:
        case Stage2Variant::proj: {
            ProjTrainer trainer(bundle, ds, s2cfg);
            for (int s = 1; s <= steps; ++s) {
                trainer.step();
                if (s % log_every == 0)
                    log_row(s, s2cfg.variant == Stage2Variant::proj ? "stage2-proj" : "stage2-cvae",
                            {{"recon", trainer.last_recon()},
                             {"kl", trainer.last_kl()},
                             {"guide_loss", trainer.last_guide_loss()}});
            }
            policy = policy_snapshot(s2cfg.variant, nullptr, &trainer, nullptr);
            break;
        }
        case Stage2Variant::plas: {
            PlasTrainer trainer(bundle, ds, s2cfg);
            const int p1 = s2cfg.plas_phase1_steps >= 0 ? s2cfg.plas_phase1_steps : steps / 2;
            trainer.run_phase1(p1);
            log_row(p1, "stage2-plas-phase1", {{"steps", static_cast<double>(p1)}});
            for (int s = 1; s <= steps - p1; ++s) {
                trainer.phase2_step();
                if (s % log_every == 0)
                    log_row(s, "stage2-plas", {{"guide_q", trainer.last_guide_value()}});
            }
            policy = policy_snapshot(s2cfg.variant, nullptr, nullptr, &trainer);
            break;
        }
    }
    policy.to_checkpoint().save(ckpt_path);
    append_timing(timing_path, "stage2-" + to_string(s2cfg.variant), now_seconds() - t0);
}

SeedOutcome run_eval(const RunConfig& cfg, std::uint64_t seed, const std::string& stage1_path,
                     const std::string& stage2_path, const std::string& records_path,
                     const std::string& summary_path) {
    const auto env = make_env(cfg.env_name());
    const auto bundle = AnchorBundle::from_checkpoint(Checkpoint::load(stage1_path));
    const auto policy = ResidualPolicy::from_checkpoint(Checkpoint::load(stage2_path));

    std::vector<EvalRecord> records;
    const auto res = evaluate_policy(env, bundle, &policy, cfg.gate_config(), cfg.eval_episodes,
                                     seed, &records);
    if (!records_path.empty()) save_eval_records(records, records_path);

    SeedOutcome out;
    out.seed = seed;
    out.score = score_of(env, res);
    out.regret = res.regret;
    out.accept_rate = res.accept_rate;
    out.success_rate = res.success_rate;
    if (!summary_path.empty())
        write_kv_file(summary_path, {{"env", cfg.env},
                                     {"variant", to_string(cfg.resolved_variant())},
                                     {"seed", std::to_string(seed)},
                                     {"score", fmt(out.score)},
                                     {"mean_return", fmt(res.mean_return)},
                                     {"regret", fmt(res.regret)},
                                     {"accept_rate", fmt(res.accept_rate)},
                                     {"success_rate", fmt(res.success_rate)},
                                     {"episodes", std::to_string(res.episodes)},
                                     {"steps", std::to_string(res.steps)}});
    return out;
}

RunSummary run_pipeline(const RunConfig& cfg, const std::string& out_dir) {
    fs::create_directories(out_dir);
    cfg.save_file(out_dir + "/config.txt");

    RunSummary summary;
    summary.env = cfg.env;
    summary.variant = to_string(cfg.resolved_variant());
    summary.behavior = to_string(cfg.resolved_behavior());

    for (const auto seed : cfg.seeds) {
        const auto paths = seed_paths(out_dir, seed, summary.variant);
        fs::create_directories(paths.seed_dir);
        ensure_dataset(cfg, seed, paths.dataset);
        ensure_stage1(cfg, seed, paths.dataset, paths.stage1_ckpt, paths.metrics, paths.timing);
        ensure_stage2(cfg, seed, paths.dataset, paths.stage1_ckpt, paths.stage2_ckpt,
                      paths.metrics, paths.timing);
        summary.per_seed.push_back(run_eval(cfg, seed, paths.stage1_ckpt, paths.stage2_ckpt,
                                            paths.eval_records, paths.eval_summary));
    }

    const auto n = static_cast<double>(summary.per_seed.size());
    for (const auto& s : summary.per_seed) {
        summary.mean_score += s.score / n;
        summary.mean_regret += s.regret / n;
        summary.mean_accept += s.accept_rate / n;
    }
    for (const auto& s : summary.per_seed)
        summary.std_score += (s.score - summary.mean_score) * (s.score - summary.mean_score) / n;
    summary.std_score = std::sqrt(summary.std_score);

    std::vector<std::pair<std::string, std::string>> kvs = {
        {"env", summary.env}, {"variant", summary.variant}, {"behavior", summary.behavior}};
    for (const auto& s : summary.per_seed) {
        const std::string p = "seed" + std::to_string(s.seed);
        kvs.emplace_back(p + ".score", fmt(s.score));
        kvs.emplace_back(p + ".regret", fmt(s.regret));
        kvs.emplace_back(p + ".accept_rate", fmt(s.accept_rate));
        kvs.emplace_back(p + ".success_rate", fmt(s.success_rate));
    }
    kvs.emplace_back("mean_score", fmt(summary.mean_score));
    kvs.emplace_back("std_score", fmt(summary.std_score));
    kvs.emplace_back("mean_regret", fmt(summary.mean_regret));
    kvs.emplace_back("mean_accept_rate", fmt(summary.mean_accept));
    write_kv_file(out_dir + "/summary.txt", kvs);
    return summary;
}

AblationAxis ablation_axis_from_string(const std::string& s) {
    if (s == "lambda_g") return AblationAxis::lambda_g;
    if (s == "lambda_u") return AblationAxis::lambda_u;
    if (s == "temperature_filter") return AblationAxis::temperature_filter;
    if (s == "gate_thresholds") return AblationAxis::gate_thresholds;
    throw ConfigError("unknown ablation axis '" + s + "'");
}

std::string to_string(AblationAxis a) {
    switch (a) {
        case AblationAxis::lambda_g: return "lambda_g";
        case AblationAxis::lambda_u: return "lambda_u";
        case AblationAxis::temperature_filter: return "temperature_filter";
        case AblationAxis::gate_thresholds: return "gate_thresholds";
    }
    throw ConfigError("invalid ablation axis enum");
}

AblationTable ablation_grid(const RunConfig& base_cfg, AblationAxis axis,
                            const std::string& out_dir) {
    AblationTable table;
    table.axis = axis;
    fs::create_directories(out_dir);

    struct Cell {
        std::string label;
        RunConfig cfg;
    };
    std::vector<Cell> cells;
    switch (axis) {
        case AblationAxis::lambda_g:
            for (double v : {0.0, 0.5, 2.0}) {
                RunConfig c = base_cfg;
                c.lambda_g = v;
                cells.push_back({"lambda_g=" + fmt(v), c});
            }
            break;
        case AblationAxis::lambda_u:
            for (double v : {0.0, 0.5, 2.0}) {
                RunConfig c = base_cfg;
                c.lambda_u = v;
                cells.push_back({"lambda_u=" + fmt(v), c});
            }
            break;
        case AblationAxis::temperature_filter:
            for (const char* filt : {"soft", "hard"}) {
                for (const char* temp : {"0.1", "0.3", "1.0", "uniform"}) {
                    RunConfig c = base_cfg;
                    c.filter = filt;
                    if (std::string(temp) == "uniform") {
                        c.sensitivity = "uniform";
                        c.temperature = 0.3;
                    } else {
                        c.sensitivity = "exponential";
                        c.temperature = std::stod(temp);
                    }
                    cells.push_back({std::string("filter=") + filt + " T=" + temp, c});
                }
            }
            break;
        case AblationAxis::gate_thresholds:
            for (const auto& [abs, rel, label] :
                 {std::tuple{1e9, 1e9, "abs=+1e9 rel=+1e9"},
                  std::tuple{-1e9, -1e9, "abs=-1e9 rel=-1e9"},
                  std::tuple{-1e9, 0.01, "abs=-1e9 rel=0.01"},
                  std::tuple{1e-4, -1e9, "abs=1e-4 rel=-1e9"},
                  std::tuple{1e-4, 0.01, "abs=1e-4 rel=0.01"}}) {
                RunConfig c = base_cfg;
                c.eta_abs = abs;
                c.eta_rel = rel;
                cells.push_back({label, c});
            }
            break;
    }

    // Stage-1 artifacts (and datasets) are identical across cells except for
    // the lambda_u axis where only the aggregation changes; share them.
    const std::string shared = out_dir + "/shared";
    for (std::size_t i = 0; i < cells.size(); ++i) {
        auto& cell = cells[i];
        const std::string cell_dir = out_dir + "/cell" + std::to_string(i);
        fs::create_directories(cell_dir);
        for (const auto seed : cell.cfg.seeds) {
            const auto sp = seed_paths(shared, seed, "shared");
            fs::create_directories(sp.seed_dir);
            ensure_dataset(cell.cfg, seed, sp.dataset);
            // Stage-1 training never depends on lambda_u/lambda_g/gate/weighting.
            RunConfig s1cfg = cell.cfg;
            ensure_stage1(s1cfg, seed, sp.dataset, sp.stage1_ckpt, sp.metrics, sp.timing);

            const auto cp = seed_paths(cell_dir, seed, to_string(cell.cfg.resolved_variant()));
            fs::create_directories(cp.seed_dir);
            // lambda_u feeds Q_rob aggregation downstream of the critics, so a
            // per-cell bundle is written with the override applied.
            std::string stage1_for_cell = sp.stage1_ckpt;
            if (axis == AblationAxis::lambda_u) {
                stage1_for_cell = cp.seed_dir + "/stage1_lu.ckpt";
                if (!fs::exists(stage1_for_cell)) {
                    auto bundle = AnchorBundle::from_checkpoint(Checkpoint::load(sp.stage1_ckpt));
                    auto ck = bundle.to_checkpoint();
                    ck.put_scalar("meta.lambda_u", cell.cfg.lambda_u);
                    ck.save(stage1_for_cell);
                }
            }
            ensure_stage2(cell.cfg, seed, sp.dataset, stage1_for_cell, cp.stage2_ckpt, cp.metrics,
                          cp.timing);
        }

        RunSummary cell_summary;
        cell_summary.env = cell.cfg.env;
        cell_summary.variant = to_string(cell.cfg.resolved_variant());
        cell_summary.behavior = to_string(cell.cfg.resolved_behavior());
        for (const auto seed : cell.cfg.seeds) {
            const auto sp = seed_paths(shared, seed, "shared");
            const auto cp = seed_paths(cell_dir, seed, cell_summary.variant);
            std::string stage1_for_cell =
                axis == AblationAxis::lambda_u ? cp.seed_dir + "/stage1_lu.ckpt" : sp.stage1_ckpt;
            cell_summary.per_seed.push_back(run_eval(cell.cfg, seed, stage1_for_cell,
                                                     cp.stage2_ckpt, "", cp.eval_summary));
        }
        const auto n = static_cast<double>(cell_summary.per_seed.size());
        for (const auto& s : cell_summary.per_seed) {
            cell_summary.mean_score += s.score / n;
            cell_summary.mean_regret += s.regret / n;
            cell_summary.mean_accept += s.accept_rate / n;
        }
        for (const auto& s : cell_summary.per_seed)
            cell_summary.std_score += (s.score - cell_summary.mean_score) *
                                      (s.score - cell_summary.mean_score) / n;
        cell_summary.std_score = std::sqrt(cell_summary.std_score);
        table.cells.push_back({cell.label, cell_summary});
    }

    write_ablation_table(table, out_dir + "/table.txt");
    return table;
}

void write_ablation_table(const AblationTable& table, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open '" + path + "'");
    f << "axis=" << to_string(table.axis) << "\n";
    for (const auto& cell : table.cells) {
        f << cell.label << " | mean=" << fmt(cell.summary.mean_score)
          << " std=" << fmt(cell.summary.std_score);
        for (const auto& s : cell.summary.per_seed)
            f << " seed" << s.seed << "=" << fmt(s.score);
        f << "\n";
    }
}

ConflictSummary diagnose_conflict(const RunConfig& cfg, const std::string& dataset_path,
                                  const std::string& stage1_path, const std::string& out_path) {
    const auto ds = load_dataset(dataset_path);
    const auto bundle = AnchorBundle::from_checkpoint(Checkpoint::load(stage1_path));

    const int warm = std::max(500, cfg.effective_stage2_steps() / 10);
    const int probes = 20;

    auto s2 = cfg.stage2_config(derive_seed(cfg.seeds.front(), "diagnose"));

    auto run_probes = [&](const ConflictProbe& probe, double* dd, double* vsd) {
        double sdd = 0.0, svsd = 0.0;
        for (int p = 0; p < probes; ++p) {
            const auto rep = measure_conflict(probe, cfg.batch, derive_seed(1000 + p, "probe"));
            sdd += rep.dd / probes;
            svsd += rep.vsd / probes;
        }
        *dd = sdd;
        *vsd = svsd;
    };

    ConflictSummary sum;
    sum.probes = probes;
    {
        auto c = s2;
        c.variant = Stage2Variant::mlp;
        MlpTrainer t(bundle, ds, c);
        t.run(warm);
        MlpConflictProbe probe(t);
        run_probes(probe, &sum.mlp_dd, &sum.mlp_vsd);
    }
    {
        auto c = s2;
        c.variant = Stage2Variant::plas;
        PlasTrainer t(bundle, ds, c);
        t.run_phase1(warm);
        t.run_phase2(warm);
        PlasConflictProbe probe(t);
        run_probes(probe, &sum.plas_dd, &sum.plas_vsd);
    }
    {
        auto c = s2;
        c.variant = Stage2Variant::proj;
        ProjTrainer t(bundle, ds, c);
        t.run(warm);
        ProjConflictProbe probe(t);
        run_probes(probe, &sum.proj_dd, &sum.proj_vsd);
    }

    write_kv_file(out_path, {{"probes", std::to_string(probes)},
                             {"warm_steps", std::to_string(warm)},
                             {"mlp.dd", fmt(sum.mlp_dd)},
                             {"mlp.vsd", fmt(sum.mlp_vsd)},
                             {"plas.dd", fmt(sum.plas_dd)},
                             {"plas.vsd", fmt(sum.plas_vsd)},
                             {"proj.dd", fmt(sum.proj_dd)},
                             {"proj.vsd", fmt(sum.proj_vsd)}});
    return sum;
}

SupportReport diagnose_support(const RunConfig& cfg, const std::string& dataset_path,
                               const std::string& stage1_path, const std::string& stage2_path,
                               const std::string& out_path) {
    const auto ds = load_dataset(dataset_path);
    const auto bundle = AnchorBundle::from_checkpoint(Checkpoint::load(stage1_path));
    const auto policy = ResidualPolicy::from_checkpoint(Checkpoint::load(stage2_path));
    const auto actions =
        sample_policy_actions(ds, bundle, policy, 512, derive_seed(cfg.seeds.front(), "support"));
    const auto rep = support_distance_ratio(ds, actions, 5);
    write_kv_file(out_path, {{"ratio_q95", fmt(rep.ratio_q95)},
                             {"probe_q95", fmt(rep.probe_q95)},
                             {"boundary", fmt(rep.boundary)},
                             {"k", std::to_string(rep.k)},
                             {"n_probe", std::to_string(rep.n_probe)}});
    return rep;
}

GeometrySummary diagnose_geometry(const RunConfig& cfg, const std::string& dataset_path,
                                  const std::string& stage1_path, const std::string& out_path) {
    (void)cfg;
    const auto ds = load_dataset(dataset_path);
    const auto bundle = AnchorBundle::from_checkpoint(Checkpoint::load(stage1_path));
    const auto sum = residual_geometry_summary(ds, bundle);
    std::vector<std::pair<std::string, std::string>> kvs = {
        {"mode_count", std::to_string(sum.mode_count_estimate)},
        {"sample_size", std::to_string(sum.sample_size)},
        {"cluster_radius", fmt(sum.cluster_radius)},
        {"magnitude_q50", fmt(sum.magnitude_q50)},
        {"magnitude_q90", fmt(sum.magnitude_q90)},
        {"magnitude_q95", fmt(sum.magnitude_q95)},
        {"magnitude_q99", fmt(sum.magnitude_q99)}};
    for (std::size_t i = 0; i < sum.cluster_sizes.size(); ++i)
        kvs.emplace_back("cluster" + std::to_string(i),
                         std::to_string(sum.cluster_sizes[i]));
    write_kv_file(out_path, kvs);
    return sum;
}

bool verify_theory_complexity(const std::string& out_path, std::uint64_t seed) {
    bool ok = true;
    std::vector<std::pair<std::string, std::string>> kvs;
    for (int d : {1, 2}) {
        ComplexityConfig cfg;
        cfg.d = d;
        cfg.seed = derive_seed(seed, "complexity-d" + std::to_string(d));
        const auto rep = verify_sample_complexity(cfg);
        const double fail_g = static_cast<double>(rep.global.failures) / rep.global.trials;
        const double fail_r = static_cast<double>(rep.residual.failures) / rep.residual.trials;
        const bool rate_ok = fail_g <= cfg.beta && fail_r <= cfg.beta;
        const bool ratio_ok = rep.measured_ratio >= rep.predicted_ratio / 2.0 &&
                              rep.measured_ratio <= rep.predicted_ratio * 2.0;
        ok = ok && rate_ok && ratio_ok;
        const std::string p = "d" + std::to_string(d);
        kvs.emplace_back(p + ".cover_global", std::to_string(rep.global.cover_size));
        kvs.emplace_back(p + ".cover_residual", std::to_string(rep.residual.cover_size));
        kvs.emplace_back(p + ".m_global", std::to_string(rep.global.samples_per_point));
        kvs.emplace_back(p + ".m_residual", std::to_string(rep.residual.samples_per_point));
        kvs.emplace_back(p + ".fail_global", fmt(fail_g));
        kvs.emplace_back(p + ".fail_residual", fmt(fail_r));
        kvs.emplace_back(p + ".measured_ratio", fmt(rep.measured_ratio));
        kvs.emplace_back(p + ".predicted_ratio", fmt(rep.predicted_ratio));
        kvs.emplace_back(p + ".pass", rate_ok && ratio_ok ? "1" : "0");
    }
    kvs.emplace_back("pass", ok ? "1" : "0");
    write_kv_file(out_path, kvs);
    return ok;
}

bool verify_theory_bias(const RunConfig& cfg, const std::string& out_path, std::uint64_t seed) {
    const auto env = make_env(cfg.env_name());
    const auto ds = generate_dataset(env, cfg.resolved_behavior(),
                                     std::min(cfg.effective_dataset_size(), 20000), seed);

    // delta_rho from the dataset against a base-action proxy: the behavior
    // mean approximated by the optimal-action shrink (no training needed for
    // the bound to be exercised).
    auto base_action = [&env](std::span<const double> s) {
        auto a = env.optimal_action(s);
        for (auto& v : a) v *= 0.7;
        return a;
    };
    std::vector<double> mags;
    for (const auto& tr : ds.transitions) {
        const auto ab = base_action(tr.state);
        double m = 0.0;
        for (std::size_t j = 0; j < ab.size(); ++j)
            m += (tr.action[j] - ab[j]) * (tr.action[j] - ab[j]);
        mags.push_back(std::sqrt(m));
    }
    const double delta_rho = quantile_nearest_rank(mags, 1.0 - cfg.rho);

    const auto rep = verify_localization_bias(env, ds, base_action, delta_rho, 500, seed);
    const auto constructed = constructed_bias_case(env.action_dim(), delta_rho, 0.3, seed);
    const bool constructed_ok = constructed.measured <= constructed.bound + 1e-3;

    write_kv_file(out_path,
                  {{"env", cfg.env},
                   {"delta_rho", fmt(delta_rho)},
                   {"probes", std::to_string(rep.probes.size())},
                   {"max_violation", fmt(rep.max_violation)},
                   {"tolerance", fmt(rep.tolerance)},
                   {"holds", rep.holds ? "1" : "0"},
                   {"constructed.bound", fmt(constructed.bound)},
                   {"constructed.measured", fmt(constructed.measured)},
                   {"constructed.pass", constructed_ok ? "1" : "0"},
                   {"pass", rep.holds && constructed_ok ? "1" : "0"}});
    return rep.holds && constructed_ok;
}

bool verify_theory_drift(const std::string& out_path, std::uint64_t seed) {
    const std::vector<double> scales = {0.2, 0.1, 0.05, 0.025};
    DriftInstance circle;
    circle.kind = DriftInstance::Kind::circle;
    circle.radius = 1.0;
    const auto rep_c = verify_drift(circle, scales, scales, seed);

    DriftInstance sine;
    sine.kind = DriftInstance::Kind::sine;
    sine.amplitude = 0.5;
    sine.freq = 2.0;
    const auto rep_s = verify_drift(sine, scales, scales, derive_seed(seed, "sine"));

    const bool slopes_ok = rep_c.slope_chord >= 1.9 && rep_c.slope_chord <= 2.1 &&
                           rep_c.slope_grad >= 0.9 && rep_c.slope_grad <= 1.1 &&
                           rep_s.slope_chord >= 1.9 && rep_s.slope_chord <= 2.1 &&
                           rep_s.slope_grad >= 0.9 && rep_s.slope_grad <= 1.1;
    const bool ok = slopes_ok && rep_c.chord_bound_ok && rep_s.chord_bound_ok;

    std::vector<std::pair<std::string, std::string>> kvs = {
        {"circle.slope_chord", fmt(rep_c.slope_chord)},
        {"circle.slope_grad", fmt(rep_c.slope_grad)},
        {"circle.bound_ok", rep_c.chord_bound_ok ? "1" : "0"},
        {"sine.slope_chord", fmt(rep_s.slope_chord)},
        {"sine.slope_grad", fmt(rep_s.slope_grad)},
        {"sine.bound_ok", rep_s.chord_bound_ok ? "1" : "0"},
        {"pass", ok ? "1" : "0"}};
    for (std::size_t i = 0; i < rep_c.chord_lengths.size(); ++i) {
        kvs.emplace_back("circle.chord" + std::to_string(i),
                         fmt(rep_c.chord_lengths[i]) + ":" + fmt(rep_c.chord_drifts[i]));
        kvs.emplace_back("circle.grad" + std::to_string(i),
                         fmt(rep_c.etas[i]) + ":" + fmt(rep_c.grad_drifts[i]));
    }
    write_kv_file(out_path, kvs);
    return ok;
}

}  // namespace spar
