// spar: experiment harness CLI. Talks to the pipeline exclusively through the
// C API in spar.h.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "spar.h"

namespace {

struct ConfigDeleter {
    void operator()(spar_config* c) const { spar_config_free(c); }
};
using ConfigPtr = std::unique_ptr<spar_config, ConfigDeleter>;

int fail(const std::string& stage, spar_status status) {
    std::cerr << "[" << stage << "] error " << status << ": " << spar_last_error() << "\n";
    return status == SPAR_OK ? 1 : -status;
}

void print_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) return;
    std::cout << f.rdbuf();
}

struct CommonOpts {
    std::string config_file;
    std::vector<std::string> sets;
    std::string env;
    std::string behavior;
    std::string variant;
    std::string seeds;
    std::string out_dir;
    bool desk_scale = false;
    double eta_abs = 0.0, eta_rel = 0.0;
    bool has_eta_abs = false, has_eta_rel = false;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--config", o.config_file, "Config file (key = value lines)");
    cmd->add_option("--set", o.sets, "Override a config key: --set key=value")
        ->type_name("KEY=VALUE");
    cmd->add_option("--env", o.env,
                    "Environment: unimodal-quad|bimodal-bandit|narrow-ridge|branch-maze");
    cmd->add_option("--behavior", o.behavior,
                    "Behavior tier: medium|medium-replay-like|mixture-expert|sparse-diverse");
    cmd->add_option("--variant", o.variant, "Stage II variant: mlp|cvae|plas|proj");
    cmd->add_option("--seeds", o.seeds, "Comma-separated seed list");
    cmd->add_option("--out", o.out_dir, "Output directory");
    cmd->add_flag("--desk-scale", o.desk_scale, "Desk-scale preset (small steps/data/nets)");
    cmd->add_option("--eta-abs", o.eta_abs, "Gate absolute threshold")
        ->each([&o](const std::string&) { o.has_eta_abs = true; });
    cmd->add_option("--eta-rel", o.eta_rel, "Gate relative threshold")
        ->each([&o](const std::string&) { o.has_eta_rel = true; });
}

// Builds the config from file + flags; returns nullptr (after printing) on error.
ConfigPtr build_config(const CommonOpts& o, std::string* out_dir) {
    ConfigPtr cfg(spar_config_create());
    auto set = [&cfg](const std::string& k, const std::string& v) {
        const auto st = spar_config_set(cfg.get(), k.c_str(), v.c_str());
        if (st != SPAR_OK) {
            std::cerr << "[config] " << spar_last_error() << "\n";
            return false;
        }
        return true;
    };
    if (!o.config_file.empty()) {
        if (spar_config_load(cfg.get(), o.config_file.c_str()) != SPAR_OK) {
            std::cerr << "[config] " << spar_last_error() << "\n";
            return nullptr;
        }
    }
    if (!o.env.empty() && !set("env", o.env)) return nullptr;
    if (!o.behavior.empty() && !set("behavior", o.behavior)) return nullptr;
    if (!o.variant.empty() && !set("stage2.variant", o.variant)) return nullptr;
    if (!o.seeds.empty() && !set("seeds", o.seeds)) return nullptr;
    if (o.desk_scale && !set("desk_scale", "true")) return nullptr;
    if (o.has_eta_abs && !set("gate.eta_abs", std::to_string(o.eta_abs))) return nullptr;
    if (o.has_eta_rel && !set("gate.eta_rel", std::to_string(o.eta_rel))) return nullptr;
    for (const auto& kv : o.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) {
            std::cerr << "[config] --set expects key=value, got '" << kv << "'\n";
            return nullptr;
        }
        if (!set(kv.substr(0, eq), kv.substr(eq + 1))) return nullptr;
    }
    if (!o.out_dir.empty() && !set("output_dir", o.out_dir)) return nullptr;
    if (const char* env_out = std::getenv("SPAR_OUT"); env_out && *env_out) {
        if (!set("output_dir", env_out)) return nullptr;
    }
    char buf[512];
    spar_config_get(cfg.get(), "output_dir", buf, sizeof(buf));
    *out_dir = buf;
    return cfg;
}

std::uint64_t first_seed(const ConfigPtr& cfg) {
    char buf[256];
    spar_config_get(cfg.get(), "seeds", buf, sizeof(buf));
    return std::strtoull(buf, nullptr, 10);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"SPAR offline policy improvement pipeline"};
    app.require_subcommand(1);

    CommonOpts o;
    std::string path_a, path_b, path_c, path_d, what, axis;
    std::uint64_t seed_opt = 0;
    bool has_seed = false;

    auto* gen = app.add_subcommand("gen-data", "Generate an offline dataset");
    add_common(gen, o);
    gen->add_option("--dataset", path_a, "Output dataset path");
    gen->add_option("--seed", seed_opt, "Seed")->each([&](const std::string&) { has_seed = true; });

    auto* s1 = app.add_subcommand("train-stage1", "Train the anchor (BC policy + critics)");
    add_common(s1, o);
    s1->add_option("--dataset", path_a, "Dataset path")->required();
    s1->add_option("--ckpt", path_b, "Output checkpoint path");
    s1->add_option("--metrics", path_c, "Metrics log path");
    s1->add_option("--seed", seed_opt, "Seed")->each([&](const std::string&) { has_seed = true; });

    auto* s2 = app.add_subcommand("train-stage2", "Train the residual policy");
    add_common(s2, o);
    s2->add_option("--dataset", path_a, "Dataset path")->required();
    s2->add_option("--stage1", path_b, "Stage-1 checkpoint")->required();
    s2->add_option("--ckpt", path_c, "Output checkpoint path");
    s2->add_option("--metrics", path_d, "Metrics log path");
    s2->add_option("--seed", seed_opt, "Seed")->each([&](const std::string&) { has_seed = true; });

    auto* ev = app.add_subcommand("eval", "Evaluate the gated policy");
    add_common(ev, o);
    ev->add_option("--stage1", path_a, "Stage-1 checkpoint")->required();
    ev->add_option("--stage2", path_b, "Stage-2 checkpoint")->required();
    ev->add_option("--records", path_c, "Per-step decision records output");
    ev->add_option("--summary", path_d, "Summary output path");
    ev->add_option("--seed", seed_opt, "Seed")->each([&](const std::string&) { has_seed = true; });

    auto* diag = app.add_subcommand("diagnose", "Conflict/support/geometry diagnostics");
    add_common(diag, o);
    diag->add_option("what", what, "conflict|support|geometry")->required();
    diag->add_option("--dataset", path_a, "Dataset path")->required();
    diag->add_option("--stage1", path_b, "Stage-1 checkpoint")->required();
    diag->add_option("--stage2", path_c, "Stage-2 checkpoint (support only)");
    diag->add_option("--summary", path_d, "Summary output path");

    auto* vt = app.add_subcommand("verify-theory", "Run the theory verification suites");
    add_common(vt, o);
    vt->add_option("what", what, "complexity|bias|drift")->required();
    vt->add_option("--summary", path_a, "Summary output path");
    vt->add_option("--seed", seed_opt, "Seed")->each([&](const std::string&) { has_seed = true; });

    auto* ab = app.add_subcommand("ablate", "Run a paper-grid ablation");
    add_common(ab, o);
    ab->add_option("axis", axis, "lambda_g|lambda_u|temperature_filter|gate_thresholds")
        ->required();

    auto* ra = app.add_subcommand("run-all", "Full pipeline over all seeds");
    add_common(ra, o);

    CLI11_PARSE(app, argc, argv);

    std::string out_dir;
    auto cfg = build_config(o, &out_dir);
    if (!cfg) return 2;

    if (gen->parsed()) {
        const std::string out = path_a.empty() ? out_dir + "/dataset.bin" : path_a;
        const auto st = spar_gen_data(cfg.get(), has_seed ? seed_opt : first_seed(cfg), out.c_str());
        if (st != SPAR_OK) return fail("gen-data", st);
        spar_dataset* ds = spar_dataset_open(out.c_str());
        std::cout << "dataset=" << out << " n=" << spar_dataset_size(ds)
                  << " d_s=" << spar_dataset_state_dim(ds)
                  << " d_a=" << spar_dataset_action_dim(ds) << "\n";
        spar_dataset_close(ds);
        return 0;
    }
    if (s1->parsed()) {
        const std::string ckpt = path_b.empty() ? out_dir + "/stage1.ckpt" : path_b;
        const auto st = spar_train_stage1(cfg.get(), has_seed ? seed_opt : first_seed(cfg),
                                          path_a.c_str(), ckpt.c_str(),
                                          path_c.empty() ? nullptr : path_c.c_str());
        if (st != SPAR_OK) return fail("train-stage1", st);
        std::cout << "stage1=" << ckpt << "\n";
        return 0;
    }
    if (s2->parsed()) {
        const std::string ckpt = path_c.empty() ? out_dir + "/stage2.ckpt" : path_c;
        const auto st = spar_train_stage2(cfg.get(), has_seed ? seed_opt : first_seed(cfg),
                                          path_a.c_str(), path_b.c_str(), ckpt.c_str(),
                                          path_d.empty() ? nullptr : path_d.c_str());
        if (st != SPAR_OK) return fail("train-stage2", st);
        std::cout << "stage2=" << ckpt << "\n";
        return 0;
    }
    if (ev->parsed()) {
        const std::string summary = path_d.empty() ? out_dir + "/eval_summary.txt" : path_d;
        const std::string records = path_c.empty() ? out_dir + "/eval_records.bin" : path_c;
        const auto st = spar_eval(cfg.get(), has_seed ? seed_opt : first_seed(cfg),
                                  path_a.c_str(), path_b.c_str(), records.c_str(),
                                  summary.c_str());
        if (st != SPAR_OK) return fail("eval", st);
        print_file(summary);
        return 0;
    }
    if (diag->parsed()) {
        const std::string summary =
            path_d.empty() ? out_dir + "/diagnose_" + what + ".txt" : path_d;
        const auto st = spar_diagnose(cfg.get(), what.c_str(), path_a.c_str(), path_b.c_str(),
                                      path_c.empty() ? nullptr : path_c.c_str(), summary.c_str());
        if (st != SPAR_OK) return fail("diagnose", st);
        print_file(summary);
        return 0;
    }
    if (vt->parsed()) {
        const std::string summary = path_a.empty() ? out_dir + "/theory_" + what + ".txt" : path_a;
        int pass = 0;
        const auto st = spar_verify_theory(cfg.get(), what.c_str(),
                                           has_seed ? seed_opt : first_seed(cfg), summary.c_str(),
                                           &pass);
        if (st != SPAR_OK) return fail("verify-theory", st);
        print_file(summary);
        std::cout << (pass ? "PASS" : "FAIL") << "\n";
        return pass ? 0 : 1;
    }
    if (ab->parsed()) {
        const auto st = spar_ablate(cfg.get(), axis.c_str(), out_dir.c_str());
        if (st != SPAR_OK) return fail("ablate", st);
        print_file(out_dir + "/table.txt");
        return 0;
    }
    if (ra->parsed()) {
        const auto st = spar_run_pipeline(cfg.get(), out_dir.c_str());
        if (st != SPAR_OK) return fail("run-all", st);
        print_file(out_dir + "/summary.txt");
        return 0;
    }
    return 2;
}
