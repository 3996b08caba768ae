#include "spar.h"

#include <cstring>
#include <string>

#include "spar/config.hpp"
#include "spar/dataset.hpp"
#include "spar/errors.hpp"
#include "spar/pipeline.hpp"

namespace {

thread_local std::string g_last_error;

template <typename Fn>
spar_status guarded(Fn&& fn) {
    try {
        fn();
        g_last_error.clear();
        return SPAR_OK;
    } catch (const spar::ConfigError& e) {
        g_last_error = e.what();
        return SPAR_ERR_CONFIG;
    } catch (const spar::IoError& e) {
        g_last_error = e.what();
        return SPAR_ERR_IO;
    } catch (const spar::TrainingDivergence& e) {
        g_last_error = e.what();
        return SPAR_ERR_DIVERGENCE;
    } catch (const spar::ContractViolation& e) {
        g_last_error = e.what();
        return SPAR_ERR_CONTRACT;
    } catch (const spar::DimensionError& e) {
        g_last_error = e.what();
        return SPAR_ERR_INVALID_ARGUMENT;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return SPAR_ERR_INTERNAL;
    }
}

bool require(bool cond, const char* msg) {
    if (!cond) g_last_error = msg;
    return cond;
}

}  // namespace

struct spar_config {
    spar::RunConfig cfg;
};

struct spar_dataset {
    spar::OfflineDataset ds;
};

extern "C" {

const char* spar_version(void) { return "1.0.0"; }

const char* spar_last_error(void) { return g_last_error.c_str(); }

spar_config* spar_config_create(void) { return new spar_config{}; }

void spar_config_free(spar_config* cfg) { delete cfg; }

spar_status spar_config_set(spar_config* cfg, const char* key, const char* value) {
    if (!require(cfg && key && value, "spar_config_set: null argument"))
        return SPAR_ERR_INVALID_ARGUMENT;
    return guarded([&] { cfg->cfg.set(key, value); });
}

spar_status spar_config_get(const spar_config* cfg, const char* key, char* buf, int buf_len) {
    if (!require(cfg && key && buf && buf_len > 0, "spar_config_get: null argument"))
        return SPAR_ERR_INVALID_ARGUMENT;
    return guarded([&] {
        const std::string v = cfg->cfg.get(key);
        std::strncpy(buf, v.c_str(), static_cast<std::size_t>(buf_len) - 1);
        buf[buf_len - 1] = '\0';
    });
}

spar_status spar_config_load(spar_config* cfg, const char* path) {
    if (!require(cfg && path, "spar_config_load: null argument"))
        return SPAR_ERR_INVALID_ARGUMENT;
    return guarded([&] { cfg->cfg = spar::RunConfig::load_file(path); });
}

spar_status spar_config_save(const spar_config* cfg, const char* path) {
    if (!require(cfg && path, "spar_config_save: null argument"))
        return SPAR_ERR_INVALID_ARGUMENT;
    return guarded([&] { cfg->cfg.save_file(path); });
}

char* spar_config_serialize(const spar_config* cfg) {
    if (!cfg) return nullptr;
    const std::string s = cfg->cfg.serialize();
    char* out = new char[s.size() + 1];
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

void spar_string_free(char* s) { delete[] s; }

spar_status spar_gen_data(const spar_config* cfg, uint64_t seed, const char* out_path) {
    if (!require(cfg && out_path, "spar_gen_data: null argument"))
        return SPAR_ERR_INVALID_ARGUMENT;
    return guarded([&] {
        const auto env = spar::make_env(cfg->cfg.env_name());
        const auto ds = spar::generate_dataset(env, cfg->cfg.resolved_behavior(),
                                               cfg->cfg.effective_dataset_size(), seed);
        spar::save_dataset(ds, out_path);
    });
}

spar_dataset* spar_dataset_open(const char* path) {
    if (!path) return nullptr;
    spar_dataset* out = nullptr;
    guarded([&] { out = new spar_dataset{spar::load_dataset(path)}; });
    return out;
}

void spar_dataset_close(spar_dataset* ds) { delete ds; }

int spar_dataset_size(const spar_dataset* ds) { return ds ? ds->ds.size() : -1; }
int spar_dataset_state_dim(const spar_dataset* ds) { return ds ? ds->ds.d_s : -1; }
int spar_dataset_action_dim(const spar_dataset* ds) { return ds ? ds->ds.d_a : -1; }

spar_status spar_train_stage1(const spar_config* cfg, uint64_t seed, const char* dataset_path,
                              const char* out_ckpt, const char* metrics_path) {
    if (!require(cfg && dataset_path && out_ckpt, "spar_train_stage1: null argument"))
        return SPAR_ERR_INVALID_ARGUMENT;
    return guarded([&] {
        spar::ensure_stage1(cfg->cfg, seed, dataset_path, out_ckpt,
                            metrics_path ? metrics_path : std::string(out_ckpt) + ".metrics",
                            "");
    });
}

spar_status spar_train_stage2(const spar_config* cfg, uint64_t seed, const char* dataset_path,
                              const char* stage1_ckpt, const char* out_ckpt,
                              const char* metrics_path) {
    if (!require(cfg && dataset_path && stage1_ckpt && out_ckpt,
                 "spar_train_stage2: null argument"))
        return SPAR_ERR_INVALID_ARGUMENT;
    return guarded([&] {
        spar::ensure_stage2(cfg->cfg, seed, dataset_path, stage1_ckpt, out_ckpt,
                            metrics_path ? metrics_path : std::string(out_ckpt) + ".metrics",
                            "");
    });
}

spar_status spar_eval(const spar_config* cfg, uint64_t seed, const char* stage1_ckpt,
                      const char* stage2_ckpt, const char* records_path,
                      const char* summary_path) {
    if (!require(cfg && stage1_ckpt && stage2_ckpt && summary_path, "spar_eval: null argument"))
        return SPAR_ERR_INVALID_ARGUMENT;
    return guarded([&] {
        spar::run_eval(cfg->cfg, seed, stage1_ckpt, stage2_ckpt,
                       records_path ? records_path : "", summary_path);
    });
}

spar_status spar_run_pipeline(const spar_config* cfg, const char* out_dir) {
    if (!require(cfg && out_dir, "spar_run_pipeline: null argument"))
        return SPAR_ERR_INVALID_ARGUMENT;
    return guarded([&] { spar::run_pipeline(cfg->cfg, out_dir); });
}

spar_status spar_ablate(const spar_config* cfg, const char* axis, const char* out_dir) {
    if (!require(cfg && axis && out_dir, "spar_ablate: null argument"))
        return SPAR_ERR_INVALID_ARGUMENT;
    return guarded(
        [&] { spar::ablation_grid(cfg->cfg, spar::ablation_axis_from_string(axis), out_dir); });
}

spar_status spar_diagnose(const spar_config* cfg, const char* what, const char* dataset_path,
                          const char* stage1_ckpt, const char* stage2_ckpt,
                          const char* out_path) {
    if (!require(cfg && what && dataset_path && stage1_ckpt && out_path,
                 "spar_diagnose: null argument"))
        return SPAR_ERR_INVALID_ARGUMENT;
    return guarded([&] {
        const std::string w = what;
        if (w == "conflict") {
            spar::diagnose_conflict(cfg->cfg, dataset_path, stage1_ckpt, out_path);
        } else if (w == "support") {
            if (!stage2_ckpt) throw spar::ConfigError("diagnose support: stage2 checkpoint required");
            spar::diagnose_support(cfg->cfg, dataset_path, stage1_ckpt, stage2_ckpt, out_path);
        } else if (w == "geometry") {
            spar::diagnose_geometry(cfg->cfg, dataset_path, stage1_ckpt, out_path);
        } else {
            throw spar::ConfigError("diagnose: unknown subcommand '" + w + "'");
        }
    });
}

spar_status spar_verify_theory(const spar_config* cfg, const char* what, uint64_t seed,
                               const char* out_path, int* pass) {
    if (!require(cfg && what && out_path, "spar_verify_theory: null argument"))
        return SPAR_ERR_INVALID_ARGUMENT;
    return guarded([&] {
        const std::string w = what;
        bool ok = false;
        if (w == "complexity") {
            ok = spar::verify_theory_complexity(out_path, seed);
        } else if (w == "bias") {
            ok = spar::verify_theory_bias(cfg->cfg, out_path, seed);
        } else if (w == "drift") {
            ok = spar::verify_theory_drift(out_path, seed);
        } else {
            throw spar::ConfigError("verify-theory: unknown subcommand '" + w + "'");
        }
        if (pass) *pass = ok ? 1 : 0;
    });
}

}  // extern "C"
