/* C interface to the SPAR pipeline library.
 *
 * All functions return SPAR_OK (0) on success or a negative status code; the
 * message for the most recent failure on the calling thread is available via
 * spar_last_error(). Handles are opaque and must be released with their
 * matching *_free/*_close function.
 */
#ifndef SPAR_CAPI_H
#define SPAR_CAPI_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#define SPAR_OK 0
#define SPAR_ERR_INVALID_ARGUMENT -1
#define SPAR_ERR_CONFIG -2
#define SPAR_ERR_IO -3
#define SPAR_ERR_DIVERGENCE -4
#define SPAR_ERR_CONTRACT -5
#define SPAR_ERR_INTERNAL -6

typedef int spar_status;
typedef struct spar_config spar_config;
typedef struct spar_dataset spar_dataset;

const char* spar_version(void);
/* Message for the last failing call on this thread; empty string if none. */
const char* spar_last_error(void);

/* ---- configuration ---- */
spar_config* spar_config_create(void); /* Appendix-table defaults */
void spar_config_free(spar_config* cfg);
spar_status spar_config_set(spar_config* cfg, const char* key, const char* value);
/* Writes the value of `key` into buf (NUL-terminated, truncated to buf_len). */
spar_status spar_config_get(const spar_config* cfg, const char* key, char* buf, int buf_len);
spar_status spar_config_load(spar_config* cfg, const char* path);
spar_status spar_config_save(const spar_config* cfg, const char* path);
/* Caller frees with spar_string_free. */
char* spar_config_serialize(const spar_config* cfg);
void spar_string_free(char* s);

/* ---- datasets ---- */
spar_status spar_gen_data(const spar_config* cfg, uint64_t seed, const char* out_path);
spar_dataset* spar_dataset_open(const char* path);
void spar_dataset_close(spar_dataset* ds);
int spar_dataset_size(const spar_dataset* ds);
int spar_dataset_state_dim(const spar_dataset* ds);
int spar_dataset_action_dim(const spar_dataset* ds);

/* ---- pipeline stages ---- */
spar_status spar_train_stage1(const spar_config* cfg, uint64_t seed, const char* dataset_path,
                              const char* out_ckpt, const char* metrics_path);
spar_status spar_train_stage2(const spar_config* cfg, uint64_t seed, const char* dataset_path,
                              const char* stage1_ckpt, const char* out_ckpt,
                              const char* metrics_path);
spar_status spar_eval(const spar_config* cfg, uint64_t seed, const char* stage1_ckpt,
                      const char* stage2_ckpt, const char* records_path,
                      const char* summary_path);

/* Full pipeline over the config's seed list; writes summary.txt in out_dir. */
spar_status spar_run_pipeline(const spar_config* cfg, const char* out_dir);
/* axis: lambda_g | lambda_u | temperature_filter | gate_thresholds */
spar_status spar_ablate(const spar_config* cfg, const char* axis, const char* out_dir);

/* ---- diagnostics ----
 * what: "conflict" (stage2_ckpt ignored), "support", or "geometry". */
spar_status spar_diagnose(const spar_config* cfg, const char* what, const char* dataset_path,
                          const char* stage1_ckpt, const char* stage2_ckpt,
                          const char* out_path);

/* ---- theory verification ----
 * what: "complexity" | "bias" | "drift". Sets *pass to 0/1. */
spar_status spar_verify_theory(const spar_config* cfg, const char* what, uint64_t seed,
                               const char* out_path, int* pass);

#ifdef __cplusplus
}
#endif

#endif /* SPAR_CAPI_H */
