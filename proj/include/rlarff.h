/* SPDX-License-Identifier: Apache-2.0 */
/*
 * C interface to librlarff: open-set RF-fingerprint authentication with
 * per-environment LoRA adapters and CMA-ES aggregation.
 *
 * Every function returns an rlarff_status. On failure the message is kept
 * per thread and read with rlarff_last_error() until the next failing call.
 * Handles are opaque; free them with the matching *_free (NULL is accepted).
 */
#ifndef RLARFF_H
#define RLARFF_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define RLARFF_API __declspec(dllexport)
#else
#define RLARFF_API __attribute__((visibility("default")))
#endif

typedef enum rlarff_status {
    RLARFF_OK = 0,
    RLARFF_E_DIMENSION = 1,
    RLARFF_E_DEGENERATE_INPUT = 2,
    RLARFF_E_CONTRACT = 3, /* also: NULL where a value is required */
    RLARFF_E_CONFIG = 4,
    RLARFF_E_DEGENERATE_CHANNEL = 5,
    RLARFF_E_STRATIFICATION = 6,
    RLARFF_E_TRAINING_DIVERGED = 7,
    RLARFF_E_PROTOCOL = 8,
    RLARFF_E_OPTIMIZER_FAILURE = 9,
    RLARFF_E_IO = 10,
    RLARFF_E_FORMAT = 11,
    RLARFF_E_INTERNAL = 99
} rlarff_status;

typedef struct rlarff_config rlarff_config;
typedef struct rlarff_dataset rlarff_dataset;
typedef struct rlarff_model rlarff_model;
typedef struct rlarff_lora rlarff_lora;

RLARFF_API const char* rlarff_version(void);
/* "ok", "dimension", ..., "format", "internal". */
RLARFF_API const char* rlarff_status_name(rlarff_status status);
/* Message of the last failure on this thread ("" if none). */
RLARFF_API const char* rlarff_last_error(void);

/* ---- experiment configuration ------------------------------------------ */

/* M = 1280 recipe. */
RLARFF_API rlarff_status rlarff_config_default(rlarff_config** out);
/* Desk-scale benchmark recipe (M = 320). */
RLARFF_API rlarff_status rlarff_config_benchmark(rlarff_config** out);
/* JSON file; missing fields take defaults, unknown fields are rejected. */
RLARFF_API rlarff_status rlarff_config_load(const char* path, rlarff_config** out);
RLARFF_API rlarff_status rlarff_config_set_seed(rlarff_config* cfg, uint64_t seed);
RLARFF_API rlarff_status rlarff_config_get_seed(const rlarff_config* cfg, uint64_t* seed);
/* 16 hex digits plus NUL. */
RLARFF_API rlarff_status rlarff_config_hash(const rlarff_config* cfg, char out[17]);
/* Canonical JSON. Writes at most cap bytes including NUL; *needed gets the
 * full size including NUL. buf may be NULL when cap is 0. */
RLARFF_API rlarff_status rlarff_config_to_json(const rlarff_config* cfg, char* buf, size_t cap, size_t* needed);
RLARFF_API void rlarff_config_free(rlarff_config* cfg);

/* ---- datasets ----------------------------------------------------------- */

RLARFF_API rlarff_status rlarff_dataset_load(const char* path, rlarff_dataset** out);
RLARFF_API rlarff_status rlarff_dataset_save(const rlarff_dataset* data, const char* path);
/* Any output pointer may be NULL. */
RLARFF_API rlarff_status rlarff_dataset_info(const rlarff_dataset* data, size_t* samples, size_t* length,
                                             size_t* devices);
/* iq receives 2*length floats, interleaved I/Q. */
RLARFF_API rlarff_status rlarff_dataset_sample(const rlarff_dataset* data, size_t index, float* iq, size_t iq_len,
                                               uint32_t* device);
RLARFF_API void rlarff_dataset_free(rlarff_dataset* data);

/* ---- models (checkpoints) ---------------------------------------------- */

RLARFF_API rlarff_status rlarff_model_load(const char* path, rlarff_model** out);
RLARFF_API rlarff_status rlarff_model_save(const rlarff_model* model, const char* path);
RLARFF_API rlarff_status rlarff_model_info(const rlarff_model* model, size_t* input_length, size_t* embedding_dim,
                                           size_t* parameters);
/* iq: 2*input_length interleaved floats; out: embedding_dim doubles. */
RLARFF_API rlarff_status rlarff_model_embed(const rlarff_model* model, const float* iq, size_t iq_len, double* out,
                                            size_t out_len);
/* Adds weight * A B of every target into the model weights. */
RLARFF_API rlarff_status rlarff_model_merge_lora(rlarff_model* model, const rlarff_lora* adapter, double weight);
/* Cosine distance in [0, 2] between two embeddings of equal length. */
RLARFF_API rlarff_status rlarff_cosine_distance(const double* a, const double* b, size_t len, double* out);
RLARFF_API void rlarff_model_free(rlarff_model* model);

/* ---- LoRA adapters ------------------------------------------------------ */

RLARFF_API rlarff_status rlarff_lora_load(const char* path, rlarff_lora** out);
RLARFF_API rlarff_status rlarff_lora_save(const rlarff_lora* adapter, const char* path);
/* environment_id is copied NUL-terminated, truncated to cap. */
RLARFF_API rlarff_status rlarff_lora_info(const rlarff_lora* adapter, size_t* rank, size_t* parameters,
                                          char* environment_id, size_t cap);
RLARFF_API void rlarff_lora_free(rlarff_lora* adapter);

/* ---- pipeline commands --------------------------------------------------
 * Each writes its artifacts under out_dir and appends to out_dir/manifest.json.
 * `data` is a data directory, or a single dataset file where one is enough.
 */
RLARFF_API rlarff_status rlarff_cmd_gen_data(const rlarff_config* cfg, const char* out_dir);
RLARFF_API rlarff_status rlarff_cmd_train_base(const rlarff_config* cfg, const char* data, const char* out_dir);
/* env NULL or "": every pool environment. */
RLARFF_API rlarff_status rlarff_cmd_train_lora(const rlarff_config* cfg, const char* base, const char* data,
                                               const char* env, const char* out_dir);
RLARFF_API rlarff_status rlarff_cmd_adapt_rla(const rlarff_config* cfg, const char* base, const char* pool_dir,
                                              const char* data, const char* out_dir);
RLARFF_API rlarff_status rlarff_cmd_adapt_ft(const rlarff_config* cfg, const char* base, const char* data,
                                             const char* out_dir);
RLARFF_API rlarff_status rlarff_cmd_adapt_lora(const rlarff_config* cfg, const char* base, const char* data,
                                               const char* out_dir);
/* adapter, rla_report, pool_dir and name may be NULL. */
RLARFF_API rlarff_status rlarff_cmd_eval(const rlarff_config* cfg, const char* base, const char* adapter,
                                         const char* rla_report, const char* pool_dir, const char* data,
                                         const char* name, const char* out_dir);
RLARFF_API rlarff_status rlarff_cmd_report(const char* run_dir);
RLARFF_API rlarff_status rlarff_cmd_run_experiment(const rlarff_config* cfg, const char* out_dir);

#ifdef __cplusplus
}
#endif

#endif /* RLARFF_H */
