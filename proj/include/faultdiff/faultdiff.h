#ifndef FAULTDIFF_H
#define FAULTDIFF_H

/* C interface of the faultdiff library. Every function returns an fd_status;
 * on failure fd_last_error() describes the problem (thread-local). Handles are
 * opaque and owned by the caller, who releases them with the matching _free. */

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum fd_status {
    FD_OK = 0,
    FD_ERR_INTERNAL = 1,
    FD_ERR_USAGE = 2,      /* bad configuration, arguments or corpus */
    FD_ERR_CHECKPOINT = 3, /* missing, corrupt or incompatible checkpoint */
    FD_ERR_NUMERIC = 4     /* training divergence or non-finite sampling */
} fd_status;

typedef struct fd_config fd_config;
typedef struct fd_dataset fd_dataset;
typedef struct fd_model fd_model;
typedef struct fd_report fd_report;

typedef void (*fd_log_fn)(const char* message, void* user);

const char* fd_version(void);
const char* fd_last_error(void);
/* Progress messages of the fd_run_* calls; NULL disables logging. */
void fd_set_logger(fd_log_fn fn, void* user);

/* ---- configuration ---- */
fd_status fd_config_new(const char* preset, fd_config** out);
fd_status fd_config_load(const char* path, const char* preset, fd_config** out);
void fd_config_free(fd_config* cfg);
fd_status fd_config_set(fd_config* cfg, const char* key, const char* value);
/* "key=value" */
fd_status fd_config_override(fd_config* cfg, const char* assignment);
/* Returned pointers stay valid until the next call on the same handle. */
fd_status fd_config_get(const fd_config* cfg, const char* key, const char** value);
fd_status fd_config_hash(const fd_config* cfg, const char** hash);
fd_status fd_config_text(const fd_config* cfg, const char** text);
/* Newline-separated "key<TAB>type<TAB>help" lines of every known key. */
const char* fd_config_keys(void);

/* ---- pipeline steps (output layout under run.out) ---- */
/* which: "normal", "fault" or "both" */
fd_status fd_run_make_data(const fd_config* cfg, const char* which);
fd_status fd_run_pretrain(const fd_config* cfg);
fd_status fd_run_finetune(const fd_config* cfg);
fd_status fd_run_generate(const fd_config* cfg, fd_dataset** out);
fd_status fd_run_evaluate(const fd_config* cfg, fd_report** out);
fd_status fd_run_embed(const fd_config* cfg);
/* Writes reports/downstream.json; *json receives its text (freed with the
 * next call). */
fd_status fd_run_downstream(const fd_config* cfg, const char** json);

/* ---- corpora ---- */
fd_status fd_dataset_load(const char* dir, fd_dataset** out);
fd_status fd_dataset_save(const fd_dataset* ds, const char* dir);
void fd_dataset_free(fd_dataset* ds);
size_t fd_dataset_size(const fd_dataset* ds);
size_t fd_dataset_seq_len(const fd_dataset* ds);
size_t fd_dataset_channels(const fd_dataset* ds);
const char* fd_dataset_id(const fd_dataset* ds);
const char* fd_dataset_label(const fd_dataset* ds);
/* Copies sample i (seq_len * channels floats, row = timestep). */
fd_status fd_dataset_sample(const fd_dataset* ds, size_t i, float* buffer, size_t capacity);

/* ---- models ---- */
fd_status fd_model_load(const char* checkpoint, fd_model** out);
void fd_model_free(fd_model* model);
/* Returns FD_ERR_USAGE when the model has no adapter. */
fd_status fd_model_set_alpha(fd_model* model, double alpha);
fd_status fd_model_generate(const fd_model* model, size_t n, uint64_t seed, fd_dataset** out);

/* ---- metric reports ---- */
fd_status fd_evaluate(const fd_dataset* real, const fd_dataset* synth, const char* metrics, const char* seeds,
                      fd_report** out);
void fd_report_free(fd_report* report);
/* FD_ERR_USAGE if the metric was not evaluated. */
fd_status fd_report_median(const fd_report* report, const char* metric, double* value);
const char* fd_report_json(const fd_report* report);
const char* fd_report_csv(const fd_report* report);

#ifdef __cplusplus
}
#endif

#endif
