/* C interface to the htcvlm library: opaque handles, integer status codes.
 * Every function returning htc_status sets a thread-local error message
 * readable via htc_last_error() on failure. Strings returned through out
 * parameters are heap-allocated; release them with htc_string_free(). */
#ifndef HTCVLM_H
#define HTCVLM_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef struct htc_config htc_config;
typedef struct htc_model htc_model;

typedef enum htc_status {
    HTC_OK = 0,
    HTC_ERR_INVALID_ARGUMENT = 1,
    HTC_ERR_CONFIG = 2,
    HTC_ERR_IO = 3,
    HTC_ERR_CHECKPOINT = 4,
    HTC_ERR_SHAPE = 5,
    HTC_ERR_NUMERIC = 6,
    HTC_ERR_UNSUPPORTED = 7,
    HTC_ERR_INTERNAL = 8
} htc_status;

const char* htc_version(void);
const char* htc_status_name(htc_status status);
const char* htc_last_error(void);
void htc_string_free(char* s);

/* configuration ---------------------------------------------------------- */
htc_status htc_config_create(htc_config** out);
htc_status htc_config_load(const char* path, htc_config** out);
htc_status htc_config_set(htc_config* cfg, const char* key, const char* value);
htc_status htc_config_get(const htc_config* cfg, const char* key, char** value_out);
htc_status htc_config_resolved(const htc_config* cfg, char** text_out);
void htc_config_free(htc_config* cfg);

/* checkpoints ------------------------------------------------------------ */
htc_status htc_model_open(const char* checkpoint_path, htc_model** out);
htc_status htc_model_config(const htc_model* model, char** text_out);
void htc_model_free(htc_model* model);

/* commands; each writes under <run.out>/<run.id>/ and returns a summary --- */
htc_status htc_run_fit_quantizer(const htc_config* cfg, char** summary_out);
htc_status htc_run_train(const htc_config* cfg, char** summary_out);
htc_status htc_run_eval(const htc_config* cfg, const char* checkpoint, char** summary_out);
htc_status htc_run_probe(const htc_config* cfg, const char* checkpoint, char** summary_out);
htc_status htc_run_attn(const htc_config* cfg, const char* checkpoint, char** summary_out);
htc_status htc_run_sweep(const htc_config* cfg, const char* axis, char** summary_out);
htc_status htc_run_mask_dump(const htc_config* cfg, char** csv_out);
htc_status htc_run_bench(const htc_config* cfg, char** report_out);
htc_status htc_run_data_stats(const htc_config* cfg, char** report_out);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* HTCVLM_H */
