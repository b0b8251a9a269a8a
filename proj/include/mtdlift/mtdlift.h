/* C interface to the mtdlift uplift-modeling library.
 *
 * Every fallible call returns an mtdl_status. On failure the message is
 * available from mtdl_last_error() until the next call on the same thread.
 * Strings returned through char** out-parameters are owned by the caller and
 * released with mtdl_string_free(). Handles are released with their _free
 * function; passing NULL to a _free function is a no-op.
 */
#ifndef MTDLIFT_H
#define MTDLIFT_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define MTDL_API __declspec(dllexport)
#else
#define MTDL_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum mtdl_status {
  MTDL_OK = 0,
  MTDL_ERR_INVALID_ARGUMENT = 1,
  MTDL_ERR_PARSE = 2,
  MTDL_ERR_SCHEMA = 3,
  MTDL_ERR_TAXONOMY = 4,
  MTDL_ERR_SIZE = 5,
  MTDL_ERR_CALIBRATION = 6,
  MTDL_ERR_NUMERIC = 7,
  MTDL_ERR_TRAINING = 8,
  MTDL_ERR_DEGENERATE = 9,
  MTDL_ERR_IO = 10,
  MTDL_ERR_INTERNAL = 11
} mtdl_status;

typedef struct mtdl_dataset mtdl_dataset;
typedef struct mtdl_model mtdl_model;

MTDL_API const char* mtdl_version(void);
MTDL_API const char* mtdl_last_error(void);
/* "invalid_argument", "parse", ... ; "ok" for MTDL_OK. */
MTDL_API const char* mtdl_status_name(mtdl_status status);
MTDL_API void mtdl_string_free(char* text);

/* --- datasets --------------------------------------------------------------- */

MTDL_API mtdl_status mtdl_dataset_load(const char* path, mtdl_dataset** out);
MTDL_API mtdl_status mtdl_dataset_save(const mtdl_dataset* data, const char* path);
MTDL_API void mtdl_dataset_free(mtdl_dataset* data);

MTDL_API size_t mtdl_dataset_size(const mtdl_dataset* data);
MTDL_API mtdl_status mtdl_dataset_dims(const mtdl_dataset* data, size_t* context, size_t* categories, size_t* steps);
/* id is borrowed and stays valid while the dataset lives. has_true_ite and
 * true_ite may be NULL. */
MTDL_API mtdl_status mtdl_dataset_sample(const mtdl_dataset* data, size_t index, const char** id, int* treated,
                                         int* outcome, int* has_true_ite, double* true_ite);

/* JSON generator spec of a named preset. */
MTDL_API mtdl_status mtdl_preset_spec(const char* name, char** spec_json);
/* report_json (may be NULL) receives the effective spec and the expected
 * marginals after calibration. */
MTDL_API mtdl_status mtdl_dataset_generate(const char* spec_json, mtdl_dataset** out, char** report_json);

/* mode: "basic", "personnel", "information" or "other" (any case).
 * category_map_json may be NULL for the default grouping. */
MTDL_API mtdl_status mtdl_dataset_binarize(const mtdl_dataset* data, const char* mode, const char* category_map_json,
                                           mtdl_dataset** out);
MTDL_API mtdl_status mtdl_dataset_collapse(const mtdl_dataset* data, mtdl_dataset** out);
MTDL_API mtdl_status mtdl_dataset_split(const mtdl_dataset* data, double train_fraction, uint64_t seed,
                                        mtdl_dataset** train, mtdl_dataset** test);

/* --- models ------------------------------------------------------------------ */

/* kind: "slearner", "tlearner", "mtdnet" or "neural-tlearner".
 * config_json: TrainConfig JSON for the neural kinds; {"base_learner":
 * "logistic"|"boosted"} for the meta-learners. NULL keeps defaults.
 * log (may be NULL) receives the per-epoch metrics log for neural kinds. */
MTDL_API mtdl_status mtdl_model_train(const mtdl_dataset* train, const char* kind, const char* config_json,
                                      mtdl_model** out, char** log);
MTDL_API mtdl_status mtdl_model_save(const mtdl_model* model, const char* path);
MTDL_API mtdl_status mtdl_model_load(const char* path, mtdl_model** out);
MTDL_API void mtdl_model_free(mtdl_model* model);
MTDL_API const char* mtdl_model_kind(const mtdl_model* model);

/* Each output array holds n = mtdl_dataset_size(data) values; either
 * prediction array may be NULL. */
MTDL_API mtdl_status mtdl_model_predict(const mtdl_model* model, const mtdl_dataset* data, double* control,
                                        double* treated, size_t n);
MTDL_API mtdl_status mtdl_model_predict_ite(const mtdl_model* model, const mtdl_dataset* data, double* ite, size_t n);

/* --- metrics ------------------------------------------------------------------ */

/* metric: "qini", "auuc", "uplift_at_k" or "average_uplift". treated[i] is
 * nonzero for the treated arm. k is used by uplift_at_k only. An undefined
 * uplift_at_k returns MTDL_ERR_DEGENERATE with the reason as the error. */
MTDL_API mtdl_status mtdl_metric(const char* metric, const double* scores, const int* treated, const int* outcomes,
                                 size_t n, double k, double* value);
/* curve: "qini" or "uplift"; format: "csv" or "svg". */
MTDL_API mtdl_status mtdl_curve_export(const char* curve, const char* format, const char* title,
                                       const double* scores, const int* treated, const int* outcomes, size_t n,
                                       char** text);
MTDL_API mtdl_status mtdl_spearman(const double* a, const double* b, size_t n, double* rho, double* p_value);

/* --- search and experiments -------------------------------------------------------- */

/* grid: "full", "sub12" or a JSON grid object. */
MTDL_API mtdl_status mtdl_grid_search(const mtdl_dataset* train, const char* grid, const char* base_config_json,
                                      size_t jobs, char** table_csv, char** best_config_json);

/* which: "rq1" or "rq2". Writes a run directory under out_root. */
MTDL_API mtdl_status mtdl_run_experiment(const char* which, const char* spec_json, const char* config_json,
                                         const char* out_root, char** run_dir, char** table_text);

#ifdef __cplusplus
}
#endif

#endif /* MTDLIFT_H */
