#ifndef STPP_H
#define STPP_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

/* C interface to the spatio-temporal point process library.
 *
 * Every function returns a status code; on failure the handle/out-parameters
 * are left untouched and stpp_last_error() describes what went wrong.
 * Structured parameters travel as JSON strings; returned strings must be
 * released with stpp_string_free. */

typedef enum stpp_status {
    STPP_OK = 0,
    STPP_USAGE_ERROR = 1,  /* invalid arguments or configuration */
    STPP_RUNTIME_ERROR = 2 /* numerics, infeasibility, or I/O failure */
} stpp_status;

typedef struct stpp_dataset stpp_dataset; /* immutable collection of event sequences */
typedef struct stpp_model stpp_model;     /* kernel model + optional optimizer state */

/* Message for the most recent failure on the calling thread ("" if none). */
const char* stpp_last_error(void);

/* Releases a string returned through a char** out-parameter. NULL is a no-op. */
void stpp_string_free(char* s);

/* Library version, e.g. "1.0.0". Static storage; do not free. */
const char* stpp_version(void);

/* ---- datasets ---------------------------------------------------------- */

/* Simulates sequences from a named ground-truth kernel via thinning.
 * params_json: {"kernel": "<id>", "sequences": n, "seed": u64, "threads": k}
 * ("threads" optional, default 1). */
stpp_status stpp_dataset_simulate(const char* params_json, stpp_dataset** out);

/* Reads / writes the line-delimited JSON dataset format. Writes are atomic. */
stpp_status stpp_dataset_load(const char* path, stpp_dataset** out);
stpp_status stpp_dataset_save(const stpp_dataset* ds, const char* path);

/* JSON summary: kernel id, mu, seed, window, sequence and event counts. */
stpp_status stpp_dataset_info(const stpp_dataset* ds, char** json_out);

/* Deterministic shuffle-then-cut split; both halves inherit the metadata. */
stpp_status stpp_dataset_split(const stpp_dataset* ds, double train_frac, uint64_t seed,
                               stpp_dataset** train_out, stpp_dataset** test_out);

void stpp_dataset_free(stpp_dataset* ds);

/* ---- models ------------------------------------------------------------ */

/* Fresh model with randomly initialized basis networks.
 * spec_json keys (all optional, defaults in parentheses): spatial_dim (0),
 * temporal_rank (1), spatial_rank (0), mark_rank (0), num_marks (0),
 * tau_max (1.0), a_max (0.0), hidden ([64,64]),
 * temporal_param ("displacement" | "history_time"), t_ref (0.0),
 * mu_init (1.0), alpha_init (0.1). */
stpp_status stpp_model_create(const char* spec_json, uint64_t seed, stpp_model** out);

/* Checkpoint round trip; parameters and optimizer state restore exactly. */
stpp_status stpp_model_load(const char* path, stpp_model** out);
stpp_status stpp_model_save(const stpp_model* m, const char* path);

/* JSON summary: spec, parameter count, mu, training progress if any. */
stpp_status stpp_model_info(const stpp_model* m, char** json_out);

/* Runs further training epochs on the dataset, advancing the model and its
 * optimizer state in place (a loaded checkpoint resumes its trajectory).
 * train_json keys (optional): batch_size (64), epochs (50),
 * learning_rate (0.1), w0 (1.0), anneal (1.2), eps_b (1e-3),
 * min_intensity (1e-8), seed (0), freeze_kernel (false),
 * grids {ut, us_target, bar_t, bar_s_axis}.
 * history_csv_path: per-epoch log destination, or NULL to skip. */
stpp_status stpp_model_fit(stpp_model* m, const stpp_dataset* train, const char* train_json,
                           const char* history_csv_path);

/* Metric sweep over a test dataset; returns the report as JSON.
 * eval_json keys (optional): grids {...}, mre_time_nodes (100),
 * mre_space_axis (15), predict_time_nodes (200), predict_space_axis (12),
 * survival_cutoff (1e-6), max_horizon_factor (10.0),
 * reference_kernel ("<id>" enables MRE and the reference log-likelihood),
 * with_prediction (false). */
stpp_status stpp_model_evaluate(const stpp_model* m, const stpp_dataset* test,
                                const char* eval_json, char** report_json_out);

/* Expected time and location of the next event after the given history
 * (first sequence of `prefix`). Returns JSON {"t_hat", "s_hat", "survival_tail",
 * "horizon_exceeded", "mark_probs"? }. eval_json as in stpp_model_evaluate. */
stpp_status stpp_model_predict(const stpp_model* m, const stpp_dataset* prefix,
                               const char* eval_json, char** json_out);

/* Writes plotting CSVs under out_dir: fitted-kernel heatmap, and when
 * params_json carries "reference_kernel" also the true-kernel heatmap and a
 * fitted-vs-true intensity curve for one sequence of `ds`.
 * params_json keys (optional): heatmap_grid (60), curve_time_nodes (400),
 * sequence_index (0), reference_kernel, grids {...}. */
stpp_status stpp_model_export_curves(const stpp_model* m, const stpp_dataset* ds,
                                     const char* params_json, const char* out_dir);

void stpp_model_free(stpp_model* m);

/* ---- analyses ----------------------------------------------------------- */

/* Numerical ranks of a ground-truth kernel's temporal matrix under the
 * history parameterization (t', t) and the displacement parameterization
 * (t', t - t').
 * params_json: {"kernel": "<id>", "grid": n (300), "tol": eps (1e-10)}.
 * Returns JSON {"kernel", "grid", "tol", "rank_history", "rank_displacement"}. */
stpp_status stpp_rank_analysis(const char* params_json, char** json_out);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* STPP_H */
