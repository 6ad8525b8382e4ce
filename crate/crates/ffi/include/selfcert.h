#ifndef SELFCERT_H
#define SELFCERT_H

#include <stdint.h>
#include <stdbool.h>
#include <stddef.h>

typedef enum SelfcertStatus {
  SELFCERT_STATUS_OK = 0,
  SELFCERT_STATUS_NULL_POINTER = 1,
  SELFCERT_STATUS_INVALID_ARGUMENT = 2,
  SELFCERT_STATUS_IO = 3,
  SELFCERT_STATUS_PARSE = 4,
  SELFCERT_STATUS_NUMERICAL = 5,
  SELFCERT_STATUS_MODEL_FORMAT = 6,
  SELFCERT_STATUS_CERTIFICATION = 7,
  SELFCERT_STATUS_PANIC = 8,
} SelfcertStatus;

/**
 * Opaque dataset handle.
 */
typedef struct SelfcertDataset SelfcertDataset;

/**
 * Opaque model handle (deterministic network or Gaussian weight distribution).
 */
typedef struct SelfcertModel SelfcertModel;

typedef struct SelfcertBound {
  double value;
  /**
   * The raw bound reached 1 and `value` was clamped.
   */
  bool vacuous;
} SelfcertBound;

typedef struct SelfcertCertifyOptions {
  /**
   * Monte Carlo weight draws.
   */
  uint64_t m;
  uint64_t seed;
  double delta;
  double delta_prime;
  /**
   * Worker threads, 0 for all cores.
   */
  size_t workers;
} SelfcertCertifyOptions;

typedef struct SelfcertCertificate {
  double mc_avg;
  uint64_t mc_errors;
  double emp_bound;
  double kl_div;
  uint64_t n_cert;
  uint64_t m;
  double final_bound;
  double quad_bound;
  bool vacuous;
} SelfcertCertificate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null after a success.
 * The pointer stays valid until the next call into this library on the
 * same thread.
 */
const char *selfcert_last_error(void);

/**
 * Library version as a static nul-terminated string.
 */
const char *selfcert_version(void);

/**
 * Largest `p` with `kl(q || p) <= c`.
 *
 * # Safety
 * `out` must be null or point to writable memory for one `double`.
 */
enum SelfcertStatus selfcert_kl_inverse(double q, double c, double *out);

/**
 * PAC-Bayes-kl bound from an empirical risk bound and a KL divergence.
 *
 * # Safety
 * `out` must be null or point to a writable `SelfcertBound`.
 */
enum SelfcertStatus selfcert_pac_bayes_kl_bound(double emp_risk,
                                                double kl_div,
                                                uint64_t n,
                                                double delta,
                                                struct SelfcertBound *out);

/**
 * Quadratic PAC-Bayes bound.
 *
 * # Safety
 * `out` must be null or point to a writable `SelfcertBound`.
 */
enum SelfcertStatus selfcert_quadratic_bound(double emp_risk,
                                             double kl_div,
                                             uint64_t n,
                                             double delta,
                                             struct SelfcertBound *out);

/**
 * Upper bound on the expected empirical risk from an `m`-draw Monte Carlo average.
 *
 * # Safety
 * `out` must be null or point to writable memory for one `double`.
 */
enum SelfcertStatus selfcert_mc_sample_bound(double mc_avg,
                                             uint64_t m,
                                             double delta_prime,
                                             double *out);

/**
 * Hoeffding-Chernoff test-set bound.
 *
 * # Safety
 * `out` must be null or point to a writable `SelfcertBound`.
 */
enum SelfcertStatus selfcert_chernoff_bound(double test_err,
                                            uint64_t n_test,
                                            double delta,
                                            struct SelfcertBound *out);

/**
 * Binomial tail inversion bound for `k` errors out of `n_test`.
 *
 * # Safety
 * `out` must be null or point to a writable `SelfcertBound`.
 */
enum SelfcertStatus selfcert_binomial_bound(uint64_t k,
                                            uint64_t n_test,
                                            double delta,
                                            struct SelfcertBound *out);

/**
 * Builds a dataset from a row-major `rows x dim` feature matrix and labels in
 * `0..num_classes`.
 *
 * # Safety
 * `features` must point to `rows * dim` doubles, `labels` to `rows`
 * `uint32_t`s, and `out` to writable storage for a handle.
 */
enum SelfcertStatus selfcert_dataset_from_arrays(const double *features,
                                                 const uint32_t *labels,
                                                 size_t rows,
                                                 size_t dim,
                                                 size_t num_classes,
                                                 struct SelfcertDataset **out);

/**
 * Loads a CSV with a header row. `label_col` is a column name, a 0-based
 * index, or null for the last column.
 *
 * # Safety
 * `path` and a non-null `label_col` must be nul-terminated strings; `out`
 * must point to writable storage for a handle.
 */
enum SelfcertStatus selfcert_dataset_load_csv(const char *path,
                                              const char *label_col,
                                              struct SelfcertDataset **out);

/**
 * Number of rows, 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or a live handle.
 */
size_t selfcert_dataset_rows(const struct SelfcertDataset *ds);

/**
 * Number of feature columns, 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or a live handle.
 */
size_t selfcert_dataset_dim(const struct SelfcertDataset *ds);

/**
 * Number of classes, 0 for a null handle.
 *
 * # Safety
 * `ds` must be null or a live handle.
 */
size_t selfcert_dataset_num_classes(const struct SelfcertDataset *ds);

/**
 * # Safety
 * `ds` must be null or a handle not yet freed.
 */
void selfcert_dataset_free(struct SelfcertDataset *ds);

/**
 * Loads a model file written by the `selfcert` tool.
 *
 * # Safety
 * `path` must be a nul-terminated string and `out` must point to writable
 * storage for a handle.
 */
enum SelfcertStatus selfcert_model_load(const char *path, struct SelfcertModel **out);

/**
 * True for a Gaussian weight distribution, false for a deterministic
 * network or a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
bool selfcert_model_is_gaussian(const struct SelfcertModel *model);

/**
 * Number of network parameters, 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t selfcert_model_num_params(const struct SelfcertModel *model);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void selfcert_model_free(struct SelfcertModel *model);

/**
 * Defaults used by the `selfcert` tool.
 */
struct SelfcertCertifyOptions selfcert_certify_options_default(void);

/**
 * Risk certificate for `posterior` on `data`, relative to `prior`.
 *
 * By passing `data` the caller asserts that none of its rows influenced the
 * prior, and that it is already in the model's input space (the same
 * preprocessing as at training time).
 *
 * # Safety
 * All pointers must be live handles or valid structs; `opts` may be null for
 * the defaults.
 */
enum SelfcertStatus selfcert_certify(const struct SelfcertModel *posterior,
                                     const struct SelfcertModel *prior,
                                     const struct SelfcertDataset *data,
                                     const struct SelfcertCertifyOptions *opts,
                                     struct SelfcertCertificate *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SELFCERT_H */
