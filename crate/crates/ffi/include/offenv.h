#ifndef OFFENV_H
#define OFFENV_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum OffenvStatus {
  OFFENV_STATUS_OK = 0,
  OFFENV_STATUS_NULL_POINTER = 1,
  OFFENV_STATUS_INVALID_UTF8 = 2,
  OFFENV_STATUS_INVALID = 3,
  OFFENV_STATUS_SHAPE = 4,
  OFFENV_STATUS_SINGULAR = 5,
  OFFENV_STATUS_COVERAGE = 6,
  OFFENV_STATUS_DOMAIN = 7,
  OFFENV_STATUS_SOURCE_MISMATCH = 8,
  OFFENV_STATUS_NUMERICAL = 9,
  OFFENV_STATUS_DIVERGENCE = 10,
  OFFENV_STATUS_CONFIG = 11,
  OFFENV_STATUS_IO = 12,
  OFFENV_STATUS_PARSE = 13,
  OFFENV_STATUS_OUT_OF_RANGE = 14,
  OFFENV_STATUS_PANIC = 15,
} OffenvStatus;

typedef enum OffenvEstimator {
  OFFENV_ESTIMATOR_BETA_DICE_LINEAR = 0,
  OFFENV_ESTIMATOR_BETA_DICE_RKHS = 1,
  OFFENV_ESTIMATOR_BETA_GRADIENT_DICE = 2,
  OFFENV_ESTIMATOR_Q_ROUTE = 3,
  OFFENV_ESTIMATOR_SIMULATOR_ONLY = 4,
  OFFENV_ESTIMATOR_VANILLA_MIS = 5,
  OFFENV_ESTIMATOR_ORACLE = 6,
} OffenvEstimator;

/*
 A tabular MDP.
 */
typedef struct OffenvMdp OffenvMdp;

/*
 A stochastic policy table.
 */
typedef struct OffenvPolicy OffenvPolicy;

/*
 Rows of a finished sweep.
 */
typedef struct OffenvSweep OffenvSweep;

/*
 One sweep result. `ok` is 0 when the estimator failed; the message is
 then available from `offenv_sweep_row_error`.
 */
typedef struct OffenvRow {
  enum OffenvEstimator estimator;
  double eps_real;
  double delta;
  double alpha;
  uint64_t n;
  uint64_t seed;
  double j_hat;
  double j_te_exact;
  double abs_err;
  double sq_err;
  uint8_t ok;
} OffenvRow;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failing call on this thread, or NULL. The pointer
 stays valid until the next failing call on the same thread.
 */
const char *offenv_last_error(void);

/*
 Frees a string returned by this library. NULL is ignored.
 */
void offenv_string_free(char *s);

/*
 Parses an MDP document.
 */
enum OffenvStatus offenv_mdp_from_json(const char *json, struct OffenvMdp **out);

/*
 Builds a gridworld with noise `eps`. `spec_json` may be NULL for the
 default 4x4 layout.
 */
enum OffenvStatus offenv_gridworld_build(const char *spec_json, double eps, struct OffenvMdp **out);

/*
 Serializes an MDP; free the result with `offenv_string_free`.
 */
enum OffenvStatus offenv_mdp_to_json(const struct OffenvMdp *mdp, char **out);

size_t offenv_mdp_n_states(const struct OffenvMdp *mdp);

size_t offenv_mdp_n_actions(const struct OffenvMdp *mdp);

void offenv_mdp_free(struct OffenvMdp *mdp);

/*
 Policy from a row-major `n_states x n_actions` probability table.
 */
enum OffenvStatus offenv_policy_new(size_t n_states,
                                    size_t n_actions,
                                    const double *probs,
                                    struct OffenvPolicy **out);

/*
 Greedy optimal policy of `mdp`, ties broken toward the lowest action.
 */
enum OffenvStatus offenv_policy_optimal(const struct OffenvMdp *mdp, struct OffenvPolicy **out);

/*
 `(1 - rate) * base + rate * uniform`.
 */
enum OffenvStatus offenv_policy_mix(const struct OffenvPolicy *base,
                                    double rate,
                                    struct OffenvPolicy **out);

/*
 Copies the probability table into `buf`, which must hold
 `n_states * n_actions` values.
 */
enum OffenvStatus offenv_policy_table(const struct OffenvPolicy *pi, double *buf, size_t len);

void offenv_policy_free(struct OffenvPolicy *pi);

/*
 Exact normalized discounted value `J(pi)`.
 */
enum OffenvStatus offenv_policy_value(const struct OffenvMdp *mdp,
                                      const struct OffenvPolicy *pi,
                                      double *out);

/*
 Exact state-action occupancy, row-major into `buf` of length
 `n_states * n_actions`.
 */
enum OffenvStatus offenv_occupancy(const struct OffenvMdp *mdp,
                                   const struct OffenvPolicy *pi,
                                   double *buf,
                                   size_t len);

/*
 Runs a sweep described by an experiment config document on `jobs`
 threads (0 picks one).
 */
enum OffenvStatus offenv_sweep_run(const char *config_json, size_t jobs, struct OffenvSweep **out);

size_t offenv_sweep_len(const struct OffenvSweep *sweep);

enum OffenvStatus offenv_sweep_row(const struct OffenvSweep *sweep,
                                   size_t index,
                                   struct OffenvRow *out);

/*
 Failure message of a row, empty for successful rows. Owned by the sweep.
 */
const char *offenv_sweep_row_error(const struct OffenvSweep *sweep, size_t index);

/*
 The rows as CSV, byte-identical to the CLI's `results.csv`.
 */
enum OffenvStatus offenv_sweep_to_csv(const struct OffenvSweep *sweep, char **out);

void offenv_sweep_free(struct OffenvSweep *sweep);

/*
 Snake-case name of an estimator. Static; do not free.
 */
const char *offenv_estimator_name(enum OffenvEstimator e);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OFFENV_H */
