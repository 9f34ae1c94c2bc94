#ifndef TFM_LAB_H
#define TFM_LAB_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TfmAuditKind {
  TFM_AUDIT_KIND_DSIC = 0,
  TFM_AUDIT_KIND_BPIC = 1,
  TFM_AUDIT_KIND_APPROX_DSIC = 2,
} TfmAuditKind;

typedef enum TfmStatus {
  TFM_STATUS_OK = 0,
  /**
   * An audit found witnesses.
   */
  TFM_STATUS_FAIL = 1,
  TFM_STATUS_INVALID_ARGUMENT = 2,
  TFM_STATUS_PARSE_ERROR = 3,
  TFM_STATUS_BUDGET_EXCEEDED = 4,
  TFM_STATUS_GUARDRAIL_EXCEEDED = 5,
  TFM_STATUS_UNSUPPORTED = 6,
  TFM_STATUS_CONSTRUCTION_FAILED = 7,
  TFM_STATUS_BUFFER_TOO_SMALL = 8,
  TFM_STATUS_PANIC = 9,
} TfmStatus;

/**
 * A parsed scenario file: scenario, mechanism and grid.
 */
typedef struct TfmScenario TfmScenario;

typedef struct TfmAuditSummary {
  /**
   * 1 when the audit passed.
   */
  uint8_t passed;
  int64_t max_regret;
  uint64_t cells_checked;
  uint64_t cells_skipped;
  uint64_t witnesses;
} TfmAuditSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or NULL. Valid until
 * the next call into the library from the same thread.
 */
const char *tfm_last_error(void);

/**
 * Parses a scenario file.
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` a valid pointer.
 */
enum TfmStatus tfm_scenario_from_toml(const char *toml, struct TfmScenario **out);

/**
 * # Safety
 * `scenario` must come from [`tfm_scenario_from_toml`] and not be used
 * afterwards. NULL is ignored.
 */
void tfm_scenario_free(struct TfmScenario *scenario);

/**
 * Number of transactions, or 0 for NULL.
 *
 * # Safety
 * `scenario` must be NULL or a live handle.
 */
size_t tfm_scenario_transaction_count(const struct TfmScenario *scenario);

/**
 * 12-hex-digit scenario digest as a new string.
 *
 * # Safety
 * `scenario` must be a live handle and `out` a valid pointer.
 */
enum TfmStatus tfm_scenario_digest(const struct TfmScenario *scenario, char **out);

/**
 * Audits the scenario under its own mechanism with the preset's
 * recommended bidding strategy. A grid step of 0 means "use the file's
 * grid, or 0..=20 step 1". Returns `TFM_STATUS_FAIL` when witnesses exist;
 * `out` is filled either way.
 *
 * # Safety
 * `scenario` must be a live handle and `out` a valid pointer.
 */
enum TfmStatus tfm_audit(const struct TfmScenario *scenario,
                         enum TfmAuditKind kind,
                         int64_t grid_step,
                         int64_t grid_max,
                         uint32_t jobs,
                         struct TfmAuditSummary *out);

/**
 * Writes the ids of the block the mechanism recommends at the file's bids
 * into `ids`. `len` receives the block length; when it exceeds `capacity`
 * nothing is written and `TFM_STATUS_BUFFER_TOO_SMALL` is returned.
 *
 * # Safety
 * `ids` must hold `capacity` elements (may be NULL when `capacity` is 0);
 * `len` must be a valid pointer.
 */
enum TfmStatus tfm_recommended_block(const struct TfmScenario *scenario,
                                     uint32_t *ids,
                                     size_t capacity,
                                     size_t *len);

/**
 * Welfare `v_BP(B) + sum of user valuations in B` of the block given by
 * `ids`, in order.
 *
 * # Safety
 * `ids` must hold `len` elements (may be NULL when `len` is 0); `out` must
 * be a valid pointer.
 */
enum TfmStatus tfm_welfare(const struct TfmScenario *scenario,
                           const uint32_t *ids,
                           size_t len,
                           int64_t *out);

/**
 * Builds the three-block welfare counterexample for the trivial mechanism
 * at ratio `rho_num / rho_den` and returns it as scenario-file TOML.
 *
 * # Safety
 * `out` must be a valid pointer.
 */
enum TfmStatus tfm_welfare_counterexample(int64_t rho_num, int64_t rho_den, char **out);

/**
 * Frees a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void tfm_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TFM_LAB_H */
