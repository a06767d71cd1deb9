#ifndef DELAYSCALE_H
#define DELAYSCALE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes of every fallible call.
typedef enum DsStatus {
  DS_STATUS_OK = 0,
  DS_STATUS_NULL_POINTER = 1,
  DS_STATUS_INVALID_ARGUMENT = 2,
  DS_STATUS_CONFIG = 3,
  DS_STATUS_SYNTHESIS_FAILURE = 4,
  DS_STATUS_BLOW_UP = 5,
  DS_STATUS_NUMERIC_FAILURE = 6,
  DS_STATUS_BUFFER_TOO_SMALL = 7,
  DS_STATUS_PANIC = 8,
} DsStatus;

// A plant, its certified gains and the controller, built from a run config.
typedef struct DsDesign DsDesign;

// A finished (or halted) closed-loop simulation.
typedef struct DsResult DsResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Copies the calling thread's last error message into `buf` (NUL
// terminated, truncated to fit). Returns the full message length in bytes
// excluding the NUL.
//
// # Safety
// `buf` must be null or point to `cap` writable bytes.
size_t ds_last_error_message(char *buf, size_t cap);

// Library version as a static NUL-terminated string.
const char *ds_version(void);

// Builds a design from a run-config JSON document: the plant, the gains
// (synthesized, inline or from an artifact path) and the controller.
//
// # Safety
// `config_json` must be a NUL-terminated string and `out` a valid pointer.
enum DsStatus ds_design_new(const char *config_json, struct DsDesign **out);

// Releases a design; null is ignored.
//
// # Safety
// `design` must be null or a handle from [`ds_design_new`] not yet freed.
void ds_design_free(struct DsDesign *design);

// Plant order `n` and the length of the controller state vector,
// `(n - 1) + 4` laid out as `[x̂_2..x̂_n, ζ, r, r_u, θ̂]`.
//
// # Safety
// `design` must be a live handle; the out pointers must be valid or null.
enum DsStatus ds_design_dims(const struct DsDesign *design, size_t *n, size_t *state_len);

// Writes the gains artifact JSON into `buf` (NUL terminated). Fails with
// `BufferTooSmall` when `cap` is short; `needed` always receives the size
// including the NUL.
//
// # Safety
// `design` must be a live handle; `buf` null or `cap` writable bytes.
enum DsStatus ds_design_gains_json(const struct DsDesign *design,
                                   char *buf,
                                   size_t cap,
                                   size_t *needed);

// Number of values written by [`ds_controller_step`]: the state derivative
// followed by `u` and `ũ`.
//
// # Safety
// `design` must be a live handle.
size_t ds_controller_step_len(const struct DsDesign *design);

// Evaluates the controller at `state` with measured outputs `(y1, yn)`.
// Writes `[x̂̇_2..x̂̇_n, ζ̇, ṙ, ṙ_u, θ̂̇, u, ũ]` into `out`.
//
// # Safety
// `state` must point to `state_len` doubles and `out` to `out_len` doubles.
enum DsStatus ds_controller_step(const struct DsDesign *design,
                                 const double *state,
                                 size_t state_len,
                                 double y1,
                                 double yn,
                                 double *out,
                                 size_t out_len);

// Runs the closed loop with the config's `sim` section. A run that halts
// still yields a result; inspect it with [`ds_result_status`].
//
// # Safety
// `design` must be a live handle and `out` a valid pointer.
enum DsStatus ds_simulate(const struct DsDesign *design, struct DsResult **out);

// Releases a result; null is ignored.
//
// # Safety
// `result` must be null or a handle from [`ds_simulate`] not yet freed.
void ds_result_free(struct DsResult *result);

// `Ok` for a completed run, `BlowUp` or `NumericFailure` for a halted one.
//
// # Safety
// `result` must be a live handle.
enum DsStatus ds_result_status(const struct DsResult *result);

// Number of recorded rows and values per row (trajectory-CSV column order,
// without diagnostics).
//
// # Safety
// `result` must be a live handle; the out pointers must be valid or null.
enum DsStatus ds_result_shape(const struct DsResult *result, size_t *rows, size_t *width);

// Copies row `index` into `out`.
//
// # Safety
// `result` must be a live handle and `out` point to `out_len` doubles.
enum DsStatus ds_result_row(const struct DsResult *result,
                            size_t index,
                            double *out,
                            size_t out_len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DELAYSCALE_H */
