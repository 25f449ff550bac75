/* C interface for the dcdr demand-response policy engine. */

#ifndef DCDR_H
#define DCDR_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result code for every FFI entry point.
typedef enum DcdrStatus {
  // Success.
  DCDR_STATUS_OK = 0,
  // A required pointer argument was null.
  DCDR_STATUS_NULL_ARGUMENT = 1,
  // A string argument was not valid UTF-8.
  DCDR_STATUS_INVALID_UTF8 = 2,
  // The configuration failed to parse, validate, or materialize.
  DCDR_STATUS_BAD_CONFIG = 3,
  // The policy solve failed (solver error or unknown policy).
  DCDR_STATUS_SOLVE_FAILED = 4,
  // The solve finished but the outcome violates its own constraints;
  // the outcome JSON is still returned for inspection.
  DCDR_STATUS_INFEASIBLE = 5,
  // An internal error (serialization failure or panic).
  DCDR_STATUS_INTERNAL = 6,
} DcdrStatus;

// Opaque engine handle: a validated configuration with materialized traces,
// fitted penalty models, and a ready-to-solve policy context.
typedef struct DcdrEngine DcdrEngine;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Builds an engine from a JSON configuration (same schema as the CLI's
// `--config` file). Synthetic traces are drawn from the config's seed and
// penalty models are fitted eagerly, so construction can take a moment.
//
// On success writes the new handle to `out` and returns `Ok`; the handle
// must be released with [`dcdr_engine_free`].
//
// # Safety
// `config_json` must be null or a valid NUL-terminated string; `out` must be
// a valid pointer to writable memory.
enum DcdrStatus dcdr_engine_new(const char *config_json, struct DcdrEngine **out);

// Releases an engine created by [`dcdr_engine_new`]. Null is a no-op.
//
// # Safety
// `engine` must be null or a pointer previously returned by
// [`dcdr_engine_new`] that has not already been freed.
void dcdr_engine_free(struct DcdrEngine *engine);

// Solves one policy at one hyperparameter and writes the outcome as a JSON
// document (adjustments, per-workload penalties, carbon accounting,
// feasibility, solver diagnostics) to `out_json`.
//
// Returns `Infeasible` when the policy itself reports an infeasible outcome;
// the JSON is still written so the caller can inspect it.
//
// # Safety
// `engine` must be a live handle from [`dcdr_engine_new`]; `policy` must be
// null or a valid NUL-terminated string; `out_json` must be writable.
enum DcdrStatus dcdr_engine_solve(const struct DcdrEngine *engine,
                                  const char *policy,
                                  double hyperparameter,
                                  char **out_json);

// Runs every policy grid in the configuration and writes the sweep result
// as a JSON document (`points`: the carbon/penalty frontier, `outcomes`:
// full per-solve outcomes, `errors`: failed grid points) to `out_json`.
//
// # Safety
// `engine` must be a live handle from [`dcdr_engine_new`]; `out_json` must
// be writable.
enum DcdrStatus dcdr_engine_sweep(const struct DcdrEngine *engine, char **out_json);

// Returns the message for the most recent error on this thread, or null if
// none has occurred. The caller owns the string and must release it with
// [`dcdr_string_free`].
char *dcdr_last_error_message(void);

// Releases a string returned by this library. Null is a no-op.
//
// # Safety
// `s` must be null or a string pointer returned by this library that has not
// already been freed.
void dcdr_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DCDR_H */
