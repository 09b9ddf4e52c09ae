#ifndef DLMP_H
#define DLMP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum {
  DLMP_STATUS_OK = 0,
  DLMP_STATUS_NULL_POINTER = 1,
  DLMP_STATUS_INVALID_UTF8 = 2,
  DLMP_STATUS_OUT_OF_RANGE = 3,
  /**
   * Case file could not be parsed or is not a radial network.
   */
  DLMP_STATUS_CASE = 10,
  /**
   * Linearized model could not be built.
   */
  DLMP_STATUS_MODEL = 11,
  /**
   * Dispatch problem invalid, infeasible or not solved.
   */
  DLMP_STATUS_DISPATCH = 12,
  DLMP_STATUS_PROSUMER = 13,
  DLMP_STATUS_MARKET = 14,
  DLMP_STATUS_SCENARIO = 15,
  DLMP_STATUS_IO = 16,
  /**
   * The requested quantity does not exist for this handle.
   */
  DLMP_STATUS_NOT_AVAILABLE = 20,
  DLMP_STATUS_PANIC = 99,
} DlmpStatus;

/**
 * Outcome of one pricing interval.
 */
typedef struct DlmpCycle DlmpCycle;

/**
 * Case, linearized model and participants, ready for dispatch.
 */
typedef struct DlmpEngine DlmpEngine;

/**
 * Largest over-limit amounts of a cycle (zero when clear).
 */
typedef struct {
  double branch_mw;
  double voltage_pu;
  double imbalance;
} DlmpViolations;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *dlmp_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *dlmp_version(void);

/**
 * Engine over the bundled 33-bus case and its participants.
 *
 * # Safety
 * `out` must be NULL or point to writable storage for one pointer.
 */
DlmpStatus dlmp_engine_new_default(DlmpEngine **out);

/**
 * Engine from JSON text. When `participants_json` is NULL the participants
 * are read from the case document.
 *
 * # Safety
 * String arguments must be NULL or NUL-terminated; `out` must be NULL or
 * writable.
 */
DlmpStatus dlmp_engine_from_json(const char *case_json,
                                 const char *participants_json,
                                 DlmpEngine **out);

/**
 * # Safety
 * `engine` must be NULL or a handle from `dlmp_engine_*` not yet freed.
 */
void dlmp_engine_free(DlmpEngine *engine);

/**
 * Number of node-phases (the length of every price vector).
 *
 * # Safety
 * `engine` must be a live handle; `out` must be NULL or writable.
 */
DlmpStatus dlmp_engine_num_node_phases(const DlmpEngine *engine, size_t *out);

/**
 * Dispatches the named scenario preset and evaluates the agents' responses
 * to the resulting prices.
 *
 * # Safety
 * `engine` must be a live handle, `scenario` NUL-terminated, `out` writable.
 */
DlmpStatus dlmp_run_cycle(const DlmpEngine *engine, const char *scenario, DlmpCycle **out);

/**
 * Evaluates the scenario under a flat tariff ($/MWh) with no dispatch.
 *
 * # Safety
 * As for [`dlmp_run_cycle`].
 */
DlmpStatus dlmp_run_flat(const DlmpEngine *engine,
                         const char *scenario,
                         double tariff,
                         DlmpCycle **out);

/**
 * # Safety
 * `cycle` must be NULL or a handle from `dlmp_run_*` not yet freed.
 */
void dlmp_cycle_free(DlmpCycle *cycle);

/**
 * Price at position `index`: bus id, phase (0 = a, 1 = b, 2 = c),
 * P-price ($/MWh) and Q-price ($/MVarh).
 *
 * # Safety
 * `cycle` must be a live handle; out-pointers must be NULL or writable.
 */
DlmpStatus dlmp_cycle_price(const DlmpCycle *cycle,
                            size_t index,
                            uint32_t *bus,
                            uint8_t *phase,
                            double *pi_p,
                            double *pi_q);

/**
 * Dispatch objective ($). `DLMP_STATUS_NOT_AVAILABLE` for flat-tariff cycles.
 *
 * # Safety
 * `cycle` must be a live handle; `out` must be NULL or writable.
 */
DlmpStatus dlmp_cycle_objective(const DlmpCycle *cycle, double *out);

/**
 * Largest gap (p.u.) between the dispatch and the agents' own choices.
 *
 * # Safety
 * `cycle` must be a live handle; `out` must be NULL or writable.
 */
DlmpStatus dlmp_cycle_max_deviation(const DlmpCycle *cycle, double *out);

/**
 * # Safety
 * `cycle` must be a live handle; `out` must be NULL or writable.
 */
DlmpStatus dlmp_cycle_violations(const DlmpCycle *cycle, DlmpViolations *out);

/**
 * Full cycle report as JSON. Release with [`dlmp_string_free`].
 *
 * # Safety
 * `cycle` must be a live handle; `out` must be NULL or writable.
 */
DlmpStatus dlmp_cycle_to_json(const DlmpCycle *cycle, char **out);

/**
 * # Safety
 * `s` must be NULL or a string returned by this library, not yet freed.
 */
void dlmp_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DLMP_H */
