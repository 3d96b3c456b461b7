#ifndef DCDP_H
#define DCDP_H

/* Generated with cbindgen:0.27.0 */

/* Generated by cbindgen from the dcdp-ffi crate; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Execution mode for a runtime handle.
 */
typedef enum DcdpMode {
  DCDP_MODE_OPEN_LOOP = 0,
  DCDP_MODE_CLOSED_LOOP = 1,
  DCDP_MODE_TEMPORAL_ENSEMBLE = 2,
  DCDP_MODE_DCDP = 3,
} DcdpMode;

/**
 * Result codes for every fallible call.
 */
typedef enum DcdpStatus {
  DCDP_STATUS_OK = 0,
  DCDP_STATUS_NULL_ARGUMENT = 1,
  DCDP_STATUS_IO = 2,
  DCDP_STATUS_FORMAT = 3,
  DCDP_STATUS_INVALID = 4,
  DCDP_STATUS_PANIC = 5,
} DcdpStatus;

/**
 * Opaque simulation environment.
 */
typedef struct DcdpEnv DcdpEnv;

/**
 * Opaque frozen policy bundle (diffusion policy + stage-1 model).
 */
typedef struct DcdpPolicy DcdpPolicy;

/**
 * Opaque stepping runtime. Feed one observation per control step with
 * `dcdp_runtime_observe`, then read the action with `dcdp_runtime_action`.
 */
typedef struct DcdpRuntimeHandle DcdpRuntimeHandle;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *dcdp_last_error(void);

/**
 * ABI revision; bump on any breaking header change.
 */
uint32_t dcdp_abi_version(void);

/**
 * Create an environment reset to `seed` with no perturbation.
 *
 * # Safety
 * `out` must point to writable storage for one pointer.
 */
enum DcdpStatus dcdp_env_new(uint64_t seed, struct DcdpEnv **out);

/**
 * # Safety
 * `env` must be a pointer from [`dcdp_env_new`], not yet freed.
 */
void dcdp_env_free(struct DcdpEnv *env);

/**
 * Reset in place, keeping the configured perturbation schedule.
 *
 * # Safety
 * `env` must be a valid handle.
 */
enum DcdpStatus dcdp_env_reset(struct DcdpEnv *env, uint64_t seed);

/**
 * Configure the perturbation: kind 0 = none, 1 = constant, 2 = random.
 *
 * # Safety
 * `env` must be a valid handle.
 */
enum DcdpStatus dcdp_env_set_perturbation(struct DcdpEnv *env,
                                          uint32_t kind,
                                          double magnitude,
                                          double dir_x,
                                          double dir_y,
                                          uint32_t resample_period,
                                          uint64_t seed);

/**
 * Advance one control step toward the target position `(ax, ay)`.
 * Writes the scaled 5-float state vector and the overlap ratio.
 *
 * # Safety
 * `env` must be valid; `out_state5` must have room for 5 doubles and
 * `out_sigma` for one, or be null to skip.
 */
enum DcdpStatus dcdp_env_step(struct DcdpEnv *env,
                              double ax,
                              double ay,
                              double *out_state5,
                              double *out_sigma);

/**
 * Current scaled state vector without stepping.
 *
 * # Safety
 * `env` must be valid; `out_state5` must have room for 5 doubles.
 */
enum DcdpStatus dcdp_env_state(const struct DcdpEnv *env, double *out_state5);

/**
 * Render the 48x48 grayscale observation (2304 doubles, row-major).
 *
 * # Safety
 * `env` must be valid; `out_pixels` must have room for 2304 doubles.
 */
enum DcdpStatus dcdp_env_render(const struct DcdpEnv *env, double *out_pixels);

/**
 * Load both checkpoints. The handle is immutable and may back any number
 * of runtimes.
 *
 * # Safety
 * `dp_path` and `fast_path` must be NUL-terminated UTF-8 paths; `out` must
 * point to writable storage for one pointer.
 */
enum DcdpStatus dcdp_policy_load(const char *dp_path,
                                 const char *fast_path,
                                 struct DcdpPolicy **out);

/**
 * # Safety
 * `policy` must be a pointer from [`dcdp_policy_load`], not yet freed.
 * Runtimes created from it keep their own reference and stay valid.
 */
void dcdp_policy_free(struct DcdpPolicy *policy);

/**
 * Combined parameter checksum, for training-free audits.
 *
 * # Safety
 * `policy` must be valid; `out` must point to one u64.
 */
enum DcdpStatus dcdp_policy_checksum(const struct DcdpPolicy *policy, uint64_t *out);

/**
 * Create a runtime bound to `policy`.
 *
 * # Safety
 * `policy` must be a valid handle; `out` must point to writable storage
 * for one pointer.
 */
enum DcdpStatus dcdp_runtime_new(const struct DcdpPolicy *policy,
                                 enum DcdpMode mode,
                                 uint64_t seed,
                                 struct DcdpRuntimeHandle **out);

/**
 * # Safety
 * `rt` must be a pointer from [`dcdp_runtime_new`], not yet freed.
 */
void dcdp_runtime_free(struct DcdpRuntimeHandle *rt);

/**
 * Supply the observation for the current control step: the scaled 5-float
 * state vector and the 48x48 image (2304 doubles).
 *
 * # Safety
 * `rt` must be valid; `state5` must point to 5 doubles and `image2304` to
 * 2304 doubles.
 */
enum DcdpStatus dcdp_runtime_observe(struct DcdpRuntimeHandle *rt,
                                     const double *state5,
                                     const double *image2304);

/**
 * Compute the action for the current step and advance the step cursor.
 *
 * # Safety
 * `rt` must be valid and have received an observation for this step;
 * `out_action2` must have room for 2 doubles.
 */
enum DcdpStatus dcdp_runtime_action(struct DcdpRuntimeHandle *rt, double *out_action2);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DCDP_H */
