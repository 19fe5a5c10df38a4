#ifndef POINTBC_H
#define POINTBC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

/*
 Status codes returned by every fallible function.
 */
typedef enum PbcStatus {
  PBC_OK = 0,
  PBC_NULL_POINTER = 1,
  PBC_INVALID_ARGUMENT = 2,
  PBC_IO = 3,
  PBC_FORMAT = 4,
  PBC_POLICY = 5,
  PBC_PANIC = 6,
} PbcStatus;

/*
 Pinhole camera with a world-to-camera extrinsic.
 */
typedef struct PbcCamera PbcCamera;

/*
 Trained policy loaded from a parameter file.
 */
typedef struct PbcPolicy PbcPolicy;

/*
 Closed-loop runner: observation history plus temporal ensembling.
 */
typedef struct PbcRunner PbcRunner;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *pbc_version(void);

/*
 Copies the calling thread's last error message into `buf` (truncated,
 always NUL-terminated when `len > 0`). Returns the length the full
 message needs including the terminator, or 0 when there is no error.

 # Safety
 `buf` must be valid for `len` bytes or null.
 */
size_t pbc_last_error_message(char *buf, size_t len);

/*
 Creates a camera. `extrinsic` is a row-major 4x4 rigid world-to-camera
 transform.

 # Safety
 `extrinsic` must point to 16 doubles; `out` must be a valid pointer.
 */
enum PbcStatus pbc_camera_new(double fx,
                              double fy,
                              double cx,
                              double cy,
                              uint32_t width,
                              uint32_t height,
                              const double *extrinsic,
                              struct PbcCamera **out);

/*
 The simulator's fixed tabletop camera.

 # Safety
 `out` must be a valid pointer.
 */
enum PbcStatus pbc_camera_tabletop(struct PbcCamera **out);

/*
 # Safety
 `cam` must come from a `pbc_camera_*` constructor or be null.
 */
void pbc_camera_free(struct PbcCamera *cam);

/*
 Projects a world point to `(u, v, z)`: pixels and camera-frame depth.

 # Safety
 `world` must point to 3 doubles and `out_uvz` to room for 3.
 */
enum PbcStatus pbc_camera_project(const struct PbcCamera *cam,
                                  const double *world,
                                  double *out_uvz);

/*
 Back-projects pixel `(u, v)` at depth `z` to a camera-frame point.

 # Safety
 `out_xyz` must have room for 3 doubles.
 */
enum PbcStatus pbc_camera_back_project(const struct PbcCamera *cam,
                                       double u,
                                       double v,
                                       double z,
                                       double *out_xyz);

/*
 Normalized weights `exp(-m * age)` for `n` prediction ages.

 # Safety
 `ages` must point to `n` values and `out_weights` to room for `n`.
 */
enum PbcStatus pbc_ensemble_weights(const size_t *ages, size_t n, double m, double *out_weights);

/*
 Blends `n` predicted 4-D actions (row-major `n x 4`) with ages `ages`.

 # Safety
 `ages` must point to `n` values, `actions` to `4 n` doubles and
 `out_action` to room for 4.
 */
enum PbcStatus pbc_temporal_ensemble(const size_t *ages,
                                     const double *actions,
                                     size_t n,
                                     double m,
                                     double *out_action);

/*
 Loads a parameter file written by the trainer.

 # Safety
 `path` must be a NUL-terminated UTF-8 string; `out` a valid pointer.
 */
enum PbcStatus pbc_policy_load(const char *path, struct PbcPolicy **out);

/*
 # Safety
 `policy` must come from `pbc_policy_load` or be null. Runners created
 from it stay valid after this call.
 */
void pbc_policy_free(struct PbcPolicy *policy);

/*
 Encoder input length, history length and chunk length of a policy.

 # Safety
 Output pointers may be null; non-null ones must be valid.
 */
enum PbcStatus pbc_policy_dims(const struct PbcPolicy *policy,
                               size_t *input_dim,
                               size_t *history,
                               size_t *chunk);

/*
 Predicts the action chunk for the newest of `rows` observations
 (row-major `rows x input_dim`). Writes `chunk x 4` doubles.

 # Safety
 `obs` must point to `rows * input_dim` doubles and `out` to `out_len`.
 */
enum PbcStatus pbc_policy_predict(const struct PbcPolicy *policy,
                                  const double *obs,
                                  size_t rows,
                                  double *out,
                                  size_t out_len);

/*
 Creates a runner that shares the policy's parameters.

 # Safety
 `policy` must be a live handle; `out` a valid pointer.
 */
enum PbcStatus pbc_runner_new(const struct PbcPolicy *policy, struct PbcRunner **out);

/*
 # Safety
 `runner` must come from `pbc_runner_new` or be null.
 */
void pbc_runner_free(struct PbcRunner *runner);

/*
 Clears history and pending chunks for a new episode.

 # Safety
 `runner` must be a live handle.
 */
enum PbcStatus pbc_runner_reset(struct PbcRunner *runner);

/*
 One control step: appends `features` to the history and writes the
 ensembled action `[dx, dy, dz, gripper]`. A nonzero `blind` repeats the
 previous action.

 # Safety
 `features` must point to `len` doubles and `out_action` to room for 4.
 */
enum PbcStatus pbc_runner_act(struct PbcRunner *runner,
                              const double *features,
                              size_t len,
                              int blind,
                              double *out_action);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* POINTBC_H */
