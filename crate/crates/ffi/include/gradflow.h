#ifndef GRADFLOW_H
#define GRADFLOW_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum GfStatus {
  GF_STATUS_OK = 0,
  GF_STATUS_NULL_POINTER = 1,
  GF_STATUS_INVALID_INPUT = 2,
  GF_STATUS_NOT_MONOTONE = 3,
  GF_STATUS_DEGENERATE = 4,
  GF_STATUS_SOLVER_FAILURE = 5,
  GF_STATUS_BUFFER_TOO_SMALL = 6,
  GF_STATUS_IO = 7,
  GF_STATUS_PANIC = 99,
} GfStatus;

typedef enum GfEntropy {
  // `h(r) = r log r`
  GF_ENTROPY_XLOGX = 0,
  // `h(r) = r^m / (m - 1)`
  GF_ENTROPY_POWER = 1,
  GF_ENTROPY_NONE = 2,
} GfEntropy;

typedef enum GfHalt {
  GF_HALT_COMPLETED = 0,
  GF_HALT_BLOW_UP = 1,
  GF_HALT_STEP_UNDERFLOW = 2,
  GF_HALT_NON_FINITE = 3,
} GfHalt;

typedef struct GfDensity GfDensity;

typedef struct GfGrid GfGrid;

typedef struct GfState GfState;

typedef struct GfTrajectory GfTrajectory;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *gf_version(void);

// Copies the last error message of this thread into `buf` (NUL-terminated,
// truncated to `cap`) and returns its full length in bytes.
//
// # Safety
// `buf` must be null or point to `cap` writable bytes.
uintptr_t gf_last_error(char *buf, uintptr_t cap);

// Uniform mass grid with `k` cells.
//
// # Safety
// `out` must be a valid pointer.
enum GfStatus gf_grid_uniform(uintptr_t k, struct GfGrid **out);

// Grid from `n` positive cell masses summing to 1.
//
// # Safety
// `weights` must point to `n` values; `out` must be valid.
enum GfStatus gf_grid_from_weights(const double *weights, uintptr_t n, struct GfGrid **out);

// Number of cells.
//
// # Safety
// `grid` must be a live handle or null (returns 0).
uintptr_t gf_grid_cells(const struct GfGrid *grid);

// # Safety
// `grid` must come from this library and not be used afterwards.
void gf_grid_free(struct GfGrid *grid);

// Piecewise-constant density: `nv` values on `nv + 1` increasing breakpoints.
// With `normalize` the values are rescaled to unit mass, otherwise the mass must be 1.
//
// # Safety
// Arrays must hold the stated number of values; `out` must be valid.
enum GfStatus gf_density_new(const double *breakpoints,
                             uintptr_t nb,
                             const double *values,
                             uintptr_t nv,
                             bool normalize,
                             struct GfDensity **out);

// # Safety
// `density` must be a live handle; `mass` must be valid.
enum GfStatus gf_density_mass(const struct GfDensity *density, double *mass);

// Number of cells of the density.
//
// # Safety
// `density` must be a live handle or null (returns 0).
uintptr_t gf_density_cells(const struct GfDensity *density);

// Copies the breakpoints (`cells + 1` values) and values (`cells`) out.
//
// # Safety
// Buffers must hold `cap_b` and `cap_v` values.
enum GfStatus gf_density_data(const struct GfDensity *density,
                              double *breakpoints,
                              uintptr_t cap_b,
                              double *values,
                              uintptr_t cap_v);

// # Safety
// `density` must come from this library and not be used afterwards.
void gf_density_free(struct GfDensity *density);

// Exact quadratic Wasserstein distance between two 1D densities.
//
// # Safety
// Handles must be live; `w2` must be valid.
enum GfStatus gf_wasserstein1d(const struct GfDensity *a, const struct GfDensity *b, double *w2);

// Lagrangian state (inverse distribution function) of `density` on `grid`.
//
// # Safety
// Handles must be live; `out` must be valid.
enum GfStatus gf_state_from_density(const struct GfDensity *density,
                                    const struct GfGrid *grid,
                                    bool free_boundary,
                                    struct GfState **out);

// State from `n` strictly increasing positions.
//
// # Safety
// `positions` must hold `n` values; `out` must be valid.
enum GfStatus gf_state_new(const double *positions,
                           uintptr_t n,
                           bool free_boundary,
                           struct GfState **out);

// Number of nodes.
//
// # Safety
// `state` must be a live handle or null (returns 0).
uintptr_t gf_state_len(const struct GfState *state);

// # Safety
// `buf` must hold `cap` values.
enum GfStatus gf_state_positions(const struct GfState *state, double *buf, uintptr_t cap);

// Density represented by a state on `grid`.
//
// # Safety
// Handles must be live; `out` must be valid.
enum GfStatus gf_state_density(const struct GfState *state,
                               const struct GfGrid *grid,
                               struct GfDensity **out);

// # Safety
// `state` must come from this library and not be used afterwards.
void gf_state_free(struct GfState *state);

// Runs `steps` implicit steps of the 1D Fokker-Planck flow with entropy `entropy`
// (exponent `m` for the power case) and potential `V(x) = a x^2`, clock starting at `t0`.
//
// # Safety
// Handles must be live; `out` must be valid.
enum GfStatus gf_flow_fokker_planck(const struct GfGrid *grid,
                                    const struct GfState *initial,
                                    enum GfEntropy entropy,
                                    double m,
                                    double potential_a,
                                    double t0,
                                    double dt,
                                    uintptr_t steps,
                                    struct GfTrajectory **out);

// Number of stored states (steps + 1).
//
// # Safety
// `traj` must be a live handle or null (returns 0).
uintptr_t gf_trajectory_len(const struct GfTrajectory *traj);

// Time and discrete energy of state `i`.
//
// # Safety
// `traj` must be live; outputs must be valid.
enum GfStatus gf_trajectory_sample(const struct GfTrajectory *traj,
                                   uintptr_t i,
                                   double *time,
                                   double *energy);

// Copy of state `i` as a new handle.
//
// # Safety
// `traj` must be live; `out` must be valid.
enum GfStatus gf_trajectory_state(const struct GfTrajectory *traj,
                                  uintptr_t i,
                                  struct GfState **out);

// # Safety
// `traj` must come from this library and not be used afterwards.
void gf_trajectory_free(struct GfTrajectory *traj);

// Steady state of the finite-difference Keller-Segel scheme with `n` intervals
// and strength `chi`, written as `n + 1` node positions.
//
// # Safety
// `buf` must hold `cap` values.
enum GfStatus gf_ksfd_steady_state(uintptr_t n, double chi, double *buf, uintptr_t cap);

// Keller-Segel blob run from an `n_side x n_side` Gaussian lattice of width
// `sigma` and total mass `mass`, blob radius `eps`, up to `t_end`.
//
// # Safety
// Outputs must be valid.
enum GfStatus gf_blob_keller_segel(uintptr_t n_side,
                                   double sigma,
                                   double mass,
                                   double eps,
                                   double dt,
                                   double t_end,
                                   enum GfHalt *halt,
                                   double *final_time,
                                   double *second_moment);

// Porous-medium flow `d_t rho = Delta rho^m` on an `n x n` moving mesh of the
// unit square, from a corner Barenblatt profile at `t0`; reports the final
// energy and the smallest image triangle area seen.
//
// # Safety
// Outputs must be valid.
enum GfStatus gf_pme2d(uintptr_t n,
                       double m,
                       double t0,
                       double dt,
                       uintptr_t steps,
                       double *final_energy,
                       double *min_area);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GRADFLOW_H */
