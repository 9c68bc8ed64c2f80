#ifndef CBMOCO_H
#define CBMOCO_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

/*
 Result code of every exported function.
 */
typedef enum CbmStatus {
  CBM_STATUS_OK = 0,
  CBM_STATUS_NULL_POINTER = 1,
  CBM_STATUS_INVALID_ARGUMENT = 2,
  CBM_STATUS_CONFIG = 3,
  CBM_STATUS_GEOMETRY = 4,
  CBM_STATUS_STATE = 5,
  CBM_STATUS_FORMAT = 6,
  CBM_STATUS_IO = 7,
  CBM_STATUS_DIVERGENCE = 8,
  CBM_STATUS_PANIC = 9,
  CBM_STATUS_OTHER = 10,
} CbmStatus;

/*
 Opaque experiment configuration.
 */
typedef struct CbmConfig CbmConfig;

/*
 Opaque evaluation report.
 */
typedef struct CbmReport CbmReport;

/*
 Volume layout for the array entry points; `x` runs fastest.
 */
typedef struct CbmGrid {
  size_t dims[3];
  double spacing_mm[3];
  double origin_mm[3];
} CbmGrid;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or null. The pointer is
 valid until the next call into the library on this thread.
 */
const char *cbm_last_error_message(void);

/*
 Library version as a static NUL-terminated string.
 */
const char *cbm_version(void);

/*
 Creates a config from a preset name (`"desk"` or `"paper"`).

 # Safety
 `name` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CbmStatus cbm_config_from_preset(const char *name, struct CbmConfig **out);

/*
 Loads and validates a JSON config file.

 # Safety
 `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CbmStatus cbm_config_from_json_file(const char *path, struct CbmConfig **out);

/*
 Sets the seed of the simulated motion.

 # Safety
 `cfg` must come from a `cbm_config_*` constructor.
 */
enum CbmStatus cbm_config_set_seed(struct CbmConfig *cfg, uint64_t seed);

/*
 Sets the number of gradient-descent iterations.

 # Safety
 `cfg` must come from a `cbm_config_*` constructor.
 */
enum CbmStatus cbm_config_set_iterations(struct CbmConfig *cfg, size_t n_iters);

/*
 # Safety
 `cfg` must come from a `cbm_config_*` constructor or be null.
 */
void cbm_config_free(struct CbmConfig *cfg);

/*
 Runs simulate → estimate → reconstruct → evaluate, writing artifacts to
 `out_dir`, and returns the report.

 # Safety
 `cfg` must be a live config, `out_dir` a NUL-terminated string and
 `out` a valid pointer.
 */
enum CbmStatus cbm_run_experiment(const struct CbmConfig *cfg,
                                  const char *out_dir,
                                  struct CbmReport **out);

/*
 Initial and compensated reprojection error in mm.

 # Safety
 `report` must be live; `initial_mm` and `final_mm` valid pointers.
 */
enum CbmStatus cbm_report_rpe(const struct CbmReport *report, double *initial_mm, double *final_mm);

/*
 The report as a JSON string; release it with [`cbm_string_free`].

 # Safety
 `report` must be live and `out` a valid pointer.
 */
enum CbmStatus cbm_report_to_json(const struct CbmReport *report, char **out);

/*
 # Safety
 `report` must come from [`cbm_run_experiment`] or be null.
 */
void cbm_report_free(struct CbmReport *report);

/*
 # Safety
 `s` must come from this library or be null.
 */
void cbm_string_free(char *s);

/*
 Backprojects ramp-filtered projections (`n_views × rows × cols`) with
 `n_views` row-major 3×4 pixel-unit matrices into `out_volume`.

 # Safety
 Buffers must hold the element counts implied by the dimensions.
 */
enum CbmStatus cbm_backproject(const double *projections,
                               size_t n_views,
                               size_t rows,
                               size_t cols,
                               const double *matrices,
                               struct CbmGrid grid,
                               double *out_volume);

/*
 Vector–Jacobian product of [`cbm_backproject`] with respect to the
 matrices: writes `n_views` row-major 3×4 gradients to `out_grad`.

 # Safety
 Buffers must hold the element counts implied by the dimensions.
 */
enum CbmStatus cbm_backproject_geometry_vjp(const double *projections,
                                            size_t n_views,
                                            size_t rows,
                                            size_t cols,
                                            const double *matrices,
                                            struct CbmGrid grid,
                                            const double *upstream,
                                            double *out_grad);

/*
 Mean detector distance in mm between the fixed evaluation points
 projected with `estimated` and `reference` matrices.

 # Safety
 Both matrix buffers must hold `12 * n_views` values; `out_mm` must be valid.
 */
enum CbmStatus cbm_reprojection_error(const double *estimated,
                                      const double *reference,
                                      size_t n_views,
                                      double pixel_spacing_mm,
                                      double *out_mm);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CBMOCO_H */
