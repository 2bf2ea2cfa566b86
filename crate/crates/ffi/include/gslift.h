#ifndef GSLIFT_H
#define GSLIFT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>

/*
 Result codes. Zero is success.
 */
typedef enum GslStatus {
  GSL_STATUS_OK = 0,
  GSL_STATUS_NULL_POINTER = 1,
  GSL_STATUS_INVALID_UTF8 = 2,
  GSL_STATUS_DIMENSION = 3,
  GSL_STATUS_RANGE = 4,
  GSL_STATUS_MASK = 5,
  GSL_STATUS_POSE = 6,
  GSL_STATUS_FORMAT = 7,
  GSL_STATUS_PARSE = 8,
  GSL_STATUS_FILE = 9,
  GSL_STATUS_CONFIG = 10,
  GSL_STATUS_OTHER = 11,
  GSL_STATUS_PANIC = 12,
} GslStatus;

/*
 Opaque pinhole camera.
 */
typedef struct GslCamera GslCamera;

/*
 Opaque Gaussian cloud.
 */
typedef struct GslCloud GslCloud;

/*
 Masked L1, PSNR (dB) and perceptual error.
 */
typedef struct GslMetrics {
  double l1;
  double psnr_db;
  double perceptual;
} GslMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static NUL-terminated string.
 */
const char *gsl_version(void);

/*
 Message of the last failed call on this thread; empty after a success.
 Valid until the next gslift call on the same thread.
 */
const char *gsl_last_error_message(void);

/*
 Number of doubles per primitive in parameter arrays: center (3),
 log-scale (3), rotation quaternion w,x,y,z (4), opacity logit (1),
 color (3).
 */
size_t gsl_params_per_primitive(void);

/*
 Loads a cloud file.

 # Safety
 `path` must be a NUL-terminated string; `out` must be writable.
 */
enum GslStatus gsl_cloud_load(const char *path, struct GslCloud **out);

/*
 Writes a cloud file (single precision on disk).

 # Safety
 `cloud` must come from this library; `path` must be NUL-terminated.
 */
enum GslStatus gsl_cloud_save(const struct GslCloud *cloud, const char *path);

/*
 Builds a cloud from `count` primitives of packed parameters.

 # Safety
 `params` must hold `count * gsl_params_per_primitive()` doubles.
 */
enum GslStatus gsl_cloud_from_params(const double *params, size_t count, struct GslCloud **out);

/*
 Copies the packed parameters into `out`, which holds `capacity` doubles.

 # Safety
 `cloud` must come from this library; `out` must hold `capacity` doubles.
 */
enum GslStatus gsl_cloud_params(const struct GslCloud *cloud, double *out, size_t capacity);

/*
 Primitive count; 0 for a null handle.

 # Safety
 `cloud` must be null or come from this library.
 */
size_t gsl_cloud_len(const struct GslCloud *cloud);

/*
 Uniform random init cloud in [-half_extent, half_extent]³.

 # Safety
 `out` must be writable.
 */
enum GslStatus gsl_cloud_init(size_t count,
                              double half_extent,
                              uint64_t seed,
                              struct GslCloud **out);

/*
 Default synthetic strand scene for `seed` (hair first, then body).

 # Safety
 `out` must be writable.
 */
enum GslStatus gsl_scene_generate(uint64_t seed, struct GslCloud **out);

/*
 # Safety
 `cloud` must be null or come from this library, and not be used after.
 */
void gsl_cloud_free(struct GslCloud *cloud);

/*
 Camera on the default orbit (radius 1.05 around the origin, 50 mm lens
 on a 36 mm sensor) at the given azimuth and elevation in radians.

 # Safety
 `out` must be writable.
 */
enum GslStatus gsl_camera_orbit(size_t width,
                                size_t height,
                                double azimuth,
                                double elevation,
                                struct GslCamera **out);

/*
 Loads a camera written by `gslift gen`.

 # Safety
 `path` must be NUL-terminated; `out` must be writable.
 */
enum GslStatus gsl_camera_load(const char *path, struct GslCamera **out);

/*
 Image size of a camera; zeros for a null handle.

 # Safety
 `camera` must be null or come from this library; outputs may be null.
 */
void gsl_camera_size(const struct GslCamera *camera, size_t *width, size_t *height);

/*
 # Safety
 `camera` must be null or come from this library, and not be used after.
 */
void gsl_camera_free(struct GslCamera *camera);

/*
 Renders `cloud` over a constant background. `rgb` receives
 width·height·3 values; `alpha` (optional) width·height values.

 # Safety
 Handles must come from this library; buffers must hold the stated
 lengths.
 */
enum GslStatus gsl_render(const struct GslCloud *cloud,
                          const struct GslCamera *camera,
                          const double *background,
                          double *rgb,
                          size_t rgb_len,
                          double *alpha,
                          size_t alpha_len);

/*
 Masked metrics of two RGB images. `mask` (width·height values,
 selected where ≥ 0.5) may be null to use every pixel.

 # Safety
 `rendered` and `truth` must hold width·height·3 doubles, `mask`
 width·height when given; `out` must be writable.
 */
enum GslStatus gsl_masked_metrics(const double *rendered,
                                  const double *truth,
                                  const double *mask,
                                  size_t width,
                                  size_t height,
                                  struct GslMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GSLIFT_H */
