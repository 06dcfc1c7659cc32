#ifndef RFIDETECT_H
#define RFIDETECT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum RfdStatus {
  RFD_STATUS_OK = 0,
  RFD_STATUS_NULL_POINTER = 1,
  RFD_STATUS_INVALID_ARGUMENT = 2,
  RFD_STATUS_CONFIG = 3,
  RFD_STATUS_OUT_OF_RANGE = 4,
  RFD_STATUS_IO = 5,
  RFD_STATUS_FORMAT = 6,
  RFD_STATUS_TRAINING = 7,
  RFD_STATUS_BUFFER_TOO_SMALL = 8,
  RFD_STATUS_PANIC = 9,
} RfdStatus;

/**
 * Emitter kind for [`RfdSource`].
 */
typedef enum RfdSourceKind {
  RFD_SOURCE_KIND_SOI = 0,
  RFD_SOURCE_KIND_RFI = 1,
} RfdSourceKind;

/**
 * Trained model plus calibrated threshold.
 */
typedef struct RfdDetector RfdDetector;

/**
 * Array geometry handle.
 */
typedef struct RfdGeometry RfdGeometry;

/**
 * Static emitter: direction in radians and SNR or INR in dB.
 */
typedef struct RfdSource {
  enum RfdSourceKind kind;
  double azimuth;
  double elevation;
  double level_db;
} RfdSource;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread; empty after a success.
 * Valid until the next call into this library on the same thread.
 */
const char *rfd_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *rfd_version(void);

/**
 * Creates a geometry. Spacings and wavelength share one length unit.
 *
 * # Safety
 * `out` must be a valid pointer to writable storage for a handle.
 */
enum RfdStatus rfd_geometry_new(size_t n_y,
                                size_t n_z,
                                double d_y,
                                double d_z,
                                double wavelength,
                                struct RfdGeometry **out);

/**
 * Releases a geometry. Null is ignored.
 *
 * # Safety
 * `geom` must be null or a handle from [`rfd_geometry_new`] not yet freed.
 */
void rfd_geometry_free(struct RfdGeometry *geom);

/**
 * Number of elements, `n_y·n_z`; 0 for a null handle.
 *
 * # Safety
 * `geom` must be null or a live geometry handle.
 */
size_t rfd_geometry_elements(const struct RfdGeometry *geom);

/**
 * Writes the steering vector for (azimuth, elevation) in radians as
 * `2·elements` interleaved doubles, element order `n·n_z + m`.
 *
 * # Safety
 * `geom` must be a live handle; `out` must hold `len` doubles.
 */
enum RfdStatus rfd_steering_vector(const struct RfdGeometry *geom,
                                   double azimuth,
                                   double elevation,
                                   double *out,
                                   size_t len);

/**
 * Image bin nearest to (azimuth, elevation) in radians.
 *
 * # Safety
 * `geom` must be a live handle; `u` and `v` must be writable.
 */
enum RfdStatus rfd_angles_to_bin(const struct RfdGeometry *geom,
                                 double azimuth,
                                 double elevation,
                                 size_t u_fft,
                                 size_t v_fft,
                                 int64_t *u,
                                 int64_t *v);

/**
 * Dirty image from `snapshots` rows of interleaved complex samples
 * (`2·elements` doubles per row). Writes `u_fft·v_fft` pixels, row `u`
 * major; pixel `(u, v)` sits at `(u + u_fft/2)·v_fft + v + v_fft/2`.
 *
 * # Safety
 * `geom` must be a live handle; `samples` must hold
 * `snapshots·2·elements` doubles; `out` must hold `len` doubles.
 */
enum RfdStatus rfd_dirty_image(const struct RfdGeometry *geom,
                               const double *samples,
                               size_t snapshots,
                               size_t u_fft,
                               size_t v_fft,
                               double *out,
                               size_t len);

/**
 * Simulates one frame of `count` static sources over unit-power noise
 * and writes its dirty image as in [`rfd_dirty_image`].
 *
 * # Safety
 * `geom` must be a live handle; `sources` must hold `count` entries
 * (it may be null when `count` is 0); `out` must hold `len` doubles.
 */
enum RfdStatus rfd_simulate_image(const struct RfdGeometry *geom,
                                  const struct RfdSource *sources,
                                  size_t count,
                                  size_t snapshots,
                                  uint64_t seed,
                                  size_t u_fft,
                                  size_t v_fft,
                                  double *out,
                                  size_t len);

/**
 * Loads a model checkpoint and a threshold JSON file.
 *
 * # Safety
 * Paths must be NUL-terminated UTF-8; `out` must be writable.
 */
enum RfdStatus rfd_detector_load(const char *checkpoint_path,
                                 const char *threshold_path,
                                 struct RfdDetector **out);

/**
 * Releases a detector. Null is ignored.
 *
 * # Safety
 * `det` must be null or a handle from [`rfd_detector_load`] not yet freed.
 */
void rfd_detector_free(struct RfdDetector *det);

/**
 * Features per frame the detector expects; 0 for a null handle.
 *
 * # Safety
 * `det` must be null or a live detector handle.
 */
size_t rfd_detector_feature_dim(const struct RfdDetector *det);

/**
 * Calibrated threshold; NaN for a null handle.
 *
 * # Safety
 * `det` must be null or a live detector handle.
 */
double rfd_detector_threshold(const struct RfdDetector *det);

/**
 * Scores one sequence of `frames` rows of `dim` features (normalized
 * image followed by the two look-angle features). Writes the
 * reconstruction error and 1 for anomalous, 0 for clean.
 *
 * # Safety
 * `det` must be a live handle; `features` must hold `frames·dim` doubles;
 * `error` and `anomalous` must be writable.
 */
enum RfdStatus rfd_detector_classify(const struct RfdDetector *det,
                                     const double *features,
                                     size_t frames,
                                     size_t dim,
                                     double *error,
                                     int32_t *anomalous);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RFIDETECT_H */
