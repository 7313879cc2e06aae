#ifndef GSMR_H
#define GSMR_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  GSMR_STATUS_OK = 0,
  GSMR_STATUS_INVALID_PARAMETER = 1,
  GSMR_STATUS_INVALID_ARGUMENT = 2,
  GSMR_STATUS_DIMENSION_MISMATCH = 3,
  GSMR_STATUS_INVALID_CONFIG = 4,
  GSMR_STATUS_FORMAT = 5,
  GSMR_STATUS_DIVERGED = 6,
  GSMR_STATUS_IO = 7,
  GSMR_STATUS_JSON = 8,
  GSMR_STATUS_NULL_POINTER = 9,
  GSMR_STATUS_INVALID_UTF8 = 10,
  GSMR_STATUS_PANIC = 11,
} GsmrStatus;

typedef enum {
  GSMR_PHANTOM_KIND_SHEPP_LOGAN = 0,
  GSMR_PHANTOM_KIND_SHEPP_LOGAN_REAL = 1,
  GSMR_PHANTOM_KIND_BLOBS = 2,
} GsmrPhantomKind;

typedef enum {
  GSMR_SPLIT_MODE_ORIGINAL = 0,
  GSMR_SPLIT_MODE_LONG_AXIS = 1,
} GsmrSplitMode;

typedef struct GsmrAcquisition GsmrAcquisition;

typedef struct GsmrCloud GsmrCloud;

typedef struct GsmrCoils GsmrCoils;

typedef struct GsmrKSpace GsmrKSpace;

typedef struct GsmrMask GsmrMask;

typedef struct GsmrVolume GsmrVolume;

/*
 Flat mirror of the training configuration.
 */
typedef struct {
  size_t init_points;
  double density_scale;
  double grad_threshold;
  double size_threshold;
  double lambda;
  size_t max_gaussians;
  size_t densify_interval;
  size_t max_iters;
  GsmrSplitMode split_mode;
  double prune_eps;
  double lr_position_per_dim;
  double lr_log_scale;
  double lr_rotation;
  double lr_density;
  size_t plateau_window;
  double plateau_tol;
  /*
   True selects the L1 data term instead of squared L2.
   */
  bool dc_l1;
  /*
   True selects isotropic TV.
   */
  bool tv_isotropic;
  size_t eval_interval;
  uint64_t seed;
} GsmrTrainConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread; empty after a success.
 Valid until the next `gsmr_*` call on the same thread.
 */
const char *gsmr_last_error_message(void);

/*
 Creates a volume from `2 * nx * ny * nz` interleaved re/im doubles.

 # Safety
 `dims` points to 3 values; `data` points to `len` doubles.
 */
GsmrStatus gsmr_volume_from_data(const size_t *dims,
                                 const double *data,
                                 size_t len,
                                 GsmrVolume **out);

/*
 # Safety
 `v` is a live volume handle; `dims` points to 3 writable values.
 */
GsmrStatus gsmr_volume_dims(const GsmrVolume *v, size_t *dims);

/*
 Copies the samples as interleaved re/im doubles; `len` must be exactly
 twice the voxel count.

 # Safety
 `v` is a live volume handle; `data` points to `len` writable doubles.
 */
GsmrStatus gsmr_volume_copy_data(const GsmrVolume *v, double *data, size_t len);

/*
 # Safety
 `path` is a NUL-terminated string; `out` is writable.
 */
GsmrStatus gsmr_volume_read(const char *path_, GsmrVolume **out);

/*
 # Safety
 `v` is a live volume handle; `path` is a NUL-terminated string.
 */
GsmrStatus gsmr_volume_write(const GsmrVolume *v, const char *path_);

/*
 # Safety
 `v` is null or a handle not yet freed.
 */
void gsmr_volume_free(GsmrVolume *v);

/*
 `count` is used by the blobs variant only.

 # Safety
 `dims` points to 3 values; `out` is writable.
 */
GsmrStatus gsmr_phantom(const size_t *dims,
                        GsmrPhantomKind kind,
                        size_t count,
                        uint64_t seed,
                        GsmrVolume **out);

/*
 # Safety
 `dims` points to 3 values; `out` is writable.
 */
GsmrStatus gsmr_mask_generate(const size_t *dims,
                              double accel,
                              size_t calib,
                              double sigma_frac,
                              uint64_t seed,
                              GsmrMask **out);

/*
 # Safety
 `m` is a live mask handle; `count` is writable.
 */
GsmrStatus gsmr_mask_count(const GsmrMask *m, size_t *count);

/*
 # Safety
 `path` is a NUL-terminated string; `out` is writable.
 */
GsmrStatus gsmr_mask_read(const char *path_, GsmrMask **out);

/*
 # Safety
 `m` is a live mask handle; `path` is a NUL-terminated string.
 */
GsmrStatus gsmr_mask_write(const GsmrMask *m, const char *path_);

/*
 # Safety
 `m` is null or a handle not yet freed.
 */
void gsmr_mask_free(GsmrMask *m);

/*
 # Safety
 `dims` points to 3 values; `out` is writable.
 */
GsmrStatus gsmr_coils_synth(const size_t *dims, size_t num_coils, uint64_t seed, GsmrCoils **out);

/*
 # Safety
 `path` is a NUL-terminated string; `out` is writable.
 */
GsmrStatus gsmr_coils_read(const char *path_, GsmrCoils **out);

/*
 # Safety
 `c` is a live coils handle; `path` is a NUL-terminated string.
 */
GsmrStatus gsmr_coils_write(const GsmrCoils *c, const char *path_);

/*
 # Safety
 `c` is null or a handle not yet freed.
 */
void gsmr_coils_free(GsmrCoils *c);

/*
 Copies the mask and coil maps into a new acquisition model.

 # Safety
 `mask` and `coils` are live handles; `out` is writable.
 */
GsmrStatus gsmr_acquisition_new(const GsmrMask *mask,
                                const GsmrCoils *coils,
                                GsmrAcquisition **out);

/*
 # Safety
 `a` is null or a handle not yet freed.
 */
void gsmr_acquisition_free(GsmrAcquisition *a);

/*
 Simulates k-space; noise is added only when `add_noise` is true.

 # Safety
 `volume` and `acq` are live handles; `out` is writable.
 */
GsmrStatus gsmr_simulate(const GsmrVolume *volume,
                         const GsmrAcquisition *acq,
                         bool add_noise,
                         double noise_snr_db,
                         uint64_t seed,
                         GsmrKSpace **out);

/*
 Zero-filled reconstruction.

 # Safety
 `kspace` and `acq` are live handles; `out` is writable.
 */
GsmrStatus gsmr_adjoint(const GsmrKSpace *kspace, const GsmrAcquisition *acq, GsmrVolume **out);

/*
 # Safety
 `path` is a NUL-terminated string; `out` is writable.
 */
GsmrStatus gsmr_kspace_read(const char *path_, GsmrKSpace **out);

/*
 # Safety
 `k` is a live k-space handle; `path` is a NUL-terminated string.
 */
GsmrStatus gsmr_kspace_write(const GsmrKSpace *k, const char *path_);

/*
 # Safety
 `k` is null or a handle not yet freed.
 */
void gsmr_kspace_free(GsmrKSpace *k);

/*
 # Safety
 `path` is a NUL-terminated string; `out` is writable.
 */
GsmrStatus gsmr_cloud_read(const char *path_, GsmrCloud **out);

/*
 # Safety
 `c` is a live cloud handle; `path` is a NUL-terminated string.
 */
GsmrStatus gsmr_cloud_write(const GsmrCloud *c, const char *path_);

/*
 # Safety
 `c` is a live cloud handle; `len` is writable.
 */
GsmrStatus gsmr_cloud_len(const GsmrCloud *c, size_t *len);

/*
 # Safety
 `c` is null or a handle not yet freed.
 */
void gsmr_cloud_free(GsmrCloud *c);

/*
 # Safety
 `cloud` is a live handle; `dims` points to 3 values; `out` is writable.
 */
GsmrStatus gsmr_voxelize(const GsmrCloud *cloud, const size_t *dims, GsmrVolume **out);

/*
 Fills `cfg` with the library defaults.

 # Safety
 `cfg` is writable.
 */
GsmrStatus gsmr_train_config_default(GsmrTrainConfig *cfg);

/*
 Runs the full reconstruction. `out_cloud` may be null when the cloud is
 not wanted.

 # Safety
 `kspace`, `acq` and `cfg` are live; `out_volume` is writable; `out_cloud`
 is null or writable.
 */
GsmrStatus gsmr_recon(const GsmrKSpace *kspace,
                      const GsmrAcquisition *acq,
                      const GsmrTrainConfig *cfg,
                      GsmrVolume **out_volume,
                      GsmrCloud **out_cloud);

/*
 # Safety
 `recon` and `reference` are live handles; `out` is writable.
 */
GsmrStatus gsmr_psnr(const GsmrVolume *recon, const GsmrVolume *reference, double *out);

/*
 # Safety
 `recon` and `reference` are live handles; `out` is writable.
 */
GsmrStatus gsmr_ssim(const GsmrVolume *recon, const GsmrVolume *reference, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GSMR_H */
