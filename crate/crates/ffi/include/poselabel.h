#ifndef POSELABEL_H
#define POSELABEL_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PlStatus {
  PL_STATUS_OK = 0,
  PL_STATUS_NULL_POINTER = 1,
  PL_STATUS_INVALID_ARGUMENT = 2,
  PL_STATUS_IO = 3,
  PL_STATUS_PARSE = 4,
  /**
   * The inputs were well-formed but the computation failed.
   */
  PL_STATUS_DOMAIN = 5,
  /**
   * Output buffer too small.
   */
  PL_STATUS_BUFFER_TOO_SMALL = 6,
  PL_STATUS_PANIC = 7,
} PlStatus;

/**
 * Opaque triangle mesh.
 */
typedef struct PlMesh PlMesh;

/**
 * Opaque rigid transform.
 */
typedef struct PlPose PlPose;

/**
 * Pinhole intrinsics with optional radial distortion.
 */
typedef struct PlIntrinsics {
  double fx;
  double fy;
  double cx;
  double cy;
  uint32_t width;
  uint32_t height;
  double k1;
  double k2;
} PlIntrinsics;

typedef struct PlBBox {
  uint32_t x;
  uint32_t y;
  uint32_t w;
  uint32_t h;
} PlBBox;

typedef struct PlStats {
  uint64_t instances;
  uint64_t frames;
  double annotation_time_s;
  uint32_t scenarios;
} PlStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message, NUL-terminated and
 * truncated to `len` bytes, into `buf`. Returns the full message length
 * plus one; pass a null `buf` to query the size.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t pl_last_error_message(char *buf, size_t len);

/**
 * Builds a pose from a translation `t[3]` (mm) and quaternion `q[4]`
 * `(qx, qy, qz, qw)`, which is normalized.
 *
 * # Safety
 * `t` and `q` must point to 3 and 4 doubles; `out` must be writable.
 */
enum PlStatus pl_pose_from_tq(const double *t, const double *q, struct PlPose **out);

struct PlPose *pl_pose_identity(void);

/**
 * # Safety
 * `pose` must be null or a handle from this library not yet freed.
 */
void pl_pose_free(struct PlPose *pose);

/**
 * Writes `t[3]` and `q[4]`.
 *
 * # Safety
 * `pose` must be a live handle; `t` and `q` must hold 3 and 4 doubles.
 */
enum PlStatus pl_pose_to_tq(const struct PlPose *pose, double *t, double *q);

/**
 * Row-major 4x4 homogeneous matrix.
 *
 * # Safety
 * `pose` must be a live handle; `out` must hold 16 doubles.
 */
enum PlStatus pl_pose_to_matrix(const struct PlPose *pose, double *out);

/**
 * `out = a * b`.
 *
 * # Safety
 * `a` and `b` must be live handles; `out` must be writable.
 */
enum PlStatus pl_pose_compose(const struct PlPose *a, const struct PlPose *b, struct PlPose **out);

/**
 * # Safety
 * `pose` must be a live handle; `out` must be writable.
 */
enum PlStatus pl_pose_inverse(const struct PlPose *pose, struct PlPose **out);

/**
 * Maps `n` points (`xyz_in[3n]`) through `pose` into `xyz_out[3n]`. The
 * buffers may alias.
 *
 * # Safety
 * `pose` must be a live handle; both buffers must hold `3 * n` doubles.
 */
enum PlStatus pl_pose_transform_points(const struct PlPose *pose,
                                       const double *xyz_in,
                                       double *xyz_out,
                                       size_t n);

/**
 * Object pose in the camera frame from their world poses.
 *
 * # Safety
 * `camera` and `object` must be live handles; `out` must be writable.
 */
enum PlStatus pl_relative_pose(const struct PlPose *camera,
                               const struct PlPose *object,
                               struct PlPose **out);

/**
 * Solves the world-to-camera pose from `n` world points (`object_points[3n]`)
 * and their pixel observations (`image_points[2n]`). `rms_px` may be null.
 *
 * # Safety
 * Buffers must hold the stated number of doubles; `k` must be valid and
 * `out` writable.
 */
enum PlStatus pl_solve_pnp(const double *object_points,
                           const double *image_points,
                           size_t n,
                           const struct PlIntrinsics *k,
                           struct PlPose **out,
                           double *rms_px);

/**
 * Loads a PLY or OBJ mesh. `dropped` (may be null) receives the number of
 * degenerate triangles removed.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum PlStatus pl_mesh_load(const char *path,
                           uint32_t object_id,
                           struct PlMesh **out,
                           size_t *dropped);

/**
 * # Safety
 * `mesh` must be null or a handle from this library not yet freed.
 */
void pl_mesh_free(struct PlMesh *mesh);

/**
 * # Safety
 * `mesh` must be a live handle; the counters must be writable.
 */
enum PlStatus pl_mesh_counts(const struct PlMesh *mesh, size_t *vertices, size_t *triangles);

/**
 * Renders the silhouette of `mesh` at the object-to-camera pose into a
 * row-major `width * height` byte mask (0 or 255). `count` (may be null)
 * receives the number of set pixels.
 *
 * # Safety
 * `mask` must hold `len` writable bytes; other pointers must be valid.
 */
enum PlStatus pl_rasterize_mask(const struct PlMesh *mesh,
                                const struct PlPose *relative,
                                const struct PlIntrinsics *k,
                                uint8_t *mask,
                                size_t len,
                                uint64_t *count);

/**
 * Tightest box around the non-zero bytes of a row-major mask. `found` is
 * set to 0 for an empty mask, in which case `out` is zeroed.
 *
 * # Safety
 * `mask` must hold `width * height` bytes; `out` and `found` must be writable.
 */
enum PlStatus pl_fit_bbox(const uint8_t *mask,
                          uint32_t width,
                          uint32_t height,
                          struct PlBBox *out,
                          uint8_t *found);

/**
 * Checks a dataset directory. A dataset with violations still returns
 * `Ok`; inspect `violations`.
 *
 * # Safety
 * `root` must be a NUL-terminated string; counters must be writable.
 */
enum PlStatus pl_dataset_validate(const char *root, size_t *scenes, size_t *violations);

/**
 * # Safety
 * `root` must be a NUL-terminated string; `out` must be writable.
 */
enum PlStatus pl_dataset_stats(const char *root, struct PlStats *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* POSELABEL_H */
