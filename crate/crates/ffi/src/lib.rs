//! C ABI for poselabel.
//!
//! Fallible calls return a [`PlStatus`]; on failure the calling thread's
//! last error message is available from [`pl_last_error_message`]. Handles
//! (`PlPose`, `PlMesh`) are opaque and must be released with their `_free`
//! function. Poses use millimeters and `(qx, qy, qz, qw)` quaternions.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use poselabel::annotate::{fit_bbox, relative_pose, ObjectState};
use poselabel::bop_io::{stats, validate, BopError, DatasetLayout};
use poselabel::calib::CameraExtrinsics;
use poselabel::mesh_render::{load_mesh, rasterize_mask, MaskImage, MeshError, TriMesh};
use poselabel::pnp::{solve_pnp, Correspondences};
use poselabel::{CameraIntrinsics, Point2, Point3, Pose};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    /// The inputs were well-formed but the computation failed.
    Domain = 5,
    /// Output buffer too small.
    BufferTooSmall = 6,
    Panic = 7,
}

/// Pinhole intrinsics with optional radial distortion.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub k1: f64,
    pub k2: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PlBBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlStats {
    pub instances: u64,
    pub frames: u64,
    pub annotation_time_s: f64,
    pub scenarios: u32,
}

/// Opaque rigid transform.
pub struct PlPose(Pose);

/// Opaque triangle mesh.
pub struct PlMesh(TriMesh);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

struct Failure(PlStatus, String);

type Res<T> = Result<T, Failure>;

fn fail<T>(status: PlStatus, msg: impl std::fmt::Display) -> Res<T> {
    Err(Failure(status, msg.to_string()))
}

fn guard(f: impl FnOnce() -> Res<()>) -> PlStatus {
    let (status, msg) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => (PlStatus::Ok, String::new()),
        Ok(Err(Failure(s, m))) => (s, m),
        Err(_) => (PlStatus::Panic, "internal panic".to_string()),
    };
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
    status
}

unsafe fn get<'a, T>(p: *const T, name: &str) -> Res<&'a T> {
    p.as_ref().map_or_else(|| fail(PlStatus::NullPointer, format!("{name} is null")), Ok)
}

unsafe fn get_mut<'a, T>(p: *mut T, name: &str) -> Res<&'a mut T> {
    p.as_mut().map_or_else(|| fail(PlStatus::NullPointer, format!("{name} is null")), Ok)
}

unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> Res<&'a [T]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(PlStatus::NullPointer, format!("{name} is null"));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, name: &str) -> Res<&'a mut [T]> {
    if p.is_null() {
        return fail(PlStatus::NullPointer, format!("{name} is null"));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn path_arg(p: *const c_char, name: &str) -> Res<PathBuf> {
    if p.is_null() {
        return fail(PlStatus::NullPointer, format!("{name} is null"));
    }
    match CStr::from_ptr(p).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => fail(PlStatus::InvalidArgument, format!("{name} is not UTF-8")),
    }
}

fn intrinsics(k: &PlIntrinsics) -> Res<CameraIntrinsics> {
    let ci = CameraIntrinsics::new(k.fx, k.fy, k.cx, k.cy, k.width, k.height)
        .map_err(|e| Failure(PlStatus::InvalidArgument, e.to_string()))?
        .with_distortion(k.k1, k.k2);
    ci.validate().map_err(|e| Failure(PlStatus::InvalidArgument, e.to_string()))?;
    Ok(ci)
}

fn mesh_status(e: &MeshError) -> PlStatus {
    match e {
        MeshError::Io { .. } => PlStatus::Io,
        MeshError::Parse { .. } | MeshError::UnsupportedFormat { .. } | MeshError::Image { .. } => PlStatus::Parse,
        _ => PlStatus::Domain,
    }
}

fn bop_failure(e: BopError) -> Failure {
    let status = match &e {
        BopError::Io { .. } => PlStatus::Io,
        BopError::Schema { .. } => PlStatus::Parse,
        BopError::Image(m) => mesh_status(m),
    };
    Failure(status, e.to_string())
}

fn boxed_pose(p: Pose) -> *mut PlPose {
    Box::into_raw(Box::new(PlPose(p)))
}

/// Copies the calling thread's last error message, NUL-terminated and
/// truncated to `len` bytes, into `buf`. Returns the full message length
/// plus one; pass a null `buf` to query the size.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn pl_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len() + 1
    })
}

/// Builds a pose from a translation `t[3]` (mm) and quaternion `q[4]`
/// `(qx, qy, qz, qw)`, which is normalized.
///
/// # Safety
/// `t` and `q` must point to 3 and 4 doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pl_pose_from_tq(t: *const f64, q: *const f64, out: *mut *mut PlPose) -> PlStatus {
    guard(|| {
        let (t, q, out) = (slice(t, 3, "t")?, slice(q, 4, "q")?, get_mut(out, "out")?);
        let p = Pose::from_tq([t[0], t[1], t[2]], [q[0], q[1], q[2], q[3]]).map_err(|e| Failure(PlStatus::InvalidArgument, e.to_string()))?;
        *out = boxed_pose(p);
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn pl_pose_identity() -> *mut PlPose {
    boxed_pose(Pose::identity())
}

/// # Safety
/// `pose` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pl_pose_free(pose: *mut PlPose) {
    if !pose.is_null() {
        drop(Box::from_raw(pose));
    }
}

/// Writes `t[3]` and `q[4]`.
///
/// # Safety
/// `pose` must be a live handle; `t` and `q` must hold 3 and 4 doubles.
#[no_mangle]
pub unsafe extern "C" fn pl_pose_to_tq(pose: *const PlPose, t: *mut f64, q: *mut f64) -> PlStatus {
    guard(|| {
        let p = get(pose, "pose")?;
        let (t, q) = (slice_mut(t, 3, "t")?, slice_mut(q, 4, "q")?);
        let (tt, qq) = p.0.to_tq();
        t.copy_from_slice(&tt);
        q.copy_from_slice(&qq);
        Ok(())
    })
}

/// Row-major 4x4 homogeneous matrix.
///
/// # Safety
/// `pose` must be a live handle; `out` must hold 16 doubles.
#[no_mangle]
pub unsafe extern "C" fn pl_pose_to_matrix(pose: *const PlPose, out: *mut f64) -> PlStatus {
    guard(|| {
        let p = get(pose, "pose")?;
        let out = slice_mut(out, 16, "out")?;
        let m = p.0.to_matrix();
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = m[(r, c)];
            }
        }
        Ok(())
    })
}

/// `out = a * b`.
///
/// # Safety
/// `a` and `b` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pl_pose_compose(a: *const PlPose, b: *const PlPose, out: *mut *mut PlPose) -> PlStatus {
    guard(|| {
        let (a, b, out) = (get(a, "a")?, get(b, "b")?, get_mut(out, "out")?);
        *out = boxed_pose(a.0.compose(&b.0));
        Ok(())
    })
}

/// # Safety
/// `pose` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pl_pose_inverse(pose: *const PlPose, out: *mut *mut PlPose) -> PlStatus {
    guard(|| {
        let (p, out) = (get(pose, "pose")?, get_mut(out, "out")?);
        *out = boxed_pose(p.0.inverse());
        Ok(())
    })
}

/// Maps `n` points (`xyz_in[3n]`) through `pose` into `xyz_out[3n]`. The
/// buffers may alias.
///
/// # Safety
/// `pose` must be a live handle; both buffers must hold `3 * n` doubles.
#[no_mangle]
pub unsafe extern "C" fn pl_pose_transform_points(pose: *const PlPose, xyz_in: *const f64, xyz_out: *mut f64, n: usize) -> PlStatus {
    guard(|| {
        let p = get(pose, "pose")?;
        if n == 0 {
            return Ok(());
        }
        let input = slice(xyz_in, 3 * n, "xyz_in")?.to_vec();
        let out = slice_mut(xyz_out, 3 * n, "xyz_out")?;
        for (src, dst) in input.chunks_exact(3).zip(out.chunks_exact_mut(3)) {
            let y = p.0.transform_point(&Point3::new(src[0], src[1], src[2]));
            dst.copy_from_slice(&[y.x, y.y, y.z]);
        }
        Ok(())
    })
}

/// Object pose in the camera frame from their world poses.
///
/// # Safety
/// `camera` and `object` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pl_relative_pose(camera: *const PlPose, object: *const PlPose, out: *mut *mut PlPose) -> PlStatus {
    guard(|| {
        let (c, o, out) = (get(camera, "camera")?, get(object, "object")?, get_mut(out, "out")?);
        let cam = CameraExtrinsics::untuned(0, c.0);
        let obj = ObjectState { object_id: 0, pose_mc_obj: o.0, timestamp: 0.0 };
        *out = boxed_pose(relative_pose(&cam, &obj));
        Ok(())
    })
}

/// Solves the world-to-camera pose from `n` world points (`object_points[3n]`)
/// and their pixel observations (`image_points[2n]`). `rms_px` may be null.
///
/// # Safety
/// Buffers must hold the stated number of doubles; `k` must be valid and
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pl_solve_pnp(
    object_points: *const f64,
    image_points: *const f64,
    n: usize,
    k: *const PlIntrinsics,
    out: *mut *mut PlPose,
    rms_px: *mut f64,
) -> PlStatus {
    guard(|| {
        let k = intrinsics(get(k, "k")?)?;
        let out = get_mut(out, "out")?;
        let xs = slice(object_points, 3 * n, "object_points")?.chunks_exact(3).map(|c| Point3::new(c[0], c[1], c[2])).collect();
        let us = slice(image_points, 2 * n, "image_points")?.chunks_exact(2).map(|c| Point2::new(c[0], c[1])).collect();
        let corr = Correspondences::new(xs, us, k).map_err(|e| Failure(PlStatus::InvalidArgument, e.to_string()))?;
        let sol = solve_pnp(&corr).map_err(|e| Failure(PlStatus::Domain, e.to_string()))?;
        if !rms_px.is_null() {
            *rms_px = sol.rms_reprojection_error;
        }
        *out = boxed_pose(sol.pose);
        Ok(())
    })
}

/// Loads a PLY or OBJ mesh. `dropped` (may be null) receives the number of
/// degenerate triangles removed.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pl_mesh_load(path: *const c_char, object_id: u32, out: *mut *mut PlMesh, dropped: *mut usize) -> PlStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let out = get_mut(out, "out")?;
        let loaded = load_mesh(&path, object_id).map_err(|e| Failure(mesh_status(&e), e.to_string()))?;
        if !dropped.is_null() {
            *dropped = loaded.dropped_degenerate;
        }
        *out = Box::into_raw(Box::new(PlMesh(loaded.mesh)));
        Ok(())
    })
}

/// # Safety
/// `mesh` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pl_mesh_free(mesh: *mut PlMesh) {
    if !mesh.is_null() {
        drop(Box::from_raw(mesh));
    }
}

/// # Safety
/// `mesh` must be a live handle; the counters must be writable.
#[no_mangle]
pub unsafe extern "C" fn pl_mesh_counts(mesh: *const PlMesh, vertices: *mut usize, triangles: *mut usize) -> PlStatus {
    guard(|| {
        let m = get(mesh, "mesh")?;
        *get_mut(vertices, "vertices")? = m.0.vertices.len();
        *get_mut(triangles, "triangles")? = m.0.triangles.len();
        Ok(())
    })
}

/// Renders the silhouette of `mesh` at the object-to-camera pose into a
/// row-major `width * height` byte mask (0 or 255). `count` (may be null)
/// receives the number of set pixels.
///
/// # Safety
/// `mask` must hold `len` writable bytes; other pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn pl_rasterize_mask(
    mesh: *const PlMesh,
    relative: *const PlPose,
    k: *const PlIntrinsics,
    mask: *mut u8,
    len: usize,
    count: *mut u64,
) -> PlStatus {
    guard(|| {
        let (m, p, k) = (get(mesh, "mesh")?, get(relative, "relative")?, intrinsics(get(k, "k")?)?);
        let need = k.width as usize * k.height as usize;
        if len < need {
            return fail(PlStatus::BufferTooSmall, format!("mask needs {need} bytes, got {len}"));
        }
        let out = slice_mut(mask, need, "mask")?;
        let rendered = rasterize_mask(&m.0, &p.0, &k);
        out.copy_from_slice(&rendered.to_gray8());
        if !count.is_null() {
            *count = rendered.count();
        }
        Ok(())
    })
}

/// Tightest box around the non-zero bytes of a row-major mask. `found` is
/// set to 0 for an empty mask, in which case `out` is zeroed.
///
/// # Safety
/// `mask` must hold `width * height` bytes; `out` and `found` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pl_fit_bbox(mask: *const u8, width: u32, height: u32, out: *mut PlBBox, found: *mut u8) -> PlStatus {
    guard(|| {
        let data = slice(mask, width as usize * height as usize, "mask")?;
        let (out, found) = (get_mut(out, "out")?, get_mut(found, "found")?);
        match fit_bbox(&MaskImage::from_gray8(width, height, data)) {
            Some(b) => {
                *out = PlBBox { x: b.x, y: b.y, w: b.w, h: b.h };
                *found = 1;
            }
            None => {
                *out = PlBBox::default();
                *found = 0;
            }
        }
        Ok(())
    })
}

/// Checks a dataset directory. A dataset with violations still returns
/// `Ok`; inspect `violations`.
///
/// # Safety
/// `root` must be a NUL-terminated string; counters must be writable.
#[no_mangle]
pub unsafe extern "C" fn pl_dataset_validate(root: *const c_char, scenes: *mut usize, violations: *mut usize) -> PlStatus {
    guard(|| {
        let root = path_arg(root, "root")?;
        let (scenes, violations) = (get_mut(scenes, "scenes")?, get_mut(violations, "violations")?);
        let report = validate(&DatasetLayout::new(root)).map_err(bop_failure)?;
        *scenes = report.scenes_checked;
        *violations = report.violations.len();
        Ok(())
    })
}

/// # Safety
/// `root` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pl_dataset_stats(root: *const c_char, out: *mut PlStats) -> PlStatus {
    guard(|| {
        let root = path_arg(root, "root")?;
        let out = get_mut(out, "out")?;
        let s = stats(&DatasetLayout::new(root)).map_err(bop_failure)?;
        *out = PlStats {
            instances: s.total.instances,
            frames: s.total.frames,
            annotation_time_s: s.total.annotation_time_s,
            scenarios: s.per_scenario.len() as u32,
        };
        Ok(())
    })
}
