//! Per-camera extrinsic localization and mask-overlap tuning.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotate::{relative_pose, ObjectState};
use crate::board::{build_correspondences, BoardError, BoardObservation, BoardSpec};
use crate::geometry::{CameraIntrinsics, Pose, PoseTq, Rotation, Vector3};
use crate::mesh_render::{rasterize_mask_into, MaskImage, MeshError, TriMesh};
use crate::pnp::solve_pnp;
use crate::{CameraId, ObjectId};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.9;
pub const DEFAULT_MAX_CANDIDATES: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum CalibError {
    #[error(transparent)]
    Board(#[from] BoardError),
    #[error("no mesh for object {0}")]
    MissingMesh(ObjectId),
    #[error("mask is {got_w}x{got_h}, camera image is {want_w}x{want_h}")]
    DimensionMismatch { got_w: u32, got_h: u32, want_w: u32, want_h: u32 },
    #[error("invalid tuning grid: {0}")]
    InvalidGrid(String),
    #[error("tuning grid has {count} candidates, cap is {cap}")]
    TooManyCandidates { count: usize, cap: usize },
    #[error("tuning needs at least one sample")]
    NoSamples,
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("{path}: {message}")]
    File { path: String, message: String },
}

/// A camera's pose in the motion-capture frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraExtrinsics {
    pub camera_id: CameraId,
    /// Camera-to-world transform.
    pub pose_mc_cam: Pose,
    pub rms_reprojection_error: f64,
    pub tuned: bool,
    pub tuning_score: Option<f64>,
}

impl CameraExtrinsics {
    pub fn untuned(camera_id: CameraId, pose_mc_cam: Pose) -> Self {
        Self { camera_id, pose_mc_cam, rms_reprojection_error: 0.0, tuned: false, tuning_score: None }
    }
}

/// Solves PnP over all placements seen by one camera. PnP gives the
/// world-to-camera transform; the stored pose is its inverse.
pub fn localize_camera(spec: &BoardSpec, observations: &[BoardObservation], k: &CameraIntrinsics) -> Result<CameraExtrinsics, CalibError> {
    let corr = build_correspondences(spec, observations, k)?;
    let sol = solve_pnp(&corr).map_err(BoardError::from)?;
    let camera_id = observations[0].camera_id;
    Ok(CameraExtrinsics {
        camera_id,
        pose_mc_cam: sol.pose.inverse(),
        rms_reprojection_error: sol.rms_reprojection_error,
        tuned: false,
        tuning_score: None,
    })
}

/// Intersection over union; 0 when both masks are empty.
pub fn iou(a: &MaskImage, b: &MaskImage) -> Result<f64, CalibError> {
    if !a.same_size(b) {
        return Err(CalibError::DimensionMismatch { got_w: b.width(), got_h: b.height(), want_w: a.width(), want_h: a.height() });
    }
    let union = a.union_count(b);
    if union == 0 {
        return Ok(0.0);
    }
    Ok(a.intersection_count(b) as f64 / union as f64)
}

/// Search space of camera pose offsets, applied in the camera's local frame.
/// Ranges are symmetric (+-) per axis; rotations in degrees, translations in mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuningGrid {
    pub translation_range: f64,
    pub translation_step: f64,
    pub rotation_range: f64,
    pub rotation_step: f64,
    pub max_candidates: usize,
    /// Search a grid with doubled steps first, then the fine grid within one
    /// coarse step of the coarse optimum.
    pub coarse_to_fine: bool,
}

impl Default for TuningGrid {
    fn default() -> Self {
        Self {
            translation_range: 50.0,
            translation_step: 10.0,
            rotation_range: 2.0,
            rotation_step: 0.5,
            max_candidates: DEFAULT_MAX_CANDIDATES,
            coarse_to_fine: false,
        }
    }
}

fn axis_values(range: f64, step: f64) -> Vec<f64> {
    let half = (range / step + 1e-9).floor() as i64;
    (-half..=half).map(|i| i as f64 * step).collect()
}

impl TuningGrid {
    /// A grid containing only the zero offset.
    pub fn zero() -> Self {
        Self { translation_range: 0.0, translation_step: 1.0, rotation_range: 0.0, rotation_step: 1.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), CalibError> {
        let bad = |m: &str| Err(CalibError::InvalidGrid(m.to_string()));
        if !(self.translation_step > 0.0 && self.rotation_step > 0.0) {
            return bad("steps must be positive");
        }
        if !(self.translation_range >= 0.0 && self.rotation_range >= 0.0) || !self.translation_range.is_finite() || !self.rotation_range.is_finite() {
            return bad("ranges must be finite and non-negative");
        }
        let zero_or_covers = |r: f64, s: f64| r == 0.0 || r >= s;
        if !zero_or_covers(self.translation_range, self.translation_step) || !zero_or_covers(self.rotation_range, self.rotation_step) {
            return bad("a non-zero range must be at least one step");
        }
        let count = self.candidate_count();
        if count > self.max_candidates {
            return Err(CalibError::TooManyCandidates { count, cap: self.max_candidates });
        }
        Ok(())
    }

    fn effective(&self) -> TuningGrid {
        if self.coarse_to_fine {
            TuningGrid { translation_step: self.translation_step * 2.0, rotation_step: self.rotation_step * 2.0, coarse_to_fine: false, ..*self }
        } else {
            *self
        }
    }

    /// Candidates in the first (or only) pass.
    pub fn candidate_count(&self) -> usize {
        let g = self.effective();
        let t = axis_values(g.translation_range, g.translation_step).len();
        let r = axis_values(g.rotation_range, g.rotation_step).len();
        t.pow(3) * r.pow(3)
    }

    /// All offsets of a single-pass grid, ordered rotation-major.
    pub fn candidates(&self) -> Vec<TuningOffset> {
        let g = self.effective();
        let tv = axis_values(g.translation_range, g.translation_step);
        let rv = axis_values(g.rotation_range, g.rotation_step);
        let mut out = Vec::with_capacity(tv.len().pow(3) * rv.len().pow(3));
        for &rx in &rv {
            for &ry in &rv {
                for &rz in &rv {
                    for &tx in &tv {
                        for &ty in &tv {
                            for &tz in &tv {
                                out.push(TuningOffset { rotation_deg: [rx, ry, rz], translation: [tx, ty, tz] });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// One grid entry: a rotation vector in degrees and a translation in mm.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TuningOffset {
    pub rotation_deg: [f64; 3],
    pub translation: [f64; 3],
}

impl TuningOffset {
    pub fn to_pose(&self) -> Pose {
        let w = Vector3::from(self.rotation_deg) * std::f64::consts::PI / 180.0;
        Pose::new(Rotation::from_axis_angle(&w), Vector3::from(self.translation))
    }

    fn rotation_norm(&self) -> f64 {
        Vector3::from(self.rotation_deg).norm()
    }

    fn translation_norm(&self) -> f64 {
        Vector3::from(self.translation).norm()
    }

    fn shifted(&self, other: &TuningOffset) -> TuningOffset {
        let add = |a: [f64; 3], b: [f64; 3]| [a[0] + b[0], a[1] + b[1], a[2] + b[2]];
        TuningOffset { rotation_deg: add(self.rotation_deg, other.rotation_deg), translation: add(self.translation, other.translation) }
    }
}

/// A hand-made mask for one image with the tracked object poses at capture time.
#[derive(Debug, Clone)]
pub struct TuningSample {
    pub image_id: u32,
    pub ground_truth_mask: MaskImage,
    pub objects: Vec<ObjectState>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredCandidate {
    pub offset: TuningOffset,
    pub score: f64,
}

/// Higher score first; ties go to the smaller rotation, then the smaller
/// translation, then the lexicographically smaller offset.
fn rank(a: &ScoredCandidate, b: &ScoredCandidate) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.offset.rotation_norm().total_cmp(&b.offset.rotation_norm()))
        .then(a.offset.translation_norm().total_cmp(&b.offset.translation_norm()))
        .then_with(|| {
            let key = |o: &TuningOffset| [o.rotation_deg, o.translation].concat();
            let (ka, kb) = (key(&a.offset), key(&b.offset));
            ka.iter().zip(&kb).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
        })
}

/// The best candidate under a total order, so the result does not depend
/// on evaluation order.
pub fn select_best(scored: &[ScoredCandidate]) -> Option<ScoredCandidate> {
    scored.iter().copied().min_by(rank)
}

/// Mean IoU over samples of the rendered object union against the
/// ground-truth mask, with the camera at `pose_mc_cam`.
pub fn score_pose(pose_mc_cam: &Pose, samples: &[TuningSample], meshes: &BTreeMap<ObjectId, TriMesh>, k: &CameraIntrinsics) -> f64 {
    let cam = CameraExtrinsics::untuned(0, *pose_mc_cam);
    let total: f64 = samples
        .iter()
        .map(|s| {
            let mut rendered = MaskImage::new(k.width, k.height);
            for obj in &s.objects {
                let mesh = &meshes[&obj.object_id];
                rasterize_mask_into(&mut rendered, mesh, &relative_pose(&cam, obj), k);
            }
            iou(&rendered, &s.ground_truth_mask).unwrap_or(0.0)
        })
        .sum();
    total / samples.len() as f64
}

fn check_inputs(samples: &[TuningSample], meshes: &BTreeMap<ObjectId, TriMesh>, k: &CameraIntrinsics) -> Result<(), CalibError> {
    if samples.is_empty() {
        return Err(CalibError::NoSamples);
    }
    for s in samples {
        let m = &s.ground_truth_mask;
        if m.width() != k.width || m.height() != k.height {
            return Err(CalibError::DimensionMismatch { got_w: m.width(), got_h: m.height(), want_w: k.width, want_h: k.height });
        }
        if let Some(o) = s.objects.iter().find(|o| !meshes.contains_key(&o.object_id)) {
            return Err(CalibError::MissingMesh(o.object_id));
        }
    }
    Ok(())
}

/// Scores every candidate offset in parallel. Output order follows input.
pub fn evaluate_candidates(
    init: &CameraExtrinsics,
    candidates: &[TuningOffset],
    samples: &[TuningSample],
    meshes: &BTreeMap<ObjectId, TriMesh>,
    k: &CameraIntrinsics,
) -> Result<Vec<ScoredCandidate>, CalibError> {
    check_inputs(samples, meshes, k)?;
    Ok(candidates
        .par_iter()
        .map(|offset| ScoredCandidate { offset: *offset, score: score_pose(&init.pose_mc_cam.compose(&offset.to_pose()), samples, meshes, k) })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuningResult {
    pub extrinsics: CameraExtrinsics,
    pub best: ScoredCandidate,
    pub candidates_evaluated: usize,
}

/// Exhaustive grid search over camera pose offsets. The best offset is
/// accepted when its mean IoU reaches `threshold`; otherwise `init` is
/// returned unchanged with `tuned = false`.
pub fn tune_camera(
    init: &CameraExtrinsics,
    grid: &TuningGrid,
    samples: &[TuningSample],
    meshes: &BTreeMap<ObjectId, TriMesh>,
    k: &CameraIntrinsics,
    threshold: f64,
) -> Result<TuningResult, CalibError> {
    grid.validate()?;
    check_inputs(samples, meshes, k)?;

    let first = grid.candidates();
    let mut scored = evaluate_candidates(init, &first, samples, meshes, k)?;
    let mut evaluated = first.len();
    if grid.coarse_to_fine {
        let coarse_best = select_best(&scored).expect("grid is never empty");
        let local = TuningGrid {
            translation_range: if grid.translation_range > 0.0 { grid.translation_step * 2.0 } else { 0.0 },
            rotation_range: if grid.rotation_range > 0.0 { grid.rotation_step * 2.0 } else { 0.0 },
            coarse_to_fine: false,
            max_candidates: usize::MAX,
            ..*grid
        };
        let within = |o: &TuningOffset| {
            o.translation.iter().all(|v| v.abs() <= grid.translation_range + 1e-9)
                && o.rotation_deg.iter().all(|v| v.abs() <= grid.rotation_range + 1e-9)
        };
        let fine: Vec<_> = local.candidates().iter().map(|o| coarse_best.offset.shifted(o)).filter(within).collect();
        evaluated += fine.len();
        scored.extend(evaluate_candidates(init, &fine, samples, meshes, k)?);
    }

    let best = select_best(&scored).expect("grid is never empty");
    let extrinsics = if best.score >= threshold && best.score > 0.0 {
        CameraExtrinsics {
            pose_mc_cam: init.pose_mc_cam.compose(&best.offset.to_pose()),
            tuned: true,
            tuning_score: Some(best.score),
            ..*init
        }
    } else {
        CameraExtrinsics { tuned: false, ..*init }
    };
    Ok(TuningResult { extrinsics, best, candidates_evaluated: evaluated })
}

#[derive(Debug, Serialize, Deserialize)]
struct ExtrinsicsRecord {
    t: [f64; 3],
    q: [f64; 4],
    rms_px: f64,
    tuned: bool,
    tuning_score: Option<f64>,
}

fn file_err(path: &Path, message: impl std::fmt::Display) -> CalibError {
    CalibError::File { path: path.display().to_string(), message: message.to_string() }
}

/// Reads a rig extrinsics document keyed by camera id.
pub fn read_extrinsics(path: &Path) -> Result<BTreeMap<CameraId, CameraExtrinsics>, CalibError> {
    let text = fs::read_to_string(path).map_err(|e| file_err(path, e))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let raw: BTreeMap<String, ExtrinsicsRecord> =
        serde_path_to_error::deserialize(de).map_err(|e| file_err(path, format!("{}: {}", e.path(), e.inner())))?;
    let mut out = BTreeMap::new();
    for (key, rec) in raw {
        let camera_id: CameraId = key.parse().map_err(|_| file_err(path, format!("camera id {key:?} is not an integer")))?;
        let pose = Pose::try_from(PoseTq { t: rec.t, q: rec.q }).map_err(|e| file_err(path, format!("{key}: {e}")))?;
        out.insert(
            camera_id,
            CameraExtrinsics { camera_id, pose_mc_cam: pose, rms_reprojection_error: rec.rms_px, tuned: rec.tuned, tuning_score: rec.tuning_score },
        );
    }
    Ok(out)
}

pub fn write_extrinsics(path: &Path, rig: &BTreeMap<CameraId, CameraExtrinsics>) -> Result<(), CalibError> {
    let raw: BTreeMap<String, ExtrinsicsRecord> = rig
        .iter()
        .map(|(id, e)| {
            let (t, q) = e.pose_mc_cam.to_tq();
            (id.to_string(), ExtrinsicsRecord { t, q, rms_px: e.rms_reprojection_error, tuned: e.tuned, tuning_score: e.tuning_score })
        })
        .collect();
    fs::write(path, serde_json::to_string_pretty(&raw).expect("extrinsics serialize")).map_err(|e| file_err(path, e))
}

#[derive(Debug, Serialize, Deserialize)]
struct SamplesFile {
    samples: Vec<SampleRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleRecord {
    camera_id: CameraId,
    image_id: u32,
    /// PNG path relative to the samples file.
    mask: String,
    objects: Vec<SampleObject>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleObject {
    object_id: ObjectId,
    t: [f64; 3],
    q: [f64; 4],
}

/// Reads tuning samples, grouped by camera. Mask paths resolve relative to
/// the samples file.
pub fn read_tuning_samples(path: &Path) -> Result<BTreeMap<CameraId, Vec<TuningSample>>, CalibError> {
    let text = fs::read_to_string(path).map_err(|e| file_err(path, e))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let file: SamplesFile = serde_path_to_error::deserialize(de).map_err(|e| file_err(path, format!("{}: {}", e.path(), e.inner())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out: BTreeMap<CameraId, Vec<TuningSample>> = BTreeMap::new();
    for rec in file.samples {
        let mask = MaskImage::read_png(&base.join(&rec.mask))?;
        let objects = rec
            .objects
            .iter()
            .map(|o| {
                Pose::from_tq(o.t, o.q)
                    .map(|pose_mc_obj| ObjectState { object_id: o.object_id, pose_mc_obj, timestamp: 0.0 })
                    .map_err(|e| file_err(path, format!("object {}: {e}", o.object_id)))
            })
            .collect::<Result<_, _>>()?;
        out.entry(rec.camera_id).or_default().push(TuningSample { image_id: rec.image_id, ground_truth_mask: mask, objects });
    }
    Ok(out)
}

/// Writes samples and their masks (`mask_{camera}_{image}.png`) under `dir`.
pub fn write_tuning_samples(dir: &Path, samples: &BTreeMap<CameraId, Vec<TuningSample>>) -> Result<std::path::PathBuf, CalibError> {
    fs::create_dir_all(dir).map_err(|e| file_err(dir, e))?;
    let mut records = Vec::new();
    for (&camera_id, list) in samples {
        for s in list {
            let name = format!("mask_{camera_id}_{:06}.png", s.image_id);
            s.ground_truth_mask.write_png(&dir.join(&name))?;
            records.push(SampleRecord {
                camera_id,
                image_id: s.image_id,
                mask: name,
                objects: s
                    .objects
                    .iter()
                    .map(|o| {
                        let (t, q) = o.pose_mc_obj.to_tq();
                        SampleObject { object_id: o.object_id, t, q }
                    })
                    .collect(),
            });
        }
    }
    let path = dir.join("tuning_samples.json");
    fs::write(&path, serde_json::to_string_pretty(&SamplesFile { samples: records }).expect("samples serialize")).map_err(|e| file_err(&path, e))?;
    Ok(path)
}
