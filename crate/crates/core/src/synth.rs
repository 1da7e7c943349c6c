//! Synthetic rigs, board sessions and recordings with known ground truth.
//!
//! All randomness comes from the caller's generator, so a fixed seed gives
//! bit-identical output.

use std::collections::BTreeMap;

use nalgebra::Matrix3;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotate::{fit_bbox, mock_depth, AnnotateParams, Annotation, DepthImage, FrameEntry, ImageRef, MocapLog, ObjectState, Rig, SceneInputs, SceneRecord, SceneView};
use crate::board::{grid_points_mc, max_orientation_spread_deg, BoardObservation, BoardSpec};
use crate::calib::{CameraExtrinsics, TuningSample};
use crate::geometry::{project, CameraIntrinsics, Point2, Point3, Pose, Projection, Rotation, Vector3};
use crate::mesh_render::{raycast_mask, MaskImage, TriMesh};
use crate::{CameraId, ObjectId};

/// Minimum spread between board placements seen by one camera.
pub const MIN_SESSION_SPREAD_DEG: f64 = 15.0;
const MAX_RESAMPLE: usize = 10_000;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("camera {camera}: no valid board placement after {attempts} attempts")]
    PlacementFailed { camera: CameraId, attempts: usize },
}

/// Cameras on a horizontal ring, all aimed at a common target. World z is up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RigSpec {
    pub camera_count: u32,
    pub ring_radius: f64,
    pub height: f64,
    pub look_at: [f64; 3],
    pub width: u32,
    pub height_px: u32,
    pub focal_px: f64,
    pub k1: f64,
    pub k2: f64,
    /// Uniform placement jitter: azimuth (deg), radius and height (mm).
    pub azimuth_jitter_deg: f64,
    pub position_jitter: f64,
}

impl Default for RigSpec {
    fn default() -> Self {
        Self {
            camera_count: 8,
            ring_radius: 8000.0,
            height: 4000.0,
            look_at: [0.0; 3],
            width: 1296,
            height_px: 1024,
            focal_px: 1000.0,
            k1: 0.0,
            k2: 0.0,
            azimuth_jitter_deg: 5.0,
            position_jitter: 300.0,
        }
    }
}

impl RigSpec {
    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics {
            fx: self.focal_px,
            fy: self.focal_px,
            cx: (self.width as f64 - 1.0) / 2.0,
            cy: (self.height_px as f64 - 1.0) / 2.0,
            width: self.width,
            height: self.height_px,
            k1: self.k1,
            k2: self.k2,
        }
    }
}

/// Camera at `eye` looking at `target`, image y pointing away from `up`.
pub fn look_at(eye: &Point3, target: &Point3, up: &Vector3) -> Pose {
    let z = (target - eye).normalize();
    let x = z.cross(up).normalize();
    let y = z.cross(&x);
    Pose::new(Rotation::from_matrix_unchecked(Matrix3::from_columns(&[x, y, z])), eye.coords)
}

/// Ground-truth rig: intrinsics plus exact camera poses.
pub fn generate_rig(spec: &RigSpec, rng: &mut impl Rng) -> Result<Rig, SynthError> {
    if spec.camera_count == 0 {
        return Err(SynthError::InvalidSpec("camera count must be at least 1".into()));
    }
    let k = spec.intrinsics();
    k.validate().map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
    let target = Point3::from(spec.look_at);
    let mut rig = Rig::default();
    for c in 0..spec.camera_count {
        let jitter = |rng: &mut dyn rand::RngCore, a: f64| if a > 0.0 { rng.random_range(-a..a) } else { 0.0 };
        let az = (360.0 * c as f64 / spec.camera_count as f64 + jitter(rng, spec.azimuth_jitter_deg)).to_radians();
        let r = spec.ring_radius + jitter(rng, spec.position_jitter);
        let h = spec.height + jitter(rng, spec.position_jitter);
        let eye = Point3::new(target.x + r * az.cos(), target.y + r * az.sin(), target.z + h);
        let pose = look_at(&eye, &target, &Vector3::z());
        rig.intrinsics.insert(c, k);
        rig.extrinsics.insert(c, CameraExtrinsics::untuned(c, pose));
    }
    Ok(rig)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoardSessionSpec {
    pub placements: usize,
    pub min_distance: f64,
    pub max_distance: f64,
    pub max_tilt_deg: f64,
    pub corner_noise_px: f64,
}

impl Default for BoardSessionSpec {
    fn default() -> Self {
        Self { placements: 20, min_distance: 3000.0, max_distance: 7000.0, max_tilt_deg: 35.0, corner_noise_px: 0.0 }
    }
}

fn random_unit(rng: &mut impl Rng) -> Vector3 {
    loop {
        let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Exact corner projections, or `None` unless every corner is in frame.
fn project_board(spec: &BoardSpec, board_pose_mc: &Pose, cam: &CameraExtrinsics, k: &CameraIntrinsics) -> Option<Vec<Point2>> {
    let w2c = cam.pose_mc_cam.inverse();
    grid_points_mc(spec, board_pose_mc)
        .iter()
        .map(|x| match project(k, &w2c, x) {
            Projection::Pixel(p) if k.contains_with_margin(&p, 0.0) => Some(p),
            _ => None,
        })
        .collect()
}

fn random_placement(board: &BoardSpec, session: &BoardSessionSpec, cam: &CameraExtrinsics, k: &CameraIntrinsics, rng: &mut impl Rng) -> Pose {
    let d = rng.random_range(session.min_distance..=session.max_distance);
    let u = rng.random_range(0.2..0.8) * k.width as f64;
    let v = rng.random_range(0.2..0.8) * k.height as f64;
    let (xn, yn) = k.pixel_to_normalized(&Point2::new(u, v));
    let center_cam = Point3::new(xn * d, yn * d, d);
    // Board axes start aligned with the camera (printed face toward it), then tilt.
    let tilt = random_unit(rng).component_mul(&Vector3::new(1.0, 1.0, 0.0));
    let tilt = if tilt.norm() > 1e-9 { tilt.normalize() * rng.random_range(0.0..session.max_tilt_deg).to_radians() } else { tilt };
    let roll = Rotation::from_axis_angle(&(Vector3::z() * rng.random_range(-0.5..0.5)));
    let r_cam_board = Rotation::from_axis_angle(&tilt).compose(&roll);
    let center_local = Point3::from(board.origin_offset)
        + Vector3::new((board.inner_cols - 1) as f64 * board.square_size / 2.0, (board.inner_rows - 1) as f64 * board.square_size / 2.0, 0.0);
    let board_cam = Pose::new(r_cam_board, center_cam.coords - r_cam_board.rotate(&center_local.coords));
    cam.pose_mc_cam.compose(&board_cam)
}

/// Board observations per camera. Placements are resampled until every
/// corner projects into the frame, and the whole session is resampled until
/// its orientation spread reaches [`MIN_SESSION_SPREAD_DEG`] (when it has
/// more than one placement).
pub fn generate_board_session(
    rig: &Rig,
    board: &BoardSpec,
    session: &BoardSessionSpec,
    rng: &mut impl Rng,
) -> Result<BTreeMap<CameraId, Vec<BoardObservation>>, SynthError> {
    board.validate().map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
    if !(session.min_distance > 0.0 && session.min_distance <= session.max_distance) || session.corner_noise_px < 0.0 {
        return Err(SynthError::InvalidSpec("bad session distances or noise".into()));
    }
    let noise = Normal::new(0.0, session.corner_noise_px).expect("sigma is non-negative");
    let mut out = BTreeMap::new();
    for (&camera_id, cam) in &rig.extrinsics {
        let k = rig.intrinsics[&camera_id];
        let mut attempts = 0;
        let observations = loop {
            let mut obs = Vec::with_capacity(session.placements);
            while obs.len() < session.placements {
                attempts += 1;
                if attempts > MAX_RESAMPLE {
                    return Err(SynthError::PlacementFailed { camera: camera_id, attempts });
                }
                let pose = random_placement(board, session, cam, &k, rng);
                if let Some(corners) = project_board(board, &pose, cam, &k) {
                    let corners_2d = corners.iter().map(|p| Point2::new(p.x + noise.sample(rng), p.y + noise.sample(rng))).collect();
                    obs.push(BoardObservation { board_pose_mc: pose, corners_2d, camera_id, timestamp: obs.len() as f64 });
                }
            }
            if session.placements < 2 || max_orientation_spread_deg(&obs) >= MIN_SESSION_SPREAD_DEG {
                break obs;
            }
        };
        out.insert(camera_id, observations);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeshKind {
    /// Box resting on its bottom face.
    Box { size: [f64; 3] },
    /// Three stringers under five deck slats.
    Pallet { length: f64, width: f64, height: f64 },
}

impl MeshKind {
    /// Mesh in the object frame: origin at the bottom-face center, z up.
    pub fn build(&self, object_id: ObjectId) -> TriMesh {
        let mut m = TriMesh::empty(object_id);
        match *self {
            MeshKind::Box { size } => m.add_box(Point3::new(0.0, 0.0, size[2] / 2.0), size),
            MeshKind::Pallet { length, width, height } => {
                let deck = height * 0.15;
                let stringer_h = height - deck;
                let stringer_w = width / 8.0;
                for y in [-1.0, 0.0, 1.0] {
                    m.add_box(Point3::new(0.0, y * (width - stringer_w) / 2.0, stringer_h / 2.0), [length, stringer_w, stringer_h]);
                }
                let slat = length / 8.0;
                for i in 0..5 {
                    let x = -length / 2.0 + slat / 2.0 + i as f64 * (length - slat) / 4.0;
                    m.add_box(Point3::new(x, 0.0, stringer_h + deck / 2.0), [slat, width, deck]);
                }
            }
        }
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthObject {
    pub object_id: ObjectId,
    pub mesh: MeshKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub scenario: String,
    pub objects: Vec<SynthObject>,
    pub frame_rate: f64,
    pub frames: u32,
    /// Motion-capture samples per frame period.
    pub mocap_per_frame: u32,
    /// Objects stay within this distance of the rig target (mm).
    pub workspace_radius: f64,
    /// Seconds between trajectory waypoints.
    pub waypoint_interval: f64,
    pub mocap_jitter_mm: f64,
    pub mocap_jitter_deg: f64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            scenario: "I".into(),
            objects: vec![
                SynthObject { object_id: 1, mesh: MeshKind::Pallet { length: 1200.0, width: 800.0, height: 144.0 } },
                SynthObject { object_id: 2, mesh: MeshKind::Box { size: [600.0, 400.0, 400.0] } },
                SynthObject { object_id: 3, mesh: MeshKind::Box { size: [800.0, 600.0, 500.0] } },
            ],
            frame_rate: 5.0,
            frames: 100,
            mocap_per_frame: 20,
            workspace_radius: 2000.0,
            waypoint_interval: 4.0,
            mocap_jitter_mm: 0.5,
            mocap_jitter_deg: 0.05,
        }
    }
}

impl ScenarioSpec {
    pub fn meshes(&self) -> BTreeMap<ObjectId, TriMesh> {
        self.objects.iter().map(|o| (o.object_id, o.mesh.build(o.object_id))).collect()
    }
}

/// Everything a recording session produces.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    /// Logged poses (with jitter), as the pipeline ingests them.
    pub mocap: MocapLog,
    pub frames: Vec<FrameEntry>,
    /// Noise-free object poses per scene, for rendering hand-made masks.
    pub true_states: Vec<Vec<ObjectState>>,
    /// Per-scene annotations computed independently from the logged poses.
    pub oracle: Vec<SceneRecord>,
}

/// Piecewise-linear waypoint track: position on the floor plus yaw.
struct Track {
    times: Vec<f64>,
    points: Vec<(Vector3, f64)>,
}

impl Track {
    fn random(spec: &ScenarioSpec, duration: f64, center: &Vector3, rng: &mut impl Rng) -> Track {
        let n = (duration / spec.waypoint_interval).ceil() as usize + 2;
        let times = (0..n).map(|i| i as f64 * spec.waypoint_interval).collect();
        let points = (0..n)
            .map(|_| {
                let r = spec.workspace_radius * rng.random::<f64>().sqrt();
                let a = rng.random_range(0.0..std::f64::consts::TAU);
                (Vector3::new(center.x + r * a.cos(), center.y + r * a.sin(), center.z), rng.random_range(-std::f64::consts::PI..std::f64::consts::PI))
            })
            .collect();
        Track { times, points }
    }

    fn pose_at(&self, t: f64) -> Pose {
        let i = self.times.partition_point(|&w| w <= t).clamp(1, self.times.len() - 1);
        let (t0, t1) = (self.times[i - 1], self.times[i]);
        let s = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
        let (p0, y0) = self.points[i - 1];
        let (p1, y1) = self.points[i];
        Pose::new(Rotation::from_axis_angle(&(Vector3::z() * (y0 + s * (y1 - y0)))), p0 + (p1 - p0) * s)
    }
}

/// Oracle annotation by ray casting; relative pose through 4x4 matrices.
fn oracle_view(image_id: u32, camera_id: CameraId, k: &CameraIntrinsics, cam: &Pose, objects: &[ObjectState], meshes: &BTreeMap<ObjectId, TriMesh>, params: &AnnotateParams, timestamp: f64, rgb_path: &str) -> SceneView {
    let cam_inv = cam.to_matrix().try_inverse().expect("rigid transform is invertible");
    let mut annotations = Vec::new();
    let mut aggregated = MaskImage::new(k.width, k.height);
    for obj in objects {
        let rel = Pose::from_matrix(&(cam_inv * obj.pose_mc_obj.to_matrix())).expect("product of rigid transforms");
        let mask = raycast_mask(&meshes[&obj.object_id], &rel, k);
        let count = mask.count();
        if count < params.min_visible_pixels.max(1) {
            continue;
        }
        aggregated.union_with(&mask);
        let bbox = fit_bbox(&mask).expect("non-empty");
        annotations.push(Annotation { object_id: obj.object_id, relative_pose: rel, mask, bbox, visible_pixel_count: count });
    }
    let depth: DepthImage = mock_depth(&aggregated, params.fixed_distance, params.depth_scale).expect("valid depth parameters");
    SceneView {
        image_id,
        camera_id,
        rgb_path: Some(rgb_path.to_string()),
        timestamp,
        intrinsics: *k,
        pose_mc_cam: *cam,
        depth_scale: params.depth_scale,
        annotations,
        aggregated_mask: aggregated,
        depth,
    }
}

pub fn frame_image_path(scene_id: u32, camera_id: CameraId) -> String {
    format!("frames/{scene_id:06}_{camera_id:02}.png")
}

/// Moves the scenario objects along random floor tracks and logs them.
/// Frame times are exact multiples of the mocap period, so every frame has
/// a mocap sample at the same timestamp. Pass `with_oracle = false` to skip
/// the ray-cast oracle.
pub fn generate_recording(rig: &Rig, spec: &ScenarioSpec, params: &AnnotateParams, with_oracle: bool, rng: &mut impl Rng) -> Result<Recording, SynthError> {
    if !(spec.frame_rate > 0.0) || spec.mocap_per_frame == 0 || !(spec.waypoint_interval > 0.0) {
        return Err(SynthError::InvalidSpec("frame rate, mocap rate and waypoint interval must be positive".into()));
    }
    let meshes = spec.meshes();
    let mocap_rate = spec.frame_rate * spec.mocap_per_frame as f64;
    let n_samples = spec.frames as u64 * spec.mocap_per_frame as u64;
    let duration = spec.frames as f64 / spec.frame_rate;
    let center = Vector3::new(0.0, 0.0, 0.0);
    let tracks: Vec<Track> = spec.objects.iter().map(|_| Track::random(spec, duration, &center, rng)).collect();
    let pos_noise = Normal::new(0.0, spec.mocap_jitter_mm).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
    let rot_noise = Normal::new(0.0, spec.mocap_jitter_deg.to_radians()).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;

    let mut logged = Vec::new();
    let mut true_by_sample = Vec::new();
    for i in 0..n_samples {
        let t = i as f64 / mocap_rate;
        let mut truth = Vec::with_capacity(spec.objects.len());
        for (o, track) in spec.objects.iter().zip(&tracks) {
            let pose = track.pose_at(t);
            let dr = Vector3::new(rot_noise.sample(rng), rot_noise.sample(rng), rot_noise.sample(rng));
            let dt = Vector3::new(pos_noise.sample(rng), pos_noise.sample(rng), pos_noise.sample(rng));
            let noisy = Pose::new(Rotation::from_axis_angle(&dr).compose(&pose.rotation), pose.translation + dt);
            logged.push(ObjectState { object_id: o.object_id, pose_mc_obj: noisy, timestamp: t });
            truth.push(ObjectState { object_id: o.object_id, pose_mc_obj: pose, timestamp: t });
        }
        true_by_sample.push(truth);
    }
    let mocap = MocapLog::from_states(logged);

    let mut frames = Vec::new();
    let mut true_states = Vec::new();
    let mut oracle = Vec::new();
    for f in 0..spec.frames {
        let sample = f as u64 * spec.mocap_per_frame as u64;
        let t = sample as f64 / mocap_rate;
        for &camera_id in rig.extrinsics.keys() {
            frames.push(FrameEntry { scene_id: f, camera_id, timestamp_s: t, image_path: frame_image_path(f, camera_id), scenario: Some(spec.scenario.clone()) });
        }
        true_states.push(true_by_sample[sample as usize].clone());
        if with_oracle {
            let objects = mocap.states_at(t, 0.0);
            let views = rig
                .extrinsics
                .iter()
                .enumerate()
                .map(|(idx, (&cid, e))| oracle_view(idx as u32, cid, &rig.intrinsics[&cid], &e.pose_mc_cam, &objects, &meshes, params, t, &frame_image_path(f, cid)))
                .collect();
            oracle.push(SceneRecord { scene_id: f, scenario: Some(spec.scenario.clone()), timestamp: t, objects, views, annotation_time_s: 0.0 });
        }
    }
    Ok(Recording { mocap, frames, true_states, oracle })
}

/// Scene inputs exactly as the annotate stage builds them from the logs.
pub fn scene_inputs(recording: &Recording) -> Vec<SceneInputs> {
    crate::annotate::build_scene_inputs(&recording.frames, &recording.mocap, 0.0)
}

/// "Hand-made" masks: the union of object silhouettes rendered at the true
/// camera and object poses, paired with the logged object poses.
pub fn tuning_samples(
    true_rig: &Rig,
    recording: &Recording,
    meshes: &BTreeMap<ObjectId, TriMesh>,
    scene_ids: &[u32],
) -> BTreeMap<CameraId, Vec<TuningSample>> {
    let inputs = scene_inputs(recording);
    let mut out: BTreeMap<CameraId, Vec<TuningSample>> = BTreeMap::new();
    for &sid in scene_ids {
        let Some(scene) = inputs.iter().find(|s| s.scene_id == sid) else { continue };
        for img in &scene.images {
            let Ok((k, e)) = true_rig.camera(img.camera_id) else { continue };
            let mut mask = MaskImage::new(k.width, k.height);
            for obj in &recording.true_states[sid as usize] {
                let rel = e.pose_mc_cam.inverse().compose(&obj.pose_mc_obj);
                crate::mesh_render::rasterize_mask_into(&mut mask, &meshes[&obj.object_id], &rel, k);
            }
            out.entry(img.camera_id).or_default().push(TuningSample { image_id: sid, ground_truth_mask: mask, objects: scene.objects.clone() });
        }
    }
    out
}

/// Imagined images: sequential ids, used only for file references.
pub fn image_refs(rig: &Rig, scene_id: u32, t: f64) -> Vec<ImageRef> {
    rig.extrinsics.keys().map(|&c| ImageRef { camera_id: c, timestamp: t, rgb_path: Some(frame_image_path(scene_id, c)) }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotate::bbox_is_tight;
    use crate::calib::localize_camera;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_rig() -> RigSpec {
        RigSpec { width: 324, height_px: 256, focal_px: 250.0, ..RigSpec::default() }
    }

    #[test]
    fn rig_is_deterministic_and_aimed() {
        let a = generate_rig(&RigSpec::default(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = generate_rig(&RigSpec::default(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.extrinsics.len(), 8);
        let poses: Vec<Pose> = a.extrinsics.values().map(|e| e.pose_mc_cam).collect();
        for (i, p) in poses.iter().enumerate() {
            let axis = p.rotation.rotate(&Vector3::z());
            let to_target = (-p.translation).normalize();
            assert!(axis.angle(&to_target).to_degrees() < 1.0);
            for q in &poses[i + 1..] {
                assert!(p.distance(q).1 > 100.0);
            }
        }
        let one = generate_rig(&RigSpec { camera_count: 1, ..RigSpec::default() }, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(one.extrinsics.len(), 1);
        assert!(generate_rig(&RigSpec { camera_count: 0, ..RigSpec::default() }, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn look_at_axes() {
        let p = look_at(&Point3::new(-5.0, 0.0, 0.0), &Point3::origin(), &Vector3::z());
        assert!((p.rotation.rotate(&Vector3::z()) - Vector3::x()).norm() < 1e-12);
        // Image y points down.
        assert!((p.rotation.rotate(&Vector3::y()) + Vector3::z()).norm() < 1e-12);
    }

    #[test]
    fn noiseless_session_localizes_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rig = generate_rig(&small_rig(), &mut rng).unwrap();
        let board = BoardSpec::default();
        let obs = generate_board_session(&rig, &board, &BoardSessionSpec::default(), &mut rng).unwrap();
        for (cid, o) in &obs {
            assert_eq!(o.len(), 20);
            assert!(max_orientation_spread_deg(o) >= MIN_SESSION_SPREAD_DEG);
            let e = localize_camera(&board, o, &rig.intrinsics[cid]).unwrap();
            let (dr, dt) = e.pose_mc_cam.distance(&rig.extrinsics[cid].pose_mc_cam);
            assert!(dr < 1e-6 && dt < 1e-3, "camera {cid}: {dr} rad {dt} mm");
        }
    }

    #[test]
    fn single_placement_lacks_diversity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rig = generate_rig(&RigSpec { camera_count: 1, ..small_rig() }, &mut rng).unwrap();
        let board = BoardSpec::default();
        let obs = generate_board_session(&rig, &board, &BoardSessionSpec { placements: 1, ..Default::default() }, &mut rng).unwrap();
        assert!(matches!(
            localize_camera(&board, &obs[&0], &rig.intrinsics[&0]),
            Err(crate::calib::CalibError::Board(crate::board::BoardError::InsufficientOrientationDiversity { .. }))
        ));
    }

    #[test]
    fn pallet_shape() {
        let m = MeshKind::Pallet { length: 1200.0, width: 800.0, height: 144.0 }.build(4);
        assert_eq!(m.triangles.len(), 8 * 12);
        let zmax = m.vertices.iter().map(|v| v.z).fold(f64::MIN, f64::max);
        let zmin = m.vertices.iter().map(|v| v.z).fold(f64::MAX, f64::min);
        assert!((zmax - 144.0).abs() < 1e-9 && zmin.abs() < 1e-12);
    }

    #[test]
    fn recording_counts_and_oracle_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rig = generate_rig(&small_rig(), &mut rng).unwrap();
        let spec = ScenarioSpec { frames: 4, ..ScenarioSpec::default() };
        let rec = generate_recording(&rig, &spec, &AnnotateParams::default(), true, &mut rng).unwrap();
        assert_eq!(rec.frames.len(), 4 * 8);
        assert_eq!(rec.mocap.len(), 4 * 20 * 3);
        assert_eq!(rec.oracle.len(), 4);
        let inputs = scene_inputs(&rec);
        assert!(inputs.iter().all(|s| s.objects.len() == 3));
        let total: usize = rec.oracle.iter().map(|s| s.instance_count()).sum();
        assert_eq!(total, 4 * 8 * 3);
        for scene in &rec.oracle {
            for v in &scene.views {
                for a in &v.annotations {
                    assert!(bbox_is_tight(&a.mask, &a.bbox));
                    let obj = scene.objects.iter().find(|o| o.object_id == a.object_id).unwrap();
                    let (dr, dt) = v.pose_mc_cam.compose(&a.relative_pose).distance(&obj.pose_mc_obj);
                    assert!(dr < 1e-9 && dt < 1e-9);
                }
            }
        }
    }

    #[test]
    fn zero_frames_is_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rig = generate_rig(&small_rig(), &mut rng).unwrap();
        let rec = generate_recording(&rig, &ScenarioSpec { frames: 0, ..ScenarioSpec::default() }, &AnnotateParams::default(), true, &mut rng).unwrap();
        assert!(rec.frames.is_empty() && rec.mocap.is_empty() && rec.oracle.is_empty());
    }

    #[test]
    fn recording_is_deterministic() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let rig = generate_rig(&small_rig(), &mut rng).unwrap();
            generate_recording(&rig, &ScenarioSpec { frames: 3, ..ScenarioSpec::default() }, &AnnotateParams::default(), false, &mut rng).unwrap()
        };
        assert_eq!(run(), run());
    }
}
