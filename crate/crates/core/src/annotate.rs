//! Relative object poses, visibility filtering, boxes, mock depth, and scene
//! assembly.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calib::CameraExtrinsics;
use crate::geometry::{CameraIntrinsics, Pose};
use crate::mesh_render::{read_png_raw, rasterize_mask, write_png_gray, MaskImage, MeshError, TriMesh};
use crate::{CameraId, ObjectId};

pub const DEFAULT_MIN_VISIBLE_PIXELS: u64 = 32;
pub const DEFAULT_FIXED_DISTANCE: f64 = 6000.0;
pub const DEFAULT_DEPTH_SCALE: f64 = 1.0;
/// Maximum |frame time - mocap time| for association, seconds.
pub const DEFAULT_SYNC_WINDOW_S: f64 = 0.020;

#[derive(Debug, Error)]
pub enum AnnotateError {
    #[error("no mesh for object {0}")]
    MissingMesh(ObjectId),
    #[error("no extrinsics for camera {0}")]
    MissingExtrinsics(CameraId),
    #[error("no intrinsics for camera {0}")]
    MissingIntrinsics(CameraId),
    #[error("camera {0} appears twice in one scene")]
    DuplicateCamera(CameraId),
    #[error("depth value {value} exceeds 16 bits")]
    ValueOverflow { value: f64 },
    #[error("invalid depth parameters: {0}")]
    InvalidDepth(String),
    #[error("{path}:{line}: {message}")]
    Csv { path: String, line: u64, message: String },
    #[error(transparent)]
    Image(#[from] MeshError),
}

/// Tracked pose of one object in the motion-capture frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectState {
    pub object_id: ObjectId,
    pub pose_mc_obj: Pose,
    /// Seconds.
    pub timestamp: f64,
}

/// Integer pixel box; `w` and `h` count pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BBox {
    pub fn to_array(self) -> [u32; 4] {
        [self.x, self.y, self.w, self.h]
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x && y >= self.y && x - self.x < self.w && y - self.y < self.h
    }

    pub fn inside_image(&self, width: u32, height: u32) -> bool {
        self.w > 0 && self.h > 0 && self.x as u64 + self.w as u64 <= width as u64 && self.y as u64 + self.h as u64 <= height as u64
    }
}

/// Minimal box around the set pixels; `None` for an empty mask.
pub fn fit_bbox(mask: &MaskImage) -> Option<BBox> {
    let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
    for (x, y) in mask.iter_set() {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    (x0 != u32::MAX).then(|| BBox { x: x0, y: y0, w: x1 - x0 + 1, h: y1 - y0 + 1 })
}

/// True when every set pixel is inside `b` and each border row and column of
/// `b` holds at least one set pixel.
pub fn bbox_is_tight(mask: &MaskImage, b: &BBox) -> bool {
    if b.w == 0 || b.h == 0 {
        return false;
    }
    let (mut top, mut bottom, mut left, mut right) = (false, false, false, false);
    for (x, y) in mask.iter_set() {
        if !b.contains(x, y) {
            return false;
        }
        top |= y == b.y;
        bottom |= y == b.y + b.h - 1;
        left |= x == b.x;
        right |= x == b.x + b.w - 1;
    }
    top && bottom && left && right
}

/// 16-bit single-channel image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepthImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u16>,
}

impl DepthImage {
    pub fn get(&self, x: u32, y: u32) -> u16 {
        self.data[(y * self.width + x) as usize]
    }

    pub fn write_png(&self, path: &Path) -> Result<(), MeshError> {
        let bytes: Vec<u8> = self.data.iter().flat_map(|v| v.to_be_bytes()).collect();
        write_png_gray(path, self.width, self.height, png::BitDepth::Sixteen, &bytes)
    }

    pub fn read_png(path: &Path) -> Result<Self, MeshError> {
        let (info, bytes) = read_png_raw(path)?;
        if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Sixteen {
            return Err(MeshError::Image { path: path.display().to_string(), message: "expected 16-bit grayscale".into() });
        }
        let data = bytes.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect();
        Ok(Self { width: info.width, height: info.height, data })
    }
}

/// Stamps `round(fixed_distance / depth_scale)` onto the mask pixels.
pub fn mock_depth(aggregated: &MaskImage, fixed_distance: f64, depth_scale: f64) -> Result<DepthImage, AnnotateError> {
    if !(fixed_distance > 0.0 && fixed_distance.is_finite()) {
        return Err(AnnotateError::InvalidDepth(format!("fixed distance {fixed_distance}")));
    }
    if !(depth_scale > 0.0 && depth_scale.is_finite()) {
        return Err(AnnotateError::InvalidDepth(format!("depth scale {depth_scale}")));
    }
    let q = (fixed_distance / depth_scale).round();
    if q > u16::MAX as f64 {
        return Err(AnnotateError::ValueOverflow { value: q });
    }
    let (w, h) = (aggregated.width(), aggregated.height());
    let mut data = vec![0u16; w as usize * h as usize];
    for (x, y) in aggregated.iter_set() {
        data[(y * w + x) as usize] = q as u16;
    }
    Ok(DepthImage { width: w, height: h, data })
}

/// Object pose in the camera frame: inverse(camera) * object.
pub fn relative_pose(cam: &CameraExtrinsics, obj: &ObjectState) -> Pose {
    cam.pose_mc_cam.inverse().compose(&obj.pose_mc_obj)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub object_id: ObjectId,
    pub relative_pose: Pose,
    pub mask: MaskImage,
    pub bbox: BBox,
    pub visible_pixel_count: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ObjectOutcome {
    Annotated(Annotation),
    /// Fewer than the minimum number of pixels visible.
    Filtered { object_id: ObjectId, visible_pixel_count: u64 },
}

impl ObjectOutcome {
    pub fn annotation(self) -> Option<Annotation> {
        match self {
            ObjectOutcome::Annotated(a) => Some(a),
            ObjectOutcome::Filtered { .. } => None,
        }
    }
}

pub fn annotate_object(cam: &CameraExtrinsics, k: &CameraIntrinsics, obj: &ObjectState, mesh: &TriMesh, min_visible_pixels: u64) -> ObjectOutcome {
    let relative_pose = relative_pose(cam, obj);
    let mask = rasterize_mask(mesh, &relative_pose, k);
    let visible_pixel_count = mask.count();
    if visible_pixel_count < min_visible_pixels.max(1) {
        return ObjectOutcome::Filtered { object_id: obj.object_id, visible_pixel_count };
    }
    let bbox = fit_bbox(&mask).expect("mask is non-empty");
    ObjectOutcome::Annotated(Annotation { object_id: obj.object_id, relative_pose, mask, bbox, visible_pixel_count })
}

/// Intrinsics and extrinsics of every camera in the rig.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Rig {
    pub intrinsics: BTreeMap<CameraId, CameraIntrinsics>,
    pub extrinsics: BTreeMap<CameraId, CameraExtrinsics>,
}

impl Rig {
    pub fn camera(&self, id: CameraId) -> Result<(&CameraIntrinsics, &CameraExtrinsics), AnnotateError> {
        let k = self.intrinsics.get(&id).ok_or(AnnotateError::MissingIntrinsics(id))?;
        let e = self.extrinsics.get(&id).ok_or(AnnotateError::MissingExtrinsics(id))?;
        Ok((k, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnotateParams {
    pub min_visible_pixels: u64,
    pub fixed_distance: f64,
    pub depth_scale: f64,
}

impl Default for AnnotateParams {
    fn default() -> Self {
        Self { min_visible_pixels: DEFAULT_MIN_VISIBLE_PIXELS, fixed_distance: DEFAULT_FIXED_DISTANCE, depth_scale: DEFAULT_DEPTH_SCALE }
    }
}

/// One camera image of a scene snap.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRef {
    pub camera_id: CameraId,
    pub timestamp: f64,
    pub rgb_path: Option<String>,
}

/// Everything needed to annotate one snap.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneInputs {
    pub scene_id: u32,
    pub scenario: Option<String>,
    pub timestamp: f64,
    pub images: Vec<ImageRef>,
    pub objects: Vec<ObjectState>,
}

/// One annotated image; `image_id` is its index within the scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneView {
    pub image_id: u32,
    pub camera_id: CameraId,
    pub rgb_path: Option<String>,
    pub timestamp: f64,
    pub intrinsics: CameraIntrinsics,
    pub pose_mc_cam: Pose,
    pub depth_scale: f64,
    pub annotations: Vec<Annotation>,
    pub aggregated_mask: MaskImage,
    pub depth: DepthImage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneRecord {
    pub scene_id: u32,
    pub scenario: Option<String>,
    pub timestamp: f64,
    /// All tracked objects, including ones filtered from every view.
    pub objects: Vec<ObjectState>,
    pub views: Vec<SceneView>,
    /// Wall time spent annotating, seconds.
    pub annotation_time_s: f64,
}

impl SceneRecord {
    pub fn instance_count(&self) -> usize {
        self.views.iter().map(|v| v.annotations.len()).sum()
    }
}

/// Annotates every (camera, object) pair of a scene. Views follow camera id
/// order and annotations object id order, independent of thread count.
pub fn annotate_scene(
    rig: &Rig,
    meshes: &BTreeMap<ObjectId, TriMesh>,
    inputs: &SceneInputs,
    params: &AnnotateParams,
) -> Result<SceneRecord, AnnotateError> {
    let start = Instant::now();
    let mut images = inputs.images.clone();
    images.sort_by_key(|i| i.camera_id);
    let mut seen = BTreeSet::new();
    for img in &images {
        if !seen.insert(img.camera_id) {
            return Err(AnnotateError::DuplicateCamera(img.camera_id));
        }
        rig.camera(img.camera_id)?;
    }
    let mut objects = inputs.objects.clone();
    objects.sort_by_key(|o| o.object_id);
    if let Some(o) = objects.iter().find(|o| !meshes.contains_key(&o.object_id)) {
        return Err(AnnotateError::MissingMesh(o.object_id));
    }

    let jobs: Vec<(usize, usize)> = (0..images.len()).flat_map(|c| (0..objects.len()).map(move |o| (c, o))).collect();
    let outcomes: Vec<ObjectOutcome> = jobs
        .par_iter()
        .map(|&(c, o)| {
            let (k, e) = rig.camera(images[c].camera_id).expect("checked above");
            let obj = &objects[o];
            annotate_object(e, k, obj, &meshes[&obj.object_id], params.min_visible_pixels)
        })
        .collect();

    let mut outcomes = outcomes.into_iter();
    let mut views = Vec::with_capacity(images.len());
    for (idx, img) in images.iter().enumerate() {
        let (k, e) = rig.camera(img.camera_id)?;
        let annotations: Vec<Annotation> = outcomes.by_ref().take(objects.len()).filter_map(ObjectOutcome::annotation).collect();
        let mut aggregated = MaskImage::new(k.width, k.height);
        for a in &annotations {
            aggregated.union_with(&a.mask);
        }
        let depth = mock_depth(&aggregated, params.fixed_distance, params.depth_scale)?;
        views.push(SceneView {
            image_id: idx as u32,
            camera_id: img.camera_id,
            rgb_path: img.rgb_path.clone(),
            timestamp: img.timestamp,
            intrinsics: *k,
            pose_mc_cam: e.pose_mc_cam,
            depth_scale: params.depth_scale,
            annotations,
            aggregated_mask: aggregated,
            depth,
        });
    }
    Ok(SceneRecord {
        scene_id: inputs.scene_id,
        scenario: inputs.scenario.clone(),
        timestamp: inputs.timestamp,
        objects,
        views,
        annotation_time_s: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct MocapRow {
    timestamp_s: f64,
    object_id: ObjectId,
    tx_mm: f64,
    ty_mm: f64,
    tz_mm: f64,
    qx: f64,
    qy: f64,
    qz: f64,
    qw: f64,
}

fn csv_err(path: &Path, line: u64, message: impl std::fmt::Display) -> AnnotateError {
    AnnotateError::Csv { path: path.display().to_string(), line, message: message.to_string() }
}

fn csv_line(e: &csv::Error) -> u64 {
    e.position().map(|p| p.line()).unwrap_or(0)
}

/// Motion-capture samples grouped by object, each sorted by time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MocapLog {
    pub tracks: BTreeMap<ObjectId, Vec<ObjectState>>,
}

impl MocapLog {
    pub fn from_states(states: impl IntoIterator<Item = ObjectState>) -> Self {
        let mut tracks: BTreeMap<ObjectId, Vec<ObjectState>> = BTreeMap::new();
        for s in states {
            tracks.entry(s.object_id).or_default().push(s);
        }
        for t in tracks.values_mut() {
            t.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        }
        Self { tracks }
    }

    pub fn len(&self) -> usize {
        self.tracks.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// For each object, the sample nearest to `t` if within `window` seconds.
    /// Equidistant samples resolve to the earlier one.
    pub fn states_at(&self, t: f64, window: f64) -> Vec<ObjectState> {
        self.tracks
            .values()
            .filter_map(|track| {
                let i = track.partition_point(|s| s.timestamp < t);
                let before = i.checked_sub(1).map(|j| &track[j]);
                let after = track.get(i);
                let best = match (before, after) {
                    (Some(b), Some(a)) => Some(if a.timestamp - t < t - b.timestamp { a } else { b }),
                    (b, a) => b.or(a),
                }?;
                ((best.timestamp - t).abs() <= window).then_some(*best)
            })
            .collect()
    }

    pub fn read_csv(path: &Path) -> Result<Self, AnnotateError> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, 0, e))?;
        let mut states = Vec::new();
        for row in reader.deserialize::<MocapRow>() {
            let row = row.map_err(|e| csv_err(path, csv_line(&e), e))?;
            let line = states.len() as u64 + 2;
            let pose = Pose::from_tq([row.tx_mm, row.ty_mm, row.tz_mm], [row.qx, row.qy, row.qz, row.qw]).map_err(|e| csv_err(path, line, e))?;
            if !row.timestamp_s.is_finite() {
                return Err(csv_err(path, line, "timestamp is not finite"));
            }
            states.push(ObjectState { object_id: row.object_id, pose_mc_obj: pose, timestamp: row.timestamp_s });
        }
        Ok(Self::from_states(states))
    }

    /// Writes rows sorted by (timestamp, object id).
    pub fn write_csv(&self, path: &Path) -> Result<(), AnnotateError> {
        let mut rows: Vec<&ObjectState> = self.tracks.values().flatten().collect();
        rows.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp).then(a.object_id.cmp(&b.object_id)));
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, 0, e))?;
        for s in rows {
            let (t, q) = s.pose_mc_obj.to_tq();
            w.serialize(MocapRow {
                timestamp_s: s.timestamp,
                object_id: s.object_id,
                tx_mm: t[0],
                ty_mm: t[1],
                tz_mm: t[2],
                qx: q[0],
                qy: q[1],
                qz: q[2],
                qw: q[3],
            })
            .map_err(|e| csv_err(path, 0, e))?;
        }
        w.flush().map_err(|e| csv_err(path, 0, e))
    }
}

/// One row of the frame index: which camera image belongs to which snap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub scene_id: u32,
    pub camera_id: CameraId,
    pub timestamp_s: f64,
    pub image_path: String,
    #[serde(default)]
    pub scenario: Option<String>,
}

pub fn read_frame_index(path: &Path) -> Result<Vec<FrameEntry>, AnnotateError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, 0, e))?;
    reader.deserialize().map(|r: Result<FrameEntry, _>| r.map_err(|e| csv_err(path, csv_line(&e), e))).collect()
}

pub fn write_frame_index(path: &Path, frames: &[FrameEntry]) -> Result<(), AnnotateError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, 0, e))?;
    for f in frames {
        w.serialize(f).map_err(|e| csv_err(path, 0, e))?;
    }
    w.flush().map_err(|e| csv_err(path, 0, e))
}

/// Groups frames into scenes and attaches the object states nearest to each
/// scene's earliest frame time. Scenes come out sorted by id.
pub fn build_scene_inputs(frames: &[FrameEntry], mocap: &MocapLog, window: f64) -> Vec<SceneInputs> {
    let mut by_scene: BTreeMap<u32, Vec<&FrameEntry>> = BTreeMap::new();
    for f in frames {
        by_scene.entry(f.scene_id).or_default().push(f);
    }
    by_scene
        .into_iter()
        .map(|(scene_id, list)| {
            let timestamp = list.iter().map(|f| f.timestamp_s).fold(f64::INFINITY, f64::min);
            SceneInputs {
                scene_id,
                scenario: list.iter().find_map(|f| f.scenario.clone()),
                timestamp,
                images: list.iter().map(|f| ImageRef { camera_id: f.camera_id, timestamp: f.timestamp_s, rgb_path: Some(f.image_path.clone()) }).collect(),
                objects: mocap.states_at(timestamp, window),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Rotation, Vector3};
    use proptest::prelude::*;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(300.0, 300.0, 159.5, 119.5, 320, 240).unwrap()
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (prop::array::uniform3(-3.2f64..3.2), prop::array::uniform3(-1e4f64..1e4))
            .prop_map(|(w, t)| Pose::new(Rotation::from_axis_angle(&Vector3::from(w)), Vector3::from(t)))
    }

    fn state(id: ObjectId, pose: Pose) -> ObjectState {
        ObjectState { object_id: id, pose_mc_obj: pose, timestamp: 0.0 }
    }

    #[test]
    fn relative_pose_trivial_cases() {
        let obj = state(1, Pose::new(Rotation::from_axis_angle(&Vector3::new(0.1, 0.2, 0.3)), Vector3::new(1.0, 2.0, 3.0)));
        let id_cam = CameraExtrinsics::untuned(0, Pose::identity());
        assert_eq!(relative_pose(&id_cam, &obj), obj.pose_mc_obj);
        let same = CameraExtrinsics::untuned(0, obj.pose_mc_obj);
        let (dr, dt) = relative_pose(&same, &obj).distance(&Pose::identity());
        assert!(dr < 1e-12 && dt < 1e-12);
    }

    proptest! {
        #[test]
        fn chain_closure(cam in arb_pose(), obj in arb_pose()) {
            let c = CameraExtrinsics::untuned(0, cam);
            let back = cam.compose(&relative_pose(&c, &state(1, obj)));
            let (dr, dt) = back.distance(&obj);
            prop_assert!(dr < 1e-9 && dt < 1e-9);
        }

        #[test]
        fn bbox_is_tight_for_any_mask(bits in prop::collection::vec(any::<bool>(), 15 * 11)) {
            let m = MaskImage::from_fn(15, 11, |x, y| bits[(y * 15 + x) as usize]);
            match fit_bbox(&m) {
                None => prop_assert!(m.is_empty()),
                Some(b) => prop_assert!(bbox_is_tight(&m, &b)),
            }
        }
    }

    #[test]
    fn fit_bbox_examples() {
        let m = MaskImage::from_fn(40, 40, |x, y| (5..=15).contains(&x) && (10..=20).contains(&y));
        assert_eq!(fit_bbox(&m), Some(BBox { x: 5, y: 10, w: 11, h: 11 }));
        let one = MaskImage::from_fn(4, 4, |x, y| x == 0 && y == 0);
        assert_eq!(fit_bbox(&one), Some(BBox { x: 0, y: 0, w: 1, h: 1 }));
        assert_eq!(fit_bbox(&MaskImage::new(4, 4)), None);
    }

    #[test]
    fn mock_depth_examples() {
        let m = MaskImage::from_fn(6, 5, |x, _| x < 2);
        let d = mock_depth(&m, 6000.0, 1.0).unwrap();
        assert_eq!(d.get(0, 0), 6000);
        assert_eq!(d.get(3, 0), 0);
        assert!(mock_depth(&MaskImage::new(6, 5), 6000.0, 1.0).unwrap().data.iter().all(|&v| v == 0));
        assert_eq!(mock_depth(&m, 6000.0, 0.1).unwrap().get(1, 4), 60000);
        assert!(matches!(mock_depth(&m, 7000.0, 0.1), Err(AnnotateError::ValueOverflow { .. })));
        assert!(matches!(mock_depth(&m, 0.0, 1.0), Err(AnnotateError::InvalidDepth(_))));
    }

    #[test]
    fn depth_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = DepthImage { width: 3, height: 2, data: vec![0, 1, 256, 6000, 65535, 42] };
        let p = dir.path().join("d.png");
        d.write_png(&p).unwrap();
        assert_eq!(DepthImage::read_png(&p).unwrap(), d);
    }

    #[test]
    fn annotate_object_cases() {
        let cam = CameraExtrinsics::untuned(0, Pose::identity());
        let mesh = TriMesh::cuboid(1, [400.0, 400.0, 400.0]);
        let centered = state(1, Pose::from_translation(Vector3::new(0.0, 0.0, 3000.0)));
        let a = annotate_object(&cam, &k(), &centered, &mesh, 32).annotation().unwrap();
        assert!(a.bbox.x > 0 && a.bbox.y > 0 && a.bbox.x + a.bbox.w < 320 && a.bbox.y + a.bbox.h < 240);
        assert_eq!(a.visible_pixel_count, a.mask.count());
        assert!(bbox_is_tight(&a.mask, &a.bbox));

        let behind = state(1, Pose::from_translation(Vector3::new(0.0, 0.0, -10_000.0)));
        assert!(matches!(annotate_object(&cam, &k(), &behind, &mesh, 32), ObjectOutcome::Filtered { visible_pixel_count: 0, .. }));

        // A 60 mm cube centered on the left image border: about 4 x 6 pixels.
        let small = TriMesh::cuboid(1, [60.0, 60.0, 60.0]);
        let tiny = state(1, Pose::from_translation(Vector3::new(-1595.0, 0.0, 3000.0)));
        match annotate_object(&cam, &k(), &tiny, &small, 32) {
            ObjectOutcome::Filtered { visible_pixel_count, .. } => assert!(visible_pixel_count > 0 && visible_pixel_count < 32),
            other => panic!("expected filtered, got {other:?}"),
        }
    }

    fn ring_rig(n: u32) -> Rig {
        let mut rig = Rig::default();
        for c in 0..n {
            let yaw = c as f64 * 0.2 - 0.3;
            // World to camera: the origin sits 4 m in front of every camera.
            let pose_cam_mc = Pose::new(Rotation::from_axis_angle(&Vector3::new(0.0, yaw, 0.0)), Vector3::new(0.0, 0.0, 4000.0));
            rig.intrinsics.insert(c, k());
            rig.extrinsics.insert(c, CameraExtrinsics::untuned(c, pose_cam_mc.inverse()));
        }
        rig
    }

    fn inputs(objects: Vec<ObjectState>, cams: u32) -> SceneInputs {
        SceneInputs {
            scene_id: 7,
            scenario: Some("I".into()),
            timestamp: 0.0,
            images: (0..cams).rev().map(|c| ImageRef { camera_id: c, timestamp: 0.0, rgb_path: None }).collect(),
            objects,
        }
    }

    fn meshes() -> BTreeMap<ObjectId, TriMesh> {
        (1..=3).map(|i| (i, TriMesh::cuboid(i, [300.0, 200.0 + 50.0 * i as f64, 250.0]))).collect()
    }

    fn objects() -> Vec<ObjectState> {
        vec![
            state(3, Pose::from_translation(Vector3::new(0.0, 300.0, 0.0))),
            state(1, Pose::from_translation(Vector3::new(-400.0, 0.0, 0.0))),
            state(2, Pose::new(Rotation::from_axis_angle(&Vector3::new(0.0, 0.0, 0.7)), Vector3::new(400.0, -100.0, 100.0))),
        ]
    }

    #[test]
    fn scene_counts_order_and_union() {
        let rig = ring_rig(8);
        let rec = annotate_scene(&rig, &meshes(), &inputs(objects(), 8), &AnnotateParams::default()).unwrap();
        assert_eq!(rec.instance_count(), 24);
        assert_eq!(rec.views.iter().map(|v| v.camera_id).collect::<Vec<_>>(), (0..8).collect::<Vec<_>>());
        for v in &rec.views {
            assert_eq!(v.annotations.iter().map(|a| a.object_id).collect::<Vec<_>>(), vec![1, 2, 3]);
            let mut u = MaskImage::new(320, 240);
            for a in &v.annotations {
                u.union_with(&a.mask);
            }
            assert_eq!(u, v.aggregated_mask);
            assert_eq!(v.depth.data.iter().filter(|&&d| d == 6000).count() as u64, u.count());
        }
        let again = annotate_scene(&rig, &meshes(), &inputs(objects(), 8), &AnnotateParams::default()).unwrap();
        assert_eq!(SceneRecord { annotation_time_s: 0.0, ..again }, SceneRecord { annotation_time_s: 0.0, ..rec });
    }

    #[test]
    fn object_out_of_one_frustum() {
        let mut rig = ring_rig(8);
        // Camera 0 gets a narrow field of view; object 2 moves out of it.
        rig.intrinsics.insert(0, CameraIntrinsics::new(3000.0, 3000.0, 159.5, 119.5, 320, 240).unwrap());
        let mut objs = objects();
        objs[2].pose_mc_obj = Pose::from_translation(Vector3::new(1500.0, -100.0, 100.0));
        let rec = annotate_scene(&rig, &meshes(), &inputs(objs, 8), &AnnotateParams::default()).unwrap();
        assert_eq!(rec.views[0].annotations.iter().map(|a| a.object_id).collect::<Vec<_>>(), vec![1, 3]);
        assert_eq!(rec.instance_count(), 23);
        assert_eq!(rec.objects.len(), 3);
    }

    #[test]
    fn empty_and_error_scenes() {
        let rig = ring_rig(2);
        let rec = annotate_scene(&rig, &meshes(), &inputs(vec![], 2), &AnnotateParams::default()).unwrap();
        assert_eq!(rec.instance_count(), 0);
        assert!(rec.views.iter().all(|v| v.aggregated_mask.is_empty()));
        let mut m = meshes();
        m.remove(&2);
        assert!(matches!(annotate_scene(&rig, &m, &inputs(objects(), 2), &AnnotateParams::default()), Err(AnnotateError::MissingMesh(2))));
        assert!(matches!(annotate_scene(&rig, &meshes(), &inputs(objects(), 3), &AnnotateParams::default()), Err(AnnotateError::MissingIntrinsics(2))));
        let mut no_ext = rig.clone();
        no_ext.extrinsics.remove(&1);
        assert!(matches!(annotate_scene(&no_ext, &meshes(), &inputs(objects(), 2), &AnnotateParams::default()), Err(AnnotateError::MissingExtrinsics(1))));
    }

    #[test]
    fn mocap_association_and_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("mocap.csv");
        let pose = Pose::new(Rotation::from_axis_angle(&Vector3::new(0.3, -0.1, 1.2)), Vector3::new(123.25, -4.5, 7.0));
        let states: Vec<_> = (0..20)
            .flat_map(|i| (1..=2).map(move |id| ObjectState { object_id: id, pose_mc_obj: pose, timestamp: i as f64 * 0.01 }))
            .collect();
        let log = MocapLog::from_states(states);
        log.write_csv(&p).unwrap();
        let header = std::fs::read_to_string(&p).unwrap();
        assert!(header.starts_with("timestamp_s,object_id,tx_mm,ty_mm,tz_mm,qx,qy,qz,qw\n"));
        let back = MocapLog::read_csv(&p).unwrap();
        assert_eq!(back.len(), 40);
        let at = back.states_at(0.052, 0.02);
        assert_eq!(at.len(), 2);
        assert_eq!(at[0].timestamp, 0.05);
        assert!(back.states_at(0.5, 0.02).is_empty());
        let (dr, dt) = at[0].pose_mc_obj.distance(&pose);
        assert!(dr < 1e-12 && dt < 1e-12);
    }

    #[test]
    fn bad_mocap_row_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("mocap.csv");
        std::fs::write(&p, "timestamp_s,object_id,tx_mm,ty_mm,tz_mm,qx,qy,qz,qw\n0,1,0,0,0,0,0,0,1\n0.1,1,0,0,0,0,0,0,0\n").unwrap();
        match MocapLog::read_csv(&p) {
            Err(AnnotateError::Csv { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn frame_index_groups_scenes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("frames.csv");
        let frames: Vec<FrameEntry> = (0..2)
            .flat_map(|s| {
                (0..3).map(move |c| FrameEntry { scene_id: s, camera_id: c, timestamp_s: s as f64 * 0.2, image_path: format!("rgb/{s}_{c}.png"), scenario: None })
            })
            .collect();
        write_frame_index(&p, &frames).unwrap();
        let back = read_frame_index(&p).unwrap();
        assert_eq!(back, frames);
        let log = MocapLog::from_states([state(1, Pose::identity())]);
        let scenes = build_scene_inputs(&back, &log, 0.02);
        assert_eq!(scenes.len(), 2);
        assert_eq!(scenes[0].images.len(), 3);
        assert_eq!(scenes[0].objects.len(), 1);
        assert!(scenes[1].objects.is_empty());
    }
}
