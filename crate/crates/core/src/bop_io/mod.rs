//! BOP-style dataset layout.
//!
//! One directory per scene snap, `{scene_id:06}/`, holding:
//!
//! - `scene_camera.json`, `scene_gt.json`, `scene_gt_info.json` keyed by image id
//! - `cameras.json`: image id to rig camera, scenario tag, tracked objects
//! - `mask/` and `mask_visib/` (identical), `{image:06}_{index:06}.png`
//! - `depth/{image:06}.png`, 16-bit mock depth
//! - `rgb/{image:06}.<ext>`, copied from the source frame when it exists

mod stats;
mod validate;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotate::{Annotation, BBox, DepthImage, ObjectState, SceneRecord, SceneView};
use crate::geometry::{CameraIntrinsics, Pose, PoseTq, Rotation, Vector3};
use crate::mesh_render::{MaskImage, MeshError};
use crate::{CameraId, ObjectId};

pub use stats::{stats, DatasetStats, ScenarioStats, UNTAGGED_SCENARIO};
pub use validate::{validate, ValidationReport, Violation, ViolationKind};

pub const SCENE_CAMERA: &str = "scene_camera.json";
pub const SCENE_GT: &str = "scene_gt.json";
pub const SCENE_GT_INFO: &str = "scene_gt_info.json";
pub const CAMERAS: &str = "cameras.json";
pub const SUBDIRS: [&str; 4] = ["rgb", "mask", "mask_visib", "depth"];

#[derive(Debug, Error)]
pub enum BopError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{file}: schema error at {key}: {message}")]
    Schema { file: String, key: String, message: String },
    #[error(transparent)]
    Image(#[from] MeshError),
}

fn io_err(path: &Path, source: std::io::Error) -> BopError {
    BopError::Io { path: path.display().to_string(), source }
}

fn schema_err(file: &Path, key: impl Into<String>, message: impl std::fmt::Display) -> BopError {
    BopError::Schema { file: file.display().to_string(), key: key.into(), message: message.to_string() }
}

/// Root of a dataset on disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetLayout {
    pub root: PathBuf,
}

impl DatasetLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn scene_dir(&self, scene_id: u32) -> PathBuf {
        self.root.join(format!("{scene_id:06}"))
    }

    /// Ids of all six-digit scene directories, ascending.
    pub fn scene_ids(&self) -> Result<Vec<u32>, BopError> {
        if !self.root.exists() {
            return Ok(Vec::new());
        }
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.root).map_err(|e| io_err(&self.root, e))? {
            let entry = entry.map_err(|e| io_err(&self.root, e))?;
            let name = entry.file_name();
            let name = name.to_string_lossy();
            if name.len() == 6 && entry.path().is_dir() {
                if let Ok(id) = name.parse() {
                    ids.push(id);
                }
            }
        }
        ids.sort_unstable();
        Ok(ids)
    }
}

pub fn mask_name(image_id: u32, index: usize) -> String {
    format!("{image_id:06}_{index:06}.png")
}

pub fn depth_name(image_id: u32) -> String {
    format!("{image_id:06}.png")
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct CameraEntry {
    pub cam_K: [f64; 9],
    pub depth_scale: f64,
    pub cam_R_w2c: [f64; 9],
    pub cam_t_w2c: [f64; 3],
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub k1: f64,
    #[serde(default)]
    pub k2: f64,
}

#[allow(non_snake_case)]
#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct GtEntry {
    pub obj_id: ObjectId,
    pub cam_R_m2c: [f64; 9],
    pub cam_t_m2c: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct GtInfoEntry {
    pub bbox_obj: [u32; 4],
    pub bbox_visib: [u32; 4],
    pub px_count_all: u64,
    pub px_count_visib: u64,
    pub visib_fract: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct ImageMeta {
    pub camera_id: CameraId,
    pub timestamp: f64,
    #[serde(default)]
    pub rgb_path: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct ObjectMeta {
    pub object_id: ObjectId,
    pub timestamp: f64,
    pub t: [f64; 3],
    pub q: [f64; 4],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct CamerasMeta {
    pub scene_id: u32,
    #[serde(default)]
    pub scenario: Option<String>,
    pub timestamp: f64,
    #[serde(default)]
    pub annotation_time_s: f64,
    pub images: BTreeMap<String, ImageMeta>,
    pub objects: Vec<ObjectMeta>,
}

pub(crate) type CameraDoc = BTreeMap<String, CameraEntry>;
pub(crate) type GtDoc = BTreeMap<String, Vec<GtEntry>>;
pub(crate) type GtInfoDoc = BTreeMap<String, Vec<GtInfoEntry>>;

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, BopError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| schema_err(path, e.path().to_string(), e.inner()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), BopError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| schema_err(path, ".", e))?;
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub(crate) fn parse_image_id(file: &Path, key: &str) -> Result<u32, BopError> {
    key.parse().map_err(|_| schema_err(file, key, "image id is not an integer"))
}

fn camera_entry(view: &SceneView) -> CameraEntry {
    let w2c = view.pose_mc_cam.inverse();
    let k = &view.intrinsics;
    CameraEntry {
        cam_K: k.to_row_major(),
        depth_scale: view.depth_scale,
        cam_R_w2c: w2c.rotation.to_row_major(),
        cam_t_w2c: w2c.translation.into(),
        width: k.width,
        height: k.height,
        k1: k.k1,
        k2: k.k2,
    }
}

fn gt_info(a: &Annotation) -> GtInfoEntry {
    GtInfoEntry {
        bbox_obj: a.bbox.to_array(),
        bbox_visib: a.bbox.to_array(),
        px_count_all: a.visible_pixel_count,
        px_count_visib: a.visible_pixel_count,
        visib_fract: if a.visible_pixel_count > 0 { 1.0 } else { 0.0 },
    }
}

/// Writes one scene snap, creating the scene directory as needed.
pub fn write_scene(record: &SceneRecord, layout: &DatasetLayout) -> Result<(), BopError> {
    let dir = layout.scene_dir(record.scene_id);
    for sub in SUBDIRS {
        fs::create_dir_all(dir.join(sub)).map_err(|e| io_err(&dir.join(sub), e))?;
    }
    let mut cameras = CameraDoc::new();
    let mut gt = GtDoc::new();
    let mut info = GtInfoDoc::new();
    let mut images = BTreeMap::new();
    for view in &record.views {
        let key = view.image_id.to_string();
        cameras.insert(key.clone(), camera_entry(view));
        gt.insert(
            key.clone(),
            view.annotations
                .iter()
                .map(|a| GtEntry {
                    obj_id: a.object_id,
                    cam_R_m2c: a.relative_pose.rotation.to_row_major(),
                    cam_t_m2c: a.relative_pose.translation.into(),
                })
                .collect(),
        );
        info.insert(key.clone(), view.annotations.iter().map(gt_info).collect());
        images.insert(key, ImageMeta { camera_id: view.camera_id, timestamp: view.timestamp, rgb_path: view.rgb_path.clone() });

        for (idx, a) in view.annotations.iter().enumerate() {
            let name = mask_name(view.image_id, idx);
            a.mask.write_png(&dir.join("mask").join(&name))?;
            a.mask.write_png(&dir.join("mask_visib").join(&name))?;
        }
        view.depth.write_png(&dir.join("depth").join(depth_name(view.image_id)))?;
        if let Some(src) = view.rgb_path.as_deref().map(Path::new).filter(|p| p.is_file()) {
            let ext = src.extension().and_then(|e| e.to_str()).unwrap_or("png");
            let dst = dir.join("rgb").join(format!("{:06}.{ext}", view.image_id));
            fs::copy(src, &dst).map_err(|e| io_err(&dst, e))?;
        }
    }
    let meta = CamerasMeta {
        scene_id: record.scene_id,
        scenario: record.scenario.clone(),
        timestamp: record.timestamp,
        annotation_time_s: record.annotation_time_s,
        images,
        objects: record
            .objects
            .iter()
            .map(|o| {
                let (t, q) = o.pose_mc_obj.to_tq();
                ObjectMeta { object_id: o.object_id, timestamp: o.timestamp, t, q }
            })
            .collect(),
    };
    write_json(&dir.join(SCENE_CAMERA), &cameras)?;
    write_json(&dir.join(SCENE_GT), &gt)?;
    write_json(&dir.join(SCENE_GT_INFO), &info)?;
    write_json(&dir.join(CAMERAS), &meta)
}

fn rotation(file: &Path, key: String, v: &[f64; 9]) -> Result<Rotation, BopError> {
    Rotation::from_row_major(v).map_err(|e| schema_err(file, key, e))
}

/// Reads a scene written by [`write_scene`]. The aggregated mask is rebuilt
/// as the union of the instance masks.
pub fn read_scene(layout: &DatasetLayout, scene_id: u32) -> Result<SceneRecord, BopError> {
    let dir = layout.scene_dir(scene_id);
    let (cam_path, gt_path, info_path, meta_path) = (dir.join(SCENE_CAMERA), dir.join(SCENE_GT), dir.join(SCENE_GT_INFO), dir.join(CAMERAS));
    let cameras: CameraDoc = read_json(&cam_path)?;
    let gt: GtDoc = read_json(&gt_path)?;
    let info: GtInfoDoc = read_json(&info_path)?;
    let meta: CamerasMeta = read_json(&meta_path)?;

    let mut ids: Vec<(u32, &String)> = cameras.keys().map(|k| Ok((parse_image_id(&cam_path, k)?, k))).collect::<Result<_, BopError>>()?;
    ids.sort_unstable();
    let mut views = Vec::with_capacity(ids.len());
    for (image_id, key) in ids {
        let c = &cameras[key];
        let intrinsics = CameraIntrinsics::new(c.cam_K[0], c.cam_K[4], c.cam_K[2], c.cam_K[5], c.width, c.height)
            .map_err(|e| schema_err(&cam_path, format!("{key}.cam_K"), e))?
            .with_distortion(c.k1, c.k2);
        let w2c = Pose::new(rotation(&cam_path, format!("{key}.cam_R_w2c"), &c.cam_R_w2c)?, Vector3::from(c.cam_t_w2c));
        let image = meta.images.get(key).ok_or_else(|| schema_err(&meta_path, format!("images.{key}"), "missing image entry"))?;
        let gts = gt.get(key).map(Vec::as_slice).unwrap_or_default();
        let infos = info.get(key).map(Vec::as_slice).unwrap_or_default();
        if gts.len() != infos.len() {
            return Err(schema_err(&info_path, key.clone(), format!("{} entries, {SCENE_GT} has {}", infos.len(), gts.len())));
        }
        let mut annotations = Vec::with_capacity(gts.len());
        let mut aggregated = MaskImage::new(c.width, c.height);
        for (idx, (g, i)) in gts.iter().zip(infos).enumerate() {
            let rot = rotation(&gt_path, format!("{key}[{idx}].cam_R_m2c"), &g.cam_R_m2c)?;
            let mask = MaskImage::read_png(&dir.join("mask").join(mask_name(image_id, idx)))?;
            aggregated.union_with(&mask);
            let [x, y, w, h] = i.bbox_obj;
            annotations.push(Annotation {
                object_id: g.obj_id,
                relative_pose: Pose::new(rot, Vector3::from(g.cam_t_m2c)),
                mask,
                bbox: BBox { x, y, w, h },
                visible_pixel_count: i.px_count_visib,
            });
        }
        let depth = DepthImage::read_png(&dir.join("depth").join(depth_name(image_id)))?;
        views.push(SceneView {
            image_id,
            camera_id: image.camera_id,
            rgb_path: image.rgb_path.clone(),
            timestamp: image.timestamp,
            intrinsics,
            pose_mc_cam: w2c.inverse(),
            depth_scale: c.depth_scale,
            annotations,
            aggregated_mask: aggregated,
            depth,
        });
    }
    let objects = meta
        .objects
        .iter()
        .enumerate()
        .map(|(i, o)| {
            Pose::try_from(PoseTq { t: o.t, q: o.q })
                .map(|pose_mc_obj| ObjectState { object_id: o.object_id, pose_mc_obj, timestamp: o.timestamp })
                .map_err(|e| schema_err(&meta_path, format!("objects[{i}]"), e))
        })
        .collect::<Result<_, _>>()?;
    Ok(SceneRecord {
        scene_id: meta.scene_id,
        scenario: meta.scenario,
        timestamp: meta.timestamp,
        objects,
        views,
        annotation_time_s: meta.annotation_time_s,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::annotate::{annotate_scene, AnnotateParams, ImageRef, Rig, SceneInputs};
    use crate::calib::CameraExtrinsics;
    use crate::mesh_render::TriMesh;

    /// Small two-camera scene with three boxes.
    pub(crate) fn sample_scene(scene_id: u32, scenario: Option<&str>) -> SceneRecord {
        let k = CameraIntrinsics::new(250.0, 250.0, 95.5, 71.5, 192, 144).unwrap();
        let mut rig = Rig::default();
        for c in 0..2u32 {
            let w2c = Pose::new(Rotation::from_axis_angle(&Vector3::new(0.05, 0.4 * c as f64 - 0.2, 0.02)), Vector3::new(30.0, -20.0, 4000.0));
            rig.intrinsics.insert(c, k);
            rig.extrinsics.insert(c, CameraExtrinsics::untuned(c, w2c.inverse()));
        }
        let meshes: BTreeMap<ObjectId, TriMesh> = (1..=3).map(|i| (i, TriMesh::cuboid(i, [400.0, 300.0, 200.0 * i as f64]))).collect();
        let objects = (1..=3)
            .map(|i| ObjectState {
                object_id: i,
                pose_mc_obj: Pose::new(Rotation::from_axis_angle(&Vector3::new(0.1 * i as f64, 0.3, -0.2)), Vector3::new(500.0 * (i as f64 - 2.0), 100.0, 0.0)),
                timestamp: 1.25,
            })
            .collect();
        let inputs = SceneInputs {
            scene_id,
            scenario: scenario.map(String::from),
            timestamp: 1.25,
            images: (0..2).map(|c| ImageRef { camera_id: c, timestamp: 1.25, rgb_path: Some(format!("frames/{c}.png")) }).collect(),
            objects,
        };
        annotate_scene(&rig, &meshes, &inputs, &AnnotateParams::default()).unwrap()
    }

    pub(crate) fn assert_scene_eq(a: &SceneRecord, b: &SceneRecord) {
        assert_eq!(a.scene_id, b.scene_id);
        assert_eq!(a.scenario, b.scenario);
        assert_eq!(a.timestamp, b.timestamp);
        assert_eq!(a.annotation_time_s, b.annotation_time_s);
        assert_eq!(a.objects.len(), b.objects.len());
        for (x, y) in a.objects.iter().zip(&b.objects) {
            assert_eq!((x.object_id, x.timestamp), (y.object_id, y.timestamp));
            let (dr, dt) = x.pose_mc_obj.distance(&y.pose_mc_obj);
            assert!(dr < 1e-9 && dt < 1e-9);
        }
        assert_eq!(a.views.len(), b.views.len());
        for (v, w) in a.views.iter().zip(&b.views) {
            assert_eq!((v.image_id, v.camera_id, &v.rgb_path, v.timestamp), (w.image_id, w.camera_id, &w.rgb_path, w.timestamp));
            assert_eq!(v.intrinsics, w.intrinsics);
            assert_eq!(v.depth_scale, w.depth_scale);
            let (dr, dt) = v.pose_mc_cam.distance(&w.pose_mc_cam);
            assert!(dr < 1e-9 && dt < 1e-9);
            assert_eq!(v.aggregated_mask, w.aggregated_mask);
            assert_eq!(v.depth, w.depth);
            assert_eq!(v.annotations.len(), w.annotations.len());
            for (p, q) in v.annotations.iter().zip(&w.annotations) {
                assert_eq!((p.object_id, p.bbox, p.visible_pixel_count), (q.object_id, q.bbox, q.visible_pixel_count));
                assert_eq!(p.mask, q.mask);
                let (dr, dt) = p.relative_pose.distance(&q.relative_pose);
                assert!(dr < 1e-9 && dt < 1e-9);
            }
        }
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let layout = DatasetLayout::new(dir.path());
        let rec = sample_scene(4, Some("I"));
        assert!(rec.instance_count() >= 4);
        write_scene(&rec, &layout).unwrap();
        assert_eq!(layout.scene_ids().unwrap(), vec![4]);
        let back = read_scene(&layout, 4).unwrap();
        assert_scene_eq(&rec, &back);
        // Rotations and translations are stored verbatim.
        assert_eq!(back.views[0].annotations[0].relative_pose, rec.views[0].annotations[0].relative_pose);
        assert!(dir.path().join("000004/mask_visib/000001_000000.png").is_file());
    }

    #[test]
    fn identity_pose_and_bbox_written_verbatim() {
        let dir = tempfile::tempdir().unwrap();
        let layout = DatasetLayout::new(dir.path());
        let mut rec = sample_scene(0, None);
        let a = &mut rec.views[0].annotations[0];
        a.relative_pose = Pose::identity();
        a.bbox = BBox { x: 5, y: 10, w: 11, h: 11 };
        write_scene(&rec, &layout).unwrap();
        let gt: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("000000").join(SCENE_GT)).unwrap()).unwrap();
        assert_eq!(gt["0"][0]["cam_R_m2c"], serde_json::json!([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]));
        assert_eq!(gt["0"][0]["cam_t_m2c"], serde_json::json!([0.0, 0.0, 0.0]));
        let info: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("000000").join(SCENE_GT_INFO)).unwrap()).unwrap();
        assert_eq!(info["0"][0]["bbox_obj"], serde_json::json!([5, 10, 11, 11]));
    }

    #[test]
    fn schema_error_names_file_and_key() {
        let dir = tempfile::tempdir().unwrap();
        let layout = DatasetLayout::new(dir.path());
        write_scene(&sample_scene(1, None), &layout).unwrap();
        let path = dir.path().join("000001").join(SCENE_GT);
        let text = fs::read_to_string(&path).unwrap().replacen("\"cam_t_m2c\"", "\"cam_t_bad\"", 1);
        fs::write(&path, text).unwrap();
        match read_scene(&layout, 1) {
            Err(BopError::Schema { file, key, .. }) => {
                assert!(file.ends_with(SCENE_GT));
                assert!(key.starts_with("0[0]"), "{key}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let layout = DatasetLayout::new(dir.path());
        let rec = sample_scene(2, None);
        write_scene(&rec, &layout).unwrap();
        let path = dir.path().join("000002").join(SCENE_CAMERA);
        let text = fs::read_to_string(&path).unwrap().replacen("\"depth_scale\"", "\"extra\": 3, \"depth_scale\"", 1);
        fs::write(&path, text).unwrap();
        assert_scene_eq(&rec, &read_scene(&layout, 2).unwrap());
    }
}
