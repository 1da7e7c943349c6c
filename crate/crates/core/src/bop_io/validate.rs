use std::fmt;
use std::path::Path;

use nalgebra::Matrix3;

use super::{
    depth_name, mask_name, parse_image_id, read_json, BopError, CameraDoc, CamerasMeta, DatasetLayout, GtDoc, GtInfoDoc, CAMERAS, SCENE_CAMERA,
    SCENE_GT, SCENE_GT_INFO, SUBDIRS,
};
use crate::annotate::{bbox_is_tight, BBox, DepthImage};
use crate::geometry::orthonormality_error;
use crate::mesh_render::MaskImage;

pub const ORTHONORMALITY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ViolationKind {
    MissingFile,
    Schema,
    MissingCameraEntry,
    EntryCountMismatch,
    NotOrthonormal,
    DimensionMismatch,
    BBoxOutsideImage,
    BBoxMismatch,
    PixelCountMismatch,
    MaskVisibMismatch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub scene_id: Option<u32>,
    pub file: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}: {}", self.kind, self.file, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub scenes_checked: usize,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, kind: ViolationKind) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }
}

struct SceneCheck<'a> {
    scene_id: u32,
    dir: &'a Path,
    out: &'a mut Vec<Violation>,
}

impl SceneCheck<'_> {
    fn push(&mut self, kind: ViolationKind, file: &Path, message: impl Into<String>) {
        self.out.push(Violation { kind, scene_id: Some(self.scene_id), file: file.display().to_string(), message: message.into() });
    }

    fn load<T: serde::de::DeserializeOwned>(&mut self, name: &str) -> Option<T> {
        let path = self.dir.join(name);
        if !path.is_file() {
            self.push(ViolationKind::MissingFile, &path, "missing");
            return None;
        }
        match read_json(&path) {
            Ok(v) => Some(v),
            Err(e) => {
                self.push(ViolationKind::Schema, &path, e.to_string());
                None
            }
        }
    }

    fn load_mask(&mut self, path: &Path) -> Option<MaskImage> {
        if !path.is_file() {
            self.push(ViolationKind::MissingFile, path, "missing");
            return None;
        }
        match MaskImage::read_png(path) {
            Ok(m) => Some(m),
            Err(e) => {
                self.push(ViolationKind::Schema, path, e.to_string());
                None
            }
        }
    }
}

/// Checks every scene under `layout`: required files, entry matching,
/// rotation orthonormality, image dimensions, and box consistency.
pub fn validate(layout: &DatasetLayout) -> Result<ValidationReport, BopError> {
    let mut report = ValidationReport::default();
    for scene_id in layout.scene_ids()? {
        report.scenes_checked += 1;
        let dir = layout.scene_dir(scene_id);
        validate_scene(&mut SceneCheck { scene_id, dir: &dir, out: &mut report.violations });
    }
    Ok(report)
}

fn validate_scene(c: &mut SceneCheck) {
    for sub in SUBDIRS {
        let p = c.dir.join(sub);
        if !p.is_dir() {
            c.push(ViolationKind::MissingFile, &p, "missing directory");
        }
    }
    let cameras: Option<CameraDoc> = c.load(SCENE_CAMERA);
    let gt: Option<GtDoc> = c.load(SCENE_GT);
    let info: Option<GtInfoDoc> = c.load(SCENE_GT_INFO);
    let meta: Option<CamerasMeta> = c.load(CAMERAS);
    let (Some(cameras), Some(gt), Some(info)) = (cameras, gt, info) else { return };
    let (cam_path, gt_path, info_path) = (c.dir.join(SCENE_CAMERA), c.dir.join(SCENE_GT), c.dir.join(SCENE_GT_INFO));

    if let Some(meta) = &meta {
        for key in cameras.keys().filter(|k| !meta.images.contains_key(*k)) {
            c.push(ViolationKind::MissingCameraEntry, &c.dir.join(CAMERAS), format!("image {key} has no rig camera"));
        }
        if meta.scene_id != c.scene_id {
            c.push(ViolationKind::Schema, &c.dir.join(CAMERAS), format!("scene_id {} in directory {:06}", meta.scene_id, c.scene_id));
        }
    }

    for (key, cam) in &cameras {
        let Ok(image_id) = parse_image_id(&cam_path, key) else {
            c.push(ViolationKind::Schema, &cam_path, format!("image id {key:?} is not an integer"));
            continue;
        };
        let r = Matrix3::from_row_slice(&cam.cam_R_w2c);
        if orthonormality_error(&r) > ORTHONORMALITY_TOL || (r.determinant() - 1.0).abs() > ORTHONORMALITY_TOL {
            c.push(ViolationKind::NotOrthonormal, &cam_path, format!("{key}.cam_R_w2c"));
        }
        let depth_path = c.dir.join("depth").join(depth_name(image_id));
        if !depth_path.is_file() {
            c.push(ViolationKind::MissingFile, &depth_path, "missing");
        } else {
            match DepthImage::read_png(&depth_path) {
                Ok(d) if (d.width, d.height) != (cam.width, cam.height) => {
                    c.push(ViolationKind::DimensionMismatch, &depth_path, format!("{}x{}, camera is {}x{}", d.width, d.height, cam.width, cam.height))
                }
                Ok(_) => {}
                Err(e) => c.push(ViolationKind::Schema, &depth_path, e.to_string()),
            }
        }
    }

    for (key, entries) in &gt {
        let Some(cam) = cameras.get(key) else {
            c.push(ViolationKind::MissingCameraEntry, &gt_path, format!("image {key} has no {SCENE_CAMERA} entry"));
            continue;
        };
        let Ok(image_id) = parse_image_id(&gt_path, key) else {
            c.push(ViolationKind::Schema, &gt_path, format!("image id {key:?} is not an integer"));
            continue;
        };
        let infos = info.get(key).map(Vec::as_slice).unwrap_or_default();
        if infos.len() != entries.len() {
            c.push(ViolationKind::EntryCountMismatch, &info_path, format!("image {key}: {} info entries for {} gt entries", infos.len(), entries.len()));
        }
        for (idx, g) in entries.iter().enumerate() {
            let r = Matrix3::from_row_slice(&g.cam_R_m2c);
            if orthonormality_error(&r) > ORTHONORMALITY_TOL || (r.determinant() - 1.0).abs() > ORTHONORMALITY_TOL {
                c.push(ViolationKind::NotOrthonormal, &gt_path, format!("{key}[{idx}].cam_R_m2c"));
            }
            let name = mask_name(image_id, idx);
            let mask = c.load_mask(&c.dir.join("mask").join(&name));
            let visib = c.load_mask(&c.dir.join("mask_visib").join(&name));
            let Some(mask) = mask else { continue };
            let mask_path = c.dir.join("mask").join(&name);
            if (mask.width(), mask.height()) != (cam.width, cam.height) {
                c.push(ViolationKind::DimensionMismatch, &mask_path, format!("{}x{}, camera is {}x{}", mask.width(), mask.height(), cam.width, cam.height));
            }
            if visib.is_some_and(|v| v != mask) {
                c.push(ViolationKind::MaskVisibMismatch, &mask_path, "mask and mask_visib differ");
            }
            let Some(i) = infos.get(idx) else { continue };
            let [x, y, w, h] = i.bbox_obj;
            let bbox = BBox { x, y, w, h };
            if !bbox.inside_image(cam.width, cam.height) {
                c.push(ViolationKind::BBoxOutsideImage, &info_path, format!("{key}[{idx}].bbox_obj {:?}", i.bbox_obj));
            } else if !bbox_is_tight(&mask, &bbox) {
                c.push(ViolationKind::BBoxMismatch, &info_path, format!("{key}[{idx}].bbox_obj is not the tight box of {name}"));
            }
            if i.px_count_visib != mask.count() {
                c.push(ViolationKind::PixelCountMismatch, &info_path, format!("{key}[{idx}].px_count_visib {} but mask has {}", i.px_count_visib, mask.count()));
            }
        }
    }
}
