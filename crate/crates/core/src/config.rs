//! Pipeline configuration file (TOML). Relative paths resolve against the
//! directory containing the file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotate::{AnnotateParams, DEFAULT_DEPTH_SCALE, DEFAULT_FIXED_DISTANCE, DEFAULT_MIN_VISIBLE_PIXELS, DEFAULT_SYNC_WINDOW_S};
use crate::board::BoardSpec;
use crate::calib::{TuningGrid, DEFAULT_IOU_THRESHOLD};
use crate::geometry::CameraIntrinsics;
use crate::synth::{BoardSessionSpec, RigSpec, ScenarioSpec};
use crate::{CameraId, ObjectId};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Read { path: String, message: String },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Directory of per-camera board observation JSON files.
    pub board_observations: PathBuf,
    pub extrinsics: PathBuf,
    pub tuning_samples: PathBuf,
    pub mocap_log: PathBuf,
    pub frame_index: PathBuf,
    pub output: PathBuf,
    pub overlay: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            board_observations: "board".into(),
            extrinsics: "extrinsics.json".into(),
            tuning_samples: "tuning/tuning_samples.json".into(),
            mocap_log: "mocap.csv".into(),
            frame_index: "frames.csv".into(),
            output: "dataset".into(),
            overlay: "overlay".into(),
        }
    }
}

// No deny_unknown_fields here: serde does not support it with flatten.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TuningConfig {
    #[serde(flatten)]
    pub grid: TuningGrid,
    pub iou_threshold: f64,
}

impl Default for TuningConfig {
    fn default() -> Self {
        Self { grid: TuningGrid::default(), iou_threshold: DEFAULT_IOU_THRESHOLD }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotateConfig {
    pub min_visible_pixels: u64,
    pub fixed_distance: f64,
    pub depth_scale: f64,
    pub sync_window_s: f64,
}

impl Default for AnnotateConfig {
    fn default() -> Self {
        Self {
            min_visible_pixels: DEFAULT_MIN_VISIBLE_PIXELS,
            fixed_distance: DEFAULT_FIXED_DISTANCE,
            depth_scale: DEFAULT_DEPTH_SCALE,
            sync_window_s: DEFAULT_SYNC_WINDOW_S,
        }
    }
}

impl AnnotateConfig {
    pub fn params(&self) -> AnnotateParams {
        AnnotateParams { min_visible_pixels: self.min_visible_pixels, fixed_distance: self.fixed_distance, depth_scale: self.depth_scale }
    }
}

/// Inputs to the `synth` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub rig: RigSpec,
    pub session: BoardSessionSpec,
    pub scenario: ScenarioSpec,
    /// Scenes that get hand-made tuning masks.
    pub tuning_scenes: Vec<u32>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            rig: RigSpec::default(),
            session: BoardSessionSpec { corner_noise_px: 0.3, ..BoardSessionSpec::default() },
            scenario: ScenarioSpec::default(),
            tuning_scenes: vec![0, 50],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    pub seed: u64,
    pub paths: Paths,
    pub board: BoardSpec,
    /// Keyed by camera id.
    pub intrinsics: BTreeMap<String, CameraIntrinsics>,
    /// Mesh file per object id.
    pub meshes: BTreeMap<String, PathBuf>,
    pub tuning: TuningConfig,
    pub annotate: AnnotateConfig,
    pub synth: SynthConfig,
}

fn parse_ids<V: Clone>(map: &BTreeMap<String, V>, what: &str) -> Result<BTreeMap<u32, V>, String> {
    map.iter()
        .map(|(k, v)| k.parse::<u32>().map(|id| (id, v.clone())).map_err(|_| format!("{what} key {k:?} is not an integer id")))
        .collect()
}

impl PipelineConfig {
    /// Reads, resolves and validates a config file.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let display = path.display().to_string();
        let text = fs::read_to_string(path).map_err(|e| ConfigError::Read { path: display.clone(), message: e.to_string() })?;
        let mut cfg: PipelineConfig = toml::from_str(&text).map_err(|e| ConfigError::Read { path: display.clone(), message: e.to_string() })?;
        cfg.resolve(path.parent().unwrap_or(Path::new(".")));
        cfg.validate().map_err(|message| ConfigError::Invalid { path: display, message })?;
        Ok(cfg)
    }

    /// Makes every relative path absolute with respect to `base`.
    pub fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let Paths { board_observations, extrinsics, tuning_samples, mocap_log, frame_index, output, overlay } = &mut self.paths;
        for p in [board_observations, extrinsics, tuning_samples, mocap_log, frame_index, output, overlay] {
            fix(p);
        }
        self.meshes.values_mut().for_each(fix);
    }

    pub fn validate(&self) -> Result<(), String> {
        self.board.validate().map_err(|e| e.to_string())?;
        for (id, k) in self.camera_intrinsics()? {
            k.validate().map_err(|e| format!("intrinsics.{id}: {e}"))?;
        }
        self.mesh_paths()?;
        self.tuning.grid.validate().map_err(|e| format!("tuning: {e}"))?;
        if !(0.0..=1.0).contains(&self.tuning.iou_threshold) {
            return Err(format!("tuning.iou_threshold must be in [0, 1], got {}", self.tuning.iou_threshold));
        }
        let a = &self.annotate;
        if !(a.fixed_distance > 0.0 && a.depth_scale > 0.0 && a.sync_window_s >= 0.0) {
            return Err("annotate: fixed_distance and depth_scale must be positive, sync_window_s non-negative".into());
        }
        crate::annotate::mock_depth(&crate::mesh_render::MaskImage::new(1, 1), a.fixed_distance, a.depth_scale).map_err(|e| format!("annotate: {e}"))?;
        Ok(())
    }

    pub fn camera_intrinsics(&self) -> Result<BTreeMap<CameraId, CameraIntrinsics>, String> {
        parse_ids(&self.intrinsics, "intrinsics")
    }

    pub fn mesh_paths(&self) -> Result<BTreeMap<ObjectId, PathBuf>, String> {
        parse_ids(&self.meshes, "meshes")
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
