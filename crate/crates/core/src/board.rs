//! Tracked checkerboard model.
//!
//! The motion-capture system reports the pose of a virtual frame attached to
//! the board's upper-left corner. Board axes: x runs along the columns, y
//! along the rows (downwards when the printed face is viewed upright), and
//! z = x cross y, which points into the board away from the printed face.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, GeometryError, Point2, Point3, Pose, PoseTq, Vector3};
use crate::pnp::{Correspondences, PnpError};
use crate::CameraId;

/// Minimum geodesic angle between some pair of placements.
pub const MIN_ORIENTATION_DIVERSITY_DEG: f64 = 5.0;
/// Detected corners may lie this fraction of the image size outside the frame.
pub const CORNER_MARGIN: f64 = 0.10;

#[derive(Debug, Error)]
pub enum BoardError {
    #[error("invalid board spec: {0}")]
    InvalidSpec(String),
    #[error("observation {index}: expected {expected} corners, got {got}")]
    CornerCount { index: usize, expected: usize, got: usize },
    #[error("observation {index}: corner {corner} at ({u:.1}, {v:.1}) is outside the image margin")]
    CornerOutOfBounds { index: usize, corner: usize, u: f64, v: f64 },
    #[error("observations mix cameras {expected} and {found}")]
    MixedCameras { expected: CameraId, found: CameraId },
    #[error("insufficient board orientation diversity: largest pairwise angle {max_angle_deg:.2} deg over {count} placement(s), need {MIN_ORIENTATION_DIVERSITY_DEG} deg")]
    InsufficientOrientationDiversity { max_angle_deg: f64, count: usize },
    #[error(transparent)]
    Pnp(#[from] PnpError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
}

/// Checkerboard geometry. All lengths in millimeters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoardSpec {
    pub inner_cols: u32,
    pub inner_rows: u32,
    pub square_size: f64,
    /// First interior intersection relative to the virtual origin.
    pub origin_offset: [f64; 3],
    pub board_width: f64,
    pub board_height: f64,
}

impl Default for BoardSpec {
    /// A 7x10 interior grid of 100 mm squares on an A0 (841 x 1189 mm) sheet.
    /// Square size and grid shape are placeholders; configure them per board.
    fn default() -> Self {
        Self {
            inner_cols: 7,
            inner_rows: 10,
            square_size: 100.0,
            origin_offset: [100.0, 100.0, 0.0],
            board_width: 841.0,
            board_height: 1189.0,
        }
    }
}

impl BoardSpec {
    pub fn validate(&self) -> Result<(), BoardError> {
        let err = |m: String| Err(BoardError::InvalidSpec(m));
        if self.inner_cols < 3 || self.inner_rows < 3 {
            return err(format!("need at least 3x3 interior intersections, got {}x{}", self.inner_cols, self.inner_rows));
        }
        if !(self.square_size > 0.0) || !self.square_size.is_finite() {
            return err(format!("square_size must be positive, got {}", self.square_size));
        }
        let [ox, oy, oz] = self.origin_offset;
        if !(ox >= 0.0 && oy >= 0.0 && oz >= 0.0) || !oz.is_finite() {
            return err(format!("origin_offset must be non-negative, got {:?}", self.origin_offset));
        }
        if ox > self.board_width || oy > self.board_height || oz > 0.0 {
            return err(format!(
                "origin_offset {:?} outside the {}x{} board",
                self.origin_offset, self.board_width, self.board_height
            ));
        }
        let extent_x = ox + (self.inner_cols - 1) as f64 * self.square_size;
        let extent_y = oy + (self.inner_rows - 1) as f64 * self.square_size;
        if extent_x > self.board_width || extent_y > self.board_height {
            return err(format!("grid extends to ({extent_x}, {extent_y}) mm, beyond the board"));
        }
        Ok(())
    }

    pub fn corner_count(&self) -> usize {
        (self.inner_cols * self.inner_rows) as usize
    }

    /// Static offset from the virtual origin to the first intersection.
    pub fn static_offset(&self) -> Pose {
        Pose::from_translation(Vector3::from(self.origin_offset))
    }

    /// Board-frame coordinates of intersection `(row, col)`.
    pub fn local_point(&self, row: u32, col: u32) -> Point3 {
        let [ox, oy, oz] = self.origin_offset;
        Point3::new(ox + col as f64 * self.square_size, oy + row as f64 * self.square_size, oz)
    }
}

/// One tracked placement seen by one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct BoardObservation {
    /// Virtual origin of the board in the motion-capture frame.
    pub board_pose_mc: Pose,
    /// Detected intersections, row-major.
    pub corners_2d: Vec<Point2>,
    pub camera_id: CameraId,
    pub timestamp: f64,
}

/// Pose of the first interior intersection in the motion-capture frame.
pub fn first_intersection_mc(spec: &BoardSpec, board_pose_mc: &Pose) -> Pose {
    board_pose_mc.compose(&spec.static_offset())
}

/// All interior intersections in the motion-capture frame, row-major.
pub fn grid_points_mc(spec: &BoardSpec, board_pose_mc: &Pose) -> Vec<Point3> {
    (0..spec.inner_rows)
        .flat_map(|i| (0..spec.inner_cols).map(move |j| (i, j)))
        .map(|(i, j)| board_pose_mc.transform_point(&spec.local_point(i, j)))
        .collect()
}

/// Largest pairwise geodesic angle (degrees) between placement orientations.
pub fn max_orientation_spread_deg(observations: &[BoardObservation]) -> f64 {
    let mut best: f64 = 0.0;
    for (i, a) in observations.iter().enumerate() {
        for b in &observations[i + 1..] {
            best = best.max(a.board_pose_mc.rotation.angle_to(&b.board_pose_mc.rotation).to_degrees());
        }
    }
    best
}

/// Concatenates grid points and detected corners over all placements, in
/// observation order.
pub fn build_correspondences(
    spec: &BoardSpec,
    observations: &[BoardObservation],
    k: &CameraIntrinsics,
) -> Result<Correspondences, BoardError> {
    spec.validate()?;
    if let Some(first) = observations.first() {
        if let Some(other) = observations.iter().find(|o| o.camera_id != first.camera_id) {
            return Err(BoardError::MixedCameras { expected: first.camera_id, found: other.camera_id });
        }
    }
    let expected = spec.corner_count();
    for (index, obs) in observations.iter().enumerate() {
        if obs.corners_2d.len() != expected {
            return Err(BoardError::CornerCount { index, expected, got: obs.corners_2d.len() });
        }
        if let Some((corner, p)) = obs.corners_2d.iter().enumerate().find(|(_, p)| !k.contains_with_margin(p, CORNER_MARGIN)) {
            return Err(BoardError::CornerOutOfBounds { index, corner, u: p.x, v: p.y });
        }
    }
    let spread = max_orientation_spread_deg(observations);
    if observations.len() < 2 || spread < MIN_ORIENTATION_DIVERSITY_DEG {
        return Err(BoardError::InsufficientOrientationDiversity { max_angle_deg: spread, count: observations.len() });
    }

    let mut points = Vec::with_capacity(expected * observations.len());
    let mut pixels = Vec::with_capacity(expected * observations.len());
    for obs in observations {
        points.extend(grid_points_mc(spec, &obs.board_pose_mc));
        pixels.extend_from_slice(&obs.corners_2d);
    }
    Ok(Correspondences::new(points, pixels, *k)?)
}

#[derive(Debug, Serialize, Deserialize)]
struct ObservationFile {
    camera_id: CameraId,
    observations: Vec<ObservationRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ObservationRecord {
    timestamp: f64,
    board_pose: PoseTq,
    corners: Vec<[f64; 2]>,
}

/// Reads one camera's board observation document.
pub fn read_observations(path: &Path) -> Result<(CameraId, Vec<BoardObservation>), BoardError> {
    let display = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| BoardError::Io { path: display.clone(), source })?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let file: ObservationFile = serde_path_to_error::deserialize(de)
        .map_err(|e| BoardError::Parse { path: display.clone(), message: format!("{}: {}", e.path(), e.inner()) })?;
    let mut out = Vec::with_capacity(file.observations.len());
    for (i, rec) in file.observations.into_iter().enumerate() {
        let pose = Pose::try_from(rec.board_pose).map_err(|e: GeometryError| BoardError::Parse {
            path: display.clone(),
            message: format!("observations[{i}].board_pose: {e}"),
        })?;
        out.push(BoardObservation {
            board_pose_mc: pose,
            corners_2d: rec.corners.iter().map(|c| Point2::new(c[0], c[1])).collect(),
            camera_id: file.camera_id,
            timestamp: rec.timestamp,
        });
    }
    Ok((file.camera_id, out))
}

pub fn write_observations(path: &Path, camera_id: CameraId, observations: &[BoardObservation]) -> Result<(), BoardError> {
    let file = ObservationFile {
        camera_id,
        observations: observations
            .iter()
            .map(|o| ObservationRecord {
                timestamp: o.timestamp,
                board_pose: PoseTq::from(&o.board_pose_mc),
                corners: o.corners_2d.iter().map(|p| [p.x, p.y]).collect(),
            })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&file).expect("observation file serializes");
    fs::write(path, text).map_err(|source| BoardError::Io { path: path.display().to_string(), source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rotation;
    use std::f64::consts::FRAC_PI_2;

    fn small_spec() -> BoardSpec {
        BoardSpec {
            inner_cols: 3,
            inner_rows: 3,
            square_size: 100.0,
            origin_offset: [50.0, 50.0, 0.0],
            board_width: 400.0,
            board_height: 400.0,
        }
    }

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(800.0, 800.0, 647.5, 511.5, 1296, 1024).unwrap()
    }

    fn obs(pose: Pose, spec: &BoardSpec, camera_id: CameraId) -> BoardObservation {
        BoardObservation { board_pose_mc: pose, corners_2d: vec![Point2::new(600.0, 500.0); spec.corner_count()], camera_id, timestamp: 0.0 }
    }

    #[test]
    fn default_spec_is_valid() {
        BoardSpec::default().validate().unwrap();
        let mut bad = small_spec();
        bad.inner_cols = 2;
        assert!(bad.validate().is_err());
        let mut bad = small_spec();
        bad.origin_offset = [-1.0, 0.0, 0.0];
        assert!(bad.validate().is_err());
        let mut bad = small_spec();
        bad.square_size = 0.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn first_intersection_identity_board() {
        let mut spec = BoardSpec::default();
        spec.origin_offset = [70.1, 70.1, 0.0];
        let p = first_intersection_mc(&spec, &Pose::identity());
        assert_eq!(p.translation, Vector3::new(70.1, 70.1, 0.0));
        assert_eq!(p.rotation, Rotation::identity());
    }

    #[test]
    fn first_intersection_rotated_board() {
        let mut spec = BoardSpec::default();
        spec.origin_offset = [120.0, 0.0, 0.0];
        let board = Pose::from_rotation(Rotation::from_axis_angle(&Vector3::new(0.0, 0.0, FRAC_PI_2)));
        let p = first_intersection_mc(&spec, &board);
        assert!((p.translation - Vector3::new(0.0, 120.0, 0.0)).norm() < 1e-9);
        // Definitional: same as the generic compose, bit for bit.
        assert_eq!(p, board.compose(&spec.static_offset()));
    }

    #[test]
    fn planar_lattice() {
        let pts = grid_points_mc(&small_spec(), &Pose::identity());
        let expected: Vec<_> = (0..3).flat_map(|i| (0..3).map(move |j| Point3::new(50.0 + 100.0 * j as f64, 50.0 + 100.0 * i as f64, 0.0))).collect();
        assert_eq!(pts, expected);
    }

    #[test]
    fn grid_is_rigid_and_coplanar() {
        let spec = BoardSpec::default();
        let pose = Pose::new(Rotation::from_axis_angle(&Vector3::new(0.4, -1.1, 0.7)), Vector3::new(1200.0, -300.0, 2500.0));
        let pts = grid_points_mc(&spec, &pose);
        let normal = pose.rotation.rotate(&Vector3::z());
        for p in &pts {
            assert!((p - pts[0]).dot(&normal).abs() < 1e-9);
        }
        for i in 0..spec.inner_rows as usize {
            for j in 0..spec.inner_cols as usize - 1 {
                let a = pts[i * spec.inner_cols as usize + j];
                let b = pts[i * spec.inner_cols as usize + j + 1];
                assert!(((a - b).norm() - spec.square_size).abs() < 1e-9);
            }
        }
        // Element 0 is the first intersection, exactly.
        assert_eq!(pts[0].coords, first_intersection_mc(&spec, &pose).translation);
    }

    #[test]
    fn rigid_invariance() {
        let spec = BoardSpec::default();
        let pose = Pose::new(Rotation::from_axis_angle(&Vector3::new(0.2, 0.1, -0.3)), Vector3::new(10.0, 20.0, 30.0));
        let g = Pose::new(Rotation::from_axis_angle(&Vector3::new(-1.0, 0.5, 2.0)), Vector3::new(-500.0, 40.0, 900.0));
        let moved = grid_points_mc(&spec, &g.compose(&pose));
        for (a, b) in grid_points_mc(&spec, &pose).iter().zip(&moved) {
            assert!((g.transform_point(a) - b).norm() < 1e-9);
        }
    }

    #[test]
    fn concatenation_order() {
        let spec = BoardSpec::default();
        let observations: Vec<_> = (0..8)
            .map(|i| {
                let r = Rotation::from_axis_angle_deg(&Vector3::new(1.0, i as f64, 0.5), 10.0 * i as f64);
                obs(Pose::new(r, Vector3::new(100.0 * i as f64, 0.0, 3000.0)), &spec, 4)
            })
            .collect();
        let c = build_correspondences(&spec, &observations, &k()).unwrap();
        assert_eq!(c.len(), 8 * 70);
        for (i, o) in observations.iter().enumerate() {
            assert_eq!(&c.object_points()[i * 70..(i + 1) * 70], grid_points_mc(&spec, &o.board_pose_mc).as_slice());
        }
    }

    #[test]
    fn diversity_checks() {
        let spec = small_spec();
        let single = vec![obs(Pose::identity(), &spec, 0)];
        assert!(matches!(build_correspondences(&spec, &single, &k()), Err(BoardError::InsufficientOrientationDiversity { .. })));
        let translated = vec![obs(Pose::identity(), &spec, 0), obs(Pose::from_translation(Vector3::new(300.0, 100.0, 0.0)), &spec, 0)];
        assert!(matches!(build_correspondences(&spec, &translated, &k()), Err(BoardError::InsufficientOrientationDiversity { .. })));
    }

    #[test]
    fn mixed_cameras_and_corner_checks() {
        let spec = small_spec();
        let r = Pose::from_rotation(Rotation::from_axis_angle_deg(&Vector3::x(), 30.0));
        let mixed = vec![obs(Pose::identity(), &spec, 0), obs(r, &spec, 1)];
        assert!(matches!(build_correspondences(&spec, &mixed, &k()), Err(BoardError::MixedCameras { expected: 0, found: 1 })));
        let mut short = vec![obs(Pose::identity(), &spec, 0), obs(r, &spec, 0)];
        short[1].corners_2d.pop();
        assert!(matches!(build_correspondences(&spec, &short, &k()), Err(BoardError::CornerCount { index: 1, .. })));
        let mut far = vec![obs(Pose::identity(), &spec, 0), obs(r, &spec, 0)];
        far[0].corners_2d[4] = Point2::new(-200.0, 10.0);
        assert!(matches!(build_correspondences(&spec, &far, &k()), Err(BoardError::CornerOutOfBounds { index: 0, corner: 4, .. })));
    }

    #[test]
    fn observation_file_round_trip() {
        let spec = small_spec();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cam3.json");
        let mut o = obs(Pose::new(Rotation::from_axis_angle(&Vector3::new(0.1, 0.2, 0.3)), Vector3::new(1.0, 2.0, 3.0)), &spec, 3);
        o.timestamp = 12.5;
        write_observations(&path, 3, std::slice::from_ref(&o)).unwrap();
        let (cam, back) = read_observations(&path).unwrap();
        assert_eq!(cam, 3);
        assert_eq!(back[0].corners_2d, o.corners_2d);
        let (dr, dt) = back[0].board_pose_mc.distance(&o.board_pose_mc);
        assert!(dr < 1e-12 && dt < 1e-12);

        std::fs::write(&path, r#"{"camera_id": 1, "observations": [{"timestamp": 0, "board_pose": {"t": [0,0], "q": [0,0,0,1]}, "corners": []}]}"#).unwrap();
        let err = read_observations(&path).unwrap_err().to_string();
        assert!(err.contains("observations[0].board_pose.t"), "{err}");
    }
}
