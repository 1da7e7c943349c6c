//! Triangle meshes, binary silhouettes, and their rasterization.
//!
//! Pixel `(col, row)` has its center at continuous image coordinates
//! `(col, row)`, matching the pinhole model's principal point convention.
//! A pixel is covered when its center lies inside a projected triangle whose
//! camera-frame depth exceeds [`Z_NEAR`](crate::geometry::Z_NEAR).

mod io;
mod mask;
mod raster;
mod raycast;

use thiserror::Error;

use crate::geometry::{Point3, Vector3};
use crate::ObjectId;

pub use io::{load_mesh, write_obj, write_ply, LoadedMesh, PlyEncoding};
pub use mask::MaskImage;
pub use raster::{projected_polygons, rasterize_mask, rasterize_mask_into};
pub use raycast::{raycast_mask, raycast_mask_region};

pub(crate) use mask::{read_png_raw, write_png_gray};

/// Triangles with smaller area are dropped at load time (mm^2).
pub const MIN_TRIANGLE_AREA: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("{path}: parse error: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: unsupported mesh format: {message}")]
    UnsupportedFormat { path: String, message: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Image { path: String, message: String },
    #[error("mask dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("triangle {triangle} references vertex {index}, only {count} vertices")]
    IndexOutOfRange { triangle: usize, index: u32, count: usize },
}

/// Object model in its own frame, millimeters.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub object_id: ObjectId,
    pub vertices: Vec<Point3>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriMesh {
    /// Validates indices and drops degenerate triangles. Returns the mesh and
    /// the number of triangles dropped.
    pub fn new(object_id: ObjectId, vertices: Vec<Point3>, triangles: Vec<[u32; 3]>) -> Result<(Self, usize), MeshError> {
        if let Some(bad) = vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(MeshError::Parse { path: String::new(), message: format!("vertex {bad} is not finite") });
        }
        for (t, tri) in triangles.iter().enumerate() {
            if let Some(&index) = tri.iter().find(|&&i| i as usize >= vertices.len()) {
                return Err(MeshError::IndexOutOfRange { triangle: t, index, count: vertices.len() });
            }
        }
        let before = triangles.len();
        let triangles: Vec<_> = triangles
            .into_iter()
            .filter(|t| {
                let [a, b, c] = t.map(|i| vertices[i as usize]);
                0.5 * (b - a).cross(&(c - a)).norm() >= MIN_TRIANGLE_AREA
            })
            .collect();
        let dropped = before - triangles.len();
        Ok((Self { object_id, vertices, triangles }, dropped))
    }

    pub fn empty(object_id: ObjectId) -> Self {
        Self { object_id, vertices: Vec::new(), triangles: Vec::new() }
    }

    /// Axis-aligned box centered on the origin.
    pub fn cuboid(object_id: ObjectId, size: [f64; 3]) -> Self {
        let mut m = Self::empty(object_id);
        m.add_box(Point3::origin(), size);
        m
    }

    /// Appends an axis-aligned box (12 triangles, outward winding).
    pub fn add_box(&mut self, center: Point3, size: [f64; 3]) {
        let h = Vector3::new(size[0], size[1], size[2]) * 0.5;
        let base = self.vertices.len() as u32;
        for i in 0..8u32 {
            let s = Vector3::new(
                if i & 1 == 0 { -1.0 } else { 1.0 },
                if i & 2 == 0 { -1.0 } else { 1.0 },
                if i & 4 == 0 { -1.0 } else { 1.0 },
            );
            self.vertices.push(center + s.component_mul(&h));
        }
        const FACES: [[u32; 4]; 6] = [[0, 2, 3, 1], [4, 5, 7, 6], [0, 1, 5, 4], [2, 6, 7, 3], [0, 4, 6, 2], [1, 3, 7, 5]];
        for f in FACES {
            self.triangles.push([base + f[0], base + f[1], base + f[2]]);
            self.triangles.push([base + f[0], base + f[2], base + f[3]]);
        }
    }

    /// Concatenation of two meshes, keeping `self.object_id`.
    pub fn merged(&self, other: &TriMesh) -> TriMesh {
        let offset = self.vertices.len() as u32;
        let mut out = self.clone();
        out.vertices.extend_from_slice(&other.vertices);
        out.triangles.extend(other.triangles.iter().map(|t| t.map(|i| i + offset)));
        out
    }
}

/// Pixelwise union of equally sized masks. An empty list has no size and
/// is rejected.
pub fn aggregate_masks(masks: &[MaskImage]) -> Result<MaskImage, MeshError> {
    let first = masks.first().ok_or(MeshError::DimensionMismatch(0, 0, 0, 0))?;
    let mut out = first.clone();
    for m in &masks[1..] {
        if !m.same_size(&out) {
            return Err(MeshError::DimensionMismatch(out.width(), out.height(), m.width(), m.height()));
        }
        out.union_with(m);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_mask() -> impl Strategy<Value = MaskImage> {
        prop::collection::vec(any::<bool>(), 12 * 9).prop_map(|bits| MaskImage::from_fn(12, 9, |x, y| bits[(y * 12 + x) as usize]))
    }

    #[test]
    fn cuboid_topology() {
        let m = TriMesh::cuboid(1, [2.0, 4.0, 6.0]);
        assert_eq!(m.vertices.len(), 8);
        assert_eq!(m.triangles.len(), 12);
        // Outward winding: signed volume positive.
        let vol: f64 = m
            .triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| m.vertices[i as usize].coords);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum();
        assert!((vol - 48.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_and_out_of_range() {
        let v = vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0), Point3::new(2.0, 0.0, 0.0), Point3::new(0.0, 1.0, 0.0)];
        let (m, dropped) = TriMesh::new(0, v.clone(), vec![[0, 1, 2], [0, 1, 3]]).unwrap();
        assert_eq!(dropped, 1);
        assert_eq!(m.triangles, vec![[0, 1, 3]]);
        assert!(matches!(TriMesh::new(0, v, vec![[0, 1, 9]]), Err(MeshError::IndexOutOfRange { index: 9, .. })));
    }

    #[test]
    fn aggregate_errors() {
        assert!(aggregate_masks(&[]).is_err());
        assert!(matches!(aggregate_masks(&[MaskImage::new(3, 3), MaskImage::new(4, 3)]), Err(MeshError::DimensionMismatch(3, 3, 4, 3))));
    }

    proptest! {
        #[test]
        fn union_laws(a in arb_mask(), b in arb_mask(), c in arb_mask()) {
            let empty = MaskImage::new(12, 9);
            prop_assert_eq!(aggregate_masks(&[a.clone(), empty]).unwrap(), a.clone());
            prop_assert_eq!(aggregate_masks(&[a.clone(), b.clone()]).unwrap(), aggregate_masks(&[b.clone(), a.clone()]).unwrap());
            let ab_c = aggregate_masks(&[aggregate_masks(&[a.clone(), b.clone()]).unwrap(), c.clone()]).unwrap();
            let a_bc = aggregate_masks(&[a.clone(), aggregate_masks(&[b.clone(), c.clone()]).unwrap()]).unwrap();
            prop_assert_eq!(ab_c, a_bc);
            prop_assert_eq!(aggregate_masks(&[a.clone(), a.clone()]).unwrap(), a.clone());
            prop_assert!(aggregate_masks(&[a.clone(), b.clone()]).unwrap().count() <= a.count() + b.count());
        }
    }
}
