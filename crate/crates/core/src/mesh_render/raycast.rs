//! Brute-force silhouette by casting one ray per pixel center. Independent of
//! the rasterizer; used as its oracle.

use crate::geometry::{CameraIntrinsics, Point2, Point3, Pose, Vector3, Z_NEAR};

use super::{MaskImage, TriMesh};

const PARALLEL_EPS: f64 = 1e-12;

/// Moller-Trumbore from the camera center along `dir`. Returns the ray
/// parameter of the hit.
fn intersect(dir: &Vector3, a: &Point3, b: &Point3, c: &Point3) -> Option<f64> {
    let e1 = b - a;
    let e2 = c - a;
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < PARALLEL_EPS {
        return None;
    }
    let inv = 1.0 / det;
    let s = -a.coords;
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    Some(e2.dot(&q) * inv)
}

/// Ray-casts pixels with `x0 <= col < x1`, `y0 <= row < y1`; others stay unset.
///
/// Without lens distortion, a triangle fully in front of the camera only
/// needs rays inside its projected vertex box (grown by one pixel); every
/// other triangle is tested against the whole region.
pub fn raycast_mask_region(mesh: &TriMesh, relative_pose: &Pose, k: &CameraIntrinsics, region: [u32; 4]) -> MaskImage {
    let (x1, y1) = (region[2].min(k.width), region[3].min(k.height));
    let (x0, y0) = (region[0].min(x1), region[1].min(y1));
    let mut mask = MaskImage::new(k.width, k.height);
    let ray = |col: u32, row: u32| {
        let (xn, yn) = k.pixel_to_normalized(&Point2::new(col as f64, row as f64));
        // dir.z = 1, so the ray parameter is the camera-frame depth.
        Vector3::new(xn, yn, 1.0)
    };
    for t in &mesh.triangles {
        let [a, b, c] = t.map(|i| relative_pose.transform_point(&mesh.vertices[i as usize]));
        let mut bx = [x0, y0, x1, y1];
        if !k.has_distortion() && [a, b, c].iter().all(|p| p.z > Z_NEAR) {
            let px = [a, b, c].map(|p| k.normalized_to_pixel(p.x / p.z, p.y / p.z));
            let lo = |f: fn(&Point2) -> f64| px.iter().map(f).fold(f64::INFINITY, f64::min).floor() - 1.0;
            let hi = |f: fn(&Point2) -> f64| px.iter().map(f).fold(f64::NEG_INFINITY, f64::max).ceil() + 2.0;
            let clamp = |v: f64, lo: u32, hi: u32| v.clamp(lo as f64, hi as f64) as u32;
            bx = [clamp(lo(|p| p.x), x0, x1), clamp(lo(|p| p.y), y0, y1), clamp(hi(|p| p.x), x0, x1), clamp(hi(|p| p.y), y0, y1)];
        }
        for row in bx[1]..bx[3] {
            for col in bx[0]..bx[2] {
                if !mask.get(col, row) && intersect(&ray(col, row), &a, &b, &c).is_some_and(|t| t > Z_NEAR) {
                    mask.set(col, row);
                }
            }
        }
    }
    mask
}

/// Full-frame ray cast: O(pixels x triangles).
pub fn raycast_mask(mesh: &TriMesh, relative_pose: &Pose, k: &CameraIntrinsics) -> MaskImage {
    raycast_mask_region(mesh, relative_pose, k, [0, 0, k.width, k.height])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rotation;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(120.0, 120.0, 40.0, 30.0, 81, 61).unwrap()
    }

    #[test]
    fn empty_mesh_gives_empty_mask() {
        assert!(raycast_mask(&TriMesh::empty(0), &Pose::identity(), &k()).is_empty());
    }

    #[test]
    fn front_faces_suffice_for_convex_solids() {
        let cube = TriMesh::cuboid(3, [400.0, 400.0, 400.0]);
        let pose = Pose::new(Rotation::from_axis_angle(&Vector3::new(0.4, 0.7, -0.2)), Vector3::new(30.0, -10.0, 2000.0));
        let all = raycast_mask(&cube, &pose, &k());
        // Front-facing: normal points toward the camera at the centroid.
        let front: Vec<[u32; 3]> = cube
            .triangles
            .iter()
            .copied()
            .filter(|t| {
                let [a, b, c] = t.map(|i| pose.transform_point(&cube.vertices[i as usize]));
                let n = (b - a).cross(&(c - a));
                n.dot(&a.coords) < 0.0
            })
            .collect();
        assert!(front.len() < cube.triangles.len());
        let front_mesh = TriMesh { triangles: front, ..cube };
        assert!(!all.is_empty());
        assert_eq!(raycast_mask(&front_mesh, &pose, &k()), all);
    }

    #[test]
    fn culled_and_brute_force_agree() {
        let cube = TriMesh::cuboid(3, [400.0, 250.0, 300.0]);
        let pose = Pose::new(Rotation::from_axis_angle(&Vector3::new(-0.3, 0.9, 0.4)), Vector3::new(-60.0, 25.0, 1800.0));
        let culled = raycast_mask(&cube, &pose, &k());
        // Distortion disables culling; a negligible k1 keeps the geometry.
        let brute = raycast_mask(&cube, &pose, &k().with_distortion(1e-300, 0.0));
        assert!(!culled.is_empty());
        assert_eq!(culled, brute);
    }

    #[test]
    fn hit_parameter_is_depth() {
        let a = Point3::new(-10.0, -10.0, 500.0);
        let b = Point3::new(10.0, -10.0, 500.0);
        let c = Point3::new(0.0, 10.0, 500.0);
        let t = intersect(&Vector3::new(0.0, 0.0, 1.0), &a, &b, &c).unwrap();
        assert!((t - 500.0).abs() < 1e-9);
        assert!(intersect(&Vector3::new(1.0, 0.0, 1.0), &a, &b, &c).is_none());
    }
}
