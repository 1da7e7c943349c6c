use crate::geometry::{CameraIntrinsics, Point2, Point3, Pose, Z_NEAR};

use super::{MaskImage, TriMesh};

/// Clips a camera-frame polygon against the plane `z = Z_NEAR`, keeping the
/// part in front of it (Sutherland-Hodgman).
fn clip_near(poly: &[Point3]) -> Vec<Point3> {
    let mut out = Vec::with_capacity(poly.len() + 1);
    for (i, cur) in poly.iter().enumerate() {
        let prev = &poly[(i + poly.len() - 1) % poly.len()];
        let (cur_in, prev_in) = (cur.z > Z_NEAR, prev.z > Z_NEAR);
        if cur_in != prev_in {
            let s = (Z_NEAR - prev.z) / (cur.z - prev.z);
            let mut p = prev + (cur - prev) * s;
            p.z = Z_NEAR;
            out.push(p);
        }
        if cur_in {
            out.push(*cur);
        }
    }
    out
}

/// Each triangle clipped to the near plane and projected to pixels. Empty
/// results (fully behind the camera) are omitted.
pub fn projected_polygons(mesh: &TriMesh, relative_pose: &Pose, k: &CameraIntrinsics) -> Vec<Vec<Point2>> {
    let cam: Vec<Point3> = mesh.vertices.iter().map(|v| relative_pose.transform_point(v)).collect();
    mesh.triangles
        .iter()
        .filter_map(|t| {
            let tri = t.map(|i| cam[i as usize]);
            let poly = if tri.iter().all(|p| p.z > Z_NEAR) { tri.to_vec() } else { clip_near(&tri) };
            (poly.len() >= 3).then(|| poly.iter().map(|p| k.normalized_to_pixel(p.x / p.z, p.y / p.z)).collect())
        })
        .collect()
}

#[inline]
fn cross(ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    ax * by - ay * bx
}

/// Top-left rule for a positively oriented triangle in y-down pixel space.
#[inline]
fn owns_edge(dx: f64, dy: f64) -> bool {
    (dy == 0.0 && dx > 0.0) || dy < 0.0
}

/// Marks every pixel whose center lies inside the triangle `a b c`.
fn fill_triangle(mask: &mut MaskImage, a: Point2, b: Point2, c: Point2) {
    let area = cross(b.x - a.x, b.y - a.y, c.x - a.x, c.y - a.y);
    if !(area.abs() > 0.0) || !area.is_finite() {
        return;
    }
    let (b, c) = if area < 0.0 { (c, b) } else { (b, c) };

    let (w, h) = (mask.width() as f64, mask.height() as f64);
    let min_x = a.x.min(b.x).min(c.x).ceil().max(0.0);
    let max_x = a.x.max(b.x).max(c.x).floor().min(w - 1.0);
    let min_y = a.y.min(b.y).min(c.y).ceil().max(0.0);
    let max_y = a.y.max(b.y).max(c.y).floor().min(h - 1.0);
    if min_x > max_x || min_y > max_y {
        return;
    }

    let edges = [(a, b), (b, c), (c, a)];
    let owned = edges.map(|(p, q)| owns_edge(q.x - p.x, q.y - p.y));
    let (x0, x1) = (min_x as u32, max_x as u32);
    for y in (min_y as u32)..=(max_y as u32) {
        let py = y as f64;
        let inside = |x: u32| {
            let px = x as f64;
            edges.iter().zip(&owned).all(|((p, q), &own)| {
                let e = cross(q.x - p.x, q.y - p.y, px - p.x, py - p.y);
                e > 0.0 || (e == 0.0 && own)
            })
        };
        // Coverage along a row is one interval. Estimate it from the edge
        // equations, then settle both ends with the exact test.
        let (mut lo, mut hi) = (min_x, max_x);
        for (p, q) in &edges {
            let (dx, dy) = (q.x - p.x, q.y - p.y);
            if dy != 0.0 {
                let x = p.x + dx * (py - p.y) / dy;
                if dy < 0.0 {
                    lo = lo.max(x);
                } else {
                    hi = hi.min(x);
                }
            }
        }
        if lo > hi + 2.0 {
            continue;
        }
        let mut first = (lo.floor().max(min_x) as u32).min(x1);
        while first > x0 && inside(first - 1) {
            first -= 1;
        }
        if !inside(first) {
            let Some(f) = (first + 1..=x1).find(|&x| inside(x)) else { continue };
            first = f;
        }
        let mut last = (hi.ceil().min(max_x) as u32).clamp(first, x1);
        while last < x1 && inside(last + 1) {
            last += 1;
        }
        while last > first && !inside(last) {
            last -= 1;
        }
        mask.set_span(y, first, last + 1);
    }
}

/// Rasterizes `mesh` into an existing mask (union).
pub fn rasterize_mask_into(mask: &mut MaskImage, mesh: &TriMesh, relative_pose: &Pose, k: &CameraIntrinsics) {
    for poly in projected_polygons(mesh, relative_pose, k) {
        for i in 1..poly.len() - 1 {
            fill_triangle(mask, poly[0], poly[i], poly[i + 1]);
        }
    }
}

/// Binary silhouette of `mesh` at the object-to-camera pose `relative_pose`.
/// No back-face culling; an object outside the frame yields an empty mask.
pub fn rasterize_mask(mesh: &TriMesh, relative_pose: &Pose, k: &CameraIntrinsics) -> MaskImage {
    let mut mask = MaskImage::new(k.width, k.height);
    rasterize_mask_into(&mut mask, mesh, relative_pose, k);
    mask
}
