//! Camera pose from 2D-3D correspondences.
//!
//! A linear DLT estimate seeds a Levenberg-Marquardt refinement of the
//! reprojection error. The returned pose maps world (motion-capture) points
//! into the camera frame.

use nalgebra as na;
use thiserror::Error;

use crate::geometry::{skew, CameraIntrinsics, Point2, Point3, Pose, Rotation, Vector3, Z_NEAR};

/// Minimum number of correspondences for the linear initialization.
pub const MIN_POINTS: usize = 6;
/// Smallest-to-largest singular value ratio of the centered 3D points below
/// which the configuration counts as planar.
pub const COPLANARITY_RATIO: f64 = 1e-3;
pub const DEFAULT_MAX_ITER: usize = 50;
pub const DEFAULT_TOL_PX: f64 = 1e-8;

const DUPLICATE_TOL_MM: f64 = 1e-6;
const LAMBDA_INIT: f64 = 1e-3;
const LAMBDA_MAX: f64 = 1e16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PnpError {
    #[error("need at least {MIN_POINTS} correspondences, got {0}")]
    TooFewPoints(usize),
    #[error("3D point and image point counts differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("3D points {0} and {1} coincide")]
    DuplicatePoint(usize, usize),
    #[error("non-finite coordinate at correspondence {0}")]
    NonFiniteInput(usize),
    #[error("degenerate point configuration (singular value ratio {ratio:.2e}); board placements lack orientation diversity")]
    DegenerateConfiguration { ratio: f64 },
    #[error("reprojection residual is not finite; a point lies behind the camera")]
    NonFiniteResidual,
}

/// Index-aligned world points and their pixel observations for one camera.
#[derive(Debug, Clone)]
pub struct Correspondences {
    object_points: Vec<Point3>,
    image_points: Vec<Point2>,
    pub intrinsics: CameraIntrinsics,
}

impl Correspondences {
    pub fn new(object_points: Vec<Point3>, image_points: Vec<Point2>, intrinsics: CameraIntrinsics) -> Result<Self, PnpError> {
        if object_points.len() != image_points.len() {
            return Err(PnpError::LengthMismatch(object_points.len(), image_points.len()));
        }
        if object_points.len() < MIN_POINTS {
            return Err(PnpError::TooFewPoints(object_points.len()));
        }
        for (i, (x, u)) in object_points.iter().zip(&image_points).enumerate() {
            if !(x.iter().all(|v| v.is_finite()) && u.iter().all(|v| v.is_finite())) {
                return Err(PnpError::NonFiniteInput(i));
            }
        }
        if let Some((a, b)) = find_duplicate(&object_points) {
            return Err(PnpError::DuplicatePoint(a, b));
        }
        Ok(Self { object_points, image_points, intrinsics })
    }

    pub fn len(&self) -> usize {
        self.object_points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.object_points.is_empty()
    }

    pub fn object_points(&self) -> &[Point3] {
        &self.object_points
    }

    pub fn image_points(&self) -> &[Point2] {
        &self.image_points
    }

    /// RMS reprojection error in pixels, `None` if any point is behind the camera.
    pub fn rms_error(&self, pose: &Pose) -> Option<f64> {
        sum_squared_residuals(self, pose).map(|s| (s / self.len() as f64).sqrt())
    }
}

/// Sweep over points sorted by x; only neighbours within the tolerance in x
/// can coincide.
fn find_duplicate(points: &[Point3]) -> Option<(usize, usize)> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a].x.total_cmp(&points[b].x));
    for (k, &i) in order.iter().enumerate() {
        for &j in &order[k + 1..] {
            if points[j].x - points[i].x > DUPLICATE_TOL_MM {
                break;
            }
            if (points[j] - points[i]).amax() <= DUPLICATE_TOL_MM {
                return Some((i.min(j), i.max(j)));
            }
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PnPSolution {
    /// World-to-camera transform.
    pub pose: Pose,
    pub rms_reprojection_error: f64,
    pub iterations: usize,
}

/// Ratio of the smallest to the largest singular value of the centered points.
pub fn planarity_ratio(points: &[Point3]) -> f64 {
    let n = points.len() as f64;
    let centroid = points.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords) / n;
    let scatter = points.iter().fold(na::Matrix3::zeros(), |acc, p| {
        let d = p.coords - centroid;
        acc + d * d.transpose()
    });
    let eig = scatter.symmetric_eigenvalues();
    let max = eig.max();
    if !(max > 0.0) {
        return 0.0;
    }
    (eig.min().max(0.0) / max).sqrt()
}

/// Linear Direct Linear Transform estimate of the world-to-camera pose.
pub fn solve_dlt(c: &Correspondences) -> Result<Pose, PnpError> {
    let n = c.len();
    if n < MIN_POINTS {
        return Err(PnpError::TooFewPoints(n));
    }
    let ratio = planarity_ratio(&c.object_points);
    if ratio < COPLANARITY_RATIO {
        return Err(PnpError::DegenerateConfiguration { ratio });
    }

    // Isotropic normalization of the 3D points; image points are moved to
    // the normalized image plane through K^-1 (and undistorted).
    let centroid = c.object_points.iter().fold(Vector3::zeros(), |acc, p| acc + p.coords) / n as f64;
    let mean_dist = c.object_points.iter().map(|p| (p.coords - centroid).norm()).sum::<f64>() / n as f64;
    let scale = mean_dist / 3f64.sqrt();

    let mut ata = na::SMatrix::<f64, 12, 12>::zeros();
    for (x, u) in c.object_points.iter().zip(&c.image_points) {
        let p = (x.coords - centroid) / scale;
        let h = na::Vector4::new(p.x, p.y, p.z, 1.0);
        let (xn, yn) = c.intrinsics.pixel_to_normalized(u);
        let mut r1 = na::SVector::<f64, 12>::zeros();
        let mut r2 = na::SVector::<f64, 12>::zeros();
        for k in 0..4 {
            r1[k] = h[k];
            r1[8 + k] = -xn * h[k];
            r2[4 + k] = h[k];
            r2[8 + k] = -yn * h[k];
        }
        ata += r1 * r1.transpose() + r2 * r2.transpose();
    }
    let eig = na::SymmetricEigen::new(ata);
    let imin = eig.eigenvalues.imin();
    let v = eig.eigenvectors.column(imin);
    let p_norm = na::Matrix3x4::from_row_slice(v.as_slice());

    // Undo the normalization: P = P' T, T = [[I/s, -c/s], [0, 1]].
    let mut t_mat = na::Matrix4::<f64>::identity();
    t_mat.fixed_view_mut::<3, 3>(0, 0).scale_mut(1.0 / scale);
    t_mat.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-centroid / scale));
    let mut p = p_norm * t_mat;

    let depth = (p.row(2) * na::Vector4::new(centroid.x, centroid.y, centroid.z, 1.0))[0];
    if depth < 0.0 {
        p = -p;
    }

    let m = p.fixed_view::<3, 3>(0, 0).into_owned();
    let svd = na::SVD::new(m, true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(PnpError::DegenerateConfiguration { ratio }),
    };
    let mut d = na::Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * v_t;
    let sigma = svd.singular_values.sum() / 3.0;
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(PnpError::DegenerateConfiguration { ratio });
    }
    let t = p.fixed_view::<3, 1>(0, 3).into_owned() / sigma;
    Ok(Pose::new(Rotation::from_matrix_unchecked(r), t))
}

fn sum_squared_residuals(c: &Correspondences, pose: &Pose) -> Option<f64> {
    let mut sum = 0.0;
    for (x, u) in c.object_points.iter().zip(&c.image_points) {
        let pc = pose.transform_point(x);
        if !(pc.z > Z_NEAR) {
            return None;
        }
        let proj = c.intrinsics.normalized_to_pixel(pc.x / pc.z, pc.y / pc.z);
        sum += (proj - u).norm_squared();
    }
    sum.is_finite().then_some(sum)
}

/// Accumulates `J^T J` and `J^T r` for the perturbation
/// `R <- exp(w) R`, `t <- t + v`, parameters ordered `(w, v)`.
fn normal_equations(c: &Correspondences, pose: &Pose) -> (na::Matrix6<f64>, na::Vector6<f64>) {
    let k = &c.intrinsics;
    let mut h = na::Matrix6::zeros();
    let mut g = na::Vector6::zeros();
    for (x, u) in c.object_points.iter().zip(&c.image_points) {
        let rx = pose.rotation.rotate(&x.coords);
        let pc = rx + pose.translation;
        let (iz, xn, yn) = (1.0 / pc.z, pc.x / pc.z, pc.y / pc.z);
        let r2 = xn * xn + yn * yn;
        let f = k.radial_factor(r2);
        let df = k.k1 + 2.0 * k.k2 * r2; // d f / d r2
        let proj = Point2::new(k.fx * xn * f + k.cx, k.fy * yn * f + k.cy);
        let res = proj - u;

        // d(pixel)/d(xn, yn)
        let j_n = na::Matrix2::new(
            k.fx * (f + 2.0 * xn * xn * df),
            k.fx * 2.0 * xn * yn * df,
            k.fy * 2.0 * xn * yn * df,
            k.fy * (f + 2.0 * yn * yn * df),
        );
        // d(xn, yn)/d(camera point)
        let j_p = na::Matrix2x3::new(iz, 0.0, -xn * iz, 0.0, iz, -yn * iz);
        let j_pix = j_n * j_p;
        let mut j = na::Matrix2x6::zeros();
        j.fixed_view_mut::<2, 3>(0, 0).copy_from(&(j_pix * -skew(&rx)));
        j.fixed_view_mut::<2, 3>(0, 3).copy_from(&j_pix);
        h += j.transpose() * j;
        g += j.transpose() * res;
    }
    (h, g)
}

fn apply_update(pose: &Pose, delta: &na::Vector6<f64>) -> Pose {
    let w = Vector3::new(delta[0], delta[1], delta[2]);
    let v = Vector3::new(delta[3], delta[4], delta[5]);
    let rotation = Pose::from_rotation(Rotation::from_axis_angle(&w)).compose(&Pose::from_rotation(pose.rotation)).rotation;
    Pose::new(rotation, pose.translation + v)
}

/// Damped Gauss-Newton refinement of the reprojection error starting at
/// `init`. Steps that increase the cost are rejected, so the returned RMS
/// never exceeds the initial one.
pub fn refine_gauss_newton(c: &Correspondences, init: &Pose, max_iter: usize, tol: f64) -> Result<PnPSolution, PnpError> {
    let n = c.len() as f64;
    let mut pose = *init;
    let mut cost = sum_squared_residuals(c, &pose).ok_or(PnpError::NonFiniteResidual)?;
    let mut lambda = LAMBDA_INIT;
    let mut iterations = 0;

    'outer: for _ in 0..max_iter.max(1) {
        iterations += 1;
        let (h, g) = normal_equations(c, &pose);
        let diag_floor = 1e-12 * h.diagonal().max().max(1e-300);
        loop {
            let mut damped = h;
            for i in 0..6 {
                damped[(i, i)] += lambda * (h[(i, i)] + diag_floor);
            }
            let step = damped.cholesky().map(|ch| ch.solve(&-g));
            if let Some(delta) = step.filter(|d| d.iter().all(|v| v.is_finite())) {
                let candidate = apply_update(&pose, &delta);
                if let Some(new_cost) = sum_squared_residuals(c, &candidate) {
                    if new_cost <= cost {
                        let change = (cost / n).sqrt() - (new_cost / n).sqrt();
                        pose = candidate;
                        cost = new_cost;
                        lambda = (lambda / 10.0).max(1e-12);
                        if change < tol {
                            break 'outer;
                        }
                        continue 'outer;
                    }
                }
            }
            lambda *= 10.0;
            if lambda > LAMBDA_MAX {
                // No descent direction left: at a minimum up to precision.
                break 'outer;
            }
        }
    }

    Ok(PnPSolution { pose, rms_reprojection_error: (cost / n).sqrt(), iterations })
}

/// DLT initialization followed by refinement with default settings.
pub fn solve_pnp(c: &Correspondences) -> Result<PnPSolution, PnpError> {
    let init = solve_dlt(c)?;
    refine_gauss_newton(c, &init, DEFAULT_MAX_ITER, DEFAULT_TOL_PX)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn intrinsics() -> CameraIntrinsics {
        CameraIntrinsics::new(800.0, 820.0, 647.5, 511.5, 1296, 1024).unwrap()
    }

    /// Forward model: random points in a box in front of the camera, then
    /// mapped back into the world frame through the inverse of `pose`.
    fn synthetic(pose: &Pose, n: usize, rng: &mut ChaCha8Rng) -> Correspondences {
        let k = intrinsics();
        let inv = pose.inverse();
        let mut xs = Vec::new();
        let mut us = Vec::new();
        while xs.len() < n {
            let pc = Point3::new(rng.random_range(-1500.0..1500.0), rng.random_range(-1200.0..1200.0), rng.random_range(4000.0..8000.0));
            let px = k.normalized_to_pixel(pc.x / pc.z, pc.y / pc.z);
            xs.push(inv.transform_point(&pc));
            us.push(px);
        }
        Correspondences::new(xs, us, k).unwrap()
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
        let w = Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let t = Vector3::new(rng.random_range(-5000.0..5000.0), rng.random_range(-5000.0..5000.0), rng.random_range(-5000.0..5000.0));
        Pose::new(Rotation::from_axis_angle(&w), t)
    }

    #[test]
    fn too_few_points() {
        let k = intrinsics();
        let xs: Vec<_> = (0..5).map(|i| Point3::new(i as f64, (i * i) as f64, 1.0 + i as f64)).collect();
        let us = vec![Point2::new(0.0, 0.0); 5];
        assert_eq!(Correspondences::new(xs, us, k).unwrap_err(), PnpError::TooFewPoints(5));
    }

    #[test]
    fn duplicates_rejected() {
        let k = intrinsics();
        let mut xs: Vec<_> = (0..8).map(|i| Point3::new(i as f64 * 10.0, (i * i) as f64, 1.0 + i as f64)).collect();
        xs[6] = xs[2] + Vector3::new(1e-7, 0.0, 0.0);
        let us = vec![Point2::new(0.0, 0.0); 8];
        assert_eq!(Correspondences::new(xs, us, k).unwrap_err(), PnpError::DuplicatePoint(2, 6));
    }

    #[test]
    fn coplanar_is_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pose = Pose::new(Rotation::identity(), Vector3::new(0.0, 0.0, 5000.0));
        let k = intrinsics();
        let xs: Vec<_> = (0..30).map(|_| Point3::new(rng.random_range(-500.0..500.0), rng.random_range(-500.0..500.0), 0.0)).collect();
        let us: Vec<_> = xs.iter().map(|x| crate::geometry::project(&k, &pose, x).pixel().unwrap()).collect();
        let c = Correspondences::new(xs, us, k).unwrap();
        assert!(matches!(solve_dlt(&c), Err(PnpError::DegenerateConfiguration { .. })));
    }

    #[test]
    fn noiseless_48_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let truth = random_pose(&mut rng);
        let c = synthetic(&truth, 48, &mut rng);
        let init = solve_dlt(&c).unwrap();
        let (dr, dt) = init.distance(&truth);
        assert!(dr < 1e-6 && dt < 1e-3, "dlt error {dr} rad {dt} mm");
        let sol = solve_pnp(&c).unwrap();
        let (dr, dt) = sol.pose.distance(&truth);
        assert!(dr < 1e-6 && dt < 1e-3);
        assert!(sol.rms_reprojection_error < 1e-6);
    }

    #[test]
    fn refine_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let truth = random_pose(&mut rng);
        let c = synthetic(&truth, 48, &mut rng);
        let sol = refine_gauss_newton(&c, &truth, 50, 1e-8).unwrap();
        assert!(sol.rms_reprojection_error < 1e-8);
        let (dr, dt) = sol.pose.distance(&truth);
        assert!(dr < 1e-12 && dt < 1e-8);
        assert_eq!(sol.iterations, 1);
    }

    #[test]
    fn refine_from_perturbed() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let truth = random_pose(&mut rng);
        let c = synthetic(&truth, 48, &mut rng);
        let delta = Pose::new(
            Rotation::from_axis_angle_deg(&Vector3::new(0.3, -0.7, 0.2), 2.0),
            Vector3::new(30.0, -30.0, 26.5),
        );
        assert!((delta.translation.norm() - 50.0).abs() < 0.5);
        let init = delta.compose(&truth);
        let before = c.rms_error(&init).unwrap();
        let sol = refine_gauss_newton(&c, &init, 50, 1e-8).unwrap();
        assert!(sol.rms_reprojection_error <= before);
        let (dr, dt) = sol.pose.distance(&truth);
        assert!(dr < 1e-6 && dt < 1e-3, "{dr} {dt}");
    }

    #[test]
    fn behind_camera_init_fails() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let truth = random_pose(&mut rng);
        let c = synthetic(&truth, 20, &mut rng);
        let flipped = Pose::from_rotation(Rotation::from_axis_angle(&Vector3::new(0.0, std::f64::consts::PI, 0.0))).compose(&truth);
        assert_eq!(refine_gauss_newton(&c, &flipped, 10, 1e-8).unwrap_err(), PnpError::NonFiniteResidual);
    }

    #[test]
    fn deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let truth = random_pose(&mut rng);
        let mut c = synthetic(&truth, 40, &mut rng);
        let noisy: Vec<_> = c.image_points.iter().map(|p| p + na::Vector2::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5))).collect();
        c.image_points = noisy;
        let a = solve_pnp(&c).unwrap();
        let b = solve_pnp(&c).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10 {
            let truth = random_pose(&mut rng);
            let c = synthetic(&truth, 30, &mut rng);
            let g = random_pose(&mut rng);
            let moved: Vec<_> = c.object_points.iter().map(|x| g.transform_point(x)).collect();
            let c2 = Correspondences::new(moved, c.image_points.clone(), c.intrinsics).unwrap();
            let a = solve_pnp(&c).unwrap();
            let b = solve_pnp(&c2).unwrap();
            let expected = a.pose.compose(&g.inverse());
            let (dr, dt) = b.pose.distance(&expected);
            assert!(dr < 1e-6 && dt < 1e-3);
        }
    }

    #[test]
    fn monotone_under_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let truth = random_pose(&mut rng);
        let mut c = synthetic(&truth, 60, &mut rng);
        c.image_points.iter_mut().for_each(|p| *p += na::Vector2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
        let init = solve_dlt(&c).unwrap();
        let before = c.rms_error(&init).unwrap();
        let mut prev = before;
        for iters in 1..8 {
            let sol = refine_gauss_newton(&c, &init, iters, 0.0).unwrap();
            assert!(sol.rms_reprojection_error <= prev + 1e-12);
            prev = sol.rms_reprojection_error;
        }
    }

    #[test]
    fn distortion_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let truth = random_pose(&mut rng);
        let k = intrinsics().with_distortion(-0.1, 0.02);
        let base = synthetic(&truth, 60, &mut rng);
        let us: Vec<_> = base.object_points.iter().map(|x| crate::geometry::project(&k, &truth, x).pixel().unwrap()).collect();
        let c = Correspondences::new(base.object_points.to_vec(), us, k).unwrap();
        let sol = solve_pnp(&c).unwrap();
        let (dr, dt) = sol.pose.distance(&truth);
        assert!(dr < 1e-6 && dt < 1e-3);
    }
}
