//! Camera model, planar pose initialization and Levenberg–Marquardt refinement.

mod homography;

pub use homography::homography_dlt;

use nalgebra::{
    Matrix2x6, Matrix3, Matrix6, Point2, Point3, Rotation3, UnitQuaternion, Vector3, Vector6,
};
use serde::{Deserialize, Serialize};

use crate::decoder::Detection;
use crate::error::{Error, Result};
use crate::tagmodel::CanonicalLayout;

/// Pinhole camera with radial-tangential distortion `[k1, k2, p1, p2, k3]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(default)]
    pub dist: [f64; 5],
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Self {
        Self {
            fx,
            fy,
            cx,
            cy,
            dist: [0.0; 5],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .chain(&self.dist)
            .all(|v| v.is_finite());
        if !(self.fx > 0.0 && self.fy > 0.0) || !finite {
            return Err(Error::InvalidArgument(
                "intrinsics need finite values and fx, fy > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn has_distortion(&self) -> bool {
        self.dist.iter().any(|&d| d != 0.0)
    }

    /// Distorted normalized coordinates and the 2x2 Jacobian w.r.t. the
    /// undistorted ones.
    fn distort(&self, x: f64, y: f64) -> (f64, f64, [[f64; 2]; 2]) {
        let [k1, k2, p1, p2, k3] = self.dist;
        let r2 = x * x + y * y;
        let radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3));
        let drad_dr2 = k1 + r2 * (2.0 * k2 + 3.0 * k3 * r2);
        let (drad_dx, drad_dy) = (2.0 * x * drad_dr2, 2.0 * y * drad_dr2);
        let xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x);
        let yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y;
        let j = [
            [
                radial + x * drad_dx + 2.0 * p1 * y + 6.0 * p2 * x,
                x * drad_dy + 2.0 * p1 * x + 2.0 * p2 * y,
            ],
            [
                y * drad_dx + 2.0 * p1 * x + 2.0 * p2 * y,
                radial + y * drad_dy + 6.0 * p1 * y + 2.0 * p2 * x,
            ],
        ];
        (xd, yd, j)
    }

    /// Removes lens distortion from a pixel, returning the pixel an ideal
    /// pinhole camera with the same `K` would observe.
    pub fn undistort_pixel(&self, p: Point2<f64>) -> Point2<f64> {
        if !self.has_distortion() {
            return p;
        }
        let xd = (p.x - self.cx) / self.fx;
        let yd = (p.y - self.cy) / self.fy;
        let (mut x, mut y) = (xd, yd);
        for _ in 0..50 {
            let (ex, ey, j) = self.distort(x, y);
            // Newton step on distort(x, y) = (xd, yd)
            let (rx, ry) = (ex - xd, ey - yd);
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            if det.abs() < 1e-12 {
                break;
            }
            let dx = (j[1][1] * rx - j[0][1] * ry) / det;
            let dy = (-j[1][0] * rx + j[0][0] * ry) / det;
            x -= dx;
            y -= dy;
            if dx.abs() + dy.abs() < 1e-15 {
                break;
            }
        }
        Point2::new(x * self.fx + self.cx, y * self.fy + self.cy)
    }
}

/// Rigid transform from the marker frame to the camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: UnitQuaternion<f64>,
    /// Meters, camera frame.
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(UnitQuaternion::identity(), Vector3::zeros())
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn transform(&self, p: &Point3<f64>) -> Point3<f64> {
        self.rotation * p + self.translation
    }

    /// Left-multiplicative update: `R <- exp(w) R`, `t <- t + dt`.
    pub fn retract(&self, delta: &Vector6<f64>) -> Pose {
        let w = Vector3::new(delta[0], delta[1], delta[2]);
        let dt = Vector3::new(delta[3], delta[4], delta[5]);
        let mut q = UnitQuaternion::from_scaled_axis(w) * self.rotation;
        q.renormalize();
        Pose::new(q, self.translation + dt)
    }

    pub fn inverse(&self) -> Pose {
        let r = self.rotation.inverse();
        Pose::new(r, -(r * self.translation))
    }

    /// `self * other`: apply `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }
}

/// JSON form: `rotation_quat` is `[w, x, y, z]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub rotation_quat: [f64; 4],
    pub translation_m: [f64; 3],
}

impl From<&Pose> for PoseRecord {
    fn from(p: &Pose) -> Self {
        let q = p.rotation.quaternion();
        Self {
            rotation_quat: [q.w, q.i, q.j, q.k],
            translation_m: [p.translation.x, p.translation.y, p.translation.z],
        }
    }
}

impl From<&PoseRecord> for Pose {
    fn from(r: &PoseRecord) -> Self {
        let [w, x, y, z] = r.rotation_quat;
        let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(w, x, y, z));
        Pose::new(q, Vector3::from(r.translation_m))
    }
}

impl Serialize for Pose {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        PoseRecord::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        PoseRecord::deserialize(d).map(|r| Pose::from(&r))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    /// Marker frame, meters, `z = 0`.
    pub model: Point3<f64>,
    pub image: Point2<f64>,
}

/// Projects a single marker-frame point.
pub fn project_point(pose: &Pose, k: &CameraIntrinsics, p: &Point3<f64>) -> Result<Point2<f64>> {
    let c = pose.transform(p);
    if !(c.z > 0.0) {
        return Err(Error::BehindCamera(c.z));
    }
    let (xd, yd, _) = k.distort(c.x / c.z, c.y / c.z);
    Ok(Point2::new(k.fx * xd + k.cx, k.fy * yd + k.cy))
}

pub fn project(pose: &Pose, k: &CameraIntrinsics, pts: &[Point3<f64>]) -> Result<Vec<Point2<f64>>> {
    pts.iter().map(|p| project_point(pose, k, p)).collect()
}

/// Projection and its Jacobian w.r.t. the pose increment `[w, dt]` used by
/// [`Pose::retract`].
pub fn projection_jacobian(
    pose: &Pose,
    k: &CameraIntrinsics,
    p: &Point3<f64>,
) -> Result<(Point2<f64>, Matrix2x6<f64>)> {
    let rp = pose.rotation * p.coords;
    let c = rp + pose.translation;
    if !(c.z > 0.0) {
        return Err(Error::BehindCamera(c.z));
    }
    let iz = 1.0 / c.z;
    let (x, y) = (c.x * iz, c.y * iz);
    let (xd, yd, jd) = k.distort(x, y);
    // d(x, y) / d(camera point)
    let dn = nalgebra::Matrix2x3::new(iz, 0.0, -x * iz, 0.0, iz, -y * iz);
    // d(camera point) / d[w, t] = [-[Rp]x, I]
    let mut dc = nalgebra::Matrix3x6::zeros();
    dc.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(-rp.cross_matrix()));
    dc.fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&Matrix3::identity());
    let dd = nalgebra::Matrix2::new(
        k.fx * jd[0][0],
        k.fx * jd[0][1],
        k.fy * jd[1][0],
        k.fy * jd[1][1],
    );
    Ok((
        Point2::new(k.fx * xd + k.cx, k.fy * yd + k.cy),
        dd * dn * dc,
    ))
}

/// Homography from marker-plane coordinates (z dropped) to image pixels.
pub fn estimate_homography_dlt(corr: &[Correspondence]) -> Result<Matrix3<f64>> {
    let src: Vec<Point2<f64>> = corr
        .iter()
        .map(|c| Point2::new(c.model.x, c.model.y))
        .collect();
    let dst: Vec<Point2<f64>> = corr.iter().map(|c| c.image).collect();
    homography_dlt(&src, &dst)
}

/// Decomposes `H ~ K [r1 r2 t]` into a pose with the marker in front of the camera.
pub fn pose_from_homography(h: &Matrix3<f64>, k: &CameraIntrinsics) -> Result<Pose> {
    k.validate()?;
    if !(h.determinant().abs() > 1e-12 * h.norm().powi(3)) {
        return Err(Error::DegenerateGeometry(
            "homography is not invertible".into(),
        ));
    }
    let m = k
        .matrix()
        .try_inverse()
        .expect("valid intrinsics are invertible")
        * h;
    let (c1, c2, c3) = (
        m.column(0).into_owned(),
        m.column(1).into_owned(),
        m.column(2).into_owned(),
    );
    let mut scale = 2.0 / (c1.norm() + c2.norm());
    if c3.z * scale < 0.0 {
        scale = -scale;
    }
    let (r1, r2, t) = (c1 * scale, c2 * scale, c3 * scale);
    // nearest orthonormal pair via the polar factor of [r1 r2]
    let a = nalgebra::Matrix3x2::from_columns(&[r1, r2]);
    let svd = a.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let q = u * v_t;
    let (q1, q2) = (q.column(0).into_owned(), q.column(1).into_owned());
    let rot = Matrix3::from_columns(&[q1, q2, q1.cross(&q2)]);
    let rot = Rotation3::from_matrix_unchecked(rot);
    Ok(Pose::new(UnitQuaternion::from_rotation_matrix(&rot), t))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmReport {
    pub pose: Pose,
    pub rmse: f64,
    pub initial_rmse: f64,
    pub iterations: usize,
}

const LM_MAX_ITERATIONS: usize = 100;

fn residuals(pose: &Pose, corr: &[Correspondence], k: &CameraIntrinsics) -> Option<f64> {
    let mut cost = 0.0;
    for c in corr {
        let p = project_point(pose, k, &c.model).ok()?;
        cost += (p - c.image).norm_squared();
    }
    cost.is_finite().then_some(cost)
}

/// Minimizes the summed squared reprojection error over the six pose
/// parameters. The returned cost never exceeds the initial one.
pub fn refine_pose_lm(
    init: &Pose,
    corr: &[Correspondence],
    k: &CameraIntrinsics,
) -> Result<LmReport> {
    k.validate()?;
    if corr.len() < 4 {
        return Err(Error::InvalidArgument(format!(
            "need at least 4 correspondences, got {}",
            corr.len()
        )));
    }
    // per scalar residual (two per correspondence)
    let n = 2.0 * corr.len() as f64;
    let mut pose = *init;
    let mut cost = residuals(&pose, corr, k)
        .ok_or_else(|| Error::NumericFailure("initial residuals are not finite".into()))?;
    let initial_rmse = (cost / n).sqrt();
    let mut lambda = 1e-3;
    let mut iterations = 0;

    'outer: while iterations < LM_MAX_ITERATIONS {
        iterations += 1;
        let mut jtj = Matrix6::<f64>::zeros();
        let mut jtr = Vector6::<f64>::zeros();
        for c in corr {
            let (p, j) = projection_jacobian(&pose, k, &c.model)?;
            let r = p - c.image;
            jtj += j.transpose() * j;
            jtr += j.transpose() * r;
        }
        if !jtj.iter().chain(jtr.iter()).all(|v| v.is_finite()) {
            return Err(Error::NumericFailure("non-finite Jacobian".into()));
        }
        loop {
            let mut a = jtj;
            for i in 0..6 {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(delta) = a.cholesky().map(|c| c.solve(&(-jtr))) else {
                lambda *= 10.0;
                if lambda > 1e16 {
                    break 'outer;
                }
                continue;
            };
            if delta.norm() < 1e-12 {
                break 'outer;
            }
            let candidate = pose.retract(&delta);
            match residuals(&candidate, corr, k) {
                Some(new_cost) if new_cost < cost => {
                    let rel = (cost - new_cost) / cost;
                    pose = candidate;
                    cost = new_cost;
                    lambda = (lambda / 10.0).max(1e-12);
                    if rel < 1e-10 {
                        break 'outer;
                    }
                    break;
                }
                _ => {
                    lambda *= 10.0;
                    if lambda > 1e16 {
                        break 'outer;
                    }
                }
            }
        }
    }
    Ok(LmReport {
        pose,
        rmse: (cost / n).sqrt(),
        initial_rmse,
        iterations,
    })
}

/// The other local minimum of planar pose: the plane normal mirrored about
/// the line of sight to the marker origin.
fn mirrored_candidate(pose: &Pose) -> Option<Pose> {
    let normal = pose.rotation * Vector3::z();
    let sight = pose.translation.try_normalize(1e-12)?;
    let mirrored = sight * (2.0 * normal.dot(&sight)) - normal;
    let q = UnitQuaternion::rotation_between(&normal, &mirrored)?;
    Some(Pose::new(q * pose.rotation, pose.translation))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseEstimate {
    pub pose: Pose,
    pub rmse: f64,
    pub correspondences: usize,
}

/// Pose from all vertices of a detection: DLT on undistorted vertices,
/// homography decomposition, then LM from both planar-ambiguity branches.
pub fn estimate_pose(
    det: &Detection,
    layout: &CanonicalLayout,
    k: &CameraIntrinsics,
) -> Result<PoseEstimate> {
    if det.vertices.len() != layout.model_points.len() {
        return Err(Error::InvalidArgument(format!(
            "{} vertices for a layout of {} points",
            det.vertices.len(),
            layout.model_points.len()
        )));
    }
    let corr: Vec<Correspondence> = layout
        .model_points
        .iter()
        .zip(&det.vertices)
        .map(|(m, v)| Correspondence {
            model: *m,
            image: *v,
        })
        .collect();
    solve_pnp_planar(&corr, k)
}

/// Planar PnP over arbitrary correspondences (model `z` must be 0).
pub fn solve_pnp_planar(corr: &[Correspondence], k: &CameraIntrinsics) -> Result<PoseEstimate> {
    let undistorted: Vec<Correspondence> = corr
        .iter()
        .map(|c| Correspondence {
            model: c.model,
            image: k.undistort_pixel(c.image),
        })
        .collect();
    let h = estimate_homography_dlt(&undistorted)?;
    let init = pose_from_homography(&h, k)?;
    let mut best = refine_pose_lm(&init, corr, k)?;
    if let Some(alt) = mirrored_candidate(&best.pose) {
        if let Ok(other) = refine_pose_lm(&alt, corr, k) {
            if other.rmse < best.rmse {
                best = other;
            }
        }
    }
    Ok(PoseEstimate {
        pose: best.pose,
        rmse: best.rmse,
        correspondences: corr.len(),
    })
}

/// Angle of the relative rotation between two orientations, in radians.
pub fn rotation_angle_between(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> f64 {
    a.angle_to(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(600.0, 600.0, 640.0, 480.0)
    }

    fn grid(n: usize, pitch: f64) -> Vec<Point3<f64>> {
        let half = (n as f64 - 1.0) / 2.0;
        (0..n)
            .flat_map(|r| {
                (0..n).map(move |c| {
                    Point3::new((c as f64 - half) * pitch, (r as f64 - half) * pitch, 0.0)
                })
            })
            .collect()
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let ang = rng.random_range(0.0..0.9);
        let q = UnitQuaternion::from_scaled_axis(axis.normalize() * ang);
        Pose::new(
            q,
            Vector3::new(
                rng.random_range(-0.05..0.05),
                rng.random_range(-0.05..0.05),
                rng.random_range(0.3..0.7),
            ),
        )
    }

    fn corr_for(pose: &Pose, k: &CameraIntrinsics, pts: &[Point3<f64>]) -> Vec<Correspondence> {
        pts.iter()
            .map(|m| Correspondence {
                model: *m,
                image: project_point(pose, k, m).unwrap(),
            })
            .collect()
    }

    #[test]
    fn project_basics() {
        let p = project_point(&Pose::identity(), &k(), &Point3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!((p.x, p.y), (640.0, 480.0));
        assert!(matches!(
            project_point(&Pose::identity(), &k(), &Point3::new(0.0, 0.0, -1.0)),
            Err(Error::BehindCamera(_))
        ));
        let mut kd = k();
        kd.dist = [0.0; 5];
        let pose = Pose::new(
            UnitQuaternion::from_euler_angles(0.1, -0.2, 0.3),
            Vector3::new(0.01, 0.02, 0.5),
        );
        let pts = grid(3, 0.02);
        assert_eq!(
            project(&pose, &k(), &pts).unwrap(),
            project(&pose, &kd, &pts).unwrap()
        );
    }

    #[test]
    fn projection_fixture() {
        // hand-computed: camera point (0.1, -0.05, 2.0) -> x = 0.05, y = -0.025
        // xd = x*radial + 2*p1*x*y + p2*(r2 + 2x^2), p1 = 0.001, p2 = -0.002
        let kd = CameraIntrinsics {
            fx: 800.0,
            fy: 780.0,
            cx: 320.0,
            cy: 240.0,
            dist: [0.1, 0.01, 0.001, -0.002, 0.0],
        };
        let pose = Pose::new(UnitQuaternion::identity(), Vector3::new(0.1, -0.05, 2.0));
        let p = project_point(&pose, &kd, &Point3::origin()).unwrap();
        let (x, y): (f64, f64) = (0.05, -0.025);
        let r2 = x * x + y * y;
        let radial = 1.0 + 0.1 * r2 + 0.01 * r2 * r2;
        let xd = x * radial + 2.0 * 0.001 * x * y + -0.002 * (r2 + 2.0 * x * x);
        let yd = y * radial + 0.001 * (r2 + 2.0 * y * y) + 2.0 * -0.002 * x * y;
        assert!((p.x - (800.0 * xd + 320.0)).abs() < 1e-9);
        assert!((p.y - (780.0 * yd + 240.0)).abs() < 1e-9);
        // values from an independent evaluation of the same formulas
        assert!((p.x - 359.997_503_906_25).abs() < 1e-9, "{}", p.x);
        assert!((p.y - 220.501_216_845_703_14).abs() < 1e-9, "{}", p.y);
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let kd = CameraIntrinsics {
            fx: 900.0,
            fy: 910.0,
            cx: 600.0,
            cy: 470.0,
            dist: [-0.2, 0.05, 0.001, -0.0015, 0.01],
        };
        for _ in 0..100 {
            let pose = random_pose(&mut rng);
            let pt = Point3::new(
                rng.random_range(-0.03..0.03),
                rng.random_range(-0.03..0.03),
                0.0,
            );
            let (_, jac) = projection_jacobian(&pose, &kd, &pt).unwrap();
            let h = 1e-6;
            for i in 0..6 {
                let mut d = Vector6::zeros();
                d[i] = h;
                let plus = project_point(&pose.retract(&d), &kd, &pt).unwrap();
                d[i] = -h;
                let minus = project_point(&pose.retract(&d), &kd, &pt).unwrap();
                let fd = (plus - minus) / (2.0 * h);
                let an = jac.column(i);
                let rel = (fd - an).norm() / an.norm().max(1e-3);
                assert!(rel < 1e-4, "column {i}: fd {fd:?} analytic {an:?}");
            }
        }
    }

    #[test]
    fn undistort_inverts_distortion() {
        let kd = CameraIntrinsics {
            fx: 900.0,
            fy: 910.0,
            cx: 600.0,
            cy: 470.0,
            dist: [-0.2, 0.05, 0.001, -0.0015, 0.01],
        };
        let ideal = CameraIntrinsics {
            dist: [0.0; 5],
            ..kd
        };
        let pose = Pose::new(
            UnitQuaternion::from_euler_angles(0.2, 0.1, 0.0),
            Vector3::new(0.02, -0.01, 0.4),
        );
        for m in grid(4, 0.02) {
            let d = project_point(&pose, &kd, &m).unwrap();
            let u = project_point(&pose, &ideal, &m).unwrap();
            assert!((kd.undistort_pixel(d) - u).norm() < 1e-9);
        }
    }

    #[test]
    fn fronto_parallel_from_homography() {
        let pose = Pose::new(UnitQuaternion::identity(), Vector3::new(0.0, 0.0, 0.5));
        let corr = corr_for(&pose, &k(), &grid(4, 0.01));
        let h = estimate_homography_dlt(&corr).unwrap();
        let est = pose_from_homography(&h, &k()).unwrap();
        assert!(est.rotation.angle() < 1e-6);
        assert!((est.translation - pose.translation).norm() < 1e-6);
        // sign flip of H keeps the tag in front
        let flipped = pose_from_homography(&(-h), &k()).unwrap();
        assert!(flipped.translation.z > 0.0);
        assert!(matches!(
            pose_from_homography(&Matrix3::zeros(), &k()),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn homography_init_is_close_for_random_poses() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let pose = random_pose(&mut rng);
            let corr = corr_for(&pose, &k(), &grid(4, 0.012));
            let est = pose_from_homography(&estimate_homography_dlt(&corr).unwrap(), &k()).unwrap();
            assert!(est.rotation.angle_to(&pose.rotation).to_degrees() < 0.5);
            assert!((est.translation - pose.translation).norm() / pose.translation.norm() < 0.01);
            let m = est.rotation_matrix();
            assert!((m * m.transpose() - Matrix3::identity()).norm() < 1e-9);
            assert!((m.determinant() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn lm_at_optimum_stops_quickly() {
        let pose = Pose::new(
            UnitQuaternion::from_euler_angles(0.3, -0.2, 0.1),
            Vector3::new(0.01, 0.0, 0.5),
        );
        let corr = corr_for(&pose, &k(), &grid(4, 0.01));
        let rep = refine_pose_lm(&pose, &corr, &k()).unwrap();
        assert!(rep.iterations <= 2, "{} iterations", rep.iterations);
        assert!(rep.rmse < 1e-8);
    }

    #[test]
    fn lm_recovers_from_perturbation() {
        let truth = Pose::new(
            UnitQuaternion::from_euler_angles(0.4, 0.3, -0.5),
            Vector3::new(-0.02, 0.01, 0.5),
        );
        let corr = corr_for(&truth, &k(), &grid(4, 0.01));
        let axis = Vector3::new(0.3, -0.8, 0.5).normalize();
        let init = Pose::new(
            UnitQuaternion::from_scaled_axis(axis * 5f64.to_radians()) * truth.rotation,
            truth.translation * 1.05,
        );
        let rep = refine_pose_lm(&init, &corr, &k()).unwrap();
        assert!(rep.rmse <= rep.initial_rmse);
        assert!(rep.pose.rotation.angle_to(&truth.rotation).to_degrees() < 0.05);
        assert!(
            (rep.pose.translation - truth.translation).norm() / truth.translation.norm() < 1e-3
        );
    }

    #[test]
    fn lm_rejects_non_finite() {
        let mut corr = corr_for(
            &Pose::new(UnitQuaternion::identity(), Vector3::new(0.0, 0.0, 0.5)),
            &k(),
            &grid(3, 0.01),
        );
        corr[0].image.x = f64::NAN;
        let init = Pose::new(UnitQuaternion::identity(), Vector3::new(0.0, 0.0, 0.5));
        assert!(matches!(
            refine_pose_lm(&init, &corr, &k()),
            Err(Error::NumericFailure(_))
        ));
    }

    #[test]
    fn pose_record_roundtrip() {
        let pose = Pose::new(
            UnitQuaternion::from_euler_angles(0.1, 0.2, 0.3),
            Vector3::new(1.0, 2.0, 3.0),
        );
        let json = serde_json::to_string(&pose).unwrap();
        assert!(json.contains("rotation_quat") && json.contains("translation_m"));
        let back: Pose = serde_json::from_str(&json).unwrap();
        assert!(back.rotation.angle_to(&pose.rotation) < 1e-12);
        assert_eq!(back.translation, pose.translation);
    }
}
