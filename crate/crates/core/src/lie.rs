//! SE(3) / SO(3) machinery.
//!
//! Twists are ordered `(u, w)`: translation first, rotation (axis-angle)
//! second. Every covariance, adjoint and model output in the crate uses the
//! same order. Registration errors are right (body-frame) perturbations:
//! `T = T_ref * exp(xi)`.

use std::ops::Mul;

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Vec6 = Vector6<f64>;
pub type Mat6 = Matrix6<f64>;

/// Below this angle the closed forms are replaced by series expansions.
const SERIES_ANGLE: f64 = 1e-2;
/// Below this angle the rotation axis is numerically meaningless.
pub const SMALL_ANGLE: f64 = 1e-8;
/// Logarithms closer than this to pi are rejected.
pub const NEAR_PI_MARGIN: f64 = 1e-6;

/// Element of se(3).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Twist {
    /// Translation part, metres.
    pub u: Vec3,
    /// Rotation part, radians (axis times angle).
    pub w: Vec3,
}

impl Twist {
    pub fn new(u: Vec3, w: Vec3) -> Self {
        Self { u, w }
    }

    pub fn zero() -> Self {
        Self::new(Vec3::zeros(), Vec3::zeros())
    }

    pub fn from_vector(v: &Vec6) -> Self {
        Self::new(v.fixed_rows::<3>(0).into(), v.fixed_rows::<3>(3).into())
    }

    pub fn to_vector(&self) -> Vec6 {
        Vec6::new(self.u.x, self.u.y, self.u.z, self.w.x, self.w.y, self.w.z)
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(self.w.iter()).all(|x| x.is_finite())
    }
}

/// Rigid transform in SE(3).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rot: Mat3,
    pub trans: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rot: Mat3::identity(),
            trans: Vec3::zeros(),
        }
    }

    /// Builds a pose, checking that `rot` is a proper rotation to 1e-9.
    pub fn new(rot: Mat3, trans: Vec3) -> Result<Self> {
        let pose = Self { rot, trans };
        if !pose.is_valid(1e-9) {
            return Err(Error::NumericalFailure(format!(
                "not a rotation matrix: {rot}"
            )));
        }
        Ok(pose)
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self {
            rot: Mat3::identity(),
            trans: t,
        }
    }

    pub fn from_rotation(rot: Mat3) -> Self {
        Self {
            rot,
            trans: Vec3::zeros(),
        }
    }

    pub fn rot_z(angle: f64) -> Self {
        Self::from_rotation(so3_exp(&Vec3::new(0.0, 0.0, angle)))
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        let orth = (self.rot.transpose() * self.rot - Mat3::identity()).norm();
        let det = (self.rot.determinant() - 1.0).abs();
        orth <= tol && det <= tol && self.trans.iter().all(|x| x.is_finite())
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rot.transpose();
        Self {
            rot: rt,
            trans: -(rt * self.trans),
        }
    }

    pub fn compose(&self, other: &Pose) -> Self {
        Self {
            rot: self.rot * other.rot,
            trans: self.rot * other.trans + self.trans,
        }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rot * p + self.trans
    }

    pub fn to_homogeneous(&self) -> nalgebra::Matrix4<f64> {
        let mut m = nalgebra::Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rot);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.trans);
        m
    }

    /// Row-major 3x4 `[R | t]`, the KITTI pose layout.
    pub fn to_row_major_12(&self) -> [f64; 12] {
        let mut out = [0.0; 12];
        for r in 0..3 {
            for c in 0..3 {
                out[r * 4 + c] = self.rot[(r, c)];
            }
            out[r * 4 + 3] = self.trans[r];
        }
        out
    }

    /// Inverse of [`Pose::to_row_major_12`]. The rotation block is taken as
    /// given; callers reading external files decide whether to re-orthonormalize.
    pub fn from_row_major_12(v: &[f64; 12]) -> Self {
        let rot = Mat3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
        let trans = Vec3::new(v[3], v[7], v[11]);
        Self { rot, trans }
    }

    /// Projects the rotation block onto SO(3) (nearest in Frobenius norm).
    pub fn orthonormalized(&self) -> Self {
        let svd = self.rot.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut d = Mat3::identity();
        if (u * vt).determinant() < 0.0 {
            d[(2, 2)] = -1.0;
        }
        Self {
            rot: u * d * vt,
            trans: self.trans,
        }
    }

    pub fn rotation_angle(&self) -> f64 {
        so3_angle(&self.rot)
    }
}

impl Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

impl Mul for &Pose {
    type Output = Pose;
    fn mul(self, rhs: &Pose) -> Pose {
        self.compose(rhs)
    }
}

/// Symmetric 6x6 covariance on the se(3) tangent, `(u, w)` block order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cov6(pub Mat6);

impl Cov6 {
    pub fn zeros() -> Self {
        Self(Mat6::zeros())
    }

    pub fn identity() -> Self {
        Self(Mat6::identity())
    }

    pub fn from_diagonal(d: &[f64; 6]) -> Self {
        Self(Mat6::from_diagonal(&Vec6::from_row_slice(d)))
    }

    pub fn matrix(&self) -> &Mat6 {
        &self.0
    }

    /// Lower triangle, row-major: (0,0), (1,0), (1,1), (2,0), ...
    pub fn to_lower21(&self) -> [f64; 21] {
        let mut out = [0.0; 21];
        let mut k = 0;
        for r in 0..6 {
            for c in 0..=r {
                out[k] = self.0[(r, c)];
                k += 1;
            }
        }
        out
    }

    pub fn from_lower21(v: &[f64; 21]) -> Self {
        let mut m = Mat6::zeros();
        let mut k = 0;
        for r in 0..6 {
            for c in 0..=r {
                m[(r, c)] = v[k];
                m[(c, r)] = v[k];
                k += 1;
            }
        }
        Self(m)
    }

    pub fn symmetrized(&self) -> Self {
        Self(0.5 * (self.0 + self.0.transpose()))
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (self.0 - self.0.transpose()).amax() <= tol
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.symmetrized().0.symmetric_eigenvalues().min()
    }

    pub fn diagonal(&self) -> [f64; 6] {
        let d = self.0.diagonal();
        [d[0], d[1], d[2], d[3], d[4], d[5]]
    }

    /// Congruence `A * self * A^T`.
    pub fn transported(&self, a: &Mat6) -> Self {
        Self(a * self.0 * a.transpose()).symmetrized()
    }
}

pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn vee(m: &Mat3) -> Vec3 {
    Vec3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// `(sin t)/t`, `(1 - cos t)/t^2`, `(t - sin t)/t^3`.
fn rodrigues_coefficients(theta: f64) -> (f64, f64, f64) {
    if theta < SERIES_ANGLE {
        let t2 = theta * theta;
        let t4 = t2 * t2;
        (
            1.0 - t2 / 6.0 + t4 / 120.0,
            0.5 - t2 / 24.0 + t4 / 720.0,
            1.0 / 6.0 - t2 / 120.0 + t4 / 5040.0,
        )
    } else {
        let half = 0.5 * theta;
        let sh = half.sin();
        (
            theta.sin() / theta,
            2.0 * sh * sh / (theta * theta),
            (theta - theta.sin()) / (theta * theta * theta),
        )
    }
}

pub fn so3_exp(w: &Vec3) -> Mat3 {
    let theta = w.norm();
    let k = skew(w);
    let (a, b, _) = rodrigues_coefficients(theta);
    Mat3::identity() + a * k + b * k * k
}

fn so3_angle(r: &Mat3) -> f64 {
    let s = 0.5 * vee(&(r - r.transpose())).norm();
    let c = 0.5 * (r.trace() - 1.0);
    s.atan2(c)
}

/// Logarithm on SO(3); fails within [`NEAR_PI_MARGIN`] of pi.
pub fn so3_log(r: &Mat3) -> Result<Vec3> {
    let v = vee(&(r - r.transpose()));
    let s = 0.5 * v.norm();
    let c = 0.5 * (r.trace() - 1.0);
    let theta = s.atan2(c);
    if theta >= std::f64::consts::PI - NEAR_PI_MARGIN {
        return Err(Error::AngleNearPi { angle: theta });
    }
    // theta / (2 sin theta)
    let scale = if theta < SERIES_ANGLE {
        let t2 = theta * theta;
        0.5 * (1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0)
    } else {
        0.5 * theta / theta.sin()
    };
    Ok(scale * v)
}

/// Left Jacobian of SO(3), the `V` matrix of the SE(3) exponential.
pub fn so3_left_jacobian(w: &Vec3) -> Mat3 {
    let k = skew(w);
    let (_, b, c) = rodrigues_coefficients(w.norm());
    Mat3::identity() + b * k + c * k * k
}

pub fn so3_right_jacobian(w: &Vec3) -> Mat3 {
    so3_left_jacobian(&(-w))
}

pub fn so3_left_jacobian_inverse(w: &Vec3) -> Mat3 {
    let theta = w.norm();
    let k = skew(w);
    let c = if theta < SERIES_ANGLE {
        let t2 = theta * theta;
        1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    } else {
        (1.0 - theta * theta.sin() / (2.0 * (1.0 - theta.cos()))) / (theta * theta)
    };
    Mat3::identity() - 0.5 * k + c * k * k
}

pub fn exp_se3(xi: &Twist) -> Pose {
    Pose {
        rot: so3_exp(&xi.w),
        trans: so3_left_jacobian(&xi.w) * xi.u,
    }
}

pub fn log_se3(t: &Pose) -> Result<Twist> {
    let w = so3_log(&t.rot)?;
    let u = so3_left_jacobian_inverse(&w) * t.trans;
    Ok(Twist::new(u, w))
}

/// Adjoint for `(u, w)` twists: `[[R, [t]x R], [0, R]]`.
pub fn adjoint(t: &Pose) -> Mat6 {
    let mut ad = Mat6::zeros();
    ad.fixed_view_mut::<3, 3>(0, 0).copy_from(&t.rot);
    ad.fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&(skew(&t.trans) * t.rot));
    ad.fixed_view_mut::<3, 3>(3, 3).copy_from(&t.rot);
    ad
}

pub fn compose(a: &Pose, b: &Pose) -> Pose {
    a.compose(b)
}

pub fn inverse(a: &Pose) -> Pose {
    a.inverse()
}

/// Factor `L` with `L L^T = m` for a positive semi-definite `m`.
///
/// Pivots below `1e-12 * max(diag)` are treated as exact zeros so that
/// zero-variance directions produce exactly zero samples.
pub fn psd_cholesky(m: &Mat6) -> Result<Mat6> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NotPsd("non-finite entry".into()));
    }
    let scale = m.diagonal().amax().max(f64::MIN_POSITIVE);
    let pivot_tol = 1e-12 * scale;
    let mut l = Mat6::zeros();
    for j in 0..6 {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d > pivot_tol {
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in (j + 1)..6 {
                let mut s = m[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / djj;
            }
        } else if d >= -pivot_tol {
            for i in (j + 1)..6 {
                let mut s = m[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                if s.abs() > 1e-6 * scale {
                    return Err(Error::NotPsd(format!("zero pivot {j} with coupling {s:e}")));
                }
            }
        } else {
            return Err(Error::NotPsd(format!("negative pivot {d:e} at {j}")));
        }
    }
    Ok(l)
}

/// Zero-mean Gaussian twist with covariance `cov`.
pub fn sample_twist<R: Rng + ?Sized>(cov: &Cov6, rng: &mut R) -> Result<Twist> {
    let l = psd_cholesky(&cov.symmetrized().0)?;
    Ok(sample_with_factor(&l, rng))
}

/// Same as [`sample_twist`] with a precomputed factor from [`psd_cholesky`].
pub fn sample_with_factor<R: Rng + ?Sized>(l: &Mat6, rng: &mut R) -> Twist {
    let z = Vec6::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
    Twist::from_vector(&(l * z))
}
