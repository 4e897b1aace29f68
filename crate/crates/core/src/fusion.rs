//! Error-state EKF that smooths per-scan registration poses.
//!
//! Nominal state: rotation `R` plus `[p, v, a, w, w_dot]` (constant
//! acceleration for translation, constant angular acceleration for rotation,
//! body-frame rates). Error state (18): `[dtheta, dp, dv, da, dw, dw_dot]`
//! with `R_true = R * Exp(dtheta)` and additive errors elsewhere.
//!
//! Measurements are registration poses whose sensor-frame covariance is
//! averaged over a short window and moved to the world frame with the SE(3)
//! adjoint of the prior pose. The residual is the world-frame twist
//! `log(T_meas * T_prior^-1)`, which is the quantity that covariance
//! describes.

use std::collections::VecDeque;
use std::path::Path;

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::dataio::kitti::{check_timestamps, write_pose_file};
use crate::error::{Error, Result};
use crate::lie::{
    adjoint, log_se3, skew, so3_exp, so3_right_jacobian, Cov6, Mat3, Mat6, Pose, Vec3, Vec6,
};

pub type Mat18 = SMatrix<f64, 18, 18>;
pub type Vec18 = SVector<f64, 18>;
type Mat6x18 = SMatrix<f64, 6, 18>;
type Mat18x6 = SMatrix<f64, 18, 6>;

pub const ROT: usize = 0;
pub const POS: usize = 3;
pub const VEL: usize = 6;
pub const ACC: usize = 9;
pub const RATE: usize = 12;
pub const RATE_DOT: usize = 15;

pub const DEFAULT_SMOOTHING_WINDOW: usize = 5;
const MEASUREMENT_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterState {
    pub rot: Mat3,
    pub p: Vec3,
    pub v: Vec3,
    pub a: Vec3,
    pub omega: Vec3,
    pub omega_dot: Vec3,
    pub cov: Mat18,
}

impl FilterState {
    pub fn new(pose: &Pose, cov: Mat18) -> Self {
        Self {
            rot: pose.rot,
            p: pose.trans,
            v: Vec3::zeros(),
            a: Vec3::zeros(),
            omega: Vec3::zeros(),
            omega_dot: Vec3::zeros(),
            cov,
        }
    }

    /// Starts at `pose` at rest, with loose priors on the derivatives.
    pub fn at_rest(pose: &Pose) -> Self {
        let mut d = Vec18::zeros();
        let blocks = [
            (ROT, 1e-2),
            (POS, 1.0),
            (VEL, 100.0),
            (ACC, 4.0),
            (RATE, 0.25),
            (RATE_DOT, 0.25),
        ];
        for (start, var) in blocks {
            d.fixed_rows_mut::<3>(start).fill(var);
        }
        Self::new(pose, Mat18::from_diagonal(&d))
    }

    pub fn pose(&self) -> Pose {
        Pose {
            rot: self.rot,
            trans: self.p,
        }
    }

    /// Applies an error-state correction.
    pub fn inject(&self, dx: &Vec18) -> Self {
        let part = |i: usize| -> Vec3 { dx.fixed_rows::<3>(i).into() };
        Self {
            rot: self.rot * so3_exp(&part(ROT)),
            p: self.p + part(POS),
            v: self.v + part(VEL),
            a: self.a + part(ACC),
            omega: self.omega + part(RATE),
            omega_dot: self.omega_dot + part(RATE_DOT),
            cov: self.cov,
        }
    }

    /// Error-state difference `other - self`.
    pub fn difference(&self, other: &FilterState) -> Result<Vec18> {
        let mut dx = Vec18::zeros();
        let dtheta = crate::lie::so3_log(&(self.rot.transpose() * other.rot))?;
        dx.fixed_rows_mut::<3>(ROT).copy_from(&dtheta);
        dx.fixed_rows_mut::<3>(POS).copy_from(&(other.p - self.p));
        dx.fixed_rows_mut::<3>(VEL).copy_from(&(other.v - self.v));
        dx.fixed_rows_mut::<3>(ACC).copy_from(&(other.a - self.a));
        dx.fixed_rows_mut::<3>(RATE)
            .copy_from(&(other.omega - self.omega));
        dx.fixed_rows_mut::<3>(RATE_DOT)
            .copy_from(&(other.omega_dot - self.omega_dot));
        Ok(dx)
    }
}

/// White-noise jerk densities driving the motion priors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProcessNoise {
    /// (m/s^3)^2 / Hz
    pub jerk_psd: f64,
    /// (rad/s^3)^2 / Hz
    pub angular_jerk_psd: f64,
}

impl Default for ProcessNoise {
    fn default() -> Self {
        Self {
            jerk_psd: 1.0,
            angular_jerk_psd: 0.5,
        }
    }
}

/// A registration pose and its noise.
///
/// [`update_step`] expects `cov` in the world frame; [`ScanMeasurement`]
/// carries the sensor-frame covariance instead.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub pose: Pose,
    pub cov: Cov6,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanMeasurement {
    pub time: f64,
    pub pose: Pose,
    /// Sensor-frame covariance, `(u, w)` order.
    pub cov: Cov6,
}

fn propagate_nominal(s: &FilterState, dt: f64) -> FilterState {
    let phi = s.omega * dt + s.omega_dot * (0.5 * dt * dt);
    FilterState {
        rot: s.rot * so3_exp(&phi),
        p: s.p + s.v * dt + s.a * (0.5 * dt * dt),
        v: s.v + s.a * dt,
        a: s.a,
        omega: s.omega + s.omega_dot * dt,
        omega_dot: s.omega_dot,
        cov: s.cov,
    }
}

/// First-order error-state transition of one prediction step.
pub fn transition_jacobian(s: &FilterState, dt: f64) -> Mat18 {
    let phi = s.omega * dt + s.omega_dot * (0.5 * dt * dt);
    let jr = so3_right_jacobian(&phi);
    let eye = Mat3::identity();
    let mut f = Mat18::identity();
    f.fixed_view_mut::<3, 3>(ROT, ROT)
        .copy_from(&so3_exp(&phi).transpose());
    f.fixed_view_mut::<3, 3>(ROT, RATE).copy_from(&(jr * dt));
    f.fixed_view_mut::<3, 3>(ROT, RATE_DOT)
        .copy_from(&(jr * (0.5 * dt * dt)));
    f.fixed_view_mut::<3, 3>(POS, VEL).copy_from(&(eye * dt));
    f.fixed_view_mut::<3, 3>(POS, ACC)
        .copy_from(&(eye * (0.5 * dt * dt)));
    f.fixed_view_mut::<3, 3>(VEL, ACC).copy_from(&(eye * dt));
    f.fixed_view_mut::<3, 3>(RATE, RATE_DOT)
        .copy_from(&(eye * dt));
    f
}

/// White-jerk discretization for a (position, velocity, acceleration) chain.
fn jerk_block(psd: f64, dt: f64) -> [[f64; 3]; 3] {
    let (d2, d3, d4, d5) = (dt * dt, dt.powi(3), dt.powi(4), dt.powi(5));
    [
        [psd * d5 / 20.0, psd * d4 / 8.0, psd * d3 / 6.0],
        [psd * d4 / 8.0, psd * d3 / 3.0, psd * d2 / 2.0],
        [psd * d3 / 6.0, psd * d2 / 2.0, psd * dt],
    ]
}

pub fn process_noise_matrix(q: &ProcessNoise, dt: f64) -> Mat18 {
    let mut out = Mat18::zeros();
    let chains = [
        ([POS, VEL, ACC], jerk_block(q.jerk_psd, dt)),
        ([ROT, RATE, RATE_DOT], jerk_block(q.angular_jerk_psd, dt)),
    ];
    for (idx, block) in chains {
        for (bi, &i) in idx.iter().enumerate() {
            for (bj, &j) in idx.iter().enumerate() {
                for axis in 0..3 {
                    out[(i + axis, j + axis)] = block[bi][bj];
                }
            }
        }
    }
    out
}

fn symmetrize18(m: &Mat18) -> Mat18 {
    (m + m.transpose()) * 0.5
}

pub fn predict_step(s: &FilterState, dt: f64, q: &ProcessNoise) -> Result<FilterState> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidConfig(format!("prediction step dt={dt}")));
    }
    let f = transition_jacobian(s, dt);
    let mut next = propagate_nominal(s, dt);
    next.cov = symmetrize18(&(f * s.cov * f.transpose() + process_noise_matrix(q, dt)));
    Ok(next)
}

/// Jacobian of the world twist `log(T_meas T^-1)` with respect to the error
/// state, evaluated at the nominal state.
pub fn measurement_jacobian(s: &FilterState) -> Mat6x18 {
    let mut h = Mat6x18::zeros();
    h.fixed_view_mut::<3, 3>(0, ROT)
        .copy_from(&(skew(&s.p) * s.rot));
    h.fixed_view_mut::<3, 3>(0, POS)
        .copy_from(&Mat3::identity());
    h.fixed_view_mut::<3, 3>(3, ROT).copy_from(&s.rot);
    h
}

fn gain_and_innovation(s: &FilterState, m: &Measurement) -> Result<(Mat18x6, Mat6x18, Mat6, Vec6)> {
    let r = log_se3(&(m.pose * s.pose().inverse()))?.to_vector();
    let h = measurement_jacobian(s);
    let noise = m.cov.symmetrized().0 + Mat6::identity() * MEASUREMENT_FLOOR;
    let innovation_cov = h * s.cov * h.transpose() + noise;
    let chol = innovation_cov.cholesky().ok_or_else(|| {
        Error::NumericalFailure("innovation covariance is not positive definite".into())
    })?;
    let gain = s.cov * h.transpose() * chol.inverse();
    if gain.iter().any(|x| !x.is_finite()) {
        return Err(Error::NumericalFailure("non-finite Kalman gain".into()));
    }
    Ok((gain, h, noise, r))
}

/// EKF update with a world-frame pose measurement; covariance in Joseph form.
pub fn update_step(s: &FilterState, m: &Measurement) -> Result<FilterState> {
    let (gain, h, noise, r) = gain_and_innovation(s, m)?;
    let mut next = s.inject(&(gain * r));
    let ikh = Mat18::identity() - gain * h;
    next.cov = symmetrize18(&(ikh * s.cov * ikh.transpose() + gain * noise * gain.transpose()));
    Ok(next)
}

/// Textbook `(I - K H) P` covariance update, for cross-checking.
pub fn update_step_simple(s: &FilterState, m: &Measurement) -> Result<FilterState> {
    let (gain, h, _, r) = gain_and_innovation(s, m)?;
    let mut next = s.inject(&(gain * r));
    next.cov = (Mat18::identity() - gain * h) * s.cov;
    Ok(next)
}

/// `Ad_T * cov * Ad_T^T`.
pub fn cov_to_world(cov_body: &Cov6, pose: &Pose) -> Cov6 {
    cov_body.transported(&adjoint(pose))
}

/// Element-wise mean of the last `window` covariances.
pub fn smooth_covariance(history: &[Cov6], window: usize) -> Result<Cov6> {
    if history.is_empty() {
        return Err(Error::EmptyInput);
    }
    let take = window.max(1).min(history.len());
    let sum = history[history.len() - take..]
        .iter()
        .fold(Mat6::zeros(), |acc, c| acc + c.0);
    Ok(Cov6(sum / take as f64))
}

pub fn mean_covariance(covs: &[Cov6]) -> Result<Cov6> {
    smooth_covariance(covs, covs.len())
}

/// Filters a sequence of registration poses.
///
/// The filter is taken to be at the first measurement's time, so the first
/// step is an update without prediction.
pub fn run_filter(
    measurements: &[ScanMeasurement],
    init: &FilterState,
    q: &ProcessNoise,
) -> Result<Vec<Pose>> {
    run_filter_with_window(measurements, init, q, DEFAULT_SMOOTHING_WINDOW)
}

pub fn run_filter_with_window(
    measurements: &[ScanMeasurement],
    init: &FilterState,
    q: &ProcessNoise,
    window: usize,
) -> Result<Vec<Pose>> {
    let times: Vec<f64> = measurements.iter().map(|m| m.time).collect();
    check_timestamps(&times)?;
    let mut state = *init;
    let mut history: VecDeque<Cov6> = VecDeque::with_capacity(window + 1);
    let mut out = Vec::with_capacity(measurements.len());
    for (k, m) in measurements.iter().enumerate() {
        if k > 0 {
            state = predict_step(&state, m.time - measurements[k - 1].time, q)?;
        }
        history.push_back(m.cov);
        if history.len() > window {
            history.pop_front();
        }
        let smoothed = smooth_covariance(history.make_contiguous(), window)?;
        let world = cov_to_world(&smoothed, &state.pose());
        state = update_step(
            &state,
            &Measurement {
                pose: m.pose,
                cov: world,
            },
        )?;
        out.push(state.pose());
    }
    Ok(out)
}

/// Writes poses in KITTI format (one row-major 3x4 matrix per line).
pub fn write_trajectory(path: impl AsRef<Path>, poses: &[Pose]) -> Result<()> {
    write_pose_file(path, poses)
}
