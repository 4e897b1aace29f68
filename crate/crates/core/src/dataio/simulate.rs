//! Synthetic trajectories and noisy per-frame registration results.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::Measurement;
use crate::lie::{exp_se3, psd_cholesky, sample_with_factor, Cov6, Pose, Vec3};
use crate::seed;

/// Smooth planar drive: constant speed with a sinusoidal yaw rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub frames: usize,
    /// Seconds between frames.
    pub dt: f64,
    /// m/s
    pub speed: f64,
    /// Peak yaw rate, rad/s.
    pub yaw_rate_amplitude: f64,
    /// Period of the yaw-rate oscillation, s.
    pub yaw_period: f64,
    /// Height of the sensor above ground, m.
    pub height: f64,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            frames: 600,
            dt: 0.1,
            speed: 8.0,
            yaw_rate_amplitude: 0.15,
            yaw_period: 20.0,
            height: super::synth::SENSOR_HEIGHT,
        }
    }
}

/// Poses of the drive described by `spec`, sampled every `spec.dt`.
pub fn synth_trajectory(spec: &TrajectorySpec) -> Vec<Pose> {
    const SUBSTEPS: usize = 20;
    let omega = 2.0 * std::f64::consts::PI / spec.yaw_period;
    let heading = |t: f64| spec.yaw_rate_amplitude / omega * (1.0 - (omega * t).cos());
    let mut pos = Vec3::new(0.0, 0.0, spec.height);
    let mut poses = Vec::with_capacity(spec.frames);
    let h = spec.dt / SUBSTEPS as f64;
    for k in 0..spec.frames {
        let t = k as f64 * spec.dt;
        let mut pose = Pose::rot_z(heading(t));
        pose.trans = pos;
        poses.push(pose);
        // Midpoint integration of the planar velocity.
        for s in 0..SUBSTEPS {
            let psi = heading(t + (s as f64 + 0.5) * h);
            pos += Vec3::new(psi.cos(), psi.sin(), 0.0) * (spec.speed * h);
        }
    }
    poses
}

/// Alternating blocks of `block` frames drawing from `low` and `high`.
pub fn two_regime_covariances(frames: usize, block: usize, low: &Cov6, high: &Cov6) -> Vec<Cov6> {
    (0..frames)
        .map(|k| {
            if (k / block.max(1)) % 2 == 0 {
                *low
            } else {
                *high
            }
        })
        .collect()
}

/// Noise regimes of the bundled synthetic runs: a well-constrained scene
/// (5 cm, 0.2 deg) and a tunnel-like one that is ten times looser along the
/// sensor x axis and in yaw.
pub fn reference_regimes() -> (Cov6, Cov6) {
    let low = Cov6::from_diagonal(&[2.5e-3, 2.5e-3, 2.5e-3, 1e-5, 1e-5, 1e-5]);
    let high = Cov6::from_diagonal(&[0.25, 2.5e-3, 2.5e-3, 1e-5, 1e-5, 1e-3]);
    (low, high)
}

/// Registration results `gt_k * exp(xi)`, `xi ~ N(0, cov_k)`.
///
/// The returned covariances are the sensor-frame inputs.
pub fn simulate_icp_measurements(
    trajectory: &[Pose],
    per_frame_cov: &[Cov6],
    seed_value: u64,
) -> Result<Vec<Measurement>> {
    if trajectory.len() != per_frame_cov.len() {
        return Err(Error::LengthMismatch {
            left: trajectory.len(),
            right: per_frame_cov.len(),
        });
    }
    let mut rng = seed::rng(seed_value, &[0x5349_4d55]);
    trajectory
        .iter()
        .zip(per_frame_cov)
        .map(|(gt, cov)| {
            let factor = psd_cholesky(&cov.symmetrized().0)?;
            let xi = sample_with_factor(&factor, &mut rng);
            Ok(Measurement {
                pose: gt.compose(&exp_se3(&xi)),
                cov: *cov,
            })
        })
        .collect()
}
