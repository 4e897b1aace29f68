//! Covariance and trajectory evaluation metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie::{log_se3, Cov6, Pose};
use crate::predictor::kl_divergence;
use crate::predictor::loss::floored;
use crate::predictor::model::DEFAULT_EPSILON;

pub const DEFAULT_WINDOW: usize = 200;

/// KL divergence `D[N(0, pred) || N(0, gt)]` after flooring both by `eps * I`.
pub fn metric_kl(pred: &Cov6, gt: &Cov6) -> Result<f64> {
    kl_divergence(
        &floored(pred, DEFAULT_EPSILON),
        &floored(gt, DEFAULT_EPSILON),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    X,
    Y,
    Yaw,
}

impl Component {
    pub fn index(self) -> usize {
        match self {
            Self::X => 0,
            Self::Y => 1,
            Self::Yaw => 5,
        }
    }
}

/// Mean absolute error of one diagonal variance.
pub fn metric_mae(preds: &[Cov6], gts: &[Cov6], component: Component) -> Result<f64> {
    check_lengths(preds.len(), gts.len())?;
    let i = component.index();
    let sum: f64 = preds
        .iter()
        .zip(gts)
        .map(|(p, g)| (p.0[(i, i)] - g.0[(i, i)]).abs())
        .sum();
    Ok(sum / preds.len() as f64)
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::LengthMismatch { left: a, right: b });
    }
    if a == 0 {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

/// `[start, end)` of each evaluation window; a trailing partial window is
/// kept only when it holds at least half a window.
pub fn windows(len: usize, window: usize) -> Vec<(usize, usize)> {
    (0..len)
        .step_by(window.max(1))
        .map(|s| (s, (s + window).min(len)))
        .filter(|(s, e)| 2 * (e - s) >= window)
        .collect()
}

/// Mean translation error per window after aligning each window's first
/// estimated pose to the ground truth.
pub fn metric_ape(est: &[Pose], gt: &[Pose], window: usize) -> Result<Vec<f64>> {
    check_lengths(est.len(), gt.len())?;
    if window < 2 {
        return Err(Error::InvalidConfig(format!("window {window} < 2")));
    }
    Ok(windows(est.len(), window)
        .into_iter()
        .map(|(s, e)| {
            let align = gt[s] * est[s].inverse();
            let sum: f64 = (s..e)
                .map(|k| ((align * est[k]).trans - gt[k].trans).norm())
                .sum();
            sum / (e - s) as f64
        })
        .collect())
}

/// Relative translation error over `delta`-frame steps, averaged per window.
///
/// A pair `(k, k + delta)` belongs to the window containing `k` and is used
/// only if `k + delta` lies in the same window.
pub fn metric_rpe(est: &[Pose], gt: &[Pose], delta: usize, window: usize) -> Result<Vec<f64>> {
    check_lengths(est.len(), gt.len())?;
    if window < 2 || delta == 0 || delta >= window {
        return Err(Error::InvalidConfig(format!(
            "rpe delta {delta}, window {window}"
        )));
    }
    windows(est.len(), window)
        .into_iter()
        .map(|(s, e)| {
            let mut sum = 0.0;
            let mut n = 0usize;
            for k in s..e.saturating_sub(delta) {
                let rel_gt = gt[k].inverse() * gt[k + delta];
                let rel_est = est[k].inverse() * est[k + delta];
                sum += log_se3(&(rel_gt.inverse() * rel_est))?.u.norm();
                n += 1;
            }
            Ok(sum / n as f64)
        })
        .collect()
}

/// `100 * (baseline - ours) / baseline`; positive means `ours` is better.
pub fn improvement(baseline: f64, ours: f64) -> f64 {
    100.0 * (baseline - ours) / baseline
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Covariance-prediction quality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceReport {
    pub kl: Vec<f64>,
    pub kl_mean: f64,
    pub mae_x: f64,
    pub mae_y: f64,
    pub mae_yaw: f64,
}

impl CovarianceReport {
    pub fn new(preds: &[Cov6], gts: &[Cov6]) -> Result<Self> {
        check_lengths(preds.len(), gts.len())?;
        let kl = preds
            .iter()
            .zip(gts)
            .map(|(p, g)| metric_kl(p, g))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            kl_mean: mean(&kl),
            kl,
            mae_x: metric_mae(preds, gts, Component::X)?,
            mae_y: metric_mae(preds, gts, Component::Y)?,
            mae_yaw: metric_mae(preds, gts, Component::Yaw)?,
        })
    }
}

/// Trajectory accuracy, optionally against a baseline trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryReport {
    pub window: usize,
    pub ape: Vec<f64>,
    pub ape_mean: f64,
    pub rpe: Vec<f64>,
    pub rpe_mean: f64,
    pub baseline_ape_mean: Option<f64>,
    pub baseline_rpe_mean: Option<f64>,
    pub ape_improvement: Option<f64>,
    pub rpe_improvement: Option<f64>,
}

impl TrajectoryReport {
    pub fn new(
        est: &[Pose],
        gt: &[Pose],
        baseline: Option<&[Pose]>,
        window: usize,
    ) -> Result<Self> {
        let ape = metric_ape(est, gt, window)?;
        let rpe = metric_rpe(est, gt, 1, window)?;
        let (ape_mean, rpe_mean) = (mean(&ape), mean(&rpe));
        let (mut b_ape, mut b_rpe) = (None, None);
        if let Some(b) = baseline {
            b_ape = Some(mean(&metric_ape(b, gt, window)?));
            b_rpe = Some(mean(&metric_rpe(b, gt, 1, window)?));
        }
        Ok(Self {
            window,
            ape,
            ape_mean,
            rpe,
            rpe_mean,
            baseline_ape_mean: b_ape,
            baseline_rpe_mean: b_rpe,
            ape_improvement: b_ape.map(|b| improvement(b, ape_mean)),
            rpe_improvement: b_rpe.map(|b| improvement(b, rpe_mean)),
        })
    }
}
