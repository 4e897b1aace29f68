//! Weighted KL + Huber covariance loss.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::lie::{Cov6, Mat6};

use super::model::{assemble_covariance, raw_gradient, Mlp, ModelParams};
use super::train::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub kl: f64,
    pub huber: f64,
    pub total: f64,
}

pub fn huber(x: f64, delta: f64) -> f64 {
    let a = x.abs();
    if a <= delta {
        0.5 * x * x
    } else {
        delta * (a - 0.5 * delta)
    }
}

pub fn huber_derivative(x: f64, delta: f64) -> f64 {
    x.clamp(-delta, delta)
}

fn cholesky(m: &Mat6, what: &str) -> Result<nalgebra::Cholesky<f64, nalgebra::U6>> {
    m.cholesky()
        .ok_or_else(|| Error::NotPsd(format!("{what} is not positive definite")))
}

/// `Y + eps * I`.
pub fn floored(y: &Cov6, epsilon: f64) -> Mat6 {
    y.0 + Mat6::identity() * epsilon
}

/// KL divergence `D[N(0, pred) || N(0, gt)]`.
pub fn kl_divergence(pred: &Mat6, gt: &Mat6) -> Result<f64> {
    let cg = cholesky(gt, "reference covariance")?;
    let cp = cholesky(pred, "predicted covariance")?;
    let logdet = |c: &nalgebra::Cholesky<f64, nalgebra::U6>| {
        2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    };
    let trace = cg.solve(pred).trace();
    Ok(0.5 * (trace - 6.0 + logdet(&cg) - logdet(&cp)))
}

/// Sum of Huber penalties over the upper triangle (diagonal included).
pub fn huber_upper(d: &Mat6, delta: f64) -> f64 {
    let mut s = 0.0;
    for i in 0..6 {
        for j in i..6 {
            s += huber(d[(i, j)], delta);
        }
    }
    s
}

/// Loss of a predicted covariance against a label.
///
/// The label is floored by `epsilon * I` before it enters the KL term.
pub fn loss(yhat: &Cov6, ybar: &Cov6, cfg: &TrainConfig) -> Result<LossParts> {
    let kl = kl_divergence(&yhat.0, &floored(ybar, cfg.epsilon))?;
    let hub = huber_upper(&(yhat.0 - ybar.0), cfg.huber_delta);
    Ok(LossParts {
        kl,
        huber: hub,
        total: cfg.alpha * kl + cfg.beta * hub,
    })
}

/// Loss and its derivative with respect to the entries of `yhat`.
pub fn loss_and_grad_y(yhat: &Cov6, ybar: &Cov6, cfg: &TrainConfig) -> Result<(LossParts, Mat6)> {
    let parts = loss(yhat, ybar, cfg)?;
    let gt_inv = cholesky(&floored(ybar, cfg.epsilon), "reference covariance")?.inverse();
    let pred_inv = cholesky(&yhat.0, "predicted covariance")?.inverse();
    let mut g = (gt_inv - pred_inv) * (0.5 * cfg.alpha);
    let d = yhat.0 - ybar.0;
    for i in 0..6 {
        for j in i..6 {
            g[(i, j)] += cfg.beta * huber_derivative(d[(i, j)], cfg.huber_delta);
        }
    }
    Ok((parts, g))
}

/// Loss of one sample and the gradient with respect to every network parameter.
///
/// `x` is the standardized descriptor.
pub fn gradient(
    params: &ModelParams,
    x: &DVector<f64>,
    ybar: &Cov6,
    cfg: &TrainConfig,
) -> Result<(LossParts, Mlp)> {
    let trace = params.net.forward_trace(x);
    let raw: Vec<f64> = trace.activations.last().unwrap().iter().copied().collect();
    let (l, yhat) = assemble_covariance(&raw, params.epsilon);
    let (parts, gy) = loss_and_grad_y(&yhat, ybar, cfg)?;
    let graw = raw_gradient(&raw, &l, &gy);
    Ok((parts, params.net.backward(&trace, &graw)))
}
