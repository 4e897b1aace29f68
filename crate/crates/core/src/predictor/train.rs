//! Mini-batch Adam training with weighted sampling and yaw augmentation.

use nalgebra::DVector;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::lie::{Cov6, Mat6};
use crate::seed;

use super::augment_rotation_z;
use super::features::{extract_features, FeatureConfig};
use super::loss::gradient;
use super::model::{softplus_inverse, tri_index, Mlp, ModelParams, DEFAULT_EPSILON};
use super::sampling_weights;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Weight of the KL term.
    pub alpha: f64,
    /// Weight of the Huber term.
    pub beta: f64,
    pub huber_delta: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub augment: bool,
    pub weighted_sampling: bool,
    pub hidden: Vec<usize>,
    pub epsilon: f64,
    pub features: FeatureConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            beta: 1.0,
            huber_delta: 0.1,
            learning_rate: 1e-3,
            epochs: 100,
            batch_size: 32,
            seed: 0,
            augment: true,
            weighted_sampling: true,
            hidden: vec![128, 64],
            epsilon: DEFAULT_EPSILON,
            features: FeatureConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha >= 0.0
            && self.beta >= 0.0
            && self.huber_delta > 0.0
            && self.learning_rate > 0.0
            && self.batch_size > 0
            && self.epsilon >= 0.0
            && self.features.sectors > 0
            && self.hidden.iter().all(|&h| h > 0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("training config {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub scan: PointCloud,
    pub label: Cov6,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

struct Adam {
    m: Mlp,
    v: Mlp,
    t: i32,
}

impl Adam {
    fn new(net: &Mlp) -> Self {
        Self {
            m: net.zeros_like(),
            v: net.zeros_like(),
            t: 0,
        }
    }

    fn step(&mut self, net: &mut Mlp, grad: &Mlp, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        for ((p, g), (m, v)) in net
            .layers
            .iter_mut()
            .zip(&grad.layers)
            .zip(self.m.layers.iter_mut().zip(self.v.layers.iter_mut()))
        {
            let params = p.w.iter_mut().chain(p.b.iter_mut());
            let grads = g.w.iter().chain(g.b.iter());
            let ms = m.w.iter_mut().chain(m.b.iter_mut());
            let vs = v.w.iter_mut().chain(v.b.iter_mut());
            for (((p, g), m), v) in params.zip(grads).zip(ms).zip(vs) {
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
            }
        }
    }
}

fn mean_and_std(features: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = features[0].len();
    let n = features.len() as f64;
    let mut mean = vec![0.0; d];
    for f in features {
        for (m, x) in mean.iter_mut().zip(f) {
            *m += x / n;
        }
    }
    let mut std = vec![0.0; d];
    for f in features {
        for ((s, x), m) in std.iter_mut().zip(f).zip(&mean) {
            *s += (x - m).powi(2) / n;
        }
    }
    for (s, m) in std.iter_mut().zip(&mean) {
        *s = s.sqrt();
        // Constant features: keep them centred but unscaled.
        if !(*s > 1e-9 * m.abs().max(1.0)) {
            *s = 1.0;
        }
    }
    (mean, std)
}

/// Output bias that makes an untrained network predict `target`.
fn head_bias(target: &Cov6, epsilon: f64) -> DVector<f64> {
    let m = target.0 + Mat6::identity() * epsilon.max(1e-12);
    let l = m
        .cholesky()
        .map(|c| c.l())
        .unwrap_or_else(|| Mat6::from_diagonal(&m.diagonal().map(|d| d.max(1e-12).sqrt())));
    let mut b = DVector::zeros(21);
    for r in 0..6 {
        for c in 0..=r {
            b[tri_index(r, c)] = if r == c {
                softplus_inverse(l[(r, c)].max(1e-9))
            } else {
                l[(r, c)]
            };
        }
    }
    b
}

/// Mean label of a set of samples.
pub fn mean_label(samples: &[TrainSample]) -> Cov6 {
    let n = samples.len() as f64;
    Cov6(samples.iter().fold(Mat6::zeros(), |acc, s| acc + s.label.0) / n)
}

pub fn train(samples: &[TrainSample], cfg: &TrainConfig) -> Result<ModelParams> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    let fcfg = cfg.features;
    let base_features = samples
        .par_iter()
        .map(|s| extract_features(&s.scan, &fcfg))
        .collect::<Result<Vec<_>>>()?;
    let (mean, std) = mean_and_std(&base_features);

    let mut init_rng = seed::rng(cfg.seed, &[0x494e_4954]);
    let mut params = ModelParams::new(fcfg, &cfg.hidden, cfg.epsilon, &mut init_rng);
    params.feature_mean = mean;
    params.feature_std = std;
    params.net.layers.last_mut().unwrap().b = head_bias(&mean_label(samples), cfg.epsilon);
    let base_x: Vec<DVector<f64>> = base_features
        .iter()
        .map(|f| params.standardize(f))
        .collect();

    let labels: Vec<Cov6> = samples.iter().map(|s| s.label).collect();
    let sampler = if cfg.weighted_sampling {
        Some(
            WeightedIndex::new(sampling_weights(&labels, true)?)
                .map_err(|e| Error::InvalidConfig(e.to_string()))?,
        )
    } else {
        None
    };

    let n = samples.len();
    let batches = n.div_ceil(cfg.batch_size);
    let mut adam = Adam::new(&params.net);
    for epoch in 0..cfg.epochs {
        let mut order_rng = seed::rng(cfg.seed, &[epoch as u64]);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut order_rng);
        let mut epoch_loss = 0.0;
        let mut epoch_count = 0usize;
        for b in 0..batches {
            let mut rng = seed::rng(cfg.seed, &[epoch as u64, b as u64]);
            let picks: Vec<(usize, Option<f64>)> = (0..cfg.batch_size.min(n))
                .map(|slot| {
                    let i = match &sampler {
                        Some(w) => w.sample(&mut rng),
                        None => order[(b * cfg.batch_size + slot) % n],
                    };
                    let angle = cfg
                        .augment
                        .then(|| rng.random_range(-std::f64::consts::PI..std::f64::consts::PI));
                    (i, angle)
                })
                .collect();
            let results = picks
                .par_iter()
                .map(|&(i, angle)| {
                    let (x, label) = match angle {
                        None => (base_x[i].clone(), samples[i].label),
                        Some(a) => {
                            let (scan, label) =
                                augment_rotation_z(&samples[i].scan, &samples[i].label, a);
                            (params.standardize(&extract_features(&scan, &fcfg)?), label)
                        }
                    };
                    gradient(&params, &x, &label, cfg)
                })
                .collect::<Result<Vec<_>>>()
                .map_err(|e| match e {
                    Error::NotPsd(_) => Error::TrainingDiverged { epoch },
                    other => other,
                })?;
            let mut total = params.net.zeros_like();
            for (parts, g) in &results {
                epoch_loss += parts.total;
                total.add_scaled(g, 1.0 / results.len() as f64);
            }
            epoch_count += results.len();
            if !total.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            adam.step(&mut params.net, &total, cfg.learning_rate);
        }
        let mean_loss = epoch_loss / epoch_count as f64;
        if !mean_loss.is_finite() || !params.net.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        log::debug!("epoch {epoch}: loss {mean_loss:.6e}");
        params.loss_history.push(mean_loss);
    }
    Ok(params)
}

/// Covariance predicted for a scan.
pub fn predict(params: &ModelParams, scan: &PointCloud) -> Result<Cov6> {
    let f = extract_features(scan, &params.features)?;
    Ok(params.forward(&f).1)
}
