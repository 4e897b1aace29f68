//! Multilayer perceptron with a Cholesky covariance head.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::lie::{Cov6, Mat6};

use super::features::FeatureConfig;

pub const OUTPUT_DIM: usize = 21;
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Row-major position of `(r, c)`, `c <= r`, in the 21-vector.
pub fn tri_index(r: usize, c: usize) -> usize {
    r * (r + 1) / 2 + c
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inverse(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out x in`
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            w: DMatrix::zeros(outputs, inputs),
            b: DVector::zeros(outputs),
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn random<R: Rng + ?Sized>(inputs: usize, outputs: usize, gain: f64, rng: &mut R) -> Self {
        let a = gain * (6.0 / (inputs + outputs) as f64).sqrt();
        Self {
            w: DMatrix::from_fn(outputs, inputs, |_, _| rng.random_range(-a..a)),
            b: DVector::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.w.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.w.nrows()
    }
}

/// Hidden layers use tanh; the last layer is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Activations recorded by a forward pass, input included.
pub struct Trace {
    pub activations: Vec<DVector<f64>>,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        inputs: usize,
        hidden: &[usize],
        outputs: usize,
        rng: &mut R,
    ) -> Self {
        let mut sizes = vec![inputs];
        sizes.extend_from_slice(hidden);
        sizes.push(outputs);
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Layer::random(w[0], w[1], if i == last { 0.1 } else { 1.0 }, rng))
            .collect();
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer::zeros(l.inputs(), l.outputs()))
                .collect(),
        }
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs())
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn forward(&self, x: &DVector<f64>) -> DVector<f64> {
        self.forward_trace(x).activations.pop().unwrap()
    }

    pub fn forward_trace(&self, x: &DVector<f64>) -> Trace {
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.clone());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = &layer.w * activations.last().unwrap() + &layer.b;
            if i != last {
                z.apply(|v| *v = v.tanh());
            }
            activations.push(z);
        }
        Trace { activations }
    }

    /// Parameter gradient given `d loss / d output`.
    pub fn backward(&self, trace: &Trace, grad_out: &DVector<f64>) -> Mlp {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = grad_out.clone();
        for i in (0..self.layers.len()).rev() {
            let input = &trace.activations[i];
            grads.push(Layer {
                w: &delta * input.transpose(),
                b: delta.clone(),
            });
            if i > 0 {
                let mut back = self.layers[i].w.transpose() * &delta;
                // Input of layer i is tanh output of layer i-1.
                back.zip_apply(input, |d, h| *d *= 1.0 - h * h);
                delta = back;
            }
        }
        grads.reverse();
        Mlp { layers: grads }
    }

    pub fn add_scaled(&mut self, other: &Mlp, s: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.w += &b.w * s;
            a.b += &b.b * s;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }

    /// All parameters, layer by layer: weights row-major, then bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            for r in 0..l.w.nrows() {
                for c in 0..l.w.ncols() {
                    out.push(l.w[(r, c)]);
                }
            }
            out.extend(l.b.iter());
        }
        out
    }

    /// Builds a network with the given `(inputs, outputs)` shapes from [`Mlp::flatten`] output.
    pub fn unflatten(shapes: &[(usize, usize)], values: &[f64]) -> Option<Mlp> {
        let mut it = values.iter().copied();
        let mut layers = Vec::with_capacity(shapes.len());
        for &(inputs, outputs) in shapes {
            let mut layer = Layer::zeros(inputs, outputs);
            for r in 0..outputs {
                for c in 0..inputs {
                    layer.w[(r, c)] = it.next()?;
                }
            }
            for r in 0..outputs {
                layer.b[r] = it.next()?;
            }
            layers.push(layer);
        }
        if it.next().is_some() {
            return None;
        }
        Some(Mlp { layers })
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.layers
            .iter()
            .map(|l| (l.inputs(), l.outputs()))
            .collect()
    }
}

/// Lower-triangular factor from the raw network output.
pub fn cholesky_factor(raw: &[f64]) -> Mat6 {
    assert_eq!(raw.len(), OUTPUT_DIM);
    let mut l = Mat6::zeros();
    for r in 0..6 {
        for c in 0..=r {
            let v = raw[tri_index(r, c)];
            l[(r, c)] = if r == c { softplus(v) } else { v };
        }
    }
    l
}

/// `L * L^T + eps * I`, exactly symmetric.
pub fn assemble_covariance(raw: &[f64], epsilon: f64) -> (Mat6, Cov6) {
    let l = cholesky_factor(raw);
    let mut y = Mat6::zeros();
    for r in 0..6 {
        for c in 0..=r {
            let mut s = 0.0;
            for k in 0..=c {
                s += l[(r, k)] * l[(c, k)];
            }
            if r == c {
                s += epsilon;
            }
            y[(r, c)] = s;
            y[(c, r)] = s;
        }
    }
    (l, Cov6(y))
}

/// Chain rule from `d loss / d Y` (entries treated independently) to the raw outputs.
pub fn raw_gradient(raw: &[f64], l: &Mat6, grad_y: &Mat6) -> DVector<f64> {
    let dl = (grad_y + grad_y.transpose()) * l;
    let mut g = DVector::zeros(OUTPUT_DIM);
    for r in 0..6 {
        for c in 0..=r {
            let i = tri_index(r, c);
            g[i] = if r == c {
                dl[(r, c)] * sigmoid(raw[i])
            } else {
                dl[(r, c)]
            };
        }
    }
    g
}

/// Everything needed to turn a scan descriptor into a covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub features: FeatureConfig,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub net: Mlp,
    pub epsilon: f64,
    /// Mean training loss per epoch.
    pub loss_history: Vec<f64>,
}

impl ModelParams {
    pub fn new<R: Rng + ?Sized>(
        features: FeatureConfig,
        hidden: &[usize],
        epsilon: f64,
        rng: &mut R,
    ) -> Self {
        let d = features.dim();
        Self {
            features,
            feature_mean: vec![0.0; d],
            feature_std: vec![1.0; d],
            net: Mlp::new(d, hidden, OUTPUT_DIM, rng),
            epsilon,
            loss_history: Vec::new(),
        }
    }

    pub fn standardize(&self, f: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            f.len(),
            f.iter()
                .zip(&self.feature_mean)
                .zip(&self.feature_std)
                .map(|((x, m), s)| (x - m) / s),
        )
    }

    /// Raw output and covariance for a standardized descriptor.
    pub fn forward_standardized(&self, x: &DVector<f64>) -> (Vec<f64>, Cov6) {
        let raw: Vec<f64> = self.net.forward(x).iter().copied().collect();
        let (_, y) = assemble_covariance(&raw, self.epsilon);
        (raw, y)
    }

    /// Raw output and covariance for a descriptor.
    pub fn forward(&self, f: &[f64]) -> (Vec<f64>, Cov6) {
        self.forward_standardized(&self.standardize(f))
    }
}
