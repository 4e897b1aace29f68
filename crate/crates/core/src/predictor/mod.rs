//! Per-scan covariance regression.
//!
//! A fixed geometric descriptor ([`features`]) feeds a small MLP whose 21
//! outputs parameterize a lower-triangular factor `L`; the prediction is
//! `L L^T + eps I`, positive definite by construction.

pub mod container;
pub mod features;
pub mod loss;
pub mod model;
pub mod train;

pub use container::{load_model, save_model};
pub use features::{extract_features, FeatureConfig};
pub use loss::{gradient, kl_divergence, loss, LossParts};
pub use model::{assemble_covariance, ModelParams};
pub use train::{predict, train, TrainConfig, TrainSample};

use crate::cloud::{transform_cloud, PointCloud};
use crate::error::{Error, Result};
use crate::lie::{adjoint, Cov6, Pose};

/// Rotates a scan about z and carries its label along with the adjoint.
pub fn augment_rotation_z(scan: &PointCloud, label: &Cov6, angle: f64) -> (PointCloud, Cov6) {
    let rot = Pose::rot_z(angle);
    (
        transform_cloud(scan, &rot),
        label.transported(&adjoint(&rot)),
    )
}

/// Sampling probabilities proportional to each label's largest absolute entry.
///
/// With `floor`, every weight is raised by 5% of the mean weight so
/// near-zero labels are still drawn occasionally.
pub fn sampling_weights(labels: &[Cov6], floor: bool) -> Result<Vec<f64>> {
    if labels.is_empty() {
        return Err(Error::EmptyInput);
    }
    let w: Vec<f64> = labels.iter().map(|y| y.0.amax()).collect();
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure("non-finite label".into()));
    }
    let extra = if floor {
        0.05 * w.iter().sum::<f64>() / w.len() as f64
    } else {
        0.0
    };
    let total: f64 = w.iter().map(|v| v + extra).sum();
    if !(total > 0.0) {
        return Ok(vec![1.0 / w.len() as f64; w.len()]);
    }
    Ok(w.iter().map(|v| (v + extra) / total).collect())
}
