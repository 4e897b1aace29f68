//! Learning ICP registration uncertainty from single LiDAR scans.
//!
//! The crate covers the whole pipeline:
//!
//! * [`lie`] SE(3) exponential/logarithm, adjoint and tangent-space sampling,
//! * [`cloud`] point clouds, voxel filtering, exact nearest neighbours, normals,
//! * [`registration`] point-to-plane ICP,
//! * [`mc_dataset`] Monte Carlo covariance labels from perturbed registrations,
//! * [`predictor`] a scan descriptor + MLP with a Cholesky covariance head,
//! * [`fusion`] an error-state EKF that consumes per-scan covariances,
//! * [`dataio`] KITTI odometry readers and synthetic scenes/trajectories,
//! * [`metrics`] KL/MAE covariance metrics and windowed APE/RPE.

pub mod cloud;
pub mod dataio;
pub mod error;
pub mod fusion;
pub mod lie;
pub mod mc_dataset;
pub mod metrics;
pub mod predictor;
pub mod registration;
pub mod seed;

pub use error::{Error, ErrorKind, Result};
pub use lie::{Cov6, Pose, Twist};
