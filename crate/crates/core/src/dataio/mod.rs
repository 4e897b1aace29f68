//! Data ingestion and synthetic data generation.

pub mod kitti;
pub mod simulate;
pub mod synth;

pub use kitti::{
    read_poses, read_velodyne_bin, write_sequence, InMemorySequence, ScanSequence, SequenceHandle,
};
pub use simulate::{
    reference_regimes, simulate_icp_measurements, synth_trajectory, two_regime_covariances,
    TrajectorySpec,
};
pub use synth::{synth_scene, synth_sequence, SceneKind, SceneSpec, SequenceSpec};
