//! Monte Carlo registration-error covariance labels.
//!
//! For every selected scan a reference map is assembled from neighbouring
//! scans placed with their ground-truth poses. The scan is then registered
//! against it from `N` randomly perturbed initial poses and the label is the
//! second moment of the resulting errors about the ground truth.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::DEFAULT_NORMAL_NEIGHBOURS;
use crate::cloud::{estimate_normals, transform_cloud, voxel_downsample, PointCloud};
use crate::dataio::synth::{synth_scene, SceneSpec};
use crate::dataio::ScanSequence;
use crate::error::{Error, Result};
use crate::lie::{exp_se3, log_se3, psd_cholesky, sample_with_factor, Cov6, Mat6, Pose, Twist};
use crate::registration::{icp_with_target, IcpConfig, Target};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// Map from past and future scans (HD-map localization).
    Prebuilt,
    /// Map from past scans only.
    Slam,
}

impl std::str::FromStr for Scenario {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "prebuilt" => Ok(Self::Prebuilt),
            "slam" => Ok(Self::Slam),
            other => Err(format!("unknown scenario '{other}'")),
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Prebuilt => "prebuilt",
            Self::Slam => "slam",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapConfig {
    pub x_prev: usize,
    pub y_next: usize,
    /// Voxel size of the reference map, metres.
    pub map_voxel: f64,
    /// Voxel size applied to the scan being labelled, metres.
    pub scan_voxel: f64,
    pub normal_neighbours: usize,
}

impl MapConfig {
    pub fn for_scenario(scenario: Scenario) -> Self {
        let y_next = match scenario {
            Scenario::Prebuilt => 20,
            Scenario::Slam => 0,
        };
        Self {
            x_prev: 10,
            y_next,
            map_voxel: 1.0,
            scan_voxel: 0.1,
            normal_neighbours: DEFAULT_NORMAL_NEIGHBOURS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.x_prev + self.y_next == 0 || !(self.map_voxel > 0.0) || !(self.scan_voxel > 0.0) {
            return Err(Error::InvalidConfig(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbConfig {
    /// Standard deviations `(x, y, z)` in metres and `(roll, pitch, yaw)` in radians.
    pub sigma: [f64; 6],
    pub n_samples: usize,
}

impl Default for PerturbConfig {
    /// 1.0 m, 1.0 m, 0.2 m, 5 deg, 5 deg, 10 deg; 64 samples.
    fn default() -> Self {
        let deg = std::f64::consts::PI / 180.0;
        Self {
            sigma: [1.0, 1.0, 0.2, 5.0 * deg, 5.0 * deg, 10.0 * deg],
            n_samples: 64,
        }
    }
}

impl PerturbConfig {
    pub fn covariance(&self) -> Cov6 {
        Cov6::from_diagonal(&self.sigma.map(|s| s * s))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 2 || self.sigma.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::InvalidConfig(format!("{self:?}")));
        }
        Ok(())
    }
}

/// Result of the perturbed registrations for one scan.
#[derive(Debug, Clone, PartialEq)]
pub struct McEstimate {
    pub label: Cov6,
    pub n_samples: usize,
    pub n_converged: usize,
    /// Registration errors `log(gt^-1 * T_hat)` of the converged runs.
    pub errors: Vec<Twist>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanSample {
    pub scan_id: usize,
    pub gt_pose: Pose,
    pub label: Cov6,
    pub n_samples: usize,
    pub n_converged: usize,
    pub scenario: Scenario,
    pub scan_path: String,
}

/// Indices of the scans that make up the map for scan `k`.
pub fn map_scan_indices(k: usize, len: usize, cfg: &MapConfig) -> Vec<usize> {
    let lo = k.saturating_sub(cfg.x_prev);
    let hi = (k + cfg.y_next).min(len.saturating_sub(1));
    (lo..=hi).filter(|&i| i != k && i < len).collect()
}

/// Concatenates the neighbours of scan `k` in the world frame (no filtering).
pub fn raw_reference_map(seq: &dyn ScanSequence, k: usize, cfg: &MapConfig) -> Result<PointCloud> {
    let ids = map_scan_indices(k, seq.len(), cfg);
    if ids.is_empty() {
        return Err(Error::NoMapScans(k));
    }
    let parts = ids
        .par_iter()
        .map(|&i| Ok(transform_cloud(&seq.load_scan(i)?, &seq.pose(i))))
        .collect::<Result<Vec<_>>>()?;
    Ok(PointCloud::concat(parts.iter()))
}

/// World-frame map for scan `k`: neighbours only, voxel filtered, with normals.
pub fn build_reference_map(
    seq: &dyn ScanSequence,
    k: usize,
    cfg: &MapConfig,
) -> Result<PointCloud> {
    cfg.validate()?;
    let raw = raw_reference_map(seq, k, cfg)?;
    let map = voxel_downsample(&raw, cfg.map_voxel)?;
    estimate_normals(&map, cfg.normal_neighbours)
}

/// Registers `scan` against `map` from `pcfg.n_samples` perturbed starts.
///
/// Run `i` draws its perturbation from a generator seeded by
/// `(seed, scan_id, i)`, so results do not depend on scheduling.
pub fn mc_covariance(
    scan: &PointCloud,
    map: &PointCloud,
    gt: &Pose,
    pcfg: &PerturbConfig,
    icfg: &IcpConfig,
    seed_value: u64,
    scan_id: u64,
) -> Result<McEstimate> {
    pcfg.validate()?;
    icfg.validate()?;
    let target = Target::new(map.clone())?;
    let factor = psd_cholesky(&pcfg.covariance().0)?;
    let runs: Vec<Option<Twist>> = (0..pcfg.n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::rng(seed_value, &[scan_id, i as u64]);
            let xi_o = sample_with_factor(&factor, &mut rng);
            let init = gt.compose(&exp_se3(&xi_o));
            match icp_with_target(scan, &target, &init, icfg) {
                Ok(res) if res.converged => log_se3(&(gt.inverse() * res.pose)).ok(),
                Ok(_) => None,
                Err(e) => {
                    log::debug!("scan {scan_id} run {i}: {e}");
                    None
                }
            }
        })
        .collect();
    let errors: Vec<Twist> = runs.into_iter().flatten().collect();
    let n = errors.len();
    if n < 2 {
        return Err(Error::InsufficientConvergence {
            converged: n,
            samples: pcfg.n_samples,
        });
    }
    Ok(McEstimate {
        label: second_moment(&errors),
        n_samples: pcfg.n_samples,
        n_converged: n,
        errors,
    })
}

/// `1/(n-1) * sum xi xi^T`, exactly symmetric.
pub fn second_moment(errors: &[Twist]) -> Cov6 {
    let mut m = Mat6::zeros();
    for e in errors {
        let v = e.to_vector();
        for r in 0..6 {
            for c in 0..=r {
                m[(r, c)] += v[r] * v[c];
            }
        }
    }
    let scale = 1.0 / (errors.len() as f64 - 1.0);
    for r in 0..6 {
        for c in 0..=r {
            m[(r, c)] *= scale;
            m[(c, r)] = m[(r, c)];
        }
    }
    Cov6(m)
}

/// Scan and reference map of a synthetic scene, both in the scene frame.
///
/// The two are independent noisy samplings of the same surfaces, so the
/// registration optimum is not exactly the identity. The map is voxel
/// filtered and carries normals; the scan is voxel filtered.
pub fn synthetic_pair(
    spec: &SceneSpec,
    map_voxel: f64,
    scan_voxel: f64,
) -> Result<(PointCloud, PointCloud)> {
    spec.validate()?;
    let map_spec = SceneSpec {
        seed: seed::derive(spec.seed, &[1]),
        ..*spec
    };
    let scan_spec = SceneSpec {
        seed: seed::derive(spec.seed, &[2]),
        ..*spec
    };
    let (map, _) = synth_scene(&map_spec);
    let map = estimate_normals(
        &voxel_downsample(&map, map_voxel)?,
        DEFAULT_NORMAL_NEIGHBOURS,
    )?;
    let (scan, _) = synth_scene(&scan_spec);
    Ok((voxel_downsample(&scan, scan_voxel)?, map))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub scenario: Scenario,
    pub stride: usize,
    pub map: MapConfig,
    pub perturb: PerturbConfig,
    pub icp: IcpConfig,
    pub seed: u64,
}

impl DatasetConfig {
    pub fn new(scenario: Scenario, seed: u64) -> Self {
        Self {
            scenario,
            stride: 50,
            map: MapConfig::for_scenario(scenario),
            perturb: PerturbConfig::default(),
            icp: IcpConfig::default(),
            seed,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct DatasetOutcome {
    pub samples: Vec<ScanSample>,
    /// Scans that could not be labelled, with the reason.
    pub failures: Vec<(usize, String)>,
}

/// Labels every `stride`-th scan of `seq`, in scan order.
pub fn generate_dataset(seq: &dyn ScanSequence, cfg: &DatasetConfig) -> Result<DatasetOutcome> {
    if cfg.stride == 0 {
        return Err(Error::InvalidConfig("stride must be positive".into()));
    }
    cfg.map.validate()?;
    cfg.perturb.validate()?;
    cfg.icp.validate()?;
    let mut out = DatasetOutcome::default();
    for k in (0..seq.len()).step_by(cfg.stride) {
        match label_scan(seq, k, cfg) {
            Ok(sample) => out.samples.push(sample),
            Err(e) => {
                log::warn!("scan {k} skipped: {e}");
                out.failures.push((k, e.to_string()));
            }
        }
    }
    Ok(out)
}

fn label_scan(seq: &dyn ScanSequence, k: usize, cfg: &DatasetConfig) -> Result<ScanSample> {
    let map = build_reference_map(seq, k, &cfg.map)?;
    let scan = voxel_downsample(&seq.load_scan(k)?, cfg.map.scan_voxel)?;
    let gt = seq.pose(k);
    let est = mc_covariance(&scan, &map, &gt, &cfg.perturb, &cfg.icp, cfg.seed, k as u64)?;
    Ok(ScanSample {
        scan_id: k,
        gt_pose: gt,
        label: est.label,
        n_samples: est.n_samples,
        n_converged: est.n_converged,
        scenario: cfg.scenario,
        scan_path: seq.scan_path(k),
    })
}

/// Consecutive train/test/eval segments.
pub fn split_dataset<T: Clone>(
    samples: &[T],
    ratios: (f64, f64, f64),
) -> Result<(Vec<T>, Vec<T>, Vec<T>)> {
    let (a, b, c) = ratios;
    if [a, b, c].iter().any(|r| !(*r >= 0.0)) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!("split ratios {ratios:?}")));
    }
    let n = samples.len();
    let n_train = ((n as f64 * a) + 1e-9).floor() as usize;
    let n_test = (((n as f64 * b) + 1e-9).floor() as usize).min(n - n_train.min(n));
    let n_train = n_train.min(n);
    Ok((
        samples[..n_train].to_vec(),
        samples[n_train..n_train + n_test].to_vec(),
        samples[n_train + n_test..].to_vec(),
    ))
}

/// One line of a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub scan_id: usize,
    pub scenario: Scenario,
    /// Row-major 3x4.
    pub gt_pose: [f64; 12],
    /// Row-major lower triangle, translation first.
    pub cov_lower: [f64; 21],
    pub n_samples: usize,
    pub n_converged: usize,
    pub scan_path: String,
}

impl From<&ScanSample> for DatasetRecord {
    fn from(s: &ScanSample) -> Self {
        Self {
            scan_id: s.scan_id,
            scenario: s.scenario,
            gt_pose: s.gt_pose.to_row_major_12(),
            cov_lower: s.label.to_lower21(),
            n_samples: s.n_samples,
            n_converged: s.n_converged,
            scan_path: s.scan_path.clone(),
        }
    }
}

impl DatasetRecord {
    pub fn pose(&self) -> Pose {
        Pose::from_row_major_12(&self.gt_pose)
    }

    pub fn cov(&self) -> Cov6 {
        Cov6::from_lower21(&self.cov_lower)
    }
}

pub fn write_dataset(path: impl AsRef<Path>, records: &[DatasetRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for r in records {
        let line = serde_json::to_string(r).expect("dataset records serialize");
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<DatasetRecord>> {
    let path = path.as_ref();
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: i + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}
