//! Point-to-plane ICP with right-multiplicative pose updates.

use serde::{Deserialize, Serialize};

use crate::cloud::{NnIndex, PointCloud};
use crate::error::{Error, Result};
use crate::lie::{exp_se3, Mat6, Pose, Twist, Vec3, Vec6};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcpConfig {
    pub max_iterations: usize,
    /// Stop when the translation step is below this, metres.
    pub translation_tol: f64,
    /// ... and the rotation step is below this, radians.
    pub rotation_tol: f64,
    pub max_corr_dist: f64,
    pub min_correspondences: usize,
    /// Condition number of the normal equations above which the result is
    /// flagged degenerate.
    pub degeneracy_threshold: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            max_iterations: 30,
            translation_tol: 1e-4,
            rotation_tol: 1e-5,
            max_corr_dist: 2.0,
            min_correspondences: 50,
            degeneracy_threshold: 1e6,
        }
    }
}

impl IcpConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.max_iterations > 0
            && self.translation_tol > 0.0
            && self.rotation_tol > 0.0
            && self.max_corr_dist > 0.0
            && self.degeneracy_threshold > 0.0;
        if !positive || self.min_correspondences < 6 {
            return Err(Error::InvalidConfig(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcpResult {
    pub pose: Pose,
    pub converged: bool,
    pub iterations: usize,
    pub final_rmse: f64,
    pub degenerate: bool,
    /// Condition number of the last normal-equation solve.
    pub condition: f64,
    /// Point-to-plane RMSE at the start of every iteration.
    pub rmse_history: Vec<f64>,
}

/// Target cloud with its search index, reusable across many registrations.
#[derive(Debug, Clone)]
pub struct Target {
    cloud: PointCloud,
    index: NnIndex,
}

impl Target {
    pub fn new(cloud: PointCloud) -> Result<Self> {
        if !cloud.has_normals() {
            return Err(Error::InvalidConfig(
                "point-to-plane target needs normals".into(),
            ));
        }
        let index = NnIndex::build(&cloud)?;
        Ok(Self { cloud, index })
    }

    pub fn cloud(&self) -> &PointCloud {
        &self.cloud
    }

    fn normal(&self, id: usize) -> &Vec3 {
        &self.cloud.normals.as_ref().unwrap()[id]
    }
}

/// Solves `(A + lambda I) delta = b` with `lambda = 1e-9 trace(A) / 6`.
///
/// Returns the step and the condition number `max_eig / max(min_eig, 1e-300)`
/// of `A` itself.
pub fn solve_normal_equations(a: &Mat6, b: &Vec6) -> Result<(Twist, f64)> {
    if a.iter().chain(b.iter()).any(|x| !x.is_finite()) {
        return Err(Error::NumericalFailure(
            "non-finite normal equations".into(),
        ));
    }
    let sym = 0.5 * (a + a.transpose());
    let eig = sym.symmetric_eigenvalues();
    let condition = eig.max() / eig.min().max(1e-300);
    let lambda = 1e-9 * sym.trace() / 6.0;
    let damped = sym + Mat6::identity() * lambda;
    let delta = match damped.cholesky() {
        Some(chol) => chol.solve(b),
        None => damped
            .lu()
            .solve(b)
            .ok_or_else(|| Error::NumericalFailure("singular normal equations".into()))?,
    };
    if delta.iter().any(|x| !x.is_finite()) {
        return Err(Error::NumericalFailure(
            "non-finite registration step".into(),
        ));
    }
    Ok((Twist::from_vector(&delta), condition))
}

pub fn icp_point_to_plane(
    source: &PointCloud,
    target: &PointCloud,
    init: &Pose,
    cfg: &IcpConfig,
) -> Result<IcpResult> {
    let target = Target::new(target.clone())?;
    icp_with_target(source, &target, init, cfg)
}

/// Same as [`icp_point_to_plane`] against a prebuilt [`Target`].
pub fn icp_with_target(
    source: &PointCloud,
    target: &Target,
    init: &Pose,
    cfg: &IcpConfig,
) -> Result<IcpResult> {
    cfg.validate()?;
    if source.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let max_d2 = cfg.max_corr_dist * cfg.max_corr_dist;
    let mut pose = *init;
    let mut history = Vec::with_capacity(cfg.max_iterations);
    let mut converged = false;
    let mut condition = f64::NAN;
    let mut iterations = 0;

    for _ in 0..cfg.max_iterations {
        iterations += 1;
        let mut a = Mat6::zeros();
        let mut b = Vec6::zeros();
        let mut sq_sum = 0.0;
        let mut count = 0usize;
        for p in &source.points {
            let world = pose.transform_point(p);
            let (id, dist) = target.index.nearest(&world);
            if dist * dist > max_d2 {
                continue;
            }
            let n = target.normal(id);
            let r = n.dot(&(world - target.index.point(id)));
            let m = pose.rot.transpose() * n;
            let pm = p.cross(&m);
            let j = Vec6::new(m.x, m.y, m.z, pm.x, pm.y, pm.z);
            a += j * j.transpose();
            b -= j * r;
            sq_sum += r * r;
            count += 1;
        }
        if count < cfg.min_correspondences {
            return Err(Error::TooFewCorrespondences {
                needed: cfg.min_correspondences,
                got: count,
            });
        }
        history.push((sq_sum / count as f64).sqrt());

        let (delta, cond) = solve_normal_equations(&a, &b)?;
        condition = cond;
        pose = pose.compose(&exp_se3(&delta));
        if delta.u.norm() < cfg.translation_tol && delta.w.norm() < cfg.rotation_tol {
            converged = true;
            break;
        }
    }

    Ok(IcpResult {
        pose,
        converged,
        iterations,
        final_rmse: *history.last().unwrap(),
        degenerate: condition > cfg.degeneracy_threshold,
        condition,
        rmse_history: history,
    })
}
