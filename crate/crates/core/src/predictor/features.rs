//! Handcrafted scan descriptor.
//!
//! Layout (121 values with the default 16 sectors):
//!
//! | index        | value                                              |
//! |--------------|----------------------------------------------------|
//! | 0            | point count                                        |
//! | 1..4         | eigenvalues of the global scatter, descending      |
//! | 4            | mean range                                         |
//! | 5..8         | global linearity, planarity, sphericity            |
//! | 8            | height spread (std of z)                           |
//! | 9 + 7j ..    | sector `j`: ln(1+n), mean range, linearity,        |
//! |              | planarity, sphericity, normal-z, height spread     |
//!
//! Sector `j = floor(S * (atan2(y, x) + pi) / (2 pi))`. "normal-z" is the
//! absolute z component of the smallest-eigenvalue direction of the sector
//! scatter. Eigen features are zero for sectors with fewer than 3 points.

use serde::{Deserialize, Serialize};

use crate::cloud::{mean_and_scatter, scatter_eigen, PointCloud};
use crate::error::{Error, Result};
use crate::lie::Vec3;

pub const GLOBAL_FEATURES: usize = 9;
pub const SECTOR_FEATURES: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub sectors: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { sectors: 16 }
    }
}

impl FeatureConfig {
    pub fn dim(&self) -> usize {
        GLOBAL_FEATURES + SECTOR_FEATURES * self.sectors
    }

    pub fn sector_of(&self, p: &Vec3) -> usize {
        let s = self.sectors as f64;
        let j =
            (s * (p.y.atan2(p.x) + std::f64::consts::PI) / (2.0 * std::f64::consts::PI)).floor();
        (j.max(0.0) as usize).min(self.sectors - 1)
    }
}

/// Linearity, planarity, sphericity; zeros for a degenerate scatter.
fn shape_features(eig: &[f64; 3]) -> [f64; 3] {
    let l1 = eig[0];
    if !(l1 > 0.0) {
        return [0.0; 3];
    }
    let l2 = eig[1].max(0.0);
    let l3 = eig[2].max(0.0);
    [(l1 - l2) / l1, (l2 - l3) / l1, l3 / l1]
}

fn z_spread<'a>(points: impl Iterator<Item = &'a Vec3> + Clone) -> f64 {
    let n = points.clone().count() as f64;
    if n == 0.0 {
        return 0.0;
    }
    let mean = points.clone().map(|p| p.z).sum::<f64>() / n;
    (points.map(|p| (p.z - mean).powi(2)).sum::<f64>() / n).sqrt()
}

pub fn extract_features(scan: &PointCloud, cfg: &FeatureConfig) -> Result<Vec<f64>> {
    if scan.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if cfg.sectors == 0 {
        return Err(Error::InvalidConfig(
            "feature extractor needs at least one sector".into(),
        ));
    }
    let pts = &scan.points;
    let mut f = Vec::with_capacity(cfg.dim());

    let n = pts.len() as f64;
    let (_, scatter) = mean_and_scatter(pts.iter());
    let (eig, _) = scatter_eigen(&scatter);
    f.push(n);
    f.extend(eig.map(|e| e.max(0.0)));
    f.push(pts.iter().map(|p| p.norm()).sum::<f64>() / n);
    if pts.len() >= 3 {
        f.extend(shape_features(&eig));
    } else {
        f.extend([0.0; 3]);
    }
    f.push(z_spread(pts.iter()));

    let mut sectors: Vec<Vec<Vec3>> = vec![Vec::new(); cfg.sectors];
    for p in pts {
        sectors[cfg.sector_of(p)].push(*p);
    }
    for sector in &sectors {
        if sector.is_empty() {
            f.extend([0.0; SECTOR_FEATURES]);
            continue;
        }
        let m = sector.len() as f64;
        f.push(m.ln_1p());
        f.push(sector.iter().map(|p| p.norm()).sum::<f64>() / m);
        if sector.len() >= 3 {
            let (_, s) = mean_and_scatter(sector.iter());
            let (eig, vecs) = scatter_eigen(&s);
            f.extend(shape_features(&eig));
            f.push(if eig[0] > 0.0 { vecs[2].z.abs() } else { 0.0 });
        } else {
            f.extend([0.0; 4]);
        }
        f.push(z_spread(sector.iter()));
    }
    debug_assert_eq!(f.len(), cfg.dim());
    Ok(f)
}
