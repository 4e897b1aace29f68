//! Synthetic scenes with controlled geometric degeneracy.
//!
//! All scenes stand on the ground plane `z = 0`. Range noise is Gaussian,
//! truncated at 3 sigma, and applied along the ray from a virtual sensor
//! mounted at [`SENSOR_HEIGHT`] above the origin.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::lie::{Pose, Vec3};

use super::kitti::InMemorySequence;

pub const SENSOR_HEIGHT: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneKind {
    /// Two parallel walls and a floor, axis along x.
    Tunnel,
    /// Four walls, floor and two interior boxes.
    Room,
    /// Tunnel with periodic pillars along both walls.
    Corridor,
    /// Ground only.
    Plane,
}

impl std::str::FromStr for SceneKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tunnel" => Ok(Self::Tunnel),
            "room" => Ok(Self::Room),
            "corridor" => Ok(Self::Corridor),
            "plane" => Ok(Self::Plane),
            other => Err(format!("unknown scene kind '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub kind: SceneKind,
    /// Extent along x, metres.
    pub length: f64,
    /// Extent along y, metres.
    pub width: f64,
    /// Wall height, metres.
    pub height: f64,
    /// Points per square metre of surface.
    pub point_density: f64,
    pub sensor_noise_sigma: f64,
    pub seed: u64,
}

impl SceneSpec {
    pub fn new(kind: SceneKind, seed: u64) -> Self {
        let (length, width, height) = match kind {
            SceneKind::Tunnel | SceneKind::Corridor => (60.0, 8.0, 5.0),
            SceneKind::Room => (20.0, 14.0, 3.0),
            SceneKind::Plane => (40.0, 40.0, 0.0),
        };
        Self {
            kind,
            length,
            width,
            height,
            point_density: 6.0,
            sensor_noise_sigma: 0.02,
            seed,
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        let walls_ok = self.kind == SceneKind::Plane || self.height > 0.0;
        if self.length > 0.0
            && self.width > 0.0
            && self.point_density > 0.0
            && walls_ok
            && self.sensor_noise_sigma >= 0.0
        {
            Ok(())
        } else {
            Err(crate::Error::InvalidConfig(format!("scene {self:?}")))
        }
    }
}

/// Planar rectangle `origin + s * e1 + t * e2`, `s, t` in `[0, 1]`.
#[derive(Debug, Clone, Copy)]
struct Patch {
    origin: Vec3,
    e1: Vec3,
    e2: Vec3,
}

impl Patch {
    fn new(origin: [f64; 3], e1: [f64; 3], e2: [f64; 3]) -> Self {
        Self {
            origin: origin.into(),
            e1: e1.into(),
            e2: e2.into(),
        }
    }

    fn area(&self) -> f64 {
        self.e1.cross(&self.e2).norm()
    }
}

/// Four vertical sides and the top of an axis-aligned box on the floor.
fn box_patches(centre: [f64; 2], size: [f64; 3]) -> Vec<Patch> {
    let (x0, y0) = (centre[0] - size[0] / 2.0, centre[1] - size[1] / 2.0);
    let (x1, y1) = (x0 + size[0], y0 + size[1]);
    let h = size[2];
    vec![
        Patch::new([x0, y0, 0.0], [size[0], 0.0, 0.0], [0.0, 0.0, h]),
        Patch::new([x0, y1, 0.0], [size[0], 0.0, 0.0], [0.0, 0.0, h]),
        Patch::new([x0, y0, 0.0], [0.0, size[1], 0.0], [0.0, 0.0, h]),
        Patch::new([x1, y0, 0.0], [0.0, size[1], 0.0], [0.0, 0.0, h]),
        Patch::new([x0, y0, h], [size[0], 0.0, 0.0], [0.0, size[1], 0.0]),
    ]
}

fn scene_patches(spec: &SceneSpec) -> Vec<Patch> {
    let (l, w, h) = (spec.length, spec.width, spec.height);
    let floor = Patch::new([-l / 2.0, -w / 2.0, 0.0], [l, 0.0, 0.0], [0.0, w, 0.0]);
    let side_walls = [
        Patch::new([-l / 2.0, -w / 2.0, 0.0], [l, 0.0, 0.0], [0.0, 0.0, h]),
        Patch::new([-l / 2.0, w / 2.0, 0.0], [l, 0.0, 0.0], [0.0, 0.0, h]),
    ];
    match spec.kind {
        SceneKind::Plane => vec![floor],
        SceneKind::Tunnel => {
            let mut v = vec![floor];
            v.extend(side_walls);
            v
        }
        SceneKind::Corridor => {
            let mut v = vec![floor];
            v.extend(side_walls);
            let spacing = 6.0;
            let (depth, span) = (0.5, 0.6);
            let count = (l / spacing).floor() as i64;
            for i in 0..count {
                let x = -l / 2.0 + spacing * (i as f64 + 0.5);
                v.extend(box_patches([x, -w / 2.0 + depth / 2.0], [span, depth, h]));
                v.extend(box_patches([x, w / 2.0 - depth / 2.0], [span, depth, h]));
            }
            v
        }
        SceneKind::Room => {
            let mut v = vec![floor];
            v.extend(side_walls);
            v.push(Patch::new(
                [-l / 2.0, -w / 2.0, 0.0],
                [0.0, w, 0.0],
                [0.0, 0.0, h],
            ));
            v.push(Patch::new(
                [l / 2.0, -w / 2.0, 0.0],
                [0.0, w, 0.0],
                [0.0, 0.0, h],
            ));
            // Asymmetric furniture so no in-plane symmetry survives.
            v.extend(box_patches([0.2 * l, 0.2 * w], [2.0, 1.5, 1.5]));
            v.extend(box_patches([-0.25 * l, -0.2 * w], [1.0, 3.0, 2.0]));
            v
        }
    }
}

fn description(spec: &SceneSpec) -> String {
    let what = match spec.kind {
        SceneKind::Tunnel => "tunnel: floor + two walls, axis along x",
        SceneKind::Room => "room: floor + four walls + two boxes",
        SceneKind::Corridor => "corridor: tunnel + wall pillars every 6 m",
        SceneKind::Plane => "plane: ground only",
    };
    format!(
        "{what}; {}x{}x{} m, {} pts/m^2, noise {} m, seed {}",
        spec.length,
        spec.width,
        spec.height,
        spec.point_density,
        spec.sensor_noise_sigma,
        spec.seed
    )
}

/// Uniform surface samples with range noise along the ray from `sensor`.
fn sample_surfaces(spec: &SceneSpec, sensor: &Vec3, rng: &mut ChaCha8Rng) -> Vec<Vec3> {
    let noise = Normal::new(0.0, spec.sensor_noise_sigma.max(0.0)).unwrap();
    let clip = 3.0 * spec.sensor_noise_sigma;
    let mut points = Vec::new();
    for patch in scene_patches(spec) {
        let n = (patch.area() * spec.point_density).round() as usize;
        for _ in 0..n {
            let s: f64 = rng.random();
            let t: f64 = rng.random();
            let p = patch.origin + patch.e1 * s + patch.e2 * t;
            let ray = p - sensor;
            let range = ray.norm();
            let dr = noise.sample(rng).clamp(-clip, clip);
            points.push(if range > 0.0 {
                p + ray * (dr / range)
            } else {
                p
            });
        }
    }
    points
}

/// Samples the scene surfaces. Deterministic in `(spec, seed)`.
pub fn synth_scene(spec: &SceneSpec) -> (PointCloud, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let sensor = Vec3::new(0.0, 0.0, SENSOR_HEIGHT);
    (
        PointCloud::new(sample_surfaces(spec, &sensor, &mut rng)),
        description(spec),
    )
}

/// A drive through a synthetic scene, one scan per frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequenceSpec {
    pub scene: SceneSpec,
    pub frames: usize,
    /// Distance between consecutive frames along x, metres.
    pub step: f64,
    /// Points farther than this from the sensor are not returned.
    pub max_range: f64,
}

impl SequenceSpec {
    /// A corridor long enough for `frames` scans one metre apart.
    pub fn new(kind: SceneKind, frames: usize, seed: u64) -> Self {
        let max_range = 20.0;
        let step = 1.0;
        let mut scene = SceneSpec::new(kind, seed);
        scene.length = scene
            .length
            .max(frames.saturating_sub(1) as f64 * step + 2.0 * max_range);
        Self {
            scene,
            frames,
            step,
            max_range,
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        self.scene.validate()?;
        let travel = self.frames.saturating_sub(1) as f64 * self.step;
        if self.frames == 0
            || !(self.step > 0.0)
            || !(self.max_range > 0.0)
            || travel >= self.scene.length
        {
            return Err(crate::Error::InvalidConfig(format!("sequence {self:?}")));
        }
        Ok(())
    }

    /// Sensor poses: centred along the scene axis with a gentle yaw sway.
    pub fn poses(&self) -> Vec<Pose> {
        let x0 = -(self.frames.saturating_sub(1) as f64) * self.step / 2.0;
        (0..self.frames)
            .map(|k| {
                let mut p = Pose::rot_z(0.03 * (0.3 * k as f64).sin());
                p.trans = Vec3::new(
                    x0 + k as f64 * self.step,
                    0.2 * (0.1 * k as f64).sin(),
                    SENSOR_HEIGHT,
                );
                p
            })
            .collect()
    }
}

/// Scans in the sensor frame with their poses. Every scan is an independent
/// noisy sampling of the scene, cropped to `max_range`.
pub fn synth_sequence(spec: &SequenceSpec) -> crate::Result<InMemorySequence> {
    spec.validate()?;
    let poses = spec.poses();
    let scans = poses
        .iter()
        .enumerate()
        .map(|(k, pose)| {
            let mut rng = crate::seed::rng(spec.scene.seed, &[k as u64]);
            let inv = pose.inverse();
            let points = sample_surfaces(&spec.scene, &pose.trans, &mut rng)
                .into_iter()
                .filter(|p| (p - pose.trans).norm() <= spec.max_range)
                .map(|p| inv.transform_point(&p))
                .collect();
            PointCloud::new(points)
        })
        .collect();
    Ok(InMemorySequence { scans, poses })
}
