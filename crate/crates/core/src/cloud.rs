//! Point clouds and the geometric primitives registration needs.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use nalgebra::SymmetricEigen;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lie::{Mat3, Pose, Vec3};

pub const DEFAULT_NORMAL_NEIGHBOURS: usize = 10;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    /// Unit normals, one per point, when estimated.
    pub normals: Option<Vec<Vec3>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        Self {
            points,
            normals: None,
        }
    }

    pub fn with_normals(points: Vec<Vec3>, normals: Vec<Vec3>) -> Result<Self> {
        if points.len() != normals.len() {
            return Err(Error::LengthMismatch {
                left: points.len(),
                right: normals.len(),
            });
        }
        Ok(Self {
            points,
            normals: Some(normals),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn has_normals(&self) -> bool {
        self.normals.is_some()
    }

    /// Checks the finite-coordinate and unit-normal invariants.
    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self
            .points
            .iter()
            .position(|p| p.iter().any(|x| !x.is_finite()))
        {
            return Err(Error::NumericalFailure(format!("non-finite point {i}")));
        }
        if let Some(normals) = &self.normals {
            if normals.len() != self.points.len() {
                return Err(Error::LengthMismatch {
                    left: self.points.len(),
                    right: normals.len(),
                });
            }
            if let Some(i) = normals.iter().position(|n| (n.norm() - 1.0).abs() > 1e-6) {
                return Err(Error::NumericalFailure(format!("normal {i} is not unit")));
            }
        }
        Ok(())
    }

    /// Concatenates clouds. Normals are kept only if every part has them.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a PointCloud>) -> PointCloud {
        let mut points = Vec::new();
        let mut normals = Some(Vec::new());
        for part in parts {
            points.extend_from_slice(&part.points);
            normals = match (normals, &part.normals) {
                (Some(mut acc), Some(n)) => {
                    acc.extend_from_slice(n);
                    Some(acc)
                }
                _ => None,
            };
        }
        if points.is_empty() {
            normals = None;
        }
        PointCloud { points, normals }
    }
}

fn voxel_key(p: &Vec3, voxel: f64) -> [i64; 3] {
    [
        (p.x / voxel).floor() as i64,
        (p.y / voxel).floor() as i64,
        (p.z / voxel).floor() as i64,
    ]
}

/// Replaces the points of each occupied voxel by their centroid.
///
/// Output is ordered by voxel index. Normals are not carried over.
pub fn voxel_downsample(cloud: &PointCloud, voxel: f64) -> Result<PointCloud> {
    if !(voxel > 0.0 && voxel.is_finite()) {
        return Err(Error::InvalidConfig(format!("voxel size {voxel}")));
    }
    let mut cells: BTreeMap<[i64; 3], (Vec3, usize)> = BTreeMap::new();
    for p in &cloud.points {
        let cell = cells
            .entry(voxel_key(p, voxel))
            .or_insert((Vec3::zeros(), 0));
        cell.0 += p;
        cell.1 += 1;
    }
    Ok(PointCloud::new(
        cells.into_values().map(|(sum, n)| sum / n as f64).collect(),
    ))
}

pub fn transform_cloud(cloud: &PointCloud, pose: &Pose) -> PointCloud {
    PointCloud {
        points: cloud
            .points
            .iter()
            .map(|p| pose.transform_point(p))
            .collect(),
        normals: cloud
            .normals
            .as_ref()
            .map(|ns| ns.iter().map(|n| pose.rot * n).collect()),
    }
}

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        axis: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// Exact Euclidean nearest-neighbour index (kd-tree).
///
/// Ties are resolved towards the lowest point id.
#[derive(Debug, Clone)]
pub struct NnIndex {
    points: Vec<Vec3>,
    order: Vec<usize>,
    nodes: Vec<Node>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    d2: f64,
    id: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2.total_cmp(&other.d2).then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl NnIndex {
    pub fn build(cloud: &PointCloud) -> Result<Self> {
        if cloud.is_empty() {
            return Err(Error::EmptyCloud);
        }
        let mut index = NnIndex {
            points: cloud.points.clone(),
            order: (0..cloud.len()).collect(),
            nodes: Vec::new(),
        };
        index.build_node(0, cloud.len());
        Ok(index)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, id: usize) -> &Vec3 {
        &self.points[id]
    }

    fn build_node(&mut self, start: usize, end: usize) -> usize {
        let slot = self.nodes.len();
        if end - start <= LEAF_SIZE {
            self.nodes.push(Node::Leaf { start, end });
            return slot;
        }
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for &i in &self.order[start..end] {
            lo = lo.inf(&self.points[i]);
            hi = hi.sup(&self.points[i]);
        }
        let axis = (hi - lo).imax();
        if hi[axis] - lo[axis] <= 0.0 {
            // All points coincide.
            self.nodes.push(Node::Leaf { start, end });
            return slot;
        }
        let mid = start + (end - start) / 2;
        let points = &self.points;
        self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
            points[a][axis].total_cmp(&points[b][axis])
        });
        let value = self.points[self.order[mid]][axis];
        self.nodes.push(Node::Leaf { start, end });
        let left = self.build_node(start, mid);
        let right = self.build_node(mid, end);
        self.nodes[slot] = Node::Split {
            axis,
            value,
            left,
            right,
        };
        slot
    }

    /// Nearest point id and its distance.
    pub fn nearest(&self, q: &Vec3) -> (usize, f64) {
        let mut best = Candidate {
            d2: f64::INFINITY,
            id: usize::MAX,
        };
        self.nearest_in(0, q, &mut best);
        (best.id, best.d2.sqrt())
    }

    fn nearest_in(&self, node: usize, q: &Vec3, best: &mut Candidate) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &id in &self.order[start..end] {
                    let c = Candidate {
                        d2: (self.points[id] - q).norm_squared(),
                        id,
                    };
                    if c < *best {
                        *best = c;
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.nearest_in(near, q, best);
                // Equal distances must still be visited for the id tie-break.
                if diff * diff <= best.d2 {
                    self.nearest_in(far, q, best);
                }
            }
        }
    }

    /// The `k` nearest ids (ascending by distance, then id).
    pub fn knn(&self, q: &Vec3, k: usize) -> Vec<(usize, f64)> {
        if k == 0 {
            return Vec::new();
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.knn_in(0, q, k, &mut heap);
        heap.into_sorted_vec()
            .into_iter()
            .map(|c| (c.id, c.d2.sqrt()))
            .collect()
    }

    fn knn_in(&self, node: usize, q: &Vec3, k: usize, heap: &mut BinaryHeap<Candidate>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for &id in &self.order[start..end] {
                    let c = Candidate {
                        d2: (self.points[id] - q).norm_squared(),
                        id,
                    };
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            Node::Split {
                axis,
                value,
                left,
                right,
            } => {
                let diff = q[axis] - value;
                let (near, far) = if diff < 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.knn_in(near, q, k, heap);
                let bound = if heap.len() < k {
                    f64::INFINITY
                } else {
                    heap.peek().unwrap().d2
                };
                if diff * diff <= bound {
                    self.knn_in(far, q, k, heap);
                }
            }
        }
    }
}

/// Unit eigenvector of the smallest eigenvalue and the eigenvalues sorted
/// descending.
pub(crate) fn scatter_eigen(scatter: &Mat3) -> ([f64; 3], [Vec3; 3]) {
    let eig = SymmetricEigen::new(*scatter);
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = idx.map(|i| eig.eigenvalues[i]);
    let vectors = idx.map(|i| eig.eigenvectors.column(i).into_owned());
    (values, vectors)
}

/// Mean and scatter (covariance about the mean, divided by n).
pub(crate) fn mean_and_scatter<'a>(points: impl Iterator<Item = &'a Vec3> + Clone) -> (Vec3, Mat3) {
    let mut n = 0usize;
    let mut mean = Vec3::zeros();
    for p in points.clone() {
        mean += p;
        n += 1;
    }
    if n == 0 {
        return (mean, Mat3::zeros());
    }
    mean /= n as f64;
    let mut scatter = Mat3::zeros();
    for p in points {
        let d = p - mean;
        scatter += d * d.transpose();
    }
    (mean, scatter / n as f64)
}

/// PCA normals from the `k` nearest neighbours (the point itself included).
///
/// Normals are oriented towards the sensor origin `(0, 0, 0)`.
pub fn estimate_normals(cloud: &PointCloud, k: usize) -> Result<PointCloud> {
    if k < 3 {
        return Err(Error::InvalidConfig(format!(
            "normal neighbourhood k={k} < 3"
        )));
    }
    if cloud.len() < k {
        return Err(Error::TooFewPoints {
            needed: k,
            got: cloud.len(),
        });
    }
    let index = NnIndex::build(cloud)?;
    let normals = cloud
        .points
        .par_iter()
        .map(|p| {
            let neighbours = index.knn(p, k);
            let (_, scatter) = mean_and_scatter(neighbours.iter().map(|(id, _)| index.point(*id)));
            let (_, vectors) = scatter_eigen(&scatter);
            let mut n = vectors[2].normalize();
            if n.dot(&(-p)) < 0.0 {
                n = -n;
            }
            n
        })
        .collect();
    PointCloud::with_normals(cloud.points.clone(), normals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize, extent: f64) -> PointCloud {
        PointCloud::new(
            (0..n)
                .map(|_| Vec3::from_fn(|_, _| rng.random_range(-extent..extent)))
                .collect(),
        )
    }

    #[test]
    fn downsample_empty() {
        let out = voxel_downsample(&PointCloud::default(), 0.5).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn downsample_single_voxel_centroid() {
        let c = PointCloud::new(vec![
            Vec3::new(0.1, 0.1, 0.1),
            Vec3::new(0.2, 0.3, 0.1),
            Vec3::new(0.3, 0.2, 0.4),
        ]);
        let out = voxel_downsample(&c, 1.0).unwrap();
        assert_eq!(out.len(), 1);
        assert!((out.points[0] - Vec3::new(0.2, 0.2, 0.2)).norm() < 1e-15);
    }

    #[test]
    fn downsample_rejects_bad_voxel() {
        assert!(voxel_downsample(&PointCloud::default(), 0.0).is_err());
    }

    #[test]
    fn downsample_matches_hash_grouping_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let c = random_cloud(&mut rng, 10, 1.0);
        let voxel = 0.5;
        let mut groups: HashMap<(i64, i64, i64), Vec<Vec3>> = HashMap::new();
        for p in &c.points {
            let key = (
                (p.x / voxel).floor() as i64,
                (p.y / voxel).floor() as i64,
                (p.z / voxel).floor() as i64,
            );
            groups.entry(key).or_default().push(*p);
        }
        let mut keys: Vec<_> = groups.keys().copied().collect();
        keys.sort();
        let expected: Vec<Vec3> = keys
            .iter()
            .map(|k| {
                let g = &groups[k];
                let mut s = Vec3::zeros();
                for p in g {
                    s += p;
                }
                s / g.len() as f64
            })
            .collect();
        assert_eq!(voxel_downsample(&c, voxel).unwrap().points, expected);
    }

    #[test]
    fn downsample_centroids_stay_near_voxel_centres() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let c = random_cloud(&mut rng, 2000, 3.0);
        let voxel = 0.7;
        let out = voxel_downsample(&c, voxel).unwrap();
        assert!(out.len() <= c.len());
        for p in &out.points {
            let centre = Vec3::from_fn(|i, _| ((p[i] / voxel).floor() + 0.5) * voxel);
            assert!((p - centre).norm() <= voxel * 3f64.sqrt() / 2.0 + 1e-12);
        }
    }

    #[test]
    fn index_rejects_empty() {
        assert!(matches!(
            NnIndex::build(&PointCloud::default()),
            Err(Error::EmptyCloud)
        ));
    }

    #[test]
    fn single_point_index() {
        let idx = NnIndex::build(&PointCloud::new(vec![Vec3::new(1.0, 2.0, 3.0)])).unwrap();
        let (id, d) = idx.nearest(&Vec3::new(-4.0, 0.0, 9.0));
        assert_eq!(id, 0);
        assert!((d - (25.0f64 + 4.0 + 36.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn query_on_existing_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let c = random_cloud(&mut rng, 300, 5.0);
        let idx = NnIndex::build(&c).unwrap();
        let (id, d) = idx.nearest(&c.points[42]);
        assert_eq!(id, 42);
        assert_eq!(d, 0.0);
    }

    fn linear_scan(c: &PointCloud, q: &Vec3) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for (i, p) in c.points.iter().enumerate() {
            let d2 = (p - q).norm_squared();
            if d2 < best.1 {
                best = (i, d2);
            }
        }
        (best.0, best.1.sqrt())
    }

    #[test]
    fn nearest_matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let c = random_cloud(&mut rng, 1000, 10.0);
        let idx = NnIndex::build(&c).unwrap();
        for _ in 0..100 {
            let q = Vec3::from_fn(|_, _| rng.random_range(-12.0..12.0));
            assert_eq!(idx.nearest(&q), linear_scan(&c, &q));
        }
    }

    #[test]
    fn ties_resolve_to_lowest_id() {
        // Grid with many duplicates and equidistant candidates.
        let mut pts = Vec::new();
        for _ in 0..3 {
            for x in 0..6 {
                for y in 0..6 {
                    pts.push(Vec3::new(x as f64, y as f64, 0.0));
                }
            }
        }
        let c = PointCloud::new(pts);
        let idx = NnIndex::build(&c).unwrap();
        for x in 0..10 {
            for y in 0..10 {
                let q = Vec3::new(x as f64 * 0.5, y as f64 * 0.5, 0.3);
                assert_eq!(idx.nearest(&q), linear_scan(&c, &q), "query {q:?}");
            }
        }
    }

    #[test]
    fn knn_matches_sorted_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let c = random_cloud(&mut rng, 500, 4.0);
        let idx = NnIndex::build(&c).unwrap();
        for _ in 0..50 {
            let q = Vec3::from_fn(|_, _| rng.random_range(-5.0..5.0));
            let mut all: Vec<(usize, f64)> = c
                .points
                .iter()
                .enumerate()
                .map(|(i, p)| (i, (p - q).norm_squared()))
                .collect();
            all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            let got: Vec<usize> = idx.knn(&q, 10).into_iter().map(|(i, _)| i).collect();
            let want: Vec<usize> = all.iter().take(10).map(|(i, _)| *i).collect();
            assert_eq!(got, want);
        }
    }

    #[test]
    fn planar_normals_are_vertical() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let pts = (0..400)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                    0.0,
                )
            })
            .collect();
        let out = estimate_normals(&PointCloud::new(pts), 8).unwrap();
        for n in out.normals.as_ref().unwrap() {
            assert!((n.z.abs() - 1.0).abs() < 1e-9);
        }
        out.validate().unwrap();
    }

    #[test]
    fn plane_below_origin_normals_face_up() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let pts = (0..400)
            .map(|_| {
                Vec3::new(
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                    -1.5,
                )
            })
            .collect();
        let out = estimate_normals(&PointCloud::new(pts), 8).unwrap();
        for n in out.normals.as_ref().unwrap() {
            assert!(n.z > 0.999);
        }
    }

    #[test]
    fn sphere_normals_point_inward() {
        // Fibonacci sphere.
        let n = 2000;
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        let pts = (0..n)
            .map(|i| {
                let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                let r = (1.0 - z * z).sqrt();
                let phi = golden * i as f64;
                Vec3::new(r * phi.cos(), r * phi.sin(), z)
            })
            .collect();
        let out = estimate_normals(&PointCloud::new(pts), 10).unwrap();
        for (p, nrm) in out.points.iter().zip(out.normals.as_ref().unwrap()) {
            assert!(nrm.dot(&(-p / p.norm())) > 0.99);
        }
    }

    #[test]
    fn collinear_normals_are_orthogonal_to_line() {
        let dir = Vec3::new(1.0, 2.0, -0.5).normalize();
        let pts = (0..30)
            .map(|i| Vec3::new(3.0, 1.0, 2.0) + dir * (i as f64 * 0.1))
            .collect();
        let out = estimate_normals(&PointCloud::new(pts), 5).unwrap();
        for n in out.normals.as_ref().unwrap() {
            assert!(n.dot(&dir).abs() < 1e-6);
            assert!((n.norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn normals_need_k_points() {
        let c = PointCloud::new(vec![Vec3::zeros(); 4]);
        assert!(matches!(
            estimate_normals(&c, 10),
            Err(Error::TooFewPoints { needed: 10, got: 4 })
        ));
    }

    #[test]
    fn transform_identity_and_translation() {
        let mut rng = ChaCha8Rng::seed_from_u64(28);
        let c = estimate_normals(&random_cloud(&mut rng, 50, 2.0), 5).unwrap();
        assert_eq!(transform_cloud(&c, &Pose::identity()), c);
        let shift = Vec3::new(1.0, -2.0, 0.5);
        let moved = transform_cloud(&c, &Pose::from_translation(shift));
        for (a, b) in moved.points.iter().zip(&c.points) {
            assert_eq!(*a, b + shift);
        }
        assert_eq!(moved.normals, c.normals);
    }

    #[test]
    fn transform_roundtrip_and_isometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let c = random_cloud(&mut rng, 100, 20.0);
        let pose = crate::lie::exp_se3(&crate::lie::Twist::new(
            Vec3::new(3.0, -1.0, 2.0),
            Vec3::new(0.4, -0.9, 1.3),
        ));
        let moved = transform_cloud(&c, &pose);
        let back = transform_cloud(&moved, &pose.inverse());
        for (a, b) in back.points.iter().zip(&c.points) {
            assert!((a - b).norm() < 1e-9);
        }
        for i in 0..20 {
            for j in 0..20 {
                let d0 = (c.points[i] - c.points[j]).norm();
                let d1 = (moved.points[i] - moved.points[j]).norm();
                assert!((d0 - d1).abs() < 1e-9);
            }
        }
    }
}
