//! KITTI odometry layout: `sequences/<NN>/velodyne/*.bin`, `poses/<NN>.txt`,
//! `sequences/<NN>/calib.txt` and optionally `sequences/<NN>/times.txt`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::lie::{Pose, Vec3};

/// Frame period used when a sequence ships without `times.txt`.
pub const DEFAULT_FRAME_PERIOD: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct VelodyneScan {
    pub cloud: PointCloud,
    /// Points dropped because a coordinate was NaN or infinite.
    pub dropped: usize,
}

/// Reads `(x, y, z, reflectance)` little-endian f32 quadruples.
pub fn read_velodyne_bin(path: impl AsRef<Path>) -> Result<VelodyneScan> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_velodyne_bytes(&bytes).map_err(|reason| Error::MalformedFile {
        path: path.to_owned(),
        reason,
    })
}

pub fn parse_velodyne_bytes(bytes: &[u8]) -> std::result::Result<VelodyneScan, String> {
    if bytes.len() % 16 != 0 {
        return Err(format!("size {} is not a multiple of 16", bytes.len()));
    }
    let mut points = Vec::with_capacity(bytes.len() / 16);
    let mut dropped = 0;
    for rec in bytes.chunks_exact(16) {
        let f = |i: usize| f32::from_le_bytes(rec[4 * i..4 * i + 4].try_into().unwrap()) as f64;
        let p = Vec3::new(f(0), f(1), f(2));
        if p.iter().all(|x| x.is_finite()) {
            points.push(p);
        } else {
            dropped += 1;
        }
    }
    Ok(VelodyneScan {
        cloud: PointCloud::new(points),
        dropped,
    })
}

/// Writes points as f32 quadruples with zero reflectance.
pub fn write_velodyne_bin(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::with_capacity(cloud.len() * 16);
    for p in &cloud.points {
        for v in [p.x as f32, p.y as f32, p.z as f32, 0.0f32] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn parse_numbers(line: &str) -> std::result::Result<Vec<f64>, String> {
    line.split_whitespace()
        .map(|tok| tok.parse::<f64>().map_err(|e| format!("'{tok}': {e}")))
        .collect()
}

fn parse_row12(path: &Path, line_no: usize, text: &str) -> Result<[f64; 12]> {
    let parse_err = |reason: String| Error::Parse {
        path: path.to_owned(),
        line: line_no,
        reason,
    };
    let values = parse_numbers(text).map_err(parse_err)?;
    values
        .try_into()
        .map_err(|v: Vec<f64>| parse_err(format!("expected 12 numbers, got {}", v.len())))
}

/// Orthonormalizes only rotations that are visibly off, so well-formed
/// files round-trip bit-exactly.
fn to_pose(v: &[f64; 12]) -> Pose {
    let pose = Pose::from_row_major_12(v);
    if pose.is_valid(1e-12) {
        pose
    } else {
        pose.orthonormalized()
    }
}

/// Reads a KITTI pose file (one row-major 3x4 matrix per line).
pub fn read_pose_file(path: impl AsRef<Path>) -> Result<Vec<Pose>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut poses = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        poses.push(to_pose(&parse_row12(path, i + 1, line)?));
    }
    Ok(poses)
}

/// Reads the velodyne-to-camera transform (`Tr:` or `Tr_velo_to_cam:`).
pub fn read_calib(path: impl AsRef<Path>) -> Result<Pose> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    for (i, line) in text.lines().enumerate() {
        let Some((key, rest)) = line.split_once(':') else {
            continue;
        };
        if matches!(key.trim(), "Tr" | "Tr_velo_to_cam") {
            return Ok(to_pose(&parse_row12(path, i + 1, rest)?));
        }
    }
    Err(Error::MalformedFile {
        path: path.to_owned(),
        reason: "no Tr line".into(),
    })
}

/// Camera-frame ground truth converted to the LiDAR frame:
/// `T_w_velo = T_w_cam * Tr`.
pub fn read_poses(poses_path: impl AsRef<Path>, calib_path: impl AsRef<Path>) -> Result<Vec<Pose>> {
    let tr = read_calib(calib_path)?;
    Ok(read_pose_file(poses_path)?
        .iter()
        .map(|t_cam| t_cam.compose(&tr))
        .collect())
}

/// Formats one pose as 12 numbers with 17 significant digits.
pub fn format_pose_line(pose: &Pose) -> String {
    pose.to_row_major_12()
        .iter()
        .map(|v| format!("{v:.16e}"))
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn write_pose_file(path: impl AsRef<Path>, poses: &[Pose]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for p in poses {
        out.push_str(&format_pose_line(p));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_calib(path: impl AsRef<Path>, tr: &Pose) -> Result<()> {
    let path = path.as_ref();
    let text = format!("Tr: {}\n", format_pose_line(tr));
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_times(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut times = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        times.push(line.parse::<f64>().map_err(|e| Error::Parse {
            path: path.to_owned(),
            line: i + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(times)
}

pub fn write_times(path: impl AsRef<Path>, times: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for t in times {
        writeln!(f, "{t:.6e}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn check_timestamps(times: &[f64]) -> Result<()> {
    match times.windows(2).position(|w| !(w[1] > w[0])) {
        Some(i) => Err(Error::BadTimestamps(i + 1)),
        None => Ok(()),
    }
}

/// Source of posed scans, either on disk or in memory.
pub trait ScanSequence: Sync {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn pose(&self, k: usize) -> Pose;
    fn load_scan(&self, k: usize) -> Result<PointCloud>;
    /// Where the scan lives, recorded in dataset files.
    fn scan_path(&self, k: usize) -> String;
}

/// One KITTI odometry sequence, with poses in the LiDAR frame.
#[derive(Debug, Clone)]
pub struct SequenceHandle {
    pub scan_paths: Vec<PathBuf>,
    pub poses: Vec<Pose>,
    pub timestamps: Vec<f64>,
}

pub fn sequence_dir(root: &Path, seq: &str) -> PathBuf {
    root.join("sequences").join(seq)
}

pub fn poses_path(root: &Path, seq: &str) -> PathBuf {
    root.join("poses").join(format!("{seq}.txt"))
}

impl SequenceHandle {
    pub fn open(root: impl AsRef<Path>, seq: &str) -> Result<Self> {
        let root = root.as_ref();
        let dir = sequence_dir(root, seq);
        let velo = dir.join("velodyne");
        let mut scan_paths: Vec<PathBuf> = fs::read_dir(&velo)
            .map_err(|e| Error::io(&velo, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "bin"))
            .collect();
        scan_paths.sort();
        let poses = read_poses(poses_path(root, seq), dir.join("calib.txt"))?;
        if poses.len() != scan_paths.len() {
            return Err(Error::LengthMismatch {
                left: scan_paths.len(),
                right: poses.len(),
            });
        }
        let times_path = dir.join("times.txt");
        let timestamps = if times_path.exists() {
            read_times(&times_path)?
        } else {
            (0..poses.len())
                .map(|i| i as f64 * DEFAULT_FRAME_PERIOD)
                .collect()
        };
        if timestamps.len() != poses.len() {
            return Err(Error::LengthMismatch {
                left: poses.len(),
                right: timestamps.len(),
            });
        }
        check_timestamps(&timestamps)?;
        Ok(Self {
            scan_paths,
            poses,
            timestamps,
        })
    }
}

impl ScanSequence for SequenceHandle {
    fn len(&self) -> usize {
        self.poses.len()
    }

    fn pose(&self, k: usize) -> Pose {
        self.poses[k]
    }

    fn load_scan(&self, k: usize) -> Result<PointCloud> {
        let scan = read_velodyne_bin(&self.scan_paths[k])?;
        if scan.dropped > 0 {
            log::warn!(
                "{}: dropped {} non-finite points",
                self.scan_paths[k].display(),
                scan.dropped
            );
        }
        Ok(scan.cloud)
    }

    fn scan_path(&self, k: usize) -> String {
        self.scan_paths[k].display().to_string()
    }
}

/// Writes posed scans as a KITTI sequence with an identity calibration,
/// so the pose file holds the LiDAR poses directly.
pub fn write_sequence(
    root: impl AsRef<Path>,
    seq: &str,
    data: &InMemorySequence,
    period: f64,
) -> Result<()> {
    let root = root.as_ref();
    let dir = sequence_dir(root, seq);
    let velo = dir.join("velodyne");
    fs::create_dir_all(&velo).map_err(|e| Error::io(&velo, e))?;
    let poses_dir = root.join("poses");
    fs::create_dir_all(&poses_dir).map_err(|e| Error::io(&poses_dir, e))?;
    for (k, scan) in data.scans.iter().enumerate() {
        write_velodyne_bin(velo.join(format!("{k:06}.bin")), scan)?;
    }
    write_pose_file(poses_path(root, seq), &data.poses)?;
    write_calib(dir.join("calib.txt"), &Pose::identity())?;
    let times: Vec<f64> = (0..data.poses.len()).map(|k| k as f64 * period).collect();
    write_times(dir.join("times.txt"), &times)
}

/// Posed scans held in memory.
#[derive(Debug, Clone, Default)]
pub struct InMemorySequence {
    pub scans: Vec<PointCloud>,
    pub poses: Vec<Pose>,
}

impl ScanSequence for InMemorySequence {
    fn len(&self) -> usize {
        self.poses.len()
    }

    fn pose(&self, k: usize) -> Pose {
        self.poses[k]
    }

    fn load_scan(&self, k: usize) -> Result<PointCloud> {
        Ok(self.scans[k].clone())
    }

    fn scan_path(&self, k: usize) -> String {
        format!("memory:{k}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::{exp_se3, Twist};
    use tempfile::tempdir;

    /// Independent byte writer for test files.
    fn quad_bytes(quads: &[[f32; 4]]) -> Vec<u8> {
        let mut out = Vec::new();
        for q in quads {
            for v in q {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    #[test]
    fn single_point_file() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("a.bin");
        fs::write(&path, quad_bytes(&[[1.0, 2.0, 3.0, 0.5]])).unwrap();
        let scan = read_velodyne_bin(&path).unwrap();
        assert_eq!(scan.cloud.points, vec![Vec3::new(1.0, 2.0, 3.0)]);
        assert_eq!(scan.dropped, 0);
    }

    #[test]
    fn empty_file() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("e.bin");
        fs::write(&path, []).unwrap();
        assert!(read_velodyne_bin(&path).unwrap().cloud.is_empty());
    }

    #[test]
    fn nan_points_dropped() {
        let mut quads: Vec<[f32; 4]> = (0..10).map(|i| [i as f32, 0.0, 1.0, 0.0]).collect();
        quads[4][1] = f32::NAN;
        let scan = parse_velodyne_bytes(&quad_bytes(&quads)).unwrap();
        assert_eq!(scan.cloud.len(), 9);
        assert_eq!(scan.dropped, 1);
    }

    #[test]
    fn truncated_file_is_malformed() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("t.bin");
        fs::write(&path, vec![0u8; 20]).unwrap();
        assert!(matches!(
            read_velodyne_bin(&path),
            Err(Error::MalformedFile { .. })
        ));
    }

    #[test]
    fn velodyne_writer_roundtrip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("w.bin");
        let cloud = PointCloud::new(vec![Vec3::new(0.5, -1.25, 3.0), Vec3::new(10.0, 2.0, -1.0)]);
        write_velodyne_bin(&path, &cloud).unwrap();
        assert_eq!(read_velodyne_bin(&path).unwrap().cloud, cloud);
    }

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn identity_pose_identity_calib() {
        let dir = tempdir().unwrap();
        let poses = write(dir.path(), "p.txt", "1 0 0 0 0 1 0 0 0 0 1 0\n");
        let calib = write(
            dir.path(),
            "c.txt",
            "P0: 1 2 3\nTr: 1 0 0 0 0 1 0 0 0 0 1 0\n",
        );
        assert_eq!(read_poses(&poses, &calib).unwrap(), vec![Pose::identity()]);
    }

    #[test]
    fn translation_pose() {
        let dir = tempdir().unwrap();
        let poses = write(dir.path(), "p.txt", "1 0 0 4.5 0 1 0 -2 0 0 1 0.25\n");
        let calib = write(dir.path(), "c.txt", "Tr: 1 0 0 0 0 1 0 0 0 0 1 0\n");
        let got = read_poses(&poses, &calib).unwrap();
        assert_eq!(got[0].trans, Vec3::new(4.5, -2.0, 0.25));
    }

    #[test]
    fn calibration_is_applied() {
        let dir = tempdir().unwrap();
        let tr = Pose::rot_z(std::f64::consts::FRAC_PI_2);
        let cam = vec![
            exp_se3(&Twist::new(
                Vec3::new(1.0, 2.0, 3.0),
                Vec3::new(0.1, 0.2, 0.3),
            )),
            exp_se3(&Twist::new(
                Vec3::new(-4.0, 0.5, 1.0),
                Vec3::new(-0.3, 0.0, 1.2),
            )),
        ];
        let poses = dir.path().join("p.txt");
        let calib = dir.path().join("c.txt");
        write_pose_file(&poses, &cam).unwrap();
        write_calib(&calib, &tr).unwrap();
        let velo = read_poses(&poses, &calib).unwrap();
        for (v, c) in velo.iter().zip(&cam) {
            let back = v.compose(&tr.inverse());
            assert!((back.to_homogeneous() - c.to_homogeneous()).norm() < 1e-12);
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempdir().unwrap();
        let poses = write(
            dir.path(),
            "p.txt",
            "1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 0 0 1\n",
        );
        let calib = write(dir.path(), "c.txt", "Tr: 1 0 0 0 0 1 0 0 0 0 1 0\n");
        match read_poses(&poses, &calib) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let bad = write(dir.path(), "b.txt", "1 0 0 x 0 1 0 0 0 0 1 0\n");
        assert!(matches!(
            read_pose_file(&bad),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn missing_calibration_line() {
        let dir = tempdir().unwrap();
        let calib = write(dir.path(), "c.txt", "P0: 1 0 0\n");
        assert!(matches!(
            read_calib(&calib),
            Err(Error::MalformedFile { .. })
        ));
    }

    #[test]
    fn pose_text_roundtrip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("rt.txt");
        let poses: Vec<Pose> = (0..50)
            .map(|i| {
                let f = i as f64;
                exp_se3(&Twist::new(
                    Vec3::new(f * 1.37, -f / 3.0, 1e-7 * f),
                    Vec3::new(0.01 * f, -0.02 * f, 0.05),
                ))
            })
            .collect();
        write_pose_file(&path, &poses).unwrap();
        assert_eq!(read_pose_file(&path).unwrap(), poses);
    }

    #[test]
    fn timestamps_must_increase() {
        assert!(check_timestamps(&[0.0, 0.1, 0.2]).is_ok());
        assert!(matches!(
            check_timestamps(&[0.0, 0.1, 0.1]),
            Err(Error::BadTimestamps(2))
        ));
    }

    #[test]
    fn open_sequence_layout() {
        let dir = tempdir().unwrap();
        let root = dir.path();
        let seq_dir = sequence_dir(root, "03");
        fs::create_dir_all(seq_dir.join("velodyne")).unwrap();
        fs::create_dir_all(root.join("poses")).unwrap();
        let cloud = PointCloud::new(vec![Vec3::new(1.0, 1.0, 1.0)]);
        for i in 0..3 {
            write_velodyne_bin(seq_dir.join("velodyne").join(format!("{i:06}.bin")), &cloud)
                .unwrap();
        }
        write_pose_file(poses_path(root, "03"), &[Pose::identity(); 3]).unwrap();
        write_calib(seq_dir.join("calib.txt"), &Pose::identity()).unwrap();
        let seq = SequenceHandle::open(root, "03").unwrap();
        assert_eq!(seq.len(), 3);
        assert_eq!(seq.timestamps, vec![0.0, 0.1, 0.2]);
        assert_eq!(seq.load_scan(2).unwrap(), cloud);
    }
}
