use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use icpcov::cloud::{voxel_downsample, PointCloud};
use icpcov::dataio::kitti::{read_pose_file, read_times, write_times, DEFAULT_FRAME_PERIOD};
use icpcov::dataio::{
    read_velodyne_bin, reference_regimes, simulate_icp_measurements, synth_sequence,
    synth_trajectory, two_regime_covariances, write_sequence, ScanSequence, SequenceHandle,
    SequenceSpec, TrajectorySpec,
};
use icpcov::fusion::{
    mean_covariance, run_filter_with_window, write_trajectory, FilterState, ProcessNoise,
    ScanMeasurement,
};
use icpcov::mc_dataset::{
    generate_dataset, read_dataset, split_dataset, write_dataset, DatasetConfig, DatasetRecord,
};
use icpcov::metrics::{mean, CovarianceReport, TrajectoryReport};
use icpcov::predictor::{load_model, predict, save_model, train, TrainConfig, TrainSample};
use icpcov::{Cov6, Error, Pose, Result};
use serde_json::{json, Value};

use crate::args::*;
use crate::table::{read_covs, write_covs, write_text};

/// Scans are thinned to this voxel before labelling, training and prediction.
const SCAN_VOXEL: f64 = 0.1;

pub fn run(cmd: &Command, seed: u64) -> Result<Value> {
    match cmd {
        Command::Synth(a) => synth(a, seed),
        Command::Dataset(a) => dataset(a, seed),
        Command::Train(a) => train_cmd(a, seed),
        Command::Predict(a) => predict_cmd(a),
        Command::Fuse(a) => fuse(a),
        Command::Eval(a) => eval(a),
        Command::PlotData(a) => plot_data(a),
    }
}

fn synth(a: &SynthArgs, seed: u64) -> Result<Value> {
    match a.kind {
        SynthKind::Sequence => {
            let spec = SequenceSpec::new(a.scene, a.frames, seed);
            let seq = synth_sequence(&spec)?;
            write_sequence(&a.out, &a.seq, &seq, DEFAULT_FRAME_PERIOD)?;
            Ok(json!({ "frames": seq.len(), "scene_length": spec.scene.length }))
        }
        SynthKind::Measurements => {
            if a.frames < 2 || a.block == 0 {
                return Err(Error::InvalidConfig(
                    "need at least 2 frames and a positive block".into(),
                ));
            }
            let spec = TrajectorySpec {
                frames: a.frames,
                ..Default::default()
            };
            let gt = synth_trajectory(&spec);
            let (low, high) = reference_regimes();
            let covs = two_regime_covariances(a.frames, a.block, &low, &high);
            let meas = simulate_icp_measurements(&gt, &covs, seed)?;
            let poses: Vec<Pose> = meas.iter().map(|m| m.pose).collect();
            let times: Vec<f64> = (0..a.frames).map(|k| k as f64 * spec.dt).collect();
            std::fs::create_dir_all(&a.out).map_err(|e| crate::table::io_error(&a.out, e))?;
            write_trajectory(a.out.join("gt.txt"), &gt)?;
            write_trajectory(a.out.join("poses.txt"), &poses)?;
            write_times(a.out.join("times.txt"), &times)?;
            let rows: Vec<(usize, Cov6)> = covs.into_iter().enumerate().collect();
            write_covs(&a.out.join("covs.csv"), &rows)?;
            Ok(json!({ "frames": a.frames }))
        }
    }
}

fn dataset(a: &DatasetArgs, seed: u64) -> Result<Value> {
    let seq = SequenceHandle::open(&a.input, &a.seq)?;
    let mut cfg = DatasetConfig::new(a.scenario, seed);
    cfg.stride = a.stride;
    cfg.perturb.n_samples = a.samples;
    if let Some(v) = a.map_voxel {
        cfg.map.map_voxel = v;
    }
    let outcome = generate_dataset(&seq, &cfg)?;
    let records: Vec<DatasetRecord> = outcome.samples.iter().map(DatasetRecord::from).collect();
    write_dataset(&a.out, &records)?;
    if a.split {
        let (tr, te, ev) = split_dataset(&records, (0.7, 0.2, 0.1))?;
        for (part, rows) in [("train", tr), ("test", te), ("eval", ev)] {
            write_dataset(a.out.with_extension(format!("{part}.jsonl")), &rows)?;
        }
    }
    let failures: Vec<Value> = outcome
        .failures
        .iter()
        .map(|(k, why)| json!({ "scan": k, "reason": why }))
        .collect();
    let summary = json!({
        "config": cfg,
        "labelled": records.len(),
        "failures": failures,
    });
    if records.is_empty() && !outcome.failures.is_empty() {
        return Err(Error::InsufficientConvergence {
            converged: 0,
            samples: outcome.failures.len(),
        });
    }
    Ok(summary)
}

/// Resolves a recorded scan path, falling back to the dataset's directory
/// for relative paths.
fn resolve_scan(dataset: &Path, recorded: &str) -> PathBuf {
    let p = PathBuf::from(recorded);
    if p.is_absolute() || p.exists() {
        return p;
    }
    match dataset.parent() {
        Some(dir) => dir.join(p),
        None => p,
    }
}

fn load_scan(path: &Path) -> Result<PointCloud> {
    voxel_downsample(&read_velodyne_bin(path)?.cloud, SCAN_VOXEL)
}

fn train_cmd(a: &TrainArgs, seed: u64) -> Result<Value> {
    let records = read_dataset(&a.input)?;
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    let samples = records
        .iter()
        .map(|r| {
            Ok(TrainSample {
                scan: load_scan(&resolve_scan(&a.input, &r.scan_path))?,
                label: r.cov(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let cfg = TrainConfig {
        learning_rate: a.lr,
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed,
        augment: !a.no_augment,
        weighted_sampling: !a.no_weighted_sampling,
        hidden: a.hidden.clone(),
        ..Default::default()
    };
    let model = train(&samples, &cfg)?;
    save_model(&a.out, &model)?;
    Ok(json!({
        "config": cfg,
        "samples": samples.len(),
        "final_loss": model.loss_history.last(),
    }))
}

fn predict_cmd(a: &PredictArgs) -> Result<Value> {
    let model = load_model(&a.model)?;
    let mut rows = Vec::new();
    let is_ext = |ext: &str| a.input.extension().is_some_and(|x| x == ext);
    if let Some(seq) = &a.seq {
        let handle = SequenceHandle::open(&a.input, seq)?;
        for k in 0..handle.len() {
            let scan = voxel_downsample(&handle.load_scan(k)?, SCAN_VOXEL)?;
            rows.push((k, predict(&model, &scan)?));
        }
    } else if is_ext("jsonl") {
        for r in read_dataset(&a.input)? {
            rows.push((
                r.scan_id,
                predict(&model, &load_scan(&resolve_scan(&a.input, &r.scan_path))?)?,
            ));
        }
    } else if is_ext("bin") {
        rows.push((0, predict(&model, &load_scan(&a.input)?)?));
    } else {
        return Err(Error::InvalidConfig(
            "--input must be a .jsonl dataset, a .bin scan, or a KITTI root with --seq".into(),
        ));
    }
    write_covs(&a.out, &rows)?;
    Ok(json!({ "predictions": rows.len() }))
}

fn fuse(a: &FuseArgs) -> Result<Value> {
    let poses = read_pose_file(a.input.join("poses.txt"))?;
    let covs_path = a.covs.clone().unwrap_or_else(|| a.input.join("covs.csv"));
    let mut covs: Vec<Cov6> = read_covs(&covs_path)?.into_iter().map(|(_, c)| c).collect();
    if covs.len() != poses.len() {
        return Err(Error::LengthMismatch {
            left: poses.len(),
            right: covs.len(),
        });
    }
    if poses.is_empty() {
        return Err(Error::EmptyInput);
    }
    let times_path = a.input.join("times.txt");
    let times = if times_path.exists() {
        read_times(&times_path)?
    } else {
        (0..poses.len())
            .map(|k| k as f64 * DEFAULT_FRAME_PERIOD)
            .collect()
    };
    if times.len() != poses.len() {
        return Err(Error::LengthMismatch {
            left: poses.len(),
            right: times.len(),
        });
    }
    if a.baseline {
        let m = mean_covariance(&covs)?;
        covs.iter_mut().for_each(|c| *c = m);
    }
    let meas: Vec<ScanMeasurement> = poses
        .iter()
        .zip(&covs)
        .zip(&times)
        .map(|((pose, cov), time)| ScanMeasurement {
            time: *time,
            pose: *pose,
            cov: *cov,
        })
        .collect();
    let init = FilterState::at_rest(&poses[0]);
    let fused = run_filter_with_window(&meas, &init, &ProcessNoise::default(), a.smoothing.max(1))?;
    write_trajectory(&a.out, &fused)?;
    Ok(json!({ "frames": fused.len(), "baseline": a.baseline }))
}

fn read_cov_list(path: &Path) -> Result<Vec<Cov6>> {
    if path.extension().is_some_and(|x| x == "jsonl") {
        Ok(read_dataset(path)?.iter().map(DatasetRecord::cov).collect())
    } else {
        Ok(read_covs(path)?.into_iter().map(|(_, c)| c).collect())
    }
}

fn eval(a: &EvalArgs) -> Result<Value> {
    let mut text = String::from("metric,item,value\n");
    let mut row = |metric: &str, item: &dyn std::fmt::Display, value: f64| {
        let _ = writeln!(text, "{metric},{item},{value}");
    };
    let summary = match a.metric {
        Metric::Kl | Metric::Mae => {
            let preds = read_cov_list(&a.input)?;
            let gts = read_cov_list(&a.gt)?;
            let report = CovarianceReport::new(&preds, &gts)?;
            let baseline = match &a.baseline {
                Some(p) => Some(CovarianceReport::new(&read_cov_list(p)?, &gts)?),
                None => None,
            };
            let mut s = json!({});
            if a.metric == Metric::Kl {
                for (i, v) in report.kl.iter().enumerate() {
                    row("kl", &i, *v);
                }
                row("kl", &"mean", report.kl_mean);
                s["kl_mean"] = json!(report.kl_mean);
                if let Some(b) = &baseline {
                    let imp = icpcov::metrics::improvement(b.kl_mean, report.kl_mean);
                    row("kl_baseline", &"mean", b.kl_mean);
                    row("kl_improvement_pct", &"mean", imp);
                    s["kl_baseline_mean"] = json!(b.kl_mean);
                    s["kl_improvement_pct"] = json!(imp);
                }
            } else {
                for (name, v, b) in [
                    ("mae_x", report.mae_x, baseline.as_ref().map(|b| b.mae_x)),
                    ("mae_y", report.mae_y, baseline.as_ref().map(|b| b.mae_y)),
                    (
                        "mae_yaw",
                        report.mae_yaw,
                        baseline.as_ref().map(|b| b.mae_yaw),
                    ),
                ] {
                    row(name, &"mean", v);
                    s[name] = json!(v);
                    if let Some(b) = b {
                        row(&format!("{name}_baseline"), &"mean", b);
                        row(
                            &format!("{name}_improvement_pct"),
                            &"mean",
                            icpcov::metrics::improvement(b, v),
                        );
                    }
                }
            }
            s
        }
        Metric::Ape | Metric::Rpe => {
            let est = read_pose_file(&a.input)?;
            let gt = read_pose_file(&a.gt)?;
            let base = match &a.baseline {
                Some(p) => Some(read_pose_file(p)?),
                None => None,
            };
            let name = if a.metric == Metric::Ape {
                "ape"
            } else {
                "rpe"
            };
            let per_window = |traj: &[Pose]| -> Result<Vec<f64>> {
                if a.metric == Metric::Ape {
                    icpcov::metrics::metric_ape(traj, &gt, a.window)
                } else {
                    icpcov::metrics::metric_rpe(traj, &gt, a.delta, a.window)
                }
            };
            // Validates lengths and the window once for both metrics.
            TrajectoryReport::new(&est, &gt, base.as_deref(), a.window)?;
            let ours = per_window(&est)?;
            for (i, v) in ours.iter().enumerate() {
                row(name, &i, *v);
            }
            let m = mean(&ours);
            row(name, &"mean", m);
            let mut s = json!({ format!("{name}_mean"): m, "windows": ours.len() });
            if let Some(b) = &base {
                let bm = mean(&per_window(b)?);
                let imp = icpcov::metrics::improvement(bm, m);
                row(&format!("{name}_baseline"), &"mean", bm);
                row(&format!("{name}_improvement_pct"), &"mean", imp);
                s[format!("{name}_baseline_mean")] = json!(bm);
                s[format!("{name}_improvement_pct")] = json!(imp);
            }
            s
        }
    };
    write_text(&a.out, &text)?;
    Ok(summary)
}

fn plot_data(a: &PlotDataArgs) -> Result<Value> {
    let poses = read_pose_file(&a.input)?;
    let covs = read_covs(&a.covs)?;
    if covs.len() != poses.len() {
        return Err(Error::LengthMismatch {
            left: poses.len(),
            right: covs.len(),
        });
    }
    let mut text = String::from("frame,x,y,trace_xy\n");
    for (k, (pose, (_, cov))) in poses.iter().zip(&covs).enumerate() {
        let tr = cov.0[(0, 0)] + cov.0[(1, 1)];
        let _ = writeln!(text, "{k},{},{},{tr}", pose.trans.x, pose.trans.y);
    }
    write_text(&a.out, &text)?;
    Ok(json!({ "frames": poses.len() }))
}
