//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! `cargo test --test acceptance -- 3 7` runs only criteria 3 and 7.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use icpcov::cloud::PointCloud;
use icpcov::dataio::{
    reference_regimes, simulate_icp_measurements, synth_trajectory, two_regime_covariances,
    SceneKind, SceneSpec, TrajectorySpec,
};
use icpcov::fusion::{mean_covariance, run_filter, FilterState, ProcessNoise, ScanMeasurement};
use icpcov::lie::{adjoint, exp_se3, log_se3, Mat6, Vec3};
use icpcov::mc_dataset::{mc_covariance, split_dataset, synthetic_pair, PerturbConfig};
use icpcov::metrics::{improvement, mean, metric_ape, metric_kl, metric_rpe};
use icpcov::predictor::loss::{huber, kl_divergence};
use icpcov::predictor::model::{Mlp, ModelParams};
use icpcov::predictor::train::mean_label;
use icpcov::predictor::{
    augment_rotation_z, gradient, loss, predict, sampling_weights, train, FeatureConfig,
    TrainConfig, TrainSample,
};
use icpcov::registration::{icp_with_target, IcpConfig, Target};
use icpcov::{seed, Cov6, Pose, Twist};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Map voxel for the single-scene criteria; see the README for why the
/// sequence default (1 m) is too coarse for these small scenes.
const MAP_VOXEL: f64 = 0.3;
const SCAN_VOXEL: f64 = 0.1;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn within(elapsed: Duration, budget_s: f64) -> bool {
    elapsed.as_secs_f64() < budget_s
}

fn rng(s: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(s)
}

fn random_twist(r: &mut ChaCha8Rng, max_angle: f64, max_trans: f64) -> Twist {
    let axis = loop {
        let v = Vec3::from_fn(|_, _| r.random_range(-1.0..1.0));
        if v.norm() > 1e-3 && v.norm() <= 1.0 {
            break v.normalize();
        }
    };
    let u = Vec3::from_fn(|_, _| r.random_range(-max_trans..max_trans));
    Twist::new(u, axis * r.random_range(0.0..max_angle))
}

fn c1_lie() -> Verdict {
    let t0 = Instant::now();
    let mut r = rng(1);
    let mut worst_roundtrip = 0.0f64;
    for _ in 0..1000 {
        let xi = random_twist(&mut r, std::f64::consts::PI - 0.01, 10.0);
        let back = log_se3(&exp_se3(&xi)).expect("angle below pi");
        worst_roundtrip = worst_roundtrip.max((back.to_vector() - xi.to_vector()).amax());
    }
    let mut worst_adjoint = 0.0f64;
    for _ in 0..100 {
        let t = exp_se3(&random_twist(&mut r, 3.0, 5.0));
        let xi = random_twist(&mut r, 1.0, 1.0);
        let lhs = log_se3(&(t * exp_se3(&xi) * t.inverse()))
            .unwrap()
            .to_vector();
        let rhs = adjoint(&t) * xi.to_vector();
        worst_adjoint = worst_adjoint.max((lhs - rhs).amax());
    }
    let el = t0.elapsed();
    verdict(
        worst_roundtrip < 1e-9 && worst_adjoint < 1e-8 && within(el, 1.0),
        format!("roundtrip max {worst_roundtrip:.2e} (<1e-9), adjoint max {worst_adjoint:.2e} (<1e-8), {el:.2?} (<1s)"),
    )
}

fn room() -> (PointCloud, PointCloud) {
    synthetic_pair(&SceneSpec::new(SceneKind::Room, 7), MAP_VOXEL, SCAN_VOXEL).unwrap()
}

fn c2_icp_recovery() -> Verdict {
    let t0 = Instant::now();
    let (scan, map) = room();
    let target = Target::new(map).unwrap();
    let factor = icpcov::lie::psd_cholesky(&PerturbConfig::default().covariance().0).unwrap();
    let cfg = IcpConfig::default();
    let mut ok = 0;
    for i in 0..100u64 {
        let mut r = seed::rng(2, &[i]);
        let init = exp_se3(&icpcov::lie::sample_with_factor(&factor, &mut r));
        let res = icp_with_target(&scan, &target, &init, &cfg).unwrap();
        let err = log_se3(&res.pose).unwrap();
        if res.converged && err.u.norm() < 1e-2 && err.w.norm().to_degrees() < 0.1 {
            ok += 1;
        }
    }
    let el = t0.elapsed();
    verdict(
        ok >= 95 && within(el, 60.0),
        format!("{ok}/100 recovered within 1 cm / 0.1 deg (>=95), {el:.2?} (<60s)"),
    )
}

fn c3_degeneracy() -> Verdict {
    let t0 = Instant::now();
    let pcfg = PerturbConfig::default();
    let icfg = IcpConfig::default();
    let (scan, map) =
        synthetic_pair(&SceneSpec::new(SceneKind::Tunnel, 3), MAP_VOXEL, SCAN_VOXEL).unwrap();
    let tunnel = mc_covariance(&scan, &map, &Pose::identity(), &pcfg, &icfg, 3, 0).unwrap();
    let d = tunnel.label.diagonal();
    let ratio = d[0] / d[1];
    let (scan, map) = room();
    let room = mc_covariance(&scan, &map, &Pose::identity(), &pcfg, &icfg, 3, 1).unwrap();
    let r = room.label.diagonal();
    let trans_ok = r[..3].iter().all(|v| *v < 0.05f64.powi(2));
    let rot_ok = r[3..].iter().all(|v| *v < 0.5f64.to_radians().powi(2));
    let el = t0.elapsed();
    verdict(
        ratio >= 10.0 && trans_ok && rot_ok && within(el, 300.0),
        format!(
            "tunnel var_x/var_y = {ratio:.3e} (>=10, {}/{} converged); room diag max trans {:.2e} m^2, rot {:.2e} rad^2; {el:.2?} (<5min)",
            tunnel.n_converged,
            tunnel.n_samples,
            r[..3].iter().cloned().fold(0.0, f64::max),
            r[3..].iter().cloned().fold(0.0, f64::max),
        ),
    )
}

/// Squared standard error of each entry of a second-moment estimate: the
/// sample variance of the per-run products `xi_a * xi_b`, divided by `n`.
fn estimator_variance(errors: &[Twist], transport: &Mat6) -> Mat6 {
    let v: Vec<_> = errors.iter().map(|e| transport * e.to_vector()).collect();
    let n = v.len() as f64;
    Mat6::from_fn(|a, b| {
        let p: Vec<f64> = v.iter().map(|x| x[a] * x[b]).collect();
        let m = p.iter().sum::<f64>() / n;
        p.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0) / n
    })
}

fn c4_adjoint_consistency() -> Verdict {
    let t0 = Instant::now();
    let pcfg = PerturbConfig {
        n_samples: 256,
        ..Default::default()
    };
    let icfg = IcpConfig::default();
    let (scan, map) = room();
    let theta = 0.7;
    let base = mc_covariance(&scan, &map, &Pose::identity(), &pcfg, &icfg, 41, 0).unwrap();
    // The sensor yawed by theta sees the same world points rotated by -theta.
    let (rotated_scan, expected) = augment_rotation_z(&scan, &base.label, -theta);
    let rotated = mc_covariance(
        &rotated_scan,
        &map,
        &Pose::rot_z(theta),
        &pcfg,
        &icfg,
        42,
        0,
    )
    .unwrap();
    let diff = rotated.label.0 - expected.0;
    // The expected label is the base label carried through the adjoint, so
    // its noise is the base noise carried the same way.
    let ad = adjoint(&Pose::rot_z(-theta));
    let var = estimator_variance(&base.errors, &ad)
        + estimator_variance(&rotated.errors, &Mat6::identity());
    let noise = var.sum().sqrt();
    let dist = diff.norm();
    let max_z = diff
        .zip_map(&var, |d, v| d.abs() / v.sqrt().max(1e-300))
        .max();
    let el = t0.elapsed();
    verdict(
        dist <= 3.0 * noise,
        format!(
            "||D||_F = {dist:.3e} <= 3 x MC noise {noise:.3e} (ratio {:.2}); max per-entry z {max_z:.2}; ||D||_F/||Y||_F = {:.1e}; {}+{} converged; {el:.2?}",
            dist / noise,
            dist / expected.0.norm(),
            base.n_converged,
            rotated.n_converged
        ),
    )
}

fn random_spd(r: &mut ChaCha8Rng, scale: f64) -> Cov6 {
    let a = Mat6::from_fn(|_, _| r.random_range(-1.0..1.0) * scale);
    Cov6(a * a.transpose() + Mat6::identity() * 0.05 * scale * scale)
}

fn c5_gradients() -> Verdict {
    let mut worst = 0.0f64;
    let mut configs = 0;
    let mut both_branches = 0;
    for cfg_id in 0..20u64 {
        let mut r = rng(500 + cfg_id);
        let fcfg = FeatureConfig { sectors: 1 };
        let hidden = [r.random_range(3..8), r.random_range(2..6)];
        let params = ModelParams::new(fcfg, &hidden, 1e-8, &mut r);
        let x = DVector::from_fn(fcfg.dim(), |_, _| r.random_range(-1.5..1.5));
        let scale = r.random_range(0.2..1.0);
        let y = random_spd(&mut r, scale);
        let (_, yhat) = params.forward_standardized(&x);
        // Put delta between the smallest and largest residual so both
        // Huber branches are active.
        let mut res: Vec<f64> = (0..6)
            .flat_map(|a| (a..6).map(move |b| (a, b)))
            .map(|(a, b)| (yhat.0[(a, b)] - y.0[(a, b)]).abs())
            .collect();
        res.sort_by(f64::total_cmp);
        let delta = 0.5 * (res[7] + res[13]);
        let quadratic = res.iter().filter(|v| **v <= delta).count();
        if quadratic > 0 && quadratic < res.len() {
            both_branches += 1;
        }
        let cfg = TrainConfig {
            alpha: r.random_range(0.01..0.5),
            beta: 1.0,
            huber_delta: delta,
            ..Default::default()
        };
        let (parts, grad) = gradient(&params, &x, &y, &cfg).unwrap();
        assert!(parts.kl > 0.0);
        let analytic = grad.flatten();
        let base = params.net.flatten();
        let shapes = params.net.shapes();
        let total = |v: &[f64]| {
            let mut p = params.clone();
            p.net = Mlp::unflatten(&shapes, v).unwrap();
            loss(&p.forward_standardized(&x).1, &y, &cfg).unwrap().total
        };
        let h = 1e-5;
        for i in 0..base.len() {
            let mut plus = base.clone();
            plus[i] += h;
            let mut minus = base.clone();
            minus[i] -= h;
            let numeric = (total(&plus) - total(&minus)) / (2.0 * h);
            let err =
                (numeric - analytic[i]).abs() / numeric.abs().max(analytic[i].abs()).max(1e-6);
            worst = worst.max(err);
        }
        configs += 1;
    }
    verdict(
        worst < 1e-4 && configs >= 20 && both_branches == configs,
        format!("{configs} configurations, both Huber branches in {both_branches}, max relative error {worst:.2e} (<1e-4)"),
    )
}

fn c6_spd() -> Verdict {
    let eps = 1e-8;
    let mut evals = 0;
    let mut asymmetric = 0;
    let mut min_margin = f64::INFINITY;
    for model in 0..100u64 {
        let mut r = rng(600 + model);
        let fcfg = FeatureConfig::default();
        let params = ModelParams::new(fcfg, &[32, 16], eps, &mut r);
        for _ in 0..100 {
            let f: Vec<f64> = (0..fcfg.dim()).map(|_| r.random_range(-5.0..5.0)).collect();
            let (_, y) = params.forward(&f);
            if y.0 != y.0.transpose() {
                asymmetric += 1;
            }
            min_margin = min_margin.min(y.min_eigenvalue() - eps);
            evals += 1;
        }
    }
    verdict(
        evals >= 10_000 && asymmetric == 0 && min_margin >= 0.0,
        format!("{evals} evaluations, {asymmetric} asymmetric, min eigenvalue - eps = {min_margin:.3e} (>=0)"),
    )
}

/// One scene of the two-class corpus: a tunnel (even `i`) or a room.
fn corpus_scene(i: u64) -> SceneSpec {
    let mut r = seed::rng(7, &[i]);
    let kind = if i % 2 == 0 {
        SceneKind::Tunnel
    } else {
        SceneKind::Room
    };
    let mut spec = SceneSpec::new(kind, seed::derive(7, &[i, 1]));
    match kind {
        SceneKind::Tunnel => {
            spec.length = r.random_range(30.0..50.0);
            spec.width = r.random_range(4.0..8.0);
            spec.height = r.random_range(3.0..5.0);
        }
        _ => {
            spec.length = r.random_range(8.0..16.0);
            spec.width = r.random_range(6.0..12.0);
            spec.height = r.random_range(2.5..3.5);
        }
    }
    spec.point_density = 2.0;
    spec
}

fn c7_learning_signal() -> Verdict {
    let t0 = Instant::now();
    let pcfg = PerturbConfig::default();
    let icfg = IcpConfig::default();
    let mut corpus = Vec::with_capacity(400);
    let mut skipped = 0;
    let mut i = 0u64;
    while corpus.len() < 400 {
        let (scan, map) = synthetic_pair(&corpus_scene(i), MAP_VOXEL, SCAN_VOXEL).unwrap();
        match mc_covariance(&scan, &map, &Pose::identity(), &pcfg, &icfg, 7, i) {
            Ok(est) => corpus.push(TrainSample {
                scan,
                label: est.label,
            }),
            Err(_) => skipped += 1,
        }
        i += 1;
    }
    let labelled = t0.elapsed();
    let (train_set, test_set, eval_set) = split_dataset(&corpus, (0.7, 0.2, 0.1)).unwrap();
    let held_out: Vec<TrainSample> = test_set.into_iter().chain(eval_set).collect();
    let cfg = TrainConfig {
        epochs: 150,
        learning_rate: 3e-3,
        hidden: vec![64, 32],
        seed: 7,
        ..Default::default()
    };
    let model = train(&train_set, &cfg).unwrap();
    let baseline = mean_label(&train_set);
    let mut ours = Vec::new();
    let mut base = Vec::new();
    for s in &held_out {
        ours.push(metric_kl(&predict(&model, &s.scan).unwrap(), &s.label).unwrap());
        base.push(metric_kl(&baseline, &s.label).unwrap());
    }
    let (m_ours, m_base) = (mean(&ours), mean(&base));
    let gain = improvement(m_base, m_ours);
    let el = t0.elapsed();
    verdict(
        m_ours < m_base && gain >= 30.0 && within(el, 600.0),
        format!(
            "held-out KL {m_ours:.3} vs mean-covariance {m_base:.3} ({gain:.1}% lower, >=30%); {} train / {} held out, {skipped} scenes skipped; labelling {labelled:.1?}, total {el:.1?} (<10min)",
            train_set.len(),
            held_out.len()
        ),
    )
}

fn c8_fusion() -> Verdict {
    let t0 = Instant::now();
    let spec = TrajectorySpec {
        frames: 2000,
        ..Default::default()
    };
    let gt = synth_trajectory(&spec);
    let (low, high) = reference_regimes();
    let covs = two_regime_covariances(spec.frames, 50, &low, &high);
    let mut wins = 0;
    let mut ape_gain = Vec::new();
    let mut rpe_gain = Vec::new();
    for run in 0..20u64 {
        let meas = simulate_icp_measurements(&gt, &covs, 800 + run).unwrap();
        let to_scan = |c: &dyn Fn(usize) -> Cov6| -> Vec<ScanMeasurement> {
            meas.iter()
                .enumerate()
                .map(|(k, m)| ScanMeasurement {
                    time: k as f64 * spec.dt,
                    pose: m.pose,
                    cov: c(k),
                })
                .collect()
        };
        let fixed = mean_covariance(&covs).unwrap();
        let init = FilterState::at_rest(&meas[0].pose);
        let q = ProcessNoise::default();
        let ours = run_filter(&to_scan(&|k| covs[k]), &init, &q).unwrap();
        let base = run_filter(&to_scan(&|_| fixed), &init, &q).unwrap();
        let a_ours = mean(&metric_ape(&ours, &gt, 200).unwrap());
        let a_base = mean(&metric_ape(&base, &gt, 200).unwrap());
        let r_ours = mean(&metric_rpe(&ours, &gt, 1, 200).unwrap());
        let r_base = mean(&metric_rpe(&base, &gt, 1, 200).unwrap());
        if a_ours < a_base {
            wins += 1;
        }
        ape_gain.push(improvement(a_base, a_ours));
        rpe_gain.push(improvement(r_base, r_ours));
    }
    let (ma, mr) = (mean(&ape_gain), mean(&rpe_gain));
    let el = t0.elapsed();
    verdict(
        wins >= 18 && ma > 0.0 && mr >= 0.0 && within(el, 120.0),
        format!("APE better in {wins}/20 (>=18), mean APE improvement {ma:.1}% (>0), mean RPE improvement {mr:.1}% (>=0); {el:.2?} (<2min)"),
    )
}

fn c9_spot_values() -> Verdict {
    let kl = kl_divergence(
        &Cov6::from_diagonal(&[2.0, 1.0, 1.0, 1.0, 1.0, 1.0]).0,
        &Mat6::identity(),
    )
    .unwrap();
    let h = huber(2.0, 1.0);
    let w = sampling_weights(&[Cov6::identity(), Cov6(Mat6::identity() * 3.0)], false).unwrap();
    verdict(
        (kl - 0.15343).abs() <= 1e-5 && h == 1.5 && w == [0.25, 0.75],
        format!("KL {kl:.6} (0.15343 +- 1e-5), Huber {h} (1.5), weights {w:?} ([0.25, 0.75])"),
    )
}

fn icpcov(dir: &Path, args: &[&str]) -> bool {
    let out = Command::new(env!("CARGO_BIN_EXE_icpcov"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs");
    if !out.status.success() {
        eprintln!(
            "icpcov {args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    out.status.success()
}

fn c10_determinism() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let seed = ["--seed", "11"];
    let mut ok = icpcov(
        d,
        &[
            "synth", "--kind", "sequence", "--scene", "room", "--frames", "12", "--out", "kitti",
            "--seed", "11",
        ],
    ) && icpcov(
        d,
        &[
            "synth",
            "--kind",
            "measurements",
            "--frames",
            "400",
            "--out",
            "meas",
            "--seed",
            "11",
        ],
    );
    let steps: Vec<(&str, Vec<&str>)> = vec![
        (
            "dataset",
            vec![
                "dataset",
                "--input",
                "kitti",
                "--stride",
                "4",
                "--samples",
                "8",
                "--map-voxel",
                "0.3",
            ],
        ),
        (
            "train",
            vec!["train", "--epochs", "3", "--hidden", "8,4", "--input"],
        ),
        ("fuse", vec!["fuse", "--input", "meas"]),
        (
            "eval",
            vec![
                "eval",
                "--metric",
                "ape",
                "--input",
                "meas/poses.txt",
                "--gt",
                "meas/gt.txt",
            ],
        ),
    ];
    let mut identical = Vec::new();
    for (name, args) in &steps {
        let mut outputs = Vec::new();
        for run in 0..2 {
            let out = format!("{name}{run}.out");
            let mut a: Vec<&str> = args.clone();
            if *name == "train" {
                a.push("dataset0.out");
            }
            a.extend(["--out", &out]);
            a.extend(seed);
            ok &= icpcov(d, &a);
            outputs.push(std::fs::read(d.join(&out)).unwrap_or_default());
        }
        let same = !outputs[0].is_empty() && outputs[0] == outputs[1];
        identical.push(format!(
            "{name}={}",
            if same { "identical" } else { "DIFFERENT" }
        ));
        ok &= same;
    }
    verdict(
        ok,
        format!(
            "byte-identical outputs across two seeded runs: {}",
            identical.join(", ")
        ),
    )
}

fn main() {
    let filter: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let criteria: [(usize, &str, fn() -> Verdict); 10] = [
        (1, "Lie-group suite", c1_lie),
        (2, "ICP oracle recovery", c2_icp_recovery),
        (3, "Degeneracy reproduction", c3_degeneracy),
        (
            4,
            "Adjoint augmentation consistency",
            c4_adjoint_consistency,
        ),
        (5, "Gradient correctness", c5_gradients),
        (6, "SPD guarantee", c6_spd),
        (7, "Learning signal", c7_learning_signal),
        (8, "Fusion improvement", c8_fusion),
        (9, "Closed-form spot values", c9_spot_values),
        (10, "Determinism", c10_determinism),
    ];
    let mut failed = 0;
    for (id, name, f) in criteria {
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let v = f();
        if !v.pass {
            failed += 1;
        }
        println!(
            "{} {id:>2} {name}: {}",
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
