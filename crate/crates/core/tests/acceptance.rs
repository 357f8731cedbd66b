//! Acceptance gate. Prints one line per criterion and exits non-zero if any
//! fails. Pass criterion numbers as arguments to run a subset, e.g.
//! `cargo test --test acceptance -- 1 2 8`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use egogesture::dataio::{
    read_checkpoint, read_confusion_csv, read_dataset, read_history_csv, read_sweep_csv, write_checkpoint,
    write_confusion_csv, write_dataset, write_history_csv, write_sweep_csv, Checkpoint, SweepRow,
};
use egogesture::features::{extract_sequence, Channels, FeatureKind, FeatureSpec, MotionFeature};
use egogesture::geometry::{
    compose, estimate_homography_dlt, rotation_matrix, CameraIntrinsics, Correspondence, Homography,
};
use egogesture::inference::{latency_report, majority_vote, stream_features, StreamState};
use egogesture::kinematics::{downsample_rate, synthesize_dataset, DatasetSpec, LabeledSequence};
use egogesture::model::{grad_check, predict_framewise, GradCheckDims, Mode, GRAD_CHECK_TOLERANCE};
use egogesture::training::{
    extract_snippets, prepare, repeat_outcomes, undersample_neutral, ConfusionMatrix, PreparedData, Snippet, SplitSpec,
    Task, TrainConfig, TrainOutcome,
};
use nalgebra::{Matrix3, Point2};
use ndarray::Array3;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const RUNS: usize = 5;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn pop_std(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

fn peaks(runs: &[TrainOutcome]) -> Vec<f64> {
    runs.iter().map(|r| r.report.peak_accuracy).collect()
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(",")
}

fn feature_spec(kind: FeatureKind, channels: Channels) -> FeatureSpec {
    FeatureSpec { kind, channels, ..FeatureSpec::default() }
}

/// Training runs shared between criteria.
#[derive(Default)]
struct Lab {
    five: Option<Vec<LabeledSequence>>,
    runs: BTreeMap<String, Vec<TrainOutcome>>,
}

impl Lab {
    fn five_class(&mut self) -> &[LabeledSequence] {
        self.five.get_or_insert_with(|| synthesize_dataset(&DatasetSpec::default_with(0, 20, false)).unwrap())
    }

    fn runs(&mut self, key: &str, seqs: impl FnOnce(&mut Lab) -> Vec<LabeledSequence>, cfg: TrainConfig) -> &[TrainOutcome] {
        if !self.runs.contains_key(key) {
            let seqs = seqs(self);
            let data = prepare(&seqs, cfg.task, &cfg.features).unwrap();
            let started = Instant::now();
            let out = repeat_outcomes(&data, &cfg, RUNS).unwrap();
            eprintln!("  [{key}] {RUNS} runs in {:.0} s", started.elapsed().as_secs_f64());
            self.runs.insert(key.to_string(), out);
        }
        &self.runs[key]
    }

    fn fused(&mut self) -> &[TrainOutcome] {
        self.runs("five/descriptor16/both", |l| l.five_class().to_vec(), TrainConfig::default())
    }
}

fn c1_gradients(_: &mut Lab) -> Outcome {
    let started = Instant::now();
    let mut worst: f64 = 0.0;
    let mut failing = Vec::new();
    for seed in 0..3 {
        let r = grad_check(seed, GradCheckDims { input: 4, hidden: 8, classes: 3, steps: 5, batch: 2 });
        worst = worst.max(r.max_rel_error());
        failing.extend(r.failing().into_iter().map(|n| format!("seed {seed}: {n}")));
    }
    let secs = started.elapsed().as_secs_f64();
    check(
        failing.is_empty() && worst <= GRAD_CHECK_TOLERANCE && secs < 10.0,
        format!("3 seeds, max relative error {worst:.2e} (limit 1e-4), {secs:.2} s{}", if failing.is_empty() { String::new() } else { format!(", failing {failing:?}") }),
    )
}

fn random_homography(rng: &mut ChaCha8Rng) -> Homography {
    loop {
        let mut m = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        m[(2, 0)] *= 1e-3;
        m[(2, 1)] *= 1e-3;
        m[(2, 2)] = rng.random_range(0.5..1.0);
        if let Ok(h) = Homography::from_matrix(m) {
            if h.determinant().abs() > 1e-3 {
                return h;
            }
        }
    }
}

/// Rotation angle of `K^-1 H K`, read from its trace.
fn encoded_angle(h: &Homography, k: &CameraIntrinsics) -> f64 {
    let r = k.inverse_matrix() * h.matrix() * k.matrix();
    let r = r / r.determinant().cbrt();
    ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

fn c2_homography(_: &mut Lab) -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut dlt_err: f64 = 0.0;
    let mut group_err: f64 = 0.0;
    for _ in 0..100 {
        let truth = random_homography(&mut rng);
        let cs: Vec<_> = (0..8)
            .map(|_| {
                let p = Point2::new(rng.random_range(0.0..192.0), rng.random_range(0.0..144.0));
                Correspondence::new(p, truth.apply(p).unwrap())
            })
            .collect();
        let est = estimate_homography_dlt(&cs).map_err(|e| e.to_string())?;
        let diff = est.matrix() / est.matrix()[(2, 2)] - truth.matrix() / truth.matrix()[(2, 2)];
        dlt_err = dlt_err.max(diff.norm());

        let inv = truth.inverse().unwrap();
        group_err = group_err.max((compose(&truth, &inv).unwrap().matrix() - Matrix3::identity()).norm());
        let k = CameraIntrinsics::world_default();
        let (a, b) = ([0.0; 3].map(|_| rng.random_range(-0.1..0.1)), [0.0; 3].map(|_| rng.random_range(-0.1..0.1)));
        let ra = rotation_matrix(a[0], a[1], a[2]);
        let rb = rotation_matrix(b[0], b[1], b[2]);
        let h = |r: Matrix3<f64>| Homography::from_matrix(k.matrix() * r * k.inverse_matrix()).unwrap();
        let chained = compose(&h(rb), &h(ra)).unwrap();
        group_err = group_err.max((chained.matrix() - h(rb * ra).matrix()).norm());
    }

    // A fixed angular velocity sampled at f gives a per-pair angle of w / f.
    let k = CameraIntrinsics::world_default();
    let omega = [0.9, -0.4, 0.25];
    let speed = omega.iter().map(|w: &f64| w * w).sum::<f64>().sqrt();
    let mut scale_err: f64 = 0.0;
    let mut angles = Vec::new();
    for f in [10.0, 20.0, 30.0] {
        let axis = nalgebra::Unit::new_normalize(nalgebra::Vector3::new(omega[0], omega[1], omega[2]));
        let r = nalgebra::Rotation3::from_axis_angle(&axis, speed / f).into_inner();
        let (rx, ry, rz) = egogesture::geometry::euler_angles(&r);
        let hm = Homography::from_matrix(k.matrix() * rotation_matrix(rx, ry, rz) * k.inverse_matrix()).unwrap();
        let angle = encoded_angle(&hm, &k);
        scale_err = scale_err.max((angle * f - speed).abs());
        angles.push(angle);
    }
    scale_err = scale_err.max((angles[0] / angles[1] - 2.0).abs()).max((angles[0] / angles[2] - 3.0).abs());
    let secs = started.elapsed().as_secs_f64();
    check(
        dlt_err <= 1e-8 && group_err <= 1e-10 && scale_err <= 1e-9 && secs < 5.0,
        format!("DLT {dlt_err:.1e} (1e-8), identities {group_err:.1e} (1e-10), 1/f scaling {scale_err:.1e} (1e-9), {secs:.2} s"),
    )
}

fn c3_accuracy(lab: &mut Lab) -> Outcome {
    let started = Instant::now();
    let p = peaks(lab.fused());
    let secs = started.elapsed().as_secs_f64();
    check(
        mean(&p) >= 0.90 && secs <= 900.0,
        format!("mean peak {:.4} (>= 0.90) over [{}], {secs:.0} s", mean(&p), fmt_list(&p)),
    )
}

fn c4_features(lab: &mut Lab) -> Outcome {
    let desc = mean(&peaks(lab.fused()));
    let cfg = TrainConfig { features: feature_spec(FeatureKind::Raw8, Channels::Both), ..TrainConfig::default() };
    let raw = mean(&peaks(lab.runs("five/raw8/both", |l| l.five_class().to_vec(), cfg)));
    check(desc >= raw - 0.01, format!("descriptor16 {desc:.4} vs raw8 {raw:.4}, gap {:+.4}", desc - raw))
}

fn c5_channels(lab: &mut Lab) -> Outcome {
    let single = |c| TrainConfig { features: feature_spec(FeatureKind::Descriptor16, c), ..TrainConfig::default() };
    let world = mean(&peaks(lab.runs("five/descriptor16/world", |l| l.five_class().to_vec(), single(Channels::World))));
    let eye = mean(&peaks(lab.runs("five/descriptor16/eye", |l| l.five_class().to_vec(), single(Channels::Eye))));

    let six = || synthesize_dataset(&DatasetSpec::default_with(0, 20, true)).unwrap();
    let surprise_f1 = |runs: &[TrainOutcome]| mean(&runs.iter().map(|r| r.report.f1_of("Surprise").unwrap()).collect::<Vec<_>>());
    let six_cfg = |c| TrainConfig { task: Task::SixClass, ..single(c) };
    let fused_f1 = surprise_f1(lab.runs("six/descriptor16/both", |_| six(), six_cfg(Channels::Both)));
    let world_f1 = surprise_f1(lab.runs("six/descriptor16/world", |_| six(), six_cfg(Channels::World)));
    check(
        world >= eye && fused_f1 > world_f1,
        format!("5-class world {world:.4} vs eye {eye:.4}; Surprise F1 fused {fused_f1:.4} vs world {world_f1:.4}"),
    )
}

fn c6_frame_rates(lab: &mut Lab) -> Outcome {
    let base = synthesize_dataset(&DatasetSpec::default_with(0, 60, false)).unwrap();
    let mut finals = Vec::new();
    let mut epochs: Vec<Vec<usize>> = Vec::new();
    for fps in [10, 20, 30] {
        let runs = lab.runs(
            &format!("five/fps{fps}"),
            |_| base.iter().map(|s| downsample_rate(s, fps).unwrap()).collect(),
            TrainConfig::default(),
        );
        finals.push(mean(&runs.iter().map(|r| r.report.final_accuracy().unwrap()).collect::<Vec<_>>()));
        epochs.push(runs.iter().map(|r| r.report.epochs_to_fraction_of_final(0.9).unwrap()).collect());
    }
    let spread = finals.iter().cloned().fold(f64::MIN, f64::max) - finals.iter().cloned().fold(f64::MAX, f64::min);
    let slowest_at_10 = (0..RUNS).filter(|&i| epochs[0][i] >= epochs[1][i].max(epochs[2][i])).count();
    check(
        spread <= 0.05 && slowest_at_10 >= 4,
        format!(
            "final 10/20/30 fps [{}], spread {spread:.4} (<= 0.05); epochs to 90% {:?}/{:?}/{:?}, maximal at 10 fps in {slowest_at_10}/5",
            fmt_list(&finals),
            epochs[0],
            epochs[1],
            epochs[2]
        ),
    )
}

fn c7_splits(lab: &mut Lab) -> Outcome {
    let stratified: Vec<f64> = peaks(lab.fused())[..4].to_vec();
    let seqs = lab.five_class().to_vec();
    let data = prepare(&seqs, Task::FiveClass, &FeatureSpec::default()).unwrap();
    let started = Instant::now();
    let folds: Vec<f64> = (0..4)
        .map(|actor_id| {
            let cfg = TrainConfig { split: SplitSpec::LeaveOneActorOut { actor_id }, ..TrainConfig::default() };
            egogesture::training::train(&data, &cfg).unwrap().report.peak_accuracy
        })
        .collect();
    eprintln!("  [leave-one-actor-out] 4 runs in {:.0} s", started.elapsed().as_secs_f64());
    let worst = folds.iter().cloned().fold(f64::MAX, f64::min);
    check(
        pop_std(&folds) >= pop_std(&stratified) && worst >= 0.80,
        format!(
            "actor folds [{}] std {:.4}, stratified [{}] std {:.4}, worst fold {worst:.4} (>= 0.80)",
            fmt_list(&folds),
            pop_std(&folds),
            fmt_list(&stratified),
            pop_std(&stratified)
        ),
    )
}

fn c8_streaming(lab: &mut Lab) -> Outcome {
    let best = lab.fused()[0].clone();
    let mut spec = DatasetSpec::default_with(77, 20, false);
    spec.sessions_per_actor = 5;
    let seqs = synthesize_dataset(&spec).unwrap();
    let fs = best.config.features;
    let mut mismatched = 0;
    let mut frames = 0;
    for seq in &seqs {
        let raw = extract_sequence(&seq.frames, &fs).unwrap();
        let features: Vec<MotionFeature> = raw.iter().map(|v| MotionFeature { values: v.clone(), layout: fs.layout() }).collect();
        let streamed = stream_features(&best.state, &best.stats, &features, 10, true).unwrap();
        let normalized: Vec<Vec<f64>> = raw
            .iter()
            .map(|r| {
                let mut r = r.clone();
                best.stats.normalize_in_place(&mut r);
                r
            })
            .collect();
        let offline = predict_framewise(&best.state, &normalized).labels;
        // The batched tensor forward pass is a second, independent offline path.
        let x = Array3::from_shape_fn((1, normalized.len(), fs.dim()), |(_, t, d)| normalized[t][d]);
        let logits = best.state.forward_pure(&x, Mode::Eval).unwrap().logits;
        let batched: Vec<usize> =
            (0..normalized.len()).map(|t| egogesture::model::argmax(&logits.slice(ndarray::s![0, t, ..]).to_vec())).collect();
        frames += offline.len();
        mismatched += streamed.frame_labels.iter().zip(&offline).filter(|(a, b)| a != b).count();
        mismatched += batched.iter().zip(&offline).filter(|(a, b)| a != b).count();
        mismatched += streamed.frame_labels.len().abs_diff(offline.len());
    }
    let votes = [
        (vec![2, 2, 1, 0, 2, 2, 3, 2, 2, 2], 2),
        (vec![0, 1, 2, 3, 4], 4),
        (vec![1, 1, 0, 0], 0),
        (vec![0, 0, 1, 1], 1),
        (vec![3], 3),
    ];
    let vote_fail = votes.iter().filter(|(v, want)| majority_vote(v) != Some(*want)).count();
    check(
        seqs.len() == 20 && mismatched == 0 && vote_fail == 0,
        format!("{} sequences, {frames} frames, {mismatched} label mismatches; vote suite {vote_fail} failures", seqs.len()),
    )
}

fn c9_latency(lab: &mut Lab) -> Outcome {
    let best = lab.fused()[0].clone();
    let seqs = lab.five_class()[..20].to_vec();
    let mut latencies = Vec::new();
    for seq in &seqs {
        let mut stream = StreamState::new(&best.state, best.stats.clone(), 10, true).unwrap().with_pipeline(best.config.features);
        for f in &seq.frames {
            stream.push_frame(f).unwrap();
        }
        stream.flush();
        latencies.extend_from_slice(stream.latencies());
    }
    let report = latency_report(&latencies, 10).unwrap();
    check(
        report.p95_s < 10.0 / 30.0 && report.verdict(30) == Some(true),
        format!("H={} K=10, {} batches, mean {:.3} ms, p95 {:.3} ms (budget 333.3 ms)", best.state.dims.hidden, report.batches, report.mean_s * 1e3, report.p95_s * 1e3),
    )
}

fn file_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

/// Brute-force majority with ties to the lowest id.
fn majority_oracle(labels: &[usize]) -> usize {
    let mut best = (0, 0);
    for cand in 0..6 {
        let c = labels.iter().filter(|&&l| l == cand).count();
        if c > best.1 {
            best = (cand, c);
        }
    }
    best.0
}

fn properties() -> Result<(), String> {
    let runner = || TestRunner::new_with_rng(Config { cases: 1000, failure_persistence: None, ..Config::default() }, TestRng::deterministic_rng(RngAlgorithm::ChaCha));

    runner()
        .run(&(1usize..50, 0usize..50, prop::collection::vec(0usize..6, 0..300)), |(s, o_raw, labels)| {
            let o = o_raw % s;
            let stride = s - o;
            let starts: Vec<usize> = (0..labels.len()).step_by(stride).filter(|p| p + s <= labels.len()).collect();
            match extract_snippets(0, &labels, s, o) {
                Ok(sn) => {
                    prop_assert_eq!(sn.len(), starts.len());
                    for (snip, &p) in sn.iter().zip(&starts) {
                        prop_assert_eq!(snip.start, p);
                        prop_assert_eq!(snip.majority, majority_oracle(&labels[p..p + s]));
                    }
                }
                Err(_) => prop_assert!(labels.len() < s),
            }
            Ok(())
        })
        .map_err(|e| format!("snippet count: {e}"))?;

    runner()
        .run(&(prop::collection::vec(0usize..5, 0..200), 0.25f64..4.0, any::<u64>()), |(majorities, ratio, seed)| {
            let snippets: Vec<Snippet> =
                majorities.iter().enumerate().map(|(i, &m)| Snippet { sequence: 0, start: i, len: 1, majority: m }).collect();
            let kept = undersample_neutral(&snippets, ratio, seed);
            let neutral = majorities.iter().filter(|&&m| m == 0).count();
            let mut per_class = [0usize; 5];
            for &m in &majorities {
                per_class[m] += 1;
            }
            let present: Vec<usize> = per_class[1..].iter().copied().filter(|&c| c > 0).collect();
            let expected = if present.is_empty() {
                neutral
            } else {
                let cap = (ratio * present.iter().sum::<usize>() as f64 / present.len() as f64).floor() as usize;
                neutral.min(cap)
            };
            prop_assert_eq!(kept.iter().filter(|s| s.majority == 0).count(), expected);
            prop_assert_eq!(kept.iter().filter(|s| s.majority != 0).count(), majorities.len() - neutral);
            prop_assert!(kept.windows(2).all(|w| w[0].start < w[1].start));
            Ok(())
        })
        .map_err(|e| format!("under-sampling cap: {e}"))?;

    runner()
        .run(&(2usize..7).prop_flat_map(|n| (Just(n), prop::collection::vec((0..n, 0..n), 0..400))), |(n, pairs)| {
            let (truth, pred): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
            let cm = ConfusionMatrix::from_pairs(n, &truth, &pred);
            prop_assert_eq!(cm.total() as usize, pairs.len());
            for c in 0..n {
                let row: u64 = cm.counts[c].iter().sum();
                let col: u64 = cm.counts.iter().map(|r| r[c]).sum();
                prop_assert_eq!(row as usize, truth.iter().filter(|&&t| t == c).count());
                prop_assert_eq!(col as usize, pred.iter().filter(|&&p| p == c).count());
            }
            let agree = pairs.iter().filter(|(t, p)| t == p).count();
            prop_assert_eq!(cm.trace() as usize, agree);
            Ok(())
        })
        .map_err(|e| format!("confusion double entry: {e}"))?;
    Ok(())
}

fn c10_determinism(lab: &mut Lab) -> Outcome {
    let tmp = tempfile::TempDir::new().unwrap();
    let mut problems = Vec::new();

    let spec = DatasetSpec::default_with(3, 20, true);
    let a = synthesize_dataset(&spec).unwrap();
    let b = synthesize_dataset(&spec).unwrap();
    write_dataset(&tmp.path().join("a"), &spec, &a).unwrap();
    write_dataset(&tmp.path().join("b"), &spec, &b).unwrap();
    if file_bytes(&tmp.path().join("a")) != file_bytes(&tmp.path().join("b")) {
        problems.push("dataset bytes differ".to_string());
    }
    let (_, back) = read_dataset(&tmp.path().join("a")).unwrap();
    if back != a {
        problems.push("dataset round trip".into());
    }

    let seqs = lab.five_class().to_vec();
    let cfg = TrainConfig { hidden: 16, epochs: 2, seed: 9, ..TrainConfig::default() };
    let data: PreparedData = prepare(&seqs, cfg.task, &cfg.features).unwrap();
    let mut texts = Vec::new();
    for run in 0..2 {
        let out = egogesture::training::train(&data, &cfg).unwrap();
        let ckpt = Checkpoint::from_outcome(&out);
        let path = tmp.path().join(format!("ckpt{run}.json"));
        write_checkpoint(&path, &ckpt).unwrap();
        let conf = tmp.path().join(format!("confusion{run}.csv"));
        write_confusion_csv(&conf, &out.report).unwrap();
        let hist = tmp.path().join(format!("history{run}.csv"));
        write_history_csv(&hist, &out.report.history).unwrap();
        texts.push((fs::read(&path).unwrap(), fs::read(&conf).unwrap(), fs::read(&hist).unwrap()));

        let loaded = read_checkpoint(&path).unwrap();
        if loaded != ckpt || loaded.model().unwrap() != out.state {
            problems.push("checkpoint round trip".into());
        }
        if read_history_csv(&hist).unwrap() != out.report.history {
            problems.push("history round trip".into());
        }
        if read_confusion_csv(&conf).unwrap() != (out.report.class_names.clone(), out.report.confusion.counts.clone()) {
            problems.push("confusion round trip".into());
        }
    }
    if texts[0] != texts[1] {
        problems.push("checkpoint or report bytes differ between identical runs".into());
    }
    let rows = vec![
        SweepRow { run: 0, setting: "10".into(), epoch: 1, metric: "val_accuracy".into(), value: 0.1 + 0.2 },
        SweepRow { run: 1, setting: "0.5".into(), epoch: 30, metric: "train_loss".into(), value: 1.0 / 3.0 },
    ];
    let sweep = tmp.path().join("sweep.csv");
    write_sweep_csv(&sweep, &rows).unwrap();
    if read_sweep_csv(&sweep).unwrap() != rows {
        problems.push("sweep round trip".into());
    }

    if let Err(e) = properties() {
        problems.push(e);
    }
    check(
        problems.is_empty(),
        if problems.is_empty() {
            "datasets, checkpoints and reports byte-identical; round trips exact; 3 x 1000 property cases".into()
        } else {
            problems.join("; ")
        },
    )
}

fn main() -> ExitCode {
    let criteria: [(u32, &str, fn(&mut Lab) -> Outcome); 10] = [
        (1, "gradient correctness", c1_gradients),
        (2, "homography oracle suite", c2_homography),
        (3, "end-to-end accuracy", c3_accuracy),
        (4, "feature ablation", c4_features),
        (5, "channel ablation", c5_channels),
        (6, "frame-rate robustness", c6_frame_rates),
        (7, "split generalization", c7_splits),
        (8, "streaming equivalence", c8_streaming),
        (9, "real-time budget", c9_latency),
        (10, "determinism and IO", c10_determinism),
    ];
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut lab = Lab::default();
    let mut failed = 0;
    for (id, name, f) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let started = Instant::now();
        let (tag, detail) = match f(&mut lab) {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} {id:>2} {name}: {detail} [{:.1} s]", started.elapsed().as_secs_f64());
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}
