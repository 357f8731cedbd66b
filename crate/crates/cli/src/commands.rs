use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use egogesture::dataio::{
    parse_frames, read_checkpoint, read_dataset, write_checkpoint, write_class_metrics_csv, write_confusion_csv,
    write_dataset, write_history_csv, write_sweep_csv, write_time_diagram_csv, Checkpoint, SweepRow,
};
use egogesture::features::{Channels, FeatureKind, MotionFeature};
use egogesture::inference::{latency_report, stream_features, time_diagram, StreamState};
use egogesture::kinematics::{
    downsample_rate, label_runs, synthesize_dataset, ActorProfile, DatasetSpec, GestureClass, LabeledSequence, SceneKind,
    SUPPORTED_FRAME_RATES,
};
use egogesture::model::{grad_check, grad_check_with, GradCheckDims};
use egogesture::training::{
    evaluate_prepared, evaluate_validation, prepare, repeat_outcomes, train_with_progress, DecayMode,
    DistributionReport, MetricsReport, SplitSpec, Task, TrainConfig, TrainOutcome,
};
use serde::Serialize;

use crate::error::CliError;
use crate::{
    Axis, ChannelsArg, DecayArg, EvalArgs, EvalOn, FeaturesArg, GenArgs, GradcheckArgs, ModelOpts, ReportArgs,
    StreamArgs, SweepArgs, TrainArgs,
};

fn parse_split(s: &str) -> Result<SplitSpec, CliError> {
    let bad = || CliError::Usage(format!("unknown split {s:?}; use stratified[:FRACTION], actor:ID or scene:indoor|outdoor"));
    let (kind, arg) = match s.split_once(':') {
        Some((k, a)) => (k, Some(a)),
        None => (s, None),
    };
    match (kind, arg) {
        ("stratified", None) => Ok(SplitSpec::default()),
        ("stratified", Some(f)) => {
            let train_fraction: f64 = f.parse().map_err(|_| bad())?;
            if !(train_fraction > 0.0 && train_fraction < 1.0) {
                return Err(CliError::Usage(format!("train fraction {train_fraction} must lie in (0, 1)")));
            }
            Ok(SplitSpec::Stratified { train_fraction })
        }
        ("actor", Some(id)) => Ok(SplitSpec::LeaveOneActorOut { actor_id: id.parse().map_err(|_| bad())? }),
        ("scene", Some(name)) => Ok(SplitSpec::SceneBased { train_scene: SceneKind::from_name(name).ok_or_else(bad)? }),
        _ => Err(bad()),
    }
}

fn train_config(o: &ModelOpts) -> Result<TrainConfig, CliError> {
    let mut cfg = TrainConfig {
        split: parse_split(&o.split)?,
        seed: o.seed,
        hidden: o.hidden,
        task: o.task.parse::<Task>().map_err(CliError::Usage)?,
        epochs: o.epochs,
        batch_size: o.batch_size,
        ..TrainConfig::default()
    };
    cfg.features.kind = match o.features {
        FeaturesArg::Raw8 => FeatureKind::Raw8,
        FeaturesArg::Descriptor16 => FeatureKind::Descriptor16,
    };
    cfg.features.channels = match o.channels {
        ChannelsArg::World => Channels::World,
        ChannelsArg::Eye => Channels::Eye,
        ChannelsArg::Both => Channels::Both,
    };
    cfg.features.alpha_w = o.alpha_w;
    cfg.features.alpha_e = o.alpha_e;
    cfg.adam.lr = o.lr;
    cfg.adam.weight_decay = o.weight_decay;
    cfg.adam.decay = match o.decay {
        DecayArg::Decoupled => DecayMode::Decoupled,
        DecayArg::L2 => DecayMode::L2,
    };
    for (name, v) in [("alpha-w", o.alpha_w), ("alpha-e", o.alpha_e), ("weight-decay", o.weight_decay)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(CliError::Usage(format!("--{name} must be a non-negative number, got {v}")));
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn gen(a: GenArgs) -> Result<(), CliError> {
    if !(a.noise_scale >= 0.0 && a.noise_scale.is_finite()) {
        return Err(CliError::Usage(format!("--noise-scale must be non-negative, got {}", a.noise_scale)));
    }
    if a.sessions_per_actor == 0 {
        return Err(CliError::Usage("--sessions-per-actor must be positive".into()));
    }
    let mut spec = DatasetSpec::default_with(a.seed, a.fps, a.classes == 6);
    spec.actors = ActorProfile::default_set().into_iter().take(a.actors as usize).collect();
    spec.sessions_per_actor = a.sessions_per_actor;
    spec.kinematics.noise_scale = a.noise_scale;
    let seqs = synthesize_dataset(&spec)?;
    let manifest = write_dataset(&a.out, &spec, &seqs)?;

    let mut frames = [0usize; 6];
    let mut instances = [0usize; 6];
    for s in &seqs {
        for f in &s.frames {
            frames[f.label.id()] += 1;
        }
        for (class, _, _) in label_runs(&s.labels()) {
            if class != GestureClass::Neutral {
                instances[class.id()] += 1;
            }
        }
    }
    let total: usize = frames.iter().sum();
    println!("{} sequences, {:.2} s at {} fps", manifest.sequences.len(), manifest.total_seconds(), manifest.frame_rate);
    println!("{:<12} {:>8} {:>7} {:>9}", "class", "frames", "share", "instances");
    for c in GestureClass::ALL {
        if frames[c.id()] == 0 {
            continue;
        }
        println!(
            "{:<12} {:>8} {:>7.3} {:>9}",
            c.name(),
            frames[c.id()],
            frames[c.id()] as f64 / total as f64,
            instances[c.id()]
        );
    }
    Ok(())
}

fn history_path(ckpt: &Path) -> std::path::PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".history.csv");
    s.into()
}

fn print_distribution(d: &DistributionReport) {
    println!(
        "peak accuracy over {} runs: max {:.4} mean {:.4} std {:.4} min {:.4} median {:.4}",
        d.values.len(),
        d.max,
        d.mean,
        d.std,
        d.min,
        d.median
    );
}

fn print_metrics(r: &MetricsReport) {
    println!("accuracy {:.4}", r.accuracy);
    println!("{:<12} {:>8} {:>9} {:>7} {:>7}", "class", "support", "precision", "recall", "f1");
    for c in &r.per_class {
        println!("{:<12} {:>8} {:>9.4} {:>7.4} {:>7.4}", c.class, c.support, c.precision, c.recall, c.f1);
    }
}

pub fn train(a: TrainArgs) -> Result<(), CliError> {
    let cfg = train_config(&a.model)?;
    let (_, seqs) = read_dataset(&a.data)?;
    let data = prepare(&seqs, cfg.task, &cfg.features)?;
    let best: TrainOutcome = if a.repeats == 1 {
        train_with_progress(&data, &cfg, |e| {
            eprintln!("epoch {:>3} loss {:.4} val_acc {:.4} lr {:.2e}", e.epoch, e.train_loss, e.val_accuracy, e.lr);
        })?
    } else {
        eprintln!("training {} runs", a.repeats);
        let runs = repeat_outcomes(&data, &cfg, a.repeats as usize)?;
        for (i, r) in runs.iter().enumerate() {
            println!("run {i} seed {} peak {:.4} at epoch {}", r.config.seed, r.report.peak_accuracy, r.report.best_epoch);
        }
        print_distribution(&DistributionReport::from_values(runs.iter().map(|r| r.report.peak_accuracy).collect()));
        let mut best = None::<TrainOutcome>;
        for r in runs {
            if best.as_ref().is_none_or(|b| r.report.peak_accuracy > b.report.peak_accuracy) {
                best = Some(r);
            }
        }
        best.expect("at least one run")
    };
    println!(
        "peak validation accuracy {:.4} at epoch {} ({} train / {} validation snippets)",
        best.report.peak_accuracy, best.report.best_epoch, best.train_snippets, best.val_snippets
    );
    print_metrics(&best.report);
    write_checkpoint(&a.out, &Checkpoint::from_outcome(&best))?;
    write_history_csv(&a.history.unwrap_or_else(|| history_path(&a.out)), &best.report.history)?;
    Ok(())
}

fn create_dir(p: &Path) -> Result<(), CliError> {
    fs::create_dir_all(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))
}

pub fn eval(a: EvalArgs) -> Result<(), CliError> {
    let ckpt = read_checkpoint(&a.ckpt)?;
    let state = ckpt.model()?;
    let cfg = &ckpt.config;
    let (manifest, seqs) = read_dataset(&a.data)?;
    let data = prepare(&seqs, cfg.task, &cfg.features)?;
    let report = match a.on {
        EvalOn::All => evaluate_prepared(&state, &ckpt.stats, &data)?,
        EvalOn::Val => evaluate_validation(&state, &ckpt.stats, &data, cfg)?,
    };
    create_dir(&a.report)?;
    write_confusion_csv(&a.report.join("confusion.csv"), &report)?;
    write_class_metrics_csv(&a.report.join("metrics.csv"), &report)?;
    let time_dir = a.report.join("time");
    create_dir(&time_dir)?;
    let (mut onsets, mut detected) = (0, 0);
    for seq in &data.sequences {
        let features: Vec<MotionFeature> =
            seq.features.iter().map(|v| MotionFeature { values: v.clone(), layout: state.layout }).collect();
        let run = stream_features(&state, &ckpt.stats, &features, a.k as usize, true)?;
        let diagram = time_diagram(&run.frame_labels, &run.voted_labels, &seq.labels, manifest.frame_rate)?;
        onsets += diagram.onsets.len();
        detected += diagram.onsets_detected();
        write_time_diagram_csv(&time_dir.join(format!("{}.csv", seq.id)), &diagram)?;
    }
    print_metrics(&report);
    println!("onsets detected within 1 s: {detected}/{onsets}");
    Ok(())
}

fn read_frames_input(path: &Path) -> Result<String, CliError> {
    if path.as_os_str() == "-" {
        let mut s = String::new();
        io::stdin().read_to_string(&mut s)?;
        Ok(s)
    } else {
        fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }
}

pub fn stream(a: StreamArgs) -> Result<(), CliError> {
    let ckpt = read_checkpoint(&a.ckpt)?;
    let state = ckpt.model()?;
    let cfg = &ckpt.config;
    let frames = parse_frames(&read_frames_input(&a.data)?, &a.data)?;
    let truth = frames
        .iter()
        .map(|f| {
            cfg.task
                .map_label(f.label)
                .ok_or_else(|| CliError::Incompatible(format!("frame label {} is outside task {}", f.label.name(), cfg.task)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let names = cfg.task.class_names();
    let k = a.k as usize;
    let mut stream = StreamState::new(&state, ckpt.stats.clone(), k, !a.no_carry)?.with_pipeline(cfg.features);
    let mut out = io::stdout().lock();
    let mut predicted = Vec::with_capacity(frames.len());
    let mut voted = Vec::with_capacity(frames.len());
    let mut emit = |b: egogesture::inference::BatchResult, out: &mut io::StdoutLock| -> io::Result<()> {
        writeln!(out, "batch {} {} {}", b.start_frame, b.labels.len(), names[b.voted])?;
        out.flush()?;
        voted.extend(std::iter::repeat_n(b.voted, b.labels.len()));
        predicted.extend(b.labels);
        Ok(())
    };
    for f in &frames {
        if let Some(b) = stream.push_frame(f)? {
            emit(b, &mut out)?;
        }
    }
    if let Some(b) = stream.flush() {
        emit(b, &mut out)?;
    }

    if let Some(lat) = latency_report(stream.latencies(), k) {
        writeln!(out, "latency k={} batches={} mean_s={:.6} p95_s={:.6}", lat.k, lat.batches, lat.mean_s, lat.p95_s)?;
        let budget = k as f64 / a.fps as f64;
        let verdict = if lat.p95_s < budget { "real-time" } else { "too slow" };
        writeln!(out, "budget at {} fps: {budget:.3} s, {verdict}", a.fps)?;
    }
    let diagram = time_diagram(&predicted, &voted, &truth, a.fps)?;
    writeln!(
        out,
        "frames {} hits {} accuracy {:.4} onsets detected {}/{}",
        truth.len(),
        diagram.hits(),
        if truth.is_empty() { 0.0 } else { diagram.hits() as f64 / truth.len() as f64 },
        diagram.onsets_detected(),
        diagram.onsets.len()
    )?;
    if let Some(p) = &a.time_diagram {
        write_time_diagram_csv(p, &diagram)?;
    }
    Ok(())
}

fn parse_dims(s: &str) -> Result<GradCheckDims, CliError> {
    let v: Vec<usize> = s
        .split(',')
        .map(|x| x.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("--dims expects D,H,N,T,M, got {s:?}")))?;
    match v[..] {
        [input, hidden, classes, steps, batch] if v.iter().all(|&x| x > 0) && classes >= 2 => {
            Ok(GradCheckDims { input, hidden, classes, steps, batch })
        }
        _ => Err(CliError::Usage(format!("--dims expects five positive sizes with N >= 2, got {s:?}"))),
    }
}

pub fn gradcheck(a: GradcheckArgs) -> Result<(), CliError> {
    let dims = parse_dims(&a.dims)?;
    let report = if a.corrupt_forget {
        let h = dims.hidden;
        grad_check_with(a.seed, dims, |g| {
            for row in g.w_ih.rows_mut().into_iter().skip(h).take(h) {
                for x in row {
                    *x *= 1.5;
                }
            }
        })
    } else {
        grad_check(a.seed, dims)
    };
    println!("{report}");
    if report.pass() {
        Ok(())
    } else {
        Err(CliError::CheckFailed)
    }
}

pub fn sweep(a: SweepArgs) -> Result<(), CliError> {
    let base = train_config(&a.model)?;
    let values: Vec<&str> = a.values.split(',').map(str::trim).filter(|v| !v.is_empty()).collect();
    if values.is_empty() {
        return Err(CliError::Usage("--values is empty".into()));
    }
    let (manifest, seqs) = read_dataset(&a.data)?;
    // Parse every setting before any training starts.
    let mut settings: Vec<(String, TrainConfig, Option<u32>)> = Vec::new();
    for v in &values {
        let bad = || CliError::Usage(format!("bad value {v:?} for this axis"));
        let mut cfg = base.clone();
        let mut fps = None;
        match a.axis {
            Axis::Hidden => cfg.hidden = v.parse().map_err(|_| bad())?,
            Axis::AlphaW => {
                cfg.features.alpha_w = v.parse().map_err(|_| bad())?;
                if !(cfg.features.alpha_w >= 0.0 && cfg.features.alpha_w.is_finite()) {
                    return Err(bad());
                }
            }
            Axis::Fps => {
                let f: u32 = v.parse().map_err(|_| bad())?;
                if !SUPPORTED_FRAME_RATES.contains(&f) || manifest.frame_rate % f != 0 {
                    return Err(CliError::Usage(format!("cannot resample {} fps data to {f} fps", manifest.frame_rate)));
                }
                fps = Some(f);
            }
        }
        cfg.validate()?;
        settings.push((v.to_string(), cfg, fps));
    }

    let mut rows = Vec::new();
    for (setting, cfg, fps) in &settings {
        eprintln!("setting {setting}: {} runs", a.repeats);
        let resampled: Vec<LabeledSequence>;
        let source = match fps {
            Some(f) => {
                resampled = seqs.iter().map(|s| downsample_rate(s, *f)).collect::<Result<_, _>>()?;
                &resampled
            }
            None => &seqs,
        };
        let data = prepare(source, cfg.task, &cfg.features)?;
        let runs = repeat_outcomes(&data, cfg, a.repeats as usize)?;
        for (run, out) in runs.iter().enumerate() {
            for e in &out.report.history {
                for (metric, value) in [("val_accuracy", e.val_accuracy), ("train_loss", e.train_loss), ("lr", e.lr)] {
                    rows.push(SweepRow { run, setting: setting.clone(), epoch: e.epoch, metric: metric.into(), value });
                }
            }
        }
        let peaks: Vec<f64> = runs.iter().map(|r| r.report.peak_accuracy).collect();
        let finals: Vec<f64> = runs.iter().filter_map(|r| r.report.final_accuracy()).collect();
        println!(
            "{setting}: mean peak {:.4} mean final {:.4}",
            peaks.iter().sum::<f64>() / peaks.len() as f64,
            finals.iter().sum::<f64>() / finals.len().max(1) as f64
        );
    }
    write_sweep_csv(&a.out, &rows)?;
    Ok(())
}

#[derive(Serialize)]
struct Summary<'a> {
    format_version: u32,
    task: String,
    classes: Vec<String>,
    features: &'static str,
    channels: &'static str,
    alpha_w: f64,
    alpha_e: f64,
    input: usize,
    hidden: usize,
    parameters: usize,
    split: &'a SplitSpec,
    seed: u64,
    epochs: usize,
    best_epoch: usize,
    peak_accuracy: f64,
}

pub fn report(a: ReportArgs) -> Result<(), CliError> {
    let ckpt = read_checkpoint(&a.ckpt)?;
    let cfg = &ckpt.config;
    let s = Summary {
        format_version: ckpt.format_version,
        task: cfg.task.to_string(),
        classes: cfg.task.class_names(),
        features: cfg.features.kind.name(),
        channels: cfg.features.channels.name(),
        alpha_w: cfg.features.alpha_w,
        alpha_e: cfg.features.alpha_e,
        input: ckpt.dims.input,
        hidden: ckpt.dims.hidden,
        parameters: ckpt.dims.parameter_count(),
        split: &cfg.split,
        seed: cfg.seed,
        epochs: cfg.epochs,
        best_epoch: ckpt.best_epoch,
        peak_accuracy: ckpt.peak_accuracy,
    };
    if a.json {
        println!("{}", serde_json::to_string_pretty(&s).map_err(|e| CliError::Io(e.to_string()))?);
        return Ok(());
    }
    println!("format version  {}", s.format_version);
    println!("task            {} ({})", s.task, s.classes.join(", "));
    println!("features        {} / {} (alpha_w {}, alpha_e {})", s.features, s.channels, s.alpha_w, s.alpha_e);
    println!("model           D={} H={} N={}, {} parameters", s.input, s.hidden, s.classes.len(), s.parameters);
    println!("split           {:?}", s.split);
    println!("seed            {}", s.seed);
    println!("epochs          {} (best {})", s.epochs, s.best_epoch);
    println!("peak accuracy   {:.4}", s.peak_accuracy);
    Ok(())
}
