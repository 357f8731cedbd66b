//! On-disk formats: dataset directories, checkpoints, and CSV reports.
//!
//! A dataset directory holds `manifest.json` plus one `<id>.frames` file per
//! sequence. Frame files start with a version line, then one frame per line:
//! index, timestamp, 8 world parameters, 8 eye parameters, label id, comma
//! separated. Floats are written with 17 significant digits.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureLayout, FeatureStats};
use crate::inference::TimeDiagram;
use crate::kinematics::{DatasetSpec, FrameRecord, GestureClass, LabeledSequence, SceneKind};
use crate::model::{BatchNormState, FcParams, LstmParams, ModelDims, ModelState};
use crate::training::{EpochRecord, MetricsReport, TrainConfig, TrainOutcome};

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
pub const FRAMES_HEADER: &str = "egogesture-frames";
pub const MANIFEST_FILE: &str = "manifest.json";

const FIELDS_PER_FRAME: usize = 19;

#[derive(Debug, Error)]
pub enum DataioError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: unknown format version {found} (expected {expected})")]
    UnknownVersion { path: PathBuf, found: String, expected: u32 },
    #[error("{path}:{line}: malformed record: {reason}")]
    MalformedRecord { path: PathBuf, line: usize, reason: String },
    #[error("{path}: missing sequence file referenced by the manifest")]
    MissingFile { path: PathBuf },
    #[error("{path}: {msg}")]
    Json { path: PathBuf, msg: String },
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("{path}: {msg}")]
    Csv { path: PathBuf, msg: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataioError + '_ {
    move |source| DataioError::Io { path: path.to_path_buf(), source }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), DataioError> {
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(contents).map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub actor_id: u32,
    pub scene: SceneKind,
    pub class: GestureClass,
    pub seed: u64,
    pub file: String,
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub frame_rate: u32,
    pub spec: DatasetSpec,
    pub sequences: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn total_seconds(&self) -> f64 {
        self.sequences.iter().map(|e| e.frames as f64 / self.frame_rate as f64).sum()
    }
}

/// `{:.16e}` prints 17 significant digits, enough for an exact f64 round trip.
fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn format_frames(seq: &LabeledSequence) -> String {
    let mut out = format!("{FRAMES_HEADER} {DATASET_FORMAT_VERSION}\n");
    for f in &seq.frames {
        let mut fields = vec![f.frame_index.to_string(), fmt_f64(f.frame_index as f64 / seq.frame_rate as f64)];
        fields.extend(f.world.iter().map(|&v| fmt_f64(v)));
        fields.extend(f.eye.iter().map(|&v| fmt_f64(v)));
        fields.push(f.label.id().to_string());
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Parses a frame file body. The version line is checked before anything else.
pub fn parse_frames(text: &str, path: &Path) -> Result<Vec<FrameRecord>, DataioError> {
    let malformed = |line: usize, reason: String| DataioError::MalformedRecord { path: path.to_path_buf(), line, reason };
    let mut lines = text.split('\n');
    let header = lines.next().unwrap_or("");
    let version = header.strip_prefix(FRAMES_HEADER).map(str::trim);
    if version != Some(&DATASET_FORMAT_VERSION.to_string()) {
        return Err(DataioError::UnknownVersion {
            path: path.to_path_buf(),
            found: header.to_string(),
            expected: DATASET_FORMAT_VERSION,
        });
    }
    let body: Vec<&str> = lines.collect();
    // Exactly one trailing newline is allowed.
    let n = match body.last() {
        Some(&"") => body.len() - 1,
        _ => return Err(malformed(body.len() + 1, "missing final newline".into())),
    };
    let mut frames = Vec::with_capacity(n);
    for (i, line) in body[..n].iter().enumerate() {
        let lineno = i + 2;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != FIELDS_PER_FRAME {
            return Err(malformed(lineno, format!("expected {FIELDS_PER_FRAME} fields, found {}", fields.len())));
        }
        let index: usize = fields[0].parse().map_err(|e| malformed(lineno, format!("frame index: {e}")))?;
        if index != i {
            return Err(malformed(lineno, format!("frame index {index}, expected {i}")));
        }
        let mut values = [0.0f64; 17];
        for (k, v) in values.iter_mut().enumerate() {
            *v = fields[1 + k].parse().map_err(|e| malformed(lineno, format!("field {}: {e}", k + 2)))?;
            if !v.is_finite() {
                return Err(malformed(lineno, format!("field {} is not finite", k + 2)));
            }
        }
        let label_id: usize = fields[18].parse().map_err(|e| malformed(lineno, format!("label: {e}")))?;
        let label = GestureClass::from_id(label_id).ok_or_else(|| malformed(lineno, format!("unknown label id {label_id}")))?;
        let mut world = [0.0; 8];
        let mut eye = [0.0; 8];
        world.copy_from_slice(&values[1..9]);
        eye.copy_from_slice(&values[9..17]);
        frames.push(FrameRecord { frame_index: index, world, eye, label });
    }
    Ok(frames)
}

pub fn write_dataset(dir: &Path, spec: &DatasetSpec, sequences: &[LabeledSequence]) -> Result<DatasetManifest, DataioError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut entries = Vec::with_capacity(sequences.len());
    for seq in sequences {
        let file = format!("{}.frames", seq.id);
        let path = dir.join(&file);
        write_file(&path, format_frames(seq).as_bytes())?;
        entries.push(ManifestEntry {
            id: seq.id.clone(),
            actor_id: seq.actor_id,
            scene: seq.scene,
            class: seq.class,
            seed: seq.seed,
            file,
            frames: seq.frames.len(),
        });
    }
    let frame_rate = sequences.first().map_or(spec.frame_rate, |s| s.frame_rate);
    let manifest = DatasetManifest { format_version: DATASET_FORMAT_VERSION, frame_rate, spec: spec.clone(), sequences: entries };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| DataioError::Json { path: path.clone(), msg: e.to_string() })?;
    write_file(&path, format!("{text}\n").as_bytes())?;
    Ok(manifest)
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: u32,
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest, DataioError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let json = |e: serde_json::Error| DataioError::Json { path: path.clone(), msg: e.to_string() };
    let probe: VersionProbe = serde_json::from_str(&text).map_err(json)?;
    if probe.format_version != DATASET_FORMAT_VERSION {
        return Err(DataioError::UnknownVersion {
            path: path.clone(),
            found: probe.format_version.to_string(),
            expected: DATASET_FORMAT_VERSION,
        });
    }
    serde_json::from_str(&text).map_err(json)
}

pub fn read_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<LabeledSequence>), DataioError> {
    let manifest = read_manifest(dir)?;
    let mut sequences = Vec::with_capacity(manifest.sequences.len());
    for e in &manifest.sequences {
        let path = dir.join(&e.file);
        if !path.is_file() {
            return Err(DataioError::MissingFile { path });
        }
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let frames = parse_frames(&text, &path)?;
        if frames.len() != e.frames {
            return Err(DataioError::MalformedRecord {
                path,
                line: frames.len() + 1,
                reason: format!("manifest declares {} frames, file has {}", e.frames, frames.len()),
            });
        }
        sequences.push(LabeledSequence {
            id: e.id.clone(),
            frame_rate: manifest.frame_rate,
            actor_id: e.actor_id,
            scene: e.scene,
            class: e.class,
            seed: e.seed,
            frames,
        });
    }
    Ok((manifest, sequences))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayData {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl ArrayData {
    fn vector(a: &Array1<f64>) -> Self {
        ArrayData { shape: vec![a.len()], data: a.to_vec() }
    }

    fn matrix(a: &Array2<f64>) -> Self {
        ArrayData { shape: vec![a.nrows(), a.ncols()], data: a.iter().copied().collect() }
    }

    fn to_vector(&self, name: &str, len: usize) -> Result<Array1<f64>, DataioError> {
        if self.shape != [len] || self.data.len() != len {
            return Err(DataioError::ShapeMismatch(format!("{name}: shape {:?}, expected [{len}]", self.shape)));
        }
        Ok(Array1::from(self.data.clone()))
    }

    fn to_matrix(&self, name: &str, rows: usize, cols: usize) -> Result<Array2<f64>, DataioError> {
        if self.shape != [rows, cols] || self.data.len() != rows * cols {
            return Err(DataioError::ShapeMismatch(format!("{name}: shape {:?}, expected [{rows}, {cols}]", self.shape)));
        }
        Ok(Array2::from_shape_vec((rows, cols), self.data.clone()).expect("length checked"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArrays {
    pub bn_gamma: ArrayData,
    pub bn_beta: ArrayData,
    pub bn_running_mean: ArrayData,
    pub bn_running_var: ArrayData,
    pub lstm_w_ih: ArrayData,
    pub lstm_w_hh: ArrayData,
    pub lstm_bias: ArrayData,
    pub fc_weight: ArrayData,
    pub fc_bias: ArrayData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: TrainConfig,
    pub dims: ModelDims,
    pub layout: FeatureLayout,
    pub bn_momentum: f64,
    pub bn_eps: f64,
    pub arrays: ModelArrays,
    pub stats: FeatureStats,
    pub best_epoch: usize,
    pub peak_accuracy: f64,
}

impl Checkpoint {
    pub fn from_outcome(out: &TrainOutcome) -> Self {
        Checkpoint::new(&out.state, &out.stats, &out.config, out.report.best_epoch, out.report.peak_accuracy)
    }

    pub fn new(state: &ModelState, stats: &FeatureStats, config: &TrainConfig, best_epoch: usize, peak_accuracy: f64) -> Self {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            config: config.clone(),
            dims: state.dims,
            layout: state.layout,
            bn_momentum: state.bn.momentum,
            bn_eps: state.bn.eps,
            arrays: ModelArrays {
                bn_gamma: ArrayData::vector(&state.bn.gamma),
                bn_beta: ArrayData::vector(&state.bn.beta),
                bn_running_mean: ArrayData::vector(&state.bn.running_mean),
                bn_running_var: ArrayData::vector(&state.bn.running_var),
                lstm_w_ih: ArrayData::matrix(&state.lstm.w_ih),
                lstm_w_hh: ArrayData::matrix(&state.lstm.w_hh),
                lstm_bias: ArrayData::vector(&state.lstm.bias),
                fc_weight: ArrayData::matrix(&state.fc.weight),
                fc_bias: ArrayData::vector(&state.fc.bias),
            },
            stats: stats.clone(),
            best_epoch,
            peak_accuracy,
        }
    }

    /// Rebuilds the model, checking every array against the declared dimensions.
    pub fn model(&self) -> Result<ModelState, DataioError> {
        let ModelDims { input: d, hidden: h, classes: n } = self.dims;
        let a = &self.arrays;
        let state = ModelState {
            dims: self.dims,
            layout: self.layout,
            bn: BatchNormState {
                gamma: a.bn_gamma.to_vector("bn.gamma", d)?,
                beta: a.bn_beta.to_vector("bn.beta", d)?,
                running_mean: a.bn_running_mean.to_vector("bn.running_mean", d)?,
                running_var: a.bn_running_var.to_vector("bn.running_var", d)?,
                momentum: self.bn_momentum,
                eps: self.bn_eps,
            },
            lstm: LstmParams {
                w_ih: a.lstm_w_ih.to_matrix("lstm.w_ih", 4 * h, d)?,
                w_hh: a.lstm_w_hh.to_matrix("lstm.w_hh", 4 * h, h)?,
                bias: a.lstm_bias.to_vector("lstm.bias", 4 * h)?,
            },
            fc: FcParams { weight: a.fc_weight.to_matrix("fc.weight", n, h)?, bias: a.fc_bias.to_vector("fc.bias", n)? },
        };
        state.validate().map_err(|e| DataioError::ShapeMismatch(e.to_string()))?;
        if self.stats.dim() != d {
            return Err(DataioError::ShapeMismatch(format!("feature statistics width {}, model input {d}", self.stats.dim())));
        }
        Ok(state)
    }

    /// Fails when the checkpoint cannot serve a run configured by `cfg`.
    pub fn check_compatible(&self, cfg: &TrainConfig) -> Result<(), DataioError> {
        let expected = ModelDims { input: cfg.features.dim(), hidden: cfg.hidden, classes: cfg.task.classes() };
        if expected != self.dims {
            return Err(DataioError::ShapeMismatch(format!("checkpoint dims {:?}, configuration expects {expected:?}", self.dims)));
        }
        if cfg.features.layout() != self.layout {
            return Err(DataioError::ShapeMismatch(format!("checkpoint layout {:?}, configuration expects {:?}", self.layout, cfg.features.layout())));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, DataioError> {
        serde_json::to_string_pretty(self).map(|s| s + "\n").map_err(|e| DataioError::Json { path: PathBuf::new(), msg: e.to_string() })
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self, DataioError> {
        let json = |e: serde_json::Error| DataioError::Json { path: path.to_path_buf(), msg: e.to_string() };
        let probe: VersionProbe = serde_json::from_str(text).map_err(json)?;
        if probe.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(DataioError::VersionMismatch { found: probe.format_version, expected: CHECKPOINT_FORMAT_VERSION });
        }
        let ckpt: Checkpoint = serde_json::from_str(text).map_err(json)?;
        ckpt.model()?;
        Ok(ckpt)
    }
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), DataioError> {
    let text = ckpt.to_json().map_err(|e| match e {
        DataioError::Json { msg, .. } => DataioError::Json { path: path.to_path_buf(), msg },
        other => other,
    })?;
    write_file(path, text.as_bytes())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, DataioError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Checkpoint::from_json(&text, path)
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> DataioError + '_ {
    move |e| DataioError::Csv { path: path.to_path_buf(), msg: e.to_string() }
}

fn write_rows(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), DataioError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for row in rows {
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

/// `N+1 x N+1` grid: a header of class names, then one row per true class.
pub fn write_confusion_csv(path: &Path, report: &MetricsReport) -> Result<(), DataioError> {
    let mut header = vec!["truth\\predicted".to_string()];
    header.extend(report.class_names.iter().cloned());
    let rows = report.class_names.iter().zip(&report.confusion.counts).map(|(name, row)| {
        let mut r = vec![name.clone()];
        r.extend(row.iter().map(|c| c.to_string()));
        r
    });
    write_rows(path, &header, rows)
}

pub fn write_class_metrics_csv(path: &Path, report: &MetricsReport) -> Result<(), DataioError> {
    let rows = report.per_class.iter().map(|c| {
        vec![c.class.clone(), c.support.to_string(), c.precision.to_string(), c.recall.to_string(), c.f1.to_string()]
    });
    write_rows(path, &strings(&["class", "support", "precision", "recall", "f1"]), rows)
}

pub fn write_history_csv(path: &Path, history: &[EpochRecord]) -> Result<(), DataioError> {
    let rows = history.iter().map(|e| vec![e.epoch.to_string(), e.train_loss.to_string(), e.val_accuracy.to_string(), e.lr.to_string()]);
    write_rows(path, &strings(&["epoch", "train_loss", "val_accuracy", "lr"]), rows)
}

pub fn write_time_diagram_csv(path: &Path, diagram: &TimeDiagram) -> Result<(), DataioError> {
    let rows = diagram.records.iter().map(|r| {
        vec![r.frame.to_string(), r.truth.to_string(), r.predicted.to_string(), r.voted.to_string(), u8::from(r.hit).to_string()]
    });
    write_rows(path, &strings(&["frame", "truth", "predicted", "voted", "hit"]), rows)
}

/// One long-format sweep row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub run: usize,
    pub setting: String,
    pub epoch: usize,
    pub metric: String,
    pub value: f64,
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<(), DataioError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for r in rows {
        w.serialize(r).map_err(csv_err(path))?;
    }
    if rows.is_empty() {
        w.write_record(["run", "setting", "epoch", "metric", "value"]).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>, DataioError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.deserialize().collect::<Result<_, _>>().map_err(csv_err(path))
}

pub fn read_history_csv(path: &Path) -> Result<Vec<EpochRecord>, DataioError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.deserialize().collect::<Result<_, _>>().map_err(csv_err(path))
}

/// Class names and counts from a confusion CSV.
pub fn read_confusion_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<u64>>), DataioError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let names: Vec<String> = r.headers().map_err(csv_err(path))?.iter().skip(1).map(str::to_string).collect();
    let mut counts = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err(path))?;
        let row = rec
            .iter()
            .skip(1)
            .map(|v| v.parse::<u64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| DataioError::MalformedRecord { path: path.to_path_buf(), line: i + 2, reason: e.to_string() })?;
        counts.push(row);
    }
    Ok((names, counts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{synthesize_dataset, DatasetSpec};
    use crate::training::ConfusionMatrix;
    use proptest::prelude::*;

    fn tiny_dataset() -> (DatasetSpec, Vec<LabeledSequence>) {
        let mut spec = DatasetSpec::default_with(3, 10, false);
        spec.sessions_per_actor = 2;
        spec.actors.truncate(2);
        let seqs = synthesize_dataset(&spec).unwrap();
        (spec, seqs)
    }

    #[test]
    fn dataset_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let (spec, seqs) = tiny_dataset();
        let manifest = write_dataset(dir.path(), &spec, &seqs).unwrap();
        let (m2, back) = read_dataset(dir.path()).unwrap();
        assert_eq!(manifest, m2);
        assert_eq!(back, seqs);
        assert_eq!(manifest.total_seconds(), 4.0 * 15.0);
    }

    #[test]
    fn version_is_checked_first() {
        let p = Path::new("x.frames");
        let err = parse_frames("egogesture-frames 2\ngarbage\n", p).unwrap_err();
        assert!(matches!(err, DataioError::UnknownVersion { .. }));
        assert!(matches!(parse_frames("", p).unwrap_err(), DataioError::UnknownVersion { .. }));
    }

    #[test]
    fn truncated_line_names_the_line() {
        let (_, seqs) = tiny_dataset();
        let text = format_frames(&seqs[0]);
        let mut lines: Vec<&str> = text.lines().collect();
        let cut = &lines[5][..lines[5].len() / 2];
        lines[5] = cut;
        let broken = lines.join("\n") + "\n";
        match parse_frames(&broken, Path::new("s.frames")).unwrap_err() {
            DataioError::MalformedRecord { line, .. } => assert_eq!(line, 6),
            e => panic!("unexpected {e}"),
        }
        let garbage = text.clone() + "trailing";
        assert!(matches!(parse_frames(&garbage, Path::new("s")), Err(DataioError::MalformedRecord { .. })));
        let extra = text.replacen('\n', "\n\n", 2);
        assert!(parse_frames(&extra, Path::new("s")).is_err());
    }

    #[test]
    fn missing_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let (spec, seqs) = tiny_dataset();
        write_dataset(dir.path(), &spec, &seqs).unwrap();
        fs::remove_file(dir.path().join("seq_001.frames")).unwrap();
        let err = read_dataset(dir.path()).unwrap_err();
        assert!(matches!(err, DataioError::MissingFile { .. }));
        assert!(err.to_string().contains("seq_001.frames"));
    }

    fn checkpoint(hidden: usize) -> Checkpoint {
        let cfg = TrainConfig { hidden, ..TrainConfig::default() };
        let state = ModelState::new(
            ModelDims { input: cfg.features.dim(), hidden, classes: 5 },
            cfg.features.layout(),
            7,
        );
        let stats = FeatureStats { mean: (0..32).map(|i| i as f64 / 7.0).collect(), std: vec![0.1 + 1e-17; 32] };
        Checkpoint::new(&state, &stats, &cfg, 12, 0.912_345_678_901_234_5)
    }

    #[test]
    fn checkpoint_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.json");
        let ckpt = checkpoint(16);
        write_checkpoint(&path, &ckpt).unwrap();
        let back = read_checkpoint(&path).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.model().unwrap(), ckpt.model().unwrap());
        let path2 = dir.path().join("b.json");
        write_checkpoint(&path2, &back).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn checkpoint_mismatches() {
        let ckpt = checkpoint(128);
        let cfg = TrainConfig { hidden: 64, ..TrainConfig::default() };
        assert!(matches!(ckpt.check_compatible(&cfg), Err(DataioError::ShapeMismatch(_))));
        assert!(ckpt.check_compatible(&TrainConfig::default()).is_ok());
        let text = ckpt.to_json().unwrap().replacen("\"format_version\": 1", "\"format_version\": 9", 1);
        assert!(matches!(Checkpoint::from_json(&text, Path::new("c")), Err(DataioError::VersionMismatch { found: 9, .. })));
        let mut bad = ckpt.clone();
        bad.arrays.fc_bias.data.pop();
        let text = bad.to_json().unwrap();
        assert!(matches!(Checkpoint::from_json(&text, Path::new("c")), Err(DataioError::ShapeMismatch(_))));
    }

    #[test]
    fn reports_have_documented_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let names: Vec<String> = GestureClass::ALL[..5].iter().map(|c| c.name().to_string()).collect();
        let m = ConfusionMatrix::from_pairs(5, &[0, 1, 2, 3, 4, 0], &[0, 1, 2, 3, 0, 0]);
        let mut report = MetricsReport::from_confusion(names.clone(), m.clone());
        report.history = (1..=30).map(|e| EpochRecord { epoch: e, train_loss: 1.0 / e as f64, val_accuracy: 0.5, lr: 5e-4 }).collect();
        let p = dir.path().join("confusion.csv");
        write_confusion_csv(&p, &report).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert!(text.lines().all(|l| l.split(',').count() == 6));
        assert_eq!(read_confusion_csv(&p).unwrap(), (names, m.counts));
        let p = dir.path().join("history.csv");
        write_history_csv(&p, &report.history).unwrap();
        assert_eq!(read_history_csv(&p).unwrap(), report.history);
        let p = dir.path().join("metrics.csv");
        write_class_metrics_csv(&p, &report).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap().lines().count(), 6);
    }

    #[test]
    fn time_diagram_csv_rows() {
        let dir = tempfile::tempdir().unwrap();
        let truth: Vec<usize> = (0..300).map(|i| usize::from(i % 50 > 30) * 2).collect();
        let pred: Vec<usize> = (0..300).map(|i| usize::from(i % 50 > 33) * 2).collect();
        let d = crate::inference::time_diagram(&pred, &pred, &truth, 20).unwrap();
        let p = dir.path().join("td.csv");
        write_time_diagram_csv(&p, &d).unwrap();
        let mut r = csv::Reader::from_path(&p).unwrap();
        let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
        assert_eq!(rows.len(), 300);
        assert!(rows.iter().all(|row| &row[4] == "0" || &row[4] == "1"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn frame_lines_round_trip(values in proptest::collection::vec(proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO, 16), label in 0usize..6) {
            let mut world = [0.0; 8];
            let mut eye = [0.0; 8];
            world.copy_from_slice(&values[..8]);
            eye.copy_from_slice(&values[8..]);
            let seq = LabeledSequence {
                id: "p".into(),
                frame_rate: 20,
                actor_id: 0,
                scene: SceneKind::Indoor,
                class: GestureClass::Maybe,
                seed: 0,
                frames: vec![FrameRecord { frame_index: 0, world, eye, label: GestureClass::from_id(label).unwrap() }],
            };
            let back = parse_frames(&format_frames(&seq), Path::new("p")).unwrap();
            prop_assert_eq!(back[0].world.map(f64::to_bits), world.map(f64::to_bits));
            prop_assert_eq!(back[0].eye.map(f64::to_bits), eye.map(f64::to_bits));
        }
    }
}
