//! Snippet-based training of the recurrent classifier, evaluation on whole
//! sequences, and repeated seeded runs.

mod metrics;
mod optim;
mod snippets;

pub use metrics::{ClassMetrics, ConfusionMatrix, DistributionReport, EpochRecord, MetricsReport};
pub use optim::{adam_step, AdamConfig, AdamState, DecayMode, PlateauConfig, PlateauScheduler};
pub use snippets::{
    extract_snippets, majority_label, snippet_count, split_snippets, undersample_neutral, SequenceTag, Snippet,
    SplitSpec,
};

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array2, Array3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{extract_sequence, FeatureError, FeatureSpec, FeatureStats};
use crate::kinematics::{GestureClass, LabeledSequence, SceneKind};
use crate::model::{argmax, nll_loss, predict_framewise, Mode, ModelDims, ModelError, ModelState};
use crate::rng::derive_seed;

/// Frames per validation forward pass.
const VAL_CHUNK: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainingError {
    #[error("sequence of {len} frames is shorter than the snippet length {snippet}")]
    SequenceTooShort { len: usize, snippet: usize },
    #[error("class {class} has {count} snippet(s); a stratified split needs at least 2")]
    InsufficientClassMembers { class: usize, count: usize },
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("no sequences left for task {0}")]
    EmptyDataset(String),
    #[error("frame label {label} is outside task {task}")]
    LabelOutsideTask { label: GestureClass, task: String },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("training diverged (non-finite loss) in epoch {epoch}")]
    Diverged { epoch: usize },
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Which sessions are used and how frame labels map to class ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Task {
    /// Neutral plus four gestures; Surprise sessions are left out.
    FiveClass,
    SixClass,
    /// Sessions of one gesture, labelled gesture vs Neutral.
    Binary(GestureClass),
}

impl Task {
    pub fn classes(&self) -> usize {
        match self {
            Task::FiveClass => 5,
            Task::SixClass => 6,
            Task::Binary(_) => 2,
        }
    }

    pub fn class_names(&self) -> Vec<String> {
        match self {
            Task::FiveClass => GestureClass::ALL[..5].iter().map(|c| c.name().to_string()).collect(),
            Task::SixClass => GestureClass::ALL.iter().map(|c| c.name().to_string()).collect(),
            Task::Binary(c) => vec![GestureClass::Neutral.name().to_string(), c.name().to_string()],
        }
    }

    pub fn includes(&self, seq: &LabeledSequence) -> bool {
        match self {
            Task::FiveClass => seq.class != GestureClass::Surprise,
            Task::SixClass => true,
            Task::Binary(c) => seq.class == *c,
        }
    }

    pub fn map_label(&self, label: GestureClass) -> Option<usize> {
        match self {
            Task::FiveClass if label == GestureClass::Surprise => None,
            Task::FiveClass | Task::SixClass => Some(label.id()),
            Task::Binary(c) if label == *c => Some(1),
            Task::Binary(_) if label == GestureClass::Neutral => Some(0),
            Task::Binary(_) => None,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Task::FiveClass => f.write_str("five"),
            Task::SixClass => f.write_str("six"),
            Task::Binary(c) => write!(f, "binary:{}", c.name()),
        }
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "five" | "5" => Ok(Task::FiveClass),
            "six" | "6" => Ok(Task::SixClass),
            _ => {
                let name = s.strip_prefix("binary:").ok_or_else(|| format!("unknown task {s:?}"))?;
                match GestureClass::from_name(name) {
                    Some(GestureClass::Neutral) | None => Err(format!("binary task needs a gesture class, got {name:?}")),
                    Some(c) => Ok(Task::Binary(c)),
                }
            }
        }
    }
}

impl From<Task> for String {
    fn from(t: Task) -> String {
        t.to_string()
    }
}

impl TryFrom<String> for Task {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub snippet_len: usize,
    pub overlap: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    pub scheduler: PlateauConfig,
    pub undersample_ratio: f64,
    pub split: SplitSpec,
    pub seed: u64,
    pub features: FeatureSpec,
    pub hidden: usize,
    pub task: Task,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            snippet_len: 40,
            overlap: 30,
            batch_size: 32,
            epochs: 30,
            adam: AdamConfig::default(),
            scheduler: PlateauConfig::default(),
            undersample_ratio: 1.5,
            split: SplitSpec::default(),
            seed: 0,
            features: FeatureSpec::default(),
            hidden: 128,
            task: Task::FiveClass,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainingError> {
        let bad = |msg: String| Err(TrainingError::InvalidConfig(msg));
        if self.snippet_len == 0 || self.overlap >= self.snippet_len {
            return bad(format!("overlap {} must be below snippet length {}", self.overlap, self.snippet_len));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.hidden == 0 {
            return bad("batch size, epochs and hidden size must be positive".into());
        }
        if !(self.adam.lr >= 0.0 && self.adam.lr.is_finite()) {
            return bad(format!("learning rate {}", self.adam.lr));
        }
        if !(self.undersample_ratio > 0.0) {
            return bad(format!("under-sampling ratio {}", self.undersample_ratio));
        }
        Ok(())
    }
}

/// Features and task labels of one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSequence {
    pub id: String,
    pub actor_id: u32,
    pub scene: SceneKind,
    pub class: GestureClass,
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreparedData {
    pub task: Task,
    pub features: FeatureSpec,
    pub sequences: Vec<PreparedSequence>,
}

/// Filters `sequences` for `task` and extracts features once, so repeated
/// runs can share the work.
pub fn prepare(sequences: &[LabeledSequence], task: Task, spec: &FeatureSpec) -> Result<PreparedData, TrainingError> {
    let prepared: Vec<PreparedSequence> = sequences
        .par_iter()
        .filter(|s| task.includes(s))
        .map(|s| prepare_sequence(s, task, spec))
        .collect::<Result<_, _>>()?;
    if prepared.is_empty() {
        return Err(TrainingError::EmptyDataset(task.to_string()));
    }
    Ok(PreparedData { task, features: *spec, sequences: prepared })
}

pub fn prepare_sequence(seq: &LabeledSequence, task: Task, spec: &FeatureSpec) -> Result<PreparedSequence, TrainingError> {
    let labels = seq
        .frames
        .iter()
        .map(|f| task.map_label(f.label).ok_or(TrainingError::LabelOutsideTask { label: f.label, task: task.to_string() }))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PreparedSequence {
        id: seq.id.clone(),
        actor_id: seq.actor_id,
        scene: seq.scene,
        class: seq.class,
        features: extract_sequence(&seq.frames, spec)?,
        labels,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// State of the epoch with the highest validation accuracy.
    pub state: ModelState,
    pub stats: FeatureStats,
    pub report: MetricsReport,
    pub config: TrainConfig,
    pub train_snippets: usize,
    pub val_snippets: usize,
}

/// Normalized features of every sequence as `L x D` arrays.
fn normalized(data: &PreparedData, stats: &FeatureStats) -> Vec<Array2<f64>> {
    data.sequences
        .iter()
        .map(|s| {
            let d = stats.dim();
            let mut a = Array2::zeros((s.features.len(), d));
            for (t, row) in s.features.iter().enumerate() {
                let mut r = row.clone();
                stats.normalize_in_place(&mut r);
                a.row_mut(t).assign(&ndarray::ArrayView1::from(&r));
            }
            a
        })
        .collect()
}

fn assemble(batch: &[Snippet], seqs: &[Array2<f64>], labels: &[Vec<usize>]) -> (Array3<f64>, Array2<usize>) {
    let len = batch[0].len;
    let d = seqs[0].ncols();
    let mut x = Array3::zeros((batch.len(), len, d));
    let mut y = Array2::zeros((batch.len(), len));
    for (b, sn) in batch.iter().enumerate() {
        x.slice_mut(s![b, .., ..]).assign(&seqs[sn.sequence].slice(s![sn.start..sn.start + len, ..]));
        for t in 0..len {
            y[(b, t)] = labels[sn.sequence][sn.start + t];
        }
    }
    (x, y)
}

/// Frame-wise confusion over snippets, each run from a zero hidden state.
pub fn evaluate_snippets(
    state: &ModelState,
    snippets: &[Snippet],
    seqs: &[Array2<f64>],
    labels: &[Vec<usize>],
) -> Result<ConfusionMatrix, TrainingError> {
    let mut confusion = ConfusionMatrix::new(state.dims.classes);
    for chunk in snippets.chunks(VAL_CHUNK) {
        let (x, y) = assemble(chunk, seqs, labels);
        let logits = state.forward_pure(&x, Mode::Eval)?.logits;
        for b in 0..chunk.len() {
            for t in 0..chunk[b].len {
                let row: Vec<f64> = logits.slice(s![b, t, ..]).to_vec();
                confusion.add(y[(b, t)], argmax(&row));
            }
        }
    }
    Ok(confusion)
}

/// Training snippets (after under-sampling) and validation snippets, as a
/// run seeded with `cfg.seed` sees them.
pub fn training_split(data: &PreparedData, cfg: &TrainConfig) -> Result<(Vec<Snippet>, Vec<Snippet>), TrainingError> {
    let mut all = Vec::new();
    for (i, s) in data.sequences.iter().enumerate() {
        all.extend(extract_snippets(i, &s.labels, cfg.snippet_len, cfg.overlap)?);
    }
    let tags: Vec<SequenceTag> = data.sequences.iter().map(|s| SequenceTag { actor_id: s.actor_id, scene: s.scene }).collect();
    let (train_raw, val) = split_snippets(&all, &tags, &cfg.split, derive_seed(cfg.seed, 1))?;
    let train_set = undersample_neutral(&train_raw, cfg.undersample_ratio, derive_seed(cfg.seed, 2));
    if train_set.is_empty() || val.is_empty() {
        return Err(TrainingError::InvalidSplit(format!("{} train / {} validation snippets", train_set.len(), val.len())));
    }
    Ok((train_set, val))
}

/// Frame-wise metrics on the validation snippets of the run configured by
/// `cfg`, the quantity training reports per epoch.
pub fn evaluate_validation(
    state: &ModelState,
    stats: &FeatureStats,
    data: &PreparedData,
    cfg: &TrainConfig,
) -> Result<MetricsReport, TrainingError> {
    let (_, val) = training_split(data, cfg)?;
    let seqs = normalized(data, stats);
    let labels: Vec<Vec<usize>> = data.sequences.iter().map(|s| s.labels.clone()).collect();
    let confusion = evaluate_snippets(state, &val, &seqs, &labels)?;
    Ok(MetricsReport::from_confusion(cfg.task.class_names(), confusion))
}

pub fn train(data: &PreparedData, cfg: &TrainConfig) -> Result<TrainOutcome, TrainingError> {
    train_with_progress(data, cfg, |_| {})
}

/// Trains for `cfg.epochs` epochs and keeps the best validation epoch.
/// `progress` sees every epoch record as it completes.
pub fn train_with_progress(
    data: &PreparedData,
    cfg: &TrainConfig,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome, TrainingError> {
    cfg.validate()?;
    if cfg.task != data.task || cfg.features != data.features {
        return Err(TrainingError::InvalidConfig("prepared data was built for a different task or feature spec".into()));
    }
    let n_classes = cfg.task.classes();
    let (train_set, val) = training_split(data, cfg)?;

    let stats = FeatureStats::fit(
        train_set
            .iter()
            .flat_map(|sn| data.sequences[sn.sequence].features[sn.start..sn.start + sn.len].iter().map(|r| r.as_slice())),
    )?;
    let seqs = normalized(data, &stats);
    let labels: Vec<Vec<usize>> = data.sequences.iter().map(|s| s.labels.clone()).collect();

    let dims = ModelDims { input: cfg.features.dim(), hidden: cfg.hidden, classes: n_classes };
    let mut state = ModelState::new(dims, cfg.features.layout(), derive_seed(cfg.seed, 3));
    let shapes: Vec<usize> = state.params().iter().map(|p| p.len()).collect();
    let mut adam = AdamState::new(&shapes);
    let mut scheduler = PlateauScheduler::new(cfg.adam.lr, cfg.scheduler);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 4));

    let mut order = train_set.clone();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(ModelState, ConfusionMatrix, usize, f64)> = None;
    for epoch in 1..=cfg.epochs {
        let lr = scheduler.lr;
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut frames = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let (x, y) = assemble(batch, &seqs, &labels);
            let (logits, cache) = state.forward(&x, Mode::Train)?;
            let (loss, d_logits) = nll_loss(&logits, &y)?;
            if !loss.is_finite() {
                return Err(TrainingError::Diverged { epoch });
            }
            let grads = state.backward(&cache, &d_logits)?;
            adam_step(&mut state.params_mut(), &grads.tensors(), &mut adam, &cfg.adam, lr)?;
            loss_sum += loss * y.len() as f64;
            frames += y.len();
        }
        let confusion = evaluate_snippets(&state, &val, &seqs, &labels)?;
        let acc = confusion.accuracy();
        let record = EpochRecord { epoch, train_loss: loss_sum / frames as f64, val_accuracy: acc, lr };
        progress(&record);
        history.push(record);
        if best.as_ref().is_none_or(|b| acc > b.3) {
            best = Some((state.clone(), confusion, epoch, acc));
        }
        scheduler.step(acc);
    }
    let (state, confusion, best_epoch, peak) = best.expect("at least one epoch");
    let mut report = MetricsReport::from_confusion(cfg.task.class_names(), confusion);
    report.history = history;
    report.best_epoch = best_epoch;
    report.peak_accuracy = peak;
    Ok(TrainOutcome {
        state,
        stats,
        report,
        config: cfg.clone(),
        train_snippets: train_set.len(),
        val_snippets: val.len(),
    })
}

/// Frame-wise evaluation of whole sequences, hidden state carried within
/// each sequence.
pub fn evaluate_prepared(state: &ModelState, stats: &FeatureStats, data: &PreparedData) -> Result<MetricsReport, TrainingError> {
    if stats.dim() != state.dims.input {
        return Err(TrainingError::ShapeMismatch(format!(
            "statistics width {}, model input {}",
            stats.dim(),
            state.dims.input
        )));
    }
    let mut confusion = ConfusionMatrix::new(state.dims.classes);
    for seq in &data.sequences {
        let rows: Vec<Vec<f64>> = seq
            .features
            .iter()
            .map(|r| {
                let mut r = r.clone();
                stats.normalize_in_place(&mut r);
                r
            })
            .collect();
        let pred = predict_framewise(state, &rows);
        for (&t, &p) in seq.labels.iter().zip(&pred.labels) {
            if t >= confusion.classes() {
                return Err(ModelError::LabelOutOfRange { label: t, classes: confusion.classes() }.into());
            }
            confusion.add(t, p);
        }
    }
    Ok(MetricsReport::from_confusion(data.task.class_names(), confusion))
}

pub fn evaluate(
    state: &ModelState,
    stats: &FeatureStats,
    sequences: &[LabeledSequence],
    task: Task,
    spec: &FeatureSpec,
) -> Result<MetricsReport, TrainingError> {
    evaluate_prepared(state, stats, &prepare(sequences, task, spec)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepeatReport {
    pub seeds: Vec<u64>,
    pub runs: Vec<MetricsReport>,
    /// Over per-run peak validation accuracies.
    pub distribution: DistributionReport,
}

pub fn repeat_seeds(master: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| derive_seed(master, 1000 + i)).collect()
}

/// Full outcomes of `n` runs seeded by [`repeat_seeds`], in seed order.
/// Runs execute on the rayon pool.
pub fn repeat_outcomes(data: &PreparedData, cfg: &TrainConfig, n: usize) -> Result<Vec<TrainOutcome>, TrainingError> {
    if n == 0 {
        return Err(TrainingError::InvalidConfig("at least one repetition is required".into()));
    }
    repeat_seeds(cfg.seed, n)
        .par_iter()
        .map(|&seed| train(data, &TrainConfig { seed, ..cfg.clone() }))
        .collect()
}

/// `n` runs with seeds derived from `cfg.seed`.
pub fn repeat_runs(data: &PreparedData, cfg: &TrainConfig, n: usize) -> Result<RepeatReport, TrainingError> {
    if n == 0 {
        return Err(TrainingError::InvalidConfig("at least one repetition is required".into()));
    }
    let seeds = repeat_seeds(cfg.seed, n);
    let runs: Vec<MetricsReport> = repeat_outcomes(data, cfg, n)?.into_iter().map(|o| o.report).collect();
    let distribution = DistributionReport::from_values(runs.iter().map(|r| r.peak_accuracy).collect());
    Ok(RepeatReport { seeds, runs, distribution })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{synthesize_dataset, DatasetSpec};

    fn small_data(task: Task, include_surprise: bool) -> PreparedData {
        let mut spec = DatasetSpec::default_with(5, 20, include_surprise);
        spec.sessions_per_actor = if include_surprise { 5 } else { 4 };
        let seqs = synthesize_dataset(&spec).unwrap();
        prepare(&seqs, task, &FeatureSpec::default()).unwrap()
    }

    fn quick(seed: u64) -> TrainConfig {
        TrainConfig { epochs: 2, hidden: 8, seed, batch_size: 16, ..TrainConfig::default() }
    }

    #[test]
    fn task_names_round_trip() {
        for t in [Task::FiveClass, Task::SixClass, Task::Binary(GestureClass::NoddingHead)] {
            assert_eq!(t.to_string().parse::<Task>().unwrap(), t);
            assert_eq!(t.class_names().len(), t.classes());
        }
        assert!("binary:Neutral".parse::<Task>().is_err());
        assert_eq!(Task::Binary(GestureClass::Surprise).map_label(GestureClass::Surprise), Some(1));
        assert_eq!(Task::FiveClass.map_label(GestureClass::Surprise), None);
    }

    #[test]
    fn task_filters_sessions() {
        let five = small_data(Task::FiveClass, true);
        assert!(five.sequences.iter().all(|s| s.class != GestureClass::Surprise));
        let binary = small_data(Task::Binary(GestureClass::ShakingHead), true);
        assert!(binary.sequences.iter().all(|s| s.class == GestureClass::ShakingHead));
        assert!(binary.sequences.iter().all(|s| s.labels.iter().all(|&l| l < 2)));
    }

    #[test]
    fn same_seed_same_history() {
        let data = small_data(Task::FiveClass, false);
        let a = train(&data, &quick(3)).unwrap();
        let b = train(&data, &quick(3)).unwrap();
        assert_eq!(a.report, b.report);
        assert_eq!(a.state, b.state);
        assert_eq!(a.report.history.len(), 2);
        let c = train(&data, &quick(4)).unwrap();
        assert_ne!(a.report.history, c.report.history);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let data = small_data(Task::FiveClass, false);
        let mut cfg = quick(1);
        cfg.epochs = 1;
        cfg.adam.lr = 0.0;
        let out = train(&data, &cfg).unwrap();
        let init = ModelState::new(out.state.dims, cfg.features.layout(), derive_seed(cfg.seed, 3));
        assert_eq!(out.state.params(), init.params());
        // Validation accuracy is that of the untouched weights.
        let val = evaluate_validation(&out.state, &out.stats, &data, &cfg).unwrap();
        assert_eq!(out.report.peak_accuracy, val.accuracy);
        assert_eq!(out.report.confusion, val.confusion);
    }

    #[test]
    fn evaluate_counts_every_frame() {
        let data = small_data(Task::FiveClass, false);
        let out = train(&data, &quick(2)).unwrap();
        let report = evaluate_prepared(&out.state, &out.stats, &data).unwrap();
        let frames: usize = data.sequences.iter().map(|s| s.labels.len()).sum();
        assert_eq!(report.confusion.total(), frames as u64);
        for (k, c) in report.per_class.iter().enumerate() {
            let direct = data.sequences.iter().flat_map(|s| &s.labels).filter(|&&l| l == k).count();
            assert_eq!(c.support, direct as u64);
        }
    }

    #[test]
    fn constant_predictor_scores_the_neutral_share() {
        let data = small_data(Task::FiveClass, false);
        let mut out = train(&data, &quick(2)).unwrap();
        out.state.fc.weight.fill(0.0);
        out.state.fc.bias.fill(0.0);
        out.state.fc.bias[0] = 1.0;
        let report = evaluate_prepared(&out.state, &out.stats, &data).unwrap();
        let all: Vec<usize> = data.sequences.iter().flat_map(|s| s.labels.clone()).collect();
        let share = all.iter().filter(|&&l| l == 0).count() as f64 / all.len() as f64;
        assert_eq!(report.accuracy, share);
        assert_eq!(report.per_class[0].recall, 1.0);
    }

    #[test]
    fn repeat_runs_are_reproducible() {
        let data = small_data(Task::FiveClass, false);
        let cfg = TrainConfig { epochs: 1, ..quick(9) };
        let a = repeat_runs(&data, &cfg, 2).unwrap();
        let b = repeat_runs(&data, &cfg, 2).unwrap();
        assert_eq!(a, b);
        let one = repeat_runs(&data, &cfg, 1).unwrap();
        assert_eq!(one.distribution.max, one.distribution.mean);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let data = small_data(Task::FiveClass, false);
        let cfg = TrainConfig { overlap: 40, ..quick(0) };
        assert!(matches!(train(&data, &cfg), Err(TrainingError::InvalidConfig(_))));
        let cfg = TrainConfig { task: Task::SixClass, ..quick(0) };
        assert!(matches!(train(&data, &cfg), Err(TrainingError::InvalidConfig(_))));
    }
}
