//! Online recognition over K-frame batches with a carried hidden state.

use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::features::{FeatureError, FeatureLayout, FeaturePipeline, FeatureSpec, FeatureStats, MotionFeature};
use crate::kinematics::FrameRecord;
use crate::model::{argmax, LstmCarry, ModelState};

pub const DEFAULT_K: usize = 10;
/// Frame rates the latency report judges.
pub const BUDGET_FRAME_RATES: [u32; 3] = [10, 20, 30];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error("feature layout {got:?} does not match the model layout {expected:?}")]
    LayoutMismatch { expected: FeatureLayout, got: FeatureLayout },
    #[error("{what}: {left} vs {right} frames")]
    LengthMismatch { what: &'static str, left: usize, right: usize },
    #[error("vote window must be at least 1")]
    InvalidWindow,
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

/// Most frequent label; a tie goes to the tied label seen last.
pub fn majority_vote(labels: &[usize]) -> Option<usize> {
    let max_label = *labels.iter().max()?;
    let mut count = vec![0usize; max_label + 1];
    let mut last = vec![0usize; max_label + 1];
    for (i, &l) in labels.iter().enumerate() {
        count[l] += 1;
        last[l] = i;
    }
    (0..=max_label).filter(|&l| count[l] > 0).max_by_key(|&l| (count[l], last[l]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchResult {
    /// Stream index of the first frame in the batch.
    pub start_frame: usize,
    pub labels: Vec<usize>,
    pub voted: usize,
    pub elapsed_s: f64,
}

/// One stream of frame-pair features through a frozen model.
#[derive(Debug, Clone)]
pub struct StreamState<'a> {
    model: &'a ModelState,
    stats: FeatureStats,
    k: usize,
    carry_enabled: bool,
    carry: LstmCarry,
    buffer: Vec<Vec<f64>>,
    frames_seen: usize,
    latencies: Vec<f64>,
    pipeline: Option<FeaturePipeline>,
}

impl<'a> StreamState<'a> {
    pub fn new(model: &'a ModelState, stats: FeatureStats, k: usize, carry: bool) -> Result<Self, InferenceError> {
        if k == 0 {
            return Err(InferenceError::InvalidWindow);
        }
        if stats.dim() != model.dims.input {
            return Err(FeatureError::DimensionMismatch { expected: model.dims.input, got: stats.dim() }.into());
        }
        Ok(StreamState {
            model,
            stats,
            k,
            carry_enabled: carry,
            carry: LstmCarry::zeros(model.dims.hidden),
            buffer: Vec::with_capacity(k),
            frames_seen: 0,
            latencies: Vec::new(),
            pipeline: None,
        })
    }

    /// Also extracts features from frame records pushed with [`Self::push_frame`].
    pub fn with_pipeline(mut self, spec: FeatureSpec) -> Self {
        self.pipeline = Some(FeaturePipeline::new(spec));
        self
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    pub fn latencies(&self) -> &[f64] {
        &self.latencies
    }

    pub fn ingest(&mut self, feature: &MotionFeature) -> Result<Option<BatchResult>, InferenceError> {
        if feature.layout != self.model.layout {
            return Err(InferenceError::LayoutMismatch { expected: self.model.layout, got: feature.layout });
        }
        self.buffer.push(feature.values.clone());
        if self.buffer.len() == self.k {
            Ok(Some(self.run_batch()))
        } else {
            Ok(None)
        }
    }

    pub fn push_frame(&mut self, rec: &FrameRecord) -> Result<Option<BatchResult>, InferenceError> {
        let pipe = self.pipeline.get_or_insert_with(|| {
            // Without an explicit spec, fall back to the default descriptor extraction.
            FeaturePipeline::new(FeatureSpec::default())
        });
        let feature = pipe.push(rec)?;
        self.ingest(&feature)
    }

    /// Runs whatever is buffered as a short final batch.
    pub fn flush(&mut self) -> Option<BatchResult> {
        if self.buffer.is_empty() {
            None
        } else {
            Some(self.run_batch())
        }
    }

    fn run_batch(&mut self) -> BatchResult {
        let started = Instant::now();
        if !self.carry_enabled {
            self.carry = LstmCarry::zeros(self.model.dims.hidden);
        }
        let mut labels = Vec::with_capacity(self.buffer.len());
        for row in &mut self.buffer {
            self.stats.normalize_in_place(row);
            labels.push(argmax(&self.model.step(row, &mut self.carry)));
        }
        let voted = majority_vote(&labels).expect("non-empty batch");
        let elapsed_s = started.elapsed().as_secs_f64();
        self.latencies.push(elapsed_s);
        let start_frame = self.frames_seen;
        self.frames_seen += self.buffer.len();
        self.buffer.clear();
        BatchResult { start_frame, labels, voted, elapsed_s }
    }
}

/// Frame labels of a complete stream, residual batch included.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamRun {
    pub frame_labels: Vec<usize>,
    /// The voted label of each frame's batch.
    pub voted_labels: Vec<usize>,
    pub batches: Vec<BatchResult>,
}

pub fn stream_features(
    model: &ModelState,
    stats: &FeatureStats,
    features: &[MotionFeature],
    k: usize,
    carry: bool,
) -> Result<StreamRun, InferenceError> {
    let mut stream = StreamState::new(model, stats.clone(), k, carry)?;
    let mut batches = Vec::new();
    for f in features {
        batches.extend(stream.ingest(f)?);
    }
    batches.extend(stream.flush());
    let mut frame_labels = Vec::new();
    let mut voted_labels = Vec::new();
    for b in &batches {
        frame_labels.extend(&b.labels);
        voted_labels.extend(std::iter::repeat_n(b.voted, b.labels.len()));
    }
    Ok(StreamRun { frame_labels, voted_labels, batches })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TimeRecord {
    pub frame: usize,
    pub truth: usize,
    pub predicted: usize,
    pub voted: usize,
    pub hit: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Onset {
    pub label: usize,
    pub start: usize,
    pub end: usize,
    pub detected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeDiagram {
    pub records: Vec<TimeRecord>,
    /// Frame accuracy per class id, `None` for classes absent from the truth.
    pub per_class_accuracy: Vec<Option<f64>>,
    pub onsets: Vec<Onset>,
}

impl TimeDiagram {
    pub fn hits(&self) -> usize {
        self.records.iter().filter(|r| r.hit).count()
    }

    pub fn onsets_detected(&self) -> usize {
        self.onsets.iter().filter(|o| o.detected).count()
    }
}

/// Hit/miss records per frame, and whether each gesture instance (a run of
/// one non-zero truth label) is picked up by the voted label within its
/// first second.
pub fn time_diagram(
    predicted: &[usize],
    voted: &[usize],
    truth: &[usize],
    frame_rate: u32,
) -> Result<TimeDiagram, InferenceError> {
    if predicted.len() != truth.len() {
        return Err(InferenceError::LengthMismatch { what: "predictions and truth", left: predicted.len(), right: truth.len() });
    }
    if voted.len() != truth.len() {
        return Err(InferenceError::LengthMismatch { what: "voted labels and truth", left: voted.len(), right: truth.len() });
    }
    let records: Vec<TimeRecord> = (0..truth.len())
        .map(|i| TimeRecord { frame: i, truth: truth[i], predicted: predicted[i], voted: voted[i], hit: truth[i] == predicted[i] })
        .collect();
    let classes = truth.iter().chain(predicted).max().map_or(0, |m| m + 1);
    let mut tot = vec![0usize; classes];
    let mut hit = vec![0usize; classes];
    for r in &records {
        tot[r.truth] += 1;
        hit[r.truth] += r.hit as usize;
    }
    let per_class_accuracy = (0..classes).map(|c| (tot[c] > 0).then(|| hit[c] as f64 / tot[c] as f64)).collect();

    let window = frame_rate as usize;
    let mut onsets = Vec::new();
    let mut i = 0;
    while i < truth.len() {
        let mut j = i + 1;
        while j < truth.len() && truth[j] == truth[i] {
            j += 1;
        }
        if truth[i] != 0 {
            let detected = voted[i..j.min(i + window)].contains(&truth[i]);
            onsets.push(Onset { label: truth[i], start: i, end: j, detected });
        }
        i = j;
    }
    Ok(TimeDiagram { records, per_class_accuracy, onsets })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateVerdict {
    pub frame_rate: u32,
    pub budget_s: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyReport {
    pub k: usize,
    pub batches: usize,
    pub mean_s: f64,
    pub p95_s: f64,
    pub verdicts: Vec<RateVerdict>,
}

impl LatencyReport {
    pub fn verdict(&self, frame_rate: u32) -> Option<bool> {
        self.verdicts.iter().find(|v| v.frame_rate == frame_rate).map(|v| v.pass)
    }
}

/// Per-batch timing summary. A rate passes when the 95th percentile batch
/// time is under the `k / f` seconds it takes that many frames to arrive.
pub fn latency_report(latencies: &[f64], k: usize) -> Option<LatencyReport> {
    if latencies.is_empty() {
        return None;
    }
    let mut sorted = latencies.to_vec();
    sorted.sort_by(f64::total_cmp);
    // Nearest-rank percentile.
    let rank = ((0.95 * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    let p95_s = sorted[rank - 1];
    let mean_s = sorted.iter().sum::<f64>() / sorted.len() as f64;
    let verdicts = BUDGET_FRAME_RATES
        .iter()
        .map(|&f| {
            let budget_s = k as f64 / f as f64;
            RateVerdict { frame_rate: f, budget_s, pass: p95_s < budget_s }
        })
        .collect();
    Some(LatencyReport { k, batches: sorted.len(), mean_s, p95_s, verdicts })
}
