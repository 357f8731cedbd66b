//! Fixed-length training snippets, Neutral under-sampling, and splits.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrainingError;
use crate::kinematics::SceneKind;

/// Window of `len` frames inside one prepared sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Snippet {
    /// Index into the prepared sequence list.
    pub sequence: usize,
    pub start: usize,
    pub len: usize,
    /// Most frequent label in the window; ties go to the lowest id.
    pub majority: usize,
}

/// Number of snippets of length `s` at stride `s - o` in `l` frames.
pub fn snippet_count(l: usize, s: usize, o: usize) -> usize {
    if l < s || o >= s {
        0
    } else {
        (l - s) / (s - o) + 1
    }
}

pub fn majority_label(labels: &[usize]) -> usize {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_default() += 1;
    }
    let mut best = (0, 0);
    for (label, count) in counts {
        if count > best.1 {
            best = (label, count);
        }
    }
    best.0
}

/// Snippets starting at frame 0 with stride `s - o`; the remainder is dropped.
pub fn extract_snippets(sequence: usize, labels: &[usize], s: usize, o: usize) -> Result<Vec<Snippet>, TrainingError> {
    if s == 0 || o >= s {
        return Err(TrainingError::InvalidConfig(format!("snippet length {s} with overlap {o}")));
    }
    if labels.len() < s {
        return Err(TrainingError::SequenceTooShort { len: labels.len(), snippet: s });
    }
    let stride = s - o;
    Ok((0..snippet_count(labels.len(), s, o))
        .map(|k| {
            let start = k * stride;
            Snippet { sequence, start, len: s, majority: majority_label(&labels[start..start + s]) }
        })
        .collect())
}

/// Randomly drops Neutral-majority snippets (label 0) until at most
/// `ratio` times the mean non-neutral class count remain. Order is kept.
pub fn undersample_neutral(snippets: &[Snippet], ratio: f64, seed: u64) -> Vec<Snippet> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for s in snippets {
        *counts.entry(s.majority).or_default() += 1;
    }
    let neutral = counts.remove(&0).unwrap_or(0);
    if neutral == 0 || counts.is_empty() {
        return snippets.to_vec();
    }
    let mean = counts.values().sum::<usize>() as f64 / counts.len() as f64;
    let cap = (ratio * mean).floor() as usize;
    if neutral <= cap {
        return snippets.to_vec();
    }
    let mut neutral_idx: Vec<usize> = (0..snippets.len()).filter(|&i| snippets[i].majority == 0).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    neutral_idx.shuffle(&mut rng);
    let mut drop = vec![false; snippets.len()];
    for &i in &neutral_idx[cap..] {
        drop[i] = true;
    }
    snippets.iter().zip(drop).filter(|(_, d)| !d).map(|(s, _)| *s).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitSpec {
    Stratified { train_fraction: f64 },
    LeaveOneActorOut { actor_id: u32 },
    SceneBased { train_scene: SceneKind },
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::Stratified { train_fraction: 0.75 }
    }
}

/// Per-sequence facts a split needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceTag {
    pub actor_id: u32,
    pub scene: SceneKind,
}

/// Stratified splits shuffle each majority class with `seed` and send the
/// first `round(fraction * n)` to training.
pub fn split_snippets(
    snippets: &[Snippet],
    tags: &[SequenceTag],
    spec: &SplitSpec,
    seed: u64,
) -> Result<(Vec<Snippet>, Vec<Snippet>), TrainingError> {
    match *spec {
        SplitSpec::Stratified { train_fraction } => {
            if !(train_fraction > 0.0 && train_fraction < 1.0) {
                return Err(TrainingError::InvalidConfig(format!("train fraction {train_fraction}")));
            }
            let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
            for (i, s) in snippets.iter().enumerate() {
                by_class.entry(s.majority).or_default().push(i);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut in_train = vec![false; snippets.len()];
            for (class, mut idx) in by_class {
                if idx.len() < 2 {
                    return Err(TrainingError::InsufficientClassMembers { class, count: idx.len() });
                }
                idx.shuffle(&mut rng);
                let n_train = ((train_fraction * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
                for &i in &idx[..n_train] {
                    in_train[i] = true;
                }
            }
            Ok(partition(snippets, |i, _| in_train[i]))
        }
        SplitSpec::LeaveOneActorOut { actor_id } => {
            let mut actors: Vec<u32> = tags.iter().map(|t| t.actor_id).collect();
            actors.sort_unstable();
            actors.dedup();
            if actors.len() < 2 || !actors.contains(&actor_id) {
                return Err(TrainingError::InvalidSplit(format!("actor {actor_id} among {actors:?}")));
            }
            Ok(partition(snippets, |_, s| tags[s.sequence].actor_id != actor_id))
        }
        SplitSpec::SceneBased { train_scene } => {
            let has_train = tags.iter().any(|t| t.scene == train_scene);
            let has_val = tags.iter().any(|t| t.scene != train_scene);
            if !(has_train && has_val) {
                return Err(TrainingError::InvalidSplit("both scene kinds must be present".into()));
            }
            Ok(partition(snippets, |_, s| tags[s.sequence].scene == train_scene))
        }
    }
}

fn partition(snippets: &[Snippet], to_train: impl Fn(usize, &Snippet) -> bool) -> (Vec<Snippet>, Vec<Snippet>) {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (i, s) in snippets.iter().enumerate() {
        if to_train(i, s) {
            train.push(*s);
        } else {
            val.push(*s);
        }
    }
    (train, val)
}
