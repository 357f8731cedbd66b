//! Central finite-difference verification of [`ModelState::backward`].

use std::fmt;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::{nll_loss, Mode, ModelDims, ModelGrads, ModelState, PARAM_NAMES};
use crate::features::{FeatureKind, FeatureLayout};

pub const GRAD_CHECK_TOLERANCE: f64 = 1e-4;
pub const GRAD_CHECK_STEP: f64 = 1e-5;
/// Denominator floor for the relative error. Gradients this small are
/// dominated by cancellation in the difference quotient.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GradCheckDims {
    pub input: usize,
    pub hidden: usize,
    pub classes: usize,
    pub steps: usize,
    pub batch: usize,
}

impl Default for GradCheckDims {
    fn default() -> Self {
        GradCheckDims { input: 4, hidden: 8, classes: 3, steps: 5, batch: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckEntry {
    pub name: String,
    pub count: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub seed: u64,
    pub dims: GradCheckDims,
    pub tolerance: f64,
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn pass(&self) -> bool {
        self.entries.iter().all(|e| e.pass)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max)
    }

    pub fn failing(&self) -> Vec<&str> {
        self.entries.iter().filter(|e| !e.pass).map(|e| e.name.as_str()).collect()
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = &self.dims;
        writeln!(
            f,
            "gradcheck seed={} D={} H={} N={} T={} M={}",
            self.seed, d.input, d.hidden, d.classes, d.steps, d.batch
        )?;
        for e in &self.entries {
            writeln!(
                f,
                "  {:<18} n={:<5} max_rel={:.3e} max_abs={:.3e} {}",
                e.name,
                e.count,
                e.max_rel_error,
                e.max_abs_error,
                if e.pass { "ok" } else { "FAIL" }
            )?;
        }
        write!(f, "{}", if self.pass() { "PASS" } else { "FAIL" })
    }
}

const GATES: [&str; 4] = ["i", "f", "g", "o"];

/// Splits a flat tensor index into a named block. LSTM tensors are
/// reported per gate so a broken gate is named directly.
fn block_name(param: usize, flat: usize, dims: &ModelDims) -> String {
    let base = PARAM_NAMES[param];
    let h = dims.hidden;
    let per_row = match param {
        2 => dims.input,
        3 => h,
        4 => 1,
        _ => return base.to_string(),
    };
    let row = flat / per_row;
    format!("{base}.{}", GATES[row / h])
}

fn loss_of(state: &ModelState, x: &Array3<f64>, labels: &Array2<usize>) -> f64 {
    let pass = state.forward_pure(x, Mode::Train).expect("gradcheck shapes are consistent");
    nll_loss(&pass.logits, labels).expect("labels in range").0
}

/// Seeded tiny problem: a model with perturbed BN affine terms, a random
/// batch and random labels.
fn fixture(seed: u64, dims: GradCheckDims) -> (ModelState, Array3<f64>, Array2<usize>) {
    let mdims = ModelDims { input: dims.input, hidden: dims.hidden, classes: dims.classes };
    let layout = FeatureLayout::Single(FeatureKind::Raw8);
    let mut state = ModelState::new(mdims, layout, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    for g in state.bn.gamma.iter_mut() {
        *g = rng.random_range(0.5..1.5);
    }
    for b in state.bn.beta.iter_mut() {
        *b = rng.random_range(-0.5..0.5);
    }
    for b in state.fc.bias.iter_mut() {
        *b = rng.random_range(-0.2..0.2);
    }
    let x = Array3::from_shape_fn((dims.batch, dims.steps, dims.input), |(_, _, j)| {
        let z: f64 = StandardNormal.sample(&mut rng);
        z * (1.0 + j as f64 * 0.5) + j as f64
    });
    let labels = Array2::from_shape_fn((dims.batch, dims.steps), |_| rng.random_range(0..dims.classes));
    (state, x, labels)
}

#[derive(Default)]
struct Accum {
    count: usize,
    rel: f64,
    abs: f64,
}

fn record(acc: &mut Vec<(String, Accum)>, name: String, analytic: f64, numeric: f64) {
    let diff = (analytic - numeric).abs();
    let rel = diff / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
    let slot = match acc.iter().position(|(n, _)| *n == name) {
        Some(i) => i,
        None => {
            acc.push((name, Accum::default()));
            acc.len() - 1
        }
    };
    let a = &mut acc[slot].1;
    a.count += 1;
    a.rel = a.rel.max(rel);
    a.abs = a.abs.max(diff);
}

pub fn grad_check(seed: u64, dims: GradCheckDims) -> GradCheckReport {
    grad_check_with(seed, dims, |_| {})
}

/// Like [`grad_check`] but passes the analytic gradients through `tamper`
/// before comparison.
pub fn grad_check_with(seed: u64, dims: GradCheckDims, tamper: impl Fn(&mut ModelGrads)) -> GradCheckReport {
    let (mut state, x, labels) = fixture(seed, dims);
    let pass = state.forward_pure(&x, Mode::Train).expect("gradcheck shapes are consistent");
    let (_, d_logits) = nll_loss(&pass.logits, &labels).expect("labels in range");
    let mut grads = state.backward(&pass.cache, &d_logits).expect("fresh cache");
    tamper(&mut grads);

    let h = GRAD_CHECK_STEP;
    let mut acc: Vec<(String, Accum)> = Vec::new();
    let mdims = state.dims;
    for p in 0..PARAM_NAMES.len() {
        let len = state.params()[p].len();
        for i in 0..len {
            let orig = state.params()[p][i];
            state.params_mut()[p][i] = orig + h;
            let plus = loss_of(&state, &x, &labels);
            state.params_mut()[p][i] = orig - h;
            let minus = loss_of(&state, &x, &labels);
            state.params_mut()[p][i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            record(&mut acc, block_name(p, i, &mdims), grads.tensors()[p][i], numeric);
        }
    }
    let mut xp = x.clone();
    for idx in ndarray::indices(x.dim()) {
        let orig = x[idx];
        xp[idx] = orig + h;
        let plus = loss_of(&state, &xp, &labels);
        xp[idx] = orig - h;
        let minus = loss_of(&state, &xp, &labels);
        xp[idx] = orig;
        record(&mut acc, "input".to_string(), grads.input[idx], (plus - minus) / (2.0 * h));
    }

    let entries = acc
        .into_iter()
        .map(|(name, a)| GradCheckEntry {
            name,
            count: a.count,
            max_rel_error: a.rel,
            max_abs_error: a.abs,
            pass: a.rel <= GRAD_CHECK_TOLERANCE,
        })
        .collect();
    GradCheckReport { seed, dims, tolerance: GRAD_CHECK_TOLERANCE, entries }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_dims_pass_for_several_seeds() {
        for seed in [0, 1, 2, 17] {
            let report = grad_check(seed, GradCheckDims::default());
            assert!(report.pass(), "{report}");
            assert!(report.entries.iter().any(|e| e.name == "bn.gamma"));
            assert!(report.entries.iter().any(|e| e.name == "lstm.w_hh.f"));
            assert_eq!(report.entries.iter().find(|e| e.name == "input").unwrap().count, 4 * 5 * 2);
        }
    }

    #[test]
    fn single_step_and_single_element_pass() {
        let dims = GradCheckDims { input: 3, hidden: 4, classes: 2, steps: 1, batch: 1 };
        assert!(grad_check(5, dims).pass());
        let dims = GradCheckDims { input: 2, hidden: 3, classes: 4, steps: 9, batch: 3 };
        assert!(grad_check(6, dims).pass());
    }

    #[test]
    fn corrupted_forget_gate_is_named() {
        let dims = GradCheckDims::default();
        let h = dims.hidden;
        let report = grad_check_with(3, dims, |g| {
            for v in g.w_ih.rows_mut().into_iter().skip(h).take(h) {
                for x in v {
                    *x *= 1.5;
                }
            }
        });
        assert!(!report.pass());
        assert_eq!(report.failing(), vec!["lstm.w_ih.f"]);
        assert!(report.to_string().ends_with("FAIL"));
    }

    #[test]
    fn report_is_deterministic_per_seed() {
        let a = grad_check(11, GradCheckDims::default());
        let b = grad_check(11, GradCheckDims::default());
        assert_eq!(a, b);
        assert_eq!(a.to_string(), b.to_string());
    }
}
