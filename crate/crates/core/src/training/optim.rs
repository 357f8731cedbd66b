//! Adam with decoupled or L2 weight decay, and a reduce-on-plateau schedule.

use serde::{Deserialize, Serialize};

use super::TrainingError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecayMode {
    /// `p <- p * (1 - lr * wd)` before the Adam update.
    Decoupled,
    /// `wd * p` added to the gradient.
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub decay: DecayMode,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 5e-4, weight_decay: 1e-2, decay: DecayMode::Decoupled, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(shapes: &[usize]) -> Self {
        AdamState {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam step over a list of tensors. `lr` overrides
/// `cfg.lr` so a scheduler can drive it.
pub fn adam_step(
    params: &mut [&mut [f64]],
    grads: &[&[f64]],
    state: &mut AdamState,
    cfg: &AdamConfig,
    lr: f64,
) -> Result<(), TrainingError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(TrainingError::ShapeMismatch(format!(
            "{} parameter tensors, {} gradients, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (k, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.m[k].len() {
            return Err(TrainingError::ShapeMismatch(format!("tensor {k}: {} vs {}", p.len(), g.len())));
        }
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - cfg.beta1.powf(t);
    let bc2 = 1.0 - cfg.beta2.powf(t);
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for i in 0..p.len() {
            let mut gi = g[i];
            match cfg.decay {
                DecayMode::Decoupled => p[i] *= 1.0 - lr * cfg.weight_decay,
                DecayMode::L2 => gi += cfg.weight_decay * p[i],
            }
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauConfig {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
    /// Absolute improvement needed to reset patience.
    pub threshold: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        PlateauConfig { factor: 0.5, patience: 3, min_lr: 1e-5, threshold: 1e-4 }
    }
}

/// Tracks a metric to be maximized.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    pub cfg: PlateauConfig,
    pub lr: f64,
    best: Option<f64>,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, cfg: PlateauConfig) -> Self {
        PlateauScheduler { cfg, lr, best: None, bad_epochs: 0 }
    }

    pub fn step(&mut self, metric: f64) -> f64 {
        match self.best {
            Some(b) if metric <= b + self.cfg.threshold => {
                self.bad_epochs += 1;
                if self.bad_epochs >= self.cfg.patience {
                    self.lr = (self.lr * self.cfg.factor).max(self.cfg.min_lr);
                    self.bad_epochs = 0;
                }
            }
            _ => {
                self.best = Some(metric);
                self.bad_epochs = 0;
            }
        }
        self.lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_no_op_without_decay() {
        let mut p = vec![0.3, -1.2, 4.0];
        let before = p.clone();
        let mut st = AdamState::new(&[3]);
        let cfg = AdamConfig { weight_decay: 0.0, ..AdamConfig::default() };
        adam_step(&mut [&mut p[..]], &[&[0.0; 3]], &mut st, &cfg, cfg.lr).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let cfg = AdamConfig { weight_decay: 0.0, ..AdamConfig::default() };
        for g in [1e-3, 0.5, -7.0] {
            let mut p = vec![1.0];
            let mut st = AdamState::new(&[1]);
            adam_step(&mut [&mut p[..]], &[&[g]], &mut st, &cfg, cfg.lr).unwrap();
            // m_hat = g, v_hat = g^2, so delta = -lr g / (|g| + eps).
            let expected = 1.0 - cfg.lr * g / (g.abs() + cfg.eps);
            assert!((p[0] - expected).abs() < 1e-15);
            assert!(((1.0 - p[0]).abs() - cfg.lr).abs() < 1e-4 * cfg.lr);
        }
    }

    #[test]
    fn decoupled_and_l2_differ() {
        let mut a = vec![2.0];
        let mut b = vec![2.0];
        let cfg_a = AdamConfig::default();
        let cfg_b = AdamConfig { decay: DecayMode::L2, ..AdamConfig::default() };
        let (mut sa, mut sb) = (AdamState::new(&[1]), AdamState::new(&[1]));
        adam_step(&mut [&mut a[..]], &[&[0.0]], &mut sa, &cfg_a, 0.1).unwrap();
        adam_step(&mut [&mut b[..]], &[&[0.0]], &mut sb, &cfg_b, 0.1).unwrap();
        assert!((a[0] - 2.0 * (1.0 - 0.1 * 1e-2)).abs() < 1e-15);
        // L2 turns the decay into a unit-sized Adam step.
        assert!((b[0] - (2.0 - 0.1 * 0.02 / (0.02 + 1e-8))).abs() < 1e-12);
    }

    #[test]
    fn identical_tensors_track_identically() {
        let cfg = AdamConfig::default();
        let mut p = vec![0.7, 0.7];
        let mut st = AdamState::new(&[2]);
        for k in 0..50 {
            let g = (k as f64 * 0.37).sin();
            adam_step(&mut [&mut p[..]], &[&[g, g]], &mut st, &cfg, cfg.lr).unwrap();
            assert_eq!(p[0], p[1]);
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut p = vec![0.0; 3];
        let mut st = AdamState::new(&[3]);
        let cfg = AdamConfig::default();
        assert!(matches!(
            adam_step(&mut [&mut p[..]], &[&[0.0; 2]], &mut st, &cfg, 1e-3),
            Err(TrainingError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn plateau_rules() {
        let cfg = PlateauConfig::default();
        let mut s = PlateauScheduler::new(1e-3, cfg);
        for k in 0..20 {
            assert_eq!(s.step(k as f64 * 0.01), 1e-3);
        }
        let mut s = PlateauScheduler::new(1e-3, cfg);
        let lrs: Vec<f64> = (0..cfg.patience + 1).map(|_| s.step(0.5)).collect();
        assert_eq!(lrs.iter().filter(|&&lr| lr < 1e-3).count(), 1);
        assert_eq!(*lrs.last().unwrap(), 5e-4);
        let mut s = PlateauScheduler::new(cfg.min_lr, cfg);
        for _ in 0..20 {
            assert_eq!(s.step(0.5), cfg.min_lr);
        }
        // Improvements at or below the threshold do not count.
        let mut s = PlateauScheduler::new(1e-3, cfg);
        s.step(0.5);
        for k in 1..=cfg.patience {
            s.step(0.5 + k as f64 * 1e-5);
        }
        assert_eq!(s.lr, 5e-4);
    }
}
