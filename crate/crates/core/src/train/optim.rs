//! LARS optimizer, cosine schedule with restarts, early stopping.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ParamKind, ParamSet};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LarsConfig {
    /// Base learning rate η (the schedule's peak).
    pub base_lr: f64,
    pub momentum: f64,
    /// Weight decay β, applied to LARS-adapted parameters only.
    pub weight_decay: f64,
    /// Trust coefficient of the layer-wise rate.
    pub trust: f64,
    /// Parameter kinds updated with plain momentum SGD instead of LARS.
    pub exclude: Vec<ParamKind>,
}

impl Default for LarsConfig {
    fn default() -> Self {
        LarsConfig {
            base_lr: 0.1,
            momentum: 0.9,
            weight_decay: 1e-6,
            trust: 0.02,
            exclude: vec![ParamKind::Bias, ParamKind::Norm],
        }
    }
}

impl LarsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0) {
            return Err(Error::Contract(format!("base_lr must be > 0, got {}", self.base_lr)));
        }
        if !(self.trust > 0.0) {
            return Err(Error::Contract(format!("trust coefficient must be > 0, got {}", self.trust)));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::Contract("momentum must lie in [0, 1) and weight_decay >= 0".into()));
        }
        Ok(())
    }
}

/// Layer-wise rate `trust · ‖w‖ / (‖g‖ + β‖w‖)`; 1 when either norm is zero.
pub fn lars_local_lr(w_norm: f64, g_norm: f64, cfg: &LarsConfig) -> f64 {
    let denom = g_norm + cfg.weight_decay * w_norm;
    if w_norm == 0.0 || denom == 0.0 {
        1.0
    } else {
        cfg.trust * w_norm / denom
    }
}

fn norm(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

/// LARS state: one momentum buffer per parameter.
#[derive(Clone, Debug)]
pub struct Lars {
    pub config: LarsConfig,
    velocity: HashMap<String, Vec<f64>>,
}

impl Lars {
    pub fn new(config: LarsConfig) -> Result<Lars> {
        config.validate()?;
        Ok(Lars { config, velocity: HashMap::new() })
    }

    /// One update at learning rate `lr_t`. Parameters without a gradient are
    /// left untouched. A non-finite gradient aborts the whole step before
    /// any parameter changes.
    pub fn step(&mut self, params: &mut ParamSet, grads: &HashMap<String, Vec<f64>>, lr_t: f64) -> Result<()> {
        if !(lr_t >= 0.0) {
            return Err(Error::Contract(format!("learning rate must be >= 0, got {lr_t}")));
        }
        for p in params.iter() {
            if let Some(g) = grads.get(&p.name) {
                if g.len() != p.value.len() {
                    return Err(Error::Shape(format!(
                        "gradient for `{}` has {} values, parameter has {}",
                        p.name,
                        g.len(),
                        p.value.len()
                    )));
                }
                if let Some(bad) = g.iter().position(|v| !v.is_finite()) {
                    return Err(Error::NumericInstability {
                        layer: p.name.clone(),
                        detail: format!("gradient entry {bad} is {}", g[bad]),
                    });
                }
            }
        }
        let cfg = &self.config;
        for p in params.iter_mut() {
            if !p.kind.trainable() {
                continue;
            }
            let Some(g) = grads.get(&p.name) else { continue };
            let vel = self.velocity.entry(p.name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            if cfg.exclude.contains(&p.kind) {
                for ((w, &gi), v) in p.value.iter_mut().zip(g).zip(vel.iter_mut()) {
                    *v = cfg.momentum * *v + lr_t * gi;
                    *w = (*w as f64 - *v) as f32;
                }
            } else {
                let wn = norm(p.value.iter().map(|&x| x as f64));
                let gn = norm(g.iter().copied());
                let rate = lr_t * lars_local_lr(wn, gn, cfg);
                for ((w, &gi), v) in p.value.iter_mut().zip(g).zip(vel.iter_mut()) {
                    let wf = *w as f64;
                    *v = cfg.momentum * *v + rate * (gi + cfg.weight_decay * wf);
                    *w = (wf - *v) as f32;
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    /// Number of equal-length cosine half-waves.
    pub restarts: usize,
    pub min_lr: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig { restarts: 3, min_lr: 0.0 }
    }
}

impl ScheduleConfig {
    pub fn validate(&self, base_lr: f64) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::Contract("schedule needs at least one restart segment".into()));
        }
        if !(self.min_lr >= 0.0 && self.min_lr < base_lr) {
            return Err(Error::Contract(format!(
                "min_lr {} must lie in [0, base_lr = {base_lr})",
                self.min_lr
            )));
        }
        Ok(())
    }
}

/// Cosine half-wave with restarts at a (possibly fractional) epoch:
/// the run is cut into `restarts` equal segments of length `T`, and at
/// offset `t` inside a segment `lr = min + (base − min)(1 + cos(πt/T))/2`.
pub fn cosine_restart_lr(epoch: f64, total_epochs: usize, base_lr: f64, cfg: &ScheduleConfig) -> f64 {
    let seg = total_epochs.max(1) as f64 / cfg.restarts.max(1) as f64;
    let k = (epoch / seg).floor();
    let t = epoch - k * seg;
    cfg.min_lr + (base_lr - cfg.min_lr) * (1.0 + (std::f64::consts::PI * t / seg).cos()) / 2.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EarlyStopping {
    pub patience: usize,
    pub min_delta: f64,
}

impl Default for EarlyStopping {
    fn default() -> Self {
        EarlyStopping { patience: 5, min_delta: 0.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StopDecision {
    pub stop: bool,
    /// Epoch index of the best validation loss so far.
    pub best: usize,
}

/// An epoch improves when its loss is below the best so far by more than
/// `min_delta`. Training stops once `patience` epochs pass without one.
pub fn early_stop(history: &[f64], cfg: &EarlyStopping) -> Result<StopDecision> {
    let (&first, rest) = history
        .split_first()
        .ok_or_else(|| Error::Contract("early stopping needs a non-empty history".into()))?;
    let mut best = 0;
    let mut best_val = first;
    for (i, &v) in rest.iter().enumerate() {
        if v < best_val - cfg.min_delta {
            best = i + 1;
            best_val = v;
        }
    }
    Ok(StopDecision {
        stop: history.len() - 1 - best >= cfg.patience,
        best,
    })
}
