//! One training stage: pretext (SSL) or downstream (cross-entropy).

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::optim::{cosine_restart_lr, early_stop, EarlyStopping, Lars, LarsConfig, ScheduleConfig};
use crate::augment::{make_views, AugmentPolicy, Image};
use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::losses::{self, BarlowConfig, ContrastiveBatch, LossKind, SwavState};
use crate::model::{Bound, Checkpoint, Model, ParamKind, StageTag};
use crate::numerics::{Rng, Tensor};

/// Name of the SwAV prototype matrix inside the parameter set.
pub const SWAV_PROTOTYPES: &str = "swav.prototypes";

/// Consecutive non-finite steps tolerated before a stage is aborted.
pub const MAX_NONFINITE_STEPS: usize = 3;

const VAL_TAG: u64 = 0x7661_6c00;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lars: LarsConfig,
    pub schedule: ScheduleConfig,
    /// Requires a validation set when present.
    pub early_stopping: Option<EarlyStopping>,
    pub augment: AugmentPolicy,
}

impl Default for StageConfig {
    fn default() -> Self {
        StageConfig {
            epochs: 20,
            batch_size: 64,
            lars: LarsConfig::default(),
            schedule: ScheduleConfig::default(),
            early_stopping: None,
            augment: AugmentPolicy::default(),
        }
    }
}

impl StageConfig {
    /// Fine-tuning defaults: 30 epochs, early stopping with patience 5, and
    /// milder augmentation (larger crops, flips, light color jitter).
    pub fn downstream() -> Self {
        let mut augment = AugmentPolicy::default();
        augment.crop.scale = (0.5, 1.0);
        augment.color_jitter.p = 0.3;
        augment.grayscale.p = 0.0;
        augment.blur.p = 0.0;
        StageConfig {
            epochs: 30,
            early_stopping: Some(EarlyStopping::default()),
            augment,
            ..StageConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Contract(format!("batch_size must be >= 2, got {}", self.batch_size)));
        }
        self.lars.validate()?;
        self.schedule.validate(self.lars.base_lr)?;
        self.augment.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageSpec {
    pub tag: StageTag,
    pub loss: LossKind,
    pub config: StageConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub stage: StageTag,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    /// Learning rate at the start of the epoch.
    pub lr: f64,
    pub wall_ms: u128,
    pub nonfinite_steps: usize,
}

impl EpochMetrics {
    pub const TSV_HEADER: &'static str = "stage\tepoch\ttrain_loss\tval_loss\tlr\twall_ms\tnonfinite_steps";

    pub fn tsv_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.stage.as_str(),
            self.epoch,
            self.train_loss,
            self.val_loss.map_or("-".to_string(), |v| v.to_string()),
            self.lr,
            self.wall_ms,
            self.nonfinite_steps
        )
    }
}

#[derive(Clone, Debug)]
pub struct StageOutcome {
    pub checkpoint: Checkpoint,
    pub metrics: Vec<EpochMetrics>,
    /// Epoch whose parameters were kept, when early stopping was active.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

fn check_compat(spec: &StageSpec, model: &Model, train: &LabeledSet) -> Result<()> {
    let downstream = spec.tag == StageTag::Downstream;
    if downstream != (spec.loss == LossKind::CrossEntropy) {
        return Err(Error::Contract(format!(
            "stage `{}` cannot use loss `{}`: the downstream stage uses cross_entropy and pretext stages use an SSL loss",
            spec.tag.as_str(),
            spec.loss.name()
        )));
    }
    if spec.loss.needs_labels() && !train.fully_labeled() {
        return Err(Error::Contract(format!(
            "loss `{}` needs labels but the training set has unlabeled rows",
            spec.loss.name()
        )));
    }
    if train.len() < 2 {
        return Err(Error::Contract("a training stage needs at least 2 images".into()));
    }
    let (h, w, c) = model.config.encoder.input_size;
    let policy = &spec.config.augment;
    if policy.output_size != (h, w) || policy.normalization.mean.len() != c {
        return Err(Error::Contract(format!(
            "augment policy emits {}x{} views with {} channels; the encoder expects {h}x{w} with {c}",
            policy.output_size.0,
            policy.output_size.1,
            policy.normalization.mean.len()
        )));
    }
    Ok(())
}

/// Views of a batch, view-major: all first views, then all second views.
fn batch_views(images: &[&Image], policy: &AugmentPolicy, views: usize, rng: &Rng) -> Result<Tensor> {
    let mut per_sample = Vec::with_capacity(images.len());
    for (j, img) in images.iter().enumerate() {
        per_sample.push(make_views(img, policy, &mut rng.fork(j as u64), views)?);
    }
    let mut ordered = Vec::with_capacity(images.len() * views);
    for v in 0..views {
        ordered.extend(per_sample.iter().map(|s| s[v].clone()));
    }
    Image::stack(&ordered)
}

fn batch_loss(
    model: &Model,
    bound: &Bound,
    loss: &LossKind,
    x: &Tensor,
    labels: &[usize],
    training: bool,
) -> Result<Tensor> {
    let b = labels.len().max(x.shape()[0] / if *loss == LossKind::CrossEntropy { 1 } else { 2 });
    match loss {
        LossKind::CrossEntropy => {
            let logits = model.forward_logits(bound, x, training)?.output;
            losses::cross_entropy(&logits, labels)
        }
        LossKind::NtXent { temperature } => {
            let z = model.forward_projection(bound, x, training)?.output;
            losses::nt_xent(&ContrastiveBatch::new(z, 2, None, *temperature)?)
        }
        LossKind::Supcon { temperature } => {
            let z = model.forward_projection(bound, x, training)?.output;
            Ok(losses::supcon(&ContrastiveBatch::new(z, 2, Some(labels.to_vec()), *temperature)?)?.loss)
        }
        LossKind::BarlowTwins { lambda } => {
            let z = model.forward_projection(bound, x, training)?.output;
            losses::barlow_twins(&z.slice(0, 0, b)?, &z.slice(0, b, 2 * b)?, &BarlowConfig { lambda: *lambda })
        }
        LossKind::Swav { .. } => {
            let z = model.forward_projection(bound, x, training)?.output;
            let state = SwavState {
                config: loss.swav_config().expect("swav loss"),
                prototypes: bound.get(SWAV_PROTOTYPES)?.clone(),
            };
            Ok(losses::swav_loss(&z.slice(0, 0, b)?, &z.slice(0, b, 2 * b)?, &state)?.0)
        }
    }
}

/// Shuffled mini-batches; a trailing batch smaller than 2 is dropped.
fn batches(n: usize, batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    order
        .chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect()
}

fn ensure_stage_heads(spec: &StageSpec, model: &mut Model, train: &LabeledSet, rng: &Rng) -> Result<()> {
    if spec.tag == StageTag::Downstream && model.classes != train.classes {
        model.init_classifier(&train.classes, &mut rng.fork(1))?;
    }
    if let Some(cfg) = spec.loss.swav_config() {
        let dim = model.config.projection.output_dim;
        let fits = model
            .params
            .get(SWAV_PROTOTYPES)
            .is_some_and(|p| p.shape == [cfg.num_prototypes, dim]);
        if !fits {
            let state = SwavState::new(cfg.clone(), dim, &mut rng.fork(2))?;
            model
                .params
                .push(SWAV_PROTOTYPES, &[cfg.num_prototypes, dim], ParamKind::Weight, state.prototypes.to_f32());
        }
    }
    Ok(())
}

fn mean_loss(
    model: &Model,
    loss: &LossKind,
    set: &LabeledSet,
    policy: &AugmentPolicy,
    batch_size: usize,
    rng: &Rng,
) -> Result<f64> {
    let views = if *loss == LossKind::CrossEntropy { 1 } else { 2 };
    let policy = if views == 1 { policy.evaluation() } else { policy.clone() };
    let bound = model.params.bind(false);
    let mut total = 0.0;
    let mut count = 0usize;
    let idx: Vec<usize> = (0..set.len()).collect();
    for (bi, chunk) in idx.chunks(batch_size).enumerate() {
        if chunk.len() < 2 {
            continue;
        }
        let imgs: Vec<&Image> = chunk.iter().map(|&i| set.images[i]).collect();
        let labels: Vec<usize> = chunk.iter().map(|&i| set.labels[i].unwrap_or(0)).collect();
        let x = batch_views(&imgs, &policy, views, &rng.fork(bi as u64))?;
        let l = batch_loss(model, &bound, loss, &x, &labels, false)?.item();
        total += l * chunk.len() as f64;
        count += chunk.len();
    }
    if count == 0 {
        return Err(Error::Contract("validation set has fewer than 2 images".into()));
    }
    Ok(total / count as f64)
}

/// Trains `input` for one stage. Deterministic given `seed`. `on_epoch` is
/// called after every epoch (used to persist the metric stream). A stage
/// with zero epochs returns `input` unchanged.
///
/// A non-finite loss or gradient skips the update; after
/// [`MAX_NONFINITE_STEPS`] consecutive such steps the stage aborts with
/// [`Error::Diverged`] carrying the last good checkpoint.
pub fn run_stage(
    spec: &StageSpec,
    input: &Checkpoint,
    train: &LabeledSet,
    val: Option<&LabeledSet>,
    seed: u64,
    on_epoch: &mut dyn FnMut(&EpochMetrics) -> Result<()>,
) -> Result<StageOutcome> {
    let cfg = &spec.config;
    if cfg.epochs == 0 {
        return Ok(StageOutcome { checkpoint: input.clone(), metrics: Vec::new(), best_epoch: None, stopped_early: false });
    }
    cfg.validate()?;
    check_compat(spec, &input.model, train)?;
    if cfg.early_stopping.is_some() && val.is_none_or(|v| v.len() < 2) {
        return Err(Error::Contract("early stopping needs a validation set with at least 2 images".into()));
    }
    let rng = Rng::new(seed).fork(spec.tag as u64);
    let mut model = input.model.clone();
    ensure_stage_heads(spec, &mut model, train, &rng)?;
    let mut opt = Lars::new(cfg.lars.clone())?;
    let views = if spec.loss == LossKind::CrossEntropy { 1 } else { 2 };
    let steps_per_epoch = batches(train.len(), cfg.batch_size, &mut Rng::new(0)).len().max(1);

    let make_checkpoint = |model: &Model, epoch: usize| {
        let mut lineage = input.lineage.clone();
        lineage.push(spec.tag);
        Checkpoint { model: model.clone(), stage: Some(spec.tag), lineage, epoch, seed, rng: rng.state() }
    };

    let mut metrics = Vec::new();
    let mut val_history = Vec::new();
    let mut best: Option<(usize, crate::model::ParamSet)> = None;
    let mut stopped_early = false;
    let mut consecutive_bad = 0usize;
    let mut epochs_done = 0usize;
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let mut epoch_rng = rng.fork_path(&[0x6570, epoch as u64]);
        let plan = batches(train.len(), cfg.batch_size, &mut epoch_rng);
        let mut loss_sum = 0.0;
        let mut loss_n = 0usize;
        let mut nonfinite = 0usize;
        for (step, batch) in plan.iter().enumerate() {
            let lr = cosine_restart_lr(
                epoch as f64 + step as f64 / steps_per_epoch as f64,
                cfg.epochs,
                cfg.lars.base_lr,
                &cfg.schedule,
            );
            let imgs: Vec<&Image> = batch.iter().map(|&i| train.images[i]).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| train.labels[i].unwrap_or(0)).collect();
            let x = batch_views(&imgs, &cfg.augment, views, &epoch_rng.fork(step as u64))?;
            let bound = model.params.bind(true);
            let outcome = batch_loss(&model, &bound, &spec.loss, &x, &labels, true).and_then(|loss| {
                let value = loss.item();
                if !value.is_finite() {
                    return Err(Error::NumericInstability { layer: "loss".into(), detail: format!("loss is {value}") });
                }
                loss.backward()?;
                opt.step(&mut model.params, &bound.grads(), lr)?;
                Ok(value)
            });
            match outcome {
                Ok(value) => {
                    consecutive_bad = 0;
                    loss_sum += value;
                    loss_n += 1;
                    model.update_running_stats(&bound);
                    if let Some(p) = model.params.get_mut(SWAV_PROTOTYPES) {
                        let dim = p.shape[1];
                        losses::normalize_rows(&mut p.value, dim);
                    }
                }
                Err(e @ Error::NumericInstability { .. }) => {
                    nonfinite += 1;
                    consecutive_bad += 1;
                    log::warn!("stage {} epoch {epoch} step {step}: {e}; update skipped", spec.tag.as_str());
                    if consecutive_bad >= MAX_NONFINITE_STEPS {
                        return Err(Error::Diverged {
                            stage: spec.tag.as_str().to_string(),
                            detail: format!("{MAX_NONFINITE_STEPS} consecutive non-finite steps, last: {e}"),
                            last_good: Some(Box::new(make_checkpoint(&model, epochs_done))),
                        });
                    }
                }
                Err(e) => return Err(e),
            }
        }
        epochs_done = epoch + 1;
        let val_loss = match val {
            Some(v) if v.len() >= 2 => Some(mean_loss(&model, &spec.loss, v, &cfg.augment, cfg.batch_size, &rng.fork(VAL_TAG))?),
            _ => None,
        };
        let m = EpochMetrics {
            stage: spec.tag,
            epoch,
            train_loss: if loss_n > 0 { loss_sum / loss_n as f64 } else { f64::NAN },
            val_loss,
            lr: cosine_restart_lr(epoch as f64, cfg.epochs, cfg.lars.base_lr, &cfg.schedule),
            wall_ms: started.elapsed().as_millis(),
            nonfinite_steps: nonfinite,
        };
        on_epoch(&m)?;
        metrics.push(m);
        if let (Some(es), Some(vl)) = (&cfg.early_stopping, val_loss) {
            val_history.push(if vl.is_finite() { vl } else { f64::INFINITY });
            let decision = early_stop(&val_history, es)?;
            if decision.best == epoch {
                best = Some((epoch, model.params.clone()));
            }
            if decision.stop {
                stopped_early = true;
                break;
            }
        }
    }
    let best_epoch = best.as_ref().map(|(e, _)| *e);
    if let Some((_, params)) = best {
        model.params = params;
    }
    Ok(StageOutcome { checkpoint: make_checkpoint(&model, epochs_done), metrics, best_epoch, stopped_early })
}
