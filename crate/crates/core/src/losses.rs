//! Self-supervised objectives (NT-Xent, SupCon, Barlow Twins, SwAV) and the
//! supervised cross-entropy baseline. Every loss returns a scalar tensor.
//!
//! Contrastive batches are view-major: rows `0..B` hold view 1 of every
//! sample, rows `B..2B` view 2, and so on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{diag, Rng, Tensor};

/// Added to self-similarity logits so they vanish from every softmax.
const MASKED: f64 = -1e30;

#[derive(Clone, Debug)]
pub struct ContrastiveBatch {
    pub embeddings: Tensor,
    pub views: usize,
    /// One class id per sample (length B); required by [`supcon`].
    pub labels: Option<Vec<usize>>,
    pub temperature: f64,
}

impl ContrastiveBatch {
    pub fn new(embeddings: Tensor, views: usize, labels: Option<Vec<usize>>, temperature: f64) -> Result<Self> {
        let rows = match embeddings.shape() {
            &[rows, _] => rows,
            other => return Err(Error::Shape(format!("contrastive embeddings must be [V*B, d], got {other:?}"))),
        };
        if views < 2 || rows % views != 0 {
            return Err(Error::Contract(format!(
                "{rows} rows cannot be split into {views} views (need V >= 2 dividing the row count)"
            )));
        }
        if !(temperature > 0.0) {
            return Err(Error::Contract(format!("temperature must be positive, got {temperature}")));
        }
        if let Some(l) = &labels {
            if l.len() != rows / views {
                return Err(Error::Contract(format!(
                    "{} labels for a batch of {} samples",
                    l.len(),
                    rows / views
                )));
            }
        }
        Ok(ContrastiveBatch {
            embeddings,
            views,
            labels,
            temperature,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.embeddings.shape()[0] / self.views
    }

    fn rows(&self) -> usize {
        self.embeddings.shape()[0]
    }

    /// Log-softmax over all other rows of cosine similarity / τ.
    fn log_probs(&self) -> Result<Tensor> {
        let n = self.rows();
        let z = self.embeddings.l2_normalize(1)?;
        let logits = z.matmul(&z.t()?)?.scale(1.0 / self.temperature);
        let mut mask = vec![0.0; n * n];
        for i in 0..n {
            mask[i * n + i] = MASKED;
        }
        logits.add(&Tensor::new(&[n, n], mask)?)?.log_softmax()
    }
}

/// SimCLR's normalized-temperature cross-entropy for V = 2:
/// `ℓ_i = −log( exp(cos(z_i, z_j)/τ) / Σ_{k≠i} exp(cos(z_i, z_k)/τ) )`,
/// averaged over all 2B anchors, where j is i's other view.
pub fn nt_xent(batch: &ContrastiveBatch) -> Result<Tensor> {
    if batch.views != 2 {
        return Err(Error::Contract(format!("nt_xent needs exactly 2 views, got {}", batch.views)));
    }
    let b = batch.batch_size();
    if b < 2 {
        return Err(Error::Contract("nt_xent needs B >= 2 so that negatives exist".into()));
    }
    let n = 2 * b;
    let logp = batch.log_probs()?;
    let mut pos = vec![0.0; n * n];
    for i in 0..n {
        pos[i * n + (i + b) % n] = 1.0;
    }
    Ok(logp.mul(&Tensor::new(&[n, n], pos)?)?.sum().scale(-1.0 / n as f64))
}

#[derive(Debug)]
pub struct SupConOutput {
    pub loss: Tensor,
    /// Anchors without any positive; they do not contribute to the loss.
    pub excluded_anchors: usize,
}

/// Supervised contrastive loss:
/// `L_i = −1/|P(i)| Σ_{p∈P(i)} log( exp(z_i·z_p/τ) / Σ_{a≠i} exp(z_i·z_a/τ) )`
/// on l2-normalized rows, averaged over anchors that have a positive.
pub fn supcon(batch: &ContrastiveBatch) -> Result<SupConOutput> {
    let labels = batch
        .labels
        .as_ref()
        .ok_or_else(|| Error::Contract("supcon needs labels".into()))?;
    let b = batch.batch_size();
    let n = batch.rows();
    let label = |r: usize| labels[r % b];
    let mut weights = vec![0.0; n * n];
    let mut included = 0usize;
    for i in 0..n {
        let positives: Vec<usize> = (0..n).filter(|&p| p != i && label(p) == label(i)).collect();
        if positives.is_empty() {
            continue;
        }
        included += 1;
        let w = 1.0 / positives.len() as f64;
        for p in positives {
            weights[i * n + p] = w;
        }
    }
    if included == 0 {
        return Err(Error::Contract("supcon: no anchor has a positive in this batch".into()));
    }
    let logp = batch.log_probs()?;
    let loss = logp
        .mul(&Tensor::new(&[n, n], weights)?)?
        .sum()
        .scale(-1.0 / included as f64);
    Ok(SupConOutput {
        loss,
        excluded_anchors: n - included,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarlowConfig {
    /// Weight of the off-diagonal redundancy term.
    pub lambda: f64,
}

impl Default for BarlowConfig {
    fn default() -> Self {
        BarlowConfig { lambda: 5e-3 }
    }
}

/// Barlow Twins: standardize each view per dimension over the batch,
/// `C = Z_Aᵀ Z_B / B`, `L = Σ_i (1 − C_ii)² + λ Σ_{i≠j} C_ij²`.
///
/// Per-dimension variances below the epsilon floor are floored and counted
/// under [`diag::VARIANCE_FLOOR`].
pub fn barlow_twins(view_a: &Tensor, view_b: &Tensor, cfg: &BarlowConfig) -> Result<Tensor> {
    if view_a.shape() != view_b.shape() || view_a.shape().len() != 2 {
        return Err(Error::Shape(format!(
            "barlow_twins needs two [B, d] views of equal shape, got {:?} and {:?}",
            view_a.shape(),
            view_b.shape()
        )));
    }
    if !(cfg.lambda > 0.0) {
        return Err(Error::Contract(format!("lambda must be positive, got {}", cfg.lambda)));
    }
    let (b, d) = (view_a.shape()[0], view_a.shape()[1]);
    if b < 2 {
        return Err(Error::Contract("barlow_twins needs B >= 2 to standardize".into()));
    }
    let standardize = |v: &Tensor| -> Result<Tensor> {
        let centered = v.sub(&v.mean_axis(0)?)?;
        let var = centered
            .square()
            .mean_axis(0)?
            .clamp_min(diag::epsilon_floor(), diag::VARIANCE_FLOOR);
        centered.div(&var.sqrt())
    };
    let za = standardize(view_a)?;
    let zb = standardize(view_b)?;
    let c = za.t()?.matmul(&zb)?.scale(1.0 / b as f64);
    let eye = Tensor::eye(d);
    let off = Tensor::ones(&[d, d]).sub(&eye)?;
    let on_diag = c.sub(&eye)?.square().mul(&eye)?.sum();
    let off_diag = c.square().mul(&off)?.sum().scale(cfg.lambda);
    on_diag.add(&off_diag)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwavConfig {
    pub num_prototypes: usize,
    /// Entropic regularization ε of the Sinkhorn code assignment.
    pub epsilon: f64,
    pub sinkhorn_iters: usize,
    pub temperature: f64,
}

impl Default for SwavConfig {
    fn default() -> Self {
        SwavConfig {
            num_prototypes: 32,
            epsilon: 0.05,
            sinkhorn_iters: 3,
            temperature: 0.1,
        }
    }
}

impl SwavConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_prototypes < 2 {
            return Err(Error::Contract(format!("SwAV needs K >= 2 prototypes, got {}", self.num_prototypes)));
        }
        if !(self.epsilon > 0.0) || !(self.temperature > 0.0) || self.sinkhorn_iters == 0 {
            return Err(Error::Contract("SwAV needs epsilon > 0, temperature > 0 and at least one Sinkhorn iteration".into()));
        }
        Ok(())
    }
}

/// Prototype matrix plus the code-assignment settings.
#[derive(Clone, Debug)]
pub struct SwavState {
    pub config: SwavConfig,
    /// `[K, d]`, rows of unit norm.
    pub prototypes: Tensor,
}

impl SwavState {
    pub fn new(config: SwavConfig, dim: usize, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut data: Vec<f64> = (0..config.num_prototypes * dim).map(|_| rng.normal()).collect();
        normalize_rows(&mut data, dim);
        let prototypes = Tensor::param(&[config.num_prototypes, dim], data)?;
        Ok(SwavState { config, prototypes })
    }
}

/// Rescales every length-`dim` row to unit norm in place (zero rows untouched).
pub fn normalize_rows<T: Copy + Into<f64> + FromF64>(data: &mut [T], dim: usize) {
    for row in data.chunks_mut(dim) {
        let norm = row.iter().map(|&v| v.into().powi(2)).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v = T::from_f64((*v).into() / norm));
        }
    }
}

pub trait FromF64 {
    fn from_f64(v: f64) -> Self;
}

impl FromF64 for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
}

impl FromF64 for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

/// Sinkhorn-Knopp code assignment on a row-major `[B, K]` score matrix.
///
/// Starts from `Q = exp((S − max S)/ε)`; each iteration rescales columns to
/// sum to B/K and then rows to sum to 1. The global max shift cancels in the
/// first normalization, so it only guards against overflow. The result is
/// nonnegative, every row sums to 1, and column sums approach B/K as
/// `iters` grows.
pub fn sinkhorn_codes(scores: &[f64], batch: usize, k: usize, epsilon: f64, iters: usize) -> Result<Vec<f64>> {
    if scores.len() != batch * k || batch == 0 || k == 0 {
        return Err(Error::Shape(format!("sinkhorn: {} scores for a {batch}x{k} matrix", scores.len())));
    }
    if iters == 0 || !(epsilon > 0.0) {
        return Err(Error::Contract("sinkhorn needs iters >= 1 and epsilon > 0".into()));
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut q: Vec<f64> = scores.iter().map(|s| ((s - max) / epsilon).exp()).collect();
    let total: f64 = q.iter().sum();
    q.iter_mut().for_each(|v| *v /= total);
    let col_target = 1.0 / k as f64;
    let row_target = 1.0 / batch as f64;
    for _ in 0..iters {
        for j in 0..k {
            let s: f64 = (0..batch).map(|i| q[i * k + j]).sum();
            if s > 0.0 {
                for i in 0..batch {
                    q[i * k + j] *= col_target / s;
                }
            }
        }
        for row in q.chunks_mut(k) {
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                row.iter_mut().for_each(|v| *v *= row_target / s);
            }
        }
    }
    q.iter_mut().for_each(|v| *v *= batch as f64);
    Ok(q)
}

/// SwAV swapped prediction with externally supplied codes:
/// `L = −½·mean_b( Σ_k q_B log p_A + Σ_k q_A log p_B )`, where
/// `p_X = softmax(z_X · Cᵀ / τ)` and `z_X` are the l2-normalized embeddings.
pub fn swav_loss_with_codes(
    view_a: &Tensor,
    view_b: &Tensor,
    prototypes: &Tensor,
    codes_a: &[f64],
    codes_b: &[f64],
    temperature: f64,
) -> Result<Tensor> {
    let (scores_a, scores_b) = swav_scores(view_a, view_b, prototypes)?;
    let (b, k) = (scores_a.shape()[0], scores_a.shape()[1]);
    if codes_a.len() != b * k || codes_b.len() != b * k {
        return Err(Error::Shape(format!("codes must be {b}x{k}")));
    }
    let log_pa = scores_a.scale(1.0 / temperature).log_softmax()?;
    let log_pb = scores_b.scale(1.0 / temperature).log_softmax()?;
    let qa = Tensor::new(&[b, k], codes_a.to_vec())?;
    let qb = Tensor::new(&[b, k], codes_b.to_vec())?;
    let cross = log_pa.mul(&qb)?.sum().add(&log_pb.mul(&qa)?.sum())?;
    Ok(cross.scale(-0.5 / b as f64))
}

/// Cosine scores of both views against the prototypes, each `[B, K]`.
fn swav_scores(view_a: &Tensor, view_b: &Tensor, prototypes: &Tensor) -> Result<(Tensor, Tensor)> {
    if view_a.shape() != view_b.shape() || view_a.shape().len() != 2 {
        return Err(Error::Shape(format!(
            "swav needs two [B, d] views of equal shape, got {:?} and {:?}",
            view_a.shape(),
            view_b.shape()
        )));
    }
    match prototypes.shape() {
        &[k, d] if d == view_a.shape()[1] => {
            if k < 2 {
                return Err(Error::Contract(format!("SwAV needs K >= 2 prototypes, got {k}")));
            }
        }
        other => {
            return Err(Error::Shape(format!(
                "prototypes {other:?} do not match embedding width {}",
                view_a.shape()[1]
            )))
        }
    }
    let za = view_a.l2_normalize(1)?;
    let zb = view_b.l2_normalize(1)?;
    let ct = prototypes.t()?;
    Ok((za.matmul(&ct)?, zb.matmul(&ct)?))
}

/// Codes computed for both views by [`swav_loss`]; exposed for inspection.
#[derive(Clone, Debug)]
pub struct SwavCodes {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

/// SwAV loss: Sinkhorn codes from each view's prototype scores (treated as
/// constants) predict the other view's softmax.
pub fn swav_loss(view_a: &Tensor, view_b: &Tensor, state: &SwavState) -> Result<(Tensor, SwavCodes)> {
    state.config.validate()?;
    let (sa, sb) = swav_scores(view_a, view_b, &state.prototypes)?;
    let (b, k) = (sa.shape()[0], sa.shape()[1]);
    let cfg = &state.config;
    let codes = SwavCodes {
        a: sinkhorn_codes(sa.data(), b, k, cfg.epsilon, cfg.sinkhorn_iters)?,
        b: sinkhorn_codes(sb.data(), b, k, cfg.epsilon, cfg.sinkhorn_iters)?,
    };
    let loss = swav_loss_with_codes(view_a, view_b, &state.prototypes, &codes.a, &codes.b, cfg.temperature)?;
    Ok((loss, codes))
}

/// Mean negative log-likelihood of `targets` under `softmax(logits)`.
pub fn cross_entropy(logits: &Tensor, targets: &[usize]) -> Result<Tensor> {
    let (b, c) = match logits.shape() {
        &[b, c] => (b, c),
        other => return Err(Error::Shape(format!("cross_entropy needs [B, C] logits, got {other:?}"))),
    };
    if targets.len() != b {
        return Err(Error::Contract(format!("{} targets for {b} rows", targets.len())));
    }
    let mut onehot = vec![0.0; b * c];
    for (row, &t) in targets.iter().enumerate() {
        if t >= c {
            return Err(Error::Contract(format!("target {t} in row {row} is outside [0, {c})")));
        }
        onehot[row * c + t] = 1.0;
    }
    Ok(logits
        .log_softmax()?
        .mul(&Tensor::new(&[b, c], onehot)?)?
        .sum()
        .scale(-1.0 / b as f64))
}

/// Loss selected for a training stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum LossKind {
    NtXent {
        #[serde(default = "default_temperature")]
        temperature: f64,
    },
    Supcon {
        #[serde(default = "default_temperature")]
        temperature: f64,
    },
    BarlowTwins {
        #[serde(default = "default_lambda")]
        lambda: f64,
    },
    Swav {
        #[serde(default = "default_prototypes")]
        num_prototypes: usize,
        #[serde(default = "default_swav_epsilon")]
        epsilon: f64,
        #[serde(default = "default_sinkhorn_iters")]
        sinkhorn_iters: usize,
        #[serde(default = "default_temperature")]
        temperature: f64,
    },
    CrossEntropy,
}

fn default_temperature() -> f64 {
    0.1
}
fn default_lambda() -> f64 {
    5e-3
}
fn default_prototypes() -> usize {
    32
}
fn default_swav_epsilon() -> f64 {
    0.05
}
fn default_sinkhorn_iters() -> usize {
    3
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::NtXent { .. } => "nt_xent",
            LossKind::Supcon { .. } => "supcon",
            LossKind::BarlowTwins { .. } => "barlow_twins",
            LossKind::Swav { .. } => "swav",
            LossKind::CrossEntropy => "cross_entropy",
        }
    }

    pub fn needs_labels(&self) -> bool {
        matches!(self, LossKind::Supcon { .. } | LossKind::CrossEntropy)
    }

    pub fn is_pretext(&self) -> bool {
        !matches!(self, LossKind::CrossEntropy)
    }

    pub fn swav_config(&self) -> Option<SwavConfig> {
        match *self {
            LossKind::Swav {
                num_prototypes,
                epsilon,
                sinkhorn_iters,
                temperature,
            } => Some(SwavConfig {
                num_prototypes,
                epsilon,
                sinkhorn_iters,
                temperature,
            }),
            _ => None,
        }
    }
}
