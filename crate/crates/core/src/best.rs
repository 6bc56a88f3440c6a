//! Bayesian two-group comparison with a robust Student-t model.
//!
//! Each group k has mean μ_k and scale σ_k; the groups share a normality
//! parameter ν. Priors are set from the pooled sample of both groups:
//! μ_k ~ Normal(m, 1000·s), σ_k ~ Uniform(s/1000, 1000·s), ν−1 ~ Exp(mean 29).
//! The posterior is sampled with adaptive random-walk Metropolis-within-Gibbs;
//! σ_k and ν are updated on log scales (η = ln(ν−1) for ν).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::numerics::Rng;
use crate::train::RunRecord;

/// Prior constants; the defaults are the canonical formulation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BestPriors {
    /// Prior sd of μ_k as a multiple of the pooled sd.
    pub mu_sd_factor: f64,
    /// σ_k is uniform on [s / factor, s · factor].
    pub sigma_factor: f64,
    /// Mean of the exponential prior on ν − 1.
    pub nu_minus_one_mean: f64,
}

impl Default for BestPriors {
    fn default() -> Self {
        BestPriors { mu_sd_factor: 1000.0, sigma_factor: 1000.0, nu_minus_one_mean: 29.0 }
    }
}

/// Values held constant instead of sampled (used by correctness oracles).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedScale {
    pub sigma1: f64,
    pub sigma2: f64,
    pub nu: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BestConfig {
    pub chains: usize,
    pub draws: usize,
    pub warmup: usize,
    pub seed: u64,
    pub priors: BestPriors,
    /// Mass of the highest-density interval.
    pub hdi_mass: f64,
    /// Split-R̂ above this marks the result non-converged.
    pub rhat_threshold: f64,
    #[serde(skip)]
    pub fixed: Option<FixedScale>,
}

impl Default for BestConfig {
    fn default() -> Self {
        BestConfig {
            chains: 4,
            draws: 5000,
            warmup: 2000,
            seed: 0,
            priors: BestPriors::default(),
            hdi_mass: 0.95,
            rhat_threshold: 1.05,
            fixed: None,
        }
    }
}

impl BestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains < 2 || self.draws < 4 {
            return Err(Error::Contract("BEST needs >= 2 chains and >= 4 draws per chain".into()));
        }
        if !(self.hdi_mass > 0.0 && self.hdi_mass < 1.0) {
            return Err(Error::Contract(format!("hdi_mass must lie in (0, 1), got {}", self.hdi_mass)));
        }
        let p = &self.priors;
        if !(p.mu_sd_factor > 0.0 && p.sigma_factor > 1.0 && p.nu_minus_one_mean > 0.0) {
            return Err(Error::Contract("prior factors must be positive (sigma_factor > 1)".into()));
        }
        if let Some(f) = self.fixed {
            if !(f.sigma1 > 0.0 && f.sigma2 > 0.0 && f.nu > 1.0) {
                return Err(Error::Contract("fixed σ must be > 0 and fixed ν > 1".into()));
            }
        }
        Ok(())
    }
}

/// A point in parameter space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BestParams {
    pub mu1: f64,
    pub mu2: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub nu: f64,
}

/// Prior hyper-parameters derived from the pooled data.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PriorBounds {
    pub mu_mean: f64,
    pub mu_sd: f64,
    pub sigma_lo: f64,
    pub sigma_hi: f64,
    pub nu_rate: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sample_sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
}

fn check_groups(y1: &[f64], y2: &[f64]) -> Result<()> {
    if y1.len() < 2 || y2.len() < 2 {
        return Err(Error::Contract(format!(
            "each group needs at least 2 values, got {} and {}",
            y1.len(),
            y2.len()
        )));
    }
    if let Some(v) = y1.iter().chain(y2).find(|v| !v.is_finite()) {
        return Err(Error::Contract(format!("group values must be finite, found {v}")));
    }
    Ok(())
}

/// Prior hyper-parameters from both groups. A pooled sample without spread
/// has no scale to anchor the priors and is rejected.
pub fn prior_bounds(y1: &[f64], y2: &[f64], priors: &BestPriors) -> Result<PriorBounds> {
    check_groups(y1, y2)?;
    let pooled: Vec<f64> = y1.iter().chain(y2).copied().collect();
    let s = sample_sd(&pooled);
    if !(s > 0.0) {
        return Err(Error::Contract("pooled values have zero spread; nothing to compare".into()));
    }
    Ok(PriorBounds {
        mu_mean: mean(&pooled),
        mu_sd: priors.mu_sd_factor * s,
        sigma_lo: s / priors.sigma_factor,
        sigma_hi: s * priors.sigma_factor,
        nu_rate: 1.0 / priors.nu_minus_one_mean,
    })
}

fn student_t_ln_pdf(y: f64, nu: f64, mu: f64, sigma: f64) -> f64 {
    let z = (y - mu) / sigma;
    ln_gamma((nu + 1.0) / 2.0) - ln_gamma(nu / 2.0) - 0.5 * (nu * std::f64::consts::PI).ln() - sigma.ln()
        - (nu + 1.0) / 2.0 * (z * z / nu).ln_1p()
}

fn group_ln_lik(y: &[f64], nu: f64, mu: f64, sigma: f64) -> f64 {
    y.iter().map(|&v| student_t_ln_pdf(v, nu, mu, sigma)).sum()
}

fn ln_prior(p: &BestParams, b: &PriorBounds) -> f64 {
    let in_support = |s: f64| s >= b.sigma_lo && s <= b.sigma_hi;
    if !in_support(p.sigma1) || !in_support(p.sigma2) || !(p.nu > 1.0) || !p.nu.is_finite() {
        return f64::NEG_INFINITY;
    }
    let ln_norm = |x: f64| {
        let z = (x - b.mu_mean) / b.mu_sd;
        -0.5 * z * z - b.mu_sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
    };
    let ln_unif = -(b.sigma_hi - b.sigma_lo).ln();
    ln_norm(p.mu1) + ln_norm(p.mu2) + 2.0 * ln_unif + b.nu_rate.ln() - b.nu_rate * (p.nu - 1.0)
}

/// Log prior plus log likelihood; −∞ outside the prior support.
pub fn log_posterior(p: &BestParams, y1: &[f64], y2: &[f64], priors: &BestPriors) -> Result<f64> {
    let b = prior_bounds(y1, y2, priors)?;
    let lp = ln_prior(p, &b);
    if lp == f64::NEG_INFINITY {
        return Ok(lp);
    }
    Ok(lp + group_ln_lik(y1, p.nu, p.mu1, p.sigma1) + group_ln_lik(y2, p.nu, p.mu2, p.sigma2))
}

/// Convergence and mixing diagnostics for one scalar quantity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Diagnostic {
    pub rhat: f64,
    pub ess: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorSummary {
    /// Draws merged by chain index: μ₁−μ₂, σ₁, σ₂, ν.
    pub diff: Vec<f64>,
    pub sigma1: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub nu: Vec<f64>,
    /// (μ₁−μ₂)/sqrt((σ₁²+σ₂²)/2) per draw.
    pub effect_size: Vec<f64>,
    pub mean_diff: f64,
    pub hdi: (f64, f64),
    pub hdi_mass: f64,
    /// Posterior probability that μ₁ − μ₂ > 0.
    pub p_direction: f64,
    /// Per-parameter acceptance rates after warmup (μ₁, μ₂, σ₁, σ₂, ν).
    pub acceptance: [f64; 5],
    /// Diagnostics keyed by quantity name.
    pub diagnostics: BTreeMap<String, Diagnostic>,
    pub rhat_max: f64,
    pub ess_min: f64,
    pub converged: bool,
}

impl PosteriorSummary {
    pub fn hdi_of(&self, mass: f64) -> Result<(f64, f64)> {
        hdi(&self.diff, mass)
    }
}

/// Narrowest interval containing `mass` of the draws.
pub fn hdi(draws: &[f64], mass: f64) -> Result<(f64, f64)> {
    if draws.is_empty() || !(mass > 0.0 && mass <= 1.0) {
        return Err(Error::Contract("hdi needs draws and a mass in (0, 1]".into()));
    }
    let mut s = draws.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let k = ((mass * n as f64).ceil() as usize).clamp(1, n);
    let (mut lo, mut width) = (0, f64::INFINITY);
    for i in 0..=n - k {
        let w = s[i + k - 1] - s[i];
        if w < width {
            width = w;
            lo = i;
        }
    }
    Ok((s[lo], s[lo + k - 1]))
}

/// Split-R̂ over chains of equal length (each chain halved).
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let halves: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| {
            let h = c.len() / 2;
            [&c[..h], &c[c.len() - h..]]
        })
        .collect();
    let n = halves[0].len() as f64;
    let means: Vec<f64> = halves.iter().map(|h| mean(h)).collect();
    let w = halves.iter().map(|h| sample_sd(h).powi(2)).sum::<f64>() / halves.len() as f64;
    let b = n * sample_sd(&means).powi(2);
    if w == 0.0 {
        return if b == 0.0 { 1.0 } else { f64::INFINITY };
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}

/// Multi-chain effective sample size with Geyer's initial positive
/// sequence truncation.
pub fn effective_sample_size(chains: &[Vec<f64>]) -> f64 {
    let m = chains.len();
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    if m == 0 || n < 4 {
        return 0.0;
    }
    let means: Vec<f64> = chains.iter().map(|c| mean(&c[..n])).collect();
    let acov = |c: &[f64], mu: f64, lag: usize| (0..n - lag).map(|i| (c[i] - mu) * (c[i + lag] - mu)).sum::<f64>() / n as f64;
    let mean_acov = |lag: usize| chains.iter().zip(&means).map(|(c, &mu)| acov(c, mu, lag)).sum::<f64>() / m as f64;
    let w = mean_acov(0) * n as f64 / (n as f64 - 1.0);
    let b_over_n = if m > 1 { sample_sd(&means).powi(2) } else { 0.0 };
    let var_plus = (n as f64 - 1.0) / n as f64 * w + b_over_n;
    if var_plus == 0.0 {
        return (m * n) as f64;
    }
    let rho = |t: usize| 1.0 - (w - mean_acov(t)) / var_plus;
    let mut sum = 0.0;
    let mut t = 0;
    let mut prev_pair = f64::INFINITY;
    while t + 1 < n {
        let pair = rho(t) + rho(t + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        sum += pair;
        prev_pair = pair;
        t += 2;
    }
    let tau = (2.0 * sum - 1.0).max(1.0 / ((m * n) as f64).log10());
    (m * n) as f64 / tau
}

struct ChainOutput {
    draws: Vec<BestParams>,
    accepted: [usize; 5],
}

fn run_chain(y1: &[f64], y2: &[f64], b: &PriorBounds, cfg: &BestConfig, chain: usize) -> ChainOutput {
    let mut rng = Rng::new(cfg.seed).fork_path(&[0xbe57, chain as u64]);
    let jitter = |rng: &mut Rng, v: f64, scale: f64| v + scale * rng.normal();
    let (s1, s2) = (sample_sd(y1).max(b.sigma_lo * 10.0), sample_sd(y2).max(b.sigma_lo * 10.0));
    let mut p = BestParams {
        mu1: jitter(&mut rng, mean(y1), 0.5 * s1 / (y1.len() as f64).sqrt()),
        mu2: jitter(&mut rng, mean(y2), 0.5 * s2 / (y2.len() as f64).sqrt()),
        sigma1: s1 * (0.3 * rng.normal()).exp(),
        sigma2: s2 * (0.3 * rng.normal()).exp(),
        nu: 1.0 + (29.0f64.ln() + 0.5 * rng.normal()).exp(),
    };
    if let Some(f) = cfg.fixed {
        p.sigma1 = f.sigma1;
        p.sigma2 = f.sigma2;
        p.nu = f.nu;
    }
    // Random-walk step sizes; σ moves on the log scale and ν on η = ln(ν−1).
    let mut step = [
        s1 / (y1.len() as f64).sqrt(),
        s2 / (y2.len() as f64).sqrt(),
        0.5,
        0.5,
        0.8,
    ];
    let sampled: &[usize] = if cfg.fixed.is_some() { &[0, 1] } else { &[0, 1, 2, 3, 4] };
    let lik1 = |p: &BestParams| group_ln_lik(y1, p.nu, p.mu1, p.sigma1);
    let lik2 = |p: &BestParams| group_ln_lik(y2, p.nu, p.mu2, p.sigma2);
    let mut l1 = lik1(&p);
    let mut l2 = lik2(&p);
    let mut lp = ln_prior(&p, b);
    let mut draws = Vec::with_capacity(cfg.draws);
    let mut accepted = [0usize; 5];
    let mut window = [0usize; 5];
    const WINDOW: usize = 50;
    for it in 0..cfg.warmup + cfg.draws {
        for &k in sampled {
            let mut q = p;
            // Log Jacobian of the log-scale proposals.
            let mut ln_jac = 0.0;
            match k {
                0 => q.mu1 += step[0] * rng.normal(),
                1 => q.mu2 += step[1] * rng.normal(),
                2 => {
                    q.sigma1 = p.sigma1 * (step[2] * rng.normal()).exp();
                    ln_jac = (q.sigma1 / p.sigma1).ln();
                }
                3 => {
                    q.sigma2 = p.sigma2 * (step[3] * rng.normal()).exp();
                    ln_jac = (q.sigma2 / p.sigma2).ln();
                }
                _ => {
                    let eta = (p.nu - 1.0).ln() + step[4] * rng.normal();
                    q.nu = 1.0 + eta.exp();
                    ln_jac = (q.nu - 1.0).ln() - (p.nu - 1.0).ln();
                }
            }
            let lq = ln_prior(&q, b);
            if lq == f64::NEG_INFINITY {
                continue;
            }
            let (q1, q2) = match k {
                0 | 2 => (lik1(&q), l2),
                1 | 3 => (l1, lik2(&q)),
                _ => (lik1(&q), lik2(&q)),
            };
            let ratio = (lq + q1 + q2) - (lp + l1 + l2) + ln_jac;
            if ratio >= 0.0 || rng.uniform().ln() < ratio {
                p = q;
                l1 = q1;
                l2 = q2;
                lp = lq;
                if it >= cfg.warmup {
                    accepted[k] += 1;
                } else {
                    window[k] += 1;
                }
            }
        }
        if it < cfg.warmup && (it + 1) % WINDOW == 0 {
            for &k in sampled {
                let rate = window[k] as f64 / WINDOW as f64;
                if rate < 0.2 {
                    step[k] *= 0.6;
                } else if rate > 0.5 {
                    step[k] *= 1.6;
                }
                window[k] = 0;
            }
        }
        if it >= cfg.warmup {
            draws.push(p);
        }
    }
    ChainOutput { draws, accepted }
}

/// Samples the posterior of the two-group model. Chains run in parallel
/// with seeds derived from `cfg.seed`; draws are merged by chain index, so
/// the result is deterministic per seed.
pub fn sample_posterior(y1: &[f64], y2: &[f64], cfg: &BestConfig) -> Result<PosteriorSummary> {
    cfg.validate()?;
    let b = prior_bounds(y1, y2, &cfg.priors)?;
    let chains: Vec<ChainOutput> = (0..cfg.chains).into_par_iter().map(|c| run_chain(y1, y2, &b, cfg, c)).collect();

    let per_chain = |f: fn(&BestParams) -> f64| -> Vec<Vec<f64>> {
        chains.iter().map(|c| c.draws.iter().map(f).collect()).collect()
    };
    let quantities: [(&str, fn(&BestParams) -> f64); 6] = [
        ("mu1", |p| p.mu1),
        ("mu2", |p| p.mu2),
        ("sigma1", |p| p.sigma1),
        ("sigma2", |p| p.sigma2),
        ("nu", |p| p.nu),
        ("diff", |p| p.mu1 - p.mu2),
    ];
    let mut diagnostics = BTreeMap::new();
    for (name, f) in quantities {
        let fixed_scale = cfg.fixed.is_some() && matches!(name, "sigma1" | "sigma2" | "nu");
        if fixed_scale {
            continue;
        }
        let c = per_chain(f);
        diagnostics.insert(name.to_string(), Diagnostic { rhat: split_rhat(&c), ess: effective_sample_size(&c) });
    }
    let all: Vec<&BestParams> = chains.iter().flat_map(|c| &c.draws).collect();
    let diff: Vec<f64> = all.iter().map(|p| p.mu1 - p.mu2).collect();
    let effect_size = all
        .iter()
        .map(|p| (p.mu1 - p.mu2) / ((p.sigma1.powi(2) + p.sigma2.powi(2)) / 2.0).sqrt())
        .collect();
    let total = (cfg.chains * cfg.draws) as f64;
    let mut acceptance = [0.0; 5];
    for (k, a) in acceptance.iter_mut().enumerate() {
        *a = chains.iter().map(|c| c.accepted[k]).sum::<usize>() as f64 / total;
    }
    let rhat_max = diagnostics.values().map(|d| d.rhat).fold(f64::NEG_INFINITY, f64::max);
    let ess_min = diagnostics.values().map(|d| d.ess).fold(f64::INFINITY, f64::min);
    let converged = rhat_max <= cfg.rhat_threshold;
    if !converged {
        log::warn!("BEST posterior not converged: max split-R̂ {rhat_max:.4} > {}", cfg.rhat_threshold);
    }
    Ok(PosteriorSummary {
        mean_diff: mean(&diff),
        hdi: hdi(&diff, cfg.hdi_mass)?,
        hdi_mass: cfg.hdi_mass,
        p_direction: diff.iter().filter(|&&d| d > 0.0).count() as f64 / diff.len() as f64,
        sigma1: all.iter().map(|p| p.sigma1).collect(),
        sigma2: all.iter().map(|p| p.sigma2).collect(),
        nu: all.iter().map(|p| p.nu).collect(),
        diff,
        effect_size,
        acceptance,
        diagnostics,
        rhat_max,
        ess_min,
        converged,
    })
}

/// How per-cell metrics are turned into group samples.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    /// Every fold of every repetition is one value (5 folds × 3 reps = 15).
    #[default]
    Pooled,
    /// Each fold averaged over repetitions (5 values).
    FoldAveraged,
}

impl Pooling {
    pub fn as_str(self) -> &'static str {
        match self {
            Pooling::Pooled => "pooled",
            Pooling::FoldAveraged => "fold-averaged",
        }
    }

    pub fn parse(s: &str) -> Option<Pooling> {
        match s {
            "pooled" => Some(Pooling::Pooled),
            "fold-averaged" => Some(Pooling::FoldAveraged),
            _ => None,
        }
    }
}

/// Group sample of `variant` for `metric`, ordered by (rep, fold), together
/// with its set of cells.
fn variant_values(records: &[RunRecord], variant: &str, metric: &str) -> Result<BTreeMap<(usize, usize), f64>> {
    let mut out = BTreeMap::new();
    for r in records.iter().filter(|r| r.variant == variant && r.is_completed()) {
        if let Some(v) = r.metric(metric)? {
            out.insert((r.rep, r.fold), v);
        }
    }
    Ok(out)
}

fn pool(values: &BTreeMap<(usize, usize), f64>, pooling: Pooling) -> Vec<f64> {
    match pooling {
        Pooling::Pooled => values.values().copied().collect(),
        Pooling::FoldAveraged => {
            let mut per_fold: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
            for (&(_, fold), &v) in values {
                per_fold.entry(fold).or_default().push(v);
            }
            per_fold.values().map(|v| mean(v)).collect()
        }
    }
}

/// Result of comparing two variants.
#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    pub metric: String,
    pub pooling: Pooling,
    /// Sample size per group.
    pub n: usize,
    pub summary: PosteriorSummary,
}

impl Comparison {
    pub fn verdict(&self) -> Verdict {
        Verdict {
            a: self.a.clone(),
            b: self.b.clone(),
            delta_pp: 100.0 * self.summary.mean_diff,
            p_direction: self.summary.p_direction,
        }
    }
}

/// The one-line claim: `<A> vs <B>: Δ = <mean> pp, P(Δ>0) = <prob>`.
#[derive(Clone, Debug, PartialEq)]
pub struct Verdict {
    pub a: String,
    pub b: String,
    /// Posterior mean difference in percentage points.
    pub delta_pp: f64,
    pub p_direction: f64,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} vs {}: Δ = {:.2} pp, P(Δ>0) = {:.3}", self.a, self.b, self.delta_pp, self.p_direction)
    }
}

impl Verdict {
    pub fn parse(line: &str) -> Result<Verdict> {
        let err = |m: &str| Error::Parse { what: "verdict".into(), line: 1, message: format!("{m}: `{line}`") };
        let (pair, rest) = line.trim().split_once(": Δ = ").ok_or_else(|| err("missing `: Δ = `"))?;
        let (a, b) = pair.split_once(" vs ").ok_or_else(|| err("missing ` vs `"))?;
        let (delta, p) = rest.split_once(" pp, P(Δ>0) = ").ok_or_else(|| err("missing `pp, P(Δ>0) =`"))?;
        Ok(Verdict {
            a: a.to_string(),
            b: b.to_string(),
            delta_pp: delta.parse().map_err(|_| err("bad Δ"))?,
            p_direction: p.parse().map_err(|_| err("bad probability"))?,
        })
    }
}

/// Names of all variants present in `records`, sorted.
pub fn variant_names(records: &[RunRecord]) -> Vec<String> {
    records.iter().map(|r| r.variant.clone()).collect::<BTreeSet<_>>().into_iter().collect()
}

/// BEST comparison of variant `a` against `b` on `metric`. Both variants
/// must have the same, complete set of (repetition, fold) cells.
pub fn compare_variants(
    records: &[RunRecord],
    a: &str,
    b: &str,
    metric: &str,
    pooling: Pooling,
    cfg: &BestConfig,
) -> Result<Comparison> {
    let names = variant_names(records);
    for v in [a, b] {
        if !names.iter().any(|n| n == v) {
            return Err(Error::Contract(format!(
                "unknown variant `{v}`; available: {}",
                names.join(", ")
            )));
        }
    }
    let va = variant_values(records, a, metric)?;
    let vb = variant_values(records, b, metric)?;
    let all_cells: BTreeSet<(usize, usize)> = records.iter().map(|r| (r.rep, r.fold)).collect();
    let mut missing = Vec::new();
    for (name, vals) in [(a, &va), (b, &vb)] {
        for cell in &all_cells {
            if !vals.contains_key(cell) {
                missing.push(format!("{name} rep {} fold {}", cell.0, cell.1));
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::Data(format!("incomplete {metric} vectors; missing cells: {}", missing.join(", "))));
    }
    let (ya, yb) = (pool(&va, pooling), pool(&vb, pooling));
    let summary = sample_posterior(&ya, &yb, cfg)?;
    Ok(Comparison { a: a.into(), b: b.into(), metric: metric.into(), pooling, n: ya.len(), summary })
}

pub const REPORT_COLUMNS: [&str; 10] =
    ["pair", "delta_mean", "hdi_low", "hdi_high", "p_direction", "rhat_max", "ess_min", "converged", "pooling", "n"];

/// Tab-separated comparison report, one row per comparison.
pub fn report_tsv(comparisons: &[Comparison]) -> String {
    let mut s = REPORT_COLUMNS.join("\t");
    s.push('\n');
    for c in comparisons {
        let m = &c.summary;
        let _ = writeln!(
            s,
            "{} vs {}\t{:.6}\t{:.6}\t{:.6}\t{:.4}\t{:.4}\t{:.0}\t{}\t{}\t{}",
            c.a, c.b, m.mean_diff, m.hdi.0, m.hdi.1, m.p_direction, m.rhat_max, m.ess_min, m.converged, c.pooling.as_str(), c.n
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> BestConfig {
        BestConfig { draws: 1500, warmup: 800, ..BestConfig::default() }
    }

    #[test]
    fn hdi_examples() {
        let d: Vec<f64> = (0..100).map(f64::from).collect();
        assert_eq!(hdi(&d, 0.95).unwrap(), (0.0, 94.0));
        let skew = [0.0, 0.1, 0.2, 0.3, 10.0];
        assert_eq!(hdi(&skew, 0.8).unwrap(), (0.0, 0.3));
    }

    #[test]
    fn support_boundary_flips_to_neg_infinity() {
        let y1 = [0.1, 0.3, 0.2];
        let y2 = [0.4, 0.2, 0.5];
        let pri = BestPriors::default();
        let b = prior_bounds(&y1, &y2, &pri).unwrap();
        let mut p = BestParams { mu1: 0.2, mu2: 0.3, sigma1: b.sigma_lo * (1.0 + 1e-9), sigma2: 0.1, nu: 5.0 };
        assert!(log_posterior(&p, &y1, &y2, &pri).unwrap().is_finite());
        p.sigma1 = b.sigma_lo * (1.0 - 1e-9);
        assert_eq!(log_posterior(&p, &y1, &y2, &pri).unwrap(), f64::NEG_INFINITY);
        p.sigma1 = 0.1;
        p.nu = 1.0;
        assert_eq!(log_posterior(&p, &y1, &y2, &pri).unwrap(), f64::NEG_INFINITY);
        assert!(log_posterior(&p, &[], &y2, &pri).is_err());
    }

    #[test]
    fn verdict_round_trips() {
        let v = Verdict { a: "barlow".into(), b: "supervised".into(), delta_pp: 2.2, p_direction: 0.98 };
        let line = v.to_string();
        assert_eq!(line, "barlow vs supervised: Δ = 2.20 pp, P(Δ>0) = 0.980");
        assert_eq!(Verdict::parse(&line).unwrap(), v);
        assert!(Verdict::parse("nonsense").is_err());
    }

    #[test]
    fn rhat_detects_disagreeing_chains() {
        let a: Vec<f64> = (0..200).map(|i| (i as f64 * 0.7).sin()).collect();
        let b: Vec<f64> = a.iter().map(|v| v + 5.0).collect();
        assert!(split_rhat(&[a.clone(), a.clone()]) < 1.05);
        assert!(split_rhat(&[a, b]) > 1.5);
    }

    #[test]
    fn ess_of_independent_draws_is_near_total() {
        let mut rng = Rng::new(3);
        let chains: Vec<Vec<f64>> = (0..4).map(|_| (0..1000).map(|_| rng.normal()).collect()).collect();
        let ess = effective_sample_size(&chains);
        assert!(ess > 3000.0 && ess < 5000.0, "ess {ess}");
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let y1 = [0.70, 0.72, 0.69, 0.71, 0.73];
        let y2 = [0.68, 0.70, 0.69, 0.67, 0.71];
        let a = sample_posterior(&y1, &y2, &quick()).unwrap();
        let b = sample_posterior(&y1, &y2, &quick()).unwrap();
        assert_eq!(a.diff, b.diff);
        assert!(a.mean_diff > 0.0 && a.p_direction > 0.8, "{} {} {:?} {:?}", a.mean_diff, a.p_direction, a.acceptance, a.diagnostics);
        assert!(a.acceptance[..5].iter().all(|&r| r > 0.1 && r < 0.7), "{:?}", a.acceptance);
    }
}
