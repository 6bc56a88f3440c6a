//! Stratified test carving and k-fold × repetition partitions.

use std::collections::BTreeMap;

use super::manifest::{SampleManifest, Split};
use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Largest-remainder apportionment: integer quotas proportional to
/// `weights`, summing exactly to `round(total)` where
/// `total = Σ weights × fraction`. Ties go to the earlier entry.
pub fn largest_remainder(counts: &[usize], fraction: f64) -> Vec<usize> {
    let exact: Vec<f64> = counts.iter().map(|&c| c as f64 * fraction).collect();
    let target = exact.iter().sum::<f64>().round() as usize;
    let mut quotas: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).expect("finite remainders").then(a.cmp(&b))
    });
    let assigned: usize = quotas.iter().sum();
    for &i in order.iter().take(target.saturating_sub(assigned)) {
        quotas[i] += 1;
    }
    quotas
}

/// Mapped `Train` rows grouped by class, in row order.
fn train_pool(m: &SampleManifest) -> BTreeMap<String, Vec<usize>> {
    let mut pool: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, r) in m.rows.iter().enumerate() {
        if let (Some(c), Split::Train) = (&r.mapped_class, r.split) {
            pool.entry(c.clone()).or_default().push(i);
        }
    }
    pool
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitReport {
    /// Per class: (pool size, rows moved to test).
    pub per_class: BTreeMap<String, (usize, usize)>,
}

/// Moves a stratified `fraction` of each class's training rows to the test
/// split. Per-class quotas use largest-remainder rounding, so the total is
/// exactly `round(pool × fraction)` and each class is within one of its
/// exact share.
pub fn stratified_split(m: &SampleManifest, fraction: f64, rng: &mut Rng) -> Result<(SampleManifest, SplitReport)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Contract(format!("split fraction {fraction} must lie in (0, 1)")));
    }
    let pool = train_pool(m);
    if pool.is_empty() {
        return Err(Error::Data(format!("`{}` has no mapped training rows to split", m.dataset)));
    }
    let min = (1.0 / fraction).ceil() as usize;
    for (class, rows) in &pool {
        if rows.len() < min {
            return Err(Error::Data(format!(
                "class `{class}` has {} training rows; a {fraction} split needs at least {min}",
                rows.len()
            )));
        }
    }
    let sizes: Vec<usize> = pool.values().map(Vec::len).collect();
    let quotas = largest_remainder(&sizes, fraction);
    let mut out = m.clone();
    let mut per_class = BTreeMap::new();
    for ((class, rows), quota) in pool.iter().zip(quotas) {
        let mut shuffled = rows.clone();
        rng.shuffle(&mut shuffled);
        for &i in &shuffled[..quota] {
            out.rows[i].split = Split::Test;
        }
        per_class.insert(class.clone(), (rows.len(), quota));
    }
    Ok((out, SplitReport { per_class }))
}

/// k stratified folds over the training pool, repeated with reshuffled
/// membership.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Folds {
    pub k: usize,
    pub repetitions: usize,
    /// Manifest indices of the pooled rows.
    pub rows: Vec<usize>,
    /// `assignment[rep][j]` is the fold of `rows[j]` in repetition `rep`.
    pub assignment: Vec<Vec<usize>>,
}

impl Folds {
    /// (training rows, held-out rows) for one cell, as manifest indices.
    pub fn cell(&self, rep: usize, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::new();
        let mut held = Vec::new();
        for (j, &row) in self.rows.iter().enumerate() {
            if self.assignment[rep][j] == fold {
                held.push(row);
            } else {
                train.push(row);
            }
        }
        (train, held)
    }
}

/// Stratified k-fold assignment, `repetitions` times. Within a class the rows
/// are shuffled (repetition `r` uses `rng.fork(r)`) and dealt round-robin; the
/// dealing offset carries over from class to class so fold totals stay
/// balanced too. The per-fold class histogram is therefore identical across
/// repetitions while membership differs.
pub fn make_folds(m: &SampleManifest, k: usize, repetitions: usize, rng: &Rng) -> Result<Folds> {
    if k < 2 {
        return Err(Error::Contract(format!("k = {k}; cross-validation needs k >= 2")));
    }
    if repetitions == 0 {
        return Err(Error::Contract("repetitions must be >= 1".into()));
    }
    let pool = train_pool(m);
    if pool.is_empty() {
        return Err(Error::Data(format!("`{}` has no mapped training rows to fold", m.dataset)));
    }
    for (class, rows) in &pool {
        if rows.len() < k {
            return Err(Error::Data(format!("class `{class}` has {} rows, fewer than k = {k}", rows.len())));
        }
    }
    let rows: Vec<usize> = pool.values().flatten().copied().collect();
    let position: BTreeMap<usize, usize> = rows.iter().enumerate().map(|(j, &r)| (r, j)).collect();
    let mut assignment = Vec::with_capacity(repetitions);
    for rep in 0..repetitions {
        let mut r = rng.fork(rep as u64);
        let mut fold_of = vec![0usize; rows.len()];
        let mut offset = 0usize;
        for members in pool.values() {
            let mut shuffled = members.clone();
            r.shuffle(&mut shuffled);
            for (i, row) in shuffled.iter().enumerate() {
                fold_of[position[row]] = (offset + i) % k;
            }
            offset = (offset + members.len()) % k;
        }
        assignment.push(fold_of);
    }
    Ok(Folds { k, repetitions, rows, assignment })
}
