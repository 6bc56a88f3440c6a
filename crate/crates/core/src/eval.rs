//! Confusion matrices, balanced/plain accuracy, per-image audit and grouped
//! reports.
//!
//! Balanced accuracy is the mean recall over classes with non-zero support;
//! classes absent from the evaluated set are excluded (not counted as 0)
//! and listed in the result.

use std::collections::BTreeMap;

use crate::augment::{make_views, AugmentPolicy, Image};
use crate::data::LabeledSet;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::{Rng, Tensor};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    /// `counts[true][predicted]`.
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: &[String]) -> Self {
        let n = classes.len();
        ConfusionMatrix { classes: classes.to_vec(), counts: vec![vec![0; n]; n] }
    }

    pub fn from_pairs(classes: &[String], pairs: &[(usize, usize)]) -> Result<Self> {
        let mut cm = ConfusionMatrix::new(classes);
        for &(t, p) in pairs {
            cm.add(t, p)?;
        }
        Ok(cm)
    }

    pub fn add(&mut self, truth: usize, predicted: usize) -> Result<()> {
        let n = self.classes.len();
        if truth >= n || predicted >= n {
            return Err(Error::Contract(format!("label pair ({truth}, {predicted}) outside {n} classes")));
        }
        self.counts[truth][predicted] += 1;
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    /// Per-class recall; `None` for zero-support classes.
    pub fn recalls(&self) -> Vec<Option<f64>> {
        (0..self.classes.len())
            .map(|c| {
                let s = self.support(c);
                (s > 0).then(|| self.counts[c][c] as f64 / s as f64)
            })
            .collect()
    }

    /// Rows divided by their support; `None` for zero-support rows.
    pub fn row_normalized(&self) -> Vec<Option<Vec<f64>>> {
        self.counts
            .iter()
            .map(|row| {
                let s: u64 = row.iter().sum();
                (s > 0).then(|| row.iter().map(|&v| v as f64 / s as f64).collect())
            })
            .collect()
    }

    /// Counts table: header of predicted classes, one row per true class.
    pub fn counts_tsv(&self) -> String {
        let mut s = format!("true\\predicted\t{}\n", self.classes.join("\t"));
        for (c, row) in self.counts.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(u64::to_string).collect();
            s.push_str(&format!("{}\t{}\n", self.classes[c], cells.join("\t")));
        }
        s
    }

    /// Parses a table written by [`ConfusionMatrix::counts_tsv`].
    pub fn parse_counts_tsv(text: &str) -> Result<Self> {
        let perr = |line: usize, message: String| Error::Parse { what: "confusion table", line, message };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| perr(1, "empty table".into()))?;
        let mut cols = header.split('\t');
        if cols.next() != Some("true\\predicted") {
            return Err(perr(1, format!("header `{header}` does not start with `true\\predicted`")));
        }
        let classes: Vec<String> = cols.map(str::to_string).collect();
        let mut cm = ConfusionMatrix::new(&classes);
        let mut seen = 0;
        for (i, line) in lines.enumerate() {
            let n = i + 2;
            let cells: Vec<&str> = line.split('\t').collect();
            if seen >= classes.len() || cells.len() != classes.len() + 1 || cells[0] != classes[seen] {
                return Err(perr(n, format!("expected a row for class `{}`", classes.get(seen).map_or("<none>", String::as_str))));
            }
            for (j, c) in cells[1..].iter().enumerate() {
                cm.counts[seen][j] = c.parse().map_err(|e| perr(n, format!("count `{c}`: {e}")))?;
            }
            seen += 1;
        }
        if seen != classes.len() {
            return Err(perr(seen + 2, format!("{} class rows for {} classes", seen, classes.len())));
        }
        Ok(cm)
    }

    /// Adds another matrix over the same classes.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::Data(format!(
                "confusion matrices over different classes: {:?} vs {:?}",
                self.classes, other.classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        Ok(())
    }

    /// Row-normalized percentages (rows sum to 100); zero-support rows are
    /// emitted as `-`.
    pub fn percent_tsv(&self) -> String {
        let mut s = format!("true\\predicted\t{}\n", self.classes.join("\t"));
        for (c, row) in self.row_normalized().iter().enumerate() {
            let cells: Vec<String> = match row {
                Some(r) => r.iter().map(|v| format!("{:.4}", 100.0 * v)).collect(),
                None => vec!["-".to_string(); self.classes.len()],
            };
            s.push_str(&format!("{}\t{}\n", self.classes[c], cells.join("\t")));
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BalancedAccuracy {
    pub value: f64,
    /// Classes without support, excluded from the average.
    pub excluded: Vec<String>,
}

pub fn balanced_accuracy(cm: &ConfusionMatrix) -> Result<BalancedAccuracy> {
    let recalls = cm.recalls();
    let present: Vec<f64> = recalls.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::Contract("balanced accuracy of an empty confusion matrix".into()));
    }
    let excluded = recalls
        .iter()
        .zip(&cm.classes)
        .filter(|(r, _)| r.is_none())
        .map(|(_, c)| c.clone())
        .collect();
    Ok(BalancedAccuracy { value: present.iter().sum::<f64>() / present.len() as f64, excluded })
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Contract("accuracy of an empty confusion matrix".into()));
    }
    let correct: u64 = (0..cm.classes.len()).map(|c| cm.counts[c][c]).sum();
    Ok(correct as f64 / total as f64)
}

/// One audited prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub uri: String,
    pub truth: usize,
    pub predicted: usize,
    /// Softmax probability of the predicted class.
    pub confidence: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub confusion: ConfusionMatrix,
    pub balanced: BalancedAccuracy,
    pub accuracy: f64,
    pub recalls: Vec<Option<f64>>,
    pub predictions: Vec<Prediction>,
}

impl EvalReport {
    pub fn from_predictions(classes: &[String], predictions: Vec<Prediction>) -> Result<EvalReport> {
        let pairs: Vec<(usize, usize)> = predictions.iter().map(|p| (p.truth, p.predicted)).collect();
        let confusion = ConfusionMatrix::from_pairs(classes, &pairs)?;
        Ok(EvalReport {
            balanced: balanced_accuracy(&confusion)?,
            accuracy: accuracy(&confusion)?,
            recalls: confusion.recalls(),
            confusion,
            predictions,
        })
    }

    /// Metric summary: one `key<TAB>value` line per metric, then per-class recall.
    pub fn summary_tsv(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("balanced_accuracy\t{}\n", self.balanced.value));
        s.push_str(&format!("accuracy\t{}\n", self.accuracy));
        s.push_str(&format!("samples\t{}\n", self.confusion.total()));
        s.push_str(&format!("excluded_classes\t{}\n", self.balanced.excluded.join(",")));
        for (c, r) in self.confusion.classes.iter().zip(&self.recalls) {
            match r {
                Some(v) => s.push_str(&format!("recall[{c}]\t{v}\n")),
                None => s.push_str(&format!("recall[{c}]\t-\n")),
            }
        }
        s
    }

    /// Per-image audit: uri, true class, predicted class, confidence, correct.
    pub fn audit_tsv(&self) -> String {
        let classes = &self.confusion.classes;
        let mut s = String::from("uri\ttrue\tpredicted\tconfidence\tcorrect\n");
        for p in &self.predictions {
            s.push_str(&format!(
                "{}\t{}\t{}\t{:.6}\t{}\n",
                p.uri,
                classes[p.truth],
                classes[p.predicted],
                p.confidence,
                u8::from(p.truth == p.predicted)
            ));
        }
        s
    }
}

/// Deterministic evaluation input: full-frame resize plus the policy's
/// normalization.
pub fn eval_view(img: &Image, policy: &AugmentPolicy) -> Result<Image> {
    let eval = policy.evaluation();
    Ok(make_views(img, &eval, &mut Rng::new(0), 1)?.remove(0))
}

/// Class probabilities for every image, computed in batches.
pub fn predict_proba(model: &Model, images: &[&Image], policy: &AugmentPolicy, batch_size: usize) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(images.len());
    let bound = model.params.bind(false);
    for chunk in images.chunks(batch_size.max(1)) {
        let views = chunk.iter().map(|im| eval_view(im, policy)).collect::<Result<Vec<_>>>()?;
        let x = Image::stack(&views)?;
        let logits = model.forward_logits(&bound, &x, false)?.output;
        let n = logits.shape()[1];
        let probs = softmax_rows(&logits);
        out.extend(probs.chunks(n).map(<[f64]>::to_vec));
    }
    Ok(out)
}

fn softmax_rows(logits: &Tensor) -> Vec<f64> {
    let n = logits.shape()[1];
    let mut out = logits.to_vec();
    for row in out.chunks_mut(n) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = row.iter().map(|v| (v - m).exp()).sum();
        row.iter_mut().for_each(|v| *v = (*v - m).exp() / s);
    }
    out
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Runs `model` over a labeled set. The set's class list must match the
/// model head (build it with the model's classes).
pub fn evaluate(model: &Model, set: &LabeledSet, policy: &AugmentPolicy, batch_size: usize) -> Result<EvalReport> {
    if set.is_empty() {
        return Err(Error::Contract("evaluation split is empty".into()));
    }
    if set.classes != model.classes {
        let missing: Vec<&String> = set.classes.iter().filter(|c| !model.classes.contains(c)).collect();
        return Err(Error::Data(format!(
            "evaluation classes do not match the model head; absent from the head: {missing:?}; head: {:?}",
            model.classes
        )));
    }
    let truths: Vec<usize> = set
        .labels
        .iter()
        .zip(&set.uris)
        .map(|(l, u)| l.ok_or_else(|| Error::Data(format!("row `{u}` has no class label"))))
        .collect::<Result<_>>()?;
    let probs = predict_proba(model, &set.images, policy, batch_size)?;
    let predictions = probs
        .iter()
        .zip(truths)
        .zip(&set.uris)
        .map(|((p, truth), uri)| {
            let predicted = argmax(p);
            Prediction { uri: uri.clone(), truth, predicted, confidence: p[predicted] }
        })
        .collect();
    EvalReport::from_predictions(&model.classes, predictions)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupReport {
    pub group: String,
    pub samples: usize,
    pub balanced: BalancedAccuracy,
    pub accuracy: f64,
    /// Ground-truth class histogram of the group.
    pub histogram: Vec<u64>,
}

/// Per-group metrics. `tags` holds one group tag per prediction; every tag
/// must be one of `groups`. Groups are reported in `groups` order.
pub fn grouped_report(classes: &[String], predictions: &[Prediction], tags: &[String], groups: &[String]) -> Result<Vec<GroupReport>> {
    if tags.len() != predictions.len() {
        return Err(Error::Contract(format!("{} group tags for {} predictions", tags.len(), predictions.len())));
    }
    let mut by_group: BTreeMap<&str, Vec<(usize, usize)>> = BTreeMap::new();
    for (p, t) in predictions.iter().zip(tags) {
        if !groups.contains(t) {
            return Err(Error::Data(format!("unknown group tag `{t}` (known: {})", groups.join(", "))));
        }
        by_group.entry(t.as_str()).or_default().push((p.truth, p.predicted));
    }
    let mut out = Vec::new();
    for g in groups {
        let Some(pairs) = by_group.get(g.as_str()) else { continue };
        let cm = ConfusionMatrix::from_pairs(classes, pairs)?;
        out.push(GroupReport {
            group: g.clone(),
            samples: pairs.len(),
            balanced: balanced_accuracy(&cm)?,
            accuracy: accuracy(&cm)?,
            histogram: (0..classes.len()).map(|c| cm.support(c)).collect(),
        });
    }
    Ok(out)
}

/// Grouped report table: group, samples, balanced accuracy, accuracy, and
/// one histogram column per class.
pub fn grouped_tsv(classes: &[String], reports: &[GroupReport]) -> String {
    let mut s = format!("group\tsamples\tbalanced_accuracy\taccuracy\t{}\n", classes.join("\t"));
    for r in reports {
        let h: Vec<String> = r.histogram.iter().map(u64::to_string).collect();
        s.push_str(&format!("{}\t{}\t{}\t{}\t{}\n", r.group, r.samples, r.balanced.value, r.accuracy, h.join("\t")));
    }
    s
}
