//! The experiment grid: variants × repetitions × folds, run resumably.
//!
//! A variant is a stage plan: optional object-centric pretext, optional
//! scene-centric pretext (real or real + synthetic images), then
//! fine-tuning on the labeled scenes. Every cell trains on the fold's
//! training rows, stops early on the manifest's validation split and is
//! scored on the held-out fold.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize};

use super::record::{format_run_table, parse_run_table, RunRecord, RunStatus};
use super::rundir::{write_atomic, RunDirectory};
use super::stage::{run_stage, EpochMetrics, StageConfig, StageSpec};
use crate::data::{compose_pretext, make_folds, Folds, ImageStore, LabeledSet, PretextMode, SampleManifest, Split};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::fingerprint::{full_hash, hash_parts};
use crate::losses::LossKind;
use crate::model::{load_checkpoint, save_checkpoint, Checkpoint, Model, ModelConfig, StageTag};
use crate::numerics::Rng;

const FOLD_TAG: u64 = 0xf01d;
const CELL_TAG: u64 = 0xce11;
const OBJECT_TAG: u64 = 0x0b1e;
const INIT_TAG: u64 = 0x1417;

/// Scene-centric pretext pool of a variant.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenePretext {
    #[default]
    None,
    Real,
    All,
}

impl ScenePretext {
    pub fn as_str(self) -> &'static str {
        match self {
            ScenePretext::None => "none",
            ScenePretext::Real => "real",
            ScenePretext::All => "all",
        }
    }

    fn mode(self) -> Option<PretextMode> {
        match self {
            ScenePretext::None => None,
            ScenePretext::Real => Some(PretextMode::Real),
            ScenePretext::All => Some(PretextMode::All),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantConfig {
    pub name: String,
    /// SSL objective of the pretext stages; absent for the supervised
    /// baseline, which fine-tunes from a fresh initialization.
    #[serde(default)]
    pub pretext_loss: Option<LossKind>,
    #[serde(default)]
    pub object_pretext: bool,
    #[serde(default)]
    pub scene_pretext: ScenePretext,
    /// Checkpoint to start from instead of running its stages; its lineage
    /// must be a prefix of this variant's plan.
    #[serde(default)]
    pub init_checkpoint: Option<PathBuf>,
}

impl VariantConfig {
    /// Stages of the plan, in order.
    pub fn plan(&self) -> Vec<StageTag> {
        let mut plan = Vec::new();
        if self.object_pretext {
            plan.push(StageTag::PretextObject);
        }
        if self.scene_pretext != ScenePretext::None {
            plan.push(StageTag::PretextScene);
        }
        plan.push(StageTag::Downstream);
        plan
    }
}

/// Cross-product expansion: every loss × object on/off × scene pool, plus
/// an optional supervised baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AxesConfig {
    pub losses: Vec<LossKind>,
    pub object_pretext: Vec<bool>,
    pub scene_pretext: Vec<ScenePretext>,
    pub supervised: bool,
}

impl Default for AxesConfig {
    fn default() -> Self {
        AxesConfig {
            losses: Vec::new(),
            object_pretext: vec![false],
            scene_pretext: vec![ScenePretext::Real],
            supervised: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Labeled scene manifest (train/val/test splits), relative to the config file.
    pub labeled: PathBuf,
    /// Extra scene manifests for the pretext pool.
    #[serde(default)]
    pub scene_pretext: Vec<PathBuf>,
    /// Object-centric manifest for the object pretext stage.
    #[serde(default)]
    pub object_pretext: Option<PathBuf>,
    /// Resize every image to (height, width) on load.
    #[serde(default)]
    pub load_size: Option<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CvConfig {
    pub folds: usize,
    pub repetitions: usize,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig { folds: 5, repetitions: 3 }
    }
}

fn default_name() -> String {
    "grid".into()
}

fn default_eval_batch() -> usize {
    128
}

/// Deserializes a table on top of `default`, so a partial table only
/// overrides the keys it names.
fn merged<'de, D: Deserializer<'de>, T: Serialize + DeserializeOwned>(d: D, default: T) -> std::result::Result<T, D::Error> {
    let over = toml::Table::deserialize(d)?;
    let mut base = toml::Table::try_from(default).map_err(serde::de::Error::custom)?;
    deep_merge(&mut base, over);
    T::deserialize(toml::Value::Table(base)).map_err(serde::de::Error::custom)
}

fn deep_merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => deep_merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn de_model<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<ModelConfig, D::Error> {
    merged(d, ModelConfig::default())
}

fn de_pretext<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<StageConfig, D::Error> {
    merged(d, StageConfig::default())
}

fn de_object<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<StageConfig>, D::Error> {
    merged(d, StageConfig::default()).map(Some)
}

fn de_downstream<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<StageConfig, D::Error> {
    merged(d, StageConfig::downstream())
}

/// Grid configuration, read from a TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub seed: u64,
    pub data: DataConfig,
    #[serde(default)]
    pub cv: CvConfig,
    #[serde(default, deserialize_with = "de_model")]
    pub model: ModelConfig,
    #[serde(default, deserialize_with = "de_pretext")]
    pub pretext: StageConfig,
    /// Object pretext stage settings; the scene pretext settings when absent.
    #[serde(default, deserialize_with = "de_object")]
    pub object_pretext: Option<StageConfig>,
    #[serde(default = "StageConfig::downstream", deserialize_with = "de_downstream")]
    pub downstream: StageConfig,
    #[serde(default = "default_eval_batch")]
    pub eval_batch_size: usize,
    #[serde(default, rename = "variant")]
    pub variants: Vec<VariantConfig>,
    #[serde(default)]
    pub axes: Option<AxesConfig>,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn valid_name(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || "_-+.".contains(c))
}

impl GridConfig {
    /// Parses and validates; schema errors carry the offending line.
    pub fn parse(text: &str) -> Result<GridConfig> {
        let cfg: GridConfig = toml::from_str(text).map_err(|e| Error::Config {
            line: e.span().map_or(0, |s| line_of(text, s.start)),
            message: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads `path`; relative data and checkpoint paths are resolved against
    /// the directory holding it.
    pub fn load(path: &Path) -> Result<(GridConfig, String)> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = GridConfig::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok((cfg, text))
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.data.labeled);
        self.data.scene_pretext.iter_mut().for_each(fix);
        if let Some(p) = &mut self.data.object_pretext {
            fix(p);
        }
        for v in &mut self.variants {
            if let Some(p) = &mut v.init_checkpoint {
                fix(p);
            }
        }
    }

    pub fn object_stage(&self) -> &StageConfig {
        self.object_pretext.as_ref().unwrap_or(&self.pretext)
    }

    /// Explicit variants followed by the axes expansion.
    pub fn all_variants(&self) -> Vec<VariantConfig> {
        let mut out = self.variants.clone();
        if let Some(ax) = &self.axes {
            if ax.supervised {
                out.push(VariantConfig {
                    name: "supervised".into(),
                    pretext_loss: None,
                    object_pretext: false,
                    scene_pretext: ScenePretext::None,
                    init_checkpoint: None,
                });
            }
            for loss in &ax.losses {
                for &obj in &ax.object_pretext {
                    for &scene in &ax.scene_pretext {
                        if !obj && scene == ScenePretext::None {
                            continue;
                        }
                        let mut name = loss.name().to_string();
                        if obj {
                            name.push_str("+object");
                        }
                        if scene != ScenePretext::None {
                            name.push_str(&format!("+{}", scene.as_str()));
                        }
                        out.push(VariantConfig {
                            name,
                            pretext_loss: Some(loss.clone()),
                            object_pretext: obj,
                            scene_pretext: scene,
                            init_checkpoint: None,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config { line: 0, message: m });
        self.model.validate()?;
        for (what, s) in [("pretext", &self.pretext), ("object_pretext", self.object_stage()), ("downstream", &self.downstream)] {
            s.validate().map_err(|e| Error::Config { line: 0, message: format!("[{what}]: {e}") })?;
            let (h, w, _) = self.model.encoder.input_size;
            if s.augment.output_size != (h, w) {
                return bad(format!(
                    "[{what}] augment.output_size {:?} differs from model.encoder.input_size ({h}, {w})",
                    s.augment.output_size
                ));
            }
        }
        if self.cv.folds < 2 || self.cv.repetitions < 1 {
            return bad(format!("cv needs folds >= 2 and repetitions >= 1, got {:?}", self.cv));
        }
        let variants = self.all_variants();
        if variants.is_empty() {
            return bad("no variants: add [[variant]] tables or an [axes] table".into());
        }
        let mut seen = HashSet::new();
        for v in &variants {
            if !valid_name(&v.name) {
                return bad(format!("variant name `{}` must be non-empty and use only [A-Za-z0-9_+.-]", v.name));
            }
            if !seen.insert(v.name.clone()) {
                return bad(format!("duplicate variant name `{}`", v.name));
            }
            match &v.pretext_loss {
                None if v.object_pretext || v.scene_pretext != ScenePretext::None => {
                    return bad(format!("variant `{}` has pretext stages but no pretext_loss", v.name));
                }
                Some(l) if !l.is_pretext() => {
                    return bad(format!("variant `{}`: `{}` is not a pretext loss", v.name, l.name()));
                }
                Some(_) if !v.object_pretext && v.scene_pretext == ScenePretext::None => {
                    return bad(format!("variant `{}` sets pretext_loss but enables no pretext stage", v.name));
                }
                _ => {}
            }
            if v.object_pretext && v.init_checkpoint.is_none() && self.data.object_pretext.is_none() {
                return bad(format!("variant `{}` needs data.object_pretext for its object stage", v.name));
            }
        }
        Ok(())
    }
}

/// Options that do not change results.
#[derive(Clone, Debug)]
pub struct GridOptions {
    pub run_dir: PathBuf,
    pub workers: usize,
    /// Reuse committed cells instead of refusing a non-empty run directory.
    pub resume: bool,
}

#[derive(Clone, Debug)]
pub struct GridOutcome {
    /// One record per cell, ordered by variant, repetition, fold.
    pub records: Vec<RunRecord>,
    /// Cells reused from an earlier run.
    pub reused: usize,
    pub config_fingerprint: String,
}

impl GridOutcome {
    pub fn failed(&self) -> Vec<&RunRecord> {
        self.records.iter().filter(|r| !r.is_completed()).collect()
    }
}

/// Maps `f` over `items` with `workers` threads; results keep item order.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, items.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().expect("result slots")[i] = Some(r);
            });
        }
    });
    slots.into_inner().expect("result slots").into_iter().map(|r| r.expect("every item ran")).collect()
}

/// Manifest with uris rewritten to paths resolved against its directory.
fn load_resolved(path: &Path) -> Result<SampleManifest> {
    let mut m = SampleManifest::load(path)?;
    let base = path.parent().unwrap_or(Path::new(""));
    for r in &mut m.rows {
        r.uri = SampleManifest::resolve(base, &r.uri).to_string_lossy().into_owned();
    }
    Ok(m)
}

/// `$m \pm s$` with two decimals; `s` is the sample standard deviation
/// (0 for a single value).
pub fn format_mean_std(values: &[f64]) -> String {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let s = if values.len() > 1 {
        (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    format!("${m:.2} \\pm {s:.2}$")
}

/// Per-variant summary: completed cells, failures, mean ± std of each metric.
pub fn summary_table(records: &[RunRecord]) -> String {
    let mut order: Vec<&str> = Vec::new();
    for r in records {
        if !order.contains(&r.variant.as_str()) {
            order.push(&r.variant);
        }
    }
    let mut s = String::from("variant\tcompleted\tfailed\tbalanced_acc\taccuracy\n");
    for v in order {
        let rows: Vec<&RunRecord> = records.iter().filter(|r| r.variant == v).collect();
        let ok: Vec<&&RunRecord> = rows.iter().filter(|r| r.is_completed()).collect();
        let col = |f: fn(&RunRecord) -> Option<f64>| {
            let vals: Vec<f64> = ok.iter().filter_map(|r| f(r)).collect();
            if vals.is_empty() { "-".to_string() } else { format_mean_std(&vals) }
        };
        s.push_str(&format!(
            "{v}\t{}\t{}\t{}\t{}\n",
            ok.len(),
            rows.len() - ok.len(),
            col(|r| r.balanced_acc),
            col(|r| r.accuracy)
        ));
    }
    s
}

struct Cell {
    variant: usize,
    rep: usize,
    fold: usize,
    fingerprint: String,
}

struct Context<'a> {
    cfg: &'a GridConfig,
    variants: Vec<VariantConfig>,
    dir: &'a RunDirectory,
    config_fp: String,
    labeled: SampleManifest,
    classes: Vec<String>,
    extra_scene: Vec<SampleManifest>,
    objects: Option<SampleManifest>,
    folds: Folds,
    store: ImageStore,
    /// Object-pretext checkpoints by loss name.
    object_ckpts: BTreeMap<String, PathBuf>,
}

fn cell_stem(v: &VariantConfig, rep: usize, fold: usize) -> String {
    format!("{}/r{rep}-f{fold}", v.name)
}

fn metrics_sink(path: &Path) -> Result<impl FnMut(&EpochMetrics) -> Result<()>> {
    if let Some(d) = path.parent() {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(f, "{}", EpochMetrics::TSV_HEADER).map_err(|e| Error::io(path, e))?;
    drop(f);
    let path = path.to_path_buf();
    Ok(move |m: &EpochMetrics| {
        let mut f = OpenOptions::new().append(true).open(&path).map_err(|e| Error::io(&path, e))?;
        writeln!(f, "{}", m.tsv_line()).map_err(|e| Error::io(&path, e))
    })
}

fn save_checkpoint_atomic(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    if let Some(d) = path.parent() {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let tmp = path.with_extension("ckpt.tmp");
    save_checkpoint(ckpt, &tmp)?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn lineage_string(l: &[StageTag]) -> String {
    l.iter().map(|t| t.as_str()).collect::<Vec<_>>().join(">")
}

impl Context<'_> {
    fn fresh_checkpoint(&self, seed: u64) -> Result<Checkpoint> {
        let mut rng = Rng::new(seed).fork(INIT_TAG);
        let model = Model::new(self.cfg.model.clone(), &mut rng)?;
        Ok(Checkpoint { model, stage: None, lineage: Vec::new(), epoch: 0, seed, rng: rng.state() })
    }

    fn all_rows_set(&self, m: &SampleManifest, labels: bool) -> Result<LabeledSet<'_>> {
        let mut m = m.clone();
        if !labels {
            m.rows.iter_mut().for_each(|r| r.mapped_class = None);
        }
        let rows: Vec<usize> = (0..m.rows.len()).filter(|&i| !labels || m.rows[i].mapped_class.is_some()).collect();
        LabeledSet::from_rows(&m, &rows, &self.store, &self.classes)
    }

    fn run_object_stage(&self, loss: &LossKind) -> Result<Checkpoint> {
        let objects = self.objects.as_ref().ok_or_else(|| Error::Contract("no object manifest configured".into()))?;
        let seed = Rng::new(self.cfg.seed).fork(OBJECT_TAG).seed();
        let start = self.fresh_checkpoint(seed)?;
        let set = self.all_rows_set(objects, loss.needs_labels())?;
        let spec = StageSpec { tag: StageTag::PretextObject, loss: loss.clone(), config: self.cfg.object_stage().clone() };
        let mut sink = metrics_sink(&self.dir.path(&format!("metrics/object/{}.tsv", loss.name())))?;
        Ok(run_stage(&spec, &start, &set, None, seed, &mut sink)?.checkpoint)
    }

    /// Scene pretext rows for a cell: the labeled training pool minus the
    /// held-out fold, plus the extra scene manifests; validation and test
    /// images never enter the pool.
    fn scene_pool(&self, mode: PretextMode, held: &[usize], labels: bool) -> Result<SampleManifest> {
        let mut excluded: HashSet<&str> = held.iter().map(|&i| self.labeled.rows[i].uri.as_str()).collect();
        for r in &self.labeled.rows {
            if matches!(r.split, Split::Val | Split::Test) {
                excluded.insert(&r.uri);
            }
        }
        let mut sources = vec![self.labeled.clone()];
        sources.extend(self.extra_scene.iter().cloned());
        let (mut pool, _) = compose_pretext(&sources, mode)?;
        pool.rows.retain(|r| !excluded.contains(r.uri.as_str()) && (!labels || r.mapped_class.is_some()));
        if !labels {
            pool.rows.iter_mut().for_each(|r| r.mapped_class = None);
        }
        Ok(pool)
    }

    fn run_cell(&self, cell: &Cell) -> Result<RunRecord> {
        let v = &self.variants[cell.variant];
        let stem = cell_stem(v, cell.rep, cell.fold);
        let seed = Rng::new(self.cfg.seed).fork_path(&[CELL_TAG, cell.rep as u64, cell.fold as u64]).seed();
        let plan = v.plan();
        let mut ckpt = if let Some(p) = &v.init_checkpoint {
            load_checkpoint(p, Some(&self.cfg.model))?
        } else if v.object_pretext {
            let loss = v.pretext_loss.as_ref().expect("validated");
            load_checkpoint(&self.object_ckpts[loss.name()], Some(&self.cfg.model))?
        } else {
            self.fresh_checkpoint(seed)?
        };
        if ckpt.lineage.len() > plan.len() || ckpt.lineage[..] != plan[..ckpt.lineage.len()] {
            return Err(Error::Contract(format!(
                "checkpoint lineage mismatch: starting checkpoint has [{}], plan `{}` is [{}]",
                lineage_string(&ckpt.lineage),
                v.name,
                lineage_string(&plan)
            )));
        }
        let (train_rows, held_rows) = self.folds.cell(cell.rep, cell.fold);
        let mut sink = metrics_sink(&self.dir.path(&format!("metrics/{stem}.tsv")))?;
        let mut best_epoch = None;
        for &tag in &plan[ckpt.lineage.len()..] {
            let out = match tag {
                StageTag::PretextObject => {
                    let loss = v.pretext_loss.clone().expect("validated");
                    let objects = self.objects.as_ref().ok_or_else(|| Error::Contract("no object manifest".into()))?;
                    let set = self.all_rows_set(objects, loss.needs_labels())?;
                    let spec = StageSpec { tag, loss, config: self.cfg.object_stage().clone() };
                    run_stage(&spec, &ckpt, &set, None, seed, &mut sink)?
                }
                StageTag::PretextScene => {
                    let loss = v.pretext_loss.clone().expect("validated");
                    let mode = v.scene_pretext.mode().expect("validated");
                    let pool = self.scene_pool(mode, &held_rows, loss.needs_labels())?;
                    let all: Vec<usize> = (0..pool.rows.len()).collect();
                    let set = LabeledSet::from_rows(&pool, &all, &self.store, &self.classes)?;
                    let spec = StageSpec { tag, loss, config: self.cfg.pretext.clone() };
                    run_stage(&spec, &ckpt, &set, None, seed, &mut sink)?
                }
                StageTag::Downstream => {
                    let train = LabeledSet::from_rows(&self.labeled, &train_rows, &self.store, &self.classes)?;
                    let val_rows = self.labeled.indices(Split::Val);
                    let val = LabeledSet::from_rows(&self.labeled, &val_rows, &self.store, &self.classes)?;
                    let spec = StageSpec { tag, loss: LossKind::CrossEntropy, config: self.cfg.downstream.clone() };
                    let out = run_stage(&spec, &ckpt, &train, (!val.is_empty()).then_some(&val), seed, &mut sink);
                    if let Err(Error::Diverged { last_good: Some(good), .. }) = &out {
                        save_checkpoint_atomic(good, &self.dir.path(&format!("checkpoints/{stem}.last_good.ckpt")))?;
                    }
                    let out = out?;
                    best_epoch = out.best_epoch;
                    out
                }
            };
            ckpt = out.checkpoint;
        }
        if ckpt.lineage != plan {
            return Err(Error::Contract(format!(
                "final lineage [{}] differs from the plan [{}]",
                lineage_string(&ckpt.lineage),
                lineage_string(&plan)
            )));
        }
        save_checkpoint_atomic(&ckpt, &self.dir.path(&format!("checkpoints/{stem}.ckpt")))?;
        let held = LabeledSet::from_rows(&self.labeled, &held_rows, &self.store, &self.classes)?;
        let report = evaluate(&ckpt.model, &held, &self.cfg.downstream.augment, self.cfg.eval_batch_size)?;
        for (suffix, text) in [
            ("summary", report.summary_tsv()),
            ("audit", report.audit_tsv()),
            ("confusion", report.confusion.counts_tsv()),
            ("confusion_pct", report.confusion.percent_tsv()),
        ] {
            self.dir.write_atomic(&format!("reports/cells/{stem}.{suffix}.tsv"), text.as_bytes())?;
        }
        Ok(RunRecord {
            variant: v.name.clone(),
            rep: cell.rep,
            fold: cell.fold,
            config: self.config_fp.clone(),
            cell: cell.fingerprint.clone(),
            status: RunStatus::Completed,
            balanced_acc: Some(report.balanced.value),
            accuracy: Some(report.accuracy),
            best_epoch,
            lineage: lineage_string(&ckpt.lineage),
            message: String::new(),
        })
    }
}

fn load_committed(dir: &RunDirectory, fp: &str) -> Option<RunRecord> {
    let text = fs::read_to_string(dir.path(&format!("reports/records/{fp}.tsv"))).ok()?;
    let rec = parse_run_table(&text).ok()?.into_iter().next()?;
    (rec.cell == fp && rec.is_completed()).then_some(rec)
}

/// Runs every cell of the grid, committing one record per cell as it
/// finishes. With `resume`, committed cells are reused. A failing cell is
/// recorded as failed and the grid continues.
pub fn run_grid(cfg: &GridConfig, config_text: &str, opts: &GridOptions) -> Result<GridOutcome> {
    cfg.validate()?;
    let dir = RunDirectory::create(&opts.run_dir)?;
    let records_dir = dir.path("reports/records");
    let has_records = fs::read_dir(&records_dir).map_err(|e| Error::io(&records_dir, e))?.next().is_some();
    if has_records && !opts.resume {
        return Err(Error::Config {
            line: 0,
            message: format!("{} already holds results; pass --resume or use a fresh directory", dir.root.display()),
        });
    }
    let workers = opts.workers.max(1);
    let variants = cfg.all_variants();
    let labeled = load_resolved(&cfg.data.labeled)?;
    let classes = labeled.classes();
    let extra_scene = cfg.data.scene_pretext.iter().map(|p| load_resolved(p)).collect::<Result<Vec<_>>>()?;
    let objects = cfg.data.object_pretext.as_deref().map(load_resolved).transpose()?;

    let mut shared_cfg = cfg.clone();
    shared_cfg.variants.clear();
    shared_cfg.axes = None;
    shared_cfg.data.labeled = PathBuf::new();
    shared_cfg.data.scene_pretext.clear();
    shared_cfg.data.object_pretext = None;
    let mut parts = vec![serde_json::to_string(&shared_cfg).expect("config serializes"), labeled.checksum()];
    parts.extend(extra_scene.iter().map(SampleManifest::checksum));
    parts.extend(objects.iter().map(SampleManifest::checksum));
    let shared_fp = hash_parts(&parts.iter().map(String::as_str).collect::<Vec<_>>());
    let mut variant_fps = Vec::new();
    for v in &variants {
        let mut v = v.clone();
        let ckpt_hash = match &v.init_checkpoint {
            Some(p) => full_hash(&fs::read(p).map_err(|e| Error::io(p, e))?),
            None => String::new(),
        };
        v.init_checkpoint = None;
        variant_fps.push(hash_parts(&[&serde_json::to_string(&v).expect("variant serializes"), &ckpt_hash]));
    }
    let config_fp = hash_parts(&[&shared_fp, &variant_fps.join(",")]);

    let folds = make_folds(&labeled, cfg.cv.folds, cfg.cv.repetitions, &Rng::new(cfg.seed).fork(FOLD_TAG))?;
    let mut cells = Vec::new();
    for (vi, vfp) in variant_fps.iter().enumerate() {
        for rep in 0..cfg.cv.repetitions {
            for fold in 0..cfg.cv.folds {
                let fingerprint = hash_parts(&[&shared_fp, vfp, &rep.to_string(), &fold.to_string()]);
                cells.push(Cell { variant: vi, rep, fold, fingerprint });
            }
        }
    }
    let reused: Vec<Option<RunRecord>> = cells
        .iter()
        .map(|c| if opts.resume { load_committed(&dir, &c.fingerprint) } else { None })
        .collect();
    let pending: Vec<&Cell> = cells.iter().zip(&reused).filter(|(_, r)| r.is_none()).map(|(c, _)| c).collect();
    log::info!("grid `{}`: {} cells, {} to run, {} workers", cfg.name, cells.len(), pending.len(), workers);

    // Inputs and provenance.
    dir.write_atomic("config/grid.toml", config_text.as_bytes())?;
    dir.write_atomic("config/fingerprint", format!("{config_fp}\n").as_bytes())?;
    dir.write_atomic("manifests/labeled.tsv", SampleManifest::load(&cfg.data.labeled)?.to_tsv()?.as_bytes())?;
    let mut folds_tsv = String::from("rep\tfold\turi\n");
    for rep in 0..folds.repetitions {
        for (j, &row) in folds.rows.iter().enumerate() {
            folds_tsv.push_str(&format!("{rep}\t{}\t{}\n", folds.assignment[rep][j], labeled.rows[row].uri));
        }
    }
    dir.write_atomic("manifests/folds.tsv", folds_tsv.as_bytes())?;

    let mut ctx = Context {
        cfg,
        variants,
        dir: &dir,
        config_fp: config_fp.clone(),
        labeled,
        classes,
        extra_scene,
        objects,
        folds,
        store: ImageStore::new(),
        object_ckpts: BTreeMap::new(),
    };
    if !pending.is_empty() {
        let size = cfg.data.load_size;
        ctx.store.load_manifest(&ctx.labeled, Path::new(""), size, workers)?;
        let needs_extra = pending.iter().any(|c| ctx.variants[c.variant].scene_pretext != ScenePretext::None);
        if needs_extra {
            for m in &ctx.extra_scene {
                ctx.store.load_manifest(m, Path::new(""), size, workers)?;
            }
        }
        let mut object_losses: Vec<LossKind> = Vec::new();
        for c in &pending {
            let v = &ctx.variants[c.variant];
            if v.object_pretext && v.init_checkpoint.is_none() {
                let l = v.pretext_loss.clone().expect("validated");
                if !object_losses.contains(&l) {
                    object_losses.push(l);
                }
            }
        }
        if !object_losses.is_empty() {
            if let Some(m) = &ctx.objects {
                ctx.store.load_manifest(m, Path::new(""), size, workers)?;
            }
        }
        if !ctx.store.skipped.is_empty() {
            log::warn!("{} images could not be decoded and are excluded", ctx.store.skipped.len());
        }
        // Object pretext is independent of the fold, so it runs once per
        // loss and is shared by every cell.
        let mut todo = Vec::new();
        for l in object_losses {
            let fp = hash_parts(&[&shared_fp, "object", &serde_json::to_string(&l).expect("loss serializes")]);
            let path = dir.path(&format!("checkpoints/object/{}-{fp}.ckpt", l.name()));
            ctx.object_ckpts.insert(l.name().to_string(), path.clone());
            if !(opts.resume && path.exists()) {
                todo.push((l, path));
            }
        }
        let results = parallel_map(&todo, workers, |(l, path)| {
            ctx.run_object_stage(l).and_then(|ck| save_checkpoint_atomic(&ck, path))
        });
        for ((l, _), r) in todo.iter().zip(results) {
            if let Err(e) = r {
                log::error!("object pretext with `{}` failed: {e}", l.name());
            }
        }
    }

    let results = parallel_map(&pending, workers, |cell| {
        let v = &ctx.variants[cell.variant];
        log::info!("cell {} rep {} fold {}: start", v.name, cell.rep, cell.fold);
        let rec = ctx.run_cell(cell).unwrap_or_else(|e| {
            log::error!("cell {} rep {} fold {} failed: {e}", v.name, cell.rep, cell.fold);
            RunRecord {
                variant: v.name.clone(),
                rep: cell.rep,
                fold: cell.fold,
                config: ctx.config_fp.clone(),
                cell: cell.fingerprint.clone(),
                status: RunStatus::Failed,
                balanced_acc: None,
                accuracy: None,
                best_epoch: None,
                lineage: String::new(),
                message: e.to_string(),
            }
        });
        let committed = write_atomic(
            &dir.path(&format!("reports/records/{}.tsv", cell.fingerprint)),
            format_run_table(std::slice::from_ref(&rec)).as_bytes(),
        );
        if let Err(e) = committed {
            log::error!("could not commit cell {}: {e}", cell.fingerprint);
        }
        rec
    });
    let mut fresh = results.into_iter();
    let reused_count = reused.iter().filter(|r| r.is_some()).count();
    let records: Vec<RunRecord> = reused
        .into_iter()
        .map(|r| r.unwrap_or_else(|| fresh.next().expect("one result per pending cell")))
        .collect();

    dir.write_atomic("reports/runs.tsv", format_run_table(&records).as_bytes())?;
    dir.write_atomic("reports/summary.tsv", summary_table(&records).as_bytes())?;
    dir.write_index(&config_fp)?;
    Ok(GridOutcome { records, reused: reused_count, config_fingerprint: config_fp })
}

