//! Command implementations other than plot-data emission.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use scene_ssl::best::{compare_variants, report_tsv, BestConfig, Pooling};
use scene_ssl::data::{
    build_remap_table, generate_toy_scenes, remap_manifest, stratified_split, ImageStore, LabeledSet, SampleManifest,
    Split, ToySceneSpec, PLACES8_CLASSES,
};
use scene_ssl::eval::{evaluate as run_evaluation, grouped_report, grouped_tsv};
use scene_ssl::model::load_checkpoint;
use scene_ssl::train::{parse_run_table, run_grid, summary_table, write_atomic, GridConfig, GridOptions, StageConfig};
use scene_ssl::{Error, Result, Rng};

use crate::listing::{absolute, read_listing, relative_uri};
use crate::{BestArgs, EvaluateArgs, GridRunArgs, PoolingChoice, PrepareArgs, RemapChoice, SplitChoice, ToygenArgs};

/// Per-class test/train/val counts, classes in `order`, plus a total row.
pub fn class_summary(m: &SampleManifest, order: &[String]) -> String {
    let counts: Vec<BTreeMap<String, usize>> =
        [Split::Test, Split::Train, Split::Val].iter().map(|&s| m.class_counts(Some(s))).collect();
    let mut s = String::from("class\ttest\ttrain\tval\n");
    let mut totals = [0usize; 3];
    for class in order {
        let row: Vec<usize> = counts.iter().map(|c| c.get(class).copied().unwrap_or(0)).collect();
        for (t, v) in totals.iter_mut().zip(&row) {
            *t += v;
        }
        let _ = writeln!(s, "{class}\t{}\t{}\t{}", row[0], row[1], row[2]);
    }
    let _ = writeln!(s, "total\t{}\t{}\t{}", totals[0], totals[1], totals[2]);
    s
}

pub fn prepare(a: &PrepareArgs) -> Result<ExitCode> {
    if !(a.test_frac > 0.0 && a.test_frac < 1.0) {
        return Err(Error::Contract(format!("--test-frac must lie in (0, 1), got {}", a.test_frac)));
    }
    let table = build_remap_table();
    let raw = read_listing(&a.listing, &table)?;
    let (mapped, order) = match a.remap {
        RemapChoice::Places8 => {
            let (m, report) = remap_manifest(&raw, &table)?;
            if report.unmapped > 0 {
                log::info!("{} rows outside the Places8 table marked unmapped", report.unmapped);
            }
            (m, PLACES8_CLASSES.iter().map(|s| s.to_string()).collect())
        }
        RemapChoice::None => {
            let classes = raw.classes();
            (raw, classes)
        }
    };
    let (mut split, _) = stratified_split(&mapped, a.test_frac, &mut Rng::new(a.seed).fork(0x5e11))?;
    split.seed = Some(a.seed);
    let out = absolute(&a.out)?;
    let base = out.parent().unwrap_or(Path::new("/")).to_path_buf();
    fs::create_dir_all(&base).map_err(|e| Error::io(&base, e))?;
    for r in &mut split.rows {
        r.uri = relative_uri(Path::new(&r.uri), &base);
    }
    write_atomic(&out, split.to_tsv()?.as_bytes())?;
    print!("{}", class_summary(&split, &order));
    log::info!("wrote {} ({} rows, checksum {})", out.display(), split.len(), split.checksum());
    Ok(ExitCode::SUCCESS)
}

pub fn toygen(a: &ToygenArgs) -> Result<ExitCode> {
    let spec = ToySceneSpec {
        classes: a.classes,
        image_size: a.size,
        per_class: a.per_class,
        seed: a.seed,
        val_fraction: a.val_frac,
        test_fraction: a.test_frac,
        synthetic_per_class: a.synthetic_per_class,
    };
    let m = generate_toy_scenes(&spec, &a.out)?;
    let path = a.out.join("manifest.tsv");
    write_atomic(&path, m.to_tsv()?.as_bytes())?;
    print!("{}", class_summary(&m, &spec.class_names()));
    println!("images\t{}\nmanifest\t{}\nchecksum\t{}", m.len(), path.display(), m.checksum());
    Ok(ExitCode::SUCCESS)
}

pub fn grid_run(a: &GridRunArgs) -> Result<ExitCode> {
    let (cfg, text) = GridConfig::load(&a.config)?;
    let run_dir = a.run_dir.clone().unwrap_or_else(|| PathBuf::from("runs").join(&cfg.name));
    let workers = a.workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let opts = GridOptions { run_dir: run_dir.clone(), workers, resume: a.resume };
    let outcome = run_grid(&cfg, &text, &opts)?;
    print!("{}", summary_table(&outcome.records));
    println!("run directory\t{}", run_dir.display());
    println!("cells\t{} ({} reused)", outcome.records.len(), outcome.reused);
    let failed = outcome.failed();
    if failed.is_empty() {
        return Ok(ExitCode::SUCCESS);
    }
    eprintln!("{} cell(s) failed:", failed.len());
    for r in failed {
        eprintln!("  {} rep {} fold {}: {}", r.variant, r.rep, r.fold, r.message);
    }
    Ok(ExitCode::from(1))
}

/// Reads `uri<TAB>group` lines; groups are ordered by first appearance.
fn read_groups(path: &Path) -> Result<(BTreeMap<String, String>, Vec<String>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut tags = BTreeMap::new();
    let mut order = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (uri, group) = line.split_once('\t').ok_or_else(|| Error::Parse {
            what: "group tags",
            line: i + 1,
            message: "expected `uri<TAB>group`".into(),
        })?;
        if !order.iter().any(|g| g == group) {
            order.push(group.to_string());
        }
        tags.insert(uri.to_string(), group.to_string());
    }
    Ok((tags, order))
}

pub fn evaluate(a: &EvaluateArgs) -> Result<ExitCode> {
    if !a.checkpoint.is_file() {
        return Err(Error::Data(format!("checkpoint {} does not exist", a.checkpoint.display())));
    }
    let ckpt = load_checkpoint(&a.checkpoint, None)?;
    let model = &ckpt.model;
    if !model.has_classifier() {
        return Err(Error::Contract(format!("checkpoint {} has no classifier head", a.checkpoint.display())));
    }
    let mut policy = match &a.config {
        Some(p) => GridConfig::load(p)?.0.downstream.augment,
        None => StageConfig::downstream().augment,
    };
    let (h, w, _) = model.config.encoder.input_size;
    policy.output_size = (h, w);

    let manifest = SampleManifest::load(&a.manifest)?;
    let base = a.manifest.parent().unwrap_or(Path::new(""));
    let rows: Vec<usize> = match a.split {
        SplitChoice::Train => manifest.indices(Split::Train),
        SplitChoice::Val => manifest.indices(Split::Val),
        SplitChoice::Test => manifest.indices(Split::Test),
        SplitChoice::All => (0..manifest.len()).filter(|&i| manifest.rows[i].mapped_class.is_some()).collect(),
    };
    let subset = SampleManifest { rows: rows.iter().map(|&i| manifest.rows[i].clone()).collect(), ..manifest.clone() };
    let mut store = ImageStore::new();
    store.load_manifest(&subset, base, None, 1)?;
    let all: Vec<usize> = (0..subset.len()).collect();
    let set = LabeledSet::from_rows(&subset, &all, &store, &model.classes)?;
    let report = run_evaluation(model, &set, &policy, a.batch_size)?;
    print!("{}", report.summary_tsv());

    let mut files = vec![
        ("summary.tsv", report.summary_tsv()),
        ("audit.tsv", report.audit_tsv()),
        ("confusion.tsv", report.confusion.counts_tsv()),
        ("confusion_pct.tsv", report.confusion.percent_tsv()),
    ];
    if let Some(path) = &a.groups {
        let (tags, order) = read_groups(path)?;
        let per_prediction = report
            .predictions
            .iter()
            .map(|p| {
                tags.get(&p.uri)
                    .cloned()
                    .ok_or_else(|| Error::Data(format!("no group tag for `{}` in {}", p.uri, path.display())))
            })
            .collect::<Result<Vec<_>>>()?;
        let groups = grouped_report(&model.classes, &report.predictions, &per_prediction, &order)?;
        let table = grouped_tsv(&model.classes, &groups);
        print!("{table}");
        files.push(("grouped.tsv", table));
    }
    if let Some(dir) = &a.out {
        for (name, body) in &files {
            write_atomic(&dir.join(name), body.as_bytes())?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// A run table path, accepting a run directory in its place.
pub fn run_table_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join("reports").join("runs.tsv")
    } else {
        p.to_path_buf()
    }
}

pub fn best(a: &BestArgs) -> Result<ExitCode> {
    let path = run_table_path(&a.results);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let records = parse_run_table(&text)?;
    let pooling = match a.pooling {
        PoolingChoice::Pooled => Pooling::Pooled,
        PoolingChoice::FoldAveraged => Pooling::FoldAveraged,
    };
    let cfg = BestConfig { chains: a.chains, draws: a.draws, warmup: a.warmup, seed: a.seed, ..BestConfig::default() };
    let cmp = compare_variants(&records, &a.pair[0], &a.pair[1], &a.metric, pooling, &cfg)?;
    let report = report_tsv(std::slice::from_ref(&cmp));
    let s = &cmp.summary;
    println!("{}", cmp.verdict());
    print!("{report}");
    let es_mean = s.effect_size.iter().sum::<f64>() / s.effect_size.len() as f64;
    println!("metric\t{}\npooling\t{}\nn\t{}", cmp.metric, pooling.as_str(), cmp.n);
    println!("hdi_mass\t{}\neffect_size_mean\t{es_mean:.4}", s.hdi_mass);
    let names = ["mu1", "mu2", "sigma1", "sigma2", "nu"];
    for (n, acc) in names.iter().zip(s.acceptance) {
        println!("acceptance[{n}]\t{acc:.3}");
    }
    for (name, d) in &s.diagnostics {
        println!("rhat[{name}]\t{:.4}\ness[{name}]\t{:.0}", d.rhat, d.ess);
    }
    if !s.converged {
        log::warn!("chains did not converge (R̂ max {:.3}); treat the verdict with caution", s.rhat_max);
    }
    if let Some(out) = &a.out {
        write_atomic(out, format!("# {}\n{report}", cmp.verdict()).as_bytes())?;
    }
    Ok(ExitCode::SUCCESS)
}
