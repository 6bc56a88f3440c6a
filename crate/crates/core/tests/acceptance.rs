//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when a gated criterion fails. Criterion 9 and the SSL-vs-scratch
//! direction of criterion 5 are reported without gating.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use scene_ssl::best::{compare_variants, sample_posterior, BestConfig, BestPriors, FixedScale, Pooling};
use scene_ssl::data::{
    build_remap_table, generate_toy_scenes, make_folds, remap_manifest, render_toy_scene, stratified_split, ImageStore,
    LabeledSet, ManifestRow, SampleManifest, Split, ToySceneSpec,
};
use scene_ssl::eval::{evaluate, grouped_report, EvalReport, Prediction};
use scene_ssl::losses::{self, BarlowConfig, ContrastiveBatch, LossKind, SwavConfig, SwavState};
use scene_ssl::model::{Checkpoint, EncoderConfig, Model, ModelConfig, NormKind, ProjectionConfig, StageTag};
use scene_ssl::numerics::gradcheck::{check, check_sampled};
use scene_ssl::train::{
    parallel_map, run_grid, run_stage, GridConfig, GridOptions, RunRecord, RunStatus, StageConfig, StageSpec,
};
use scene_ssl::{Result, Rng, Tensor};
use statrs::distribution::{Continuous, Normal, StudentsT};

const STEP: f64 = 1e-3;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Result<Verdict> {
    Ok(Verdict { pass, detail: detail.into() })
}

fn rand_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.range(-2.0, 2.0)).collect()
}

fn workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

// ---------------------------------------------------------------- 1

fn gradient_model() -> Result<Model> {
    let cfg = ModelConfig {
        encoder: EncoderConfig {
            input_size: (16, 16, 3),
            stage_widths: vec![8, 16],
            blocks_per_stage: vec![1, 1],
            embedding_dim: 8,
            norm: NormKind::Group { groups: 4 },
            stem_stride: 2,
        },
        projection: ProjectionConfig { hidden_dim: 16, output_dim: 8, use_batch_norm: false },
    };
    let mut rng = Rng::new(9);
    let mut model = Model::new(cfg, &mut rng)?;
    model.init_classifier(&["a".into(), "b".into(), "c".into()], &mut rng)?;
    // Non-zero residual scales so every path carries gradient.
    for p in model.params.iter_mut() {
        if p.name.ends_with("norm2.gamma") {
            p.value.iter_mut().for_each(|v| *v = 0.5);
        }
    }
    Ok(model)
}

fn criterion_1() -> Result<Verdict> {
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut note = |name: &'static str, e: f64| {
        let w = worst.entry(name).or_insert(0.0);
        *w = w.max(e);
    };
    let (mut kinks, mut sampled) = (0usize, 0usize);
    let model = gradient_model()?;
    let bound = model.params.bind(false);
    for seed in 0..100u64 {
        let mut rng = Rng::new(seed).fork(1);
        let labels: Vec<usize> = (0..4).map(|_| rng.below(3)).collect();
        let r = check(
            |x| losses::nt_xent(&ContrastiveBatch::new(x[0].clone(), 2, None, 0.1)?),
            &[(vec![8, 8], rand_vec(&mut rng, 64))],
            STEP,
        )?;
        note("nt_xent", r.max_rel_err());
        let r = check(
            |x| Ok(losses::supcon(&ContrastiveBatch::new(x[0].clone(), 2, Some(labels.clone()), 0.1)?)?.loss),
            &[(vec![8, 8], rand_vec(&mut rng, 64))],
            STEP,
        )?;
        note("supcon", r.max_rel_err());
        let r = check(
            |x| losses::barlow_twins(&x[0], &x[1], &BarlowConfig::default()),
            &[(vec![8, 4], rand_vec(&mut rng, 32)), (vec![8, 4], rand_vec(&mut rng, 32))],
            STEP,
        )?;
        note("barlow_twins", r.max_rel_err());

        let state = SwavState::new(SwavConfig { num_prototypes: 5, ..SwavConfig::default() }, 6, &mut rng)?;
        let (a, b) = (rand_vec(&mut rng, 24), rand_vec(&mut rng, 24));
        let (_, codes) = losses::swav_loss(&Tensor::new(&[4, 6], a.clone())?, &Tensor::new(&[4, 6], b.clone())?, &state)?;
        let r = check(
            |x| losses::swav_loss_with_codes(&x[0], &x[1], &x[2], &codes.a, &codes.b, 0.1),
            &[(vec![4, 6], a), (vec![4, 6], b), (vec![5, 6], state.prototypes.to_vec())],
            STEP,
        )?;
        note("swav_loss", r.max_rel_err());

        let targets: Vec<usize> = (0..4).map(|_| rng.below(5)).collect();
        let r = check(|x| losses::cross_entropy(&x[0], &targets), &[(vec![4, 5], rand_vec(&mut rng, 20))], STEP)?;
        note("cross_entropy", r.max_rel_err());

        // Encoder + projection + classifier on 16×16 inputs; 32 sampled
        // input coordinates per instance, minus those whose stencil
        // straddles a ReLU / max-pool kink.
        let images: Vec<f64> = (0..2 * 3 * 16 * 16).map(|_| rng.range(0.0, 1.0)).collect();
        let cls = [rng.below(3), rng.below(3)];
        let r = check_sampled(
            |x| {
                let emb = model.encode(&bound, &x[0], true)?;
                let ce = losses::cross_entropy(&model.classify(&bound, &emb)?, &cls)?;
                ce.add(&model.project(&bound, &emb, true)?.square().mean())
            },
            &[(vec![2, 3, 16, 16], images)],
            STEP,
            32,
            Some(1e-3),
            &mut rng,
        )?;
        note("full_graph", r.max_rel_err());
        kinks += r.skipped[0];
        sampled += 32;
    }
    let pass = worst.iter().all(|(k, &e)| e < if *k == "full_graph" { 1e-3 } else { 1e-4 });
    let detail = worst.iter().map(|(k, e)| format!("{k} {e:.1e}")).collect::<Vec<_>>().join(", ");
    verdict(
        pass,
        format!(
            "worst relative error over 100 instances: {detail}; full graph: {} of {sampled} sampled coordinates \
             straddled a kink and were skipped",
            kinks
        ),
    )
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Result<Verdict> {
    let nt = losses::nt_xent(&ContrastiveBatch::new(Tensor::new(&[4, 3], [1.0, 2.0, 3.0].repeat(4))?, 2, None, 0.1)?)?.item();
    let ce = losses::cross_entropy(&Tensor::new(&[3, 8], vec![0.7; 24])?, &[0, 3, 7])?.item();
    // Hadamard columns: zero mean, unit variance, mutually orthogonal.
    let h = [[1.0, 1.0, 1.0], [-1.0, 1.0, -1.0], [1.0, -1.0, -1.0], [-1.0, -1.0, 1.0]];
    let z = Tensor::new(&[4, 3], h.iter().flatten().copied().collect())?;
    let bt = losses::barlow_twins(&z, &z, &BarlowConfig::default())?.item();
    let mut rng = Rng::new(4);
    let emb = Tensor::new(&[8, 5], rand_vec(&mut rng, 40))?;
    let sc = losses::supcon(&ContrastiveBatch::new(emb.clone(), 2, Some(vec![0, 1, 2, 3]), 0.1)?)?.loss.item();
    let nt2 = losses::nt_xent(&ContrastiveBatch::new(emb, 2, None, 0.1)?)?.item();
    let errs = [(nt - 3f64.ln()).abs(), (ce - 8f64.ln()).abs(), bt.abs(), (sc - nt2).abs()];
    verdict(
        errs.iter().all(|&e| e < 1e-6),
        format!(
            "|nt_xent−ln3| {:.1e}, |CE−ln8| {:.1e}, |barlow| {:.1e}, |supcon−nt_xent| {:.1e}",
            errs[0], errs[1], errs[2], errs[3]
        ),
    )
}

// ---------------------------------------------------------------- 3

fn column_deviation(q: &[f64], b: usize, k: usize) -> f64 {
    (0..k)
        .map(|j| ((0..b).map(|i| q[i * k + j]).sum::<f64>() - b as f64 / k as f64).abs())
        .fold(0.0, f64::max)
}

fn criterion_3() -> Result<Verdict> {
    let (b, k) = (16, 8);
    let (mut oracle, mut prod, mut row) = (0.0f64, 0.0f64, 0.0f64);
    let (mut oracle_eps, mut prod_eps) = (0.0f64, 0.0f64);
    for seed in 0..100 {
        let mut rng = Rng::new(seed).fork(3);
        let s: Vec<f64> = (0..b * k).map(|_| rng.range(-1.0, 1.0)).collect();
        // Unit-scale scores/ε: the converged plan, then three iterations.
        let q = losses::sinkhorn_codes(&s, b, k, 1.0, 10_000)?;
        oracle = oracle.max(column_deviation(&q, b, k));
        for r in q.chunks(k) {
            oracle = oracle.max((r.iter().sum::<f64>() - 1.0).abs());
        }
        let q3 = losses::sinkhorn_codes(&s, b, k, 1.0, 3)?;
        prod = prod.max(column_deviation(&q3, b, k));
        for r in q3.chunks(k) {
            row = row.max((r.iter().sum::<f64>() - 1.0).abs());
        }
        // The same scores at the production ε = 0.05 (scores/ε up to 20).
        oracle_eps = oracle_eps.max(column_deviation(&losses::sinkhorn_codes(&s, b, k, 0.05, 10_000)?, b, k));
        prod_eps = prod_eps.max(column_deviation(&losses::sinkhorn_codes(&s, b, k, 0.05, 3)?, b, k));
    }
    verdict(
        oracle < 1e-9 && prod < 1e-2 && row < 1e-12,
        format!(
            "ε=1: oracle marginal deviation {oracle:.1e}, 3 iterations column deviation {prod:.1e}, row error {row:.1e}; \
             [info] ε=0.05: oracle {oracle_eps:.1e}, 3 iterations {prod_eps:.2}"
        ),
    )
}

// ---------------------------------------------------------------- 4

fn criterion_4() -> Result<Verdict> {
    let table = build_remap_table();
    let mut rows = Vec::new();
    let mut rng = Rng::new(17);
    for (orig, _) in table.originals() {
        for i in 0..(20 + rng.below(200)) {
            rows.push(ManifestRow::raw(format!("{orig}/{i}.jpg"), orig, Split::Train, "places", false));
        }
    }
    let listing = SampleManifest::new("listing", rows);
    let (mapped, report) = remap_manifest(&listing, &table)?;
    let remap_ok = report.unmapped == 0 && mapped.classes().len() == 8 && table.len() == 23;
    let (_, split) = stratified_split(&mapped, 0.1, &mut Rng::new(5))?;
    let split_ok = split
        .per_class
        .values()
        .all(|&(pool, sel)| (sel as i64 - (pool as f64 * 0.1).round() as i64).abs() <= 1);

    let mut folds_ok = true;
    for t in 0..50u64 {
        let mut r = Rng::new(t).fork(4);
        let mut rows = Vec::new();
        for c in 0..2 + r.below(6) {
            for i in 0..5 + r.below(40) {
                let mut row = ManifestRow::raw(format!("{c}/{i}"), format!("c{c}"), Split::Train, "s", false);
                row.mapped_class = Some(format!("c{c}"));
                rows.push(row);
            }
        }
        r.shuffle(&mut rows);
        let m = SampleManifest::new("random", rows);
        let folds = make_folds(&m, 5, 3, &r.fork(1))?;
        let pool = m.indices(Split::Train);
        for rep in 0..3 {
            let mut seen = vec![0usize; m.len()];
            let mut hist: Vec<BTreeMap<String, usize>> = vec![BTreeMap::new(); 5];
            for fold in 0..5 {
                for i in folds.cell(rep, fold).1 {
                    seen[i] += 1;
                    *hist[fold].entry(m.rows[i].mapped_class.clone().unwrap_or_default()).or_insert(0) += 1;
                }
            }
            folds_ok &= pool.iter().all(|&i| seen[i] == 1) && seen.iter().sum::<usize>() == pool.len();
            for class in m.classes() {
                let c: Vec<usize> = hist.iter().map(|h| h.get(&class).copied().unwrap_or(0)).collect();
                folds_ok &= c.iter().max().unwrap_or(&0) - c.iter().min().unwrap_or(&0) <= 1;
            }
        }
    }
    verdict(
        remap_ok && split_ok && folds_ok,
        format!(
            "23 categories → {} classes, {} unmapped; split within ±1: {split_ok}; 5×3 folds on 50 manifests: {folds_ok}",
            mapped.classes().len(),
            report.unmapped
        ),
    )
}

// ---------------------------------------------------------------- 5

struct ToyData {
    store: ImageStore,
    manifest: SampleManifest,
    classes: Vec<String>,
}

fn toy_data() -> ToyData {
    let spec = ToySceneSpec::default();
    let classes = spec.class_names();
    let mut store = ImageStore::new();
    let mut rows = Vec::new();
    let mut rng = Rng::new(spec.seed).fork(5);
    for (c, name) in classes.iter().enumerate() {
        let mut order: Vec<usize> = (0..spec.per_class).collect();
        rng.shuffle(&mut order);
        for (rank, &i) in order.iter().enumerate() {
            let uri = format!("{c}/{i}");
            store.insert(uri.clone(), render_toy_scene(&spec, c, i));
            let split = match rank * 10 / spec.per_class {
                0 | 1 => Split::Test,
                2 => Split::Val,
                _ => Split::Train,
            };
            let mut r = ManifestRow::raw(uri, name.clone(), split, "toy", false);
            r.mapped_class = Some(name.clone());
            rows.push(r);
        }
    }
    ToyData { store, manifest: SampleManifest::new("toy", rows), classes }
}

fn toy_run(data: &ToyData, seed: u64, pretext: bool) -> Result<f64> {
    let set = |s| LabeledSet::from_rows(&data.manifest, &data.manifest.indices(s), &data.store, &data.classes);
    let (train, val, test) = (set(Split::Train)?, set(Split::Val)?, set(Split::Test)?);
    let mut rng = Rng::new(seed);
    let model = Model::new(ModelConfig::default(), &mut rng)?;
    let mut ckpt = Checkpoint { model, stage: None, lineage: Vec::new(), epoch: 0, seed, rng: rng.state() };
    let mut quiet = |_: &_| Ok(());
    if pretext {
        let spec = StageSpec {
            tag: StageTag::PretextScene,
            loss: LossKind::NtXent { temperature: 0.1 },
            config: StageConfig::default(),
        };
        ckpt = run_stage(&spec, &ckpt, &train, None, seed, &mut quiet)?.checkpoint;
    }
    let down = StageConfig::downstream();
    let spec = StageSpec { tag: StageTag::Downstream, loss: LossKind::CrossEntropy, config: down.clone() };
    let tuned = run_stage(&spec, &ckpt, &train, Some(&val), seed, &mut quiet)?.checkpoint;
    Ok(evaluate(&tuned.model, &test, &down.augment, 128)?.balanced.value)
}

fn toy_records(variant: &str, values: &[f64]) -> Vec<RunRecord> {
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| RunRecord {
            variant: variant.into(),
            rep: 0,
            fold: i,
            config: "toy".into(),
            cell: format!("{variant}{i}"),
            status: RunStatus::Completed,
            balanced_acc: Some(v),
            accuracy: Some(v),
            best_epoch: None,
            lineage: String::new(),
            message: String::new(),
        })
        .collect()
}

fn criterion_5() -> Result<Verdict> {
    let data = toy_data();
    let seeds = [1u64, 2, 3];
    let t = Instant::now();
    let ssl = parallel_map(&seeds, workers(), |&s| toy_run(&data, s, true)).into_iter().collect::<Result<Vec<_>>>()?;
    let ssl_time = t.elapsed();
    let t = Instant::now();
    let scratch =
        parallel_map(&seeds, workers(), |&s| toy_run(&data, s, false)).into_iter().collect::<Result<Vec<_>>>()?;
    let scratch_time = t.elapsed();
    let mut recs = toy_records("ssl", &ssl);
    recs.extend(toy_records("scratch", &scratch));
    // Informational only; identical scores (e.g. every run at 1.0) leave
    // nothing to compare.
    let cmp = match compare_variants(&recs, "ssl", "scratch", "balanced_acc", Pooling::Pooled, &BestConfig::default()) {
        Ok(c) => c.verdict().to_string(),
        Err(e) => format!("BEST not applicable: {e}"),
    };
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join("/");
    let pass = ssl.iter().all(|&b| b > 0.25) && ssl_time < Duration::from_secs(30 * 60);
    verdict(
        pass,
        format!(
            "nt_xent 20 + fine-tune 30 epochs, BA {} (chance 0.125) in {:.1} min on {} core(s); \
             [info] scratch BA {} in {:.1} min; {}",
            fmt(&ssl),
            ssl_time.as_secs_f64() / 60.0,
            workers(),
            fmt(&scratch),
            scratch_time.as_secs_f64() / 60.0,
            cmp
        ),
    )
}

// ---------------------------------------------------------------- 6

fn normal_sample(seed: u64, mean: f64, sd: f64, n: usize) -> Vec<f64> {
    let mut rng = Rng::new(seed);
    (0..n).map(|_| mean + sd * rng.normal()).collect()
}

fn avg(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Posterior mean of μ₁−μ₂ with σ and ν fixed, by dense grid integration.
fn grid_mean_diff(y1: &[f64], y2: &[f64], f: FixedScale) -> Result<f64> {
    let b = scene_ssl::best::prior_bounds(y1, y2, &BestPriors::default())?;
    let prior = Normal::new(b.mu_mean, b.mu_sd).expect("valid prior");
    let marginal = |y: &[f64], sigma: f64| -> (Vec<f64>, Vec<f64>) {
        let t = StudentsT::new(0.0, sigma, f.nu).expect("valid t");
        let n = 1201;
        let grid: Vec<f64> = (0..n).map(|i| avg(y) - 10.0 * sigma + 20.0 * sigma * i as f64 / (n - 1) as f64).collect();
        let logp = grid.iter().map(|&m| y.iter().map(|&v| t.ln_pdf(v - m)).sum::<f64>() + prior.ln_pdf(m)).collect();
        (grid, logp)
    };
    let (g1, l1) = marginal(y1, f.sigma1);
    let (g2, l2) = marginal(y2, f.sigma2);
    let m1 = l1.iter().cloned().fold(f64::MIN, f64::max);
    let m2 = l2.iter().cloned().fold(f64::MIN, f64::max);
    let (mut z, mut e) = (0.0, 0.0);
    for (a, la) in g1.iter().zip(&l1) {
        for (b, lb) in g2.iter().zip(&l2) {
            let w = (la - m1 + lb - m2).exp();
            z += w;
            e += w * (a - b);
        }
    }
    Ok(e / z)
}

fn criterion_6() -> Result<Verdict> {
    let t = Instant::now();
    let mut diag_ok = true;
    let mut diag = |s: &scene_ssl::best::PosteriorSummary| {
        diag_ok &= s.rhat_max < 1.05 && s.ess_min > 400.0;
    };
    let same = normal_sample(1, 0.75, 0.03, 15);
    let a = sample_posterior(&same, &same, &BestConfig { seed: 2, ..BestConfig::default() })?;
    diag(&a);
    let y1 = [0.71, 0.69, 0.74, 0.70, 0.72];
    let y2 = [0.66, 0.70, 0.68, 0.65, 0.69];
    let fixed = FixedScale { sigma1: 0.02, sigma2: 0.02, nu: 10.0 };
    let oracle = grid_mean_diff(&y1, &y2, fixed)?;
    let b = sample_posterior(&y1, &y2, &BestConfig { fixed: Some(fixed), seed: 11, ..BestConfig::default() })?;
    diag(&b);
    let g1 = normal_sample(70, 0.70, 0.02, 15);
    let g2 = normal_sample(72, 0.72, 0.02, 15);
    let c = sample_posterior(&g1, &g2, &BestConfig { seed: 5, ..BestConfig::default() })?;
    diag(&c);
    let sample_diff = avg(&g1) - avg(&g2);
    let elapsed = t.elapsed();
    let ok_a = (0.45..=0.55).contains(&a.p_direction) && a.hdi.0 < 0.0 && a.hdi.1 > 0.0;
    let ok_b = (b.mean_diff - oracle).abs() < 1e-3;
    let ok_c = (c.mean_diff - sample_diff).abs() <= 0.005;
    verdict(
        ok_a && ok_b && ok_c && diag_ok && elapsed < Duration::from_secs(300),
        format!(
            "(a) P={:.3}; (b) |mcmc−grid| {:.1e}; (c) |Δ−sample Δ| {:.1e}; (d) R̂/ESS ok: {diag_ok}; {:.1} s",
            a.p_direction,
            (b.mean_diff - oracle).abs(),
            (c.mean_diff - sample_diff).abs(),
            elapsed.as_secs_f64()
        ),
    )
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Result<Verdict> {
    let classes: Vec<String> = scene_ssl::data::PLACES8_CLASSES.iter().map(|s| s.to_string()).collect();
    let pred = |truth: usize, predicted: usize| Prediction { uri: String::new(), truth, predicted, confidence: 1.0 };
    // 80 images, 10 per class, 62 correct.
    let mut ood = Vec::new();
    for c in 0..8 {
        for i in 0..10 {
            let correct = i < 7 || (c < 6 && i == 7);
            ood.push(pred(c, if correct { c } else { (c + 1) % 8 }));
        }
    }
    let acc = EvalReport::from_predictions(&classes, ood)?.accuracy;

    // Two groups over 6 present classes (classroom = 3 and dressing room = 4
    // absent); every miss is predicted as dressing room. Group A: 10 per
    // class, 4 correct → 0.400. Group B: 500 per class, 1023 correct in
    // total → 2.046 / 6 = 0.341.
    let present = [0usize, 1, 2, 5, 6, 7];
    let correct_b = [171, 171, 171, 170, 170, 170];
    let (mut preds, mut tags) = (Vec::new(), Vec::new());
    for (j, &c) in present.iter().enumerate() {
        for (group, n, hits) in [("CSAI", 10, 4), ("Suspected CSAI", 500, correct_b[j])] {
            for i in 0..n {
                preds.push(pred(c, if i < hits { c } else { 4 }));
                tags.push(group.to_string());
            }
        }
    }
    let groups = ["CSAI".to_string(), "Suspected CSAI".to_string()];
    let reports = grouped_report(&classes, &preds, &tags, &groups)?;
    let ba: Vec<f64> = reports.iter().map(|r| r.balanced.value).collect();
    let excluded = &reports[0].balanced.excluded;
    let pass = acc == 0.775
        && (ba[0] - 0.400).abs() < 1e-12
        && (ba[1] - 0.341).abs() < 1e-12
        && excluded == &["classroom".to_string(), "dressing room".to_string()];
    verdict(
        pass,
        format!("accuracy {acc}; grouped balanced accuracy {:.3} / {:.3}; excluded {excluded:?}", ba[0], ba[1]),
    )
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> Result<Verdict> {
    let dir = tempfile::tempdir().map_err(|e| scene_ssl::Error::io("tempdir", e))?;
    let toy = generate_toy_scenes(&ToySceneSpec::default(), &dir.path().join("toy"))?;
    toy.save(&dir.path().join("toy/manifest.tsv"))?;
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke.toml");
    let text = fs::read_to_string(&path).map_err(|e| scene_ssl::Error::io(&path, e))?;
    let mut cfg = GridConfig::parse(&text)?;
    cfg.data.labeled = dir.path().join("toy/manifest.tsv");
    let mut tables = Vec::new();
    let mut times = Vec::new();
    for run in ["a", "b"] {
        let t = Instant::now();
        let opts = GridOptions { run_dir: dir.path().join(run), workers: workers(), resume: false };
        let out = run_grid(&cfg, &text, &opts)?;
        times.push(t.elapsed().as_secs_f64());
        if !out.failed().is_empty() {
            return verdict(false, format!("{} smoke cells failed", out.failed().len()));
        }
        let p = opts.run_dir.join("reports/runs.tsv");
        tables.push(fs::read(&p).map_err(|e| scene_ssl::Error::io(&p, e))?);
    }
    verdict(
        tables[0] == tables[1],
        format!(
            "smoke grid (2 variants × 2 folds × 1 rep) run twice: runs.tsv identical = {}; {:.0} s / {:.0} s on {} core(s)",
            tables[0] == tables[1],
            times[0],
            times[1],
            workers()
        ),
    )
}

// ---------------------------------------------------------------- 9

fn criterion_9() -> Result<Verdict> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../FIDELITY.md");
    let text = fs::read_to_string(&path).unwrap_or_default();
    let needles = ["71.6", "2.2", "3.1", "6.0", "98%", "97%", "96.2%", "not reproducible at desk scale"];
    let missing: Vec<&str> = needles.iter().copied().filter(|n| !text.contains(n)).collect();
    verdict(
        missing.is_empty(),
        if missing.is_empty() {
            "reference numbers recorded in FIDELITY.md (not gated)".to_string()
        } else {
            format!("FIDELITY.md lacks {missing:?}")
        },
    )
}

fn main() -> ExitCode {
    // With `--list` (used by test discovery) there is nothing to enumerate.
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let criteria: [(u8, &str, bool, fn() -> Result<Verdict>); 9] = [
        (1, "gradient correctness", true, criterion_1),
        (2, "closed-form loss anchors", true, criterion_2),
        (3, "sinkhorn marginals", true, criterion_3),
        (4, "dataset construction", true, criterion_4),
        (5, "end-to-end learning signal", true, criterion_5),
        (6, "BEST correctness", true, criterion_6),
        (7, "metric fixtures", true, criterion_7),
        (8, "determinism", true, criterion_8),
        (9, "reference numbers", false, criterion_9),
    ];
    let filter: Vec<u8> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut gated_failures = 0;
    for (n, name, gated, run) in criteria {
        if !filter.is_empty() && !filter.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let (pass, detail) = match run() {
            Ok(v) => (v.pass, v.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if gated && !pass {
            gated_failures += 1;
        }
        let label = if pass { "PASS" } else { "FAIL" };
        let gate = if gated { "" } else { " (not gated)" };
        println!("criterion {n} [{label}]{gate} {name}: {detail} ({:.1} s)", t.elapsed().as_secs_f64());
    }
    if gated_failures > 0 {
        println!("{gated_failures} gated criterion/criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
