use scene_ssl::best::{
    compare_variants, hdi, log_posterior, prior_bounds, report_tsv, sample_posterior, BestConfig, BestParams, BestPriors,
    FixedScale, Pooling, Verdict,
};
use scene_ssl::train::{RunRecord, RunStatus};
use scene_ssl::Rng;
use statrs::distribution::{Continuous, Normal, StudentsT};

fn normal_sample(seed: u64, mean: f64, sd: f64, n: usize) -> Vec<f64> {
    let mut rng = Rng::new(seed);
    (0..n).map(|_| mean + sd * rng.normal()).collect()
}

fn avg(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// The same densities evaluated through statrs.
fn oracle_log_posterior(p: &BestParams, y1: &[f64], y2: &[f64]) -> f64 {
    let pooled: Vec<f64> = y1.iter().chain(y2).copied().collect();
    let m = avg(&pooled);
    let s = (pooled.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (pooled.len() - 1) as f64).sqrt();
    let mu_prior = Normal::new(m, 1000.0 * s).unwrap();
    let (lo, hi) = (s / 1000.0, 1000.0 * s);
    let exp_prior = statrs::distribution::Exp::new(1.0 / 29.0).unwrap();
    let t1 = StudentsT::new(p.mu1, p.sigma1, p.nu).unwrap();
    let t2 = StudentsT::new(p.mu2, p.sigma2, p.nu).unwrap();
    mu_prior.ln_pdf(p.mu1)
        + mu_prior.ln_pdf(p.mu2)
        - 2.0 * (hi - lo).ln()
        + exp_prior.ln_pdf(p.nu - 1.0)
        + y1.iter().map(|&y| t1.ln_pdf(y)).sum::<f64>()
        + y2.iter().map(|&y| t2.ln_pdf(y)).sum::<f64>()
}

#[test]
fn log_posterior_matches_statrs_densities() {
    let y1 = [0.71, 0.69, 0.74, 0.70, 0.72];
    let y2 = [0.66, 0.70, 0.68, 0.65, 0.69, 0.67];
    for p in [
        BestParams { mu1: 0.71, mu2: 0.68, sigma1: 0.02, sigma2: 0.03, nu: 4.5 },
        BestParams { mu1: 0.5, mu2: 0.9, sigma1: 0.2, sigma2: 0.01, nu: 1.2 },
        BestParams { mu1: 0.7, mu2: 0.7, sigma1: 0.05, sigma2: 0.05, nu: 80.0 },
    ] {
        let ours = log_posterior(&p, &y1, &y2, &BestPriors::default()).unwrap();
        let oracle = oracle_log_posterior(&p, &y1, &y2);
        assert!((ours - oracle).abs() < 1e-9 * oracle.abs().max(1.0), "{ours} vs {oracle}");
    }
}

#[test]
fn log_posterior_is_symmetric_under_group_swap() {
    let y1 = [0.71, 0.69, 0.74, 0.70];
    let y2 = [0.66, 0.70, 0.68, 0.65];
    let p = BestParams { mu1: 0.7, mu2: 0.67, sigma1: 0.02, sigma2: 0.03, nu: 6.0 };
    let q = BestParams { mu1: p.mu2, mu2: p.mu1, sigma1: p.sigma2, sigma2: p.sigma1, nu: p.nu };
    let a = log_posterior(&p, &y1, &y2, &BestPriors::default()).unwrap();
    let b = log_posterior(&q, &y2, &y1, &BestPriors::default()).unwrap();
    assert!((a - b).abs() < 1e-12);
}

/// Posterior mean of μ₁−μ₂ with σ and ν fixed, by dense 2-D grid integration.
fn grid_posterior_mean_diff(y1: &[f64], y2: &[f64], fixed: FixedScale) -> f64 {
    let b = prior_bounds(y1, y2, &BestPriors::default()).unwrap();
    let prior = Normal::new(b.mu_mean, b.mu_sd).unwrap();
    let t1 = |mu: f64| {
        let t = StudentsT::new(mu, fixed.sigma1, fixed.nu).unwrap();
        y1.iter().map(|&y| t.ln_pdf(y)).sum::<f64>() + prior.ln_pdf(mu)
    };
    let t2 = |mu: f64| {
        let t = StudentsT::new(mu, fixed.sigma2, fixed.nu).unwrap();
        y2.iter().map(|&y| t.ln_pdf(y)).sum::<f64>() + prior.ln_pdf(mu)
    };
    let n = 1201;
    let axis = |center: f64, width: f64| -> Vec<f64> {
        (0..n).map(|i| center - width + 2.0 * width * i as f64 / (n - 1) as f64).collect()
    };
    let g1 = axis(avg(y1), 10.0 * fixed.sigma1);
    let g2 = axis(avg(y2), 10.0 * fixed.sigma2);
    let l1: Vec<f64> = g1.iter().map(|&m| t1(m)).collect();
    let l2: Vec<f64> = g2.iter().map(|&m| t2(m)).collect();
    let peak = l1.iter().cloned().fold(f64::MIN, f64::max) + l2.iter().cloned().fold(f64::MIN, f64::max);
    let (mut z, mut e) = (0.0, 0.0);
    for (i, &m1) in g1.iter().enumerate() {
        for (j, &m2) in g2.iter().enumerate() {
            let w = (l1[i] + l2[j] - peak).exp();
            z += w;
            e += w * (m1 - m2);
        }
    }
    e / z
}

#[test]
fn clamped_scale_posterior_mean_agrees_with_grid_oracle() {
    let y1 = [0.71, 0.69, 0.74, 0.70, 0.72];
    let y2 = [0.66, 0.70, 0.68, 0.65, 0.69];
    let fixed = FixedScale { sigma1: 0.02, sigma2: 0.02, nu: 10.0 };
    let oracle = grid_posterior_mean_diff(&y1, &y2, fixed);
    let cfg = BestConfig { fixed: Some(fixed), seed: 11, ..BestConfig::default() };
    let post = sample_posterior(&y1, &y2, &cfg).unwrap();
    assert!((post.mean_diff - oracle).abs() < 1e-3, "mcmc {} grid {oracle}", post.mean_diff);
    assert!(post.rhat_max < 1.05 && post.ess_min > 400.0, "{:?}", post.diagnostics);
}

#[test]
fn shifted_normal_groups_recover_the_sample_difference() {
    let a = normal_sample(70, 0.70, 0.02, 15);
    let b = normal_sample(72, 0.72, 0.02, 15);
    let post = sample_posterior(&a, &b, &BestConfig { seed: 5, ..BestConfig::default() }).unwrap();
    let sample_diff = avg(&a) - avg(&b);
    assert!((post.mean_diff - sample_diff).abs() <= 0.005, "{} vs {sample_diff}", post.mean_diff);
    assert!(post.converged && post.rhat_max < 1.05 && post.ess_min > 400.0, "{:?}", post.diagnostics);
}

#[test]
fn identical_groups_are_undecided() {
    let a = normal_sample(1, 0.75, 0.03, 15);
    let post = sample_posterior(&a, &a, &BestConfig { seed: 2, ..BestConfig::default() }).unwrap();
    assert!((0.45..=0.55).contains(&post.p_direction), "P = {}", post.p_direction);
    assert!(post.hdi.0 < 0.0 && post.hdi.1 > 0.0);
    let inner = post.hdi_of(0.5).unwrap();
    assert!(post.hdi.0 <= inner.0 && inner.1 <= post.hdi.1);
}

#[test]
fn location_shift_and_group_swap() {
    let a = normal_sample(3, 0.70, 0.02, 15);
    let b = normal_sample(4, 0.70, 0.02, 15);
    let cfg = BestConfig { seed: 9, ..BestConfig::default() };
    let base = sample_posterior(&a, &b, &cfg).unwrap();
    let sd = (base.diff.iter().map(|d| (d - base.mean_diff).powi(2)).sum::<f64>() / base.diff.len() as f64).sqrt();
    let mc_se = sd / base.diagnostics["diff"].ess.sqrt();
    let shifted: Vec<f64> = a.iter().map(|v| v + 0.03).collect();
    let moved = sample_posterior(&shifted, &b, &cfg).unwrap();
    assert!(
        (moved.mean_diff - base.mean_diff - 0.03).abs() < 3.0 * mc_se * 2f64.sqrt(),
        "shift {} vs {}",
        moved.mean_diff - base.mean_diff,
        0.03
    );
    let swapped = sample_posterior(&b, &a, &cfg).unwrap();
    assert!((swapped.mean_diff + base.mean_diff).abs() < 3.0 * mc_se * 2f64.sqrt());
}

#[test]
fn hdi_of_normal_draws_matches_quantiles() {
    let d = normal_sample(8, 0.0, 1.0, 40_000);
    let (lo, hi) = hdi(&d, 0.95).unwrap();
    assert!((lo + 1.96).abs() < 0.05 && (hi - 1.96).abs() < 0.05, "{lo} {hi}");
}

fn records(variant: &str, values: &[f64]) -> Vec<RunRecord> {
    values
        .iter()
        .enumerate()
        .map(|(i, &v)| RunRecord {
            variant: variant.into(),
            rep: i / 5,
            fold: i % 5,
            config: "cfg".into(),
            cell: format!("{variant}{i}"),
            status: RunStatus::Completed,
            balanced_acc: Some(v),
            accuracy: Some(v),
            best_epoch: None,
            lineage: "downstream".into(),
            message: String::new(),
        })
        .collect()
}

#[test]
fn compare_variants_on_shifted_copies() {
    let base = normal_sample(21, 0.70, 0.03, 15);
    let shifted: Vec<f64> = base.iter().map(|v| v + 0.05).collect();
    let mut recs = records("b", &base);
    recs.extend(records("a", &shifted));
    let cfg = BestConfig { seed: 4, ..BestConfig::default() };
    let cmp = compare_variants(&recs, "a", "b", "balanced_acc", Pooling::Pooled, &cfg).unwrap();
    assert_eq!(cmp.n, 15);
    assert!((0.035..=0.065).contains(&cmp.summary.mean_diff), "{}", cmp.summary.mean_diff);
    assert!(cmp.summary.p_direction > 0.95);
    let verdict = cmp.verdict();
    assert_eq!(Verdict::parse(&verdict.to_string()).unwrap().a, "a");
    assert!(report_tsv(&[cmp]).lines().nth(1).unwrap().starts_with("a vs b\t"));

    let folded = compare_variants(&recs, "a", "b", "balanced_acc", Pooling::FoldAveraged, &cfg).unwrap();
    assert_eq!(folded.n, 5);

    let same = compare_variants(&recs, "b", "b", "balanced_acc", Pooling::Pooled, &cfg).unwrap();
    assert!((0.45..=0.55).contains(&same.summary.p_direction));
}

#[test]
fn compare_variants_reports_missing_cells_and_names() {
    let base = normal_sample(22, 0.70, 0.03, 15);
    let mut recs = records("b", &base);
    let mut a = records("a", &base);
    a[7].status = RunStatus::Failed;
    a.remove(3);
    recs.extend(a);
    let cfg = BestConfig::default();
    let err = compare_variants(&recs, "a", "b", "balanced_acc", Pooling::Pooled, &cfg).unwrap_err().to_string();
    assert!(err.contains("a rep 0 fold 3") && err.contains("a rep 1 fold 2"), "{err}");
    let err = compare_variants(&recs, "a", "zzz", "balanced_acc", Pooling::Pooled, &cfg).unwrap_err().to_string();
    assert!(err.contains("available: a, b"), "{err}");
}
