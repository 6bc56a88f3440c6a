//! Plot-ready data: box summaries, learning-rate curves, confusion
//! percentages. Rendering is left to external tools.
//!
//! Quartiles use the median-unbiased estimator (Hyndman & Fan type 8) as
//! implemented by `statrs`; whiskers extend to the most extreme values
//! within 1.5 IQR of the box.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use scene_ssl::best::variant_names;
use scene_ssl::eval::ConfusionMatrix;
use scene_ssl::train::{cosine_restart_lr, parse_run_table, GridConfig, StageConfig};
use scene_ssl::{Error, Result};
use statrs::statistics::{Data, Max, Min, OrderStatistics};

use crate::commands::run_table_path;
use crate::{PlotArgs, PlotKind};

pub const BOX_COLUMNS: &str = "variant\tn\tmin\tq1\tmedian\tq3\tmax\twhisker_low\twhisker_high\toutliers";

/// One box-plot row: five-number summary plus Tukey whiskers.
pub fn box_row(name: &str, values: &[f64]) -> String {
    let mut d = Data::new(values.to_vec());
    let (q1, med, q3) = (d.lower_quartile(), d.median(), d.upper_quartile());
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside: Vec<f64> = values.iter().copied().filter(|v| (lo_fence..=hi_fence).contains(v)).collect();
    let wlo = inside.iter().copied().fold(f64::INFINITY, f64::min);
    let whi = inside.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    format!(
        "{name}\t{}\t{:.6}\t{q1:.6}\t{med:.6}\t{q3:.6}\t{:.6}\t{wlo:.6}\t{whi:.6}\t{}",
        values.len(),
        d.min(),
        d.max(),
        values.len() - inside.len()
    )
}

fn box_data(path: &Path, metric: &str) -> Result<String> {
    let path = run_table_path(path);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let records = parse_run_table(&text)?;
    let mut out = format!("{BOX_COLUMNS}\n");
    for name in variant_names(&records) {
        let mut values = Vec::new();
        for r in records.iter().filter(|r| r.variant == name && r.is_completed()) {
            if let Some(v) = r.metric(metric)? {
                values.push(v);
            }
        }
        if !values.is_empty() {
            out.push_str(&box_row(&name, &values));
            out.push('\n');
        }
    }
    Ok(out)
}

/// `stage epoch lr` rows from a per-epoch metrics table.
fn lr_from_metrics(path: &Path) -> Result<String> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split('\t').collect();
    let col = |name: &str| {
        header.iter().position(|h| *h == name).ok_or_else(|| Error::Parse {
            what: "metrics table",
            line: 1,
            message: format!("no `{name}` column"),
        })
    };
    let (stage, epoch, lr) = (col("stage")?, col("epoch")?, col("lr")?);
    let mut out = String::from("stage\tepoch\tlr\n");
    for (i, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() != header.len() {
            return Err(Error::Parse { what: "metrics table", line: i + 2, message: "column count mismatch".into() });
        }
        let _ = writeln!(out, "{}\t{}\t{}", cells[stage], cells[epoch], cells[lr]);
    }
    Ok(out)
}

/// Scheduled learning rate of a stage, `points` samples per epoch.
pub fn lr_from_stage(tag: &str, stage: &StageConfig, points: usize) -> String {
    let points = points.max(1);
    let mut out = String::from("stage\tepoch\tlr\n");
    for i in 0..stage.epochs * points {
        let t = i as f64 / points as f64;
        let lr = cosine_restart_lr(t, stage.epochs, stage.lars.base_lr, &stage.schedule);
        let _ = writeln!(out, "{tag}\t{t}\t{lr}");
    }
    out
}

fn confusion_files(path: &Path) -> Result<Vec<PathBuf>> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files = Vec::new();
    for entry in walkdir::WalkDir::new(path).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::Data(format!("walking {}: {e}", path.display())))?;
        if entry.file_type().is_file() && entry.file_name().to_string_lossy().ends_with(".confusion.tsv") {
            files.push(entry.into_path());
        }
    }
    if files.is_empty() {
        return Err(Error::Data(format!("no *.confusion.tsv files under {}", path.display())));
    }
    Ok(files)
}

fn confusion_data(path: &Path) -> Result<String> {
    let mut total: Option<ConfusionMatrix> = None;
    for f in confusion_files(path)? {
        let text = fs::read_to_string(&f).map_err(|e| Error::io(&f, e))?;
        let cm = ConfusionMatrix::parse_counts_tsv(&text)?;
        match &mut total {
            Some(t) => t.merge(&cm)?,
            None => total = Some(cm),
        }
    }
    Ok(total.expect("at least one file").percent_tsv())
}

pub fn plotdata(a: &PlotArgs) -> Result<ExitCode> {
    let need_results = || {
        a.results
            .as_deref()
            .ok_or_else(|| Error::Contract("--results is required for this kind".into()))
    };
    let out = match a.kind {
        PlotKind::Box => box_data(need_results()?, &a.metric)?,
        PlotKind::Confusion => confusion_data(need_results()?)?,
        PlotKind::LrCurve => match &a.config {
            Some(cfg_path) => {
                let (cfg, _) = GridConfig::load(cfg_path)?;
                let stage = match a.stage.as_str() {
                    "pretext" => &cfg.pretext,
                    "object" => cfg.object_stage(),
                    "downstream" => &cfg.downstream,
                    other => {
                        return Err(Error::Contract(format!(
                            "unknown stage `{other}` (pretext, object, downstream)"
                        )))
                    }
                };
                lr_from_stage(&a.stage, stage, a.points_per_epoch)
            }
            None => lr_from_metrics(need_results()?)?,
        },
    };
    print!("{out}");
    Ok(ExitCode::SUCCESS)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_row_of_one_to_nine() {
        let v: Vec<f64> = (1..=9).map(f64::from).collect();
        let row = box_row("x", &v);
        let cells: Vec<&str> = row.split('\t').collect();
        assert_eq!(cells[1], "9");
        assert_eq!(cells[2], "1.000000");
        assert_eq!(cells[4], "5.000000");
        assert_eq!(cells[6], "9.000000");
        assert_eq!(cells[9], "0");
    }

    #[test]
    fn box_row_flags_outliers() {
        let v = [1.0, 2.0, 3.0, 4.0, 100.0];
        let cells: Vec<String> = box_row("x", &v).split('\t').map(str::to_string).collect();
        assert_eq!(cells[8], "4.000000");
        assert_eq!(cells[9], "1");
    }
}
