//! Per-cell run records and their tab-separated table form.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Outcome of one grid cell (variant × repetition × fold).
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub variant: String,
    pub rep: usize,
    pub fold: usize,
    /// Fingerprint of the grid config and its input data.
    pub config: String,
    /// Fingerprint of the cell (config, data, variant, rep, fold).
    pub cell: String,
    pub status: RunStatus,
    pub balanced_acc: Option<f64>,
    pub accuracy: Option<f64>,
    /// Epoch kept by early stopping in the downstream stage.
    pub best_epoch: Option<usize>,
    /// Stages applied, oldest first, joined with `>`.
    pub lineage: String,
    /// Failure reason; empty on success.
    pub message: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunStatus {
    Completed,
    Failed,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Completed => "completed",
            RunStatus::Failed => "failed",
        }
    }
}

pub const RUN_COLUMNS: [&str; 11] = [
    "variant",
    "rep",
    "fold",
    "config",
    "cell",
    "status",
    "balanced_acc",
    "accuracy",
    "best_epoch",
    "lineage",
    "message",
];

/// Metric names accepted by [`RunRecord::metric`].
pub const METRICS: [&str; 2] = ["balanced_acc", "accuracy"];

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "-".to_string(), T::to_string)
}

fn clean(s: &str) -> String {
    s.replace(['\t', '\n', '\r'], " ")
}

impl RunRecord {
    pub fn metric(&self, name: &str) -> Result<Option<f64>> {
        match name {
            "balanced_acc" => Ok(self.balanced_acc),
            "accuracy" => Ok(self.accuracy),
            other => Err(Error::Contract(format!(
                "unknown metric `{other}`; available: {}",
                METRICS.join(", ")
            ))),
        }
    }

    pub fn is_completed(&self) -> bool {
        self.status == RunStatus::Completed
    }

    /// One table line, without trailing newline. Floats use the shortest
    /// representation that round-trips.
    pub fn tsv_line(&self) -> String {
        [
            clean(&self.variant),
            self.rep.to_string(),
            self.fold.to_string(),
            self.config.clone(),
            self.cell.clone(),
            self.status.as_str().to_string(),
            opt(&self.balanced_acc),
            opt(&self.accuracy),
            opt(&self.best_epoch),
            clean(&self.lineage),
            if self.message.is_empty() { "-".to_string() } else { clean(&self.message) },
        ]
        .join("\t")
    }

    pub fn parse_line(line: &str, line_no: usize) -> Result<RunRecord> {
        let err = |message: String| Error::Parse { what: "run table".into(), line: line_no, message };
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != RUN_COLUMNS.len() {
            return Err(err(format!("expected {} columns, found {}", RUN_COLUMNS.len(), f.len())));
        }
        let int = |s: &str, what: &str| s.parse::<usize>().map_err(|e| err(format!("bad {what} `{s}`: {e}")));
        let float = |s: &str, what: &str| -> Result<Option<f64>> {
            if s == "-" {
                Ok(None)
            } else {
                s.parse::<f64>().map(Some).map_err(|e| err(format!("bad {what} `{s}`: {e}")))
            }
        };
        let status = match f[5] {
            "completed" => RunStatus::Completed,
            "failed" => RunStatus::Failed,
            s => return Err(err(format!("bad status `{s}`"))),
        };
        Ok(RunRecord {
            variant: f[0].to_string(),
            rep: int(f[1], "rep")?,
            fold: int(f[2], "fold")?,
            config: f[3].to_string(),
            cell: f[4].to_string(),
            status,
            balanced_acc: float(f[6], "balanced_acc")?,
            accuracy: float(f[7], "accuracy")?,
            best_epoch: if f[8] == "-" { None } else { Some(int(f[8], "best_epoch")?) },
            lineage: f[9].to_string(),
            message: if f[10] == "-" { String::new() } else { f[10].to_string() },
        })
    }
}

/// Header line plus one line per record.
pub fn format_run_table(records: &[RunRecord]) -> String {
    let mut s = RUN_COLUMNS.join("\t");
    s.push('\n');
    for r in records {
        let _ = writeln!(s, "{}", r.tsv_line());
    }
    s
}

pub fn parse_run_table(text: &str) -> Result<Vec<RunRecord>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
    let Some((_, header)) = lines.next() else {
        return Err(Error::Parse { what: "run table".into(), line: 1, message: "empty table".into() });
    };
    if header.split('\t').collect::<Vec<_>>() != RUN_COLUMNS {
        return Err(Error::Parse {
            what: "run table".into(),
            line: 1,
            message: format!("header must be `{}`", RUN_COLUMNS.join("\\t")),
        });
    }
    lines.map(|(i, l)| RunRecord::parse_line(l, i + 1)).collect()
}
