//! Sample manifests: the dataset interface of the engine.
//!
//! File format (UTF-8, `\n` line endings):
//!
//! ```text
//! # dataset: <name>
//! # seed: <u64 or "none">
//! # table: <remap table fingerprint or "none">
//! # checksum: <16-hex sha256 of the row lines>
//! # columns: uri<TAB>original_category<TAB>mapped_class<TAB>split<TAB>source_tag<TAB>synthetic_flag
//! <row>
//! ...
//! ```
//!
//! `mapped_class` is `unmapped` for rows outside the remap table; `split` is
//! one of `train`, `val`, `test`, `none`; `synthetic_flag` is `0` or `1`.
//! Writing a parsed manifest reproduces the file byte for byte.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::fingerprint::short_hash;

pub const UNMAPPED: &str = "unmapped";
const COLUMNS: [&str; 6] = ["uri", "original_category", "mapped_class", "split", "source_tag", "synthetic_flag"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
    None,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            "none" => Some(Split::None),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRow {
    pub uri: String,
    pub original_category: String,
    /// `None` when the category is outside the remap table.
    pub mapped_class: Option<String>,
    pub split: Split,
    pub source_tag: String,
    pub synthetic: bool,
}

impl ManifestRow {
    /// A row that has not been remapped yet.
    pub fn raw(uri: impl Into<String>, category: impl Into<String>, split: Split, source: impl Into<String>, synthetic: bool) -> Self {
        ManifestRow {
            uri: uri.into(),
            original_category: category.into(),
            mapped_class: None,
            split,
            source_tag: source.into(),
            synthetic,
        }
    }

    fn line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.uri,
            self.original_category,
            self.mapped_class.as_deref().unwrap_or(UNMAPPED),
            self.split,
            self.source_tag,
            if self.synthetic { 1 } else { 0 }
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleManifest {
    pub dataset: String,
    pub seed: Option<u64>,
    /// Fingerprint of the remap table applied, if any.
    pub table: Option<String>,
    pub rows: Vec<ManifestRow>,
}

impl SampleManifest {
    pub fn new(dataset: impl Into<String>, rows: Vec<ManifestRow>) -> Self {
        SampleManifest {
            dataset: dataset.into(),
            seed: None,
            table: None,
            rows,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Checksum over the serialized row lines.
    pub fn checksum(&self) -> String {
        short_hash(self.body().as_bytes())
    }

    fn body(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            s.push_str(&r.line());
            s.push('\n');
        }
        s
    }

    /// Indices of rows in `split` that carry a mapped class.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.rows.len())
            .filter(|&i| self.rows[i].split == split && self.rows[i].mapped_class.is_some())
            .collect()
    }

    /// Mapped class names present, sorted.
    pub fn classes(&self) -> Vec<String> {
        let mut c: Vec<String> = self.rows.iter().filter_map(|r| r.mapped_class.clone()).collect();
        c.sort();
        c.dedup();
        c
    }

    /// Per-class row counts for `split` (all splits when `None`).
    pub fn class_counts(&self, split: Option<Split>) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for r in &self.rows {
            if let Some(c) = &r.mapped_class {
                if split.is_none_or(|s| s == r.split) {
                    *out.entry(c.clone()).or_insert(0) += 1;
                }
            }
        }
        out
    }

    fn validate_fields(&self) -> Result<()> {
        let bad = |s: &str| s.is_empty() || s.contains(['\t', '\n', '\r']);
        if self.dataset.contains(['\n', '\r']) {
            return Err(Error::Data("dataset name contains a line break".into()));
        }
        for (i, r) in self.rows.iter().enumerate() {
            for (name, v) in [("uri", &r.uri), ("original_category", &r.original_category), ("source_tag", &r.source_tag)] {
                if bad(v) {
                    return Err(Error::Data(format!("row {i}: {name} {v:?} is empty or contains a tab/line break")));
                }
            }
            if let Some(c) = &r.mapped_class {
                if bad(c) || c == UNMAPPED {
                    return Err(Error::Data(format!("row {i}: mapped class {c:?} is not representable")));
                }
            }
        }
        Ok(())
    }

    pub fn to_tsv(&self) -> Result<String> {
        self.validate_fields()?;
        let mut s = String::new();
        s.push_str(&format!("# dataset: {}\n", self.dataset));
        match self.seed {
            Some(seed) => s.push_str(&format!("# seed: {seed}\n")),
            None => s.push_str("# seed: none\n"),
        }
        s.push_str(&format!("# table: {}\n", self.table.as_deref().unwrap_or("none")));
        s.push_str(&format!("# checksum: {}\n", self.checksum()));
        s.push_str(&format!("# columns: {}\n", COLUMNS.join("\t")));
        s.push_str(&self.body());
        Ok(s)
    }

    pub fn parse(text: &str) -> Result<SampleManifest> {
        let perr = |line: usize, message: String| Error::Parse { what: "manifest", line, message };
        let mut dataset = None;
        let mut seed = None;
        let mut table = None;
        let mut checksum = None;
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            if let Some(h) = line.strip_prefix("# ") {
                let (key, value) = h
                    .split_once(": ")
                    .ok_or_else(|| perr(n, format!("header line `{line}` is not `# key: value`")))?;
                match key {
                    "dataset" => dataset = Some(value.to_string()),
                    "seed" => {
                        seed = Some(if value == "none" {
                            None
                        } else {
                            Some(value.parse::<u64>().map_err(|e| perr(n, format!("seed `{value}`: {e}")))?)
                        })
                    }
                    "table" => table = Some(if value == "none" { None } else { Some(value.to_string()) }),
                    "checksum" => checksum = Some(value.to_string()),
                    "columns" => {
                        if value != COLUMNS.join("\t") {
                            return Err(perr(n, format!("unexpected columns `{value}`")));
                        }
                    }
                    other => return Err(perr(n, format!("unknown header key `{other}`"))),
                }
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != COLUMNS.len() {
                return Err(perr(n, format!("expected {} tab-separated columns, found {}", COLUMNS.len(), cols.len())));
            }
            let split = Split::parse(cols[3]).ok_or_else(|| perr(n, format!("unknown split `{}`", cols[3])))?;
            let synthetic = match cols[5] {
                "0" => false,
                "1" => true,
                other => return Err(perr(n, format!("synthetic_flag must be 0 or 1, found `{other}`"))),
            };
            rows.push(ManifestRow {
                uri: cols[0].to_string(),
                original_category: cols[1].to_string(),
                mapped_class: (cols[2] != UNMAPPED).then(|| cols[2].to_string()),
                split,
                source_tag: cols[4].to_string(),
                synthetic,
            });
        }
        let m = SampleManifest {
            dataset: dataset.ok_or_else(|| perr(1, "missing `# dataset:` header".into()))?,
            seed: seed.unwrap_or(None),
            table: table.unwrap_or(None),
            rows,
        };
        if let Some(expected) = checksum {
            let found = m.checksum();
            if expected != found {
                return Err(Error::Data(format!(
                    "manifest `{}` checksum mismatch: header says {expected}, rows hash to {found}",
                    m.dataset
                )));
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = self.to_tsv()?;
        let tmp = path.with_extension("tsv.tmp");
        fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<SampleManifest> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        SampleManifest::parse(&text)
    }

    /// Resolves a row's uri against the directory holding the manifest.
    pub fn resolve(base: &Path, uri: &str) -> PathBuf {
        let p = Path::new(uri);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SampleManifest {
        let mut m = SampleManifest::new(
            "demo",
            vec![
                ManifestRow::raw("a/1.jpg", "bedroom", Split::Train, "places", false),
                ManifestRow::raw("a/2.jpg", "volcano", Split::Val, "places", false),
                ManifestRow::raw("b/3.png", "shower", Split::Test, "hypersim", true),
            ],
        );
        m.rows[0].mapped_class = Some("bedroom".into());
        m.rows[2].mapped_class = Some("bathroom".into());
        m.seed = Some(7);
        m.table = Some("abc".into());
        m
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = sample();
        let text = m.to_tsv().unwrap();
        let back = SampleManifest::parse(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_tsv().unwrap(), text);
    }

    #[test]
    fn checksum_detects_edits() {
        let text = sample().to_tsv().unwrap().replace("shower", "showers");
        assert!(matches!(SampleManifest::parse(&text), Err(Error::Data(_))));
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let text = "# dataset: x\nfoo\tbar\n";
        match SampleManifest::parse(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn tabs_in_fields_are_refused() {
        let mut m = sample();
        m.rows[0].uri = "a\tb".into();
        assert!(m.to_tsv().is_err());
    }
}
