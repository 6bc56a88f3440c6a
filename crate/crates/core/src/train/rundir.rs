//! On-disk layout of a grid run.
//!
//! ```text
//! <root>/
//!   MANIFEST            index: path, bytes, content hash, config fingerprint
//!   config/             grid config copy and its fingerprint
//!   manifests/          input manifests and the fold assignment
//!   checkpoints/        final checkpoints per cell, shared object-pretext checkpoints
//!   metrics/            per-epoch metric streams
//!   reports/            run table, summary table, per-cell evaluation reports
//!     records/          one committed record per finished cell (resume state)
//! ```

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::fingerprint::short_hash;

pub const RUN_DIRS: [&str; 5] = ["config", "checkpoints", "metrics", "reports", "manifests"];
pub const INDEX_FILE: &str = "MANIFEST";
/// Environment variable naming the default run directory.
pub const RUN_DIR_ENV: &str = "SCENESSL_RUN_DIR";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RunDirectory {
    pub root: PathBuf,
}

impl RunDirectory {
    /// Opens `root`, creating the layout when missing.
    pub fn create(root: impl Into<PathBuf>) -> Result<RunDirectory> {
        let root = root.into();
        for d in RUN_DIRS.iter().copied().chain(["reports/records"]) {
            let p = root.join(d);
            fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        Ok(RunDirectory { root })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Writes `bytes` to `rel` through a temporary file and a rename, so a
    /// reader never observes a partial file.
    pub fn write_atomic(&self, rel: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(rel);
        write_atomic(&path, bytes)?;
        Ok(path)
    }

    /// Rewrites the index of every file under the root (except the index
    /// itself and temporary files), sorted by path.
    pub fn write_index(&self, config_fingerprint: &str) -> Result<()> {
        let mut files = Vec::new();
        collect_files(&self.root, &self.root, &mut files)?;
        files.sort();
        let mut s = String::from("path\tbytes\tcontent_hash\tconfig\n");
        for rel in files {
            if rel == INDEX_FILE || rel.ends_with(".tmp") {
                continue;
            }
            let p = self.root.join(&rel);
            let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
            s.push_str(&format!("{rel}\t{}\t{}\t{config_fingerprint}\n", bytes.len(), short_hash(&bytes)));
        }
        self.write_atomic(INDEX_FILE, s.as_bytes())?;
        Ok(())
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let p = entry.path();
        if p.is_dir() {
            collect_files(root, &p, out)?;
        } else if let Ok(rel) = p.strip_prefix(root) {
            out.push(rel.to_string_lossy().replace('\\', "/"));
        }
    }
    Ok(())
}
