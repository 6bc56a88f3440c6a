//! Reading raw image listings into unmapped manifests.

use std::fs;
use std::path::{Path, PathBuf};

use scene_ssl::data::{ManifestRow, RemapTable, SampleManifest, Split};
use scene_ssl::{Error, Result};

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];
pub const LISTING_SOURCE: &str = "places";

/// Absolute form of `p` without touching the filesystem.
pub fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).map_err(|e| Error::io(p, e))
}

/// `path` relative to `base` when it lies below it, else absolute.
pub fn relative_uri(path: &Path, base: &Path) -> String {
    let rel = path.strip_prefix(base).unwrap_or(path);
    rel.to_string_lossy().replace('\\', "/")
}

/// Category path of an image relative to its listing root: drops the file
/// name and a leading one-letter bucket directory (`b/bedroom/x.jpg`).
fn category_path(rel: &str) -> Option<String> {
    let mut parts: Vec<&str> = rel.trim_start_matches('/').split('/').filter(|s| !s.is_empty()).collect();
    parts.pop()?;
    if parts.len() > 1 && parts[0].len() == 1 {
        parts.remove(0);
    }
    (!parts.is_empty()).then(|| parts.join("/"))
}

/// Reads `listing` into a manifest whose uris are absolute paths. Raw rows
/// carry canonicalized categories, split `train` and no class. An existing
/// manifest is returned as is (uris resolved).
pub fn read_listing(listing: &Path, table: &RemapTable) -> Result<SampleManifest> {
    let listing = absolute(listing)?;
    if listing.is_dir() {
        return read_directory(&listing, table);
    }
    let text = fs::read_to_string(&listing).map_err(|e| Error::io(&listing, e))?;
    let base = listing.parent().unwrap_or(Path::new("/"));
    if text.starts_with("# dataset:") {
        let mut m = SampleManifest::parse(&text)?;
        for r in &mut m.rows {
            r.uri = SampleManifest::resolve(base, &r.uri).to_string_lossy().into_owned();
        }
        return Ok(m);
    }
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let path = line.split_whitespace().next().unwrap_or(line);
        let category = category_path(path).ok_or_else(|| Error::Parse {
            what: "listing",
            line: i + 1,
            message: format!("`{path}` has no category directory"),
        })?;
        let abs = base.join(path.trim_start_matches('/'));
        rows.push(ManifestRow::raw(
            abs.to_string_lossy().into_owned(),
            table.canonical_category(&category),
            Split::Train,
            LISTING_SOURCE,
            false,
        ));
    }
    finish(&listing, rows)
}

fn read_directory(root: &Path, table: &RemapTable) -> Result<SampleManifest> {
    let mut rows = Vec::new();
    for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::Data(format!("walking {}: {e}", root.display())))?;
        let p = entry.path();
        let is_image = p
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if !entry.file_type().is_file() || !is_image {
            continue;
        }
        let Some(category) = category_path(&relative_uri(p, root)) else {
            log::warn!("skipping {}: no category directory", p.display());
            continue;
        };
        rows.push(ManifestRow::raw(
            p.to_string_lossy().into_owned(),
            table.canonical_category(&category),
            Split::Train,
            LISTING_SOURCE,
            false,
        ));
    }
    finish(root, rows)
}

fn finish(listing: &Path, rows: Vec<ManifestRow>) -> Result<SampleManifest> {
    if rows.is_empty() {
        return Err(Error::Data(format!("listing {} contains no images", listing.display())));
    }
    let name = listing.file_stem().map_or("listing".into(), |s| s.to_string_lossy().into_owned());
    Ok(SampleManifest::new(name, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn category_paths() {
        assert_eq!(category_path("/b/bedroom/0001.jpg").as_deref(), Some("bedroom"));
        assert_eq!(category_path("s/swimming_pool/indoor/1.jpg").as_deref(), Some("swimming_pool/indoor"));
        assert_eq!(category_path("nursery/1.png").as_deref(), Some("nursery"));
        assert_eq!(category_path("1.png"), None);
    }
}
