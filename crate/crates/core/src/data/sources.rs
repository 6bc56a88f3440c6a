//! Pretext-pool composition and the OOD evaluation manifest.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::manifest::{ManifestRow, SampleManifest, Split};
use super::remap::PLACES8_CLASSES;
use super::split::largest_remainder;
use crate::error::{Error, Result};

/// Canonical pretext sources in reporting order.
pub const PRETEXT_SOURCE_ORDER: [&str; 4] = ["places", "interiornet", "hypersim", "openrooms"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PretextMode {
    /// Real photographs only.
    Real,
    /// Real and synthetic images.
    All,
}

impl PretextMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PretextMode::Real => "real",
            PretextMode::All => "all",
        }
    }
}

/// Rank of a source tag in the canonical order; unknown sources sort last.
fn source_rank(tag: &str) -> usize {
    let t = tag.to_ascii_lowercase();
    PRETEXT_SOURCE_ORDER
        .iter()
        .position(|s| t.starts_with(s))
        .unwrap_or(PRETEXT_SOURCE_ORDER.len())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SourceCount {
    pub source: String,
    pub synthetic: bool,
    pub rows: usize,
}

/// Merges source manifests into one pretext pool. `Real` keeps non-synthetic
/// rows only. The report lists sources in canonical order (places,
/// interiornet, hypersim, openrooms, then any other tag alphabetically).
pub fn compose_pretext(manifests: &[SampleManifest], mode: PretextMode) -> Result<(SampleManifest, Vec<SourceCount>)> {
    let mut rows = Vec::new();
    let mut counts: BTreeMap<(usize, String), SourceCount> = BTreeMap::new();
    for m in manifests {
        for r in &m.rows {
            if mode == PretextMode::Real && r.synthetic {
                continue;
            }
            let entry = counts
                .entry((source_rank(&r.source_tag), r.source_tag.clone()))
                .or_insert_with(|| SourceCount {
                    source: r.source_tag.clone(),
                    synthetic: r.synthetic,
                    rows: 0,
                });
            entry.rows += 1;
            entry.synthetic |= r.synthetic;
            rows.push(r.clone());
        }
    }
    if rows.is_empty() {
        return Err(Error::Data(format!(
            "pretext pool for mode `{}` is empty ({} input manifests)",
            mode.as_str(),
            manifests.len()
        )));
    }
    let name = format!("indoors.{}", mode.as_str());
    Ok((SampleManifest::new(name, rows), counts.into_values().collect()))
}

/// One OOD image source and its share of each class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OodSource {
    pub name: String,
    pub weight: usize,
}

/// The three OOD sources in a 4:3:3 ratio.
pub fn default_ood_sources() -> Vec<OodSource> {
    [("google", 4), ("bing", 3), ("dollar_street", 3)]
        .into_iter()
        .map(|(name, weight)| OodSource { name: name.into(), weight })
        .collect()
}

/// Candidate uris per `(class, source)`.
pub type OodListing = BTreeMap<(String, String), Vec<String>>;

/// Assembles the OOD evaluation set: for every Places8 class, `per_class`
/// images split across `sources` by largest remainder on the weights (10
/// images at 4:3:3 → 4/3/3). The first uris of each listing are taken. All
/// rows are tagged `val`.
pub fn make_ood_manifest(listing: &OodListing, sources: &[OodSource], per_class: usize) -> Result<SampleManifest> {
    let total: usize = sources.iter().map(|s| s.weight).sum();
    if sources.is_empty() || total == 0 {
        return Err(Error::Contract("OOD sources need positive weights".into()));
    }
    let weights: Vec<usize> = sources.iter().map(|s| s.weight).collect();
    let quotas = largest_remainder(&weights, per_class as f64 / total as f64);
    let mut rows = Vec::new();
    for class in PLACES8_CLASSES {
        for (src, &quota) in sources.iter().zip(&quotas) {
            let empty = Vec::new();
            let uris = listing.get(&(class.to_string(), src.name.clone())).unwrap_or(&empty);
            if uris.len() < quota {
                return Err(Error::Data(format!(
                    "class `{class}` needs {quota} images from source `{}`, only {} available",
                    src.name,
                    uris.len()
                )));
            }
            for uri in &uris[..quota] {
                let mut r = ManifestRow::raw(uri.clone(), class, Split::Val, src.name.clone(), false);
                r.mapped_class = Some(class.to_string());
                rows.push(r);
            }
        }
    }
    Ok(SampleManifest::new("ood-scenes", rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stub(source: &str, n: usize, synthetic: bool) -> SampleManifest {
        SampleManifest::new(
            source,
            (0..n)
                .map(|i| ManifestRow::raw(format!("{source}/{i}"), "bedroom", Split::None, source, synthetic))
                .collect(),
        )
    }

    #[test]
    fn real_and_all_modes() {
        let ms = [stub("hypersimStub", 50, true), stub("placesStub", 100, false)];
        let (real, _) = compose_pretext(&ms, PretextMode::Real).unwrap();
        assert_eq!(real.len(), 100);
        let (all, report) = compose_pretext(&ms, PretextMode::All).unwrap();
        assert_eq!(all.len(), 150);
        let order: Vec<&str> = report.iter().map(|s| s.source.as_str()).collect();
        assert_eq!(order, ["placesStub", "hypersimStub"]);
    }

    #[test]
    fn report_follows_canonical_order() {
        let ms = [
            stub("openrooms", 1, true),
            stub("hypersim", 1, true),
            stub("interiornet", 1, true),
            stub("places", 1, false),
        ];
        let (_, report) = compose_pretext(&ms, PretextMode::All).unwrap();
        let order: Vec<&str> = report.iter().map(|s| s.source.as_str()).collect();
        assert_eq!(order, PRETEXT_SOURCE_ORDER);
    }

    #[test]
    fn real_mode_without_real_rows_fails() {
        assert!(compose_pretext(&[stub("hypersim", 5, true)], PretextMode::Real).is_err());
    }

    fn listing(avail: usize) -> OodListing {
        let mut l = OodListing::new();
        for class in PLACES8_CLASSES {
            for s in default_ood_sources() {
                l.insert(
                    (class.to_string(), s.name.clone()),
                    (0..avail).map(|i| format!("{class}/{}/{i}.jpg", s.name)).collect(),
                );
            }
        }
        l
    }

    #[test]
    fn ood_manifest_has_80_rows_in_4_3_3() {
        let m = make_ood_manifest(&listing(5), &default_ood_sources(), 10).unwrap();
        assert_eq!(m.len(), 80);
        for class in PLACES8_CLASSES {
            let per: Vec<usize> = default_ood_sources()
                .iter()
                .map(|s| {
                    m.rows
                        .iter()
                        .filter(|r| r.mapped_class.as_deref() == Some(class) && r.source_tag == s.name)
                        .count()
                })
                .collect();
            assert_eq!(per, [4, 3, 3]);
        }
        assert!(m.rows.iter().all(|r| r.split == Split::Val));
    }

    #[test]
    fn short_source_names_class_and_source() {
        let mut l = listing(5);
        l.insert(("studio".into(), "google".into()), vec!["a".into(), "b".into(), "c".into()]);
        match make_ood_manifest(&l, &default_ood_sources(), 10) {
            Err(Error::Data(msg)) => assert!(msg.contains("studio") && msg.contains("google"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }
}
