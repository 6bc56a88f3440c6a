//! The frozen Places365 → Places8 category table.

use std::collections::BTreeMap;

use super::manifest::{SampleManifest, Split};
use crate::error::{Error, Result};
use crate::fingerprint::hash_parts;

/// Places8 classes, in table order.
pub const PLACES8_CLASSES: [&str; 8] = [
    "bathroom",
    "bedroom",
    "child's room",
    "classroom",
    "dressing room",
    "living room",
    "studio",
    "swimming pool",
];

/// (class, original categories) in table order.
const TABLE: [(&str, &[&str]); 8] = [
    ("bathroom", &["bathroom", "shower"]),
    ("bedroom", &["bedchamber", "bedroom", "hotel room", "berth", "dorm room", "youth hostel"]),
    ("child's room", &["child's room", "nursery", "playroom"]),
    ("classroom", &["classroom", "kindergarden classroom"]),
    ("dressing room", &["closet", "dressing room"]),
    (
        "living room",
        &["home theater", "living room", "recreation room", "television room", "waiting room"],
    ),
    ("studio", &["television studio"]),
    ("swimming pool", &["jacuzzi", "swimming pool"]),
];

/// Published per-class (test, train, val) counts of Places8, in table order.
pub const PLACES8_COUNTS: [(&str, usize, usize, usize); 8] = [
    ("bathroom", 5_740, 51_655, 200),
    ("bedroom", 11_112, 100_012, 600),
    ("child's room", 4_650, 41_849, 300),
    ("classroom", 3_751, 33_763, 200),
    ("dressing room", 2_432, 21_889, 200),
    ("living room", 9_940, 89_458, 500),
    ("studio", 1_404, 12_633, 100),
    ("swimming pool", 1_505, 13_547, 200),
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RemapTable {
    map: BTreeMap<String, String>,
    classes: Vec<String>,
}

pub fn build_remap_table() -> RemapTable {
    let mut map = BTreeMap::new();
    for (class, originals) in TABLE {
        for o in originals {
            let prev = map.insert(o.to_string(), class.to_string());
            debug_assert!(prev.is_none(), "duplicate original category {o}");
        }
    }
    RemapTable {
        map,
        classes: PLACES8_CLASSES.iter().map(|s| s.to_string()).collect(),
    }
}

impl RemapTable {
    pub fn get(&self, original: &str) -> Option<&str> {
        self.map.get(original).map(String::as_str)
    }

    /// Target classes in table order.
    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn originals(&self) -> impl Iterator<Item = (&str, &str)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Maps a raw listing category (e.g. a Places365 directory name such as
    /// `childs_room` or `swimming_pool/indoor`) onto the table's spelling.
    /// Comparison ignores case and every non-alphanumeric character; a
    /// qualified sub-category (`swimming_pool/indoor`) falls back to its
    /// parent. Unknown categories are returned with `_` and `/` turned into
    /// spaces.
    pub fn canonical_category(&self, raw: &str) -> String {
        let key = |s: &str| -> String { s.chars().filter(|c| c.is_alphanumeric()).flat_map(char::to_lowercase).collect() };
        let find = |k: &str| self.map.keys().find(|o| key(o) == k).cloned();
        let trimmed = raw.trim_matches('/');
        if let Some(o) = find(&key(trimmed)) {
            return o;
        }
        if let Some((parent, _)) = trimmed.split_once('/') {
            if let Some(o) = find(&key(parent)) {
                return o;
            }
        }
        trimmed.replace(['_', '/'], " ")
    }

    /// The original category a class is best represented by: the class
    /// name itself when it is an original category, else its first listed
    /// original.
    pub fn representative(&self, class: &str) -> Option<&str> {
        if self.get(class) == Some(class) {
            return Some(self.map.get_key_value(class)?.0.as_str());
        }
        TABLE
            .iter()
            .find(|(c, _)| *c == class)
            .and_then(|(_, originals)| originals.first().copied())
    }

    pub fn fingerprint(&self) -> String {
        let parts: Vec<String> = self.map.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let refs: Vec<&str> = parts.iter().map(String::as_str).collect();
        hash_parts(&refs)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RemapReport {
    pub class_counts: BTreeMap<String, usize>,
    pub unmapped: usize,
}

/// Applies `table` to every row's original category. Rows outside the table
/// are kept, marked unmapped and taken out of every split.
pub fn remap_manifest(m: &SampleManifest, table: &RemapTable) -> Result<(SampleManifest, RemapReport)> {
    let mut out = m.clone();
    let mut report = RemapReport::default();
    for row in &mut out.rows {
        match table.get(&row.original_category) {
            Some(class) => {
                row.mapped_class = Some(class.to_string());
                *report.class_counts.entry(class.to_string()).or_insert(0) += 1;
            }
            None => {
                row.mapped_class = None;
                row.split = Split::None;
                report.unmapped += 1;
            }
        }
    }
    if report.class_counts.is_empty() {
        return Err(Error::Data(format!(
            "no row of `{}` ({} rows) matches the remap table; wrong dataset?",
            m.dataset,
            m.rows.len()
        )));
    }
    out.table = Some(table.fingerprint());
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::manifest::ManifestRow;

    #[test]
    fn table_has_23_categories_and_8_classes() {
        let t = build_remap_table();
        assert_eq!(t.len(), 23);
        let mut targets: Vec<&str> = t.originals().map(|(_, c)| c).collect();
        targets.sort();
        targets.dedup();
        assert_eq!(targets.len(), 8);
    }

    #[test]
    fn published_examples() {
        let t = build_remap_table();
        assert_eq!(t.get("hotel room"), Some("bedroom"));
        assert_eq!(t.get("kindergarden classroom"), Some("classroom"));
        assert_eq!(t.get("television studio"), Some("studio"));
        assert_eq!(t.get("shower"), Some("bathroom"));
        assert_eq!(t.get("jacuzzi"), Some("swimming pool"));
        assert_eq!(t.get("nursery"), Some("child's room"));
        assert_eq!(t.get("volcano"), None);
    }

    #[test]
    fn places365_directory_names_canonicalize() {
        let t = build_remap_table();
        assert_eq!(t.canonical_category("childs_room"), "child's room");
        assert_eq!(t.canonical_category("/kindergarden_classroom"), "kindergarden classroom");
        assert_eq!(t.canonical_category("swimming_pool/indoor"), "swimming pool");
        assert_eq!(t.canonical_category("jacuzzi/indoor"), "jacuzzi");
        assert_eq!(t.canonical_category("volcano"), "volcano");
        assert_eq!(t.canonical_category("art_gallery"), "art gallery");
        assert_eq!(t.representative("studio"), Some("television studio"));
        assert_eq!(t.representative("bedroom"), Some("bedroom"));
        assert_eq!(t.representative("kitchen"), None);
    }

    #[test]
    fn three_row_example() {
        let m = SampleManifest::new(
            "x",
            vec![
                ManifestRow::raw("1", "bedroom", Split::Train, "places", false),
                ManifestRow::raw("2", "shower", Split::Train, "places", false),
                ManifestRow::raw("3", "volcano", Split::Train, "places", false),
            ],
        );
        let (out, report) = remap_manifest(&m, &build_remap_table()).unwrap();
        assert_eq!(report.unmapped, 1);
        assert_eq!(out.rows[0].mapped_class.as_deref(), Some("bedroom"));
        assert_eq!(out.rows[1].mapped_class.as_deref(), Some("bathroom"));
        assert_eq!(out.rows[2].mapped_class, None);
        assert_eq!(out.rows[2].split, Split::None);
        let (again, _) = remap_manifest(&out, &build_remap_table()).unwrap();
        assert_eq!(again, out);
    }

    #[test]
    fn nothing_mapped_is_an_error() {
        let m = SampleManifest::new("x", vec![ManifestRow::raw("1", "volcano", Split::Train, "p", false)]);
        assert!(matches!(remap_manifest(&m, &build_remap_table()), Err(Error::Data(_))));
    }
}
