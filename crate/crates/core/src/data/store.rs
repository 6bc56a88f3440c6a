//! In-memory image store keyed by manifest uri, and labeled views over it.

use std::collections::HashMap;
use std::path::Path;

use super::images::load_images;
use super::manifest::SampleManifest;
use crate::augment::Image;
use crate::error::{Error, Result};

/// Decoded images of one or more manifests, keyed by uri.
#[derive(Debug, Default)]
pub struct ImageStore {
    images: HashMap<String, Image>,
    /// (uri, reason) of rows that failed to decode.
    pub skipped: Vec<(String, String)>,
}

impl ImageStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Loads every row of `m` not already present. Uris are resolved against
    /// `base`; images are resized to `size` when given.
    pub fn load_manifest(&mut self, m: &SampleManifest, base: &Path, size: Option<(usize, usize)>, threads: usize) -> Result<()> {
        let mut uris: Vec<&str> = m.rows.iter().map(|r| r.uri.as_str()).filter(|u| !self.images.contains_key(*u)).collect();
        uris.sort_unstable();
        uris.dedup();
        let paths: Vec<_> = uris.iter().map(|u| SampleManifest::resolve(base, u)).collect();
        let report = load_images(&paths, size, threads)?;
        for (i, img) in report.images.into_iter().enumerate() {
            if let Some(img) = img {
                self.images.insert(uris[i].to_string(), img);
            }
        }
        for (i, reason) in report.skipped {
            self.skipped.push((uris[i].to_string(), reason));
        }
        Ok(())
    }

    pub fn insert(&mut self, uri: impl Into<String>, img: Image) {
        self.images.insert(uri.into(), img);
    }

    pub fn get(&self, uri: &str) -> Option<&Image> {
        self.images.get(uri)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Images with optional class ids, borrowed from an [`ImageStore`].
#[derive(Clone, Debug)]
pub struct LabeledSet<'a> {
    pub images: Vec<&'a Image>,
    pub labels: Vec<Option<usize>>,
    pub uris: Vec<String>,
    /// Class names indexed by label id.
    pub classes: Vec<String>,
}

impl<'a> LabeledSet<'a> {
    /// Rows `rows` of `m`. Rows whose image is missing from the store
    /// (undecodable) are dropped. Rows with a mapped class outside `classes`
    /// are an error.
    pub fn from_rows(m: &SampleManifest, rows: &[usize], store: &'a ImageStore, classes: &[String]) -> Result<LabeledSet<'a>> {
        let index: HashMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
        let mut set = LabeledSet { images: Vec::new(), labels: Vec::new(), uris: Vec::new(), classes: classes.to_vec() };
        let mut unknown: Vec<String> = Vec::new();
        for &i in rows {
            let row = &m.rows[i];
            let Some(img) = store.get(&row.uri) else { continue };
            let label = match &row.mapped_class {
                Some(c) => match index.get(c.as_str()) {
                    Some(&l) => Some(l),
                    None => {
                        if !unknown.contains(c) {
                            unknown.push(c.clone());
                        }
                        continue;
                    }
                },
                None => None,
            };
            set.images.push(img);
            set.labels.push(label);
            set.uris.push(row.uri.clone());
        }
        if !unknown.is_empty() {
            unknown.sort();
            return Err(Error::Data(format!(
                "classes not known to the model: {} (model classes: {})",
                unknown.join(", "),
                classes.join(", ")
            )));
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// True when every image carries a label.
    pub fn fully_labeled(&self) -> bool {
        self.labels.iter().all(Option::is_some)
    }
}
