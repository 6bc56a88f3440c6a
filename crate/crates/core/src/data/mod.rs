//! Manifest-driven dataset layer.
//!
//! Datasets are never accessed directly; every stage consumes a
//! [`SampleManifest`]. The Places8 pipeline is: remap the 23 original
//! categories onto 8 classes ([`remap_manifest`]), carve a stratified test
//! split out of the training pool ([`stratified_split`]), then fold the
//! remaining training rows ([`make_folds`]).

mod images;
mod manifest;
mod remap;
mod sources;
mod split;
mod store;
mod toy;

pub use images::{load_image, load_images, save_png, LoadReport};
pub use manifest::{ManifestRow, SampleManifest, Split, UNMAPPED};
pub use remap::{build_remap_table, remap_manifest, RemapReport, RemapTable, PLACES8_CLASSES, PLACES8_COUNTS};
pub use sources::{
    compose_pretext, default_ood_sources, make_ood_manifest, OodListing, OodSource, PretextMode, SourceCount,
    PRETEXT_SOURCE_ORDER,
};
pub use store::{ImageStore, LabeledSet};
pub use split::{largest_remainder, make_folds, stratified_split, Folds, SplitReport};
pub use toy::{
    generate_toy_objects, generate_toy_scenes, render_toy_object, render_toy_scene, ToySceneSpec, TOY_SOURCE,
    TOY_SYNTHETIC_SOURCE,
};
