//! Procedural toy scenes: a desk-scale stand-in for Places8 imagery.
//!
//! Class `c` is defined by three disjoint parameter ranges:
//!
//! * palette hue in `[c / n, c / n + 0.4 / n)` (n = class count),
//! * texture family `c mod 4`: stripes, checkerboard, rings, dot grid,
//! * spatial frequency band `(c / 4) mod 2`: 2–3.5 or 5–7 cycles per image.
//!
//! Orientation, phase, exact frequency, saturation, brightness and pixel
//! noise vary per image. Every image is a pure function of
//! `(seed, class, index)`.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::images::save_png;
use super::manifest::{ManifestRow, SampleManifest, Split};
use super::remap::{build_remap_table, PLACES8_CLASSES};
use crate::augment::Image;
use crate::error::{Error, Result};
use crate::numerics::Rng;

pub const TOY_SOURCE: &str = "toy";
pub const TOY_SYNTHETIC_SOURCE: &str = "toy-synthetic";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToySceneSpec {
    pub classes: usize,
    pub image_size: usize,
    pub per_class: usize,
    pub seed: u64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    /// Extra unlabeled images per class, tagged synthetic, for pretext pools.
    pub synthetic_per_class: usize,
}

impl Default for ToySceneSpec {
    fn default() -> Self {
        ToySceneSpec {
            classes: 8,
            image_size: 64,
            per_class: 120,
            seed: 0,
            val_fraction: 0.1,
            test_fraction: 0.2,
            synthetic_per_class: 0,
        }
    }
}

impl ToySceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.image_size < 8 || self.per_class < 3 {
            return Err(Error::Contract(
                "toy scenes need >= 2 classes, image_size >= 8 and per_class >= 3".into(),
            ));
        }
        if !(self.val_fraction >= 0.0 && self.test_fraction > 0.0 && self.val_fraction + self.test_fraction < 1.0) {
            return Err(Error::Contract("toy split fractions must be >= 0 and sum below 1".into()));
        }
        Ok(())
    }

    /// Class names: the Places8 names for up to 8 classes, `class<N>` beyond.
    pub fn class_names(&self) -> Vec<String> {
        (0..self.classes)
            .map(|c| match PLACES8_CLASSES.get(c) {
                Some(n) if self.classes <= PLACES8_CLASSES.len() => n.to_string(),
                _ => format!("class{c}"),
            })
            .collect()
    }

    /// Original (pre-remap) category per class: a Table II category that
    /// remaps onto the class name, so a toy listing survives the Places8
    /// remap; the class name itself for non-Places8 classes.
    pub fn original_categories(&self) -> Vec<String> {
        let table = build_remap_table();
        self.class_names()
            .into_iter()
            .map(|n| table.representative(&n).map_or(n.clone(), str::to_string))
            .collect()
    }
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let f = h6 - h6.floor();
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match h6.floor() as i32 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Renders image `index` of class `class`.
pub fn render_toy_scene(spec: &ToySceneSpec, class: usize, index: usize) -> Image {
    let mut rng = Rng::new(spec.seed).fork_path(&[class as u64, index as u64]);
    let n = spec.image_size;
    let k = spec.classes as f64;
    let hue = class as f64 / k + rng.range(0.0, 0.4 / k);
    let fg = hsv(hue, rng.range(0.5, 0.85), rng.range(0.75, 0.95));
    let bg = hsv(hue + 0.5 / k, rng.range(0.3, 0.6), rng.range(0.2, 0.4));
    let family = class % 4;
    let freq = if (class / 4) % 2 == 0 { rng.range(2.0, 3.5) } else { rng.range(5.0, 7.0) };
    let theta = rng.range(0.0, PI);
    let phase = rng.range(0.0, 2.0 * PI);
    let (cy, cx) = (rng.range(0.3, 0.7), rng.range(0.3, 0.7));
    let noise = 0.04;
    let mut data = vec![0.0f32; 3 * n * n];
    for y in 0..n {
        for x in 0..n {
            let u = x as f64 / n as f64;
            let v = y as f64 / n as f64;
            let (cs, sn) = (theta.cos(), theta.sin());
            let a = u * cs + v * sn;
            let b = -u * sn + v * cs;
            let w = match family {
                0 => 0.5 + 0.5 * (2.0 * PI * freq * a + phase).sin(),
                1 => {
                    let s = (2.0 * PI * freq * a + phase).sin() * (2.0 * PI * freq * b).sin();
                    if s >= 0.0 { 1.0 } else { 0.0 }
                }
                2 => {
                    let r = ((u - cx).powi(2) + (v - cy).powi(2)).sqrt();
                    0.5 + 0.5 * (2.0 * PI * freq * r + phase).sin()
                }
                _ => {
                    let fa = (freq * a + phase / (2.0 * PI)).fract() - 0.5;
                    let fb = (freq * b).fract() - 0.5;
                    if fa * fa + fb * fb < 0.09 { 1.0 } else { 0.0 }
                }
            };
            for c in 0..3 {
                let val = bg[c] + (fg[c] - bg[c]) * w + noise * rng.normal();
                data[(c * n + y) * n + x] = val.clamp(0.0, 1.0) as f32;
            }
        }
    }
    Image::new(3, n, n, data).expect("consistent extents")
}

fn slug(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

/// Writes the toy set as PNGs under `dir/images/` and returns its manifest
/// (uris relative to `dir`). Each class is split into test/val/train with
/// `round(per_class × fraction)` images, chosen by a seeded shuffle.
pub fn generate_toy_scenes(spec: &ToySceneSpec, dir: &Path) -> Result<SampleManifest> {
    spec.validate()?;
    let names = spec.class_names();
    let originals = spec.original_categories();
    let split_rng = Rng::new(spec.seed).fork(u64::MAX);
    let n_test = (spec.per_class as f64 * spec.test_fraction).round() as usize;
    let n_val = (spec.per_class as f64 * spec.val_fraction).round() as usize;
    let mut rows = Vec::new();
    for (c, (name, original)) in names.iter().zip(&originals).enumerate() {
        let sub = dir.join("images").join(slug(original));
        fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
        let mut order: Vec<usize> = (0..spec.per_class).collect();
        split_rng.fork(c as u64).shuffle(&mut order);
        let mut split_of = vec![Split::Train; spec.per_class];
        for &i in &order[..n_test] {
            split_of[i] = Split::Test;
        }
        for &i in &order[n_test..n_test + n_val] {
            split_of[i] = Split::Val;
        }
        for (i, split) in split_of.iter().enumerate() {
            let rel = format!("images/{}/{i:04}.png", slug(original));
            save_png(&render_toy_scene(spec, c, i), &dir.join(&rel))?;
            let mut r = ManifestRow::raw(rel, original.clone(), *split, TOY_SOURCE, false);
            r.mapped_class = Some(name.clone());
            rows.push(r);
        }
        for j in 0..spec.synthetic_per_class {
            let i = spec.per_class + j;
            let rel = format!("images/{}/s{j:04}.png", slug(original));
            save_png(&render_toy_scene(spec, c, i), &dir.join(&rel))?;
            rows.push(ManifestRow::raw(rel, original.clone(), Split::None, TOY_SYNTHETIC_SOURCE, true));
        }
    }
    let mut m = SampleManifest::new("toy-scenes", rows);
    m.seed = Some(spec.seed);
    Ok(m)
}

/// Object-centric toy images: one colored shape (disc, square or cross) on
/// a flat gray background. Stand-in for an object-centric pretext corpus.
pub fn render_toy_object(seed: u64, index: usize, size: usize) -> Image {
    let mut rng = Rng::new(seed).fork_path(&[u64::MAX - 1, index as u64]);
    let color = hsv(rng.uniform(), rng.range(0.5, 1.0), rng.range(0.6, 1.0));
    let gray = rng.range(0.3, 0.6);
    let shape = rng.below(3);
    let (cy, cx) = (rng.range(0.3, 0.7), rng.range(0.3, 0.7));
    let r = rng.range(0.12, 0.3);
    let mut data = vec![0.0f32; 3 * size * size];
    for y in 0..size {
        for x in 0..size {
            let du = x as f64 / size as f64 - cx;
            let dv = y as f64 / size as f64 - cy;
            let inside = match shape {
                0 => du * du + dv * dv < r * r,
                1 => du.abs() < r && dv.abs() < r,
                _ => (du.abs() < r && dv.abs() < r / 3.0) || (dv.abs() < r && du.abs() < r / 3.0),
            };
            for c in 0..3 {
                let v = if inside { color[c] } else { gray };
                data[(c * size + y) * size + x] = (v + 0.03 * rng.normal()).clamp(0.0, 1.0) as f32;
            }
        }
    }
    Image::new(3, size, size, data).expect("consistent extents")
}

/// Writes `count` object images under `dir/objects/` with an unlabeled
/// manifest (split `none`, source `objects`).
pub fn generate_toy_objects(seed: u64, count: usize, size: usize, dir: &Path) -> Result<SampleManifest> {
    let sub = dir.join("objects");
    fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
    let mut rows = Vec::with_capacity(count);
    for i in 0..count {
        let rel = format!("objects/{i:05}.png");
        save_png(&render_toy_object(seed, i, size), &dir.join(&rel))?;
        rows.push(ManifestRow::raw(rel, "object", Split::None, "objects", false));
    }
    let mut m = SampleManifest::new("toy-objects", rows);
    m.seed = Some(seed);
    Ok(m)
}
