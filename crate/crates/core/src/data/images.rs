//! Image decoding (PNG/JPEG) into `[0, 1]` float images.

use std::path::{Path, PathBuf};

use image::ImageReader;
use rayon::prelude::*;

use crate::augment::{resize_bilinear, Image};
use crate::error::{Error, Result};
use crate::numerics::diag;

/// Decodes `path` to RGB in `[0, 1]`; when `size = Some((h, w))` the image
/// is resized with the half-pixel bilinear rule of [`resize_bilinear`].
pub fn load_image(path: &Path, size: Option<(usize, usize)>) -> Result<Image> {
    let err = |message: String| Error::Image { path: path.to_path_buf(), message };
    let decoded = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| err(e.to_string()))?;
    let rgb = decoded.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    if w == 0 || h == 0 {
        return Err(err("empty image".into()));
    }
    let mut data = vec![0.0f32; 3 * h * w];
    for (x, y, px) in rgb.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = px[c] as f32 / 255.0;
        }
    }
    let img = Image::new(3, h, w, data)?;
    Ok(match size {
        Some((oh, ow)) => resize_bilinear(&img, oh, ow),
        None => img,
    })
}

/// Result of a batch load: one slot per input path, in input order.
#[derive(Debug)]
pub struct LoadReport {
    pub images: Vec<Option<Image>>,
    /// (input index, reason) of every skipped file.
    pub skipped: Vec<(usize, String)>,
}

/// Loads many files on a bounded pool of `threads` workers. Results are
/// reassembled by input index, so output order never depends on
/// scheduling. Undecodable files are skipped with a warning and counted.
pub fn load_images(paths: &[PathBuf], size: Option<(usize, usize)>, threads: usize) -> Result<LoadReport> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Contract(format!("cannot start loader pool: {e}")))?;
    let results: Vec<Result<Image>> = pool.install(|| paths.par_iter().map(|p| load_image(p, size)).collect());
    let mut images = Vec::with_capacity(paths.len());
    let mut skipped = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(img) => images.push(Some(img)),
            Err(e) => {
                log::warn!("skipping {}: {e}", paths[i].display());
                skipped.push((i, e.to_string()));
                images.push(None);
            }
        }
    }
    diag::bump(diag::IMAGE_SKIPPED, skipped.len() as u64);
    Ok(LoadReport { images, skipped })
}

/// Encodes an RGB `[0, 1]` image as 8-bit PNG (values rounded, clamped).
pub fn save_png(img: &Image, path: &Path) -> Result<()> {
    if img.channels != 3 {
        return Err(Error::Shape(format!("PNG export needs 3 channels, got {}", img.channels)));
    }
    let (h, w) = (img.height, img.width);
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for (x, y, px) in buf.enumerate_pixels_mut() {
        for c in 0..3 {
            let v = img.at(c, y as usize, x as usize).clamp(0.0, 1.0);
            px[c] = (v * 255.0).round() as u8;
        }
    }
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::Image { path: path.to_path_buf(), message: e.to_string() })
}
