//! Stochastic view generation for the SSL objectives.
//!
//! A view is produced by applying, in this fixed order:
//!
//! 1. random resized crop (always; `scale = ratio = (1, 1)` is the identity),
//! 2. horizontal flip,
//! 3. color jitter (brightness, contrast, saturation, hue — in that order),
//! 4. grayscale,
//! 5. Gaussian blur,
//! 6. rotation about the image center,
//! 7. cutout (zero-filled square),
//! 8. clamp to `[0, 1]` and per-channel normalization `(x - mean) / std`.
//!
//! Every resampling step uses the bilinear half-pixel rule of
//! [`resize_bilinear`]: output pixel `d` samples source coordinate
//! `x0 + (d + 0.5) · (w_src / w_out) - 0.5`, clamped to the source extent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{diag, Rng, Tensor};

/// Crop attempts before falling back to the full frame.
pub const MAX_CROP_ATTEMPTS: usize = 10;

/// A decoded image, channel-major (`C × H × W`), values nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Image> {
        if channels == 0 || height == 0 || width == 0 || data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "image {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Image { channels, height, width, data })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Image {
        Image { channels, height, width, data: vec![value; channels * height * width] }
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    fn idx(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    pub fn flip_horizontal(&self) -> Image {
        let mut out = self.clone();
        for c in 0..self.channels {
            for y in 0..self.height {
                for x in 0..self.width {
                    out.data[self.idx(c, y, x)] = self.at(c, y, self.width - 1 - x);
                }
            }
        }
        out
    }

    /// `[1, C, H, W]` tensor without gradient tracking.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_f32(&[1, self.channels, self.height, self.width], &self.data, false)
            .expect("image extents are consistent")
    }

    /// Stacks equally sized images into an `[N, C, H, W]` batch.
    pub fn stack(images: &[Image]) -> Result<Tensor> {
        let first = images
            .first()
            .ok_or_else(|| Error::Shape("cannot stack an empty image list".into()))?;
        let mut data = Vec::with_capacity(images.len() * first.data.len());
        for im in images {
            if (im.channels, im.height, im.width) != (first.channels, first.height, first.width) {
                return Err(Error::Shape(format!(
                    "cannot stack {}x{}x{} with {}x{}x{}",
                    first.channels, first.height, first.width, im.channels, im.height, im.width
                )));
            }
            data.extend(im.data.iter().map(|&v| v as f64));
        }
        Tensor::new(&[images.len(), first.channels, first.height, first.width], data)
    }
}

/// Samples `img` at continuous source coordinates with bilinear weights,
/// clamping to the border.
#[inline]
fn sample_bilinear(img: &Image, c: usize, sy: f64, sx: f64) -> f32 {
    let sy = sy.clamp(0.0, (img.height - 1) as f64);
    let sx = sx.clamp(0.0, (img.width - 1) as f64);
    let y0 = sy.floor() as usize;
    let x0 = sx.floor() as usize;
    let y1 = (y0 + 1).min(img.height - 1);
    let x1 = (x0 + 1).min(img.width - 1);
    let fy = (sy - y0 as f64) as f32;
    let fx = (sx - x0 as f64) as f32;
    if fy == 0.0 && fx == 0.0 {
        return img.at(c, y0, x0);
    }
    let top = img.at(c, y0, x0) * (1.0 - fx) + img.at(c, y0, x1) * fx;
    let bot = img.at(c, y1, x0) * (1.0 - fx) + img.at(c, y1, x1) * fx;
    top * (1.0 - fy) + bot * fy
}

/// Resizes the region `(top, left, h, w)` of `img` to `out_h × out_w`.
pub fn crop_resize(img: &Image, region: CropRegion, out_h: usize, out_w: usize) -> Image {
    let sy = region.height as f64 / out_h as f64;
    let sx = region.width as f64 / out_w as f64;
    let mut out = Image::filled(img.channels, out_h, out_w, 0.0);
    for c in 0..img.channels {
        for y in 0..out_h {
            let src_y = region.top as f64 + (y as f64 + 0.5) * sy - 0.5;
            for x in 0..out_w {
                let src_x = region.left as f64 + (x as f64 + 0.5) * sx - 0.5;
                let i = out.idx(c, y, x);
                out.data[i] = sample_bilinear(img, c, src_y, src_x);
            }
        }
    }
    out
}

/// Full-frame bilinear resize (half-pixel centers, border clamp).
pub fn resize_bilinear(img: &Image, out_h: usize, out_w: usize) -> Image {
    if (img.height, img.width) == (out_h, out_w) {
        return img.clone();
    }
    crop_resize(img, CropRegion::full(img), out_h, out_w)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropRegion {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl CropRegion {
    pub fn full(img: &Image) -> CropRegion {
        CropRegion { top: 0, left: 0, height: img.height, width: img.width }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CropSpec {
    /// Fraction of the source area kept, sampled uniformly.
    pub scale: (f64, f64),
    /// Aspect ratio `w / h`, sampled log-uniformly.
    pub ratio: (f64, f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlipSpec {
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColorJitterSpec {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    /// Maximum hue shift as a fraction of the color wheel, in `[0, 0.5]`.
    pub hue: f64,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrayscaleSpec {
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlurSpec {
    /// Odd kernel width in pixels.
    pub kernel: usize,
    pub sigma: (f64, f64),
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CutoutSpec {
    /// Side of the zeroed square in output pixels.
    pub size: usize,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RotationSpec {
    /// Maximum absolute angle; the angle is drawn from `U(-degrees, degrees)`.
    pub degrees: f64,
    pub p: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentPolicy {
    /// Output `(height, width)` of every view.
    pub output_size: (usize, usize),
    pub crop: CropSpec,
    pub flip: FlipSpec,
    pub color_jitter: ColorJitterSpec,
    pub grayscale: GrayscaleSpec,
    pub blur: BlurSpec,
    pub cutout: CutoutSpec,
    pub rotation: RotationSpec,
    pub normalization: Normalization,
}

impl Default for AugmentPolicy {
    /// The SimCLR family: crop, flip, jitter, grayscale, blur. Cutout and
    /// rotation are available but disabled.
    fn default() -> Self {
        AugmentPolicy {
            output_size: (32, 32),
            crop: CropSpec { scale: (0.2, 1.0), ratio: (3.0 / 4.0, 4.0 / 3.0) },
            flip: FlipSpec { p: 0.5 },
            color_jitter: ColorJitterSpec { brightness: 0.4, contrast: 0.4, saturation: 0.4, hue: 0.1, p: 0.8 },
            grayscale: GrayscaleSpec { p: 0.2 },
            blur: BlurSpec { kernel: 3, sigma: (0.1, 2.0), p: 0.5 },
            cutout: CutoutSpec { size: 8, p: 0.0 },
            rotation: RotationSpec { degrees: 15.0, p: 0.0 },
            normalization: Normalization { mean: vec![0.5, 0.5, 0.5], std: vec![0.25, 0.25, 0.25] },
        }
    }
}

impl AugmentPolicy {
    /// No stochastic transform: full-frame resize plus normalization.
    pub fn identity(output_size: (usize, usize), channels: usize) -> Self {
        AugmentPolicy {
            output_size,
            crop: CropSpec { scale: (1.0, 1.0), ratio: (1.0, 1.0) },
            flip: FlipSpec { p: 0.0 },
            color_jitter: ColorJitterSpec { brightness: 0.0, contrast: 0.0, saturation: 0.0, hue: 0.0, p: 0.0 },
            grayscale: GrayscaleSpec { p: 0.0 },
            blur: BlurSpec { kernel: 3, sigma: (0.1, 2.0), p: 0.0 },
            cutout: CutoutSpec { size: 0, p: 0.0 },
            rotation: RotationSpec { degrees: 0.0, p: 0.0 },
            normalization: Normalization { mean: vec![0.0; channels], std: vec![1.0; channels] },
        }
    }

    /// Deterministic evaluation policy: same output size and normalization,
    /// no stochastic transform.
    pub fn evaluation(&self) -> Self {
        AugmentPolicy {
            normalization: self.normalization.clone(),
            ..AugmentPolicy::identity(self.output_size, self.normalization.mean.len())
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Contract(format!("augment policy: {m}")));
        for (name, p) in [
            ("flip.p", self.flip.p),
            ("color_jitter.p", self.color_jitter.p),
            ("grayscale.p", self.grayscale.p),
            ("blur.p", self.blur.p),
            ("cutout.p", self.cutout.p),
            ("rotation.p", self.rotation.p),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is not a probability"));
            }
        }
        let (lo, hi) = self.crop.scale;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return bad(format!("crop.scale = ({lo}, {hi}) must satisfy 0 < lo <= hi <= 1"));
        }
        let (rlo, rhi) = self.crop.ratio;
        if !(rlo > 0.0 && rlo <= rhi) {
            return bad(format!("crop.ratio = ({rlo}, {rhi}) must satisfy 0 < lo <= hi"));
        }
        if self.output_size.0 == 0 || self.output_size.1 == 0 {
            return bad("output_size must be positive".into());
        }
        let j = &self.color_jitter;
        if j.brightness < 0.0 || j.contrast < 0.0 || j.saturation < 0.0 || !(0.0..=0.5).contains(&j.hue) {
            return bad("color_jitter strengths must be >= 0 and hue <= 0.5".into());
        }
        if self.blur.kernel % 2 == 0 {
            return bad(format!("blur.kernel = {} must be odd", self.blur.kernel));
        }
        if !(self.blur.sigma.0 > 0.0 && self.blur.sigma.0 <= self.blur.sigma.1) {
            return bad("blur.sigma must satisfy 0 < lo <= hi".into());
        }
        let n = &self.normalization;
        if n.mean.is_empty() || n.mean.len() != n.std.len() || n.std.iter().any(|&s| s <= 0.0) {
            return bad("normalization needs one positive std per mean".into());
        }
        Ok(())
    }

    /// Per-channel `[min, max]` a normalized view can take.
    pub fn value_range(&self) -> Vec<(f64, f64)> {
        let n = &self.normalization;
        n.mean.iter().zip(&n.std).map(|(m, s)| ((0.0 - m) / s, (1.0 - m) / s)).collect()
    }
}

/// What was applied to one view.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewTrace {
    pub crop: CropRegion,
    pub crop_fallback: bool,
    pub flipped: bool,
    pub jittered: bool,
    pub grayscale: bool,
    pub blurred: bool,
    pub rotated: bool,
    pub cutout: bool,
}

fn sample_crop(img: &Image, spec: &CropSpec, rng: &mut Rng) -> (CropRegion, bool) {
    let area = (img.height * img.width) as f64;
    let (llo, lhi) = (spec.ratio.0.ln(), spec.ratio.1.ln());
    for _ in 0..MAX_CROP_ATTEMPTS {
        let target = area * rng.range(spec.scale.0, spec.scale.1);
        let ratio = rng.range(llo, lhi).exp();
        let w = (target * ratio).sqrt().round() as usize;
        let h = (target / ratio).sqrt().round() as usize;
        if w > 0 && h > 0 && w <= img.width && h <= img.height {
            let top = rng.below(img.height - h + 1);
            let left = rng.below(img.width - w + 1);
            return (CropRegion { top, left, height: h, width: w }, false);
        }
    }
    diag::bump(diag::CROP_FALLBACK, 1);
    log::warn!(
        "no valid crop in {MAX_CROP_ATTEMPTS} attempts on a {}x{} image; using the full frame",
        img.height,
        img.width
    );
    (CropRegion::full(img), true)
}

fn gray(r: f32, g: f32, b: f32) -> f32 {
    0.299 * r + 0.587 * g + 0.114 * b
}

fn clamp01(img: &mut Image) {
    img.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
}

fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i as i32 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

fn color_jitter(img: &mut Image, spec: &ColorJitterSpec, rng: &mut Rng) {
    let factor = |rng: &mut Rng, s: f64| rng.range((1.0 - s).max(0.0), 1.0 + s) as f32;
    let plane = img.height * img.width;
    if spec.brightness > 0.0 {
        let b = factor(rng, spec.brightness);
        img.data.iter_mut().for_each(|v| *v *= b);
        clamp01(img);
    }
    if spec.contrast > 0.0 {
        let c = factor(rng, spec.contrast);
        let mean = if img.channels == 3 {
            (0..plane)
                .map(|i| gray(img.data[i], img.data[plane + i], img.data[2 * plane + i]) as f64)
                .sum::<f64>()
                / plane as f64
        } else {
            img.data.iter().map(|&v| v as f64).sum::<f64>() / img.data.len() as f64
        } as f32;
        img.data.iter_mut().for_each(|v| *v = mean + c * (*v - mean));
        clamp01(img);
    }
    if img.channels != 3 {
        return;
    }
    if spec.saturation > 0.0 {
        let s = factor(rng, spec.saturation);
        for i in 0..plane {
            let g = gray(img.data[i], img.data[plane + i], img.data[2 * plane + i]);
            for c in 0..3 {
                let v = &mut img.data[c * plane + i];
                *v = g + s * (*v - g);
            }
        }
        clamp01(img);
    }
    if spec.hue > 0.0 {
        let shift = rng.range(-spec.hue, spec.hue) as f32;
        for i in 0..plane {
            let (h, s, v) = rgb_to_hsv(img.data[i], img.data[plane + i], img.data[2 * plane + i]);
            let (r, g, b) = hsv_to_rgb(h + shift, s, v);
            img.data[i] = r;
            img.data[plane + i] = g;
            img.data[2 * plane + i] = b;
        }
    }
}

fn to_grayscale(img: &mut Image) {
    if img.channels != 3 {
        return;
    }
    let plane = img.height * img.width;
    for i in 0..plane {
        let g = gray(img.data[i], img.data[plane + i], img.data[2 * plane + i]);
        for c in 0..3 {
            img.data[c * plane + i] = g;
        }
    }
}

/// Separable Gaussian blur with border clamping.
fn gaussian_blur(img: &Image, kernel: usize, sigma: f64) -> Image {
    let r = (kernel / 2) as isize;
    let weights: Vec<f32> = {
        let w: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
        let s: f64 = w.iter().sum();
        w.iter().map(|v| (v / s) as f32).collect()
    };
    let (h, w) = (img.height as isize, img.width as isize);
    let mut tmp = img.clone();
    for c in 0..img.channels {
        for y in 0..img.height {
            for x in 0..w {
                let acc: f32 = (-r..=r)
                    .map(|k| weights[(k + r) as usize] * img.at(c, y, (x + k).clamp(0, w - 1) as usize))
                    .sum();
                let i = tmp.idx(c, y, x as usize);
                tmp.data[i] = acc;
            }
        }
    }
    let mut out = tmp.clone();
    for c in 0..img.channels {
        for y in 0..h {
            for x in 0..img.width {
                let acc: f32 = (-r..=r)
                    .map(|k| weights[(k + r) as usize] * tmp.at(c, (y + k).clamp(0, h - 1) as usize, x))
                    .sum();
                let i = out.idx(c, y as usize, x);
                out.data[i] = acc;
            }
        }
    }
    out
}

/// Rotation about the image center; uncovered pixels become 0.
fn rotate(img: &Image, degrees: f64) -> Image {
    let (sin, cos) = degrees.to_radians().sin_cos();
    let cy = (img.height as f64 - 1.0) / 2.0;
    let cx = (img.width as f64 - 1.0) / 2.0;
    let mut out = Image::filled(img.channels, img.height, img.width, 0.0);
    for y in 0..img.height {
        for x in 0..img.width {
            let dy = y as f64 - cy;
            let dx = x as f64 - cx;
            // Inverse map: rotate the output coordinate back by -angle.
            let sx = cos * dx + sin * dy + cx;
            let sy = -sin * dx + cos * dy + cy;
            if sx < -0.5 || sy < -0.5 || sx > img.width as f64 - 0.5 || sy > img.height as f64 - 0.5 {
                continue;
            }
            for c in 0..img.channels {
                let i = out.idx(c, y, x);
                out.data[i] = sample_bilinear(img, c, sy, sx);
            }
        }
    }
    out
}

fn cutout(img: &mut Image, size: usize, rng: &mut Rng) {
    let cy = rng.below(img.height) as isize;
    let cx = rng.below(img.width) as isize;
    let half = (size / 2) as isize;
    let y0 = (cy - half).max(0) as usize;
    let x0 = (cx - half).max(0) as usize;
    let y1 = ((cy - half + size as isize).max(0) as usize).min(img.height);
    let x1 = ((cx - half + size as isize).max(0) as usize).min(img.width);
    for c in 0..img.channels {
        for y in y0..y1 {
            for x in x0..x1 {
                let i = img.idx(c, y, x);
                img.data[i] = 0.0;
            }
        }
    }
}

/// Produces one view and a record of the transforms applied.
pub fn make_view_traced(img: &Image, policy: &AugmentPolicy, rng: &mut Rng) -> Result<(Image, ViewTrace)> {
    if policy.normalization.mean.len() != img.channels {
        return Err(Error::Shape(format!(
            "policy normalizes {} channels but the image has {}",
            policy.normalization.mean.len(),
            img.channels
        )));
    }
    let (oh, ow) = policy.output_size;
    let (region, crop_fallback) = sample_crop(img, &policy.crop, rng);
    let mut v = if region == CropRegion::full(img) {
        resize_bilinear(img, oh, ow)
    } else {
        crop_resize(img, region, oh, ow)
    };
    let mut trace = ViewTrace {
        crop: region,
        crop_fallback,
        flipped: false,
        jittered: false,
        grayscale: false,
        blurred: false,
        rotated: false,
        cutout: false,
    };
    if rng.bernoulli(policy.flip.p) {
        v = v.flip_horizontal();
        trace.flipped = true;
    }
    if rng.bernoulli(policy.color_jitter.p) {
        color_jitter(&mut v, &policy.color_jitter, rng);
        trace.jittered = true;
    }
    if rng.bernoulli(policy.grayscale.p) {
        to_grayscale(&mut v);
        trace.grayscale = true;
    }
    if rng.bernoulli(policy.blur.p) {
        let sigma = rng.range(policy.blur.sigma.0, policy.blur.sigma.1);
        v = gaussian_blur(&v, policy.blur.kernel, sigma);
        trace.blurred = true;
    }
    if rng.bernoulli(policy.rotation.p) {
        let deg = rng.range(-policy.rotation.degrees, policy.rotation.degrees);
        v = rotate(&v, deg);
        trace.rotated = true;
    }
    if rng.bernoulli(policy.cutout.p) {
        cutout(&mut v, policy.cutout.size, rng);
        trace.cutout = true;
    }
    clamp01(&mut v);
    let plane = oh * ow;
    for c in 0..v.channels {
        let (m, s) = (policy.normalization.mean[c], policy.normalization.std[c]);
        for x in &mut v.data[c * plane..(c + 1) * plane] {
            *x = ((*x as f64 - m) / s) as f32;
        }
    }
    Ok((v, trace))
}

/// `n_views` independent views of `img`, drawn sequentially from `rng`.
pub fn make_views(img: &Image, policy: &AugmentPolicy, rng: &mut Rng, n_views: usize) -> Result<Vec<Image>> {
    (0..n_views).map(|_| make_view_traced(img, policy, rng).map(|(v, _)| v)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(c: usize, h: usize, w: usize) -> Image {
        let data = (0..c * h * w).map(|i| ((i * 37) % 101) as f32 / 100.0).collect();
        Image::new(c, h, w, data).unwrap()
    }

    #[test]
    fn identity_policy_is_identity() {
        let img = ramp(3, 12, 12);
        let mut rng = Rng::new(1);
        let views = make_views(&img, &AugmentPolicy::identity((12, 12), 3), &mut rng, 2).unwrap();
        assert_eq!(views[0], img);
        assert_eq!(views[1], img);
    }

    #[test]
    fn identity_policy_equals_plain_resize() {
        let img = ramp(3, 20, 20);
        let mut rng = Rng::new(1);
        let v = make_views(&img, &AugmentPolicy::identity((8, 8), 3), &mut rng, 1).unwrap();
        assert_eq!(v[0], resize_bilinear(&img, 8, 8));
    }

    #[test]
    fn forced_flip_mirrors() {
        let img = ramp(3, 6, 9);
        let mut policy = AugmentPolicy::identity((6, 9), 3);
        policy.flip.p = 1.0;
        let v = make_views(&img, &policy, &mut Rng::new(3), 1).unwrap();
        assert_eq!(v[0], img.flip_horizontal());
        assert_eq!(v[0].at(1, 2, 0), img.at(1, 2, 8));
    }

    #[test]
    fn same_seed_same_views() {
        let img = ramp(3, 40, 40);
        let p = AugmentPolicy::default();
        let a = make_views(&img, &p, &mut Rng::new(9), 2).unwrap();
        let b = make_views(&img, &p, &mut Rng::new(9), 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
    }

    #[test]
    fn flip_frequency_is_calibrated() {
        let img = ramp(1, 4, 4);
        let mut policy = AugmentPolicy::identity((4, 4), 1);
        policy.flip.p = 0.5;
        let mut rng = Rng::new(17);
        let flips = (0..10_000)
            .filter(|_| make_view_traced(&img, &policy, &mut rng).unwrap().1.flipped)
            .count();
        let frac = flips as f64 / 10_000.0;
        assert!((0.48..=0.52).contains(&frac), "flip fraction {frac}");
    }

    #[test]
    fn values_stay_in_normalized_range() {
        let img = ramp(3, 24, 24);
        let mut policy = AugmentPolicy::default();
        policy.cutout.p = 0.5;
        policy.rotation.p = 0.5;
        let range = policy.value_range();
        let mut rng = Rng::new(5);
        for _ in 0..50 {
            let v = &make_views(&img, &policy, &mut rng, 1).unwrap()[0];
            let plane = v.height * v.width;
            for (c, &(lo, hi)) in range.iter().enumerate() {
                for &x in &v.data[c * plane..(c + 1) * plane] {
                    assert!(x as f64 >= lo - 1e-6 && x as f64 <= hi + 1e-6);
                }
            }
        }
    }

    #[test]
    fn impossible_crop_falls_back_to_full_frame() {
        // Tall image with a square full-area crop: no valid region exists.
        let img = ramp(1, 16, 4);
        let mut policy = AugmentPolicy::identity((8, 8), 1);
        policy.crop = CropSpec { scale: (1.0, 1.0), ratio: (1.0, 1.0) };
        let before = diag::count(diag::CROP_FALLBACK);
        let (v, trace) = make_view_traced(&img, &policy, &mut Rng::new(2)).unwrap();
        assert!(trace.crop_fallback);
        assert_eq!(diag::count(diag::CROP_FALLBACK), before + 1);
        assert_eq!(v, resize_bilinear(&img, 8, 8));
    }

    #[test]
    fn policy_round_trips_through_toml_and_json() {
        let p = AugmentPolicy::default();
        let t = toml::to_string(&p).unwrap();
        assert_eq!(toml::from_str::<AugmentPolicy>(&t).unwrap(), p);
        let j = serde_json::to_string(&p).unwrap();
        assert_eq!(serde_json::from_str::<AugmentPolicy>(&j).unwrap(), p);
    }

    #[test]
    fn validation_rejects_bad_probabilities_and_scales() {
        let mut p = AugmentPolicy::default();
        p.flip.p = 1.5;
        assert!(p.validate().is_err());
        let mut p = AugmentPolicy::default();
        p.crop.scale = (0.0, 1.0);
        assert!(p.validate().is_err());
        assert!(AugmentPolicy::default().validate().is_ok());
    }

    #[test]
    fn hsv_round_trip() {
        for &(r, g, b) in &[(0.2f32, 0.5, 0.9), (1.0, 0.0, 0.0), (0.3, 0.3, 0.3), (0.9, 0.8, 0.1)] {
            let (h, s, v) = rgb_to_hsv(r, g, b);
            let (r2, g2, b2) = hsv_to_rgb(h, s, v);
            assert!((r - r2).abs() < 1e-6 && (g - g2).abs() < 1e-6 && (b - b2).abs() < 1e-6);
        }
    }

    #[test]
    fn bilinear_downsample_by_two_averages_blocks() {
        let img = Image::new(1, 2, 2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let v = resize_bilinear(&img, 1, 1);
        assert!((v.data[0] - 1.5).abs() < 1e-6);
    }
}
