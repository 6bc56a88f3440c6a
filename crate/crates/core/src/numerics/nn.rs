//! Convolution, normalization and pooling over `[B, C, H, W]` tensors.

use super::ops::gemm;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    batch: usize,
    chans: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.chans * self.kh * self.kw
    }
    fn cols(&self) -> usize {
        self.batch * self.oh * self.ow
    }
}

/// Unfolds input patches into a `[C·kh·kw, B·oh·ow]` matrix.
fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let ncols = g.cols();
    let mut cols = vec![0.0; g.patch() * ncols];
    let plane = g.oh * g.ow;
    for c in 0..g.chans {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for b in 0..g.batch {
                    let src = &x[(b * g.chans + c) * g.h * g.w..][..g.h * g.w];
                    for oi in 0..g.oh {
                        let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                        if ii < 0 || ii >= g.h as isize {
                            continue;
                        }
                        let srow = &src[ii as usize * g.w..][..g.w];
                        let drow = &mut dst[b * plane + oi * g.ow..][..g.ow];
                        for (oj, d) in drow.iter_mut().enumerate() {
                            let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                            if jj >= 0 && jj < g.w as isize {
                                *d = srow[jj as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters column gradients back onto the input.
fn col2im(cols: &[f64], g: &ConvGeom) -> Vec<f64> {
    let ncols = g.cols();
    let plane = g.oh * g.ow;
    let mut x = vec![0.0; g.batch * g.chans * g.h * g.w];
    for c in 0..g.chans {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for b in 0..g.batch {
                    let dst = &mut x[(b * g.chans + c) * g.h * g.w..][..g.h * g.w];
                    for oi in 0..g.oh {
                        let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                        if ii < 0 || ii >= g.h as isize {
                            continue;
                        }
                        let srow = &src[b * plane + oi * g.ow..][..g.ow];
                        let drow = &mut dst[ii as usize * g.w..][..g.w];
                        for (oj, s) in srow.iter().enumerate() {
                            let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                            if jj >= 0 && jj < g.w as isize {
                                drow[jj as usize] += s;
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

impl Tensor {
    /// 2-D convolution (cross-correlation) without bias.
    ///
    /// `self` is `[B, C, H, W]`, `weight` is `[O, C, kh, kw]`; output is
    /// `[B, O, (H+2p-kh)/s+1, (W+2p-kw)/s+1]` with zero padding.
    pub fn conv2d(&self, weight: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
        let (&[batch, chans, h, w], &[out_c, wc, kh, kw]) = (self.shape(), weight.shape()) else {
            return Err(Error::Shape(format!(
                "conv2d needs [B,C,H,W] input and [O,C,kh,kw] weight, got {:?} and {:?}",
                self.shape(),
                weight.shape()
            )));
        };
        if wc != chans || stride == 0 || h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::Shape(format!(
                "conv2d: input {:?} incompatible with weight {:?} (stride {stride}, pad {pad})",
                self.shape(),
                weight.shape()
            )));
        }
        let g = ConvGeom {
            batch,
            chans,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (w + 2 * pad - kw) / stride + 1,
        };
        let cols = im2col(self.data(), &g);
        let ncols = g.cols();
        let mut out_mat = vec![0.0; out_c * ncols];
        gemm(out_c, g.patch(), ncols, weight.data(), false, &cols, false, &mut out_mat, 0.0);
        drop(cols);
        let plane = g.oh * g.ow;
        let mut out = vec![0.0; batch * out_c * plane];
        for o in 0..out_c {
            for b in 0..batch {
                out[(b * out_c + o) * plane..][..plane]
                    .copy_from_slice(&out_mat[o * ncols + b * plane..][..plane]);
            }
        }
        Ok(Tensor::from_op(
            vec![batch, out_c, g.oh, g.ow],
            out,
            vec![self.clone(), weight.clone()],
            Box::new(move |grad, _, parents| {
                let (x, wt) = (&parents[0], &parents[1]);
                let mut gmat = vec![0.0; out_c * ncols];
                for o in 0..out_c {
                    for b in 0..g.batch {
                        gmat[o * ncols + b * plane..][..plane]
                            .copy_from_slice(&grad[(b * out_c + o) * plane..][..plane]);
                    }
                }
                let gw = wt.requires_grad().then(|| {
                    let cols = im2col(x.data(), &g);
                    let mut gw = vec![0.0; out_c * g.patch()];
                    gemm(out_c, ncols, g.patch(), &gmat, false, &cols, true, &mut gw, 0.0);
                    gw
                });
                let gx = x.requires_grad().then(|| {
                    let mut gcols = vec![0.0; g.patch() * ncols];
                    gemm(g.patch(), out_c, ncols, wt.data(), true, &gmat, false, &mut gcols, 0.0);
                    col2im(&gcols, &g)
                });
                vec![gx, gw]
            }),
        ))
    }

    /// Mean over the spatial extents: `[B, C, H, W]` → `[B, C]`.
    pub fn global_avg_pool(&self) -> Result<Tensor> {
        let &[b, c, h, w] = self.shape() else {
            return Err(Error::Shape(format!("global_avg_pool needs [B,C,H,W], got {:?}", self.shape())));
        };
        self.reshape(&[b, c, h * w])?.mean_axis(2)
    }
}

/// How a normalization layer forms its statistics.
#[derive(Clone, Debug)]
pub enum NormMode {
    /// Per sample, over `groups` contiguous channel groups and all positions.
    Group(usize),
    /// Per channel, over the batch and all positions.
    Batch,
    /// Per channel, with externally supplied mean and variance (inference-time batch norm).
    Fixed { mean: Vec<f64>, var: Vec<f64> },
}

/// Statistics computed by a [`normalize`] call, per set (group or channel).
#[derive(Clone, Debug, Default)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Normalizes `x` (`[B, C]` or `[B, C, H, W]`) and applies the per-channel
/// affine `gamma`, `beta` (both `[C]`). Variance is the biased estimator.
pub fn normalize(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    mode: &NormMode,
    eps: f64,
) -> Result<(Tensor, NormStats)> {
    let shape = x.shape().to_vec();
    if shape.len() != 2 && shape.len() != 4 {
        return Err(Error::Shape(format!("normalize needs [B,C] or [B,C,H,W], got {shape:?}")));
    }
    let (batch, chans) = (shape[0], shape[1]);
    let spatial: usize = shape[2..].iter().product();
    if gamma.shape() != [chans] || beta.shape() != [chans] {
        return Err(Error::Shape(format!(
            "normalize: affine parameters {:?}/{:?} do not match {chans} channels",
            gamma.shape(),
            beta.shape()
        )));
    }
    let nsets = match mode {
        NormMode::Group(groups) => {
            if *groups == 0 || chans % groups != 0 {
                return Err(Error::Shape(format!("{chans} channels not divisible into {groups} groups")));
            }
            batch * groups
        }
        NormMode::Batch => chans,
        NormMode::Fixed { mean, var } => {
            if mean.len() != chans || var.len() != chans {
                return Err(Error::Shape("fixed statistics do not match channel count".into()));
            }
            chans
        }
    };
    let per_group = match mode {
        NormMode::Group(groups) => chans / groups,
        _ => 1,
    };
    let set_of = {
        let mode = mode.clone();
        move |i: usize| -> (usize, usize) {
            let c = (i / spatial) % chans;
            let set = match mode {
                NormMode::Group(groups) => (i / (spatial * chans)) * groups + c / per_group,
                _ => c,
            };
            (set, c)
        }
    };

    let d = x.data();
    let stats = match mode {
        NormMode::Fixed { mean, var } => NormStats {
            mean: mean.clone(),
            var: var.clone(),
        },
        _ => {
            let mut sum = vec![0.0; nsets];
            let mut cnt = vec![0usize; nsets];
            for (i, v) in d.iter().enumerate() {
                let (s, _) = set_of(i);
                sum[s] += v;
                cnt[s] += 1;
            }
            let mean: Vec<f64> = sum.iter().zip(&cnt).map(|(s, &n)| s / n as f64).collect();
            let mut sq = vec![0.0; nsets];
            for (i, v) in d.iter().enumerate() {
                let (s, _) = set_of(i);
                sq[s] += (v - mean[s]).powi(2);
            }
            let var = sq.iter().zip(&cnt).map(|(s, &n)| s / n as f64).collect();
            NormStats { mean, var }
        }
    };
    let inv: Vec<f64> = stats.var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let (gd, bd) = (gamma.data(), beta.data());
    let mut out = vec![0.0; d.len()];
    for (i, v) in d.iter().enumerate() {
        let (s, c) = set_of(i);
        out[i] = (v - stats.mean[s]) * inv[s] * gd[c] + bd[c];
    }
    let fixed = matches!(mode, NormMode::Fixed { .. });
    let mean = stats.mean.clone();
    let y = Tensor::from_op(
        shape,
        out,
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(move |g, _, parents| {
            let (x, gamma) = (parents[0].data(), parents[1].data());
            let n = g.len();
            let mut dgamma = vec![0.0; chans];
            let mut dbeta = vec![0.0; chans];
            let mut xhat = vec![0.0; n];
            for i in 0..n {
                let (s, c) = set_of(i);
                xhat[i] = (x[i] - mean[s]) * inv[s];
                dgamma[c] += g[i] * xhat[i];
                dbeta[c] += g[i];
            }
            let dx = parents[0].requires_grad().then(|| {
                let mut dx = vec![0.0; n];
                if fixed {
                    for i in 0..n {
                        let (s, c) = set_of(i);
                        dx[i] = g[i] * gamma[c] * inv[s];
                    }
                    return dx;
                }
                let mut s1 = vec![0.0; nsets];
                let mut s2 = vec![0.0; nsets];
                let mut cnt = vec![0usize; nsets];
                for i in 0..n {
                    let (s, c) = set_of(i);
                    let dxh = g[i] * gamma[c];
                    s1[s] += dxh;
                    s2[s] += dxh * xhat[i];
                    cnt[s] += 1;
                }
                for i in 0..n {
                    let (s, c) = set_of(i);
                    let m = cnt[s] as f64;
                    let dxh = g[i] * gamma[c];
                    dx[i] = inv[s] / m * (m * dxh - s1[s] - xhat[i] * s2[s]);
                }
                dx
            });
            vec![
                dx,
                parents[1].requires_grad().then_some(dgamma),
                parents[2].requires_grad().then_some(dbeta),
            ]
        }),
    );
    Ok((y, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_identity_kernel() {
        let x = Tensor::new(&[1, 1, 3, 3], (1..=9).map(|v| v as f64).collect()).unwrap();
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let w = Tensor::new(&[1, 1, 3, 3], k).unwrap();
        let y = x.conv2d(&w, 1, 1).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv_stride_shape() {
        let x = Tensor::zeros(&[2, 3, 8, 8]);
        let w = Tensor::zeros(&[4, 3, 3, 3]);
        assert_eq!(x.conv2d(&w, 2, 1).unwrap().shape(), &[2, 4, 4, 4]);
        assert!(x.conv2d(&Tensor::zeros(&[4, 2, 3, 3]), 1, 1).is_err());
    }

    #[test]
    fn conv_matches_direct_sum() {
        let x: Vec<f64> = (0..2 * 2 * 4 * 5).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let w: Vec<f64> = (0..3 * 2 * 3 * 3).map(|i| ((i * 5) % 7) as f64 - 3.0).collect();
        let xt = Tensor::new(&[2, 2, 4, 5], x.clone()).unwrap();
        let wt = Tensor::new(&[3, 2, 3, 3], w.clone()).unwrap();
        let y = xt.conv2d(&wt, 2, 1).unwrap();
        let (oh, ow) = (2, 3);
        assert_eq!(y.shape(), &[2, 3, oh, ow]);
        for b in 0..2 {
            for o in 0..3 {
                for i in 0..oh {
                    for j in 0..ow {
                        let mut s = 0.0;
                        for c in 0..2 {
                            for ki in 0..3 {
                                for kj in 0..3 {
                                    let ii = (i * 2 + ki) as isize - 1;
                                    let jj = (j * 2 + kj) as isize - 1;
                                    if ii >= 0 && ii < 4 && jj >= 0 && jj < 5 {
                                        s += x[((b * 2 + c) * 4 + ii as usize) * 5 + jj as usize]
                                            * w[((o * 2 + c) * 3 + ki) * 3 + kj];
                                    }
                                }
                            }
                        }
                        assert_eq!(y.data()[((b * 3 + o) * oh + i) * ow + j], s);
                    }
                }
            }
        }
    }

    #[test]
    fn group_norm_zero_mean_unit_var() {
        let x = Tensor::new(&[1, 4, 2, 2], (0..16).map(|v| (v * v) as f64).collect()).unwrap();
        let (y, _) = normalize(&x, &Tensor::ones(&[4]), &Tensor::zeros(&[4]), &NormMode::Group(2), 0.0).unwrap();
        for group in y.data().chunks(8) {
            let m: f64 = group.iter().sum::<f64>() / 8.0;
            let v: f64 = group.iter().map(|a| (a - m).powi(2)).sum::<f64>() / 8.0;
            assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-12);
        }
    }
}
