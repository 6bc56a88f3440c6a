//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates the forward pass on untracked
//! tensors, so it is independent of every backward rule it checks.

use super::rng::Rng;
use super::tensor::Tensor;
use crate::error::Result;

/// Outcome of [`check`]: one relative error per input.
#[derive(Clone, Debug)]
pub struct GradReport {
    pub rel_err: Vec<f64>,
    pub analytic: Vec<Vec<f64>>,
    pub numeric: Vec<Vec<f64>>,
    /// Per input, coordinates dropped because their stencil straddles a
    /// kink (see [`check_sampled`]).
    pub skipped: Vec<usize>,
}

impl GradReport {
    pub fn max_rel_err(&self) -> f64 {
        self.rel_err.iter().cloned().fold(0.0, f64::max)
    }
}

/// Relative error between two gradient vectors:
/// `max_i |a_i - n_i| / max(max_i |n_i|, max_i |a_i|, 1e-8)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = analytic
        .iter()
        .chain(numeric)
        .map(|v| v.abs())
        .fold(1e-8, f64::max);
    diff / scale
}

/// Compares backward-mode gradients of the scalar `f(inputs)` with central
/// differences of step `step` for every element of every input.
pub fn check<F>(f: F, inputs: &[(Vec<usize>, Vec<f64>)], step: f64) -> Result<GradReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    check_coords(f, inputs, step, None, None)
}

/// Like [`check`], but differentiates numerically only `per_input`
/// coordinates of each input, drawn without replacement from `rng`. The
/// report's vectors hold just those coordinates.
///
/// With `kink_tol`, a coordinate is dropped when the second difference
/// `|f(x+h) + f(x-h) - 2 f(x)| / h` exceeds `kink_tol` times the gradient
/// scale. Near a ReLU or max-pool kink the central difference is off by
/// half that amount, so such coordinates say nothing about the backward
/// rule; the test uses forward values only, so it cannot mask a wrong
/// gradient.
pub fn check_sampled<F>(
    f: F,
    inputs: &[(Vec<usize>, Vec<f64>)],
    step: f64,
    per_input: usize,
    kink_tol: Option<f64>,
    rng: &mut Rng,
) -> Result<GradReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let coords = inputs
        .iter()
        .map(|(_, d)| {
            let mut idx: Vec<usize> = (0..d.len()).collect();
            rng.shuffle(&mut idx);
            idx.truncate(per_input.min(d.len()));
            idx.sort_unstable();
            idx
        })
        .collect();
    check_coords(f, inputs, step, Some(coords), kink_tol)
}

fn check_coords<F>(
    f: F,
    inputs: &[(Vec<usize>, Vec<f64>)],
    step: f64,
    coords: Option<Vec<Vec<usize>>>,
    kink_tol: Option<f64>,
) -> Result<GradReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let tracked: Vec<Tensor> = inputs
        .iter()
        .map(|(s, d)| Tensor::param(s, d.clone()))
        .collect::<Result<_>>()?;
    let loss = f(&tracked)?;
    let f0 = loss.item();
    loss.backward()?;
    let coords = coords.unwrap_or_else(|| inputs.iter().map(|(_, d)| (0..d.len()).collect()).collect());
    let mut analytic: Vec<Vec<f64>> = tracked
        .iter()
        .zip(&coords)
        .map(|(t, idx)| {
            let g = t.grad().unwrap_or_else(|| vec![0.0; t.numel()]);
            idx.iter().map(|&i| g[i]).collect()
        })
        .collect();

    let eval = |values: &[Vec<f64>]| -> Result<f64> {
        let ts: Vec<Tensor> = inputs
            .iter()
            .zip(values)
            .map(|((s, _), d)| Tensor::new(s, d.clone()))
            .collect::<Result<_>>()?;
        Ok(f(&ts)?.item())
    };
    let mut values: Vec<Vec<f64>> = inputs.iter().map(|(_, d)| d.clone()).collect();
    let mut numeric = Vec::with_capacity(inputs.len());
    let mut skipped = Vec::with_capacity(inputs.len());
    for which in 0..inputs.len() {
        let mut g = vec![0.0; coords[which].len()];
        let mut curvature = vec![0.0; coords[which].len()];
        for ((&i, gi), ci) in coords[which].iter().zip(g.iter_mut()).zip(curvature.iter_mut()) {
            let orig = values[which][i];
            values[which][i] = orig + step;
            let plus = eval(&values)?;
            values[which][i] = orig - step;
            let minus = eval(&values)?;
            values[which][i] = orig;
            *gi = (plus - minus) / (2.0 * step);
            *ci = (plus + minus - 2.0 * f0).abs() / step;
        }
        let mut dropped = 0;
        if let Some(tol) = kink_tol {
            let scale = g.iter().chain(&analytic[which]).map(|v| v.abs()).fold(1e-8, f64::max);
            let keep: Vec<bool> = curvature.iter().map(|&c| c <= tol * scale).collect();
            dropped = keep.iter().filter(|k| !**k).count();
            let mut k = keep.iter();
            g.retain(|_| *k.next().unwrap_or(&true));
            let mut k = keep.iter();
            analytic[which].retain(|_| *k.next().unwrap_or(&true));
        }
        numeric.push(g);
        skipped.push(dropped);
    }
    let rel_err = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| relative_error(a, n))
        .collect();
    Ok(GradReport {
        rel_err,
        analytic,
        numeric,
        skipped,
    })
}
