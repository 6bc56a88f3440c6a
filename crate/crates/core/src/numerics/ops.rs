//! Elementwise, reduction and structural operations.
//!
//! Broadcasting is trailing-dimension only: for a binary operation the
//! smaller operand's shape must equal the trailing extents of the larger one
//! (or hold a single element). The gradient of a broadcast operand is the sum
//! over its repetitions.

use super::diag;
use super::tensor::{numel, Tensor};
use crate::error::{Error, Result};

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let (na, nb) = (numel(a), numel(b));
    if a == b {
        return Some(a.to_vec());
    }
    if nb == 1 {
        return Some(a.to_vec());
    }
    if na == 1 {
        return Some(b.to_vec());
    }
    if b.len() <= a.len() && a[a.len() - b.len()..] == *b {
        return Some(a.to_vec());
    }
    if a.len() <= b.len() && b[b.len() - a.len()..] == *a {
        return Some(b.to_vec());
    }
    None
}

/// Sums a full-size gradient down onto an operand of `n` elements that was
/// repeated cyclically.
fn reduce_broadcast(g: &[f64], n: usize) -> Vec<f64> {
    if g.len() == n {
        return g.to_vec();
    }
    let mut out = vec![0.0; n];
    for (i, v) in g.iter().enumerate() {
        out[i % n] += v;
    }
    out
}

fn binary(
    a: &Tensor,
    b: &Tensor,
    name: &str,
    f: impl Fn(f64, f64) -> f64,
    grad: fn(f64, f64, f64) -> (f64, f64),
) -> Result<Tensor> {
    let shape = broadcast_shape(a.shape(), b.shape()).ok_or_else(|| {
        Error::Shape(format!(
            "{name}: cannot broadcast {:?} with {:?}",
            a.shape(),
            b.shape()
        ))
    })?;
    let n = numel(&shape);
    let (ad, bd) = (a.data(), b.data());
    let (na, nb) = (ad.len(), bd.len());
    let data = (0..n).map(|i| f(ad[i % na], bd[i % nb])).collect();
    Ok(Tensor::from_op(
        shape,
        data,
        vec![a.clone(), b.clone()],
        Box::new(move |g, _out, parents| {
            let (ad, bd) = (parents[0].data(), parents[1].data());
            let mut ga = vec![0.0; g.len()];
            let mut gb = vec![0.0; g.len()];
            for i in 0..g.len() {
                let (da, db) = grad(ad[i % na], bd[i % nb], g[i]);
                ga[i] = da;
                gb[i] = db;
            }
            vec![
                parents[0].requires_grad().then(|| reduce_broadcast(&ga, na)),
                parents[1].requires_grad().then(|| reduce_broadcast(&gb, nb)),
            ]
        }),
    ))
}

fn unary(a: &Tensor, f: impl Fn(f64) -> f64, grad: impl Fn(f64, f64) -> f64 + 'static) -> Tensor {
    let data = a.data().iter().map(|&x| f(x)).collect();
    Tensor::from_op(
        a.shape().to_vec(),
        data,
        vec![a.clone()],
        Box::new(move |g, out, parents| {
            let x = parents[0].data();
            vec![Some(
                g.iter()
                    .zip(x.iter().zip(out))
                    .map(|(g, (&x, &y))| g * grad(x, y))
                    .collect(),
            )]
        }),
    )
}

/// Floors |x| at eps while keeping its sign (zero maps to +eps).
fn floor_magnitude(x: f64, eps: f64) -> f64 {
    if x.abs() >= eps {
        x
    } else if x < 0.0 {
        -eps
    } else {
        eps
    }
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        binary(self, other, "add", |a, b| a + b, |_, _, g| (g, g))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        binary(self, other, "sub", |a, b| a - b, |_, _, g| (g, -g))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        binary(self, other, "mul", |a, b| a * b, |a, b, g| (g * b, g * a))
    }

    /// Division; denominators with |b| below the epsilon floor are clamped
    /// to ±eps and counted under [`diag::DIV_CLAMP`].
    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        let eps = diag::epsilon_floor();
        let clamped = other.data().iter().filter(|v| v.abs() < eps).count();
        diag::bump(diag::DIV_CLAMP, clamped as u64);
        binary(
            self,
            other,
            "div",
            move |a, b| a / floor_magnitude(b, eps),
            |a, b, g| {
                let eps = diag::epsilon_floor();
                if b.abs() < eps {
                    let b = floor_magnitude(b, eps);
                    (g / b, 0.0)
                } else {
                    (g / b, -g * a / (b * b))
                }
            },
        )
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    pub fn scale(&self, k: f64) -> Tensor {
        unary(self, move |x| k * x, move |_, _| k)
    }

    pub fn add_scalar(&self, k: f64) -> Tensor {
        unary(self, move |x| x + k, |_, _| 1.0)
    }

    pub fn exp(&self) -> Tensor {
        unary(self, f64::exp, |_, y| y)
    }

    /// Natural log; inputs below the epsilon floor are clamped and counted
    /// under [`diag::LOG_CLAMP`]. Clamped entries receive no gradient.
    pub fn log(&self) -> Tensor {
        let eps = diag::epsilon_floor();
        let clamped = self.data().iter().filter(|&&v| v < eps).count();
        diag::bump(diag::LOG_CLAMP, clamped as u64);
        unary(
            self,
            move |x| x.max(eps).ln(),
            move |x, _| if x < eps { 0.0 } else { 1.0 / x },
        )
    }

    /// Square root; negative inputs are clamped to zero and counted under
    /// [`diag::SQRT_CLAMP`]. The derivative uses max(y, eps) in the denominator.
    pub fn sqrt(&self) -> Tensor {
        let eps = diag::epsilon_floor();
        let clamped = self.data().iter().filter(|&&v| v < 0.0).count();
        diag::bump(diag::SQRT_CLAMP, clamped as u64);
        unary(
            self,
            |x| x.max(0.0).sqrt(),
            move |x, y| if x < 0.0 { 0.0 } else { 0.5 / y.max(eps) },
        )
    }

    pub fn pow(&self, p: f64) -> Tensor {
        unary(self, move |x| x.powf(p), move |x, _| p * x.powf(p - 1.0))
    }

    pub fn square(&self) -> Tensor {
        unary(self, |x| x * x, |x, _| 2.0 * x)
    }

    pub fn relu(&self) -> Tensor {
        unary(self, |x| x.max(0.0), |x, _| if x > 0.0 { 1.0 } else { 0.0 })
    }

    /// max(x, floor); floored entries are counted under `counter` and receive no gradient.
    pub fn clamp_min(&self, floor: f64, counter: &'static str) -> Tensor {
        let clamped = self.data().iter().filter(|&&v| v < floor).count();
        diag::bump(counter, clamped as u64);
        unary(
            self,
            move |x| x.max(floor),
            move |x, _| if x < floor { 0.0 } else { 1.0 },
        )
    }

    pub fn sum(&self) -> Tensor {
        let s: f64 = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op(
            vec![1],
            vec![s],
            vec![self.clone()],
            Box::new(move |g, _, _| vec![Some(vec![g[0]; n])]),
        )
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel();
        let s: f64 = self.data().iter().sum();
        Tensor::from_op(
            vec![1],
            vec![s / n as f64],
            vec![self.clone()],
            Box::new(move |g, _, _| vec![Some(vec![g[0] / n as f64; n])]),
        )
    }

    /// Sum over `axis`, dropping it (a rank-1 input reduces to shape `[1]`).
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::Shape(format!("sum_axis: axis {axis} out of range for {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out = vec![0.0; outer * inner];
        let d = self.data();
        for o in 0..outer {
            for k in 0..len {
                let base = (o * len + k) * inner;
                for i in 0..inner {
                    out[o * inner + i] += d[base + i];
                }
            }
        }
        let mut out_shape: Vec<usize> = shape[..axis].iter().chain(&shape[axis + 1..]).copied().collect();
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        Ok(Tensor::from_op(
            out_shape,
            out,
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let mut gx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for k in 0..len {
                        let base = (o * len + k) * inner;
                        gx[base..base + inner].copy_from_slice(&g[o * inner..(o + 1) * inner]);
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        let len = *self
            .shape()
            .get(axis)
            .ok_or_else(|| Error::Shape(format!("mean_axis: axis {axis} out of range for {:?}", self.shape())))?;
        Ok(self.sum_axis(axis)?.scale(1.0 / len as f64))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() || shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!(
                "reshape: cannot view {:?} as {shape:?}",
                self.shape()
            )));
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            Box::new(|g, _, _| vec![Some(g.to_vec())]),
        ))
    }

    /// Transpose of a rank-2 tensor.
    pub fn t(&self) -> Result<Tensor> {
        let [r, c] = *self.shape() else {
            return Err(Error::Shape(format!("transpose needs rank 2, got {:?}", self.shape())));
        };
        let d = self.data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = d[i * c + j];
            }
        }
        Ok(Tensor::from_op(
            vec![c, r],
            out,
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let mut gx = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        gx[i * c + j] = g[j * r + i];
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
        let rank = first.shape().len();
        if axis >= rank {
            return Err(Error::Shape(format!("concat: axis {axis} out of range for {:?}", first.shape())));
        }
        for p in parts {
            let same_rank = p.shape().len() == rank;
            let same_rest = same_rank
                && (0..rank).all(|d| d == axis || p.shape()[d] == first.shape()[d]);
            if !same_rest {
                return Err(Error::Shape(format!(
                    "concat: {:?} does not match {:?} off axis {axis}",
                    p.shape(),
                    first.shape()
                )));
            }
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let lens: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = lens.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &len) in parts.iter().zip(&lens) {
                data.extend_from_slice(&p.data()[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        Ok(Tensor::from_op(
            shape,
            data,
            parts.to_vec(),
            Box::new(move |g, _, parents| {
                let mut grads: Vec<Vec<f64>> = lens.iter().map(|&l| Vec::with_capacity(outer * l * inner)).collect();
                let mut pos = 0;
                for _ in 0..outer {
                    for (gp, &len) in grads.iter_mut().zip(&lens) {
                        gp.extend_from_slice(&g[pos..pos + len * inner]);
                        pos += len * inner;
                    }
                }
                grads
                    .into_iter()
                    .zip(parents)
                    .map(|(gp, p)| p.requires_grad().then_some(gp))
                    .collect()
            }),
        ))
    }

    /// Rows `start..end` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Tensor> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() || start >= end || end > shape[axis] {
            return Err(Error::Shape(format!(
                "slice {start}..{end} on axis {axis} invalid for {shape:?}"
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let width = end - start;
        let d = self.data();
        let mut data = Vec::with_capacity(outer * width * inner);
        for o in 0..outer {
            data.extend_from_slice(&d[(o * len + start) * inner..(o * len + end) * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = width;
        Ok(Tensor::from_op(
            out_shape,
            data,
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let mut gx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    gx[(o * len + start) * inner..(o * len + end) * inner]
                        .copy_from_slice(&g[o * width * inner..(o + 1) * width * inner]);
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Matrix product of rank-2 tensors.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (&[m, k], &[k2, n]) = (self.shape(), other.shape()) else {
            return Err(Error::Shape(format!(
                "matmul needs rank-2 operands, got {:?} and {:?}",
                self.shape(),
                other.shape()
            )));
        };
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul inner extents differ: {:?} x {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.data(), false, other.data(), false, &mut out, 0.0);
        Ok(Tensor::from_op(
            vec![m, n],
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |g, _, parents| {
                let (a, b) = (&parents[0], &parents[1]);
                let ga = a.requires_grad().then(|| {
                    // dA = G · Bᵀ
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, g, false, b.data(), true, &mut ga, 0.0);
                    ga
                });
                let gb = b.requires_grad().then(|| {
                    // dB = Aᵀ · G
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, a.data(), true, g, false, &mut gb, 0.0);
                    gb
                });
                vec![ga, gb]
            }),
        ))
    }

    /// Scales each slice along `axis` to unit Euclidean norm. Slices whose
    /// norm is below the epsilon floor pass through unchanged and are counted
    /// under [`diag::ZERO_NORM`].
    pub fn l2_normalize(&self, axis: usize) -> Result<Tensor> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::Shape(format!("l2_normalize: axis {axis} out of range for {shape:?}")));
        }
        let eps = diag::epsilon_floor();
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let idx = move |o: usize, k: usize, i: usize| (o * len + k) * inner + i;
        let d = self.data();
        let mut norms = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let s: f64 = (0..len).map(|k| d[idx(o, k, i)].powi(2)).sum();
                norms[o * inner + i] = s.sqrt();
            }
        }
        let degenerate = norms.iter().filter(|&&n| n < eps).count();
        diag::bump(diag::ZERO_NORM, degenerate as u64);
        let mut out = d.to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let nrm = norms[o * inner + i];
                if nrm >= eps {
                    for k in 0..len {
                        out[idx(o, k, i)] /= nrm;
                    }
                }
            }
        }
        Ok(Tensor::from_op(
            shape,
            out,
            vec![self.clone()],
            Box::new(move |g, y, _| {
                let mut gx = g.to_vec();
                for o in 0..outer {
                    for i in 0..inner {
                        let nrm = norms[o * inner + i];
                        if nrm < eps {
                            continue;
                        }
                        let dot: f64 = (0..len).map(|k| y[idx(o, k, i)] * g[idx(o, k, i)]).sum();
                        for k in 0..len {
                            let j = idx(o, k, i);
                            gx[j] = (g[j] - y[j] * dot) / nrm;
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Numerically stable log-softmax over the last axis.
    pub fn log_softmax(&self) -> Result<Tensor> {
        let shape = self.shape().to_vec();
        let c = *shape.last().ok_or_else(|| Error::Shape("log_softmax of rank-0".into()))?;
        let rows = self.numel() / c;
        let d = self.data();
        let mut out = vec![0.0; d.len()];
        for r in 0..rows {
            let row = &d[r * c..(r + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for j in 0..c {
                out[r * c + j] = row[j] - lse;
            }
        }
        Ok(Tensor::from_op(
            shape,
            out,
            vec![self.clone()],
            Box::new(move |g, y, _| {
                let mut gx = vec![0.0; g.len()];
                for r in 0..rows {
                    let gs: f64 = g[r * c..(r + 1) * c].iter().sum();
                    for j in 0..c {
                        let i = r * c + j;
                        gx[i] = g[i] - y[i].exp() * gs;
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Softmax over the last axis (no gradient; for reporting).
    pub fn softmax_values(&self) -> Vec<f64> {
        let c = *self.shape().last().unwrap_or(&1);
        let mut out = self.to_vec();
        for row in out.chunks_mut(c) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                s += *v;
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        out
    }
}

/// C = op(A)·op(B) + beta·C for row-major operands, where op(A) is m×k and
/// op(B) is k×n. `trans_*` marks an operand stored transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    beta: f64,
) {
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: strides describe the row-major buffers whose lengths the
    // callers size as m*k, k*n and m*n.
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn identity_matmul() {
        let i = Tensor::eye(2);
        assert_eq!(i.matmul(&i).unwrap().data(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn small_matmul() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[2, 1], &[1.0, 1.0]);
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        let msg = a.matmul(&b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("x [2, 3]"), "{msg}");
    }

    #[test]
    fn relu_values() {
        assert_eq!(t(&[3], &[-1.0, 0.0, 2.0]).relu().data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn log_derivative() {
        let x = Tensor::param(&[1], vec![2.0]).unwrap();
        x.log().sum().backward().unwrap();
        assert!((x.grad().unwrap()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn mean_gradient_uniform() {
        let x = Tensor::param(&[4, 4], vec![1.0; 16]).unwrap();
        let m = x.mean();
        assert_eq!(m.item(), 1.0);
        m.backward().unwrap();
        assert!(x.grad().unwrap().iter().all(|&g| g == 1.0 / 16.0));
    }

    #[test]
    fn sum_gradient_is_ones() {
        let x = Tensor::param(&[2, 3, 2], (0..12).map(|v| v as f64).collect()).unwrap();
        x.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 12]);
    }

    #[test]
    fn square_gradient() {
        let x = Tensor::param(&[1], vec![3.0]).unwrap();
        x.mul(&x).unwrap().sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![6.0]);
    }

    #[test]
    fn backward_accumulates() {
        let x = Tensor::param(&[1], vec![3.0]).unwrap();
        let y = x.scale(2.0).sum();
        y.backward().unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![4.0]);
        x.zero_grad();
        assert!(x.grad().is_none());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        assert!(matches!(x.scale(2.0).backward(), Err(Error::Contract(_))));
    }

    #[test]
    fn intermediates_receive_grad() {
        let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
        let h = x.scale(3.0);
        h.sum().backward().unwrap();
        assert_eq!(h.grad().unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn l2_normalize_values() {
        let v = t(&[1, 2], &[3.0, 4.0]).l2_normalize(1).unwrap();
        assert!((v.data()[0] - 0.6).abs() < 1e-15 && (v.data()[1] - 0.8).abs() < 1e-15);
        let u = t(&[1, 3], &[0.0, 1.0, 0.0]).l2_normalize(1).unwrap();
        assert_eq!(u.data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn l2_normalize_zero_row_passes_through() {
        diag::reset();
        let v = t(&[2, 2], &[0.0, 0.0, 3.0, 4.0]).l2_normalize(1).unwrap();
        assert_eq!(&v.data()[..2], &[0.0, 0.0]);
        assert_eq!(diag::count(diag::ZERO_NORM), 1);
    }

    #[test]
    fn log_clamps_and_counts() {
        diag::reset();
        let y = t(&[2], &[0.0, -1.0]).log();
        assert!(y.is_finite());
        assert_eq!(diag::count(diag::LOG_CLAMP), 2);
        let prev = diag::set_epsilon_floor(1e-3);
        let z = t(&[1], &[0.0]).log();
        assert!((z.item() - 1e-3f64.ln()).abs() < 1e-12);
        diag::set_epsilon_floor(prev);
    }

    #[test]
    fn div_by_zero_clamps() {
        diag::reset();
        let y = t(&[1], &[1.0]).div(&t(&[1], &[0.0])).unwrap();
        assert!(y.is_finite());
        assert_eq!(diag::count(diag::DIV_CLAMP), 1);
    }

    #[test]
    fn trailing_broadcast() {
        let a = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Tensor::param(&[3], vec![10.0, 20.0, 30.0]).unwrap();
        let c = a.add(&b).unwrap();
        assert_eq!(c.data(), &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
        c.sum().backward().unwrap();
        assert_eq!(b.grad().unwrap(), vec![2.0, 2.0, 2.0]);
        assert!(a.add(&Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn concat_and_slice_invert() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[1, 2], &[5.0, 6.0]);
        let c = Tensor::concat(&[a.clone(), b], 0).unwrap();
        assert_eq!(c.shape(), &[3, 2]);
        assert_eq!(c.slice(0, 0, 2).unwrap().data(), a.data());
        let d = Tensor::concat(&[a.clone(), a.clone()], 1).unwrap();
        assert_eq!(d.data(), &[1.0, 2.0, 1.0, 2.0, 3.0, 4.0, 3.0, 4.0]);
        assert_eq!(d.slice(1, 2, 4).unwrap().data(), a.data());
    }

    #[test]
    fn log_softmax_rows_normalize() {
        let x = t(&[2, 3], &[1.0, 2.0, 3.0, 1000.0, 0.0, -1000.0]);
        let p = x.log_softmax().unwrap();
        for row in p.data().chunks(3) {
            let s: f64 = row.iter().map(|v| v.exp()).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
