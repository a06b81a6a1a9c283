//! Differentiable operations. Broadcasting is limited to a right operand whose
//! shape is a suffix of the left operand's shape (leading-batch expansion).

use std::rc::Rc;

use super::{numel, Tensor};
use crate::error::{Error, Result};
use crate::hierarchy::SparseMatrix;
use crate::spiral::FILLER;

/// `c = a · b + beta · c` on strided row/column views.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: the caller passes slices covering every strided element addressed
    // for the given sizes; `c` is contiguous row-major `m x n`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn is_suffix(long: &[usize], short: &[usize]) -> bool {
    short.len() <= long.len() && long[long.len() - short.len()..] == *short
}

fn erf(x: f64) -> f64 {
    libm::erf(x)
}

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

impl Tensor {
    fn binary(
        &self,
        other: &Tensor,
        op: &'static str,
        f: fn(f64, f64) -> f64,
        da: fn(f64, f64) -> f64,
        db: fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        if !is_suffix(self.shape(), other.shape()) {
            return Err(Error::shape(op, self.shape(), other.shape()));
        }
        let inner = other.numel().max(1);
        let data: Vec<f64> = {
            let a = self.data();
            let b = other.data();
            a.iter().enumerate().map(|(i, &x)| f(x, b[i % inner])).collect()
        };
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), other.clone()],
            move |g, p| {
                let a = p[0].data();
                let b = p[1].data();
                p[0].accumulate(|ga| {
                    for i in 0..g.len() {
                        ga[i] += g[i] * da(a[i], b[i % inner]);
                    }
                });
                p[1].accumulate(|gb| {
                    for i in 0..g.len() {
                        gb[i % inner] += g[i] * db(a[i], b[i % inner]);
                    }
                });
            },
        ))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "add", |a, b| a + b, |_, _| 1.0, |_, _| 1.0)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "sub", |a, b| a - b, |_, _| 1.0, |_, _| -1.0)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "mul", |a, b| a * b, |_, b| b, |a, _| a)
    }

    fn unary(&self, f: impl Fn(f64) -> f64, df: impl Fn(f64, f64) -> f64 + 'static) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|&x| f(x)).collect();
        let out = data.clone();
        Tensor::from_op(self.shape().to_vec(), data, vec![self.clone()], move |g, p| {
            let x = p[0].data();
            p[0].accumulate(|gx| {
                for i in 0..g.len() {
                    gx[i] += g[i] * df(x[i], out[i]);
                }
            });
        })
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.unary(move |x| x * s, move |_, _| s)
    }

    pub fn abs(&self) -> Tensor {
        self.unary(f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    /// Exponential linear unit with alpha = 1.
    pub fn elu(&self) -> Tensor {
        self.unary(
            |x| if x > 0.0 { x } else { x.exp_m1() },
            |x, y| if x > 0.0 { 1.0 } else { y + 1.0 },
        )
    }

    /// Exact GELU, `x Φ(x)`.
    pub fn gelu(&self) -> Tensor {
        self.unary(
            |x| 0.5 * x * (1.0 + erf(x * INV_SQRT_2)),
            |x, _| 0.5 * (1.0 + erf(x * INV_SQRT_2)) + x * INV_SQRT_2PI * (-0.5 * x * x).exp(),
        )
    }

    /// `[..., K] x [K, N] -> [..., N]`.
    pub fn matmul(&self, w: &Tensor) -> Result<Tensor> {
        let (ws, xs) = (w.shape(), self.shape());
        if ws.len() != 2 || xs.is_empty() || xs[xs.len() - 1] != ws[0] {
            return Err(Error::shape("matmul", xs, ws));
        }
        let (k, n) = (ws[0], ws[1]);
        let m = self.numel() / k.max(1);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &self.data(), (k, 1), &w.data(), (n, 1), 0.0, &mut out);
        let mut shape = xs.to_vec();
        *shape.last_mut().unwrap() = n;
        Ok(Tensor::from_op(shape, out, vec![self.clone(), w.clone()], move |g, p| {
            if p[0].requires_grad() {
                let wd = p[1].data();
                p[0].accumulate(|ga| gemm(m, n, k, g, (n, 1), &wd, (1, n), 1.0, ga));
            }
            if p[1].requires_grad() {
                let ad = p[0].data();
                p[1].accumulate(|gw| gemm(k, m, n, &ad, (1, k), g, (n, 1), 1.0, gw));
            }
        }))
    }

    /// Batched `[B, M, K] x [B, K, N] -> [B, M, N]`.
    pub fn bmm(&self, other: &Tensor) -> Result<Tensor> {
        let (a, b) = (self.shape(), other.shape());
        if a.len() != 3 || b.len() != 3 || a[0] != b[0] || a[2] != b[1] {
            return Err(Error::shape("bmm", a, b));
        }
        let (bs, m, k, n) = (a[0], a[1], a[2], b[2]);
        let mut out = vec![0.0; bs * m * n];
        {
            let (ad, bd) = (self.data(), other.data());
            for i in 0..bs {
                gemm(
                    m,
                    k,
                    n,
                    &ad[i * m * k..],
                    (k, 1),
                    &bd[i * k * n..],
                    (n, 1),
                    0.0,
                    &mut out[i * m * n..(i + 1) * m * n],
                );
            }
        }
        Ok(Tensor::from_op(
            vec![bs, m, n],
            out,
            vec![self.clone(), other.clone()],
            move |g, p| {
                let (ad, bd) = (p[0].data(), p[1].data());
                p[0].accumulate(|ga| {
                    for i in 0..bs {
                        gemm(
                            m,
                            n,
                            k,
                            &g[i * m * n..],
                            (n, 1),
                            &bd[i * k * n..],
                            (1, n),
                            1.0,
                            &mut ga[i * m * k..(i + 1) * m * k],
                        );
                    }
                });
                p[1].accumulate(|gb| {
                    for i in 0..bs {
                        gemm(
                            k,
                            m,
                            n,
                            &ad[i * m * k..],
                            (1, k),
                            &g[i * m * n..],
                            (n, 1),
                            1.0,
                            &mut gb[i * k * n..(i + 1) * k * n],
                        );
                    }
                });
            },
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() {
            return Err(Error::shape("reshape", self.shape(), shape));
        }
        Ok(Tensor::from_op(shape.to_vec(), self.to_vec(), vec![self.clone()], |g, p| {
            p[0].accumulate(|gx| {
                for (a, b) in gx.iter_mut().zip(g) {
                    *a += b;
                }
            });
        }))
    }

    /// General axis permutation; `out.shape[i] = self.shape[axes[i]]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        let shape = self.shape().to_vec();
        let rank = shape.len();
        let mut check = axes.to_vec();
        check.sort_unstable();
        if check != (0..rank).collect::<Vec<_>>() {
            return Err(Error::shape("permute", &shape, axes));
        }
        let mut in_strides = vec![1; rank];
        for i in (0..rank.saturating_sub(1)).rev() {
            in_strides[i] = in_strides[i + 1] * shape[i + 1];
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
        // src[i] = input offset of output element i.
        let total = self.numel();
        let mut src = Vec::with_capacity(total);
        let mut idx = vec![0usize; rank];
        for _ in 0..total {
            src.push(idx.iter().zip(&strides).map(|(i, s)| i * s).sum::<usize>());
            for d in (0..rank).rev() {
                idx[d] += 1;
                if idx[d] < out_shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        let data = {
            let x = self.data();
            src.iter().map(|&s| x[s]).collect()
        };
        Ok(Tensor::from_op(out_shape, data, vec![self.clone()], move |g, p| {
            p[0].accumulate(|gx| {
                for (i, &s) in src.iter().enumerate() {
                    gx[s] += g[i];
                }
            });
        }))
    }

    /// Swaps the last two axes.
    pub fn transpose(&self) -> Result<Tensor> {
        let r = self.shape().len();
        if r < 2 {
            return Err(Error::shape("transpose", self.shape(), &[]));
        }
        let mut axes: Vec<usize> = (0..r).collect();
        axes.swap(r - 2, r - 1);
        self.permute(&axes)
    }

    pub fn concat(tensors: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = tensors
            .first()
            .ok_or_else(|| Error::shape("concat", &[], &[]))?
            .shape()
            .to_vec();
        if axis >= first.len() {
            return Err(Error::shape("concat", &first, &[axis]));
        }
        for t in tensors {
            let s = t.shape();
            if s.len() != first.len()
                || s[..axis] != first[..axis]
                || s[axis + 1..] != first[axis + 1..]
            {
                return Err(Error::shape("concat", &first, s));
            }
        }
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let widths: Vec<usize> = tensors.iter().map(|t| t.shape()[axis] * inner).collect();
        let row: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(outer * row);
        {
            let datas: Vec<_> = tensors.iter().map(|t| t.data()).collect();
            for o in 0..outer {
                for (d, &w) in datas.iter().zip(&widths) {
                    data.extend_from_slice(&d[o * w..(o + 1) * w]);
                }
            }
        }
        let mut shape = first;
        shape[axis] = row / inner.max(1);
        if inner == 0 {
            shape[axis] = tensors.iter().map(|t| t.shape()[axis]).sum();
        }
        Ok(Tensor::from_op(shape, data, tensors.to_vec(), move |g, p| {
            let mut offset = 0;
            for (t, &w) in p.iter().zip(&widths) {
                t.accumulate(|gt| {
                    for o in 0..outer {
                        let src = &g[o * row + offset..o * row + offset + w];
                        for (a, b) in gt[o * w..(o + 1) * w].iter_mut().zip(src) {
                            *a += b;
                        }
                    }
                });
                offset += w;
            }
        }))
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Tensor> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() || start > end || end > shape[axis] {
            return Err(Error::shape("slice", &shape, &[axis, start, end]));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let full = shape[axis] * inner;
        let (lo, w) = (start * inner, (end - start) * inner);
        let mut data = Vec::with_capacity(outer * w);
        {
            let x = self.data();
            for o in 0..outer {
                data.extend_from_slice(&x[o * full + lo..o * full + lo + w]);
            }
        }
        let mut out_shape = shape;
        out_shape[axis] = end - start;
        Ok(Tensor::from_op(out_shape, data, vec![self.clone()], move |g, p| {
            p[0].accumulate(|gx| {
                for o in 0..outer {
                    for (a, b) in gx[o * full + lo..o * full + lo + w].iter_mut().zip(&g[o * w..(o + 1) * w]) {
                        *a += b;
                    }
                }
            });
        }))
    }

    /// Spiral gather: `[B, N, C]` (or `[N, C]`) with an `M x l` index table gives
    /// `[B, M, l*C]`; `FILLER` entries produce zeros and receive no gradient.
    pub fn gather_rows(&self, table: Rc<Vec<usize>>, l: usize) -> Result<Tensor> {
        let s = self.shape().to_vec();
        if s.len() < 2 || l == 0 || table.len() % l != 0 {
            return Err(Error::shape("gather_rows", &s, &[table.len(), l]));
        }
        let (n, c) = (s[s.len() - 2], s[s.len() - 1]);
        let batch: usize = s[..s.len() - 2].iter().product();
        if let Some(&bad) = table.iter().find(|&&i| i != FILLER && i >= n) {
            return Err(Error::shape("gather_rows", &s, &[bad]));
        }
        let m = table.len() / l;
        let mut data = vec![0.0; batch * m * l * c];
        {
            let x = self.data();
            for b in 0..batch {
                let xb = &x[b * n * c..(b + 1) * n * c];
                let ob = &mut data[b * m * l * c..(b + 1) * m * l * c];
                for (slot, &src) in table.iter().enumerate() {
                    if src != FILLER {
                        ob[slot * c..(slot + 1) * c].copy_from_slice(&xb[src * c..(src + 1) * c]);
                    }
                }
            }
        }
        let mut shape = s[..s.len() - 2].to_vec();
        shape.extend([m, l * c]);
        Ok(Tensor::from_op(shape, data, vec![self.clone()], move |g, p| {
            p[0].accumulate(|gx| {
                for b in 0..batch {
                    let gb = &g[b * m * l * c..(b + 1) * m * l * c];
                    let xb = &mut gx[b * n * c..(b + 1) * n * c];
                    for (slot, &src) in table.iter().enumerate() {
                        if src != FILLER {
                            for k in 0..c {
                                xb[src * c + k] += gb[slot * c + k];
                            }
                        }
                    }
                }
            });
        }))
    }

    /// Sparse matrix times per-vertex features: `[B, cols, C] -> [B, rows, C]`.
    pub fn spmm(&self, matrix: Rc<SparseMatrix>) -> Result<Tensor> {
        let s = self.shape().to_vec();
        if s.len() < 2 || s[s.len() - 2] != matrix.cols() {
            return Err(Error::shape("spmm", &s, &[matrix.rows(), matrix.cols()]));
        }
        let c = s[s.len() - 1];
        let batch: usize = s[..s.len() - 2].iter().product();
        let data = matrix.apply(&self.data(), batch, c);
        let mut shape = s.clone();
        shape[s.len() - 2] = matrix.rows();
        Ok(Tensor::from_op(shape, data, vec![self.clone()], move |g, p| {
            p[0].accumulate(|gx| matrix.apply_transpose_add(g, batch, c, gx));
        }))
    }

    /// Sum over `axis`, removing it.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        let shape = self.shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::shape("sum", &shape, &[axis]));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let len = shape[axis];
        let mut data = vec![0.0; outer * inner];
        {
            let x = self.data();
            for o in 0..outer {
                for a in 0..len {
                    for i in 0..inner {
                        data[o * inner + i] += x[(o * len + a) * inner + i];
                    }
                }
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        Ok(Tensor::from_op(out_shape, data, vec![self.clone()], move |g, p| {
            p[0].accumulate(|gx| {
                for o in 0..outer {
                    for a in 0..len {
                        for i in 0..inner {
                            gx[(o * len + a) * inner + i] += g[o * inner + i];
                        }
                    }
                }
            });
        }))
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        let len = *self
            .shape()
            .get(axis)
            .ok_or_else(|| Error::shape("mean", self.shape(), &[axis]))?;
        Ok(self.sum_axis(axis)?.scale(1.0 / len as f64))
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&self) -> Tensor {
        let total: f64 = self.data().iter().sum();
        Tensor::from_op(vec![], vec![total], vec![self.clone()], |g, p| {
            p[0].accumulate(|gx| gx.iter_mut().for_each(|v| *v += g[0]));
        })
    }

    pub fn mean(&self) -> Tensor {
        self.sum().scale(1.0 / self.numel() as f64)
    }

    /// Softmax over the last axis. `-inf` entries get exactly zero weight.
    pub fn softmax(&self) -> Result<Tensor> {
        let s = self.shape();
        let d = *s.last().ok_or_else(|| Error::shape("softmax", s, &[]))?;
        let mut out = self.to_vec();
        for row in out.chunks_mut(d) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::AllMasked);
            }
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        let y = out.clone();
        Ok(Tensor::from_op(s.to_vec(), out, vec![self.clone()], move |g, p| {
            p[0].accumulate(|gx| {
                for ((gr, yr), xr) in g.chunks(d).zip(y.chunks(d)).zip(gx.chunks_mut(d)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for k in 0..d {
                        xr[k] += yr[k] * (gr[k] - dot);
                    }
                }
            });
        }))
    }

    /// Normalizes the last axis to zero mean, unit (biased) variance. No affine part.
    pub fn layer_norm(&self, eps: f64) -> Result<Tensor> {
        let s = self.shape();
        let d = *s.last().ok_or_else(|| Error::shape("layer_norm", s, &[]))?;
        let mut out = self.to_vec();
        let mut inv_std = Vec::with_capacity(out.len() / d.max(1));
        for row in out.chunks_mut(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let r = 1.0 / (var + eps).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * r;
            }
            inv_std.push(r);
        }
        let y = out.clone();
        Ok(Tensor::from_op(s.to_vec(), out, vec![self.clone()], move |g, p| {
            p[0].accumulate(|gx| {
                for (row, ((gr, yr), xr)) in g.chunks(d).zip(y.chunks(d)).zip(gx.chunks_mut(d)).enumerate() {
                    let mean_g = gr.iter().sum::<f64>() / d as f64;
                    let mean_gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for k in 0..d {
                        xr[k] += inv_std[row] * (gr[k] - mean_g - yr[k] * mean_gy);
                    }
                }
            });
        }))
    }

    /// Sets the last-axis entries flagged in `masked` to `-inf` (attention key mask).
    pub fn mask_last_axis(&self, masked: &[bool]) -> Result<Tensor> {
        let s = self.shape();
        if s.last() != Some(&masked.len()) {
            return Err(Error::shape("mask_last_axis", s, &[masked.len()]));
        }
        let d = masked.len();
        let mut out = self.to_vec();
        for row in out.chunks_mut(d) {
            for (v, &m) in row.iter_mut().zip(masked) {
                if m {
                    *v = f64::NEG_INFINITY;
                }
            }
        }
        let mask = masked.to_vec();
        Ok(Tensor::from_op(s.to_vec(), out, vec![self.clone()], move |g, p| {
            p[0].accumulate(|gx| {
                for (i, (a, b)) in gx.iter_mut().zip(g).enumerate() {
                    if !mask[i % d] {
                        *a += b;
                    }
                }
            });
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::from_vec(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn fixed_points() {
        assert_eq!(t(&[1], &[0.0]).gelu().item(), 0.0);
        let sm = t(&[3], &[0.0, 0.0, 0.0]).softmax().unwrap().to_vec();
        assert!(sm.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        assert_eq!(t(&[2], &[-1.0, 2.0]).abs().to_vec(), vec![1.0, 2.0]);
        assert!((t(&[1], &[-1.0]).elu().item() - ((-1f64).exp() - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn matmul_values_and_shape_errors() {
        let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[2, 3], &[1.0, 0.0, 1.0, 0.0, 1.0, 1.0]);
        assert_eq!(a.matmul(&b).unwrap().to_vec(), vec![1.0, 2.0, 3.0, 3.0, 4.0, 7.0]);
        let err = b.matmul(&a).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn backward_basics() {
        let p = Tensor::leaf(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        p.sum().backward().unwrap();
        assert_eq!(p.grad().unwrap(), vec![1.0; 3]);
        p.zero_grad();
        p.mul(&p).unwrap().sum().backward().unwrap();
        assert_eq!(p.grad().unwrap(), vec![2.0, -4.0, 1.0]);
        // A second backward accumulates.
        let loss = p.mul(&p).unwrap().sum();
        loss.backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(p.grad().unwrap(), vec![6.0, -12.0, 3.0]);
        assert!(matches!(p.scale(2.0).backward(), Err(Error::NonScalar(_))));
    }

    #[test]
    fn filler_rows_are_zero_and_gradient_free() {
        let x = Tensor::leaf(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let y = x.gather_rows(Rc::new(vec![2, FILLER, 0, 2]), 2).unwrap();
        assert_eq!(y.shape(), &[2, 4]);
        assert_eq!(y.to_vec(), vec![5.0, 6.0, 0.0, 0.0, 1.0, 2.0, 5.0, 6.0]);
        y.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0, 1.0, 0.0, 0.0, 2.0, 2.0]);
    }

    #[test]
    fn layer_norm_statistics() {
        let x = t(&[2, 5], &[1.0, 5.0, -3.0, 2.5, 0.0, 100.0, 101.0, 99.0, 100.5, 98.0]);
        let y = x.layer_norm(1e-5).unwrap().to_vec();
        for row in y.chunks(5) {
            let mean = row.iter().sum::<f64>() / 5.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 5.0;
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn masked_softmax_zeroes_masked_keys() {
        let x = t(&[2, 3], &[0.3, 9.0, -1.0, 2.0, 2.0, 2.0]);
        let y = x.mask_last_axis(&[false, true, false]).unwrap().softmax().unwrap().to_vec();
        assert_eq!(y[1], 0.0);
        assert_eq!(y[4], 0.0);
        assert!((y[0] + y[2] - 1.0).abs() < 1e-12);
        let all = x.mask_last_axis(&[true, true, true]).unwrap();
        assert!(matches!(all.softmax(), Err(Error::AllMasked)));
    }

    #[test]
    fn permute_and_concat_layouts() {
        let x = t(&[2, 3], &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(x.transpose().unwrap().to_vec(), vec![0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
        let c = Tensor::concat(&[x.clone(), x.slice(1, 1, 2).unwrap()], 1).unwrap();
        assert_eq!(c.shape(), &[2, 4]);
        assert_eq!(c.to_vec(), vec![0.0, 1.0, 2.0, 1.0, 3.0, 4.0, 5.0, 4.0]);
        assert_eq!(x.sum_axis(0).unwrap().to_vec(), vec![3.0, 5.0, 7.0]);
        assert!(x.add(&t(&[2], &[1.0, 1.0])).is_err());
        assert_eq!(x.add(&t(&[3], &[1.0, 1.0, 1.0])).unwrap().to_vec()[5], 6.0);
    }
}
