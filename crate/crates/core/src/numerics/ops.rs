//! Differentiable operations over [`Tensor`].
//!
//! Every op validates shapes up front and records a backward closure when any
//! input requires a gradient. Rank is at most 2 except where noted.

use std::ops::Range;

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

fn dims2(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(Error::shape(op, t.shape(), &[0, 0])),
    }
}

/// `c[m,n] += a[m,k] · b[k,n]`
pub(crate) fn gemm_nn(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for t in 0..k {
            let av = a[i * k + t];
            if av == 0.0 {
                continue;
            }
            let b_row = &b[t * n..(t + 1) * n];
            for (cv, bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[m,n] += a[m,k] · b[n,k]ᵀ`
pub(crate) fn gemm_nt(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            c[i * n + j] += dot(a_row, b_row);
        }
    }
}

/// `c[k,n] += a[m,k]ᵀ · b[m,n]`
pub(crate) fn gemm_tn(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    for i in 0..m {
        let b_row = &b[i * n..(i + 1) * n];
        for t in 0..k {
            let av = a[i * k + t];
            if av == 0.0 {
                continue;
            }
            let c_row = &mut c[t * n..(t + 1) * n];
            for (cv, bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    // Eight independent lanes so the compiler can vectorise.
    let mut acc = [0.0f32; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        for l in 0..8 {
            acc[l] += a[c * 8 + l] * b[c * 8 + l];
        }
    }
    let mut s: f32 = acc.iter().sum();
    for i in chunks * 8..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// `[m,k] · [k,n] → [m,n]`
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = dims2(a, "matmul")?;
    let (k2, n) = dims2(b, "matmul")?;
    if k != k2 {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let mut out = vec![0.0; m * n];
    gemm_nn(m, k, n, &a.data(), &b.data(), &mut out);
    let (ac, bc) = (a.clone(), b.clone());
    Ok(Tensor::from_op(
        vec![m, n],
        out,
        vec![a.clone(), b.clone()],
        Box::new(move |g| {
            let ga = ac.requires_grad().then(|| {
                let mut ga = vec![0.0; m * k];
                gemm_nt(m, n, k, g, &bc.data(), &mut ga);
                ga
            });
            let gb = bc.requires_grad().then(|| {
                let mut gb = vec![0.0; k * n];
                gemm_tn(m, k, n, &ac.data(), g, &mut gb);
                gb
            });
            vec![ga, gb]
        }),
    ))
}

/// `[m,k] · [n,k]ᵀ → [m,n]`
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = dims2(a, "matmul_nt")?;
    let (n, k2) = dims2(b, "matmul_nt")?;
    if k != k2 {
        return Err(Error::shape("matmul_nt", a.shape(), b.shape()));
    }
    let mut out = vec![0.0; m * n];
    gemm_nt(m, k, n, &a.data(), &b.data(), &mut out);
    let (ac, bc) = (a.clone(), b.clone());
    Ok(Tensor::from_op(
        vec![m, n],
        out,
        vec![a.clone(), b.clone()],
        Box::new(move |g| {
            let ga = ac.requires_grad().then(|| {
                let mut ga = vec![0.0; m * k];
                gemm_nn(m, n, k, g, &bc.data(), &mut ga);
                ga
            });
            let gb = bc.requires_grad().then(|| {
                let mut gb = vec![0.0; n * k];
                gemm_tn(m, n, k, g, &ac.data(), &mut gb);
                gb
            });
            vec![ga, gb]
        }),
    ))
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::shape("add", a.shape(), b.shape()));
    }
    let out: Vec<f32> = a.data().iter().zip(b.data().iter()).map(|(x, y)| x + y).collect();
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        out,
        vec![a.clone(), b.clone()],
        Box::new(|g| vec![Some(g.to_vec()), Some(g.to_vec())]),
    ))
}

/// Elementwise product.
pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::shape("mul", a.shape(), b.shape()));
    }
    let out: Vec<f32> = a.data().iter().zip(b.data().iter()).map(|(x, y)| x * y).collect();
    let (ac, bc) = (a.clone(), b.clone());
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        out,
        vec![a.clone(), b.clone()],
        Box::new(move |g| {
            let ga = ac
                .requires_grad()
                .then(|| g.iter().zip(bc.data().iter()).map(|(g, y)| g * y).collect());
            let gb = bc
                .requires_grad()
                .then(|| g.iter().zip(ac.data().iter()).map(|(g, x)| g * x).collect());
            vec![ga, gb]
        }),
    ))
}

/// Adds `bias[n]` to every row of `x[.., n]`.
pub fn add_bias(x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let n = *x.shape().last().unwrap();
    if bias.shape() != [n] {
        return Err(Error::shape("add_bias", x.shape(), bias.shape()));
    }
    let b = bias.data();
    let out: Vec<f32> = x
        .data()
        .chunks(n)
        .flat_map(|row| row.iter().zip(b.iter()).map(|(v, b)| v + b))
        .collect();
    Ok(Tensor::from_op(
        x.shape().to_vec(),
        out,
        vec![x.clone(), bias.clone()],
        Box::new(move |g| {
            let mut gb = vec![0.0; n];
            for row in g.chunks(n) {
                gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
            }
            vec![Some(g.to_vec()), Some(gb)]
        }),
    ))
}

pub fn scale(x: &Tensor, c: f32) -> Tensor {
    let out = x.data().iter().map(|v| v * c).collect();
    Tensor::from_op(
        x.shape().to_vec(),
        out,
        vec![x.clone()],
        Box::new(move |g| vec![Some(g.iter().map(|v| v * c).collect())]),
    )
}

pub fn sum(x: &Tensor) -> Tensor {
    let n = x.numel();
    let s: f64 = x.data().iter().map(|&v| v as f64).sum();
    Tensor::from_op(
        vec![1],
        vec![s as f32],
        vec![x.clone()],
        Box::new(move |g| vec![Some(vec![g[0]; n])]),
    )
}

pub fn mean(x: &Tensor) -> Tensor {
    let n = x.numel() as f32;
    scale(&sum(x), 1.0 / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GeluKind {
    /// `x·Φ(x)` with the exact Gaussian CDF.
    #[default]
    Exact,
    /// The tanh approximation used by some BERT ports.
    Tanh,
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

fn gelu_scalar(x: f64, kind: GeluKind) -> (f64, f64) {
    match kind {
        GeluKind::Exact => {
            let cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
            let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
            (x * cdf, cdf + x * pdf)
        }
        GeluKind::Tanh => {
            let inner = SQRT_2_OVER_PI * (x + 0.044715 * x * x * x);
            let t = inner.tanh();
            let d_inner = SQRT_2_OVER_PI * (1.0 + 3.0 * 0.044715 * x * x);
            let y = 0.5 * x * (1.0 + t);
            let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner;
            (y, dy)
        }
    }
}

pub fn gelu(x: &Tensor, kind: GeluKind) -> Tensor {
    let (out, deriv): (Vec<f32>, Vec<f32>) = x
        .data()
        .iter()
        .map(|&v| {
            let (y, dy) = gelu_scalar(v as f64, kind);
            (y as f32, dy as f32)
        })
        .unzip();
    Tensor::from_op(
        x.shape().to_vec(),
        out,
        vec![x.clone()],
        Box::new(move |g| vec![Some(g.iter().zip(&deriv).map(|(g, d)| g * d).collect())]),
    )
}

/// Normalises each row of `x[.., h]` to zero mean and unit variance, then
/// applies `gamma` and `beta`.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f32) -> Result<Tensor> {
    let h = *x.shape().last().unwrap();
    if gamma.shape() != [h] {
        return Err(Error::shape("layer_norm", x.shape(), gamma.shape()));
    }
    if beta.shape() != [h] {
        return Err(Error::shape("layer_norm", x.shape(), beta.shape()));
    }
    let rows = x.numel() / h;
    let mut xhat = vec![0.0f32; rows * h];
    let mut inv_std = vec![0.0f32; rows];
    let mut out = vec![0.0f32; rows * h];
    {
        let xd = x.data();
        let (gd, bd) = (gamma.data(), beta.data());
        for r in 0..rows {
            let row = &xd[r * h..(r + 1) * h];
            let mu = row.iter().map(|&v| v as f64).sum::<f64>() / h as f64;
            let var = row.iter().map(|&v| (v as f64 - mu).powi(2)).sum::<f64>() / h as f64;
            let is = 1.0 / (var + eps as f64).sqrt();
            inv_std[r] = is as f32;
            for j in 0..h {
                let xh = ((row[j] as f64 - mu) * is) as f32;
                xhat[r * h + j] = xh;
                out[r * h + j] = gd[j] * xh + bd[j];
            }
        }
    }
    let gc = gamma.clone();
    let needs_x = x.requires_grad();
    Ok(Tensor::from_op(
        x.shape().to_vec(),
        out,
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(move |g| {
            let mut g_gamma = vec![0.0f32; h];
            let mut g_beta = vec![0.0f32; h];
            for r in 0..rows {
                for j in 0..h {
                    g_gamma[j] += g[r * h + j] * xhat[r * h + j];
                    g_beta[j] += g[r * h + j];
                }
            }
            let gx = needs_x.then(|| {
                let gd = gc.data();
                let mut gx = vec![0.0f32; rows * h];
                for r in 0..rows {
                    let gr = &g[r * h..(r + 1) * h];
                    let xr = &xhat[r * h..(r + 1) * h];
                    let mut mean_d = 0.0f64;
                    let mut mean_dx = 0.0f64;
                    for j in 0..h {
                        let d = (gr[j] * gd[j]) as f64;
                        mean_d += d;
                        mean_dx += d * xr[j] as f64;
                    }
                    mean_d /= h as f64;
                    mean_dx /= h as f64;
                    for j in 0..h {
                        let d = (gr[j] * gd[j]) as f64;
                        gx[r * h + j] =
                            (inv_std[r] as f64 * (d - mean_d - xr[j] as f64 * mean_dx)) as f32;
                    }
                }
                gx
            });
            vec![gx, Some(g_gamma), Some(g_beta)]
        }),
    ))
}

/// Selects rows of `table[v, ..]`; the result has shape `[ids.len(), ..]`.
/// A rank-1 table yields a rank-1 result. The backward pass scatter-adds.
pub fn gather_rows(table: &Tensor, ids: &[usize]) -> Result<Tensor> {
    let shape = table.shape();
    let v = shape[0];
    let width: usize = shape[1..].iter().product();
    if ids.is_empty() {
        return Err(Error::contract("gather_rows needs at least one index"));
    }
    let td = table.data();
    let mut out = Vec::with_capacity(ids.len() * width);
    for &id in ids {
        if id >= v {
            return Err(Error::Index {
                what: "row",
                index: id,
                bound: v,
            });
        }
        out.extend_from_slice(&td[id * width..(id + 1) * width]);
    }
    drop(td);
    let mut out_shape = vec![ids.len()];
    out_shape.extend_from_slice(&shape[1..]);
    let ids = ids.to_vec();
    Ok(Tensor::from_op(
        out_shape,
        out,
        vec![table.clone()],
        Box::new(move |g| {
            let mut gt = vec![0.0f32; v * width];
            for (r, &id) in ids.iter().enumerate() {
                let dst = &mut gt[id * width..(id + 1) * width];
                dst.iter_mut()
                    .zip(&g[r * width..(r + 1) * width])
                    .for_each(|(a, b)| *a += b);
            }
            vec![Some(gt)]
        }),
    ))
}

/// Inverted dropout. `p == 0` returns the input unchanged.
pub fn dropout<R: Rng + ?Sized>(x: &Tensor, p: f32, rng: &mut R) -> Result<Tensor> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::contract(format!("dropout probability {p} outside [0, 1)")));
    }
    if p == 0.0 {
        return Ok(x.clone());
    }
    let keep = 1.0 / (1.0 - p);
    let mask: Vec<f32> = (0..x.numel())
        .map(|_| if rng.random::<f32>() < p { 0.0 } else { keep })
        .collect();
    mul(x, &Tensor::new(x.shape(), mask)?)
}

fn log_softmax_rows(logits: &[f32], v: usize) -> (Vec<f32>, Vec<f64>) {
    let rows = logits.len() / v;
    let mut probs = vec![0.0f32; logits.len()];
    let mut lse = vec![0.0f64; rows];
    for r in 0..rows {
        let row = &logits[r * v..(r + 1) * v];
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
        let s: f64 = row.iter().map(|&l| (l as f64 - max).exp()).sum();
        lse[r] = max + s.ln();
        for j in 0..v {
            probs[r * v + j] = (row[j] as f64 - lse[r]).exp() as f32;
        }
    }
    (probs, lse)
}

/// Mean over rows of `−log softmax(logits[i])[targets[i]]`.
pub fn cross_entropy(logits: &Tensor, targets: &[usize]) -> Result<Tensor> {
    let (m, v) = dims2(logits, "cross_entropy")?;
    if targets.len() != m {
        return Err(Error::shape("cross_entropy", logits.shape(), &[targets.len()]));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= v) {
        return Err(Error::Index {
            what: "target",
            index: t,
            bound: v,
        });
    }
    let (probs, lse) = log_softmax_rows(&logits.data(), v);
    let ld = logits.data();
    let total: f64 = targets
        .iter()
        .enumerate()
        .map(|(r, &t)| lse[r] - ld[r * v + t] as f64)
        .sum();
    drop(ld);
    let targets = targets.to_vec();
    Ok(Tensor::from_op(
        vec![1],
        vec![(total / m as f64) as f32],
        vec![logits.clone()],
        Box::new(move |g| {
            let s = g[0] / m as f32;
            let mut gl: Vec<f32> = probs.iter().map(|p| p * s).collect();
            for (r, &t) in targets.iter().enumerate() {
                gl[r * v + t] -= s;
            }
            vec![Some(gl)]
        }),
    ))
}

/// `−log softmax(logits)[target]` for a single score vector `[v]` (or `[1, v]`).
pub fn softmax_cross_entropy(logits: &Tensor, target: usize) -> Result<Tensor> {
    let v = match *logits.shape() {
        [v] | [1, v] => v,
        _ => return Err(Error::shape("softmax_cross_entropy", logits.shape(), &[1, 0])),
    };
    if target >= v {
        return Err(Error::Index {
            what: "target",
            index: target,
            bound: v,
        });
    }
    let as_row = reshape(logits, &[1, v])?;
    cross_entropy(&as_row, &[target])
}

/// Same data, new shape.
pub fn reshape(x: &Tensor, shape: &[usize]) -> Result<Tensor> {
    if shape.iter().product::<usize>() != x.numel() {
        return Err(Error::shape("reshape", x.shape(), shape));
    }
    Ok(Tensor::from_op(
        shape.to_vec(),
        x.to_vec(),
        vec![x.clone()],
        Box::new(|g| vec![Some(g.to_vec())]),
    ))
}

/// Packs several sequences into one `[n, h]` row block for attention.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionLayout {
    /// Row ranges of each sequence; queries attend only inside their own range.
    pub segments: Vec<Range<usize>>,
    /// `false` marks padding rows that may not be attended to.
    pub key_valid: Vec<bool>,
}

impl AttentionLayout {
    pub fn single(mask: &[bool]) -> Self {
        Self {
            segments: vec![0..mask.len()],
            key_valid: mask.to_vec(),
        }
    }
}

/// Scaled dot-product multi-head self-attention over packed sequences.
/// Masked keys receive exactly zero weight.
pub fn attention(q: &Tensor, k: &Tensor, v: &Tensor, layout: &AttentionLayout, heads: usize) -> Result<Tensor> {
    let (n, h) = dims2(q, "attention")?;
    if k.shape() != q.shape() {
        return Err(Error::shape("attention", q.shape(), k.shape()));
    }
    if v.shape() != q.shape() {
        return Err(Error::shape("attention", q.shape(), v.shape()));
    }
    if heads == 0 || h % heads != 0 {
        return Err(Error::contract(format!("hidden size {h} not divisible by {heads} heads")));
    }
    if layout.key_valid.len() != n {
        return Err(Error::shape("attention", q.shape(), &[layout.key_valid.len()]));
    }
    for seg in &layout.segments {
        if seg.start >= seg.end || seg.end > n {
            return Err(Error::contract(format!("segment {seg:?} outside [0, {n})")));
        }
    }
    let dh = h / heads;
    let scale = 1.0 / (dh as f32).sqrt();
    let mut out = vec![0.0f32; n * h];
    // Attention weights per (segment, head), row-major [t, t].
    let mut weights: Vec<Vec<f32>> = Vec::with_capacity(layout.segments.len() * heads);
    {
        let (qd, kd, vd) = (q.data(), k.data(), v.data());
        for seg in &layout.segments {
            let (s, t) = (seg.start, seg.len());
            for head in 0..heads {
                let off = head * dh;
                let mut p = vec![0.0f32; t * t];
                for i in 0..t {
                    let qi = &qd[(s + i) * h + off..(s + i) * h + off + dh];
                    let row = &mut p[i * t..(i + 1) * t];
                    let mut max = f32::NEG_INFINITY;
                    for j in 0..t {
                        if layout.key_valid[s + j] {
                            let kj = &kd[(s + j) * h + off..(s + j) * h + off + dh];
                            row[j] = dot(qi, kj) * scale;
                            max = max.max(row[j]);
                        }
                    }
                    if max == f32::NEG_INFINITY {
                        row.iter_mut().for_each(|x| *x = 0.0);
                        continue;
                    }
                    let mut z = 0.0f32;
                    for j in 0..t {
                        if layout.key_valid[s + j] {
                            row[j] = (row[j] - max).exp();
                            z += row[j];
                        } else {
                            row[j] = 0.0;
                        }
                    }
                    row.iter_mut().for_each(|x| *x /= z);
                    let oi = &mut out[(s + i) * h + off..(s + i) * h + off + dh];
                    for j in 0..t {
                        let pij = row[j];
                        if pij == 0.0 {
                            continue;
                        }
                        let vj = &vd[(s + j) * h + off..(s + j) * h + off + dh];
                        oi.iter_mut().zip(vj).for_each(|(o, v)| *o += pij * v);
                    }
                }
                weights.push(p);
            }
        }
    }
    let (qc, kc, vc) = (q.clone(), k.clone(), v.clone());
    let segments = layout.segments.clone();
    Ok(Tensor::from_op(
        vec![n, h],
        out,
        vec![q.clone(), k.clone(), v.clone()],
        Box::new(move |g| {
            let (qd, kd, vd) = (qc.data(), kc.data(), vc.data());
            let mut gq = vec![0.0f32; n * h];
            let mut gk = vec![0.0f32; n * h];
            let mut gv = vec![0.0f32; n * h];
            let mut w = weights.iter();
            for seg in &segments {
                let (s, t) = (seg.start, seg.len());
                for head in 0..heads {
                    let off = head * dh;
                    let p = w.next().unwrap();
                    let mut ds = vec![0.0f32; t * t];
                    for i in 0..t {
                        let gi = &g[(s + i) * h + off..(s + i) * h + off + dh];
                        let prow = &p[i * t..(i + 1) * t];
                        let mut weighted = 0.0f32;
                        for j in 0..t {
                            if prow[j] == 0.0 {
                                continue;
                            }
                            let vj = &vd[(s + j) * h + off..(s + j) * h + off + dh];
                            let dp = dot(gi, vj);
                            ds[i * t + j] = dp;
                            weighted += prow[j] * dp;
                            let gvj = &mut gv[(s + j) * h + off..(s + j) * h + off + dh];
                            gvj.iter_mut().zip(gi).for_each(|(a, b)| *a += prow[j] * b);
                        }
                        for j in 0..t {
                            ds[i * t + j] = prow[j] * (ds[i * t + j] - weighted) * scale;
                        }
                    }
                    for i in 0..t {
                        for j in 0..t {
                            let d = ds[i * t + j];
                            if d == 0.0 {
                                continue;
                            }
                            let (ri, rj) = ((s + i) * h + off, (s + j) * h + off);
                            for c in 0..dh {
                                gq[ri + c] += d * kd[rj + c];
                                gk[rj + c] += d * qd[ri + c];
                            }
                        }
                    }
                }
            }
            vec![Some(gq), Some(gk), Some(gv)]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f32]) -> Tensor {
        Tensor::parameter(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_zero() {
        let a = t(&[3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]);
        let eye = t(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        assert_eq!(matmul(&a, &eye).unwrap().to_vec(), a.to_vec());
        let a = t(&[2, 4], &[1.; 8]);
        let z = Tensor::zeros(&[4, 2]).unwrap();
        assert_eq!(matmul(&a, &z).unwrap().to_vec(), vec![0.0; 4]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]).unwrap();
        let b = Tensor::zeros(&[4, 2]).unwrap();
        let err = matmul(&a, &b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn gelu_fixed_points() {
        let x = Tensor::new(&[2], vec![0.0, 10.0]).unwrap();
        let y = gelu(&x, GeluKind::Exact).to_vec();
        assert_eq!(y[0], 0.0);
        assert!((y[1] - 10.0).abs() < 1e-5);
    }

    #[test]
    fn layer_norm_constant_row_and_zero_gamma() {
        let x = t(&[1, 4], &[3.0; 4]);
        let g = t(&[4], &[1.0; 4]);
        let b = t(&[4], &[0.0; 4]);
        assert_eq!(layer_norm(&x, &g, &b, 1e-12).unwrap().to_vec(), vec![0.0; 4]);

        let x = t(&[2, 3], &[1., -2., 5., 0.3, 0.1, 9.]);
        let g = t(&[3], &[0.0; 3]);
        let b = t(&[3], &[0.5, -1.0, 2.0]);
        let y = layer_norm(&x, &g, &b, 1e-12).unwrap().to_vec();
        assert_eq!(y, vec![0.5, -1.0, 2.0, 0.5, -1.0, 2.0]);
        assert!(layer_norm(&x, &t(&[2], &[1.0; 2]), &b, 1e-5).is_err());
    }

    #[test]
    fn cross_entropy_uniform_and_saturated() {
        let uniform = Tensor::new(&[500], vec![0.0; 500]).unwrap();
        let l = softmax_cross_entropy(&uniform, 7).unwrap().item();
        assert!((l - 500f32.ln()).abs() < 1e-5);
        assert!((l - 6.2146).abs() < 1e-4);

        let mut v = vec![0.0; 10];
        v[3] = 30.0;
        let l = softmax_cross_entropy(&Tensor::new(&[10], v).unwrap(), 3).unwrap().item();
        assert!(l < 1e-9, "{l}");
        assert!(matches!(
            softmax_cross_entropy(&uniform, 500),
            Err(Error::Index { index: 500, bound: 500, .. })
        ));
    }

    #[test]
    fn sum_and_square_gradients() {
        let x = t(&[3], &[1.0, -2.0, 0.5]);
        sum(&x).backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 3]);
        x.zero_grad();
        sum(&mul(&x, &x).unwrap()).backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, -4.0, 1.0]);
    }

    #[test]
    fn gradients_accumulate_until_zeroed() {
        let x = t(&[2], &[1.0, 2.0]);
        sum(&x).backward().unwrap();
        sum(&x).backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 2.0]);
        x.zero_grad();
        assert!(x.grad().is_none());
    }

    #[test]
    fn attention_ignores_masked_keys() {
        let q = t(&[3, 2], &[0.1, 0.2, 0.3, -0.1, 0.5, 0.5]);
        let layout = AttentionLayout::single(&[true, true, false]);
        let v_a = t(&[3, 2], &[1., 2., 3., 4., 5., 6.]);
        let v_b = t(&[3, 2], &[1., 2., 3., 4., -50., 60.]);
        let a = attention(&q, &q, &v_a, &layout, 1).unwrap().to_vec();
        let b = attention(&q, &q, &v_b, &layout, 1).unwrap().to_vec();
        assert_eq!(a, b);
    }

    #[test]
    fn gather_rows_rejects_out_of_range() {
        let table = t(&[3, 2], &[0.0; 6]);
        assert!(matches!(
            gather_rows(&table, &[0, 3]),
            Err(Error::Index { index: 3, bound: 3, .. })
        ));
    }
}
