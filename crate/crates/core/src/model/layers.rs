//! Forward and backward passes of the transformer building blocks.
//!
//! Activations are `rows x width` matrices; a batch of `B` sequences padded
//! to length `T` occupies rows `b * T + t`.

use rand::Rng;

use super::params::{AttnParams, FfnParams, NormParams};
use super::tensor::Tensor;
use crate::Scalar;

const LN_EPS: f64 = 1e-5;

/// `x W + b`.
pub fn linear<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let mut y = x.matmul(w);
    for r in 0..y.rows {
        for (o, &bias) in y.row_mut(r).iter_mut().zip(&b.data) {
            *o += bias;
        }
    }
    y
}

/// Accumulates weight and bias gradients, returns the input gradient.
pub fn linear_backward<T: Scalar>(
    x: &Tensor<T>,
    dy: &Tensor<T>,
    w: &Tensor<T>,
    dw: &mut Tensor<T>,
    db: &mut Tensor<T>,
) -> Tensor<T> {
    x.matmul_tn_acc(dy, dw);
    for r in 0..dy.rows {
        for (g, &d) in db.data.iter_mut().zip(dy.row(r)) {
            *g += d;
        }
    }
    dy.matmul_nt(w)
}

pub struct NormCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
}

pub fn layer_norm<T: Scalar>(x: &Tensor<T>, p: &NormParams<T>) -> (Tensor<T>, NormCache<T>) {
    let d = x.cols;
    let n = T::lit(d as f64);
    let eps = T::lit(LN_EPS);
    let mut y = Tensor::zeros(x.rows, d);
    let mut xhat = Tensor::zeros(x.rows, d);
    let mut inv_std = Vec::with_capacity(x.rows);
    for r in 0..x.rows {
        let row = x.row(r);
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let is = T::one() / (var + eps).sqrt();
        inv_std.push(is);
        let xh = xhat.row_mut(r);
        for (h, &v) in xh.iter_mut().zip(row) {
            *h = (v - mean) * is;
        }
        let yr = &mut y.data[r * d..(r + 1) * d];
        for j in 0..d {
            yr[j] = xhat.data[r * d + j] * p.gain.data[j] + p.bias.data[j];
        }
    }
    (y, NormCache { xhat, inv_std })
}

/// Inference-only layer norm.
pub fn layer_norm_eval<T: Scalar>(x: &Tensor<T>, p: &NormParams<T>) -> Tensor<T> {
    layer_norm(x, p).0
}

pub fn layer_norm_backward<T: Scalar>(
    dy: &Tensor<T>,
    p: &NormParams<T>,
    g: &mut NormParams<T>,
    cache: &NormCache<T>,
) -> Tensor<T> {
    let d = dy.cols;
    let n = T::lit(d as f64);
    let mut dx = Tensor::zeros(dy.rows, d);
    let mut dxhat = vec![T::zero(); d];
    for r in 0..dy.rows {
        let dyr = dy.row(r);
        let xh = cache.xhat.row(r);
        for j in 0..d {
            g.gain.data[j] += dyr[j] * xh[j];
            g.bias.data[j] += dyr[j];
            dxhat[j] = dyr[j] * p.gain.data[j];
        }
        let mean_d = dxhat.iter().copied().sum::<T>() / n;
        let mean_dx = dxhat.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>() / n;
        let is = cache.inv_std[r];
        for (j, o) in dx.row_mut(r).iter_mut().enumerate() {
            *o = is * (dxhat[j] - mean_d - xh[j] * mean_dx);
        }
    }
    dx
}

pub struct FfnCache<T> {
    x: Tensor<T>,
    pre: Tensor<T>,
    act: Tensor<T>,
}

pub fn ffn<T: Scalar>(x: &Tensor<T>, p: &FfnParams<T>) -> (Tensor<T>, FfnCache<T>) {
    let pre = linear(x, &p.w1, &p.b1);
    let mut act = pre.clone();
    act.data.iter_mut().for_each(|v| *v = v.max(T::zero()));
    let y = linear(&act, &p.w2, &p.b2);
    (y, FfnCache { x: x.clone(), pre, act })
}

pub fn ffn_backward<T: Scalar>(dy: &Tensor<T>, p: &FfnParams<T>, g: &mut FfnParams<T>, cache: &FfnCache<T>) -> Tensor<T> {
    let mut dact = linear_backward(&cache.act, dy, &p.w2, &mut g.w2, &mut g.b2);
    for (d, &z) in dact.data.iter_mut().zip(&cache.pre.data) {
        if z <= T::zero() {
            *d = T::zero();
        }
    }
    linear_backward(&cache.x, &dact, &p.w1, &mut g.w1, &mut g.b1)
}

/// Inverted dropout mask; `None` when inactive.
pub fn dropout_mask<T: Scalar, R: Rng>(len: usize, rate: f64, rng: Option<&mut R>) -> Option<Vec<T>> {
    let rng = rng?;
    if rate <= 0.0 {
        return None;
    }
    let keep = T::lit(1.0 / (1.0 - rate));
    Some((0..len).map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep }).collect())
}

pub fn apply_mask<T: Scalar>(x: &mut Tensor<T>, mask: &Option<Vec<T>>) {
    if let Some(m) = mask {
        for (v, &k) in x.data.iter_mut().zip(m) {
            *v *= k;
        }
    }
}

/// Batch geometry of one attention call.
#[derive(Clone, Debug)]
pub struct AttnShape {
    pub batch: usize,
    pub tq: usize,
    pub tk: usize,
    pub heads: usize,
    pub causal: bool,
    /// Number of valid keys per batch element.
    pub key_len: Vec<usize>,
}

impl AttnShape {
    #[inline]
    fn visible(&self, b: usize, i: usize, j: usize) -> bool {
        j < self.key_len[b] && (!self.causal || j <= i)
    }
}

pub struct AttnCache<T> {
    xq: Tensor<T>,
    xkv: Option<Tensor<T>>,
    q: Tensor<T>,
    k: Tensor<T>,
    v: Tensor<T>,
    probs: Vec<T>,
    ctx: Tensor<T>,
}

impl<T> AttnCache<T> {
    /// Attention weights, laid out `[batch][head][query][key]`.
    pub fn probs(&self) -> &[T] {
        &self.probs
    }
}

/// Masked softmax in place over `row[..]` with visibility predicate.
fn softmax_row<T: Scalar>(row: &mut [T], visible: impl Fn(usize) -> bool) {
    let mut max = T::neg_infinity();
    for (j, &s) in row.iter().enumerate() {
        if visible(j) && s > max {
            max = s;
        }
    }
    let mut sum = T::zero();
    for (j, s) in row.iter_mut().enumerate() {
        if visible(j) {
            *s = (*s - max).exp();
            sum += *s;
        } else {
            *s = T::zero();
        }
    }
    if sum > T::zero() {
        let inv = T::one() / sum;
        row.iter_mut().for_each(|s| *s *= inv);
    }
}

/// Multi-head attention. `xkv = None` means self-attention over `xq`.
pub fn attention<T: Scalar>(
    p: &AttnParams<T>,
    xq: &Tensor<T>,
    xkv: Option<&Tensor<T>>,
    shape: &AttnShape,
) -> (Tensor<T>, AttnCache<T>) {
    let d = xq.cols;
    let dh = d / shape.heads;
    let kv_in = xkv.unwrap_or(xq);
    let q = linear(xq, &p.wq, &p.bq);
    let k = linear(kv_in, &p.wk, &p.bk);
    let v = linear(kv_in, &p.wv, &p.bv);
    let (tq, tk) = (shape.tq, shape.tk);
    let scale = T::lit(1.0 / (dh as f64).sqrt());
    let mut probs = vec![T::zero(); shape.batch * shape.heads * tq * tk];
    let mut ctx = Tensor::zeros(xq.rows, d);
    for b in 0..shape.batch {
        for h in 0..shape.heads {
            let block = &mut probs[(b * shape.heads + h) * tq * tk..][..tq * tk];
            let q_off = b * tq * d + h * dh;
            let k_off = b * tk * d + h * dh;
            T::gemm(
                tq,
                dh,
                tk,
                scale,
                &q.data[q_off..],
                d as isize,
                1,
                &k.data[k_off..],
                1,
                d as isize,
                T::zero(),
                block,
                tk as isize,
                1,
            );
            for i in 0..tq {
                softmax_row(&mut block[i * tk..(i + 1) * tk], |j| shape.visible(b, i, j));
            }
            T::gemm(
                tq,
                tk,
                dh,
                T::one(),
                block,
                tk as isize,
                1,
                &v.data[k_off..],
                d as isize,
                1,
                T::zero(),
                &mut ctx.data[q_off..],
                d as isize,
                1,
            );
        }
    }
    let out = linear(&ctx, &p.wo, &p.bo);
    let cache = AttnCache { xq: xq.clone(), xkv: xkv.cloned(), q, k, v, probs, ctx };
    (out, cache)
}

/// Returns `(d_xq, d_xkv)`; for self-attention both contributions are summed
/// into the first element and the second is `None`.
pub fn attention_backward<T: Scalar>(
    dout: &Tensor<T>,
    p: &AttnParams<T>,
    g: &mut AttnParams<T>,
    cache: &AttnCache<T>,
    shape: &AttnShape,
) -> (Tensor<T>, Option<Tensor<T>>) {
    let d = dout.cols;
    let dh = d / shape.heads;
    let (tq, tk) = (shape.tq, shape.tk);
    let scale = T::lit(1.0 / (dh as f64).sqrt());
    let dctx = linear_backward(&cache.ctx, dout, &p.wo, &mut g.wo, &mut g.bo);
    let mut dq = Tensor::zeros(cache.q.rows, d);
    let mut dk = Tensor::zeros(cache.k.rows, d);
    let mut dv = Tensor::zeros(cache.v.rows, d);
    let mut dp = vec![T::zero(); tq * tk];
    for b in 0..shape.batch {
        for h in 0..shape.heads {
            let probs = &cache.probs[(b * shape.heads + h) * tq * tk..][..tq * tk];
            let q_off = b * tq * d + h * dh;
            let k_off = b * tk * d + h * dh;
            // dP = dctx V^T
            T::gemm(
                tq,
                dh,
                tk,
                T::one(),
                &dctx.data[q_off..],
                d as isize,
                1,
                &cache.v.data[k_off..],
                1,
                d as isize,
                T::zero(),
                &mut dp,
                tk as isize,
                1,
            );
            // dV += P^T dctx
            T::gemm(
                tk,
                tq,
                dh,
                T::one(),
                probs,
                1,
                tk as isize,
                &dctx.data[q_off..],
                d as isize,
                1,
                T::one(),
                &mut dv.data[k_off..],
                d as isize,
                1,
            );
            // dS = P * (dP - sum_j P dP), scaled
            for i in 0..tq {
                let pr = &probs[i * tk..(i + 1) * tk];
                let dr = &mut dp[i * tk..(i + 1) * tk];
                let dot: T = pr.iter().zip(dr.iter()).map(|(&a, &b)| a * b).sum();
                for (x, &pv) in dr.iter_mut().zip(pr) {
                    *x = pv * (*x - dot) * scale;
                }
            }
            // dQ = dS K ; dK += dS^T Q
            T::gemm(
                tq,
                tk,
                dh,
                T::one(),
                &dp,
                tk as isize,
                1,
                &cache.k.data[k_off..],
                d as isize,
                1,
                T::zero(),
                &mut dq.data[q_off..],
                d as isize,
                1,
            );
            T::gemm(
                tk,
                tq,
                dh,
                T::one(),
                &dp,
                1,
                tk as isize,
                &cache.q.data[q_off..],
                d as isize,
                1,
                T::one(),
                &mut dk.data[k_off..],
                d as isize,
                1,
            );
        }
    }
    let mut dxq = linear_backward(&cache.xq, &dq, &p.wq, &mut g.wq, &mut g.bq);
    let kv_in = cache.xkv.as_ref().unwrap_or(&cache.xq);
    let dxk = linear_backward(kv_in, &dk, &p.wk, &mut g.wk, &mut g.bk);
    let dxv = linear_backward(kv_in, &dv, &p.wv, &mut g.wv, &mut g.bv);
    match cache.xkv {
        None => {
            dxq.add_assign(&dxk);
            dxq.add_assign(&dxv);
            (dxq, None)
        }
        Some(_) => {
            let mut dkv = dxk;
            dkv.add_assign(&dxv);
            (dxq, Some(dkv))
        }
    }
}

/// Sinusoidal position encoding.
pub fn position_encoding<T: Scalar>(pos: usize, d: usize, out: &mut [T]) {
    for i in 0..d {
        let pair = (i / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * pair / d as f64);
        out[i] = T::lit(if i % 2 == 0 { angle.sin() } else { angle.cos() });
    }
}
