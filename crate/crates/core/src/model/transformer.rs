//! Pre-norm encoder-decoder transformer with teacher-forced loss and
//! exact backward pass.
//!
//! The encoder optionally reserves the first `p_b` positions of example `b`
//! for prefix states. At the input of every encoder layer (and before the
//! final norm) those rows are overwritten with the matching slice of the
//! caller-supplied prefix matrix; everything after them is computed by the
//! ordinary layers.

use rand_chacha::ChaCha8Rng;

use super::layers::{
    apply_mask, attention, attention_backward, dropout_mask, ffn, ffn_backward, layer_norm, layer_norm_backward,
    linear, linear_backward, position_encoding, AttnCache, AttnShape, FfnCache, NormCache,
};
use super::params::LmParams;
use super::tensor::Tensor;
use super::vocab::{BOS, EOS};
use crate::Scalar;

/// One batch of already-tokenized examples. `sources` are the full encoder
/// token sequences (prompt, source, EOS); `targets` are gold tokens without
/// specials.
#[derive(Clone, Debug, Default)]
pub struct TokenBatch {
    pub sources: Vec<Vec<u32>>,
    pub targets: Vec<Vec<u32>>,
}

impl TokenBatch {
    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }
}

/// Number of prefix rows per example and their states: each matrix is
/// `p_b x (encoder_layers + 1) * d`.
pub type PrefixStates<'a, T> = Option<&'a [Tensor<T>]>;

struct EncLayerCache<T> {
    n1: NormCache<T>,
    attn: AttnCache<T>,
    drop1: Option<Vec<T>>,
    n2: NormCache<T>,
    ffn: FfnCache<T>,
    drop2: Option<Vec<T>>,
}

struct DecLayerCache<T> {
    n1: NormCache<T>,
    self_attn: AttnCache<T>,
    drop1: Option<Vec<T>>,
    n2: NormCache<T>,
    cross: AttnCache<T>,
    drop2: Option<Vec<T>>,
    n3: NormCache<T>,
    ffn: FfnCache<T>,
    drop3: Option<Vec<T>>,
}

/// Encoder output plus everything needed to backpropagate through it.
pub struct Encoded<T> {
    pub memory: Tensor<T>,
    pub shape: AttnShape,
    prefix_len: Vec<usize>,
    tokens: Vec<Vec<u32>>,
    layers: Vec<EncLayerCache<T>>,
    final_norm: NormCache<T>,
}

impl<T: Scalar> Encoded<T> {
    pub fn seq_len(&self) -> usize {
        self.shape.tq
    }

    pub fn key_len(&self) -> &[usize] {
        &self.shape.key_len
    }
}

fn embed_into<T: Scalar>(params: &LmParams<T>, tok: u32, pos: usize, out: &mut [T]) {
    let d = params.config.d_model;
    position_encoding(pos, d, out);
    let scale = T::lit((d as f64).sqrt());
    for (o, &e) in out.iter_mut().zip(params.embed.row(tok as usize)) {
        *o += e * scale;
    }
}

fn write_prefix<T: Scalar>(x: &mut Tensor<T>, t: usize, prefix: &[Tensor<T>], slice: usize) {
    let d = x.cols;
    for (b, p) in prefix.iter().enumerate() {
        for r in 0..p.rows {
            x.row_mut(b * t + r).copy_from_slice(&p.row(r)[slice * d..(slice + 1) * d]);
        }
    }
}

fn take_prefix_grad<T: Scalar>(dx: &mut Tensor<T>, t: usize, dprefix: &mut [Tensor<T>], slice: usize) {
    let d = dx.cols;
    for (b, g) in dprefix.iter_mut().enumerate() {
        for r in 0..g.rows {
            let src = dx.row_mut(b * t + r);
            for (o, s) in g.row_mut(r)[slice * d..(slice + 1) * d].iter_mut().zip(src.iter_mut()) {
                *o += *s;
                *s = T::zero();
            }
        }
    }
}

fn residual_add<T: Scalar>(x: &mut Tensor<T>, mut branch: Tensor<T>, mask: &Option<Vec<T>>) {
    apply_mask(&mut branch, mask);
    x.add_assign(&branch);
}

/// Runs the encoder. `rng = Some` enables dropout.
pub fn encode<T: Scalar>(
    params: &LmParams<T>,
    tokens: &[Vec<u32>],
    prefix: PrefixStates<'_, T>,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Encoded<T> {
    let cfg = &params.config;
    let d = cfg.d_model;
    let batch = tokens.len();
    let prefix_len: Vec<usize> = match prefix {
        Some(p) => {
            assert_eq!(p.len(), batch, "one prefix matrix per example");
            p.iter().map(|m| m.rows).collect()
        }
        None => vec![0; batch],
    };
    let key_len: Vec<usize> = tokens.iter().zip(&prefix_len).map(|(s, p)| s.len() + p).collect();
    let t = key_len.iter().copied().max().unwrap_or(0);
    let mut x = Tensor::zeros(batch * t, d);
    for (b, seq) in tokens.iter().enumerate() {
        for (i, &tok) in seq.iter().enumerate() {
            embed_into(params, tok, i, x.row_mut(b * t + prefix_len[b] + i));
        }
    }
    let shape = AttnShape { batch, tq: t, tk: t, heads: cfg.heads, causal: false, key_len };
    let mut layers = Vec::with_capacity(params.encoder.len());
    for (l, lp) in params.encoder.iter().enumerate() {
        if let Some(p) = prefix {
            write_prefix(&mut x, t, p, l);
        }
        let (h, n1) = layer_norm(&x, &lp.norm1);
        let (a, attn) = attention(&lp.self_attn, &h, None, &shape);
        let drop1 = dropout_mask(a.data.len(), cfg.dropout, rng.as_deref_mut());
        residual_add(&mut x, a, &drop1);
        let (h, n2) = layer_norm(&x, &lp.norm2);
        let (f, ffn_cache) = ffn(&h, &lp.ffn);
        let drop2 = dropout_mask(f.data.len(), cfg.dropout, rng.as_deref_mut());
        residual_add(&mut x, f, &drop2);
        layers.push(EncLayerCache { n1, attn, drop1, n2, ffn: ffn_cache, drop2 });
    }
    if let Some(p) = prefix {
        write_prefix(&mut x, t, p, params.encoder.len());
    }
    let (memory, final_norm) = layer_norm(&x, &params.encoder_norm);
    Encoded { memory, shape, prefix_len, tokens: tokens.to_vec(), layers, final_norm }
}

/// Backpropagates `d_memory` through the encoder, accumulating into `grads`.
/// Returns the gradient for each example's prefix matrix.
pub fn encode_backward<T: Scalar>(
    params: &LmParams<T>,
    grads: &mut LmParams<T>,
    enc: &Encoded<T>,
    d_memory: &Tensor<T>,
) -> Vec<Tensor<T>> {
    let d = params.config.d_model;
    let t = enc.seq_len();
    let n = params.encoder.len();
    let mut dprefix: Vec<Tensor<T>> = enc.prefix_len.iter().map(|&p| Tensor::zeros(p, (n + 1) * d)).collect();
    let mut dx = layer_norm_backward(d_memory, &params.encoder_norm, &mut grads.encoder_norm, &enc.final_norm);
    take_prefix_grad(&mut dx, t, &mut dprefix, n);
    for l in (0..n).rev() {
        let (lp, lg, c) = (&params.encoder[l], &mut grads.encoder[l], &enc.layers[l]);
        let mut df = dx.clone();
        apply_mask(&mut df, &c.drop2);
        let dh = ffn_backward(&df, &lp.ffn, &mut lg.ffn, &c.ffn);
        dx.add_assign(&layer_norm_backward(&dh, &lp.norm2, &mut lg.norm2, &c.n2));
        let mut da = dx.clone();
        apply_mask(&mut da, &c.drop1);
        let (dh, _) = attention_backward(&da, &lp.self_attn, &mut lg.self_attn, &c.attn, &enc.shape);
        dx.add_assign(&layer_norm_backward(&dh, &lp.norm1, &mut lg.norm1, &c.n1));
        take_prefix_grad(&mut dx, t, &mut dprefix, l);
    }
    let scale = T::lit((d as f64).sqrt());
    for (b, seq) in enc.tokens.iter().enumerate() {
        for (i, &tok) in seq.iter().enumerate() {
            let src = dx.row(b * t + enc.prefix_len[b] + i);
            for (g, &s) in grads.embed.row_mut(tok as usize).iter_mut().zip(src) {
                *g += s * scale;
            }
        }
    }
    dprefix
}

struct Decoded<T> {
    logits: Tensor<T>,
    inputs: Vec<Vec<u32>>,
    self_shape: AttnShape,
    cross_shape: AttnShape,
    layers: Vec<DecLayerCache<T>>,
    final_norm: NormCache<T>,
    hidden: Tensor<T>,
}

fn decode_forward<T: Scalar>(
    params: &LmParams<T>,
    enc: &Encoded<T>,
    targets: &[Vec<u32>],
    mut rng: Option<&mut ChaCha8Rng>,
) -> Decoded<T> {
    let cfg = &params.config;
    let d = cfg.d_model;
    let batch = targets.len();
    let inputs: Vec<Vec<u32>> = targets.iter().map(|y| std::iter::once(BOS).chain(y.iter().copied()).collect()).collect();
    let lens: Vec<usize> = inputs.iter().map(Vec::len).collect();
    let t = lens.iter().copied().max().unwrap_or(0);
    let mut x = Tensor::zeros(batch * t, d);
    for (b, seq) in inputs.iter().enumerate() {
        for (i, &tok) in seq.iter().enumerate() {
            embed_into(params, tok, i, x.row_mut(b * t + i));
        }
    }
    let self_shape = AttnShape { batch, tq: t, tk: t, heads: cfg.heads, causal: true, key_len: lens };
    let cross_shape =
        AttnShape { batch, tq: t, tk: enc.seq_len(), heads: cfg.heads, causal: false, key_len: enc.key_len().to_vec() };
    let mut layers = Vec::with_capacity(params.decoder.len());
    for lp in &params.decoder {
        let (h, n1) = layer_norm(&x, &lp.norm1);
        let (a, self_attn) = attention(&lp.self_attn, &h, None, &self_shape);
        let drop1 = dropout_mask(a.data.len(), cfg.dropout, rng.as_deref_mut());
        residual_add(&mut x, a, &drop1);
        let (h, n2) = layer_norm(&x, &lp.norm2);
        let (a, cross) = attention(&lp.cross_attn, &h, Some(&enc.memory), &cross_shape);
        let drop2 = dropout_mask(a.data.len(), cfg.dropout, rng.as_deref_mut());
        residual_add(&mut x, a, &drop2);
        let (h, n3) = layer_norm(&x, &lp.norm3);
        let (f, ffn_cache) = ffn(&h, &lp.ffn);
        let drop3 = dropout_mask(f.data.len(), cfg.dropout, rng.as_deref_mut());
        residual_add(&mut x, f, &drop3);
        layers.push(DecLayerCache { n1, self_attn, drop1, n2, cross, drop2, n3, ffn: ffn_cache, drop3 });
    }
    let (hidden, final_norm) = layer_norm(&x, &params.decoder_norm);
    let logits = linear(&hidden, &params.out_proj, &params.out_bias);
    Decoded { logits, inputs, self_shape, cross_shape, layers, final_norm, hidden }
}

/// Returns `d_memory`.
fn decode_backward<T: Scalar>(
    params: &LmParams<T>,
    grads: &mut LmParams<T>,
    dec: &Decoded<T>,
    d_logits: &Tensor<T>,
) -> Tensor<T> {
    let d = params.config.d_model;
    let t = dec.self_shape.tq;
    let dh = linear_backward(&dec.hidden, d_logits, &params.out_proj, &mut grads.out_proj, &mut grads.out_bias);
    let mut dx = layer_norm_backward(&dh, &params.decoder_norm, &mut grads.decoder_norm, &dec.final_norm);
    let mut d_memory = Tensor::zeros(dec.cross_shape.batch * dec.cross_shape.tk, d);
    for l in (0..params.decoder.len()).rev() {
        let (lp, lg, c) = (&params.decoder[l], &mut grads.decoder[l], &dec.layers[l]);
        let mut df = dx.clone();
        apply_mask(&mut df, &c.drop3);
        let dh = ffn_backward(&df, &lp.ffn, &mut lg.ffn, &c.ffn);
        dx.add_assign(&layer_norm_backward(&dh, &lp.norm3, &mut lg.norm3, &c.n3));
        let mut da = dx.clone();
        apply_mask(&mut da, &c.drop2);
        let (dh, dmem) = attention_backward(&da, &lp.cross_attn, &mut lg.cross_attn, &c.cross, &dec.cross_shape);
        d_memory.add_assign(&dmem.expect("cross attention yields a memory gradient"));
        dx.add_assign(&layer_norm_backward(&dh, &lp.norm2, &mut lg.norm2, &c.n2));
        let mut da = dx.clone();
        apply_mask(&mut da, &c.drop1);
        let (dh, _) = attention_backward(&da, &lp.self_attn, &mut lg.self_attn, &c.self_attn, &dec.self_shape);
        dx.add_assign(&layer_norm_backward(&dh, &lp.norm1, &mut lg.norm1, &c.n1));
    }
    let scale = T::lit((d as f64).sqrt());
    for (b, seq) in dec.inputs.iter().enumerate() {
        for (i, &tok) in seq.iter().enumerate() {
            for (g, &s) in grads.embed.row_mut(tok as usize).iter_mut().zip(dx.row(b * t + i)) {
                *g += s * scale;
            }
        }
    }
    d_memory
}

/// Mean cross-entropy over all target positions (gold tokens plus EOS).
/// Returns the loss, the number of scored tokens and `dL/dlogits`.
fn cross_entropy<T: Scalar>(logits: &Tensor<T>, t: usize, targets: &[Vec<u32>]) -> (T, usize, Tensor<T>) {
    let v = logits.cols;
    let count: usize = targets.iter().map(|y| y.len() + 1).sum();
    let inv = T::one() / T::lit(count.max(1) as f64);
    let mut total = T::zero();
    let mut grad = Tensor::zeros(logits.rows, v);
    for (b, y) in targets.iter().enumerate() {
        for i in 0..=y.len() {
            let gold = if i < y.len() { y[i] } else { EOS } as usize;
            let row = logits.row(b * t + i);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let g = grad.row_mut(b * t + i);
            let mut sum = T::zero();
            for (o, &z) in g.iter_mut().zip(row) {
                *o = (z - max).exp();
                sum += *o;
            }
            total += sum.ln() + max - row[gold];
            for o in g.iter_mut() {
                *o = *o / sum * inv;
            }
            g[gold] -= inv;
        }
    }
    (total * inv, count, grad)
}

/// Teacher-forced loss and gradients. Accumulates into `grads` and returns
/// `(loss, prefix gradients)`; the prefix gradient list is empty when no
/// prefix was supplied.
pub fn loss_and_grads<T: Scalar>(
    params: &LmParams<T>,
    grads: &mut LmParams<T>,
    batch: &TokenBatch,
    prefix: PrefixStates<'_, T>,
    mut rng: Option<&mut ChaCha8Rng>,
) -> (T, Vec<Tensor<T>>) {
    let enc = encode(params, &batch.sources, prefix, rng.as_deref_mut());
    let dec = decode_forward(params, &enc, &batch.targets, rng);
    let (loss, _, d_logits) = cross_entropy(&dec.logits, dec.self_shape.tq, &batch.targets);
    let d_memory = decode_backward(params, grads, &dec, &d_logits);
    let dprefix = encode_backward(params, grads, &enc, &d_memory);
    (loss, if prefix.is_some() { dprefix } else { Vec::new() })
}

/// Teacher-forced loss without dropout or gradients.
pub fn loss<T: Scalar>(params: &LmParams<T>, batch: &TokenBatch, prefix: PrefixStates<'_, T>) -> T {
    let enc = encode(params, &batch.sources, prefix, None);
    let dec = decode_forward(params, &enc, &batch.targets, None);
    cross_entropy(&dec.logits, dec.self_shape.tq, &batch.targets).0
}

/// Teacher-forced logits, `[b * T + i]` rows where `T` is the longest
/// decoder input (BOS plus target) in the batch.
pub fn teacher_forced_logits<T: Scalar>(
    params: &LmParams<T>,
    batch: &TokenBatch,
    prefix: PrefixStates<'_, T>,
) -> Tensor<T> {
    let enc = encode(params, &batch.sources, prefix, None);
    decode_forward(params, &enc, &batch.targets, None).logits
}
