//! Batched greedy decoding with per-layer key/value caches.

use super::layers::{layer_norm_eval, linear};
use super::params::{FfnParams, LmParams};
use super::tensor::Tensor;
use super::transformer::{encode, PrefixStates};
use super::vocab::{BOS, EOS};
use crate::Scalar;

/// Single-query attention over `n` cached rows of width `d`.
fn attend_one<T: Scalar>(q: &[T], keys: &[T], vals: &[T], n: usize, heads: usize, scores: &mut Vec<T>, out: &mut [T]) {
    let d = q.len();
    let dh = d / heads;
    let scale = T::lit(1.0 / (dh as f64).sqrt());
    out.iter_mut().for_each(|o| *o = T::zero());
    for h in 0..heads {
        let qh = &q[h * dh..(h + 1) * dh];
        scores.clear();
        let mut max = T::neg_infinity();
        for j in 0..n {
            let kh = &keys[j * d + h * dh..j * d + (h + 1) * dh];
            let s = qh.iter().zip(kh).map(|(&a, &b)| a * b).sum::<T>() * scale;
            max = max.max(s);
            scores.push(s);
        }
        let mut sum = T::zero();
        for s in scores.iter_mut() {
            *s = (*s - max).exp();
            sum += *s;
        }
        let oh = &mut out[h * dh..(h + 1) * dh];
        for (j, &s) in scores.iter().enumerate() {
            let w = s / sum;
            let vh = &vals[j * d + h * dh..j * d + (h + 1) * dh];
            for (o, &v) in oh.iter_mut().zip(vh) {
                *o += w * v;
            }
        }
    }
}

fn ffn_eval<T: Scalar>(x: &Tensor<T>, p: &FfnParams<T>) -> Tensor<T> {
    let mut h = linear(x, &p.w1, &p.b1);
    h.data.iter_mut().for_each(|v| *v = v.max(T::zero()));
    linear(&h, &p.w2, &p.b2)
}

/// Greedy decoding for a batch of encoder inputs. Each output stops at EOS
/// (excluded) or after `max_steps` tokens. Ties in the argmax go to the
/// lowest token id.
pub fn greedy_decode_batch<T: Scalar>(
    params: &LmParams<T>,
    sources: &[Vec<u32>],
    prefix: PrefixStates<'_, T>,
    max_steps: usize,
) -> Vec<Vec<u32>> {
    let batch = sources.len();
    if batch == 0 {
        return Vec::new();
    }
    let cfg = &params.config;
    let d = cfg.d_model;
    let enc = encode(params, sources, prefix, None);
    let te = enc.seq_len();
    let cross_kv: Vec<(Tensor<T>, Tensor<T>)> = params
        .decoder
        .iter()
        .map(|lp| {
            (
                linear(&enc.memory, &lp.cross_attn.wk, &lp.cross_attn.bk),
                linear(&enc.memory, &lp.cross_attn.wv, &lp.cross_attn.bv),
            )
        })
        .collect();
    let mut self_k = vec![vec![T::zero(); batch * max_steps * d]; params.decoder.len()];
    let mut self_v = self_k.clone();
    let mut current = vec![BOS; batch];
    let mut outputs: Vec<Vec<u32>> = vec![Vec::new(); batch];
    let mut done = vec![false; batch];
    let mut scores = Vec::new();
    let scale = T::lit((d as f64).sqrt());
    for step in 0..max_steps {
        let mut x = Tensor::zeros(batch, d);
        for b in 0..batch {
            let row = x.row_mut(b);
            super::layers::position_encoding(step, d, row);
            for (o, &e) in row.iter_mut().zip(params.embed.row(current[b] as usize)) {
                *o += e * scale;
            }
        }
        for (l, lp) in params.decoder.iter().enumerate() {
            let h = layer_norm_eval(&x, &lp.norm1);
            let q = linear(&h, &lp.self_attn.wq, &lp.self_attn.bq);
            let k = linear(&h, &lp.self_attn.wk, &lp.self_attn.bk);
            let v = linear(&h, &lp.self_attn.wv, &lp.self_attn.bv);
            let mut ctx = Tensor::zeros(batch, d);
            for b in 0..batch {
                let base = b * max_steps * d;
                self_k[l][base + step * d..base + (step + 1) * d].copy_from_slice(k.row(b));
                self_v[l][base + step * d..base + (step + 1) * d].copy_from_slice(v.row(b));
                attend_one(
                    q.row(b),
                    &self_k[l][base..],
                    &self_v[l][base..],
                    step + 1,
                    cfg.heads,
                    &mut scores,
                    ctx.row_mut(b),
                );
            }
            x.add_assign(&linear(&ctx, &lp.self_attn.wo, &lp.self_attn.bo));
            let h = layer_norm_eval(&x, &lp.norm2);
            let q = linear(&h, &lp.cross_attn.wq, &lp.cross_attn.bq);
            let (ck, cv) = &cross_kv[l];
            for b in 0..batch {
                attend_one(
                    q.row(b),
                    &ck.data[b * te * d..],
                    &cv.data[b * te * d..],
                    enc.key_len()[b],
                    cfg.heads,
                    &mut scores,
                    ctx.row_mut(b),
                );
            }
            x.add_assign(&linear(&ctx, &lp.cross_attn.wo, &lp.cross_attn.bo));
            let h = layer_norm_eval(&x, &lp.norm3);
            x.add_assign(&ffn_eval(&h, &lp.ffn));
        }
        let h = layer_norm_eval(&x, &params.decoder_norm);
        let logits = linear(&h, &params.out_proj, &params.out_bias);
        for b in 0..batch {
            if done[b] {
                continue;
            }
            let row = logits.row(b);
            let mut best = 0;
            for (j, &z) in row.iter().enumerate() {
                if z > row[best] {
                    best = j;
                }
            }
            let tok = best as u32;
            if tok == EOS {
                done[b] = true;
            } else {
                outputs[b].push(tok);
            }
            current[b] = tok;
        }
        if done.iter().all(|&f| f) {
            break;
        }
    }
    outputs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::ModelConfig;
    use crate::model::transformer::{teacher_forced_logits, TokenBatch};

    #[test]
    fn incremental_decoding_matches_teacher_forcing() {
        let cfg = ModelConfig { d_model: 16, heads: 2, d_ff: 32, dropout: 0.0, ..ModelConfig::default() };
        let params = LmParams::<f64>::init(&cfg, 30, 11).unwrap();
        let sources = vec![vec![5, 6, 7, EOS], vec![8, 9, EOS]];
        let out = greedy_decode_batch(&params, &sources, None, 6);
        // Feeding the greedy outputs back under teacher forcing must give
        // the same argmax at every step.
        let batch = TokenBatch { sources: sources.clone(), targets: out.clone() };
        let logits = teacher_forced_logits(&params, &batch, None);
        let t = out.iter().map(|o| o.len() + 1).max().unwrap();
        for (b, seq) in out.iter().enumerate() {
            for (i, &tok) in seq.iter().enumerate() {
                let row = logits.row(b * t + i);
                let arg = (0..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best });
                assert_eq!(arg as u32, tok);
            }
        }
    }
}
