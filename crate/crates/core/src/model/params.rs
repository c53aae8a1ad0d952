use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use super::ModelError;
use crate::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    /// Longest prompt+source and longest decoded output, in tokens.
    pub max_len: usize,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { encoder_layers: 2, decoder_layers: 2, d_model: 128, heads: 4, d_ff: 512, max_len: 40, dropout: 0.1 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [self.encoder_layers, self.decoder_layers, self.d_model, self.heads, self.d_ff, self.max_len];
        if positive.contains(&0) {
            return Err(ModelError::Config("layer counts and widths must be positive".into()));
        }
        if self.d_model % self.heads != 0 {
            return Err(ModelError::Config(format!(
                "d_model {} is not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }
}

/// Collects a parameter tree's tensors in a fixed order.
pub trait ParamTree<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>);
    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor<T>>);

    fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        self.visit("", &mut out);
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        self.visit_mut(&mut out);
        out
    }
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

macro_rules! leaf_tree {
    ($ty:ident { $($field:ident),* $(,)? }) => {
        impl<T> ParamTree<T> for $ty<T> {
            fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
                $( out.push((join(prefix, stringify!($field)), &self.$field)); )*
            }
            fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor<T>>) {
                $( out.push(&mut self.$field); )*
            }
        }
    };
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormParams<T> {
    pub gain: Tensor<T>,
    pub bias: Tensor<T>,
}
leaf_tree!(NormParams { gain, bias });

impl<T: Scalar> NormParams<T> {
    fn new(d: usize) -> Self {
        NormParams { gain: Tensor::filled(1, d, T::one()), bias: Tensor::zeros(1, d) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttnParams<T> {
    pub wq: Tensor<T>,
    pub bq: Tensor<T>,
    pub wk: Tensor<T>,
    pub bk: Tensor<T>,
    pub wv: Tensor<T>,
    pub bv: Tensor<T>,
    pub wo: Tensor<T>,
    pub bo: Tensor<T>,
}
leaf_tree!(AttnParams { wq, bq, wk, bk, wv, bv, wo, bo });

impl<T: Scalar> AttnParams<T> {
    fn new(d: usize, out_std: f64, rng: &mut ChaCha8Rng) -> Self {
        let std = (1.0 / d as f64).sqrt();
        AttnParams {
            wq: Tensor::randn(d, d, std, rng),
            bq: Tensor::zeros(1, d),
            wk: Tensor::randn(d, d, std, rng),
            bk: Tensor::zeros(1, d),
            wv: Tensor::randn(d, d, std, rng),
            bv: Tensor::zeros(1, d),
            wo: Tensor::randn(d, d, out_std, rng),
            bo: Tensor::zeros(1, d),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FfnParams<T> {
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
}
leaf_tree!(FfnParams { w1, b1, w2, b2 });

impl<T: Scalar> FfnParams<T> {
    fn new(d: usize, ff: usize, out_std: f64, rng: &mut ChaCha8Rng) -> Self {
        FfnParams {
            w1: Tensor::randn(d, ff, (1.0 / d as f64).sqrt(), rng),
            b1: Tensor::zeros(1, ff),
            w2: Tensor::randn(ff, d, out_std, rng),
            b2: Tensor::zeros(1, d),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayerParams<T> {
    pub norm1: NormParams<T>,
    pub self_attn: AttnParams<T>,
    pub norm2: NormParams<T>,
    pub ffn: FfnParams<T>,
}

impl<T> ParamTree<T> for EncoderLayerParams<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        self.norm1.visit(&join(prefix, "norm1"), out);
        self.self_attn.visit(&join(prefix, "self_attn"), out);
        self.norm2.visit(&join(prefix, "norm2"), out);
        self.ffn.visit(&join(prefix, "ffn"), out);
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor<T>>) {
        self.norm1.visit_mut(out);
        self.self_attn.visit_mut(out);
        self.norm2.visit_mut(out);
        self.ffn.visit_mut(out);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderLayerParams<T> {
    pub norm1: NormParams<T>,
    pub self_attn: AttnParams<T>,
    pub norm2: NormParams<T>,
    pub cross_attn: AttnParams<T>,
    pub norm3: NormParams<T>,
    pub ffn: FfnParams<T>,
}

impl<T> ParamTree<T> for DecoderLayerParams<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        self.norm1.visit(&join(prefix, "norm1"), out);
        self.self_attn.visit(&join(prefix, "self_attn"), out);
        self.norm2.visit(&join(prefix, "norm2"), out);
        self.cross_attn.visit(&join(prefix, "cross_attn"), out);
        self.norm3.visit(&join(prefix, "norm3"), out);
        self.ffn.visit(&join(prefix, "ffn"), out);
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor<T>>) {
        self.norm1.visit_mut(out);
        self.self_attn.visit_mut(out);
        self.norm2.visit_mut(out);
        self.cross_attn.visit_mut(out);
        self.norm3.visit_mut(out);
        self.ffn.visit_mut(out);
    }
}

/// All language-model parameters: shared token embedding, encoder and
/// decoder stacks, output projection.
#[derive(Clone, Debug, PartialEq)]
pub struct LmParams<T> {
    pub config: ModelConfig,
    pub vocab_size: usize,
    pub embed: Tensor<T>,
    pub encoder: Vec<EncoderLayerParams<T>>,
    pub encoder_norm: NormParams<T>,
    pub decoder: Vec<DecoderLayerParams<T>>,
    pub decoder_norm: NormParams<T>,
    pub out_proj: Tensor<T>,
    pub out_bias: Tensor<T>,
}

impl<T> ParamTree<T> for LmParams<T> {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor<T>)>) {
        out.push((join(prefix, "embed"), &self.embed));
        for (i, l) in self.encoder.iter().enumerate() {
            l.visit(&join(prefix, &format!("encoder.{i}")), out);
        }
        self.encoder_norm.visit(&join(prefix, "encoder_norm"), out);
        for (i, l) in self.decoder.iter().enumerate() {
            l.visit(&join(prefix, &format!("decoder.{i}")), out);
        }
        self.decoder_norm.visit(&join(prefix, "decoder_norm"), out);
        out.push((join(prefix, "out_proj"), &self.out_proj));
        out.push((join(prefix, "out_bias"), &self.out_bias));
    }

    fn visit_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor<T>>) {
        out.push(&mut self.embed);
        for l in &mut self.encoder {
            l.visit_mut(out);
        }
        self.encoder_norm.visit_mut(out);
        for l in &mut self.decoder {
            l.visit_mut(out);
        }
        self.decoder_norm.visit_mut(out);
        out.push(&mut self.out_proj);
        out.push(&mut self.out_bias);
    }
}

impl<T: Scalar> LmParams<T> {
    /// Random initialization, deterministic in `seed`.
    pub fn init(config: &ModelConfig, vocab_size: usize, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d_model;
        // Residual-branch outputs are scaled down with depth.
        let depth = (config.encoder_layers + config.decoder_layers) as f64;
        let out_std = (1.0 / d as f64).sqrt() / (2.0 * depth).sqrt();
        let embed = Tensor::randn(vocab_size, d, (1.0 / d as f64).sqrt(), &mut rng);
        let encoder = (0..config.encoder_layers)
            .map(|_| EncoderLayerParams {
                norm1: NormParams::new(d),
                self_attn: AttnParams::new(d, out_std, &mut rng),
                norm2: NormParams::new(d),
                ffn: FfnParams::new(d, config.d_ff, out_std, &mut rng),
            })
            .collect();
        let decoder = (0..config.decoder_layers)
            .map(|_| DecoderLayerParams {
                norm1: NormParams::new(d),
                self_attn: AttnParams::new(d, out_std, &mut rng),
                norm2: NormParams::new(d),
                cross_attn: AttnParams::new(d, out_std, &mut rng),
                norm3: NormParams::new(d),
                ffn: FfnParams::new(d, config.d_ff, out_std, &mut rng),
            })
            .collect();
        let out_proj = Tensor::randn(d, vocab_size, (1.0 / d as f64).sqrt(), &mut rng);
        Ok(LmParams {
            config: config.clone(),
            vocab_size,
            embed,
            encoder,
            encoder_norm: NormParams::new(d),
            decoder,
            decoder_norm: NormParams::new(d),
            out_proj,
            out_bias: Tensor::zeros(1, vocab_size),
        })
    }

    /// Same shapes, all zeros. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.tensors_mut().into_iter().for_each(Tensor::fill_zero);
        z
    }

    pub fn num_parameters(&self) -> usize {
        self.named().iter().map(|(_, t)| t.data.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.named().iter().all(|(_, t)| t.all_finite())
    }

    /// Converts every tensor to another scalar type.
    pub fn cast<U: Scalar>(&self) -> LmParams<U> {
        let conv = |t: &Tensor<T>| Tensor::from_vec(t.rows, t.cols, t.data.iter().map(|x| U::lit(x.to_f64().unwrap())).collect());
        let norm = |n: &NormParams<T>| NormParams { gain: conv(&n.gain), bias: conv(&n.bias) };
        let attn = |a: &AttnParams<T>| AttnParams {
            wq: conv(&a.wq),
            bq: conv(&a.bq),
            wk: conv(&a.wk),
            bk: conv(&a.bk),
            wv: conv(&a.wv),
            bv: conv(&a.bv),
            wo: conv(&a.wo),
            bo: conv(&a.bo),
        };
        let ffn = |f: &FfnParams<T>| FfnParams { w1: conv(&f.w1), b1: conv(&f.b1), w2: conv(&f.w2), b2: conv(&f.b2) };
        LmParams {
            config: self.config.clone(),
            vocab_size: self.vocab_size,
            embed: conv(&self.embed),
            encoder: self
                .encoder
                .iter()
                .map(|l| EncoderLayerParams {
                    norm1: norm(&l.norm1),
                    self_attn: attn(&l.self_attn),
                    norm2: norm(&l.norm2),
                    ffn: ffn(&l.ffn),
                })
                .collect(),
            encoder_norm: norm(&self.encoder_norm),
            decoder: self
                .decoder
                .iter()
                .map(|l| DecoderLayerParams {
                    norm1: norm(&l.norm1),
                    self_attn: attn(&l.self_attn),
                    norm2: norm(&l.norm2),
                    cross_attn: attn(&l.cross_attn),
                    norm3: norm(&l.norm3),
                    ffn: ffn(&l.ffn),
                })
                .collect(),
            decoder_norm: norm(&self.decoder_norm),
            out_proj: conv(&self.out_proj),
            out_bias: conv(&self.out_bias),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_named() {
        let cfg = ModelConfig { d_model: 16, heads: 2, d_ff: 32, ..ModelConfig::default() };
        let a = LmParams::<f32>::init(&cfg, 50, 7).unwrap();
        let b = LmParams::<f32>::init(&cfg, 50, 7).unwrap();
        assert_eq!(a, b);
        let names: Vec<_> = a.named().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names[0], "embed");
        assert!(names.contains(&"decoder.1.cross_attn.wq".to_string()));
        let unique: std::collections::HashSet<_> = names.iter().collect();
        assert_eq!(unique.len(), names.len());
        let mut c = a.clone();
        assert_eq!(c.tensors_mut().len(), names.len());
    }

    #[test]
    fn config_validation() {
        let bad = ModelConfig { d_model: 30, heads: 4, ..ModelConfig::default() };
        assert!(bad.validate().is_err());
        assert!(ModelConfig::default().validate().is_ok());
    }
}
