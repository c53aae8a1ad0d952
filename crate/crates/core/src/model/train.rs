//! Mixed-task maximum-likelihood training with AdamW and early stopping.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::decode::greedy_decode_batch;
use super::params::{LmParams, ParamTree};
use super::tensor::Tensor;
use super::transformer::{loss_and_grads, TokenBatch};
use super::ModelError;
use crate::taskgen::TaskId;
use crate::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub warmup_steps: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    /// Steps between validation passes; 0 disables validation.
    pub eval_every: usize,
    /// Validation passes without improvement before stopping.
    pub patience: usize,
    /// Validation examples decoded per pass (a fixed subset).
    pub eval_cap: usize,
    /// Stop as soon as validation EM reaches this fraction.
    pub target_em: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            max_steps: 4000,
            warmup_steps: 100,
            seed: 0,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            weight_decay: 0.01,
            grad_clip: 1.0,
            eval_every: 200,
            patience: 4,
            eval_cap: 256,
            target_em: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("moment coefficients must lie in [0, 1)");
        }
        if !(self.eps > 0.0) || self.weight_decay < 0.0 || self.grad_clip < 0.0 {
            return bad("eps must be positive, weight decay and clip non-negative");
        }
        if self.eval_every > 0 && (self.patience == 0 || self.eval_cap == 0) {
            return bad("patience and eval cap must be positive when validating");
        }
        Ok(())
    }
}

/// One tokenized training or validation example.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainItem {
    pub task: TaskId,
    /// Full encoder input (prompt, source, EOS).
    pub source: Vec<u32>,
    pub target: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    /// Examples per task in this step's batch.
    pub tasks: BTreeMap<TaskId, usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    /// `(step, valid EM fraction)` per validation pass.
    pub valid: Vec<(usize, f64)>,
    /// Step whose parameters were kept.
    pub best_step: usize,
    pub stopped_early: bool,
}

impl TrainLog {
    pub fn final_loss(&self) -> Option<f64> {
        self.steps.last().map(|s| s.loss)
    }
}

/// Trainable prefix parameters plugged into the encoder. While a hook is
/// attached the language model is frozen.
pub trait PrefixHook<T: Scalar> {
    /// Prefix states for each example of a batch, given its task. Caches
    /// whatever `backward` needs.
    fn forward(&mut self, tasks: &[TaskId]) -> Result<Vec<Tensor<T>>, ModelError>;
    /// Accumulates gradients for the states returned by the last `forward`.
    fn backward(&mut self, d_states: &[Tensor<T>]);
    fn zero_grad(&mut self);
    /// Trainable tensors paired with their gradient accumulators.
    fn param_grad_pairs(&mut self) -> Vec<(&mut Tensor<T>, &mut Tensor<T>)>;
}

struct AdamW<T> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: i32,
}

impl<T: Scalar> AdamW<T> {
    fn new(shapes: &[usize]) -> Self {
        AdamW { m: shapes.iter().map(|&n| vec![T::zero(); n]).collect(), v: shapes.iter().map(|&n| vec![T::zero(); n]).collect(), t: 0 }
    }

    /// `pairs[i].2` says whether weight decay applies.
    fn step(&mut self, pairs: &mut [(&mut Tensor<T>, &Tensor<T>, bool)], lr: f64, cfg: &TrainConfig, clip_scale: f64) {
        self.t += 1;
        let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
        let c1 = T::lit(1.0 - cfg.beta1.powi(self.t));
        let c2 = T::lit(1.0 - cfg.beta2.powi(self.t));
        let lr_t = T::lit(lr);
        let eps = T::lit(cfg.eps);
        let decay = T::one() - T::lit(lr * cfg.weight_decay);
        let cs = T::lit(clip_scale);
        for (i, (p, g, wd)) in pairs.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.data.len() {
                let gj = g.data[j] * cs;
                m[j] = b1 * m[j] + (T::one() - b1) * gj;
                v[j] = b2 * v[j] + (T::one() - b2) * gj * gj;
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                if *wd {
                    p.data[j] *= decay;
                }
                p.data[j] -= lr_t * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

fn lr_at(step: usize, cfg: &TrainConfig) -> f64 {
    if cfg.warmup_steps > 0 && step < cfg.warmup_steps {
        cfg.learning_rate * (step + 1) as f64 / cfg.warmup_steps as f64
    } else {
        cfg.learning_rate
    }
}

fn make_batch(items: &[&TrainItem]) -> TokenBatch {
    TokenBatch {
        sources: items.iter().map(|it| it.source.clone()).collect(),
        targets: items.iter().map(|it| it.target.clone()).collect(),
    }
}

const DECODE_BATCH: usize = 64;

/// Fraction of items whose greedy decode equals the target exactly.
fn exact_match_rate<T: Scalar>(
    params: &LmParams<T>,
    items: &[&TrainItem],
    hook: &mut Option<&mut dyn PrefixHook<T>>,
) -> Result<f64, ModelError> {
    if items.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0;
    for chunk in items.chunks(DECODE_BATCH) {
        let sources: Vec<Vec<u32>> = chunk.iter().map(|it| it.source.clone()).collect();
        let states = match hook {
            Some(h) => Some(h.forward(&chunk.iter().map(|it| it.task).collect::<Vec<_>>())?),
            None => None,
        };
        let out = greedy_decode_batch(params, &sources, states.as_deref(), params.config.max_len);
        correct += out.iter().zip(chunk).filter(|(o, it)| **o == it.target).count();
    }
    Ok(correct as f64 / items.len() as f64)
}

fn snapshot<T: Scalar>(params: &LmParams<T>, hook: &mut Option<&mut dyn PrefixHook<T>>) -> (Option<LmParams<T>>, Vec<Tensor<T>>) {
    match hook {
        Some(h) => (None, h.param_grad_pairs().into_iter().map(|(p, _)| p.clone()).collect()),
        None => (Some(params.clone()), Vec::new()),
    }
}

/// Trains in place. Batches are drawn from a shuffled pass over all
/// training items, so every batch mixes the visible tasks. With a prefix
/// hook only the hook's parameters are updated. When validation is enabled
/// the parameters of the best validation pass are kept.
pub fn train<T: Scalar>(
    params: &mut LmParams<T>,
    train_items: &[TrainItem],
    valid_items: &[TrainItem],
    cfg: &TrainConfig,
    mut hook: Option<&mut dyn PrefixHook<T>>,
) -> Result<TrainLog, ModelError> {
    cfg.validate()?;
    let mut log = TrainLog::default();
    if cfg.max_steps == 0 || train_items.is_empty() {
        return Ok(log);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut valid: Vec<&TrainItem> = valid_items.iter().collect();
    valid.shuffle(&mut rng);
    valid.truncate(cfg.eval_cap);
    let mut grads = params.zeros_like();
    let mut opt = match &mut hook {
        Some(h) => AdamW::new(&h.param_grad_pairs().iter().map(|(p, _)| p.data.len()).collect::<Vec<_>>()),
        None => AdamW::new(&params.named().iter().map(|(_, t)| t.data.len()).collect::<Vec<_>>()),
    };
    let mut order: Vec<usize> = (0..train_items.len()).collect();
    let mut cursor = order.len();
    let mut best: Option<(f64, (Option<LmParams<T>>, Vec<Tensor<T>>))> = None;
    let mut stale = 0;
    for step in 0..cfg.max_steps {
        let mut picked = Vec::with_capacity(cfg.batch_size);
        while picked.len() < cfg.batch_size.min(train_items.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            picked.push(&train_items[order[cursor]]);
            cursor += 1;
        }
        let batch = make_batch(&picked);
        let tasks: Vec<TaskId> = picked.iter().map(|it| it.task).collect();
        grads.tensors_mut().into_iter().for_each(Tensor::fill_zero);
        let loss = match &mut hook {
            Some(h) => {
                h.zero_grad();
                let states = h.forward(&tasks)?;
                let (loss, dstates) = loss_and_grads(params, &mut grads, &batch, Some(&states), Some(&mut rng));
                h.backward(&dstates);
                loss
            }
            None => loss_and_grads(params, &mut grads, &batch, None, Some(&mut rng)).0,
        };
        let loss = loss.to_f64().unwrap_or(f64::NAN);
        if !loss.is_finite() {
            return Err(ModelError::NonFiniteLoss { step });
        }
        let lr = lr_at(step, cfg);
        match &mut hook {
            Some(h) => {
                let mut pairs: Vec<(&mut Tensor<T>, &Tensor<T>, bool)> =
                    h.param_grad_pairs().into_iter().map(|(p, g)| (p, &*g, false)).collect();
                let scale = clip_scale(pairs.iter().map(|(_, g, _)| *g), cfg.grad_clip);
                opt.step(&mut pairs, lr, cfg, scale);
            }
            None => {
                let grad_list: Vec<&Tensor<T>> = grads.named().into_iter().map(|(_, g)| g).collect();
                let scale = clip_scale(grad_list.iter().copied(), cfg.grad_clip);
                let mut pairs: Vec<(&mut Tensor<T>, &Tensor<T>, bool)> = params
                    .tensors_mut()
                    .into_iter()
                    .zip(grad_list)
                    .map(|(p, g)| {
                        let wd = p.rows > 1 && p.cols > 1;
                        (p, g, wd)
                    })
                    .collect();
                opt.step(&mut pairs, lr, cfg, scale);
            }
        }
        let mut counts = BTreeMap::new();
        for t in &tasks {
            *counts.entry(*t).or_insert(0) += 1;
        }
        log.steps.push(StepRecord { step, loss, tasks: counts });

        let last = step + 1 == cfg.max_steps;
        if cfg.eval_every > 0 && !valid.is_empty() && ((step + 1) % cfg.eval_every == 0 || last) {
            let em = exact_match_rate(params, &valid, &mut hook)?;
            log.valid.push((step + 1, em));
            log::debug!("step {} loss {:.4} valid EM {:.4}", step + 1, loss, em);
            // Ties keep the later, longer-trained parameters but still count
            // towards patience.
            let prev = best.as_ref().map(|(b, _)| *b);
            if prev.map_or(true, |b| em >= b) {
                best = Some((em, snapshot(params, &mut hook)));
                log.best_step = step + 1;
            }
            if prev.map_or(true, |b| em > b) {
                stale = 0;
            } else {
                stale += 1;
            }
            if em >= cfg.target_em || stale >= cfg.patience {
                log.stopped_early = !last;
                break;
            }
        } else if cfg.eval_every == 0 || valid.is_empty() {
            log.best_step = step + 1;
        }
    }
    if let Some((_, (lm, prefix))) = best {
        match (&mut hook, lm) {
            (Some(h), _) => {
                for ((p, _), saved) in h.param_grad_pairs().into_iter().zip(prefix) {
                    *p = saved;
                }
            }
            (None, Some(lm)) => *params = lm,
            (None, None) => {}
        }
    }
    Ok(log)
}

fn clip_scale<'a, T: Scalar + 'a>(grads: impl Iterator<Item = &'a Tensor<T>>, clip: f64) -> f64 {
    if clip <= 0.0 {
        return 1.0;
    }
    let norm = grads.map(|g| g.sum_sq().to_f64().unwrap_or(f64::INFINITY)).sum::<f64>().sqrt();
    if norm > clip {
        clip / norm
    } else {
        1.0
    }
}
