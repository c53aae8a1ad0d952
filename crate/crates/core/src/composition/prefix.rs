//! Prefix tuning with one MLP shared across tasks and an attention
//! composer that builds composite prefixes from two atomic ones.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::layers::{linear, linear_backward};
use crate::model::{ModelConfig, ModelError, PrefixHook, Tensor};
use crate::taskgen::{AtomicTask, TaskId};
use crate::Scalar;

/// What a composite prefix looks like after the composer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PrefixCompose {
    /// All `2L` attended rows.
    #[default]
    #[serde(rename = "concat2L")]
    Concat2L,
    /// The first `L` attended rows.
    #[serde(rename = "pooledL")]
    PooledL,
}

impl PrefixCompose {
    pub fn name(self) -> &'static str {
        match self {
            PrefixCompose::Concat2L => "concat2L",
            PrefixCompose::PooledL => "pooledL",
        }
    }
}

impl fmt::Display for PrefixCompose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PrefixCompose {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "concat2L" => Ok(PrefixCompose::Concat2L),
            "pooledL" => Ok(PrefixCompose::PooledL),
            _ => Err(format!("unknown prefix composition {s:?} (expected concat2L or pooledL)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrefixConfig {
    /// Rows per atomic prefix (L).
    pub length: usize,
    /// Prefix embedding width (k).
    pub width: usize,
    /// Hidden width of the shared MLP.
    pub hidden: usize,
    pub compose: PrefixCompose,
    /// Scale of the noise added to the composer's identity-initialized
    /// projections.
    pub composer_noise: f64,
}

impl Default for PrefixConfig {
    fn default() -> Self {
        PrefixConfig::for_model(&ModelConfig::default())
    }
}

impl PrefixConfig {
    /// `k` and the MLP hidden width both equal the model width.
    pub fn for_model(model: &ModelConfig) -> Self {
        PrefixConfig {
            length: 8,
            width: model.d_model,
            hidden: model.d_model,
            compose: PrefixCompose::Concat2L,
            composer_noise: 0.01,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.length == 0 || self.width == 0 || self.hidden == 0 {
            return Err(ModelError::Config("prefix length and widths must be positive".into()));
        }
        Ok(())
    }
}

/// Shared MLP: `tanh(P W1 + b1) W2 + b2`, one output slice per encoder
/// layer input plus one for the final encoder norm.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams<T> {
    pub w1: Tensor<T>,
    pub b1: Tensor<T>,
    pub w2: Tensor<T>,
    pub b2: Tensor<T>,
}

/// Composer: `X + softmax(X Wq (X Wk)^T / sqrt(k)) X Wv Wo`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComposerParams<T> {
    pub wq: Tensor<T>,
    pub wk: Tensor<T>,
    pub wv: Tensor<T>,
    pub wo: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BankParams<T> {
    pub prefixes: BTreeMap<AtomicTask, Tensor<T>>,
    pub theta: MlpParams<T>,
    pub eta: ComposerParams<T>,
}

impl<T: Scalar> BankParams<T> {
    /// Checkpoint names: `P.<TASK>`, `theta.*`, `eta.*`.
    pub fn named(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out: Vec<(String, &Tensor<T>)> = self.prefixes.iter().map(|(t, p)| (format!("P.{t}"), p)).collect();
        let th = &self.theta;
        out.extend([("theta.w1", &th.w1), ("theta.b1", &th.b1), ("theta.w2", &th.w2), ("theta.b2", &th.b2)].map(|(n, t)| (n.to_string(), t)));
        let e = &self.eta;
        out.extend([("eta.wq", &e.wq), ("eta.wk", &e.wk), ("eta.wv", &e.wv), ("eta.wo", &e.wo)].map(|(n, t)| (n.to_string(), t)));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out: Vec<&mut Tensor<T>> = self.prefixes.values_mut().collect();
        let th = &mut self.theta;
        out.extend([&mut th.w1, &mut th.b1, &mut th.w2, &mut th.b2]);
        let e = &mut self.eta;
        out.extend([&mut e.wq, &mut e.wk, &mut e.wv, &mut e.wo]);
        out
    }

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.tensors_mut().into_iter().for_each(Tensor::fill_zero);
        z
    }
}

struct ComposerCache<T> {
    x: Tensor<T>,
    q: Tensor<T>,
    k: Tensor<T>,
    v: Tensor<T>,
    attn: Tensor<T>,
    ctx: Tensor<T>,
}

struct TaskCache<T> {
    input: Tensor<T>,
    hidden: Tensor<T>,
    states: Tensor<T>,
    composer: Option<(AtomicTask, AtomicTask, ComposerCache<T>)>,
}

/// Per-task prefixes plus the shared MLP (θ) and composer (η).
pub struct PrefixBank<T> {
    pub config: PrefixConfig,
    /// Model width d and encoder depth the states are produced for.
    pub d_model: usize,
    pub encoder_layers: usize,
    pub params: BankParams<T>,
    grads: BankParams<T>,
    cache: HashMap<TaskId, TaskCache<T>>,
    batch_tasks: Vec<TaskId>,
}

impl<T: Scalar> Clone for PrefixBank<T> {
    fn clone(&self) -> Self {
        PrefixBank {
            config: self.config.clone(),
            d_model: self.d_model,
            encoder_layers: self.encoder_layers,
            params: self.params.clone(),
            grads: self.grads.clone(),
            cache: HashMap::new(),
            batch_tasks: Vec::new(),
        }
    }
}

impl<T: Scalar> fmt::Debug for PrefixBank<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PrefixBank").field("config", &self.config).field("tasks", &self.params.prefixes.keys()).finish()
    }
}

fn noisy_identity<T: Scalar>(n: usize, noise: f64, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let mut t = Tensor::randn(n, n, noise, rng);
    for i in 0..n {
        t.data[i * n + i] += T::one();
    }
    t
}

fn softmax_rows<T: Scalar>(s: &mut Tensor<T>) {
    for r in 0..s.rows {
        let row = s.row_mut(r);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
}

impl<T: Scalar> PrefixBank<T> {
    /// Fresh bank for the given atomic tasks, deterministic in `seed`.
    pub fn new(
        config: PrefixConfig,
        model: &ModelConfig,
        tasks: &[AtomicTask],
        seed: u64,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = config.width;
        let out = (model.encoder_layers + 1) * model.d_model;
        let prefixes = tasks.iter().map(|&t| (t, Tensor::randn(config.length, k, 1.0, &mut rng))).collect();
        let theta = MlpParams {
            w1: Tensor::randn(k, config.hidden, (1.0 / k as f64).sqrt(), &mut rng),
            b1: Tensor::zeros(1, config.hidden),
            w2: Tensor::randn(config.hidden, out, (1.0 / config.hidden as f64).sqrt(), &mut rng),
            b2: Tensor::zeros(1, out),
        };
        let noise = config.composer_noise;
        let eta = ComposerParams {
            wq: noisy_identity(k, noise, &mut rng),
            wk: noisy_identity(k, noise, &mut rng),
            wv: noisy_identity(k, noise, &mut rng),
            wo: Tensor::randn(k, k, noise, &mut rng),
        };
        let params = BankParams { prefixes, theta, eta };
        let grads = params.zeros_like();
        Ok(PrefixBank {
            config,
            d_model: model.d_model,
            encoder_layers: model.encoder_layers,
            params,
            grads,
            cache: HashMap::new(),
            batch_tasks: Vec::new(),
        })
    }

    /// Rebuilds a bank from checkpoint tensors.
    pub fn from_named(
        config: PrefixConfig,
        model: &ModelConfig,
        tensors: &[(String, Tensor<T>)],
    ) -> Result<Self, ModelError> {
        let tasks: Vec<AtomicTask> = tensors
            .iter()
            .filter_map(|(n, _)| n.strip_prefix("P.").and_then(AtomicTask::from_code))
            .collect();
        let mut bank = PrefixBank::new(config, model, &tasks, 0)?;
        let lookup: HashMap<&str, &Tensor<T>> = tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let names: Vec<String> = bank.params.named().into_iter().map(|(n, _)| n).collect();
        for (name, slot) in names.iter().zip(bank.params.tensors_mut()) {
            let t = lookup.get(name.as_str()).ok_or_else(|| ModelError::Format(format!("missing tensor {name}")))?;
            if t.shape() != slot.shape() {
                return Err(ModelError::Format(format!("tensor {name} has shape {:?}", t.shape())));
            }
            *slot = (*t).clone();
        }
        Ok(bank)
    }

    pub fn state_width(&self) -> usize {
        (self.encoder_layers + 1) * self.d_model
    }

    fn prefix(&self, t: AtomicTask) -> Result<&Tensor<T>, ModelError> {
        self.params.prefixes.get(&t).ok_or(ModelError::MissingTask(TaskId::Atomic(t)))
    }

    fn composer_forward(&self, a: &Tensor<T>, b: &Tensor<T>) -> (Tensor<T>, ComposerCache<T>) {
        let eta = &self.params.eta;
        let x = Tensor::vstack(&[a, b]);
        let q = x.matmul(&eta.wq);
        let k = x.matmul(&eta.wk);
        let v = x.matmul(&eta.wv);
        let mut attn = q.matmul_nt(&k);
        attn.scale(T::lit(1.0 / (self.config.width as f64).sqrt()));
        softmax_rows(&mut attn);
        let ctx = attn.matmul(&v);
        let mut out = ctx.matmul(&eta.wo);
        out.add_assign(&x);
        if self.config.compose == PrefixCompose::PooledL {
            out = out.slice_rows(0, a.rows);
        }
        (out, ComposerCache { x, q, k, v, attn, ctx })
    }

    /// `P_{t1+t2} = Attn_eta([P_t1; P_t2])`, reduced per the configured
    /// composition mode.
    pub fn compose_prefix(&self, t1: AtomicTask, t2: AtomicTask) -> Result<Tensor<T>, ModelError> {
        Ok(self.composer_forward(self.prefix(t1)?, self.prefix(t2)?).0)
    }

    /// Prefix matrix fed to the MLP for any task.
    pub fn prefix_matrix(&self, task: TaskId) -> Result<Tensor<T>, ModelError> {
        match task {
            TaskId::Atomic(t) => Ok(self.prefix(t)?.clone()),
            TaskId::Composite(a, b) => self.compose_prefix(a, b),
        }
    }

    fn mlp(&self, input: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
        let th = &self.params.theta;
        let mut hidden = linear(input, &th.w1, &th.b1);
        hidden.data.iter_mut().for_each(|v| *v = v.tanh());
        (linear(&hidden, &th.w2, &th.b2), hidden)
    }

    /// Prefix states for a task: one row per prefix position, one
    /// `d`-wide slice per encoder layer input plus the final norm input.
    pub fn states(&self, task: TaskId) -> Result<Tensor<T>, ModelError> {
        Ok(self.mlp(&self.prefix_matrix(task)?).0)
    }

    /// Hidden state at position `i` for the given layer: the MLP output
    /// when `i` is a prefix position, otherwise `fallback`.
    pub fn prefix_hidden(
        &self,
        task: TaskId,
        position: usize,
        layer: usize,
        fallback: &[T],
    ) -> Result<Vec<T>, ModelError> {
        let states = self.states(task)?;
        if position < states.rows {
            let d = self.d_model;
            Ok(states.row(position)[layer * d..(layer + 1) * d].to_vec())
        } else {
            Ok(fallback.to_vec())
        }
    }

    fn composer_backward(&mut self, d_out: &Tensor<T>, c: &ComposerCache<T>) -> Tensor<T> {
        let eta = &self.params.eta;
        let g = &mut self.grads.eta;
        let mut d_out_full = Tensor::zeros(c.x.rows, c.x.cols);
        d_out_full.data[..d_out.data.len()].copy_from_slice(&d_out.data);
        let mut dx = d_out_full.clone();
        c.ctx.matmul_tn_acc(&d_out_full, &mut g.wo);
        let dctx = d_out_full.matmul_nt(&eta.wo);
        let mut dattn = dctx.matmul_nt(&c.v);
        let mut dv = Tensor::zeros(c.v.rows, c.v.cols);
        c.attn.matmul_tn_acc(&dctx, &mut dv);
        let scale = T::lit(1.0 / (self.config.width as f64).sqrt());
        for r in 0..dattn.rows {
            let a = c.attn.row(r);
            let dr = dattn.row_mut(r);
            let dot: T = a.iter().zip(dr.iter()).map(|(&x, &y)| x * y).sum();
            for (dv, &av) in dr.iter_mut().zip(a) {
                *dv = av * (*dv - dot) * scale;
            }
        }
        let dq = dattn.matmul(&c.k);
        let mut dk = Tensor::zeros(c.k.rows, c.k.cols);
        dattn.matmul_tn_acc(&c.q, &mut dk);
        c.x.matmul_tn_acc(&dq, &mut g.wq);
        c.x.matmul_tn_acc(&dk, &mut g.wk);
        c.x.matmul_tn_acc(&dv, &mut g.wv);
        dx.add_assign(&dq.matmul_nt(&eta.wq));
        dx.add_assign(&dk.matmul_nt(&eta.wk));
        dx.add_assign(&dv.matmul_nt(&eta.wv));
        dx
    }

    pub fn tensors_named(&self) -> Vec<(String, Tensor<T>)> {
        self.params.named().into_iter().map(|(n, t)| (n, t.clone())).collect()
    }

    /// Gradients accumulated since the last `zero_grad`.
    pub fn grads(&self) -> &BankParams<T> {
        &self.grads
    }
}

impl<T: Scalar> PrefixHook<T> for PrefixBank<T> {
    fn forward(&mut self, tasks: &[TaskId]) -> Result<Vec<Tensor<T>>, ModelError> {
        self.cache.clear();
        self.batch_tasks = tasks.to_vec();
        let mut out = Vec::with_capacity(tasks.len());
        for &task in tasks {
            if !self.cache.contains_key(&task) {
                let (input, composer) = match task {
                    TaskId::Atomic(t) => (self.prefix(t)?.clone(), None),
                    TaskId::Composite(a, b) => {
                        let (m, c) = self.composer_forward(self.prefix(a)?, self.prefix(b)?);
                        (m, Some((a, b, c)))
                    }
                };
                let (states, hidden) = self.mlp(&input);
                out.push(states.clone());
                self.cache.insert(task, TaskCache { input, hidden, states, composer });
            } else {
                out.push(self.cache[&task].states.clone());
            }
        }
        Ok(out)
    }

    fn backward(&mut self, d_states: &[Tensor<T>]) {
        // Examples arrive in forward order; sum their gradients per task.
        let mut order: Vec<TaskId> = Vec::new();
        let mut sums: HashMap<TaskId, Tensor<T>> = HashMap::new();
        let tasks = std::mem::take(&mut self.batch_tasks);
        assert_eq!(tasks.len(), d_states.len(), "one state gradient per example");
        for (task, d) in tasks.into_iter().zip(d_states) {
            match sums.get_mut(&task) {
                Some(s) => s.add_assign(d),
                None => {
                    order.push(task);
                    sums.insert(task, d.clone());
                }
            }
        }
        for task in order {
            let c = self.cache.remove(&task).expect("backward follows forward");
            let d = &sums[&task];
            let th = &self.params.theta;
            let gth = &mut self.grads.theta;
            let mut dh = linear_backward(&c.hidden, d, &th.w2, &mut gth.w2, &mut gth.b2);
            for (g, &h) in dh.data.iter_mut().zip(&c.hidden.data) {
                *g *= T::one() - h * h;
            }
            let dinput = linear_backward(&c.input, &dh, &th.w1, &mut gth.w1, &mut gth.b1);
            match &c.composer {
                None => {
                    if let TaskId::Atomic(t) = task {
                        self.grads.prefixes.get_mut(&t).expect("task in bank").add_assign(&dinput);
                    }
                }
                Some((a, b, cc)) => {
                    let dx = self.composer_backward(&dinput, cc);
                    let l = self.config.length;
                    self.grads.prefixes.get_mut(a).expect("task in bank").add_assign(&dx.slice_rows(0, l));
                    self.grads.prefixes.get_mut(b).expect("task in bank").add_assign(&dx.slice_rows(l, 2 * l));
                }
            }
            self.cache.insert(task, c);
        }
    }

    fn zero_grad(&mut self) {
        self.grads.tensors_mut().into_iter().for_each(Tensor::fill_zero);
    }

    fn param_grad_pairs(&mut self) -> Vec<(&mut Tensor<T>, &mut Tensor<T>)> {
        self.params.tensors_mut().into_iter().zip(self.grads.tensors_mut()).collect()
    }
}
