use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::strategy::{build_split, compatible, Method, PipelineOrder, Strategy};
use super::ProtocolError;
use crate::composition::{
    pipeline_infer, predict_prefix, predict_prompt, render_prompt, LmStage, PipelinePlan, PrefixBank, PrefixConfig,
    PromptTemplate,
};
use crate::evalreport::{exact_match, TaskScore};
use crate::model::{
    encoder_tokens, load_checkpoint, read_container, save_checkpoint, train, write_container, Checkpoint, Container,
    LmParams, ModelConfig, Tensor, TrainConfig, TrainItem, TrainLog, Vocab,
};
use crate::taskgen::{
    generate_corpus, read_corpus, registry_valid_composites, split_of, write_corpus, AtomicTask, Corpus, CorpusSpec,
    Example, Lexicon, Split, TaskId,
};

/// Everything that determines a run apart from method, strategy, target
/// and seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub corpus: CorpusSpec,
    pub model: ModelConfig,
    /// `seed` is replaced by the run seed.
    pub train: TrainConfig,
    pub prefix: PrefixConfig,
    pub template: PromptTemplate,
    pub pipeline_order: PipelineOrder,
    /// Total training examples per run, split evenly across visible tasks.
    pub budget: Option<usize>,
    /// Start models trained on composites from the all-atomics model of
    /// the same seed.
    pub warm_start: bool,
    pub scaling: ScalingConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        ExperimentConfig {
            corpus: CorpusSpec { samples_per_task: 1000, ..CorpusSpec::default() },
            prefix: PrefixConfig::for_model(&model),
            model,
            train: TrainConfig::default(),
            template: PromptTemplate::default(),
            pipeline_order: PipelineOrder::default(),
            budget: None,
            warm_start: true,
            scaling: ScalingConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingConfig {
    /// Seed of the composite-pool shuffle, shared by all training seeds.
    pub pool_seed: u64,
    pub pool_size: usize,
    pub step: usize,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        ScalingConfig { pool_seed: 7, pool_size: 14, step: 2 }
    }
}

/// A shuffled split of the composite registry into a growing training pool
/// and a fixed held-out evaluation set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScalingPlan {
    pub pool: Vec<TaskId>,
    pub held_out: Vec<TaskId>,
    pub step: usize,
}

impl ScalingPlan {
    pub fn new(cfg: &ScalingConfig) -> Result<Self, ProtocolError> {
        let mut all: Vec<TaskId> = registry_valid_composites().iter().map(|e| e.task()).collect();
        if cfg.pool_size >= all.len() || cfg.step == 0 {
            return Err(ProtocolError::Parse(format!(
                "scaling pool of {} with step {} leaves no held-out composites",
                cfg.pool_size, cfg.step
            )));
        }
        all.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.pool_seed));
        let held_out = all.split_off(cfg.pool_size);
        Ok(ScalingPlan { pool: all, held_out, step: cfg.step })
    }

    /// Pool prefix sizes `0, step, 2 step, ...` up to the pool size.
    pub fn points(&self) -> Vec<usize> {
        (0..=self.pool.len()).step_by(self.step).collect()
    }

    pub fn visible(&self, n: usize) -> BTreeSet<TaskId> {
        AtomicTask::ALL.iter().map(|&t| TaskId::Atomic(t)).chain(self.pool[..n].iter().copied()).collect()
    }
}

/// Outcome of one (method, strategy, target, seed) run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: Method,
    pub strategy: Option<Strategy>,
    pub target: Option<TaskId>,
    pub scaling_n: Option<usize>,
    pub seed: u64,
    pub config_hash: String,
    pub template: PromptTemplate,
    pub pipeline_order: PipelineOrder,
    /// Test scores for the target (or held-out set) and every visible task.
    pub scores: BTreeMap<TaskId, TaskScore>,
    pub visible: Vec<TaskId>,
    pub train: TrainSummary,
    pub wall_time_secs: f64,
    pub tool_version: String,
}

impl RunRecord {
    pub fn target_score(&self) -> Option<&TaskScore> {
        self.target.and_then(|t| self.scores.get(&t))
    }

    /// Stage execution order for pipeline records.
    pub fn executed_order(&self) -> Option<[AtomicTask; 2]> {
        let entry = self.target?.entry()?;
        let order = match self.pipeline_order {
            PipelineOrder::Canonical => entry.canonical,
            PipelineOrder::Reversed => entry.canonical.reversed(),
        };
        Some(order.sequence(entry.first, entry.second))
    }
}

/// Training statistics carried with a trained model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: usize,
    pub best_step: usize,
    pub final_loss: Option<f64>,
    pub best_valid_em: Option<f64>,
    pub stopped_early: bool,
    pub examples: usize,
    pub train_secs: f64,
}

impl TrainSummary {
    fn from_log(log: &TrainLog, examples: usize, secs: f64) -> Self {
        TrainSummary {
            steps: log.steps.len(),
            best_step: log.best_step,
            final_loss: log.final_loss(),
            best_valid_em: log.valid.iter().map(|v| v.1).fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v)))),
            stopped_early: log.stopped_early,
            examples,
            train_secs: secs,
        }
    }
}

/// The generated corpus with its lexicon and vocabulary.
pub struct Dataset {
    pub spec: CorpusSpec,
    pub lexicon: Lexicon,
    pub vocab: Vocab,
    pub corpus: Corpus,
}

impl Dataset {
    pub fn generate(spec: &CorpusSpec) -> Result<Self, ProtocolError> {
        let lexicon = spec.validate()?;
        let corpus = generate_corpus(spec)?;
        Ok(Dataset { spec: spec.clone(), vocab: Vocab::build(&lexicon), lexicon, corpus })
    }

    /// Loads the corpus stored under `dir` or generates and stores it.
    pub fn load_or_generate(spec: &CorpusSpec, dir: &Path) -> Result<Self, ProtocolError> {
        let lexicon = spec.validate()?;
        let marker = dir.join("spec.json");
        if marker.exists() {
            let stored: CorpusSpec = serde_json::from_str(&fs::read_to_string(&marker)?)?;
            if stored == *spec {
                let corpus = read_corpus(dir)?;
                return Ok(Dataset { spec: spec.clone(), vocab: Vocab::build(&lexicon), lexicon, corpus });
            }
        }
        let data = Dataset::generate(spec)?;
        write_corpus(&data.corpus, dir)?;
        write_atomic(&marker, serde_json::to_string_pretty(spec)?.as_bytes())?;
        Ok(data)
    }

    pub fn examples(&self, task: TaskId, split: Split) -> Vec<&Example> {
        split_of(&self.corpus, task, split)
    }
}

/// Writes via a temporary file and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), std::io::Error> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    fs::File::create(&tmp)?.write_all(bytes)?;
    fs::rename(&tmp, path)
}

/// Short stable hash of a serializable value.
pub fn stable_hash<S: Serialize>(value: &S) -> String {
    let json = serde_json::to_vec(value).expect("config values serialize");
    hex::encode(&Sha256::digest(&json)[..8])
}

struct TrainedModel {
    params: LmParams<f32>,
    summary: TrainSummary,
}

struct TrainedBank {
    bank: PrefixBank<f32>,
    summary: TrainSummary,
}

/// Shared state for a set of runs over one corpus and configuration.
/// Trained models and per-task scores are cached by content hash, in
/// memory and, when a workspace is given, on disk.
pub struct Experiment {
    pub config: ExperimentConfig,
    pub data: Dataset,
    workspace: Option<PathBuf>,
    models: Mutex<HashMap<String, Arc<TrainedModel>>>,
    banks: Mutex<HashMap<String, Arc<TrainedBank>>>,
    scores: Mutex<HashMap<String, TaskScore>>,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl Experiment {
    pub fn new(config: ExperimentConfig, workspace: Option<PathBuf>) -> Result<Self, ProtocolError> {
        config.model.validate()?;
        config.train.validate()?;
        config.prefix.validate()?;
        let data = match &workspace {
            Some(ws) => Dataset::load_or_generate(&config.corpus, &corpus_dir(ws, &config.corpus))?,
            None => Dataset::generate(&config.corpus)?,
        };
        Ok(Experiment {
            config,
            data,
            workspace,
            models: Mutex::default(),
            banks: Mutex::default(),
            scores: Mutex::default(),
            locks: Mutex::default(),
        })
    }

    pub fn workspace(&self) -> Option<&Path> {
        self.workspace.as_deref()
    }

    fn lock(&self, key: &str) -> Arc<Mutex<()>> {
        self.locks.lock().expect("lock table").entry(key.to_string()).or_default().clone()
    }

    fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig { seed, ..self.config.train.clone() }
    }

    /// Training examples for the visible tasks, evenly subsampled when a
    /// budget is set.
    fn items(&self, visible: &BTreeSet<TaskId>, split: Split, seed: u64, with_prompt: bool) -> Result<Vec<TrainItem>, ProtocolError> {
        let per_task = match (split, self.config.budget) {
            (Split::Train, Some(b)) => Some((b / visible.len()).max(1)),
            _ => None,
        };
        let max_len = self.config.model.max_len;
        let vocab = &self.data.vocab;
        let mut items = Vec::new();
        for &task in visible {
            let mut examples = self.data.examples(task, split);
            if let Some(cap) = per_task {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stable_seed(&task.to_string()));
                examples.shuffle(&mut rng);
                examples.truncate(cap);
            }
            let prompt =
                if with_prompt { vocab.encode_tokens(&render_prompt(self.config.template, task)) } else { Vec::new() };
            for ex in examples {
                items.push(TrainItem {
                    task,
                    source: encoder_tokens(&prompt, &vocab.encode(&ex.source), max_len)?,
                    target: vocab.encode(&ex.target),
                });
            }
        }
        Ok(items)
    }

    fn model_key(&self, visible: &BTreeSet<TaskId>, seed: u64) -> String {
        #[derive(Serialize)]
        struct Key<'a> {
            kind: &'static str,
            visible: &'a BTreeSet<TaskId>,
            corpus: &'a CorpusSpec,
            model: &'a ModelConfig,
            train: TrainConfig,
            template: PromptTemplate,
            budget: Option<usize>,
            init: Option<String>,
        }
        stable_hash(&Key {
            kind: "prompt",
            visible,
            corpus: &self.config.corpus,
            model: &self.config.model,
            train: self.train_config(seed),
            template: self.config.template,
            budget: self.config.budget,
            init: self.warm_start_from(visible).then(|| self.model_key(&all_atomics(), seed)),
        })
    }

    fn warm_start_from(&self, visible: &BTreeSet<TaskId>) -> bool {
        let atomics = all_atomics();
        self.config.warm_start && visible.len() > atomics.len() && visible.is_superset(&atomics)
    }

    fn bank_key(&self, visible: &BTreeSet<TaskId>, seed: u64) -> String {
        #[derive(Serialize)]
        struct Key<'a> {
            kind: &'static str,
            host: String,
            visible: &'a BTreeSet<TaskId>,
            prefix: &'a PrefixConfig,
            train: TrainConfig,
            budget: Option<usize>,
        }
        stable_hash(&Key {
            kind: "prefix",
            host: self.model_key(&all_atomics(), seed),
            visible,
            prefix: &self.config.prefix,
            train: self.train_config(seed),
            budget: self.config.budget,
        })
    }

    fn dir(&self, sub: &str) -> Option<PathBuf> {
        self.workspace.as_ref().map(|w| w.join(sub))
    }

    fn write_log(&self, key: &str, log: &TrainLog) -> Result<(), ProtocolError> {
        if let Some(dir) = self.dir("logs") {
            let mut buf = Vec::new();
            for s in &log.steps {
                serde_json::to_writer(&mut buf, s)?;
                buf.push(b'\n');
            }
            write_atomic(&dir.join(format!("{key}.jsonl")), &buf)?;
        }
        Ok(())
    }

    /// A language model trained with textual prompts on the visible tasks.
    fn prompt_model(&self, visible: &BTreeSet<TaskId>, seed: u64) -> Result<(String, Arc<TrainedModel>), ProtocolError> {
        let key = self.model_key(visible, seed);
        let lock = self.lock(&key);
        let _guard = lock.lock().expect("model lock");
        if let Some(m) = self.models.lock().expect("model cache").get(&key) {
            return Ok((key, m.clone()));
        }
        let path = self.dir("checkpoints").map(|d| d.join(format!("{key}.ckpt")));
        let model = match path.as_ref().filter(|p| p.exists()) {
            Some(p) => {
                let ck: Checkpoint<f32> = load_checkpoint(p)?;
                let summary = serde_json::from_value(ck.extra_meta["train"].clone())?;
                TrainedModel { params: ck.params, summary }
            }
            None => {
                let start = Instant::now();
                let train_items = self.items(visible, Split::Train, seed, true)?;
                let valid_items = self.items(visible, Split::Valid, seed, true)?;
                let mut params = if self.warm_start_from(visible) {
                    self.prompt_model(&all_atomics(), seed)?.1.params.clone()
                } else {
                    LmParams::<f32>::init(&self.config.model, self.data.vocab.len(), seed)?
                };
                log::info!("training prompt model {key} on {} tasks ({} examples)", visible.len(), train_items.len());
                let log = train(&mut params, &train_items, &valid_items, &self.train_config(seed), None)?;
                let summary = TrainSummary::from_log(&log, train_items.len(), start.elapsed().as_secs_f64());
                log::info!("trained {key}: {} steps, best valid EM {:?}", summary.steps, summary.best_valid_em);
                self.write_log(&key, &log)?;
                if let Some(p) = &path {
                    let ck = Checkpoint {
                        params: params.clone(),
                        vocab: self.data.vocab.clone(),
                        extra_meta: serde_json::json!({ "train": summary, "visible": visible }),
                        extra: Vec::new(),
                    };
                    save_checkpoint(p, &ck)?;
                }
                TrainedModel { params, summary }
            }
        };
        let model = Arc::new(model);
        // With a workspace only the shared warm-start models stay resident;
        // the rest reload from their checkpoints.
        if self.workspace.is_none() || *visible == all_atomics() {
            self.models.lock().expect("model cache").insert(key.clone(), model.clone());
        }
        Ok((key, model))
    }

    /// A prefix bank trained on the visible tasks over the frozen
    /// all-atomics prompt model of the same seed.
    fn prefix_bank(
        &self,
        visible: &BTreeSet<TaskId>,
        seed: u64,
    ) -> Result<(String, Arc<TrainedModel>, Arc<TrainedBank>), ProtocolError> {
        let (_, host) = self.prompt_model(&all_atomics(), seed)?;
        let key = self.bank_key(visible, seed);
        let lock = self.lock(&key);
        let _guard = lock.lock().expect("bank lock");
        if let Some(b) = self.banks.lock().expect("bank cache").get(&key) {
            return Ok((key, host, b.clone()));
        }
        let path = self.dir("checkpoints").map(|d| d.join(format!("{key}.prefix")));
        let bank = match path.as_ref().filter(|p| p.exists()) {
            Some(p) => {
                let c = read_container(p)?;
                let summary = serde_json::from_value(c.meta["train"].clone())?;
                let tensors: Vec<(String, Tensor<f32>)> = c.tensors;
                let bank = PrefixBank::from_named(self.config.prefix.clone(), &self.config.model, &tensors)?;
                TrainedBank { bank, summary }
            }
            None => {
                let start = Instant::now();
                let train_items = self.items(visible, Split::Train, seed, false)?;
                let valid_items = self.items(visible, Split::Valid, seed, false)?;
                let mut bank =
                    PrefixBank::new(self.config.prefix.clone(), &self.config.model, &AtomicTask::ALL, seed)?;
                let mut frozen = host.params.clone();
                log::info!("training prefix bank {key} on {} tasks ({} examples)", visible.len(), train_items.len());
                let log = train(&mut frozen, &train_items, &valid_items, &self.train_config(seed), Some(&mut bank))?;
                let summary = TrainSummary::from_log(&log, train_items.len(), start.elapsed().as_secs_f64());
                self.write_log(&key, &log)?;
                if let Some(p) = &path {
                    let c = Container {
                        meta: serde_json::json!({ "train": summary, "prefix": self.config.prefix }),
                        tensors: bank.tensors_named(),
                    };
                    write_container(p, &c)?;
                }
                TrainedBank { bank, summary }
            }
        };
        let bank = Arc::new(bank);
        self.banks.lock().expect("bank cache").insert(key.clone(), bank.clone());
        Ok((key, host, bank))
    }

    /// Test score for one task, cached under `key`.
    fn score(&self, key: String, task: TaskId, predict: impl FnOnce(&[&str]) -> Result<Vec<String>, ProtocolError>) -> Result<TaskScore, ProtocolError> {
        if let Some(s) = self.scores.lock().expect("score cache").get(&key) {
            return Ok(*s);
        }
        let path = self.dir("evals").map(|d| d.join(format!("{key}.json")));
        if let Some(p) = path.as_ref().filter(|p| p.exists()) {
            let s: TaskScore = serde_json::from_str(&fs::read_to_string(p)?)?;
            self.scores.lock().expect("score cache").insert(key, s);
            return Ok(s);
        }
        let examples = self.data.examples(task, Split::Test);
        let sources: Vec<&str> = examples.iter().map(|e| e.source.as_str()).collect();
        let predictions = predict(&sources)?;
        let correct = predictions.iter().zip(&examples).filter(|(p, e)| exact_match(p, &e.target)).count();
        let s = TaskScore { n: examples.len(), correct };
        if let Some(p) = &path {
            write_atomic(p, serde_json::to_string(&s)?.as_bytes())?;
        }
        self.scores.lock().expect("score cache").insert(key, s);
        Ok(s)
    }

    fn prompt_score(&self, key: &str, model: &TrainedModel, task: TaskId) -> Result<TaskScore, ProtocolError> {
        let tpl = self.config.template;
        self.score(format!("{key}-prompt-{tpl}-{task}"), task, |src| {
            Ok(predict_prompt(&model.params, &self.data.vocab, tpl, task, src)?)
        })
    }

    fn prefix_score(&self, key: &str, host: &TrainedModel, bank: &TrainedBank, task: TaskId) -> Result<TaskScore, ProtocolError> {
        self.score(format!("{key}-prefix-{task}"), task, |src| {
            let mut b = bank.bank.clone();
            Ok(predict_prefix(&host.params, &self.data.vocab, &mut b, task, src)?)
        })
    }

    fn pipeline_score(&self, key: &str, model: &TrainedModel, target: TaskId, order: PipelineOrder) -> Result<TaskScore, ProtocolError> {
        let entry = target.entry().ok_or_else(|| ProtocolError::UnregisteredComposite(target.to_string()))?;
        let run_order = match order {
            PipelineOrder::Canonical => entry.canonical,
            PipelineOrder::Reversed => entry.canonical.reversed(),
        };
        let tpl = self.config.template;
        self.score(format!("{key}-pipeline-{tpl}-{order}-{target}"), target, |src| {
            let stage = LmStage { params: &model.params, vocab: &self.data.vocab, template: tpl };
            let plan = PipelinePlan::for_composite(entry.first, entry.second, run_order, &stage);
            let sources: Vec<String> = src.iter().map(|s| s.to_string()).collect();
            Ok(pipeline_infer(&plan, &sources)?)
        })
    }

    /// Hash identifying a run's configuration, excluding the seed.
    pub fn run_hash(&self, method: Method, strategy: Option<Strategy>, target: Option<TaskId>, scaling_n: Option<usize>) -> String {
        run_hash(&self.config, method, strategy, target, scaling_n)
    }

    fn evaluate(
        &self,
        method: Method,
        visible: &BTreeSet<TaskId>,
        targets: &[TaskId],
        seed: u64,
        order: PipelineOrder,
    ) -> Result<(BTreeMap<TaskId, TaskScore>, TrainSummary), ProtocolError> {
        let mut scores = BTreeMap::new();
        let summary = match method {
            Method::Prompt => {
                let (key, model) = self.prompt_model(visible, seed)?;
                for &t in targets.iter().chain(visible) {
                    scores.insert(t, self.prompt_score(&key, &model, t)?);
                }
                model.summary.clone()
            }
            Method::Pipeline => {
                let (key, model) = self.prompt_model(visible, seed)?;
                for &t in targets {
                    scores.insert(t, self.pipeline_score(&key, &model, t, order)?);
                }
                for &t in visible {
                    scores.insert(t, self.prompt_score(&key, &model, t)?);
                }
                model.summary.clone()
            }
            Method::Prefix => {
                let (key, host, bank) = self.prefix_bank(visible, seed)?;
                for &t in targets.iter().chain(visible) {
                    scores.insert(t, self.prefix_score(&key, &host, &bank, t)?);
                }
                bank.summary.clone()
            }
        };
        Ok((scores, summary))
    }

    /// Trains under a strategy and scores the target and visible tasks.
    pub fn run(&self, method: Method, strategy: Strategy, target: TaskId, seed: u64) -> Result<RunRecord, ProtocolError> {
        self.run_with_order(method, strategy, target, seed, self.config.pipeline_order)
    }

    /// As [`Experiment::run`] with an explicit pipeline stage order.
    pub fn run_with_order(
        &self,
        method: Method,
        strategy: Strategy,
        target: TaskId,
        seed: u64,
        order: PipelineOrder,
    ) -> Result<RunRecord, ProtocolError> {
        if !compatible(method, strategy) {
            return Err(ProtocolError::IncompatibleMethodStrategy { method, strategy });
        }
        let split = build_split(strategy, target)?;
        let start = Instant::now();
        let (scores, train) = self.evaluate(method, &split.visible, &[target], seed, order)?;
        let hash_cfg = ExperimentConfig { pipeline_order: order, ..self.config.clone() };
        Ok(RunRecord {
            method,
            strategy: Some(strategy),
            target: Some(target),
            scaling_n: None,
            seed,
            config_hash: run_hash(&hash_cfg, method, Some(strategy), Some(target), None),
            template: self.config.template,
            pipeline_order: order,
            scores,
            visible: split.visible.into_iter().collect(),
            train,
            wall_time_secs: start.elapsed().as_secs_f64(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        })
    }

    /// One point of the scaling curve: atomics plus the first `n` pool
    /// composites, scored on the held-out composites.
    pub fn run_scaling_point(&self, method: Method, plan: &ScalingPlan, n: usize, seed: u64) -> Result<RunRecord, ProtocolError> {
        if method == Method::Pipeline {
            return Err(ProtocolError::IncompatibleMethodStrategy { method, strategy: Strategy::HoldOneOut });
        }
        if n > plan.pool.len() {
            return Err(ProtocolError::Parse(format!("scaling point {n} exceeds pool of {}", plan.pool.len())));
        }
        let visible = plan.visible(n);
        let start = Instant::now();
        let (scores, train) = self.evaluate(method, &visible, &plan.held_out, seed, self.config.pipeline_order)?;
        Ok(RunRecord {
            method,
            strategy: None,
            target: None,
            scaling_n: Some(n),
            seed,
            config_hash: self.run_hash(method, None, None, Some(n)),
            template: self.config.template,
            pipeline_order: self.config.pipeline_order,
            scores,
            visible: visible.into_iter().collect(),
            train,
            wall_time_secs: start.elapsed().as_secs_f64(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        })
    }

    /// Every point of the scaling curve for one seed.
    pub fn run_scaling_curve(&self, method: Method, seed: u64) -> Result<Vec<RunRecord>, ProtocolError> {
        let plan = ScalingPlan::new(&self.config.scaling)?;
        plan.points().into_iter().map(|n| self.run_scaling_point(method, &plan, n, seed)).collect()
    }

    /// Trains (or loads) the prompt model for a visible set and returns its
    /// cache key and training summary.
    pub fn train_prompt_model(&self, visible: &BTreeSet<TaskId>, seed: u64) -> Result<(String, TrainSummary), ProtocolError> {
        let (key, model) = self.prompt_model(visible, seed)?;
        Ok((key, model.summary.clone()))
    }

    /// Checkpoint file of a prompt model, when a workspace is set.
    pub fn checkpoint_path(&self, key: &str) -> Option<PathBuf> {
        self.dir("checkpoints").map(|d| d.join(format!("{key}.ckpt")))
    }

    /// Per-step log of a trained prompt model, when a workspace is set.
    pub fn training_log_path(&self, visible: &BTreeSet<TaskId>, seed: u64) -> Option<PathBuf> {
        self.dir("logs").map(|d| d.join(format!("{}.jsonl", self.model_key(visible, seed))))
    }
}

/// Free-function form of [`Experiment::run`].
pub fn run_experiment(
    exp: &Experiment,
    method: Method,
    strategy: Strategy,
    target: TaskId,
    seed: u64,
) -> Result<RunRecord, ProtocolError> {
    exp.run(method, strategy, target, seed)
}

/// Hash of a run's configuration, excluding the training seed.
pub fn run_hash(
    config: &ExperimentConfig,
    method: Method,
    strategy: Option<Strategy>,
    target: Option<TaskId>,
    scaling_n: Option<usize>,
) -> String {
    #[derive(Serialize)]
    struct Key {
        method: Method,
        strategy: Option<Strategy>,
        target: Option<TaskId>,
        scaling_n: Option<usize>,
        config: ExperimentConfig,
    }
    let mut config = config.clone();
    config.train.seed = 0;
    if scaling_n.is_none() {
        config.scaling = ScalingConfig::default();
    }
    stable_hash(&Key { method, strategy, target, scaling_n, config })
}

pub fn corpus_dir(workspace: &Path, spec: &CorpusSpec) -> PathBuf {
    workspace.join("corpus").join(stable_hash(spec))
}

fn all_atomics() -> BTreeSet<TaskId> {
    AtomicTask::ALL.iter().map(|&t| TaskId::Atomic(t)).collect()
}

fn stable_seed(s: &str) -> u64 {
    let h = Sha256::digest(s.as_bytes());
    u64::from_le_bytes(h[..8].try_into().expect("eight bytes"))
}
