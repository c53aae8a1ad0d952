use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lexicon::{Lexicon, LexiconSizes, Number};
use super::oracle::apply_task;
use super::sentence::{NounPhrase, PpPosition, PrepPhrase, SentenceStructure, Tense, Voice};
use super::task::TaskId;
use super::TaskgenError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub source: String,
    pub target: String,
    pub task: TaskId,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub seed: u64,
    pub lexicon: LexiconSizes,
    pub samples_per_task: usize,
    /// Train, valid and test fractions.
    pub split: [f64; 3],
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec { seed: 1, lexicon: LexiconSizes::default(), samples_per_task: 300, split: [0.8, 0.1, 0.1] }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<Lexicon, TaskgenError> {
        if self.split.iter().any(|f| !(0.0..=1.0).contains(f)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(TaskgenError::InvalidSpec(format!(
                "split fractions must be non-negative and sum to 1, got {:?}",
                self.split
            )));
        }
        Lexicon::new(self.lexicon)
    }

    /// Sizes of the train and valid parts for one task; test takes the rest.
    pub fn split_sizes(&self) -> (usize, usize) {
        let n = self.samples_per_task as f64;
        let train = (n * self.split[0] + 1e-9).floor() as usize;
        let valid = ((n * self.split[1] + 1e-9).floor() as usize).min(self.samples_per_task - train);
        (train, valid)
    }
}

pub type Corpus = BTreeMap<TaskId, Vec<Example>>;

fn pick<'a, T, R: Rng>(rng: &mut R, items: &'a [T]) -> &'a T {
    items.choose(rng).expect("lexicon tables are never empty")
}

fn random_np<R: Rng>(rng: &mut R, lex: &Lexicon) -> NounPhrase {
    if rng.gen_bool(0.15) {
        return NounPhrase::proper(pick(rng, &lex.proper_nouns));
    }
    let noun = pick(rng, &lex.nouns);
    let number = if rng.gen_bool(0.5) { Number::Singular } else { Number::Plural };
    let dets: Vec<_> = lex.determiners.iter().filter(|d| d.agreement.admits(number)).collect();
    let determiner = match number {
        // Bare plurals are allowed; bare singulars are not.
        Number::Plural if rng.gen_bool(0.2) => None,
        _ => Some(pick(rng, &dets).form),
    };
    let adjective = rng.gen_bool(0.35).then(|| *pick(rng, &lex.adjectives));
    NounPhrase::common(determiner, adjective, noun.form(number), number)
}

/// Draws one structure from the grammar.
pub fn random_structure<R: Rng>(rng: &mut R, lex: &Lexicon) -> SentenceStructure {
    let voice = if rng.gen_bool(0.5) { Voice::Active } else { Voice::Passive };
    let agent = random_np(rng, lex);
    let patient = random_np(rng, lex);
    let tense = *pick(rng, &[Tense::Past, Tense::Present, Tense::Future]);
    let agent = (voice == Voice::Active || rng.gen_bool(0.85)).then_some(agent);
    let adverb = rng.gen_bool(0.4).then(|| *pick(rng, &lex.adverbs));
    let pp = rng.gen_bool(0.6).then(|| PrepPhrase {
        phrase: pick(rng, &lex.prep_phrases),
        position: if rng.gen_bool(0.5) { PpPosition::Front } else { PpPosition::Back },
    });
    SentenceStructure { agent, patient, verb: pick(rng, &lex.verbs).clone(), tense, voice, adverb, pp }
}

fn task_seed(seed: u64, task: TaskId) -> u64 {
    let index = TaskId::all().iter().position(|t| *t == task).expect("known task") as u64;
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index + 1)
}

/// Generates `samples_per_task` distinct applicable examples for every task.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Corpus, TaskgenError> {
    let lex = spec.validate()?;
    let (n_train, n_valid) = spec.split_sizes();
    // Consecutive rejected draws after which the grammar is deemed exhausted.
    const STALL_LIMIT: usize = 20_000;
    let mut corpus = Corpus::new();
    for task in TaskId::all() {
        let mut rng = ChaCha8Rng::seed_from_u64(task_seed(spec.seed, task));
        let mut seen = HashSet::new();
        let mut examples = Vec::with_capacity(spec.samples_per_task);
        let mut stalled = 0;
        while examples.len() < spec.samples_per_task {
            stalled += 1;
            if stalled > STALL_LIMIT {
                return Err(TaskgenError::InfeasibleSpec {
                    task,
                    wanted: spec.samples_per_task,
                    found: examples.len(),
                });
            }
            let s = random_structure(&mut rng, &lex);
            let Ok(out) = apply_task(task, &s) else { continue };
            let source = s.realize();
            if !seen.insert(source.clone()) {
                continue;
            }
            stalled = 0;
            let split = match examples.len() {
                i if i < n_train => Split::Train,
                i if i < n_train + n_valid => Split::Valid,
                _ => Split::Test,
            };
            examples.push(Example { source, target: out.realize(), task, split });
        }
        corpus.insert(task, examples);
    }
    Ok(corpus)
}

/// File name of one task's dataset.
pub fn task_file_name(task: TaskId) -> String {
    format!("{task}.jsonl")
}

pub fn write_corpus(corpus: &Corpus, dir: &Path) -> Result<(), TaskgenError> {
    fs::create_dir_all(dir)?;
    for (task, examples) in corpus {
        let path = dir.join(task_file_name(*task));
        let tmp = path.with_extension("jsonl.tmp");
        {
            let mut w = BufWriter::new(fs::File::create(&tmp)?);
            for e in examples {
                serde_json::to_writer(&mut w, e).map_err(std::io::Error::from)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
        }
        fs::rename(tmp, path)?;
    }
    Ok(())
}

pub fn read_task_file(path: &Path) -> Result<Vec<Example>, TaskgenError> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e = serde_json::from_str(&line).map_err(|err| TaskgenError::Record {
            file: path.display().to_string(),
            line: i + 1,
            message: err.to_string(),
        })?;
        out.push(e);
    }
    Ok(out)
}

pub fn read_corpus(dir: &Path) -> Result<Corpus, TaskgenError> {
    let mut corpus = Corpus::new();
    for task in TaskId::all() {
        let path = dir.join(task_file_name(task));
        if path.exists() {
            corpus.insert(task, read_task_file(&path)?);
        }
    }
    Ok(corpus)
}

/// Examples of one task in one split.
pub fn split_of(corpus: &Corpus, task: TaskId, split: Split) -> Vec<&Example> {
    corpus.get(&task).map(|v| v.iter().filter(|e| e.split == split).collect()).unwrap_or_default()
}
