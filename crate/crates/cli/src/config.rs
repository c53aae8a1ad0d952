//! Plain-text experiment configs.
//!
//! ```text
//! # comments start with '#'
//! corpus.samples_per_task = 1000
//! model.d_model = 64
//! train.max_steps = 3000
//! template = plus
//! seeds = 1 2 3
//! run = Prompt HoldOneOut PPR+PTA TFU+PPR
//! run = Pipeline AllAtomics voice order=reversed
//! scaling = Prompt
//! ```
//!
//! Every field of the experiment configuration is addressable by its
//! dotted path. `run` and `scaling` lines may repeat and make up the
//! experiment matrix. Target lists accept `all` (every registered
//! composite) and `voice` (the composites with a voice step).

use std::collections::BTreeSet;
use std::fmt;

use serde_json::Value;
use taskcomp::protocol::{ExperimentConfig, Method, PipelineOrder, Strategy};
use taskcomp::taskgen::{registry_valid_composites, TaskId};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub method: Method,
    pub strategy: Strategy,
    pub targets: Vec<TaskId>,
    pub order: Option<PipelineOrder>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MatrixEntry {
    Run(RunSpec),
    Scaling(Method),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigFile {
    pub experiment: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub matrix: Vec<MatrixEntry>,
}

impl Default for ConfigFile {
    fn default() -> Self {
        ConfigFile { experiment: ExperimentConfig::default(), seeds: vec![1, 2, 3], matrix: Vec::new() }
    }
}

pub fn parse_config(text: &str) -> Result<ConfigFile, ConfigError> {
    let mut out = ConfigFile::default();
    let mut tree = serde_json::to_value(&out.experiment).expect("config serializes");
    let mut set = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let err = |message: String| ConfigError { line, message };
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| err(format!("expected `key = value`, got {content:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "seeds" => {
                out.seeds = value
                    .split(|c: char| c == ',' || c.is_whitespace())
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse().map_err(|_| err(format!("bad seed {s:?}"))))
                    .collect::<Result<_, _>>()?;
            }
            "run" => out.matrix.push(MatrixEntry::Run(parse_run(value).map_err(err)?)),
            "scaling" => out.matrix.push(MatrixEntry::Scaling(value.parse().map_err(|e| err(format!("{e}")))?)),
            _ => {
                set_path(&mut tree, key, value).map_err(err)?;
                out.experiment = serde_json::from_value(tree.clone()).map_err(|e| err(format!("{key}: {e}")))?;
                set.insert(key.to_string());
            }
        }
    }
    // Prefix sizes follow the model width unless given explicitly.
    let d = out.experiment.model.d_model;
    if !set.contains("prefix.width") {
        out.experiment.prefix.width = d;
    }
    if !set.contains("prefix.hidden") {
        out.experiment.prefix.hidden = d;
    }
    Ok(out)
}

fn set_path(tree: &mut Value, key: &str, value: &str) -> Result<(), String> {
    let mut node = tree;
    for part in key.split('.') {
        node = node
            .as_object_mut()
            .and_then(|o| o.get_mut(part))
            .ok_or_else(|| format!("unknown key {key:?}"))?;
    }
    if node.is_object() {
        return Err(format!("{key:?} is a section, not a value"));
    }
    let parsed = match node {
        Value::String(_) => Value::String(value.trim_matches('"').to_string()),
        Value::Array(_) if !value.starts_with('[') => {
            let items: Vec<&str> = value.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).collect();
            serde_json::from_str(&format!("[{}]", items.join(","))).map_err(|e| format!("{key}: {e}"))?
        }
        _ if value.eq_ignore_ascii_case("none") => Value::Null,
        _ => serde_json::from_str(value).or_else(|_| Ok::<_, String>(Value::String(value.to_string())))?,
    };
    *node = parsed;
    Ok(())
}

fn parse_run(value: &str) -> Result<RunSpec, String> {
    let mut words = value.split_whitespace();
    let method: Method = words.next().ok_or("run needs a method")?.parse().map_err(|e| format!("{e}"))?;
    let strategy: Strategy = words.next().ok_or("run needs a strategy")?.parse().map_err(|e| format!("{e}"))?;
    let mut targets = Vec::new();
    let mut order = None;
    for w in words {
        if let Some(o) = w.strip_prefix("order=") {
            order = Some(o.parse().map_err(|e| format!("{e}"))?);
        } else if w == "all" {
            targets.extend(registry_valid_composites().iter().map(|e| e.task()));
        } else if w == "voice" {
            targets.extend(registry_valid_composites().iter().filter(|e| e.is_voice()).map(|e| e.task()));
        } else {
            let t: TaskId = w.parse().map_err(|e| format!("{e}"))?;
            if t.entry().is_none() {
                return Err(format!("{w} is not a registered composite"));
            }
            targets.push(t);
        }
    }
    if targets.is_empty() {
        return Err("run needs at least one target".into());
    }
    Ok(RunSpec { method, strategy, targets, order })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_and_matrix() {
        let cfg = parse_config(
            "# demo\nmodel.d_model = 32\ncorpus.split = 0.7 0.1 0.2\ntrain.max_steps=5\nbudget = 900\n\
             template = then\nseeds = 4, 5\nrun = Prompt HoldOneOut PPR+PTA\nrun = Pipeline AllAtomics voice order=reversed\n\
             scaling = Prompt\n",
        )
        .unwrap();
        assert_eq!(cfg.experiment.model.d_model, 32);
        assert_eq!(cfg.experiment.prefix.width, 32);
        assert_eq!(cfg.experiment.corpus.split, [0.7, 0.1, 0.2]);
        assert_eq!(cfg.experiment.train.max_steps, 5);
        assert_eq!(cfg.experiment.budget, Some(900));
        assert_eq!(cfg.experiment.template.to_string(), "then");
        assert_eq!(cfg.seeds, [4, 5]);
        assert_eq!(cfg.matrix.len(), 3);
        match &cfg.matrix[1] {
            MatrixEntry::Run(r) => {
                assert_eq!(r.targets.len(), 8);
                assert_eq!(r.order, Some(PipelineOrder::Reversed));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = parse_config("model.d_model = 32\n\nmodel.depth = 3\n").unwrap_err();
        assert_eq!(e.line, 3);
        assert!(e.message.contains("unknown key"));
        assert_eq!(parse_config("train.max_steps = lots").unwrap_err().line, 1);
        assert_eq!(parse_config("x\n").unwrap_err().line, 1);
        assert_eq!(parse_config("\nrun = Prompt Sideways PPR+PTA").unwrap_err().line, 2);
        assert_eq!(parse_config("run = Prompt Full PPR+TFU").unwrap_err().line, 1);
        assert_eq!(parse_config("model = 3").unwrap_err().line, 1);
    }
}
