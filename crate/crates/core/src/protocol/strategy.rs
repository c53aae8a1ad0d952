use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ProtocolError;
use crate::taskgen::{registry_valid_composites, AtomicTask, TaskId};

/// Which tasks a model sees in training relative to a target composite.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Strategy {
    TwoAtomics,
    AllAtomics,
    UnseenBoth,
    UnseenOneFirst,
    UnseenOneSecond,
    HoldOneOut,
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StrategyCategory {
    ZeroShot,
    ZeroShotL2C,
    FullShot,
}

impl Strategy {
    /// In order of growing training data.
    pub const ALL: [Strategy; 7] = [
        Strategy::TwoAtomics,
        Strategy::AllAtomics,
        Strategy::UnseenBoth,
        Strategy::UnseenOneFirst,
        Strategy::UnseenOneSecond,
        Strategy::HoldOneOut,
        Strategy::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::TwoAtomics => "TwoAtomics",
            Strategy::AllAtomics => "AllAtomics",
            Strategy::UnseenBoth => "UnseenBoth",
            Strategy::UnseenOneFirst => "UnseenOneFirst",
            Strategy::UnseenOneSecond => "UnseenOneSecond",
            Strategy::HoldOneOut => "HoldOneOut",
            Strategy::Full => "Full",
        }
    }

    pub fn category(self) -> StrategyCategory {
        match self {
            Strategy::TwoAtomics | Strategy::AllAtomics => StrategyCategory::ZeroShot,
            Strategy::Full => StrategyCategory::FullShot,
            _ => StrategyCategory::ZeroShotL2C,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        Strategy::ALL
            .into_iter()
            .find(|st| st.name().to_ascii_lowercase() == key)
            .ok_or_else(|| ProtocolError::Parse(format!("unknown strategy {s:?}")))
    }
}

impl fmt::Display for StrategyCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StrategyCategory::ZeroShot => "Zero-shot",
            StrategyCategory::ZeroShotL2C => "Zero-shot (L2C)",
            StrategyCategory::FullShot => "Full-shot",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    Prompt,
    Prefix,
    Pipeline,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Prompt, Method::Prefix, Method::Pipeline];

    pub fn name(self) -> &'static str {
        match self {
            Method::Prompt => "Prompt",
            Method::Prefix => "Prefix",
            Method::Pipeline => "Pipeline",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| ProtocolError::Parse(format!("unknown method {s:?}")))
    }
}

/// Prefix tuning needs composite data to train the composer; a pipeline
/// never trains on composites.
pub fn compatible(method: Method, strategy: Strategy) -> bool {
    match (method, strategy.category()) {
        (Method::Prefix, StrategyCategory::ZeroShot) => false,
        (Method::Pipeline, StrategyCategory::ZeroShotL2C | StrategyCategory::FullShot) => false,
        _ => true,
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategySplit {
    pub kind: Strategy,
    pub target: TaskId,
    pub visible: BTreeSet<TaskId>,
    pub category: StrategyCategory,
}

fn composite_parts(target: TaskId) -> Result<(AtomicTask, AtomicTask), ProtocolError> {
    match target {
        TaskId::Composite(a, b) if target.entry().is_some() => Ok((a, b)),
        TaskId::Composite(a, b) => Err(ProtocolError::UnregisteredComposite(format!("{a}+{b}"))),
        TaskId::Atomic(t) => Err(ProtocolError::UnregisteredComposite(t.to_string())),
    }
}

/// Visible training tasks for a strategy and target composite `A+B`.
pub fn build_split(kind: Strategy, target: TaskId) -> Result<StrategySplit, ProtocolError> {
    let (a, b) = composite_parts(target)?;
    let atomics = AtomicTask::ALL.iter().map(|&t| TaskId::Atomic(t));
    let composites = registry_valid_composites().iter().map(|e| e.task());
    let visible: BTreeSet<TaskId> = match kind {
        Strategy::TwoAtomics => [TaskId::Atomic(a), TaskId::Atomic(b)].into(),
        Strategy::AllAtomics => atomics.collect(),
        Strategy::UnseenBoth => atomics.chain(composites.filter(|c| !c.contains(a) && !c.contains(b))).collect(),
        Strategy::UnseenOneFirst => atomics.chain(composites.filter(|c| !c.contains(a))).collect(),
        Strategy::UnseenOneSecond => atomics.chain(composites.filter(|c| !c.contains(b))).collect(),
        Strategy::HoldOneOut => atomics.chain(composites.filter(|&c| c != target)).collect(),
        Strategy::Full => atomics.chain(composites).collect(),
    };
    Ok(StrategySplit { kind, target, visible, category: kind.category() })
}

/// True when the splits share a target and their visible sets grow along
/// the given order. The two unseen-one variants are not compared with each
/// other.
pub fn assert_monotone(splits: &[StrategySplit]) -> bool {
    let Some(first) = splits.first() else { return true };
    if splits.iter().any(|s| s.target != first.target) {
        return false;
    }
    let unordered = |x: Strategy, y: Strategy| {
        matches!(
            (x, y),
            (Strategy::UnseenOneFirst, Strategy::UnseenOneSecond) | (Strategy::UnseenOneSecond, Strategy::UnseenOneFirst)
        )
    };
    for (i, lo) in splits.iter().enumerate() {
        for hi in &splits[i + 1..] {
            if !unordered(lo.kind, hi.kind) && !lo.visible.is_subset(&hi.visible) {
                return false;
            }
        }
    }
    true
}

/// Execution order of a pipeline's two stages.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PipelineOrder {
    /// The registry's order for the composite.
    #[default]
    Canonical,
    Reversed,
}

impl fmt::Display for PipelineOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PipelineOrder::Canonical => "canonical",
            PipelineOrder::Reversed => "reversed",
        })
    }
}

impl FromStr for PipelineOrder {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "canonical" => Ok(PipelineOrder::Canonical),
            "reversed" => Ok(PipelineOrder::Reversed),
            _ => Err(ProtocolError::Parse(format!("unknown pipeline order {s:?} (expected canonical or reversed)"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taskgen::AtomicTask::*;

    #[test]
    fn table_rows() {
        let t = TaskId::composite(Ppr, Pta).unwrap();
        let two = build_split(Strategy::TwoAtomics, t).unwrap();
        assert_eq!(two.visible, [TaskId::Atomic(Ppr), TaskId::Atomic(Pta)].into());
        let hoo = build_split(Strategy::HoldOneOut, t).unwrap();
        assert_eq!(hoo.visible.len(), 30);
        assert!(!hoo.visible.contains(&t));
        assert_eq!(build_split(Strategy::AllAtomics, t).unwrap().visible.len(), 9);
        assert!(build_split(Strategy::Full, t).unwrap().visible.contains(&t));
        assert!(build_split(Strategy::Full, TaskId::Atomic(Ppr)).is_err());
    }

    #[test]
    fn swapped_splits_are_not_monotone() {
        let t = TaskId::composite(Tfu, Ppr).unwrap();
        let mut splits: Vec<_> = Strategy::ALL.iter().map(|&k| build_split(k, t).unwrap()).collect();
        assert!(assert_monotone(&splits));
        splits.swap(1, 5);
        assert!(!assert_monotone(&splits));
    }

    #[test]
    fn compatibility_matrix() {
        for s in Strategy::ALL {
            assert!(compatible(Method::Prompt, s));
            assert_eq!(compatible(Method::Prefix, s), s.category() != StrategyCategory::ZeroShot);
            assert_eq!(compatible(Method::Pipeline, s), s.category() == StrategyCategory::ZeroShot);
        }
        assert_eq!("unseen-one-first".parse::<Strategy>().unwrap(), Strategy::UnseenOneFirst);
        assert_eq!("prompt".parse::<Method>().unwrap(), Method::Prompt);
    }
}
