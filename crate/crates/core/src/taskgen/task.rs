use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::TaskgenError;

/// The nine atomic style transforms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AtomicTask {
    /// To future tense.
    Tfu,
    /// To present tense.
    Tpr,
    /// To past tense.
    Tpa,
    /// Active to passive.
    Atp,
    /// Passive to active.
    Pta,
    /// Prepositional phrase front to back.
    Pfb,
    /// Prepositional phrase back to front.
    Pbf,
    /// Adjective and adverb removal.
    Arr,
    /// Prepositional phrase removal.
    Ppr,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Category {
    SyntaxTense,
    SyntaxVoice,
    SyntaxPpMove,
    SemanticRemoval,
}

impl AtomicTask {
    pub const ALL: [AtomicTask; 9] = [
        AtomicTask::Tfu,
        AtomicTask::Tpr,
        AtomicTask::Tpa,
        AtomicTask::Atp,
        AtomicTask::Pta,
        AtomicTask::Pfb,
        AtomicTask::Pbf,
        AtomicTask::Arr,
        AtomicTask::Ppr,
    ];

    pub fn code(self) -> &'static str {
        match self {
            AtomicTask::Tfu => "TFU",
            AtomicTask::Tpr => "TPR",
            AtomicTask::Tpa => "TPA",
            AtomicTask::Atp => "ATP",
            AtomicTask::Pta => "PTA",
            AtomicTask::Pfb => "PFB",
            AtomicTask::Pbf => "PBF",
            AtomicTask::Arr => "ARR",
            AtomicTask::Ppr => "PPR",
        }
    }

    pub fn from_code(code: &str) -> Option<AtomicTask> {
        AtomicTask::ALL.into_iter().find(|t| t.code() == code)
    }

    pub fn category(self) -> Category {
        match self {
            AtomicTask::Tfu | AtomicTask::Tpr | AtomicTask::Tpa => Category::SyntaxTense,
            AtomicTask::Atp | AtomicTask::Pta => Category::SyntaxVoice,
            AtomicTask::Pfb | AtomicTask::Pbf => Category::SyntaxPpMove,
            AtomicTask::Arr | AtomicTask::Ppr => Category::SemanticRemoval,
        }
    }

    pub fn is_voice(self) -> bool {
        self.category() == Category::SyntaxVoice
    }
}

impl fmt::Display for AtomicTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// Order in which the two halves of a composite are executed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CompositeOrder {
    FirstThenSecond,
    SecondThenFirst,
}

impl CompositeOrder {
    pub fn reversed(self) -> CompositeOrder {
        match self {
            CompositeOrder::FirstThenSecond => CompositeOrder::SecondThenFirst,
            CompositeOrder::SecondThenFirst => CompositeOrder::FirstThenSecond,
        }
    }

    /// The two tasks in execution order.
    pub fn sequence(self, first: AtomicTask, second: AtomicTask) -> [AtomicTask; 2] {
        match self {
            CompositeOrder::FirstThenSecond => [first, second],
            CompositeOrder::SecondThenFirst => [second, first],
        }
    }
}

/// One registered composite: the pair as it is named, plus the execution
/// order that defines its gold labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CompositeEntry {
    pub first: AtomicTask,
    pub second: AtomicTask,
    pub canonical: CompositeOrder,
}

impl CompositeEntry {
    pub fn task(&self) -> TaskId {
        TaskId::Composite(self.first, self.second)
    }

    pub fn contains(&self, t: AtomicTask) -> bool {
        self.first == t || self.second == t
    }

    pub fn is_voice(&self) -> bool {
        self.first.is_voice() || self.second.is_voice()
    }
}

macro_rules! composite {
    ($a:ident, $b:ident, $o:ident) => {
        CompositeEntry {
            first: AtomicTask::$a,
            second: AtomicTask::$b,
            canonical: CompositeOrder::$o,
        }
    };
}

// Voice steps run before removals and before tense changes; tense runs
// before ARR and PP moves; PP moves always run last.
static REGISTRY: [CompositeEntry; 22] = [
    composite!(Ppr, Atp, SecondThenFirst),
    composite!(Ppr, Pta, SecondThenFirst),
    composite!(Tfu, Atp, SecondThenFirst),
    composite!(Tfu, Pta, SecondThenFirst),
    composite!(Tpr, Atp, SecondThenFirst),
    composite!(Tpr, Pta, SecondThenFirst),
    composite!(Tpa, Atp, SecondThenFirst),
    composite!(Tpa, Pta, SecondThenFirst),
    composite!(Tfu, Ppr, FirstThenSecond),
    composite!(Tpr, Ppr, FirstThenSecond),
    composite!(Tpa, Ppr, FirstThenSecond),
    composite!(Arr, Pfb, FirstThenSecond),
    composite!(Arr, Pbf, FirstThenSecond),
    composite!(Tfu, Arr, FirstThenSecond),
    composite!(Tpa, Arr, FirstThenSecond),
    composite!(Tpr, Arr, FirstThenSecond),
    composite!(Tfu, Pbf, FirstThenSecond),
    composite!(Tfu, Pfb, FirstThenSecond),
    composite!(Tpa, Pfb, FirstThenSecond),
    composite!(Tpa, Pbf, FirstThenSecond),
    composite!(Tpr, Pbf, FirstThenSecond),
    composite!(Tpr, Pfb, FirstThenSecond),
];

/// The 22 valid composites with their canonical execution order.
pub fn registry_valid_composites() -> &'static [CompositeEntry] {
    &REGISTRY
}

pub fn lookup_composite(first: AtomicTask, second: AtomicTask) -> Option<&'static CompositeEntry> {
    REGISTRY.iter().find(|e| e.first == first && e.second == second)
}

/// Atomic task or registered composite pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TaskId {
    Atomic(AtomicTask),
    Composite(AtomicTask, AtomicTask),
}

impl TaskId {
    /// Builds a composite id, rejecting pairs outside the registry.
    pub fn composite(first: AtomicTask, second: AtomicTask) -> Result<TaskId, TaskgenError> {
        lookup_composite(first, second)
            .map(|e| e.task())
            .ok_or(TaskgenError::UnregisteredComposite(first, second))
    }

    pub fn is_atomic(&self) -> bool {
        matches!(self, TaskId::Atomic(_))
    }

    pub fn components(&self) -> Vec<AtomicTask> {
        match *self {
            TaskId::Atomic(t) => vec![t],
            TaskId::Composite(a, b) => vec![a, b],
        }
    }

    pub fn contains(&self, t: AtomicTask) -> bool {
        self.components().contains(&t)
    }

    pub fn entry(&self) -> Option<&'static CompositeEntry> {
        match *self {
            TaskId::Atomic(_) => None,
            TaskId::Composite(a, b) => lookup_composite(a, b),
        }
    }

    /// All 9 atomics followed by the 22 composites, in registry order.
    pub fn all() -> Vec<TaskId> {
        AtomicTask::ALL
            .iter()
            .map(|&t| TaskId::Atomic(t))
            .chain(REGISTRY.iter().map(|e| e.task()))
            .collect()
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskId::Atomic(t) => write!(f, "{t}"),
            TaskId::Composite(a, b) => write!(f, "{a}+{b}"),
        }
    }
}

impl FromStr for TaskId {
    type Err = TaskgenError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let parse_one = |code: &str| {
            AtomicTask::from_code(code.trim()).ok_or_else(|| TaskgenError::UnknownTask(s.to_string()))
        };
        match s.split_once('+') {
            None => Ok(TaskId::Atomic(parse_one(s)?)),
            Some((a, b)) => TaskId::composite(parse_one(a)?, parse_one(b)?),
        }
    }
}

impl Serialize for TaskId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TaskId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
