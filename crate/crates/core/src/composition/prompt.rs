use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::taskgen::TaskId;

/// How two atomic prompts are joined into a composite prompt.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptTemplate {
    /// `{p1} + {p2}:`
    #[default]
    #[serde(rename = "plus")]
    PlusConcat,
    /// `{p1} then {p2}:`
    Then,
    /// `{p2} after {p1}`
    After,
}

impl PromptTemplate {
    pub const ALL: [PromptTemplate; 3] = [PromptTemplate::PlusConcat, PromptTemplate::Then, PromptTemplate::After];

    pub fn name(self) -> &'static str {
        match self {
            PromptTemplate::PlusConcat => "plus",
            PromptTemplate::Then => "then",
            PromptTemplate::After => "after",
        }
    }
}

impl fmt::Display for PromptTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PromptTemplate {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PromptTemplate::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| format!("unknown template {s:?} (expected plus, then or after)"))
    }
}

/// Prompt tokens `Z` for a task. Atomic tasks render as `{code} :`.
pub fn render_prompt(template: PromptTemplate, task: TaskId) -> Vec<String> {
    let words: Vec<&str> = match task {
        TaskId::Atomic(t) => vec![t.code(), ":"],
        TaskId::Composite(a, b) => match template {
            PromptTemplate::PlusConcat => vec![a.code(), "+", b.code(), ":"],
            PromptTemplate::Then => vec![a.code(), "then", b.code(), ":"],
            PromptTemplate::After => vec![b.code(), "after", a.code()],
        },
    };
    words.into_iter().map(String::from).collect()
}
