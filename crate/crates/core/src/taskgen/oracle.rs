//! Rule-based ground truth for every atomic and composite task.

use std::fmt;

use super::sentence::{PpPosition, SentenceStructure, Tense, Voice};
use super::task::{lookup_composite, AtomicTask, CompositeOrder, TaskId};
use super::TaskgenError;

/// The transform's precondition does not hold for the input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NotApplicable {
    pub task: AtomicTask,
    pub reason: &'static str,
}

impl fmt::Display for NotApplicable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} not applicable: {}", self.task, self.reason)
    }
}

pub type Applied = Result<SentenceStructure, NotApplicable>;

fn retense(task: AtomicTask, s: &SentenceStructure, tense: Tense) -> Applied {
    if s.tense == tense {
        return Err(NotApplicable { task, reason: "already in the requested tense" });
    }
    Ok(SentenceStructure { tense, ..s.clone() })
}

/// Applies one atomic transform.
pub fn apply_atomic(task: AtomicTask, s: &SentenceStructure) -> Applied {
    debug_assert!(s.is_well_formed(), "malformed structure: {s:?}");
    let na = |reason| Err(NotApplicable { task, reason });
    match task {
        AtomicTask::Tfu => retense(task, s, Tense::Future),
        AtomicTask::Tpr => retense(task, s, Tense::Present),
        AtomicTask::Tpa => retense(task, s, Tense::Past),
        AtomicTask::Atp => match s.voice {
            Voice::Active => Ok(SentenceStructure { voice: Voice::Passive, ..s.clone() }),
            Voice::Passive => na("sentence is already passive"),
        },
        AtomicTask::Pta => match (s.voice, &s.agent) {
            (Voice::Passive, Some(_)) => Ok(SentenceStructure { voice: Voice::Active, ..s.clone() }),
            (Voice::Passive, None) => na("passive sentence has no agent"),
            (Voice::Active, _) => na("sentence is already active"),
        },
        AtomicTask::Pfb | AtomicTask::Pbf => {
            let (from, to) = if task == AtomicTask::Pfb {
                (PpPosition::Front, PpPosition::Back)
            } else {
                (PpPosition::Back, PpPosition::Front)
            };
            match &s.pp {
                Some(pp) if pp.position == from => {
                    let mut out = s.clone();
                    out.pp.as_mut().expect("checked").position = to;
                    Ok(out)
                }
                Some(_) => na("prepositional phrase is not in the source position"),
                None => na("no prepositional phrase"),
            }
        }
        AtomicTask::Arr => {
            let has_adj = |np: &Option<_>| matches!(np, Some(super::sentence::NounPhrase { adjective: Some(_), .. }));
            if s.adverb.is_none() && s.patient.adjective.is_none() && !has_adj(&s.agent) {
                return na("no adjective or adverb");
            }
            let mut out = s.clone();
            out.adverb = None;
            out.patient.adjective = None;
            if let Some(agent) = out.agent.as_mut() {
                agent.adjective = None;
            }
            Ok(out)
        }
        AtomicTask::Ppr => {
            if s.pp.is_none() && !s.has_agent_phrase() {
                return na("no prepositional phrase");
            }
            let mut out = s.clone();
            out.pp = None;
            if out.voice == Voice::Passive {
                // The agent lives inside the by-phrase.
                out.agent = None;
            }
            Ok(out)
        }
    }
}

/// Applies a registered composite in the given execution order.
pub fn apply_composite(
    first: AtomicTask,
    second: AtomicTask,
    order: CompositeOrder,
    s: &SentenceStructure,
) -> Result<Applied, TaskgenError> {
    lookup_composite(first, second).ok_or(TaskgenError::UnregisteredComposite(first, second))?;
    let [a, b] = order.sequence(first, second);
    Ok(apply_atomic(a, s).and_then(|mid| apply_atomic(b, &mid)))
}

/// Gold transform of any task: composites use the registry's canonical order.
pub fn apply_task(task: TaskId, s: &SentenceStructure) -> Applied {
    match task {
        TaskId::Atomic(t) => apply_atomic(t, s),
        TaskId::Composite(a, b) => {
            let entry = lookup_composite(a, b).expect("TaskId composites are always registered");
            apply_composite(a, b, entry.canonical, s).expect("registered")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taskgen::lexicon::Lexicon;

    fn parse(text: &str) -> SentenceStructure {
        Lexicon::full().parse(text).unwrap()
    }

    const CARS: &str = "1,214 cars were sold last year by luxury automakers in the U.S. .";

    #[test]
    fn passive_to_active_extracts_agent() {
        let out = apply_atomic(AtomicTask::Pta, &parse(CARS)).unwrap();
        assert_eq!(out.realize(), "luxury automakers sold 1,214 cars last year in the U.S. .");
    }

    #[test]
    fn ppr_without_pp_is_not_applicable() {
        let s = parse("the dog chased the cat .");
        assert_eq!(apply_atomic(AtomicTask::Ppr, &s).unwrap_err().task, AtomicTask::Ppr);
    }

    #[test]
    fn ppr_removes_agent_phrase_and_pp() {
        let out = apply_atomic(AtomicTask::Ppr, &parse(CARS)).unwrap();
        assert_eq!(out.realize(), "1,214 cars were sold last year .");
    }

    #[test]
    fn order_sensitivity_of_ppr_and_pta() {
        let s = parse(CARS);
        let good = apply_composite(AtomicTask::Ppr, AtomicTask::Pta, CompositeOrder::SecondThenFirst, &s).unwrap();
        assert_eq!(good.unwrap().realize(), "luxury automakers sold 1,214 cars last year .");
        let bad = apply_composite(AtomicTask::Ppr, AtomicTask::Pta, CompositeOrder::FirstThenSecond, &s).unwrap();
        assert_eq!(bad.unwrap_err().task, AtomicTask::Pta);
    }

    #[test]
    fn unregistered_composite_is_an_error() {
        let s = parse(CARS);
        assert!(matches!(
            apply_composite(AtomicTask::Tfu, AtomicTask::Tpa, CompositeOrder::FirstThenSecond, &s),
            Err(TaskgenError::UnregisteredComposite(..))
        ));
    }

    #[test]
    fn pp_moves_and_arr() {
        let s = parse("in the park , the big dog chased a cat quickly .");
        assert_eq!(
            apply_atomic(AtomicTask::Pfb, &s).unwrap().realize(),
            "the big dog chased a cat quickly in the park ."
        );
        assert!(apply_atomic(AtomicTask::Pbf, &s).is_err());
        assert_eq!(
            apply_atomic(AtomicTask::Arr, &s).unwrap().realize(),
            "in the park , the dog chased a cat ."
        );
    }

    #[test]
    fn atp_moves_agent_into_by_phrase() {
        let s = parse("the dogs will chase Mary .");
        assert_eq!(apply_atomic(AtomicTask::Atp, &s).unwrap().realize(), "Mary will be chased by the dogs .");
    }
}
