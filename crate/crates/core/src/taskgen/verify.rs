//! Oracle property suite run against a generated corpus.

use std::collections::BTreeMap;

use super::corpus::Corpus;
use super::lexicon::Lexicon;
use super::oracle::{apply_atomic, apply_composite, apply_task};
use super::sentence::SentenceStructure;
use super::task::{registry_valid_composites, AtomicTask, CompositeOrder, TaskId};

/// Outcome of [`verify_corpus`]. Empty `failures` means every check passed.
#[derive(Clone, Debug, Default)]
pub struct VerifyReport {
    pub examples_checked: usize,
    pub structures_checked: usize,
    /// Composite name -> (sentences where both orders apply, of which agree).
    pub order_agreement: BTreeMap<String, (usize, usize)>,
    /// A source where PPR-then-PTA fails but PTA-then-PPR succeeds.
    pub order_witness: Option<String>,
    pub failures: Vec<String>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.order_witness.is_some()
    }
}

/// Checks the structural oracle laws on one sentence, appending failures.
pub fn check_laws(s: &SentenceStructure, failures: &mut Vec<String>) {
    let text = s.realize();
    let mut fail = |law: &str| failures.push(format!("{law}: {text}"));

    for t in [AtomicTask::Arr, AtomicTask::Ppr] {
        if let Ok(once) = apply_atomic(t, s) {
            if apply_atomic(t, &once).is_ok() {
                fail(&format!("{t} idempotence"));
            }
        }
    }
    if let Ok(p) = apply_atomic(AtomicTask::Atp, s) {
        match apply_atomic(AtomicTask::Pta, &p) {
            Ok(back) if back.realize() == text => {}
            _ => fail("ATP/PTA involution"),
        }
    }
    if let Ok(a) = apply_atomic(AtomicTask::Pta, s) {
        match apply_atomic(AtomicTask::Atp, &a) {
            Ok(back) if back.realize() == text => {}
            _ => fail("PTA/ATP involution"),
        }
    }
    if let Ok(b) = apply_atomic(AtomicTask::Pfb, s) {
        if apply_atomic(AtomicTask::Pbf, &b).as_ref() != Ok(s) {
            fail("PFB/PBF involution");
        }
    }
    if let Ok(f) = apply_atomic(AtomicTask::Pbf, s) {
        if apply_atomic(AtomicTask::Pfb, &f).as_ref() != Ok(s) {
            fail("PBF/PFB involution");
        }
    }
    let tenses = [AtomicTask::Tfu, AtomicTask::Tpr, AtomicTask::Tpa];
    for a in tenses {
        for b in tenses {
            if let Ok(both) = apply_atomic(a, s).and_then(|m| apply_atomic(b, &m)) {
                let last = SentenceStructure { tense: both.tense, ..s.clone() };
                if both != last || apply_atomic(b, s).map_or(false, |direct| direct != both) {
                    fail(&format!("{a}/{b} tense closure"));
                }
            }
        }
    }
}

/// Round-trips every example through the parser and oracle and runs the
/// oracle laws on every distinct source structure.
pub fn verify_corpus(corpus: &Corpus, lex: &Lexicon) -> VerifyReport {
    let mut report = VerifyReport::default();
    let mut structures = BTreeMap::new();
    for (task, examples) in corpus {
        for e in examples {
            report.examples_checked += 1;
            if e.task != *task {
                report.failures.push(format!("{task}: record labelled {}", e.task));
                continue;
            }
            if e.source.trim().is_empty() || e.target.trim().is_empty() {
                report.failures.push(format!("{task}: empty source or target"));
                continue;
            }
            let s = match lex.parse(&e.source) {
                Ok(s) => s,
                Err(err) => {
                    report.failures.push(format!("{task}: unparsable source {:?}: {err}", e.source));
                    continue;
                }
            };
            if s.realize() != e.source {
                report.failures.push(format!("{task}: source does not re-realize: {}", e.source));
            }
            match apply_task(e.task, &s) {
                Ok(out) if out.realize() == e.target => {}
                Ok(out) => report.failures.push(format!(
                    "{task}: oracle gives {:?}, record has {:?}",
                    out.realize(),
                    e.target
                )),
                Err(na) => report.failures.push(format!("{task}: {na} on {:?}", e.source)),
            }
            structures.entry(e.source.clone()).or_insert(s);
        }
    }

    for s in structures.values() {
        check_laws(s, &mut report.failures);
        for entry in registry_valid_composites() {
            let fwd = apply_composite(entry.first, entry.second, CompositeOrder::FirstThenSecond, s)
                .expect("registered");
            let rev = apply_composite(entry.first, entry.second, CompositeOrder::SecondThenFirst, s)
                .expect("registered");
            if let (Ok(a), Ok(b)) = (&fwd, &rev) {
                let slot = report.order_agreement.entry(entry.task().to_string()).or_default();
                slot.0 += 1;
                slot.1 += usize::from(a == b);
            }
            if entry.task() == TaskId::Composite(AtomicTask::Ppr, AtomicTask::Pta)
                && fwd.is_err()
                && rev.is_ok()
                && report.order_witness.is_none()
            {
                report.order_witness = Some(s.realize());
            }
        }
    }
    report.structures_checked = structures.len();
    report
}
