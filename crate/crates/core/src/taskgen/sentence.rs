//! Sentence structures, their surface realization, and the inverse parser.
//!
//! Surface order:
//!
//! ```text
//! active:  [PP ,] AGENT VERB PATIENT [ADV] [PP] .
//! passive: [PP ,] PATIENT AUX PARTICIPLE [ADV] [by AGENT] [PP] .
//! ```
//!
//! Structures are stored by semantic role (agent, patient) so voice changes
//! never need to move data between fields.

use super::lexicon::{Lexicon, Number, Verb};
use super::TaskgenError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Tense {
    Past,
    Present,
    Future,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Voice {
    Active,
    Passive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PpPosition {
    Front,
    Back,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct NounPhrase {
    pub determiner: Option<&'static str>,
    pub adjective: Option<&'static str>,
    /// Surface form of the head, already inflected for `number`.
    pub head: &'static str,
    pub number: Number,
    pub proper: bool,
}

impl NounPhrase {
    pub fn proper(name: &'static str) -> NounPhrase {
        NounPhrase { determiner: None, adjective: None, head: name, number: Number::Singular, proper: true }
    }

    pub fn common(
        determiner: Option<&'static str>,
        adjective: Option<&'static str>,
        head: &'static str,
        number: Number,
    ) -> NounPhrase {
        NounPhrase { determiner, adjective, head, number, proper: false }
    }

    fn push_words(&self, out: &mut Vec<&'static str>) {
        out.extend(self.determiner);
        out.extend(self.adjective);
        out.push(self.head);
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PrepPhrase {
    pub phrase: &'static str,
    pub position: PpPosition,
}

/// Parse of one sentence of the grammar.
///
/// The grammatical subject is the agent in active voice and the patient in
/// passive voice. A passive sentence may have no agent (after PP removal).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SentenceStructure {
    pub agent: Option<NounPhrase>,
    pub patient: NounPhrase,
    pub verb: Verb,
    pub tense: Tense,
    pub voice: Voice,
    pub adverb: Option<&'static str>,
    pub pp: Option<PrepPhrase>,
}

impl SentenceStructure {
    pub fn is_well_formed(&self) -> bool {
        self.voice == Voice::Passive || self.agent.is_some()
    }

    pub fn subject(&self) -> &NounPhrase {
        match self.voice {
            Voice::Active => self.agent.as_ref().expect("active sentence without agent"),
            Voice::Passive => &self.patient,
        }
    }

    pub fn has_agent_phrase(&self) -> bool {
        self.voice == Voice::Passive && self.agent.is_some()
    }

    /// Surface words, lowercase except proper nouns, ending in ".".
    pub fn words(&self) -> Vec<&'static str> {
        debug_assert!(self.is_well_formed());
        let mut w = Vec::with_capacity(24);
        if let Some(pp) = self.pp.as_ref().filter(|p| p.position == PpPosition::Front) {
            w.extend(pp.phrase.split(' '));
            w.push(",");
        }
        self.subject().push_words(&mut w);
        let plural = self.subject().number == Number::Plural;
        match (self.voice, self.tense) {
            (Voice::Active, Tense::Past) => w.push(self.verb.past),
            (Voice::Active, Tense::Present) => w.push(if plural { self.verb.base } else { self.verb.third }),
            (Voice::Active, Tense::Future) => w.extend(["will", self.verb.base]),
            (Voice::Passive, Tense::Past) => w.extend([if plural { "were" } else { "was" }, self.verb.participle]),
            (Voice::Passive, Tense::Present) => w.extend([if plural { "are" } else { "is" }, self.verb.participle]),
            (Voice::Passive, Tense::Future) => w.extend(["will", "be", self.verb.participle]),
        }
        if self.voice == Voice::Active {
            self.patient.push_words(&mut w);
        }
        if let Some(adv) = self.adverb {
            w.extend(adv.split(' '));
        }
        if self.voice == Voice::Passive {
            if let Some(agent) = &self.agent {
                w.push("by");
                agent.push_words(&mut w);
            }
        }
        if let Some(pp) = self.pp.as_ref().filter(|p| p.position == PpPosition::Back) {
            w.extend(pp.phrase.split(' '));
        }
        w.push(".");
        w
    }

    /// Space-joined surface text. A pure function of the structure.
    pub fn realize(&self) -> String {
        self.words().join(" ")
    }
}

/// Renders grammar text as an ordinary sentence: capitalized first letter,
/// final period attached.
pub fn prettify(text: &str) -> String {
    let mut words: Vec<&str> = text.split_whitespace().collect();
    let mut out = String::new();
    let has_final_stop = words.last() == Some(&".");
    if has_final_stop {
        words.pop();
    }
    for (i, w) in words.iter().enumerate() {
        if *w != "," && i > 0 {
            out.push(' ');
        }
        out.push_str(w);
    }
    if has_final_stop && !out.ends_with('.') {
        out.push('.');
    }
    let mut chars = out.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => out,
    }
}

struct Cursor<'a> {
    toks: &'a [&'a str],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<&'a str> {
        self.toks.get(self.pos).copied()
    }

    fn peek_at(&self, offset: usize) -> Option<&'a str> {
        self.toks.get(self.pos + offset).copied()
    }

    fn bump(&mut self) -> Option<&'a str> {
        let t = self.peek();
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, what: &str) -> TaskgenError {
        TaskgenError::Parse {
            position: self.pos,
            message: format!("expected {what}, found {:?}", self.peek().unwrap_or("<end>")),
        }
    }

    /// Consumes a multi-word phrase from `options` if one matches here.
    fn phrase(&mut self, options: &[&'static str]) -> Option<&'static str> {
        // Longest match first, so multi-word entries win over prefixes.
        let mut best: Option<(&'static str, usize)> = None;
        for &opt in options {
            let n = opt.split(' ').count();
            let matches = opt.split(' ').enumerate().all(|(i, w)| self.peek_at(i) == Some(w));
            if matches && best.map_or(true, |(_, m)| n > m) {
                best = Some((opt, n));
            }
        }
        best.map(|(opt, n)| {
            self.pos += n;
            opt
        })
    }
}

impl Lexicon {
    fn noun_phrase(&self, c: &mut Cursor<'_>) -> Result<NounPhrase, TaskgenError> {
        let first = c.peek().ok_or_else(|| c.error("noun phrase"))?;
        if let Some(&p) = self.proper_nouns.iter().find(|&&p| p == first) {
            c.bump();
            return Ok(NounPhrase::proper(p));
        }
        let det = self.determiners.iter().find(|d| Some(d.form) == c.peek()).cloned();
        if det.is_some() {
            c.bump();
        }
        let adjective = self.adjectives.iter().copied().find(|&a| Some(a) == c.peek());
        if adjective.is_some() {
            c.bump();
        }
        let word = c.peek().ok_or_else(|| c.error("noun"))?;
        let (head, number) = self
            .nouns
            .iter()
            .find_map(|n| {
                if n.singular == word {
                    Some((n.singular, Number::Singular))
                } else if n.plural == word {
                    Some((n.plural, Number::Plural))
                } else {
                    None
                }
            })
            .ok_or_else(|| c.error("noun"))?;
        match &det {
            Some(d) if !d.agreement.admits(number) => {
                return Err(c.error("noun agreeing with determiner"));
            }
            None if number == Number::Singular => return Err(c.error("determiner before singular noun")),
            _ => {}
        }
        c.bump();
        Ok(NounPhrase::common(det.map(|d| d.form), adjective, head, number))
    }

    fn verb_by<F: Fn(&Verb) -> &'static str>(&self, word: Option<&str>, form: F) -> Option<Verb> {
        let word = word?;
        self.verbs.iter().find(|v| form(v) == word).cloned()
    }

    /// Parses grammar text back into its structure.
    pub fn parse(&self, text: &str) -> Result<SentenceStructure, TaskgenError> {
        let toks: Vec<&str> = text.split_whitespace().collect();
        let mut c = Cursor { toks: &toks, pos: 0 };

        let mut pp = None;
        let start = c.pos;
        if let Some(phrase) = c.phrase(&self.prep_phrases) {
            if c.peek() == Some(",") {
                c.bump();
                pp = Some(PrepPhrase { phrase, position: PpPosition::Front });
            } else {
                c.pos = start;
                return Err(c.error("',' after fronted prepositional phrase"));
            }
        }

        let subject = self.noun_phrase(&mut c)?;
        let plural = subject.number == Number::Plural;

        let (voice, tense, verb) = match c.peek() {
            Some("will") if c.peek_at(1) == Some("be") => {
                c.pos += 2;
                let v = self.verb_by(c.peek(), |v| v.participle).ok_or_else(|| c.error("participle"))?;
                (Voice::Passive, Tense::Future, v)
            }
            Some("will") => {
                c.bump();
                let v = self.verb_by(c.peek(), |v| v.base).ok_or_else(|| c.error("base verb"))?;
                (Voice::Active, Tense::Future, v)
            }
            Some(aux @ ("was" | "were" | "is" | "are")) => {
                let expected = match (aux, plural) {
                    ("was" | "is", false) | ("were" | "are", true) => true,
                    _ => false,
                };
                if !expected {
                    return Err(c.error("auxiliary agreeing with subject"));
                }
                let tense = if matches!(aux, "was" | "were") { Tense::Past } else { Tense::Present };
                c.bump();
                let v = self.verb_by(c.peek(), |v| v.participle).ok_or_else(|| c.error("participle"))?;
                (Voice::Passive, tense, v)
            }
            w => {
                if let Some(v) = self.verb_by(w, |v| v.past) {
                    (Voice::Active, Tense::Past, v)
                } else if let Some(v) = self.verb_by(w, if plural { |v: &Verb| v.base } else { |v: &Verb| v.third }) {
                    (Voice::Active, Tense::Present, v)
                } else {
                    return Err(c.error("verb"));
                }
            }
        };
        c.bump();

        let (agent, patient) = match voice {
            Voice::Active => (Some(subject), self.noun_phrase(&mut c)?),
            Voice::Passive => (None, subject),
        };
        let adverb = c.phrase(&self.adverbs);
        let agent = if voice == Voice::Passive && c.peek() == Some("by") {
            c.bump();
            Some(self.noun_phrase(&mut c)?)
        } else {
            agent
        };
        if pp.is_none() {
            if let Some(phrase) = c.phrase(&self.prep_phrases) {
                pp = Some(PrepPhrase { phrase, position: PpPosition::Back });
            }
        }
        if c.bump() != Some(".") {
            c.pos = c.pos.saturating_sub(1);
            return Err(c.error("'.'"));
        }
        if c.peek().is_some() {
            return Err(c.error("end of sentence"));
        }
        Ok(SentenceStructure { agent, patient, verb, tense, voice, adverb, pp })
    }
}
