//! Closed word lists for the sentence grammar.
//!
//! Inflection comes entirely from these tables; nothing is derived by rule.

use std::collections::BTreeSet;

use super::TaskgenError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Number {
    Singular,
    Plural,
}

/// Which noun numbers a determiner may precede.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Agreement {
    Any,
    Only(Number),
}

impl Agreement {
    pub fn admits(self, n: Number) -> bool {
        match self {
            Agreement::Any => true,
            Agreement::Only(m) => m == n,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Determiner {
    pub form: &'static str,
    pub agreement: Agreement,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Noun {
    pub singular: &'static str,
    pub plural: &'static str,
}

impl Noun {
    pub fn form(&self, n: Number) -> &'static str {
        match n {
            Number::Singular => self.singular,
            Number::Plural => self.plural,
        }
    }
}

/// Transitive verb with its four surface forms.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Verb {
    pub base: &'static str,
    pub third: &'static str,
    pub past: &'static str,
    pub participle: &'static str,
}

const fn v(base: &'static str, third: &'static str, past: &'static str, participle: &'static str) -> Verb {
    Verb { base, third, past, participle }
}

const fn n(singular: &'static str, plural: &'static str) -> Noun {
    Noun { singular, plural }
}

static DETERMINERS: &[Determiner] = &[
    Determiner { form: "the", agreement: Agreement::Any },
    Determiner { form: "a", agreement: Agreement::Only(Number::Singular) },
    Determiner { form: "two", agreement: Agreement::Only(Number::Plural) },
    Determiner { form: "some", agreement: Agreement::Only(Number::Plural) },
    Determiner { form: "1,214", agreement: Agreement::Only(Number::Plural) },
];

static PROPER_NOUNS: &[&str] = &["John", "Mary", "Alice", "Peter"];

static NOUNS: &[Noun] = &[
    n("dog", "dogs"),
    n("cat", "cats"),
    n("teacher", "teachers"),
    n("child", "children"),
    n("farmer", "farmers"),
    n("bird", "birds"),
    n("car", "cars"),
    n("automaker", "automakers"),
    n("student", "students"),
    n("man", "men"),
    n("woman", "women"),
    n("letter", "letters"),
    n("doctor", "doctors"),
    n("horse", "horses"),
    n("company", "companies"),
    n("book", "books"),
    n("apple", "apples"),
    n("mouse", "mice"),
    n("boy", "boys"),
    n("girl", "girls"),
    n("lawyer", "lawyers"),
    n("painter", "painters"),
    n("fox", "foxes"),
    n("wolf", "wolves"),
];

static VERBS: &[Verb] = &[
    v("chase", "chases", "chased", "chased"),
    v("see", "sees", "saw", "seen"),
    v("sell", "sells", "sold", "sold"),
    v("eat", "eats", "ate", "eaten"),
    v("take", "takes", "took", "taken"),
    v("write", "writes", "wrote", "written"),
    v("buy", "buys", "bought", "bought"),
    v("find", "finds", "found", "found"),
    v("catch", "catches", "caught", "caught"),
    v("build", "builds", "built", "built"),
    v("follow", "follows", "followed", "followed"),
    v("watch", "watches", "watched", "watched"),
    v("help", "helps", "helped", "helped"),
    v("carry", "carries", "carried", "carried"),
    v("draw", "draws", "drew", "drawn"),
    v("break", "breaks", "broke", "broken"),
    v("steal", "steals", "stole", "stolen"),
    v("hold", "holds", "held", "held"),
    v("visit", "visits", "visited", "visited"),
    v("push", "pushes", "pushed", "pushed"),
];

static ADJECTIVES: &[&str] = &[
    "big", "small", "old", "young", "happy", "quiet", "red", "luxury", "clever", "tall", "lazy", "brave",
];

static ADVERBS: &[&str] = &[
    "quickly",
    "slowly",
    "last year",
    "carefully",
    "often",
    "quietly",
    "every day",
    "again",
];

static PREP_PHRASES: &[&str] = &[
    "in the park",
    "on the hill",
    "in the U.S.",
    "near the river",
    "at the station",
    "under the bridge",
    "across the street",
    "behind the house",
];

/// Fixed function words the realizer emits.
pub const FUNCTION_WORDS: &[&str] = &["will", "be", "is", "are", "was", "were", "by", ",", "."];

/// Sizes of the open word classes drawn from the built-in tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct LexiconSizes {
    pub nouns: usize,
    pub verbs: usize,
    pub adjectives: usize,
    pub adverbs: usize,
    pub prep_phrases: usize,
}

impl Default for LexiconSizes {
    fn default() -> Self {
        LexiconSizes { nouns: 12, verbs: 10, adjectives: 8, adverbs: 6, prep_phrases: 6 }
    }
}

impl LexiconSizes {
    pub fn maximum() -> Self {
        LexiconSizes {
            nouns: NOUNS.len(),
            verbs: VERBS.len(),
            adjectives: ADJECTIVES.len(),
            adverbs: ADVERBS.len(),
            prep_phrases: PREP_PHRASES.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Lexicon {
    pub determiners: Vec<Determiner>,
    pub proper_nouns: Vec<&'static str>,
    pub nouns: Vec<Noun>,
    pub verbs: Vec<Verb>,
    pub adjectives: Vec<&'static str>,
    pub adverbs: Vec<&'static str>,
    pub prep_phrases: Vec<&'static str>,
}

impl Lexicon {
    pub fn new(sizes: LexiconSizes) -> Result<Lexicon, TaskgenError> {
        let max = LexiconSizes::maximum();
        let check = |what: &'static str, want: usize, have: usize| {
            if want == 0 || want > have {
                Err(TaskgenError::InvalidSpec(format!("{what} must be in 1..={have}, got {want}")))
            } else {
                Ok(())
            }
        };
        check("nouns", sizes.nouns, max.nouns)?;
        check("verbs", sizes.verbs, max.verbs)?;
        check("adjectives", sizes.adjectives, max.adjectives)?;
        check("adverbs", sizes.adverbs, max.adverbs)?;
        check("prep_phrases", sizes.prep_phrases, max.prep_phrases)?;
        Ok(Lexicon {
            determiners: DETERMINERS.to_vec(),
            proper_nouns: PROPER_NOUNS.to_vec(),
            nouns: NOUNS[..sizes.nouns].to_vec(),
            verbs: VERBS[..sizes.verbs].to_vec(),
            adjectives: ADJECTIVES[..sizes.adjectives].to_vec(),
            adverbs: ADVERBS[..sizes.adverbs].to_vec(),
            prep_phrases: PREP_PHRASES[..sizes.prep_phrases].to_vec(),
        })
    }

    /// Every table at full size.
    pub fn full() -> Lexicon {
        Lexicon::new(LexiconSizes::maximum()).expect("maximum sizes are valid")
    }

    /// Every surface token the grammar can emit, sorted.
    pub fn surface_tokens(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let mut add = |s: &str| {
            for w in s.split_whitespace() {
                out.insert(w.to_string());
            }
        };
        self.determiners.iter().for_each(|d| add(d.form));
        self.proper_nouns.iter().for_each(|p| add(p));
        for noun in &self.nouns {
            add(noun.singular);
            add(noun.plural);
        }
        for verb in &self.verbs {
            add(verb.base);
            add(verb.third);
            add(verb.past);
            add(verb.participle);
        }
        self.adjectives.iter().for_each(|a| add(a));
        self.adverbs.iter().for_each(|a| add(a));
        self.prep_phrases.iter().for_each(|p| add(p));
        FUNCTION_WORDS.iter().for_each(|w| add(w));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn word_classes_are_disjoint() {
        let lex = Lexicon::full();
        let mut seen: HashSet<&str> = HashSet::new();
        let mut claim = |w: &'static str| assert!(seen.insert(w), "duplicate surface word {w}");
        lex.determiners.iter().for_each(|d| claim(d.form));
        lex.proper_nouns.iter().for_each(|p| claim(p));
        for noun in &lex.nouns {
            claim(noun.singular);
            claim(noun.plural);
        }
        lex.adjectives.iter().for_each(|a| claim(a));
        for adv in &lex.adverbs {
            claim(adv.split_whitespace().next().unwrap());
        }
        for pp in &lex.prep_phrases {
            assert!(!pp.starts_with("by "));
        }
        for w in FUNCTION_WORDS {
            claim(w);
        }
        // Verb forms only need to be distinct from other classes, not from each other.
        for verb in &lex.verbs {
            for f in [verb.base, verb.third, verb.past, verb.participle] {
                assert!(!lex.adjectives.contains(&f));
                assert!(lex.nouns.iter().all(|n| n.singular != f && n.plural != f));
                assert!(!FUNCTION_WORDS.contains(&f));
            }
            assert_ne!(verb.base, verb.past);
            assert_ne!(verb.third, verb.past);
        }
    }

    #[test]
    fn sizes_are_validated() {
        let mut sizes = LexiconSizes::default();
        sizes.verbs = 0;
        assert!(Lexicon::new(sizes).is_err());
        sizes.verbs = 1000;
        assert!(Lexicon::new(sizes).is_err());
        assert!(Lexicon::new(LexiconSizes::default()).is_ok());
    }
}
