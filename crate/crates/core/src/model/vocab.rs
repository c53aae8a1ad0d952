use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::taskgen::{AtomicTask, Lexicon};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;

const SPECIALS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Control words used by prompt templates. One token per task code plus
/// the connectives.
pub fn prompt_tokens() -> Vec<String> {
    AtomicTask::ALL
        .iter()
        .map(|t| t.code().to_string())
        .chain(["+", "then", "after", ":"].map(String::from))
        .collect()
}

/// Closed word-level vocabulary. Ids are dense from 0; the four specials
/// occupy 0..4.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Vocab { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// Specials, then prompt tokens, then every surface word of the lexicon.
    pub fn build(lexicon: &Lexicon) -> Vocab {
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend(prompt_tokens());
        for w in lexicon.surface_tokens() {
            if !tokens.contains(&w) {
                tokens.push(w);
            }
        }
        Vocab::from(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens.get(id as usize).map_or("<unk>", String::as_str)
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        text.split_whitespace().map(|w| self.id(w)).collect()
    }

    pub fn encode_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        tokens.iter().map(|w| self.id(w.as_ref())).collect()
    }

    /// Joins tokens with single spaces, dropping PAD/BOS and stopping at EOS.
    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .take_while(|&&i| i != EOS)
            .filter(|&&i| i != PAD && i != BOS)
            .map(|&i| self.token(i))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_are_dense_and_round_trip() {
        let v = Vocab::build(&Lexicon::full());
        assert_eq!(v.token(PAD), "<pad>");
        assert_eq!(v.token(EOS), "<eos>");
        for id in 0..v.len() as u32 {
            assert_eq!(v.id(v.token(id)), id);
        }
        let text = "PPR + PTA : the cat was chased by the dog .";
        let ids = v.encode(text);
        assert!(!ids.contains(&UNK));
        assert_eq!(v.decode(&ids), text);
        assert_eq!(v.encode("zebra"), vec![UNK]);
    }

    #[test]
    fn serde_preserves_ids() {
        let v = Vocab::build(&Lexicon::full());
        let s = serde_json::to_string(&v).unwrap();
        let back: Vocab = serde_json::from_str(&s).unwrap();
        assert_eq!(back, v);
    }
}
