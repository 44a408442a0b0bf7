//! Word-level vocabulary over lowercased whitespace tokens.
//!
//! Reserved tokens (pad, unk, sos, segment markers, domain/act/db tokens and
//! `[value_<slot>]` placeholders) always occupy the lowest ids, below
//! [`Vocabulary::reserved_boundary`]. Content words follow, ordered by
//! descending corpus frequency with lexicographic tie-breaking.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::schema::{
    all_slot_names, placeholder, serialize_turn, ActType, DbResult, Dialogue, Domain,
    SegmentMarkers, SOS,
};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";

pub type TokenId = u32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    id_of: HashMap<String, TokenId>,
    word_of: Vec<String>,
    reserved: usize,
}

/// The reserved tokens in id order. Pad is id 0.
pub fn special_tokens(markers: &SegmentMarkers) -> Vec<String> {
    let mut out: Vec<String> = vec![PAD.into(), UNK.into(), SOS.into()];
    out.extend(markers.all().iter().map(|s| s.to_string()));
    out.extend(Domain::ALL.iter().map(|d| d.token().to_string()));
    out.extend(ActType::ALL.iter().map(|a| a.token().to_string()));
    out.extend(DbResult::ALL.iter().map(|d| d.token().to_string()));
    out.extend(all_slot_names().iter().map(|s| placeholder(s)));
    out
}

impl Vocabulary {
    /// Builds the vocabulary from every serialized turn in `corpus`.
    pub fn build(corpus: &[Dialogue], min_freq: usize) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let markers = SegmentMarkers::default();
        let specials = special_tokens(&markers);
        let mut counts: HashMap<String, usize> = HashMap::new();
        for dialogue in corpus {
            for turn in &dialogue.turns {
                for word in serialize_turn(turn, &markers).split_whitespace() {
                    *counts.entry(word.to_lowercase()).or_default() += 1;
                }
            }
        }
        let mut words: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(w, c)| *c >= min_freq.max(1) && !specials.contains(w))
            .collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(Self::from_parts(specials, words.into_iter().map(|(w, _)| w)))
    }

    fn from_parts(specials: Vec<String>, words: impl Iterator<Item = String>) -> Self {
        let reserved = specials.len();
        let word_of: Vec<String> = specials.into_iter().chain(words).collect();
        let id_of = word_of
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as TokenId))
            .collect();
        Vocabulary {
            id_of,
            word_of,
            reserved,
        }
    }

    pub fn len(&self) -> usize {
        self.word_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.word_of.is_empty()
    }

    /// Ids strictly below this value are reserved tokens.
    pub fn reserved_boundary(&self) -> usize {
        self.reserved
    }

    pub fn pad_id(&self) -> TokenId {
        0
    }

    pub fn unk_id(&self) -> TokenId {
        1
    }

    pub fn id(&self, word: &str) -> Option<TokenId> {
        self.id_of.get(word).copied()
    }

    /// Id of a token that must exist (reserved tokens).
    pub fn special(&self, word: &str) -> TokenId {
        self.id(word)
            .unwrap_or_else(|| panic!("reserved token `{word}` missing from vocabulary"))
    }

    pub fn word(&self, id: TokenId) -> &str {
        self.word_of
            .get(id as usize)
            .map(String::as_str)
            .unwrap_or(UNK)
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        text.split_whitespace()
            .map(|w| {
                self.id_of
                    .get(w)
                    .or_else(|| self.id_of.get(&w.to_lowercase()))
                    .copied()
                    .unwrap_or(self.unk_id())
            })
            .collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&id| self.word(id))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// One token per line; line number is the id.
    pub fn to_text(&self) -> String {
        let mut s = self.word_of.join("\n");
        s.push('\n');
        s
    }

    /// Loads a vocabulary file, checking the reserved prefix matches this
    /// build's special-token table.
    pub fn from_text(text: &str) -> Result<Self> {
        let words: Vec<String> = text.lines().map(str::to_string).collect();
        let specials = special_tokens(&SegmentMarkers::default());
        if words.len() < specials.len() || words[..specials.len()] != specials[..] {
            return Err(Error::CheckpointFormat(
                "vocabulary file does not start with the reserved token table".into(),
            ));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = words.iter().find(|w| !seen.insert(w.as_str())) {
            return Err(Error::CheckpointFormat(format!("duplicate vocabulary entry `{dup}`")));
        }
        let rest = words[specials.len()..].to_vec();
        Ok(Self::from_parts(specials, rest.into_iter()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// SHA-256 of the persisted text form, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{BeliefState, DialogueTurn, Source, SystemAct};

    fn corpus() -> Vec<Dialogue> {
        let mut turns = Vec::new();
        for i in 0..5 {
            turns.push(DialogueTurn {
                user: if i == 0 { "hotel rare".into() } else { "hotel please".into() },
                belief: BeliefState::chit(["hotel"]),
                db: DbResult::NoResult,
                act: SystemAct::chit(),
                response: "ok".into(),
                turn_index: i,
            });
        }
        vec![Dialogue::new(Source::Chit, None, turns)]
    }

    #[test]
    fn frequency_threshold() {
        let v = Vocabulary::build(&corpus(), 2).unwrap();
        assert!(v.id("hotel").is_some());
        assert!(v.id("rare").is_none());
        assert_eq!(v.encode("rare"), vec![v.unk_id()]);
        assert_eq!(v.id(PAD), Some(0));
        // hotel appears 10 times, please 4, ok 5
        let h = v.id("hotel").unwrap() as usize;
        assert_eq!(h, v.reserved_boundary());
        assert!(v.id("ok").unwrap() < v.id("please").unwrap());
    }

    #[test]
    fn specials_round_trip() {
        let v = Vocabulary::build(&corpus(), 1).unwrap();
        let ids = v.encode("[db_2]");
        assert_eq!(ids.len(), 1);
        assert!((ids[0] as usize) < v.reserved_boundary());
        assert_eq!(v.decode(&ids), "[db_2]");
        assert!(v.encode("").is_empty());
        for tok in special_tokens(&SegmentMarkers::default()) {
            assert_eq!(v.decode(&v.encode(&tok)), tok);
        }
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(matches!(Vocabulary::build(&[], 1), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn deterministic_and_persistable() {
        let a = Vocabulary::build(&corpus(), 1).unwrap();
        let b = Vocabulary::build(&corpus(), 1).unwrap();
        assert_eq!(a.hash(), b.hash());
        let back = Vocabulary::from_text(&a.to_text()).unwrap();
        assert_eq!(back, a);
        assert!(Vocabulary::from_text("hello\n").is_err());
    }
}
