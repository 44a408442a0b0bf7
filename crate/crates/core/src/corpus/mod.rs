//! Building the mixed training corpus.
//!
//! Chit-chat threads are filtered, paired into (user, response) turns and
//! annotated with noun-slot belief states; task-oriented dialogues come from
//! the template generator in [`tod`]. The two sources are mixed at dialogue
//! level with a seeded shuffle.

pub mod chit_synth;
pub mod lexicon;
pub mod tod;

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::db::EntityDatabase;
use crate::error::{Error, Result};
use crate::schema::{BeliefState, DbResult, Dialogue, DialogueTurn, Source, SystemAct};

pub use tod::generate_tod_corpus;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub chit_count: usize,
    pub tod_count: usize,
    pub seed: u64,
    /// Off reproduces the "no chit-chat belief slots" ablation.
    pub chit_belief_enabled: bool,
    pub max_utterance_words: usize,
    pub min_utterance_words: usize,
    pub min_dialogue_utterances: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            chit_count: 100,
            tod_count: 100,
            seed: 0,
            chit_belief_enabled: true,
            max_utterance_words: 200,
            min_utterance_words: 2,
            min_dialogue_utterances: 4,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chit_count == 0 || self.tod_count == 0 {
            return Err(Error::InvalidConfig("corpus counts must be positive".into()));
        }
        if self.min_utterance_words >= self.max_utterance_words {
            return Err(Error::InvalidConfig(
                "min_utterance_words must be below max_utterance_words".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawChitDialogue {
    pub utterances: Vec<String>,
}

/// Why a chit-chat thread was dropped. Rules are checked in this order and
/// the first match wins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Url,
    Length,
    Removed,
    TooFewUtterances,
}

impl RejectReason {
    pub fn name(self) -> &'static str {
        match self {
            RejectReason::Url => "url",
            RejectReason::Length => "length",
            RejectReason::Removed => "removed",
            RejectReason::TooFewUtterances => "too_few_utterances",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn has_url(text: &str) -> bool {
    let lower = text.to_lowercase();
    ["http://", "https://", "www."].iter().any(|p| lower.contains(p))
}

pub fn filter_chit(d: &RawChitDialogue, cfg: &CorpusConfig) -> std::result::Result<(), RejectReason> {
    if d.utterances.iter().any(|u| has_url(u)) {
        return Err(RejectReason::Url);
    }
    if d.utterances.iter().any(|u| {
        let n = u.split_whitespace().count();
        n > cfg.max_utterance_words || n < cfg.min_utterance_words
    }) {
        return Err(RejectReason::Length);
    }
    if d
        .utterances
        .iter()
        .any(|u| u.contains("[removed]") || u.contains("[deleted]"))
    {
        return Err(RejectReason::Removed);
    }
    if d.utterances.len() < cfg.min_dialogue_utterances {
        return Err(RejectReason::TooFewUtterances);
    }
    Ok(())
}

/// Pluggable noun extractor for chit-chat belief slots.
pub trait NounExtractor {
    fn nouns(&self, tokens: &[&str]) -> Vec<String>;
}

/// Treats every token outside the bundled closed-class list as a noun.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexiconExtractor;

impl NounExtractor for LexiconExtractor {
    fn nouns(&self, tokens: &[&str]) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for tok in tokens {
            let w = tok.to_lowercase();
            if lexicon::is_content_word(&w) && !out.contains(&w) {
                out.push(w);
            }
        }
        out
    }
}

pub fn extract_chit_belief(utterance: &str, enabled: bool) -> BeliefState {
    extract_chit_belief_with(&LexiconExtractor, utterance, enabled)
}

pub fn extract_chit_belief_with(
    extractor: &dyn NounExtractor,
    utterance: &str,
    enabled: bool,
) -> BeliefState {
    if !enabled {
        return BeliefState::chit(Vec::<String>::new());
    }
    let tokens: Vec<&str> = utterance.split_whitespace().collect();
    BeliefState::chit(extractor.nouns(&tokens))
}

/// Lowercases and splits sentence punctuation off words.
pub fn normalize_utterance(text: &str) -> String {
    let mut out: Vec<String> = Vec::new();
    for raw in text.split_whitespace() {
        let lower = raw.to_lowercase();
        let trimmed_end = lower.trim_end_matches(['.', ',', '?', '!', ';', ':']);
        let trail = &lower[trimmed_end.len()..];
        if !trimmed_end.is_empty() {
            out.push(trimmed_end.to_string());
        }
        out.extend(trail.chars().map(|c| c.to_string()));
    }
    out.join(" ")
}

/// Pairs consecutive utterances into turns; an odd trailing utterance is dropped.
pub fn chit_dialogue(raw: &RawChitDialogue, chit_belief: bool) -> Dialogue {
    let turns = raw
        .utterances
        .chunks_exact(2)
        .map(|pair| {
            let user = normalize_utterance(&pair[0]);
            DialogueTurn {
                belief: extract_chit_belief(&user, chit_belief),
                user,
                db: DbResult::NoResult,
                act: SystemAct::chit(),
                response: normalize_utterance(&pair[1]),
                turn_index: 0,
            }
        })
        .collect();
    Dialogue::new(Source::Chit, None, turns)
}

/// Parses raw threads: one utterance per line, blank lines between threads.
pub fn parse_raw_chit(text: &str) -> Vec<RawChitDialogue> {
    let mut out = Vec::new();
    let mut current = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                out.push(RawChitDialogue {
                    utterances: std::mem::take(&mut current),
                });
            }
        } else {
            current.push(line.trim().to_string());
        }
    }
    if !current.is_empty() {
        out.push(RawChitDialogue { utterances: current });
    }
    out
}

pub fn format_raw_chit(dialogues: &[RawChitDialogue]) -> String {
    dialogues
        .iter()
        .map(|d| d.utterances.join("\n") + "\n")
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn load_raw_chit(path: &Path) -> Result<Vec<RawChitDialogue>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_raw_chit(&text))
}

/// Seeded uniform shuffle of the concatenated dialogue lists.
pub fn mix_corpora(chit: Vec<Dialogue>, tod: Vec<Dialogue>, seed: u64) -> Vec<Dialogue> {
    let mut all: Vec<Dialogue> = chit.into_iter().chain(tod).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    all.shuffle(&mut rng);
    all
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterStats {
    pub kept: usize,
    pub url: usize,
    pub length: usize,
    pub removed: usize,
    pub too_few_utterances: usize,
}

impl FilterStats {
    fn record(&mut self, verdict: std::result::Result<(), RejectReason>) {
        match verdict {
            Ok(()) => self.kept += 1,
            Err(RejectReason::Url) => self.url += 1,
            Err(RejectReason::Length) => self.length += 1,
            Err(RejectReason::Removed) => self.removed += 1,
            Err(RejectReason::TooFewUtterances) => self.too_few_utterances += 1,
        }
    }
}

/// Filters and annotates every raw thread, returning the clean chit-chat
/// dialogues in input order.
pub fn clean_chit(raw: &[RawChitDialogue], cfg: &CorpusConfig) -> (Vec<Dialogue>, FilterStats) {
    let mut stats = FilterStats::default();
    let mut out = Vec::new();
    for d in raw {
        let verdict = filter_chit(d, cfg);
        stats.record(verdict);
        if verdict.is_ok() {
            out.push(chit_dialogue(d, cfg.chit_belief_enabled));
        }
    }
    (out, stats)
}

#[derive(Debug, Clone)]
pub struct BuiltCorpus {
    pub dialogues: Vec<Dialogue>,
    pub filter: FilterStats,
}

/// The full build: clean chit-chat (first `chit_count` survivors), generate
/// `tod_count` task dialogues, mix.
pub fn build_corpus(
    raw_chit: &[RawChitDialogue],
    db: &EntityDatabase,
    cfg: &CorpusConfig,
) -> Result<BuiltCorpus> {
    cfg.validate()?;
    let (mut chit, filter) = clean_chit(raw_chit, cfg);
    if chit.len() < cfg.chit_count {
        return Err(Error::InvalidConfig(format!(
            "only {} chit-chat dialogues survive filtering, {} requested",
            chit.len(),
            cfg.chit_count
        )));
    }
    chit.truncate(cfg.chit_count);
    let tod = generate_tod_corpus(db, cfg.tod_count, cfg.seed)?;
    Ok(BuiltCorpus {
        dialogues: mix_corpora(chit, tod, cfg.seed),
        filter,
    })
}

pub fn write_corpus(path: &Path, dialogues: &[Dialogue]) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for d in dialogues {
        writeln!(file, "{}", d.to_json_line()).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn read_corpus(path: &Path) -> Result<Vec<Dialogue>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            Dialogue::from_json_line(line).map_err(|message| Error::CorpusFormat {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            })
        })
        .collect()
}
