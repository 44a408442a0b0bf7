//! The per-turn inference loop: generate the belief, query the database,
//! generate the act, generate the response.

use serde::{Deserialize, Serialize};

use crate::corpus::normalize_utterance;
use crate::db::{DomainSelection, Entity, EntityDatabase};
use crate::error::Result;
use crate::model::{Decoder, Model};
use crate::schema::{
    parse_act, parse_belief, placeholder_slot, serialize_turn, BeliefState, BucketTable, DbResult, DialogueTurn,
    Domain, SegmentKind, SegmentMarkers, SystemAct,
};
use crate::tokenizer::{TokenId, Vocabulary};

/// A fallback applied to a malformed generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Repair {
    /// Belief unparseable or unterminated; the previous belief was reused.
    Belief,
    /// Act unparseable or unterminated; `[chit] [chit_act]` was used.
    Act,
    /// No `</r>` within the response budget; the response was cut.
    RunawayResponse,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairCounts {
    pub belief: usize,
    pub act: usize,
    pub runaway_response: usize,
}

impl RepairCounts {
    pub fn record(&mut self, r: Repair) {
        match r {
            Repair::Belief => self.belief += 1,
            Repair::Act => self.act += 1,
            Repair::RunawayResponse => self.runaway_response += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.belief + self.act + self.runaway_response
    }

    pub fn add(&mut self, other: &RepairCounts) {
        self.belief += other.belief;
        self.act += other.act;
        self.runaway_response += other.runaway_response;
    }
}

/// Staged outputs of one turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationTrace {
    pub user: String,
    pub raw_belief_text: String,
    pub parsed_belief: BeliefState,
    pub db_domain: Option<Domain>,
    pub db_token: DbResult,
    pub matches: Vec<Entity>,
    pub raw_act_text: String,
    pub parsed_act: SystemAct,
    pub response_text: String,
    pub repairs: Vec<Repair>,
}

impl GenerationTrace {
    pub fn turn(&self) -> DialogueTurn {
        DialogueTurn {
            user: self.user.clone(),
            belief: self.parsed_belief.clone(),
            db: self.db_token,
            act: self.parsed_act.clone(),
            response: self.response_text.clone(),
            turn_index: 0,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trace serialization is infallible")
    }
}

/// One conversation's completed turns.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionState {
    pub context: Vec<DialogueTurn>,
    pub turn_index: usize,
    pub repairs: RepairCounts,
    /// Turns whose context had to be cut from the head to fit the window.
    pub truncations: usize,
}

impl SessionState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Serialized context, each turn in the five-segment form.
    pub fn context_text(&self, markers: &SegmentMarkers) -> String {
        self.context
            .iter()
            .map(|t| serialize_turn(t, markers))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub max_belief_tokens: usize,
    pub max_act_tokens: usize,
    pub max_response_tokens: usize,
    pub buckets: BucketTable,
    pub domain_selection: DomainSelection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            max_belief_tokens: 40,
            max_act_tokens: 16,
            max_response_tokens: 60,
            buckets: BucketTable::default(),
            domain_selection: DomainSelection::default(),
        }
    }
}

impl PipelineConfig {
    /// Room left free in the context window for one turn's generations.
    fn reserve(&self) -> usize {
        self.max_belief_tokens + self.max_act_tokens + self.max_response_tokens + 16
    }
}

/// Anything that produces a system turn for a user utterance.
pub trait Agent {
    fn step(&self, state: &SessionState, user_utterance: &str) -> Result<(GenerationTrace, SessionState)>;
}

pub struct Pipeline<'a> {
    pub model: &'a Model,
    pub vocab: &'a Vocabulary,
    pub db: &'a EntityDatabase,
    pub config: PipelineConfig,
    markers: SegmentMarkers,
}

impl<'a> Pipeline<'a> {
    pub fn new(model: &'a Model, vocab: &'a Vocabulary, db: &'a EntityDatabase, config: PipelineConfig) -> Self {
        Pipeline {
            model,
            vocab,
            db,
            config,
            markers: SegmentMarkers::default(),
        }
    }

    fn marker(&self, kind: SegmentKind, close: bool) -> TokenId {
        let (open, end) = self.markers.pair(kind);
        self.vocab.special(if close { end } else { open })
    }

    fn text(&self, ids: &[TokenId]) -> String {
        self.vocab.decode(ids)
    }

    /// Generated ids without their stop token.
    fn body<'g>(&self, ids: &'g [TokenId], stop: TokenId) -> &'g [TokenId] {
        match ids.last() {
            Some(&last) if last == stop => &ids[..ids.len() - 1],
            _ => ids,
        }
    }

    /// Runs one turn. Malformed generations are repaired, never fatal.
    pub fn step(&self, state: &SessionState, user_utterance: &str) -> Result<(GenerationTrace, SessionState)> {
        let user = normalize_utterance(user_utterance);
        let mut dec = Decoder::new(self.model, self.config.reserve());
        let context = state.context_text(&self.markers);
        dec.push(&self.vocab.encode(&context));
        dec.push(&[self.marker(SegmentKind::User, false)]);
        dec.push(&self.vocab.encode(&user));
        dec.push(&[self.marker(SegmentKind::User, true), self.marker(SegmentKind::Belief, false)]);
        let mut repairs = Vec::new();

        // Belief.
        let b_close = self.marker(SegmentKind::Belief, true);
        let start = dec.ids().len();
        let gen = dec.generate_until(&[b_close], self.config.max_belief_tokens)?;
        let raw_belief_text = self.text(self.body(&gen.ids, b_close));
        let parsed = parse_belief(&raw_belief_text).ok().filter(|p| p.valid && !gen.truncated);
        let belief = match parsed {
            Some(p) => p.value,
            None => {
                repairs.push(Repair::Belief);
                state
                    .context
                    .last()
                    .map(|t| t.belief.clone())
                    .unwrap_or_else(|| BeliefState::chit(Vec::<String>::new()))
            }
        };
        dec.truncate(start);

        // Database: the token always comes from the query, never the model.
        let (db_domain, db_token, matches) =
            match self
                .db
                .query_with(&belief, &self.config.buckets, self.config.domain_selection)
            {
                Ok(q) => (q.domain, q.token, q.matches),
                Err(_) => (None, DbResult::NoResult, Vec::new()),
            };
        dec.push(&self.vocab.encode(&belief.to_text()));
        dec.push(&[
            b_close,
            self.marker(SegmentKind::Db, false),
            self.vocab.special(db_token.token()),
            self.marker(SegmentKind::Db, true),
            self.marker(SegmentKind::Act, false),
        ]);

        // Act.
        let a_close = self.marker(SegmentKind::Act, true);
        let start = dec.ids().len();
        let gen = dec.generate_until(&[a_close], self.config.max_act_tokens)?;
        let raw_act_text = self.text(self.body(&gen.ids, a_close));
        let act = match parse_act(&raw_act_text).ok().filter(|p| p.valid && !gen.truncated) {
            Some(p) => p.value,
            None => {
                repairs.push(Repair::Act);
                SystemAct::chit()
            }
        };
        dec.truncate(start);
        dec.push(&self.vocab.encode(&act.to_text()));
        dec.push(&[a_close, self.marker(SegmentKind::Response, false)]);

        // Response.
        let r_close = self.marker(SegmentKind::Response, true);
        let gen = dec.generate_until(&[r_close], self.config.max_response_tokens)?;
        if gen.truncated {
            repairs.push(Repair::RunawayResponse);
        }
        let response_text = self.text(self.body(&gen.ids, r_close));

        let trace = GenerationTrace {
            user,
            raw_belief_text,
            parsed_belief: belief,
            db_domain,
            db_token,
            matches,
            raw_act_text,
            parsed_act: act,
            response_text,
            repairs,
        };
        let mut next = state.clone();
        let mut turn = trace.turn();
        turn.turn_index = next.context.len();
        next.context.push(turn);
        next.turn_index = next.context.len();
        if dec.dropped() > 0 {
            next.truncations += 1;
        }
        for &r in &trace.repairs {
            next.repairs.record(r);
        }
        Ok((trace, next))
    }
}

impl Agent for Pipeline<'_> {
    fn step(&self, state: &SessionState, user_utterance: &str) -> Result<(GenerationTrace, SessionState)> {
        Pipeline::step(self, state, user_utterance)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicalized {
    pub text: String,
    /// Some placeholder had no value to substitute.
    pub unresolved: bool,
}

/// Replaces each `[value_<slot>]` with the first match's value for `slot`.
pub fn lexicalize(response: &str, matches: &[Entity]) -> Lexicalized {
    let mut unresolved = false;
    let words: Vec<String> = response
        .split_whitespace()
        .map(|w| match placeholder_slot(w) {
            Some(slot) => match matches.first().and_then(|m| m.get(slot)) {
                Some(v) => v.clone(),
                None => {
                    unresolved = true;
                    w.to_string()
                }
            },
            None => w.to_string(),
        })
        .collect();
    Lexicalized {
        text: words.join(" "),
        unresolved,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entity(pairs: &[(&str, &str)]) -> Entity {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn lexicalize_substitutes_first_match() {
        let m = vec![entity(&[("name", "alpha lodge")]), entity(&[("name", "beta inn")])];
        let out = lexicalize("[value_name] is a nice hotel", &m);
        assert_eq!(out.text, "alpha lodge is a nice hotel");
        assert!(!out.unresolved);
    }

    #[test]
    fn lexicalize_without_matches_flags() {
        let out = lexicalize("[value_name] is a nice hotel", &[]);
        assert_eq!(out.text, "[value_name] is a nice hotel");
        assert!(out.unresolved);
        let plain = lexicalize("hello there", &[]);
        assert_eq!(plain.text, "hello there");
        assert!(!plain.unresolved);
    }

    #[test]
    fn repair_counts() {
        let mut c = RepairCounts::default();
        c.record(Repair::Belief);
        c.record(Repair::RunawayResponse);
        c.record(Repair::RunawayResponse);
        assert_eq!(c.total(), 3);
        assert_eq!(c.runaway_response, 2);
    }
}
