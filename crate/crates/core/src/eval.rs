//! Corpus-level metrics: Inform, Success, BLEU, Combined, Distinct-n, AvgLen.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::db::{DomainSelection, Entity, EntityDatabase};
use crate::error::{Error, Result};
use crate::pipeline::{Agent, GenerationTrace, RepairCounts, SessionState};
use crate::schema::{placeholder, ActType, BucketTable, Dialogue, DomainGoal, Source, TaskGoal};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TodScores {
    pub inform: f64,
    pub success: f64,
    pub bleu: f64,
    pub combined: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChitScores {
    pub bleu: f64,
    pub dist1: f64,
    pub dist2: f64,
    pub avg_len: f64,
}

/// `(inform + success) × 0.5 + bleu`.
pub fn combined(inform: f64, success: f64, bleu: f64) -> f64 {
    (inform + success) * 0.5 + bleu
}

fn ngrams(tokens: &[&str], n: usize) -> HashMap<Vec<String>, usize> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w.iter().map(|s| s.to_string()).collect()).or_default() += 1;
        }
    }
    out
}

/// Corpus BLEU-4 ×100: geometric mean of clipped 1–4-gram precisions pooled
/// over all pairs, times the brevity penalty. A higher-order precision with
/// no matches is add-one smoothed to `1 / (total + 1)`.
pub fn bleu(candidates: &[String], references: &[String]) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::EmptyInput("bleu needs at least one candidate"));
    }
    if candidates.len() != references.len() {
        return Err(Error::InvalidConfig(format!(
            "{} candidates but {} references",
            candidates.len(),
            references.len()
        )));
    }
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut cand_len, mut ref_len) = (0usize, 0usize);
    for (c, r) in candidates.iter().zip(references) {
        let c: Vec<&str> = c.split_whitespace().collect();
        let r: Vec<&str> = r.split_whitespace().collect();
        cand_len += c.len();
        ref_len += r.len();
        for n in 1..=4 {
            let rc = ngrams(&r, n);
            for (g, count) in ngrams(&c, n) {
                matched[n - 1] += count.min(rc.get(&g).copied().unwrap_or(0));
                total[n - 1] += count;
            }
        }
    }
    if cand_len == 0 || matched[0] == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 0..4 {
        let p = if matched[n] == 0 {
            1.0 / (total[n] as f64 + 1.0)
        } else {
            matched[n] as f64 / total[n] as f64
        };
        log_sum += p.ln();
    }
    let bp = if cand_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    Ok(100.0 * bp * (log_sum / 4.0).exp())
}

/// `100 × |unique n-grams| / |n-grams|` pooled over all sentences.
pub fn distinct_n(sentences: &[String], n: usize) -> f64 {
    let mut unique: HashSet<Vec<&str>> = HashSet::new();
    let mut total = 0usize;
    for s in sentences {
        let toks: Vec<&str> = s.split_whitespace().collect();
        if toks.len() >= n && n > 0 {
            for w in toks.windows(n) {
                unique.insert(w.to_vec());
                total += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        100.0 * unique.len() as f64 / total as f64
    }
}

/// Mean whitespace-token count.
pub fn avg_len(sentences: &[String]) -> f64 {
    if sentences.is_empty() {
        return 0.0;
    }
    sentences.iter().map(|s| s.split_whitespace().count()).sum::<usize>() as f64 / sentences.len() as f64
}

/// One evaluated dialogue: its goal, the system's turns, and the gold
/// response for each turn (`None` excludes the turn from BLEU).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDialogue {
    pub goal: Option<TaskGoal>,
    pub traces: Vec<GenerationTrace>,
    pub references: Vec<Option<String>>,
}

fn satisfies(entity: &Entity, goal: &DomainGoal) -> bool {
    goal.constraints.iter().all(|(slot, value)| {
        entity
            .get(slot)
            .is_some_and(|v| v.eq_ignore_ascii_case(value.trim()))
    })
}

/// Entities the system offered for `goal`'s domain: the first match of every
/// turn whose response carries `[value_name]`, and the first match at the
/// last recommend/inform act.
fn offered<'t>(traces: &'t [GenerationTrace], goal: &DomainGoal) -> Vec<&'t Entity> {
    let name = placeholder("name");
    let in_domain = |t: &&GenerationTrace| t.db_domain == Some(goal.domain);
    let mut out: Vec<&Entity> = traces
        .iter()
        .filter(in_domain)
        .filter(|t| t.response_text.split_whitespace().any(|w| w == name))
        .filter_map(|t| t.matches.first())
        .collect();
    if let Some(t) = traces.iter().filter(in_domain).rev().find(|t| {
        t.parsed_act.domain == goal.domain && matches!(t.parsed_act.act_type, ActType::Recommend | ActType::Inform)
    }) {
        out.extend(t.matches.first());
    }
    out
}

/// Whether one dialogue informs and succeeds.
pub fn dialogue_inform_success(goal: &TaskGoal, traces: &[GenerationTrace]) -> (bool, bool) {
    let inform = goal
        .domains
        .iter()
        .all(|g| offered(traces, g).into_iter().any(|e| satisfies(e, g)));
    let success = inform
        && goal.domains.iter().flat_map(|g| &g.requests).all(|slot| {
            let p = placeholder(slot);
            traces.iter().any(|t| t.response_text.split_whitespace().any(|w| w == p))
        });
    (inform, success)
}

/// Inform and Success percentages over the dialogues.
pub fn inform_success(dialogues: &[ScoredDialogue]) -> Result<(f64, f64)> {
    if dialogues.is_empty() {
        return Err(Error::EmptyInput("inform/success needs at least one dialogue"));
    }
    let (mut inform, mut success) = (0usize, 0usize);
    for (i, d) in dialogues.iter().enumerate() {
        let goal = d.goal.as_ref().ok_or(Error::MissingGoal(i))?;
        let (inf, suc) = dialogue_inform_success(goal, &d.traces);
        inform += inf as usize;
        success += suc as usize;
    }
    let n = dialogues.len() as f64;
    Ok((100.0 * inform as f64 / n, 100.0 * success as f64 / n))
}

/// Candidate/reference response pairs of every turn that has a reference.
fn bleu_pairs(dialogues: &[ScoredDialogue]) -> (Vec<String>, Vec<String>) {
    let mut cands = Vec::new();
    let mut refs = Vec::new();
    for d in dialogues {
        for (t, r) in d.traces.iter().zip(&d.references) {
            if let Some(r) = r {
                cands.push(t.response_text.clone());
                refs.push(r.clone());
            }
        }
    }
    (cands, refs)
}

pub fn tod_scores(dialogues: &[ScoredDialogue]) -> Result<TodScores> {
    let (inform, success) = inform_success(dialogues)?;
    let (c, r) = bleu_pairs(dialogues);
    let bleu = if c.is_empty() { 0.0 } else { bleu(&c, &r)? };
    Ok(TodScores {
        inform,
        success,
        bleu,
        combined: combined(inform, success, bleu),
    })
}

pub fn chit_scores(dialogues: &[ScoredDialogue]) -> Result<ChitScores> {
    let responses: Vec<String> = dialogues
        .iter()
        .flat_map(|d| d.traces.iter().map(|t| t.response_text.clone()))
        .collect();
    if responses.is_empty() {
        return Err(Error::EmptyInput("chit scores need at least one response"));
    }
    let (c, r) = bleu_pairs(dialogues);
    Ok(ChitScores {
        bleu: if c.is_empty() { 0.0 } else { bleu(&c, &r)? },
        dist1: distinct_n(&responses, 1),
        dist2: distinct_n(&responses, 2),
        avg_len: avg_len(&responses),
    })
}

/// Traces a perfect system would produce for `dialogue`: gold segments, with
/// the database queried on each gold belief.
pub fn gold_traces(dialogue: &Dialogue, db: &EntityDatabase, buckets: &BucketTable) -> Vec<GenerationTrace> {
    dialogue
        .turns
        .iter()
        .map(|t| {
            let (domain, matches) = match db.query_with(&t.belief, buckets, DomainSelection::default()) {
                Ok(q) => (q.domain, q.matches),
                Err(_) => (None, Vec::new()),
            };
            GenerationTrace {
                user: t.user.clone(),
                raw_belief_text: t.belief.to_text(),
                parsed_belief: t.belief.clone(),
                db_domain: domain,
                db_token: t.db,
                matches,
                raw_act_text: t.act.to_text(),
                parsed_act: t.act.clone(),
                response_text: t.response.clone(),
                repairs: Vec::new(),
            }
        })
        .collect()
}

/// Feeds every gold user utterance of `dialogue` to `agent`, which builds on
/// its own earlier outputs.
pub fn run_dialogue(agent: &dyn Agent, dialogue: &Dialogue) -> Result<(Vec<GenerationTrace>, SessionState)> {
    let mut state = SessionState::new();
    let mut traces = Vec::with_capacity(dialogue.turns.len());
    for turn in &dialogue.turns {
        let (trace, next) = agent.step(&state, &turn.user)?;
        traces.push(trace);
        state = next;
    }
    Ok((traces, state))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Tod,
    Chit,
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tod: Option<TodScores>,
    pub chit: Option<ChitScores>,
    pub dialogues: usize,
    pub turns: usize,
    pub repairs: RepairCounts,
    pub repaired_turns: usize,
}

impl EvalReport {
    /// Human-readable table.
    pub fn table(&self) -> String {
        let mut out = String::new();
        if let Some(t) = &self.tod {
            out += &format!(
                "TOD   inform {:6.2}  success {:6.2}  bleu {:6.2}  combined {:7.2}\n",
                t.inform, t.success, t.bleu, t.combined
            );
        }
        if let Some(c) = &self.chit {
            out += &format!(
                "CHIT  bleu {:6.2}  dist-1 {:6.2}  dist-2 {:6.2}  avg-len {:5.2}\n",
                c.bleu, c.dist1, c.dist2, c.avg_len
            );
        }
        out += &format!(
            "{} dialogues, {} turns, {} repaired (belief {}, act {}, runaway {})\n",
            self.dialogues,
            self.turns,
            self.repaired_turns,
            self.repairs.belief,
            self.repairs.act,
            self.repairs.runaway_response
        );
        out
    }
}

/// Scores already-run dialogues. TOD metrics use dialogues with a goal;
/// chit metrics use the rest.
pub fn report(scored: &[ScoredDialogue], mode: EvalMode) -> Result<EvalReport> {
    let (tod, chit): (Vec<ScoredDialogue>, Vec<ScoredDialogue>) =
        scored.iter().cloned().partition(|d| d.goal.is_some());
    let want_tod = matches!(mode, EvalMode::Tod | EvalMode::Both);
    let want_chit = matches!(mode, EvalMode::Chit | EvalMode::Both);
    let mut repairs = RepairCounts::default();
    let mut repaired_turns = 0;
    let mut turns = 0;
    for d in scored {
        for t in &d.traces {
            turns += 1;
            repaired_turns += !t.repairs.is_empty() as usize;
            for &r in &t.repairs {
                repairs.record(r);
            }
        }
    }
    Ok(EvalReport {
        tod: if want_tod && !tod.is_empty() { Some(tod_scores(&tod)?) } else { None },
        chit: if want_chit && !chit.is_empty() { Some(chit_scores(&chit)?) } else { None },
        dialogues: scored.len(),
        turns,
        repairs,
        repaired_turns,
    })
}

/// Runs `agent` over `dialogues` and scores the result.
pub fn evaluate(agent: &dyn Agent, dialogues: &[Dialogue], mode: EvalMode) -> Result<(EvalReport, Vec<ScoredDialogue>)> {
    let selected: Vec<&Dialogue> = dialogues
        .iter()
        .filter(|d| match mode {
            EvalMode::Tod => d.goal.is_some(),
            EvalMode::Chit => d.goal.is_none() && d.source == Source::Chit,
            EvalMode::Both => true,
        })
        .collect();
    if selected.is_empty() {
        return Err(Error::EmptyInput("no dialogues of the requested mode"));
    }
    let mut scored = Vec::with_capacity(selected.len());
    for d in selected {
        let (traces, _) = run_dialogue(agent, d)?;
        scored.push(ScoredDialogue {
            goal: d.goal.clone(),
            references: d.turns.iter().map(|t| Some(t.response.clone())).collect(),
            traces,
        });
    }
    Ok((report(&scored, mode)?, scored))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn combined_formula() {
        assert!((combined(90.30, 80.50, 18.72) - 104.12).abs() < 1e-9);
        assert!((combined(88.70, 78.40, 16.60) - 100.15).abs() < 1e-9);
        assert_eq!(combined(0.0, 0.0, 0.0), 0.0);
    }

    #[test]
    fn bleu_edges() {
        let a = s(&["the cat sat on the mat", "hello"]);
        assert!((bleu(&a, &a).unwrap() - 100.0).abs() < 1e-9);
        assert_eq!(bleu(&s(&["x y z"]), &s(&["a b c"])).unwrap(), 0.0);
        assert!(matches!(bleu(&[], &[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn distinct_examples() {
        assert_eq!(distinct_n(&s(&["a a a a"]), 1), 25.0);
        assert_eq!(distinct_n(&s(&["a b c"]), 1), 100.0);
        assert_eq!(distinct_n(&s(&["a b", "a b"]), 2), 50.0);
        assert_eq!(distinct_n(&s(&["a"]), 2), 0.0);
    }
}
