//! Behavioral protocols: mode-switch evaluation (Switch-n) and robustness to
//! chit-chat turns spliced into task dialogues.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{report, EvalMode, EvalReport, ScoredDialogue};
use crate::pipeline::{Agent, GenerationTrace, SessionState};
use crate::schema::{
    classify_response_type, BeliefState, DbResult, Dialogue, DialogueTurn, Domain, ResponseType, Source, SystemAct,
    ActType,
};

/// `prefix_turns` turns of one dialogue type followed by a body dialogue of
/// the other type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchSetup {
    pub prefix_type: ResponseType,
    pub prefix: Vec<DialogueTurn>,
    pub body: Dialogue,
}

impl SwitchSetup {
    pub fn body_type(&self) -> ResponseType {
        match self.prefix_type {
            ResponseType::Chit => ResponseType::Task,
            ResponseType::Task => ResponseType::Chit,
        }
    }

    pub fn prefix_turns(&self) -> usize {
        self.prefix.len()
    }

    pub fn validate(&self) -> Result<()> {
        let body_is_task = self.body.goal.is_some();
        let prefix_is_task = self.prefix.iter().any(|t| !t.is_chit());
        let ok = match self.prefix_type {
            ResponseType::Chit => body_is_task && !prefix_is_task,
            ResponseType::Task => !body_is_task && self.prefix.iter().all(|t| !t.is_chit()),
        };
        if ok && !self.body.turns.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig("switch setup prefix and body must have different types".into()))
        }
    }
}

fn is_task(d: &Dialogue) -> bool {
    d.goal.is_some()
}

/// Builds `count` setups. Prefixes are the first `prefix_turns` turns of a
/// seeded choice from the prefix-type pool; bodies cycle through the body pool.
pub fn make_switch_setups(
    dialogues: &[Dialogue],
    prefix_type: ResponseType,
    prefix_turns: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<SwitchSetup>> {
    let (prefix_pool, body_pool): (Vec<&Dialogue>, Vec<&Dialogue>) = match prefix_type {
        ResponseType::Chit => (
            dialogues.iter().filter(|d| d.source == Source::Chit).collect(),
            dialogues.iter().filter(|d| is_task(d)).collect(),
        ),
        ResponseType::Task => (
            dialogues.iter().filter(|d| is_task(d)).collect(),
            dialogues.iter().filter(|d| d.source == Source::Chit).collect(),
        ),
    };
    let prefix_pool: Vec<&Dialogue> = prefix_pool.into_iter().filter(|d| d.turns.len() >= prefix_turns).collect();
    if prefix_pool.is_empty() || body_pool.is_empty() {
        return Err(Error::EmptyInput("switch setups need dialogues of both types"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|i| {
            let p = prefix_pool.choose(&mut rng).expect("nonempty pool");
            SwitchSetup {
                prefix_type,
                prefix: p.turns[..prefix_turns].to_vec(),
                body: body_pool[i % body_pool.len()].clone(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchReport {
    /// Switch-n percentage for each requested n.
    pub switch_n: BTreeMap<usize, f64>,
    /// Percentage of setups whose first matching turn is exactly turn k (1-based).
    pub exactly_at: BTreeMap<usize, f64>,
    pub setups: usize,
    /// Scores over the post-switch turns only.
    pub post_switch: EvalReport,
}

/// 1-based index of the first body turn whose response type is `want`.
pub fn first_switch_turn(traces: &[GenerationTrace], want: ResponseType) -> Option<usize> {
    traces
        .iter()
        .position(|t| classify_response_type(&t.parsed_act) == want)
        .map(|i| i + 1)
}

/// `100 × |{first ≤ n}| / |firsts|`.
pub fn switch_rate(firsts: &[Option<usize>], n: usize) -> f64 {
    if firsts.is_empty() {
        return 0.0;
    }
    let hit = firsts.iter().filter(|f| f.is_some_and(|k| k <= n)).count();
    100.0 * hit as f64 / firsts.len() as f64
}

/// Runs each setup through `agent` and measures how quickly responses take
/// the body's type.
pub fn switch_eval(setups: &[SwitchSetup], agent: &dyn Agent, n_values: &[usize]) -> Result<SwitchReport> {
    if setups.is_empty() {
        return Err(Error::EmptyInput("switch evaluation needs at least one setup"));
    }
    let mut firsts = Vec::with_capacity(setups.len());
    let mut scored = Vec::with_capacity(setups.len());
    for s in setups {
        let mut state = SessionState::new();
        for t in &s.prefix {
            state = agent.step(&state, &t.user)?.1;
        }
        let mut traces = Vec::with_capacity(s.body.turns.len());
        for t in &s.body.turns {
            let (trace, next) = agent.step(&state, &t.user)?;
            traces.push(trace);
            state = next;
        }
        firsts.push(first_switch_turn(&traces, s.body_type()));
        scored.push(ScoredDialogue {
            goal: s.body.goal.clone(),
            references: s.body.turns.iter().map(|t| Some(t.response.clone())).collect(),
            traces,
        });
    }
    let longest = setups.iter().map(|s| s.body.turns.len()).max().unwrap_or(0);
    let exactly_at = (1..=longest)
        .map(|k| {
            let hit = firsts.iter().filter(|f| **f == Some(k)).count();
            (k, 100.0 * hit as f64 / firsts.len() as f64)
        })
        .collect();
    Ok(SwitchReport {
        switch_n: n_values.iter().map(|&n| (n, switch_rate(&firsts, n))).collect(),
        exactly_at,
        setups: setups.len(),
        post_switch: report(&scored, EvalMode::Both)?,
    })
}

/// A rule-following agent that answers in `before` mode until the session
/// has `switch_after` turns of context, then in `after` mode. Used to check
/// the Switch-n arithmetic without a trained model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScriptedAgent {
    pub switch_after: usize,
    pub before: ResponseType,
    pub after: ResponseType,
}

impl Agent for ScriptedAgent {
    fn step(&self, state: &SessionState, user: &str) -> Result<(GenerationTrace, SessionState)> {
        let mode = if state.context.len() >= self.switch_after {
            self.after
        } else {
            self.before
        };
        let (belief, act, db, response) = match mode {
            ResponseType::Chit => (
                BeliefState::chit(Vec::<String>::new()),
                SystemAct::chit(),
                DbResult::NoResult,
                "i see .",
            ),
            ResponseType::Task => {
                let mut b = BeliefState::new();
                b.set(Domain::Hotel, "area", "north");
                (
                    b,
                    SystemAct::new(Domain::Hotel, ActType::Request, ["price"]),
                    DbResult::Three,
                    "what price range ?",
                )
            }
        };
        let trace = GenerationTrace {
            user: user.to_string(),
            raw_belief_text: belief.to_text(),
            parsed_belief: belief,
            db_domain: None,
            db_token: db,
            matches: Vec::new(),
            raw_act_text: act.to_text(),
            parsed_act: act,
            response_text: response.to_string(),
            repairs: Vec::new(),
        };
        let mut next = state.clone();
        let mut turn = trace.turn();
        turn.turn_index = next.context.len();
        next.context.push(turn);
        next.turn_index = next.context.len();
        Ok((trace, next))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseSetup {
    pub insert_turns: usize,
    pub seed: u64,
}

/// A corpus with chit-chat turns spliced in, and the positions of the
/// inserted turns per dialogue.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PerturbedCorpus {
    pub dialogues: Vec<Dialogue>,
    pub inserted: Vec<Vec<usize>>,
}

/// Splices `insert_turns` consecutive chit-chat turns, drawn from `pool`,
/// into every task dialogue at a seeded position strictly after the first
/// turn. Other dialogues pass through unchanged.
pub fn inject_noise(corpus: &[Dialogue], pool: &[Dialogue], setup: NoiseSetup) -> Result<PerturbedCorpus> {
    let noise: Vec<&DialogueTurn> = pool.iter().flat_map(|d| &d.turns).filter(|t| t.is_chit()).collect();
    if noise.is_empty() && setup.insert_turns > 0 {
        return Err(Error::EmptyInput("noise pool has no chit-chat turns"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(setup.seed);
    let mut dialogues = Vec::with_capacity(corpus.len());
    let mut inserted = Vec::with_capacity(corpus.len());
    for d in corpus {
        if setup.insert_turns == 0 || !is_task(d) || d.turns.is_empty() {
            dialogues.push(d.clone());
            inserted.push(Vec::new());
            continue;
        }
        let pos = if d.turns.len() > 1 {
            rng.gen_range(1..d.turns.len())
        } else {
            1
        };
        let mut turns = d.turns.clone();
        let spliced: Vec<DialogueTurn> = (0..setup.insert_turns)
            .map(|_| (*noise.choose(&mut rng).expect("nonempty pool")).clone())
            .collect();
        turns.splice(pos..pos, spliced);
        let mut out = Dialogue::new(Source::Mixed, d.goal.clone(), turns);
        out.reindex();
        dialogues.push(out);
        inserted.push((pos..pos + setup.insert_turns).collect());
    }
    Ok(PerturbedCorpus { dialogues, inserted })
}

/// Runs the agent over a perturbed corpus; inserted turns are fed to the
/// agent but have no reference response.
pub fn robust_eval(agent: &dyn Agent, perturbed: &PerturbedCorpus) -> Result<(EvalReport, Vec<ScoredDialogue>)> {
    let mut scored = Vec::new();
    for (d, ins) in perturbed.dialogues.iter().zip(&perturbed.inserted) {
        if !is_task(d) {
            continue;
        }
        let mut state = SessionState::new();
        let mut traces = Vec::with_capacity(d.turns.len());
        for t in &d.turns {
            let (trace, next) = agent.step(&state, &t.user)?;
            traces.push(trace);
            state = next;
        }
        scored.push(ScoredDialogue {
            goal: d.goal.clone(),
            references: d
                .turns
                .iter()
                .enumerate()
                .map(|(i, t)| (!ins.contains(&i)).then(|| t.response.clone()))
                .collect(),
            traces,
        });
    }
    if scored.is_empty() {
        return Err(Error::EmptyInput("no task dialogues to perturb"));
    }
    Ok((report(&scored, EvalMode::Tod)?, scored))
}
