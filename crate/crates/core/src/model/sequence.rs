//! Serialized training sequences with per-token loss weights and masks.

use crate::schema::{turn_tokens, Dialogue, SegmentKind, SegmentMarkers};
use crate::tokenizer::{TokenId, Vocabulary};

use super::config::TrainConfig;

/// Token ids with their loss weights and loss mask, all the same length.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub ids: Vec<TokenId>,
    pub weights: Vec<f64>,
    pub loss_mask: Vec<bool>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Scored positions as `(index, weight)`. Index 0 has no prefix to
    /// condition on and is never scored.
    pub fn scored(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        (1..self.ids.len())
            .filter(|&i| self.loss_mask[i])
            .map(|i| (i, self.weights[i]))
    }
}

/// Ids, weights and masks for turns `0..=t`, untruncated. The mask marks
/// turn `t`'s belief, db, act and response segments unless
/// `supervise_context` is set, in which case every token is marked.
fn serialize_upto(dialogue: &Dialogue, t: usize, vocab: &Vocabulary, cfg: &TrainConfig) -> TokenSequence {
    let markers = SegmentMarkers::default();
    let mut seq = TokenSequence {
        ids: Vec::new(),
        weights: Vec::new(),
        loss_mask: Vec::new(),
    };
    let (act_open, act_close) = markers.pair(SegmentKind::Act);
    for (i, turn) in dialogue.turns[..=t].iter().enumerate() {
        let weighted = cfg.weighted_act_types.contains(&turn.act.act_type);
        for (kind, tok) in turn_tokens(turn, &markers) {
            let is_act_content = kind == SegmentKind::Act && tok != act_open && tok != act_close;
            let supervised = cfg.supervise_context || (i == t && kind != SegmentKind::User);
            seq.ids.push(vocab.encode(&tok).first().copied().unwrap_or(vocab.unk_id()));
            seq.weights.push(if weighted && is_act_content {
                cfg.recommend_weight
            } else {
                1.0
            });
            seq.loss_mask.push(supervised);
        }
    }
    seq
}

/// The training example for `dialogue` up to turn `t` (inclusive),
/// truncated from the head to at most `max_len` tokens.
///
/// # Panics
///
/// If `t` is not a turn index of `dialogue`.
pub fn build_training_sequence(
    dialogue: &Dialogue,
    t: usize,
    vocab: &Vocabulary,
    cfg: &TrainConfig,
    max_len: usize,
) -> TokenSequence {
    assert!(t < dialogue.turns.len(), "turn {t} out of range");
    let mut seq = serialize_upto(dialogue, t, vocab, cfg);
    if seq.len() > max_len {
        let cut = seq.len() - max_len;
        seq.ids.drain(..cut);
        seq.weights.drain(..cut);
        seq.loss_mask.drain(..cut);
    }
    seq
}

/// One forward pass covering several turn examples of the same dialogue.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedSequence {
    pub ids: Vec<TokenId>,
    /// Per example: scored `(index, weight)` positions.
    pub examples: Vec<Vec<(usize, f64)>>,
}

/// Groups a dialogue's per-turn examples into forward passes.
///
/// Each turn's example is a prefix of the whole-dialogue sequence, so with a
/// causal model their losses can all be read off one pass over the full
/// dialogue. That only holds when nothing is truncated; dialogues longer than
/// `max_len` fall back to one pass per turn.
pub fn dialogue_passes(
    dialogue: &Dialogue,
    vocab: &Vocabulary,
    cfg: &TrainConfig,
    max_len: usize,
) -> Vec<SharedSequence> {
    let turns = dialogue.turns.len();
    if turns == 0 {
        return Vec::new();
    }
    let full = serialize_upto(dialogue, turns - 1, vocab, cfg);
    if full.len() <= max_len && !cfg.supervise_context {
        let examples = (0..turns)
            .map(|t| serialize_upto(dialogue, t, vocab, cfg).scored().collect())
            .collect();
        return vec![SharedSequence {
            ids: full.ids,
            examples,
        }];
    }
    (0..turns)
        .map(|t| {
            let seq = build_training_sequence(dialogue, t, vocab, cfg, max_len);
            SharedSequence {
                examples: vec![seq.scored().collect()],
                ids: seq.ids,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{ActType, BeliefState, DbResult, DialogueTurn, Domain, Source, SystemAct};

    fn turn(user: &str, act: SystemAct, response: &str) -> DialogueTurn {
        let mut belief = BeliefState::new();
        belief.set(Domain::Hotel, "price", "cheap");
        DialogueTurn {
            user: user.into(),
            belief,
            db: DbResult::Two,
            act,
            response: response.into(),
            turn_index: 0,
        }
    }

    fn fixture() -> (Dialogue, Vocabulary) {
        let d = Dialogue::new(
            Source::Tod,
            None,
            vec![
                turn(
                    "i need a cheap hotel .",
                    SystemAct::new(Domain::Hotel, ActType::Request, ["area"]),
                    "which area ?",
                ),
                turn(
                    "in the north .",
                    SystemAct::new(Domain::Hotel, ActType::Recommend, ["name"]),
                    "try [value_name] .",
                ),
            ],
        );
        let v = Vocabulary::build(std::slice::from_ref(&d), 1).unwrap();
        (d, v)
    }

    #[test]
    fn recommend_act_content_is_weighted() {
        let (d, v) = fixture();
        let seq = build_training_sequence(&d, 1, &v, &TrainConfig::default(), 1024);
        let heavy: Vec<&str> = seq
            .ids
            .iter()
            .zip(&seq.weights)
            .filter(|(_, &w)| w == 2.0)
            .map(|(&id, _)| v.word(id))
            .collect();
        assert_eq!(heavy, ["[hotel]", "[recommend]", "name"]);
    }

    #[test]
    fn unit_weight_everywhere_at_w_one() {
        let (d, v) = fixture();
        let cfg = TrainConfig {
            recommend_weight: 1.0,
            ..TrainConfig::default()
        };
        let seq = build_training_sequence(&d, 1, &v, &cfg, 1024);
        assert!(seq.weights.iter().all(|&w| w == 1.0));
    }

    #[test]
    fn mask_covers_final_turn_system_segments() {
        let (d, v) = fixture();
        let seq = build_training_sequence(&d, 1, &v, &TrainConfig::default(), 1024);
        let first = build_training_sequence(&d, 0, &v, &TrainConfig::default(), 1024);
        let masked: Vec<&str> = seq
            .ids
            .iter()
            .zip(&seq.loss_mask)
            .filter(|(_, &m)| m)
            .map(|(&id, _)| v.word(id))
            .collect();
        assert_eq!(masked.first(), Some(&"<b>"));
        assert_eq!(masked.last(), Some(&"</r>"));
        assert!(!masked.contains(&"north"));
        assert!(seq.loss_mask[..first.len()].iter().all(|&m| !m));
        assert_eq!(&seq.ids[..first.len()], &first.ids[..]);
    }

    #[test]
    fn head_truncation_keeps_the_tail() {
        let (d, v) = fixture();
        let full = build_training_sequence(&d, 1, &v, &TrainConfig::default(), 1024);
        let cut = build_training_sequence(&d, 1, &v, &TrainConfig::default(), full.len() - 6);
        assert_eq!(cut.len(), full.len() - 6);
        assert_eq!(cut.ids, full.ids[6..]);
        assert_eq!(cut.loss_mask, full.loss_mask[6..]);
    }

    #[test]
    fn shared_pass_matches_per_turn_examples() {
        let (d, v) = fixture();
        let cfg = TrainConfig::default();
        let passes = dialogue_passes(&d, &v, &cfg, 1024);
        assert_eq!(passes.len(), 1);
        for t in 0..2 {
            let seq = build_training_sequence(&d, t, &v, &cfg, 1024);
            assert_eq!(passes[0].ids[..seq.len()], seq.ids[..]);
            assert_eq!(passes[0].examples[t], seq.scored().collect::<Vec<_>>());
        }
        let full = build_training_sequence(&d, 1, &v, &cfg, 1024).len();
        let split = dialogue_passes(&d, &v, &cfg, full - 1);
        assert_eq!(split.len(), 2);
        assert!(split.iter().all(|p| p.ids.len() < full));
    }
}
