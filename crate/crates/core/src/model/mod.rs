//! Desk-scale decoder-only transformer: weighted masked training objective,
//! AdamW training, greedy decoding and a binary checkpoint format.

pub mod checkpoint;
pub mod config;
pub mod generate;
pub mod optim;
pub mod scalar;
pub mod sequence;
pub mod train;
pub mod transformer;

pub use checkpoint::{Checkpoint, CheckpointHeader};
pub use config::{ModelConfig, TrainConfig};
pub use generate::{argmax, generate_until, Decoder, Generation};
pub use sequence::{build_training_sequence, TokenSequence};
pub use train::{evaluate_loss, TrainReport, Trainer};
pub use transformer::{KvCache, ParamClass, Params, Target, Tensor, Transformer};

use crate::error::Result;
use crate::tokenizer::TokenId;

/// The inference and training model.
pub type Model = Transformer<f32>;

/// Masked, weighted cross-entropy of `seq` under `model`:
/// `Σ_{i masked} −w_i · log P(x_i | x_<i)` divided by the number of scored
/// tokens. Position 0 has no prefix and is not scored.
pub fn loss<T: scalar::Scalar>(model: &Transformer<T>, seq: &TokenSequence) -> Result<f64> {
    let scored: Vec<(usize, f64)> = seq.scored().collect();
    if scored.is_empty() {
        return Ok(0.0);
    }
    let n = T::lit(scored.len() as f64);
    let targets: Vec<Target<T>> = scored
        .iter()
        .map(|&(i, w)| Target {
            position: i - 1,
            token: seq.ids[i],
            coef: T::lit(w) / n,
        })
        .collect();
    model.loss(&seq.ids, &targets)
}

/// Plain masked cross-entropy (all weights 1), averaged over scored tokens.
pub fn unweighted_loss<T: scalar::Scalar>(model: &Transformer<T>, seq: &TokenSequence) -> Result<f64> {
    let positions: Vec<(usize, TokenId)> = seq.scored().map(|(i, _)| (i - 1, seq.ids[i])).collect();
    if positions.is_empty() {
        return Ok(0.0);
    }
    let terms = model.nll_terms(&seq.ids, &positions)?;
    let coef = T::lit(1.0) / T::lit(positions.len() as f64);
    Ok(terms.into_iter().map(|t| (coef * t).to_f64().unwrap()).sum())
}
