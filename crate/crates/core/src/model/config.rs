use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::ActType;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub embed_dim: usize,
    pub ffn_dim: usize,
    pub max_seq_len: usize,
    pub dropout: f32,
    pub vocab_size: usize,
}

impl ModelConfig {
    /// The desk-scale defaults for a given vocabulary.
    pub fn tiny(vocab_size: usize) -> Self {
        ModelConfig {
            layers: 2,
            heads: 4,
            embed_dim: 128,
            ffn_dim: 512,
            max_seq_len: 1024,
            dropout: 0.1,
            vocab_size,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.heads == 0 || self.embed_dim % self.heads != 0 {
            return fail("embed_dim must be divisible by heads");
        }
        if self.max_seq_len == 0 {
            return fail("max_seq_len must be at least 1");
        }
        if self.layers == 0 || self.ffn_dim == 0 || self.vocab_size == 0 {
            return fail("layers, ffn_dim and vocab_size must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Dialogues per optimizer step; every turn of each dialogue is one example.
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Loss weight `w` on entity-recommendation act tokens.
    pub recommend_weight: f64,
    pub weighted_act_types: Vec<ActType>,
    pub grad_clip_norm: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Also supervise context and user tokens instead of only the final
    /// turn's belief, db, act and response segments.
    #[serde(default)]
    pub supervise_context: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            // Tuned on the 200-dialogue desk fixture.
            learning_rate: 3e-3,
            batch_size: 4,
            epochs: 30,
            seed: 0,
            recommend_weight: 2.0,
            weighted_act_types: vec![ActType::Recommend, ActType::Inform],
            grad_clip_norm: 1.0,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            supervise_context: false,
        }
    }
}

impl TrainConfig {
    // Negated comparisons so NaN is rejected too.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.recommend_weight >= 1.0) {
            return fail("recommend_weight must be at least 1");
        }
        if !(self.learning_rate > 0.0) {
            return fail("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive");
        }
        if !(self.grad_clip_norm > 0.0) {
            return fail("grad_clip_norm must be positive");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(ModelConfig::tiny(100).validate().is_ok());
        let bad = ModelConfig {
            heads: 3,
            ..ModelConfig::tiny(100)
        };
        assert!(bad.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            recommend_weight: 0.5,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
