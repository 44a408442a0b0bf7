//! Greedy decoding over a key/value cache.

use super::transformer::{KvCache, Transformer};
use crate::error::Result;
use crate::tokenizer::TokenId;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generation {
    /// Generated suffix, including the stop token when one was produced.
    pub ids: Vec<TokenId>,
    /// Set when generation ended without producing a stop token.
    pub truncated: bool,
}

impl Generation {
    pub fn stopped(&self) -> bool {
        !self.truncated
    }
}

/// Index of the largest logit; ties go to the lowest id.
pub fn argmax(logits: &[f32]) -> TokenId {
    let mut best = 0;
    for (i, &x) in logits.iter().enumerate() {
        if x > logits[best] {
            best = i;
        }
    }
    best as TokenId
}

/// Incremental greedy decoder for one conversation. Tokens are fed lazily;
/// when the running sequence would leave fewer than `reserve` free positions
/// the oldest tokens are dropped and the cache rebuilt from the tail.
#[derive(Debug, Clone)]
pub struct Decoder<'m> {
    model: &'m Transformer<f32>,
    cache: KvCache<f32>,
    ids: Vec<TokenId>,
    fed: usize,
    reserve: usize,
    dropped: usize,
    last_logits: Option<Vec<f32>>,
}

impl<'m> Decoder<'m> {
    pub fn new(model: &'m Transformer<f32>, reserve: usize) -> Self {
        Decoder {
            model,
            cache: KvCache::new(model.config.layers),
            ids: Vec::new(),
            fed: 0,
            reserve: reserve.min(model.config.max_seq_len.saturating_sub(1)),
            dropped: 0,
            last_logits: None,
        }
    }

    /// The token window currently conditioned on.
    pub fn ids(&self) -> &[TokenId] {
        &self.ids
    }

    /// Tokens dropped from the head so far.
    pub fn dropped(&self) -> usize {
        self.dropped
    }

    pub fn push(&mut self, ids: &[TokenId]) {
        self.ids.extend_from_slice(ids);
        let limit = self.model.config.max_seq_len - self.reserve;
        if self.ids.len() > limit {
            let cut = self.ids.len() - limit;
            self.ids.drain(..cut);
            self.dropped += cut;
            self.cache.clear();
            self.fed = 0;
            self.last_logits = None;
        }
    }

    /// Drops every token after the first `len` of the current window.
    pub fn truncate(&mut self, len: usize) {
        if len >= self.ids.len() {
            return;
        }
        self.ids.truncate(len);
        if self.fed > len {
            // Logits for position len - 1 are recomputed on the next request.
            let keep = len.saturating_sub(1);
            self.cache.truncate(keep);
            self.fed = keep;
            self.last_logits = None;
        }
    }

    fn logits(&mut self) -> Result<&[f32]> {
        if self.fed < self.ids.len() {
            let new = &self.ids[self.fed..];
            self.last_logits = Some(self.model.decode_step(&mut self.cache, new, false)?);
            self.fed = self.ids.len();
        }
        Ok(self.last_logits.as_deref().expect("decoder fed at least one token"))
    }

    /// Appends argmax tokens until one in `stop` is produced, `max_new`
    /// tokens have been generated, or the context window is full.
    pub fn generate_until(&mut self, stop: &[TokenId], max_new: usize) -> Result<Generation> {
        let mut out = Vec::new();
        if self.ids.is_empty() {
            return Ok(Generation { ids: out, truncated: true });
        }
        while out.len() < max_new && self.ids.len() < self.model.config.max_seq_len {
            let next = argmax(self.logits()?);
            out.push(next);
            self.ids.push(next);
            if stop.contains(&next) {
                return Ok(Generation { ids: out, truncated: false });
            }
        }
        Ok(Generation { ids: out, truncated: true })
    }
}

/// Greedy continuation of `ids` until a stop token, `max_new` tokens, or the
/// model's maximum sequence length.
pub fn generate_until(model: &Transformer<f32>, ids: &[TokenId], stop: &[TokenId], max_new: usize) -> Result<Generation> {
    let mut d = Decoder::new(model, 0);
    d.push(ids);
    d.generate_until(stop, max_new)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::ModelConfig;

    fn model() -> Transformer<f32> {
        Transformer::new(
            ModelConfig {
                layers: 1,
                heads: 2,
                embed_dim: 8,
                ffn_dim: 16,
                max_seq_len: 12,
                dropout: 0.0,
                vocab_size: 6,
            },
            9,
        )
        .unwrap()
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.5, 1.0, 1.0, -2.0]), 1);
        assert_eq!(argmax(&[3.0]), 0);
    }

    #[test]
    fn greedy_is_deterministic_and_matches_full_forward() {
        let m = model();
        let a = generate_until(&m, &[1, 2], &[], 5).unwrap();
        assert_eq!(a, generate_until(&m, &[1, 2], &[], 5).unwrap());
        assert!(a.truncated);
        assert_eq!(a.ids.len(), 5);
        let mut seq = vec![1, 2];
        for &tok in &a.ids {
            let probs = m.forward(&seq).unwrap();
            assert_eq!(argmax(probs.last().unwrap()), tok);
            seq.push(tok);
        }
    }

    #[test]
    fn stops_on_stop_token_or_window() {
        let m = model();
        let free = generate_until(&m, &[1], &[], 3).unwrap();
        let stop = free.ids[1];
        let g = generate_until(&m, &[1], &[stop], 10).unwrap();
        assert!(!g.truncated);
        assert_eq!(*g.ids.last().unwrap(), stop);
        assert!(g.ids.len() <= 2);
        let w = generate_until(&m, &[1; 10], &[], 10).unwrap();
        assert_eq!(w.ids.len(), 2);
        assert!(w.truncated);
    }

    #[test]
    fn decoder_rebases_long_context() {
        let m = model();
        let mut d = Decoder::new(&m, 4);
        d.push(&[1, 2, 3, 4, 5, 1, 2, 3, 4, 5]);
        assert_eq!(d.ids(), &[3, 4, 5, 1, 2, 3, 4, 5]);
        assert_eq!(d.dropped(), 2);
        let g = d.generate_until(&[], 4).unwrap();
        assert_eq!(g.ids.len(), 4);
        assert_eq!(g, generate_until(&m, &[3, 4, 5, 1, 2, 3, 4, 5], &[], 4).unwrap());
    }

    #[test]
    fn truncate_then_regenerate_is_consistent() {
        let m = model();
        let mut d = Decoder::new(&m, 0);
        d.push(&[1, 2, 3]);
        let first = d.generate_until(&[], 3).unwrap();
        d.truncate(3);
        assert_eq!(d.ids(), &[1, 2, 3]);
        assert_eq!(d.generate_until(&[], 3).unwrap(), first);
        d.truncate(2);
        d.push(&[4]);
        assert_eq!(d.generate_until(&[], 2).unwrap(), generate_until(&m, &[1, 2, 4], &[], 2).unwrap());
    }
}
