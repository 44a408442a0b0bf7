//! Deterministic minibatch training with the weighted, masked objective.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, TrainConfig};
use super::optim::{clip_global_norm, AdamW, AdamWConfig};
use super::sequence::{dialogue_passes, SharedSequence};
use super::transformer::{Params, Target, Transformer};
use crate::error::{Error, Result};
use crate::schema::Dialogue;
use crate::tokenizer::{TokenId, Vocabulary};

/// Per-epoch training losses. `initial_loss` is measured before the first
/// update with dropout disabled; epoch losses are the mean per-example loss
/// seen during the epoch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_loss: f64,
    pub epoch_losses: Vec<f64>,
    pub steps: u64,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }
}

/// The passes of one dialogue plus its example count.
struct DialogueWork {
    passes: Vec<SharedSequence>,
    examples: usize,
}

fn targets(ids: &[TokenId], scored: &[(usize, f64)], scale: f64) -> Vec<Target<f32>> {
    let n = scored.len() as f64;
    scored
        .iter()
        .map(|&(i, w)| Target {
            position: i - 1,
            token: ids[i],
            coef: (w * scale / n) as f32,
        })
        .collect()
}

/// Flattens a pass into one target list, each example scaled by `scale`.
fn pass_targets(pass: &SharedSequence, scale: f64) -> Vec<Target<f32>> {
    pass.examples
        .iter()
        .filter(|e| !e.is_empty())
        .flat_map(|e| targets(&pass.ids, e, scale))
        .collect()
}

fn prepare(corpus: &[Dialogue], vocab: &Vocabulary, train: &TrainConfig, max_len: usize) -> Vec<DialogueWork> {
    corpus
        .iter()
        .map(|d| {
            let passes = dialogue_passes(d, vocab, train, max_len);
            let examples = passes
                .iter()
                .map(|p| p.examples.iter().filter(|e| !e.is_empty()).count())
                .sum();
            DialogueWork { passes, examples }
        })
        .filter(|w| w.examples > 0)
        .collect()
}

/// Mean per-example loss of `model` over `corpus`, without dropout.
pub fn evaluate_loss(
    model: &Transformer<f32>,
    corpus: &[Dialogue],
    vocab: &Vocabulary,
    train: &TrainConfig,
) -> Result<f64> {
    let work = prepare(corpus, vocab, train, model.config.max_seq_len);
    let total: usize = work.iter().map(|w| w.examples).sum();
    if total == 0 {
        return Err(Error::EmptyCorpus);
    }
    let mut sum = 0.0;
    for w in &work {
        for pass in &w.passes {
            sum += model.loss(&pass.ids, &pass_targets(pass, 1.0))?;
        }
    }
    Ok(sum / total as f64)
}

/// Owns the model and optimizer state across epochs.
pub struct Trainer {
    model: Transformer<f32>,
    last_good: Transformer<f32>,
    config: TrainConfig,
    optimizer: AdamW<f32>,
    grads: Params<f32>,
    work: Vec<DialogueWork>,
    rng: ChaCha8Rng,
    report: TrainReport,
}

impl Trainer {
    /// Initializes a model from `model_config` (seeded by `train.seed`) and
    /// precomputes every training example of `corpus`.
    pub fn new(corpus: &[Dialogue], vocab: &Vocabulary, model_config: ModelConfig, train: TrainConfig) -> Result<Self> {
        train.validate()?;
        if model_config.vocab_size != vocab.len() {
            return Err(Error::InvalidConfig(format!(
                "model vocab_size {} differs from vocabulary size {}",
                model_config.vocab_size,
                vocab.len()
            )));
        }
        let model = Transformer::new(model_config, train.seed)?;
        Self::resume(corpus, vocab, model, train)
    }

    /// Continues training an existing model with fresh optimizer state.
    pub fn resume(corpus: &[Dialogue], vocab: &Vocabulary, model: Transformer<f32>, train: TrainConfig) -> Result<Self> {
        train.validate()?;
        let work = prepare(corpus, vocab, &train, model.config.max_seq_len);
        if work.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let optimizer = AdamW::new(
            AdamWConfig {
                learning_rate: train.learning_rate,
                beta1: train.beta1,
                beta2: train.beta2,
                epsilon: train.epsilon,
                weight_decay: train.weight_decay,
            },
            &model.params,
        );
        let mut grads = model.params.clone();
        grads.fill_zero();
        let mut trainer = Trainer {
            last_good: model.clone(),
            rng: ChaCha8Rng::seed_from_u64(train.seed ^ 0x005e_ed0f_da7a),
            model,
            config: train,
            optimizer,
            grads,
            work,
            report: TrainReport::default(),
        };
        trainer.report.initial_loss = trainer.eval_loss()?;
        Ok(trainer)
    }

    fn eval_loss(&self) -> Result<f64> {
        let total: usize = self.work.iter().map(|w| w.examples).sum();
        let mut sum = 0.0;
        for w in &self.work {
            for pass in &w.passes {
                sum += self.model.loss(&pass.ids, &pass_targets(pass, 1.0))?;
            }
        }
        Ok(sum / total as f64)
    }

    pub fn model(&self) -> &Transformer<f32> {
        &self.model
    }

    /// The model as of the last completed epoch (the initialization before
    /// any epoch completes).
    pub fn last_good(&self) -> &Transformer<f32> {
        &self.last_good
    }

    pub fn report(&self) -> &TrainReport {
        &self.report
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn into_parts(self) -> (Transformer<f32>, TrainReport) {
        (self.model, self.report)
    }

    /// One pass over the corpus in a seeded shuffled order; returns the
    /// mean per-example loss.
    pub fn run_epoch(&mut self) -> Result<f64> {
        let epoch = self.report.epoch_losses.len();
        let mut order: Vec<usize> = (0..self.work.len()).collect();
        order.shuffle(&mut self.rng);
        let mut sum = 0.0;
        let mut seen = 0usize;
        for (step, batch) in order.chunks(self.config.batch_size).enumerate() {
            let n: usize = batch.iter().map(|&i| self.work[i].examples).sum();
            self.grads.fill_zero();
            let mut batch_loss = 0.0;
            for &i in batch {
                for pass in &self.work[i].passes {
                    let t = pass_targets(pass, 1.0 / n as f64);
                    batch_loss += self
                        .model
                        .loss_and_grad(&pass.ids, &t, &mut self.grads, Some(&mut self.rng))?;
                }
            }
            let norm = clip_global_norm(&mut self.grads, self.config.grad_clip_norm);
            if !batch_loss.is_finite() || !norm.is_finite() {
                self.model = self.last_good.clone();
                return Err(Error::DivergedLoss { epoch, step });
            }
            self.optimizer.step(&mut self.model.params, &self.grads);
            self.report.steps += 1;
            sum += batch_loss * n as f64;
            seen += n;
        }
        let mean = sum / seen as f64;
        self.report.epoch_losses.push(mean);
        self.last_good = self.model.clone();
        Ok(mean)
    }

    /// Runs the configured number of epochs, calling `on_epoch(index, loss)`
    /// after each.
    pub fn run(&mut self, mut on_epoch: impl FnMut(usize, f64)) -> Result<&TrainReport> {
        for e in 0..self.config.epochs {
            let loss = self.run_epoch()?;
            on_epoch(e, loss);
        }
        Ok(&self.report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tod::{generate_tod_corpus, synthetic_database};

    fn setup(n: usize) -> (Vec<Dialogue>, Vocabulary, ModelConfig) {
        let db = synthetic_database(0);
        let corpus = generate_tod_corpus(&db, n, 1).unwrap();
        let vocab = Vocabulary::build(&corpus, 1).unwrap();
        let cfg = ModelConfig {
            layers: 1,
            heads: 2,
            embed_dim: 16,
            ffn_dim: 32,
            max_seq_len: 1024,
            dropout: 0.1,
            vocab_size: vocab.len(),
        };
        (corpus, vocab, cfg)
    }

    #[test]
    fn zero_epochs_keeps_initialization() {
        let (corpus, vocab, cfg) = setup(3);
        let train = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let mut t = Trainer::new(&corpus, &vocab, cfg.clone(), train).unwrap();
        t.run(|_, _| {}).unwrap();
        assert_eq!(t.model(), &Transformer::new(cfg, 0).unwrap());
        assert!(t.report().epoch_losses.is_empty());
    }

    #[test]
    fn same_seed_same_history() {
        let (corpus, vocab, cfg) = setup(4);
        let train = TrainConfig {
            epochs: 2,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let run = || {
            let mut t = Trainer::new(&corpus, &vocab, cfg.clone(), train.clone()).unwrap();
            t.run(|_, _| {}).unwrap();
            t.into_parts()
        };
        let (m1, r1) = run();
        let (m2, r2) = run();
        assert_eq!(r1, r2);
        assert_eq!(m1, m2);
        assert_eq!(r1.steps, 4);
    }

    #[test]
    fn loss_decreases_on_a_small_corpus() {
        let (corpus, vocab, cfg) = setup(4);
        let train = TrainConfig {
            epochs: 16,
            batch_size: 1,
            learning_rate: 3e-3,
            ..TrainConfig::default()
        };
        let mut t = Trainer::new(&corpus, &vocab, cfg, train.clone()).unwrap();
        t.run(|_, _| {}).unwrap();
        let after = evaluate_loss(t.model(), &corpus, &vocab, &train).unwrap();
        assert!(after < 0.7 * t.report().initial_loss, "{after} vs {}", t.report().initial_loss);
    }

    #[test]
    fn divergence_restores_last_good() {
        let (corpus, vocab, cfg) = setup(2);
        let train = TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        };
        let mut t = Trainer::new(&corpus, &vocab, cfg, train).unwrap();
        t.run_epoch().unwrap();
        let good = t.last_good().clone();
        let last = t.model.params.tensors.len() - 1;
        t.model.params.tensors[last].data[0] = f32::NAN;
        assert!(matches!(t.run_epoch(), Err(Error::DivergedLoss { epoch: 1, step: 0 })));
        assert_eq!(t.model(), &good);
    }
}
