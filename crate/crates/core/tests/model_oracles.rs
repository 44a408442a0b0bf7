use std::collections::BTreeMap;

use unids::model::{
    build_training_sequence, loss, unweighted_loss, ModelConfig, ParamClass, Params, Target, TokenSequence,
    TrainConfig, Transformer,
};
use unids::schema::{ActType, BeliefState, DbResult, Dialogue, DialogueTurn, Domain, Source, SystemAct};
use unids::tokenizer::Vocabulary;

fn mini() -> ModelConfig {
    ModelConfig {
        layers: 2,
        heads: 2,
        embed_dim: 8,
        ffn_dim: 16,
        max_seq_len: 32,
        dropout: 0.0,
        vocab_size: 13,
    }
}

fn ids20() -> Vec<u32> {
    (0..20).map(|i| ((i * 7 + 3) % 13) as u32).collect()
}

/// Central differences with h = 1e-5 against the analytic gradient, in f64.
#[test]
fn analytic_gradient_matches_finite_differences() {
    let mut model = Transformer::<f64>::new(mini(), 11).unwrap();
    // Non-trivial LayerNorm parameters so their gradients are exercised.
    for t in &mut model.params.tensors {
        if t.shape.len() == 1 {
            for (i, x) in t.data.iter_mut().enumerate() {
                *x += 0.1 * ((i as f64) * 1.3).sin();
            }
        }
    }
    let ids = ids20();
    let targets: Vec<Target<f64>> = (0..19)
        .filter(|i| i % 3 != 1)
        .map(|i| Target {
            position: i,
            token: ids[i + 1],
            coef: if i % 4 == 0 { 2.0 / 13.0 } else { 1.0 / 13.0 },
        })
        .collect();
    let mut grads = Params::zeros(&model.config);
    model.loss_and_grad(&ids, &targets, &mut grads, None).unwrap();

    let h = 1e-5;
    let mut worst: BTreeMap<ParamClass, f64> = BTreeMap::new();
    for ti in 0..model.params.tensors.len() {
        let name = model.params.tensors[ti].name.clone();
        let n = model.params.tensors[ti].data.len();
        // Probe a spread of entries in every tensor.
        let stride = (n / 9).max(1);
        for k in (0..n).step_by(stride) {
            let orig = model.params.tensors[ti].data[k];
            model.params.tensors[ti].data[k] = orig + h;
            let up = model.loss(&ids, &targets).unwrap();
            model.params.tensors[ti].data[k] = orig - h;
            let down = model.loss(&ids, &targets).unwrap();
            model.params.tensors[ti].data[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.tensors[ti].data[k];
            let scale = numeric.abs().max(analytic.abs());
            let rel = if scale < 1e-7 { 0.0 } else { (numeric - analytic).abs() / scale };
            assert!(rel < 1e-4, "{name}[{k}]: analytic {analytic:e} numeric {numeric:e} rel {rel:e}");
            let e = worst.entry(ParamClass::of(&name)).or_default();
            *e = e.max(rel);
        }
    }
    for class in [
        ParamClass::Embedding,
        ParamClass::Attention,
        ParamClass::FeedForward,
        ParamClass::LayerNorm,
        ParamClass::OutputProjection,
    ] {
        assert!(worst.contains_key(&class), "{class:?} not probed");
    }
}

fn hotel_dialogue() -> (Dialogue, Vocabulary) {
    let mut belief = BeliefState::new();
    belief.set(Domain::Hotel, "price", "cheap");
    let d = Dialogue::new(
        Source::Tod,
        None,
        vec![DialogueTurn {
            user: "i am looking for a cheap hotel .".into(),
            belief,
            db: DbResult::Two,
            act: SystemAct::new(Domain::Hotel, ActType::Recommend, ["name"]),
            response: "how about [value_name] ?".into(),
            turn_index: 0,
        }],
    );
    let v = Vocabulary::build(std::slice::from_ref(&d), 1).unwrap();
    (d, v)
}

#[test]
fn unit_weights_reproduce_plain_cross_entropy_bitwise() {
    let (d, v) = hotel_dialogue();
    let cfg = TrainConfig {
        recommend_weight: 1.0,
        ..TrainConfig::default()
    };
    let seq = build_training_sequence(&d, 0, &v, &cfg, 1024);
    let model = Transformer::<f32>::new(ModelConfig::tiny(v.len()), 3).unwrap();
    let a = loss(&model, &seq).unwrap();
    let b = unweighted_loss(&model, &seq).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
}

#[test]
fn heavier_weights_raise_the_loss() {
    let (d, v) = hotel_dialogue();
    let model = Transformer::<f64>::new(
        ModelConfig {
            dropout: 0.0,
            ..ModelConfig::tiny(v.len())
        },
        3,
    )
    .unwrap();
    let light = build_training_sequence(
        &d,
        0,
        &v,
        &TrainConfig {
            recommend_weight: 1.0,
            ..TrainConfig::default()
        },
        1024,
    );
    let heavy = build_training_sequence(&d, 0, &v, &TrainConfig::default(), 1024);
    assert!(loss(&model, &heavy).unwrap() > loss(&model, &light).unwrap());
}

/// Oracle: the loss is the mean over masked positions of −w·log p computed
/// from the model's own output distributions.
#[test]
fn loss_equals_masked_mean_of_weighted_nll() {
    let model = Transformer::<f64>::new(mini(), 5).unwrap();
    let ids = ids20();
    let seq = TokenSequence {
        weights: (0..20).map(|i| if i % 5 == 0 { 3.0 } else { 1.0 }).collect(),
        loss_mask: (0..20).map(|i| i >= 8).collect(),
        ids: ids.clone(),
    };
    let probs = model.forward(&ids).unwrap();
    let mut sum = 0.0;
    let mut n = 0.0;
    for i in 8..20 {
        sum += -seq.weights[i] * probs[i - 1][ids[i] as usize].ln();
        n += 1.0;
    }
    let got = loss(&model, &seq).unwrap();
    assert!((got - sum / n).abs() < 1e-10, "{got} vs {}", sum / n);
}

#[test]
fn truncation_length_example() {
    // A dialogue serialized to more than max tokens drops exactly the excess from the head.
    let (d, v) = hotel_dialogue();
    let turns: Vec<DialogueTurn> = (0..3).map(|_| d.turns[0].clone()).collect();
    let d3 = Dialogue::new(Source::Tod, None, turns);
    let full = build_training_sequence(&d3, 2, &v, &TrainConfig::default(), 10_000);
    let max = full.len() - 6;
    let cut = build_training_sequence(&d3, 2, &v, &TrainConfig::default(), max);
    assert_eq!(cut.ids, full.ids[6..]);
}
