//! Decoder-only transformer with explicit backpropagation.
//!
//! Pre-norm GPT-2 layout: learned token and absolute position embeddings,
//! `layers` blocks of causal multi-head self-attention and a GELU
//! feed-forward network each wrapped as `x + f(LayerNorm(x))`, a final
//! LayerNorm and an untied output projection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::scalar::{matmul, Scalar};
use crate::error::{Error, Result};
use crate::tokenizer::TokenId;

const LN_EPS: f64 = 1e-5;
const PER_LAYER: usize = 12;

// Offsets of a block's tensors within its group of PER_LAYER.
const LN1_G: usize = 0;
const LN1_B: usize = 1;
const QKV_W: usize = 2;
const QKV_B: usize = 3;
const PROJ_W: usize = 4;
const PROJ_B: usize = 5;
const LN2_G: usize = 6;
const LN2_B: usize = 7;
const FC_W: usize = 8;
const FC_B: usize = 9;
const OUT_W: usize = 10;
const OUT_B: usize = 11;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

/// Every trainable tensor, in the fixed order used by checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub tensors: Vec<Tensor<T>>,
    layers: usize,
}

/// Coarse grouping of parameters, used to report gradient checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamClass {
    Embedding,
    Attention,
    FeedForward,
    LayerNorm,
    OutputProjection,
}

impl ParamClass {
    pub fn of(name: &str) -> ParamClass {
        if name.ends_with("_emb") {
            ParamClass::Embedding
        } else if name.contains(".attn.") {
            ParamClass::Attention
        } else if name.contains(".ffn.") {
            ParamClass::FeedForward
        } else if name.contains("ln") {
            ParamClass::LayerNorm
        } else {
            ParamClass::OutputProjection
        }
    }
}

impl<T: Scalar> Params<T> {
    /// Tensor names and shapes for `cfg`, in checkpoint order.
    pub fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
        let (d, f, v) = (cfg.embed_dim, cfg.ffn_dim, cfg.vocab_size);
        let mut out = vec![
            ("tok_emb".to_string(), vec![v, d]),
            ("pos_emb".to_string(), vec![cfg.max_seq_len, d]),
        ];
        for l in 0..cfg.layers {
            let p = |s: &str| format!("layers.{l}.{s}");
            out.extend([
                (p("ln1.gain"), vec![d]),
                (p("ln1.bias"), vec![d]),
                (p("attn.qkv.weight"), vec![d, 3 * d]),
                (p("attn.qkv.bias"), vec![3 * d]),
                (p("attn.proj.weight"), vec![d, d]),
                (p("attn.proj.bias"), vec![d]),
                (p("ln2.gain"), vec![d]),
                (p("ln2.bias"), vec![d]),
                (p("ffn.fc.weight"), vec![d, f]),
                (p("ffn.fc.bias"), vec![f]),
                (p("ffn.proj.weight"), vec![f, d]),
                (p("ffn.proj.bias"), vec![d]),
            ]);
        }
        out.extend([
            ("ln_f.gain".to_string(), vec![d]),
            ("ln_f.bias".to_string(), vec![d]),
            ("lm_head.weight".to_string(), vec![d, v]),
        ]);
        out
    }

    pub fn zeros(cfg: &ModelConfig) -> Self {
        Params {
            tensors: Self::layout(cfg)
                .into_iter()
                .map(|(name, shape)| Tensor {
                    data: vec![T::zero(); shape.iter().product()],
                    name,
                    shape,
                })
                .collect(),
            layers: cfg.layers,
        }
    }

    /// Normal(0, 0.02) weights and embeddings, unit LayerNorm gains, zero biases.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut params = Self::zeros(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in &mut params.tensors {
            if t.name.ends_with(".gain") {
                t.data.iter_mut().for_each(|x| *x = T::one());
            } else if t.shape.len() == 2 {
                for x in t.data.iter_mut() {
                    *x = T::lit(0.02 * standard_normal(&mut rng));
                }
            }
        }
        params
    }

    /// Builds parameters from named tensors, checking names and shapes
    /// against the layout for `cfg`.
    pub fn from_tensors(cfg: &ModelConfig, tensors: Vec<Tensor<T>>) -> Result<Self> {
        let layout = Self::layout(cfg);
        if layout.len() != tensors.len() {
            return Err(Error::CheckpointFormat(format!(
                "expected {} tensors, found {}",
                layout.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in layout.iter().zip(&tensors) {
            if *name != t.name || *shape != t.shape || t.data.len() != shape.iter().product::<usize>() {
                return Err(Error::CheckpointFormat(format!(
                    "tensor `{}` {:?} does not match expected `{name}` {shape:?}",
                    t.name, t.shape
                )));
            }
        }
        Ok(Params {
            tensors,
            layers: cfg.layers,
        })
    }

    pub fn num_elements(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn fill_zero(&mut self) {
        for t in &mut self.tensors {
            t.data.iter_mut().for_each(|x| *x = T::zero());
        }
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        Params {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|x| U::from_f64(x.to_f64().unwrap()).unwrap()).collect(),
                })
                .collect(),
            layers: self.layers,
        }
    }

    fn get(&self, i: usize) -> &[T] {
        &self.tensors[i].data
    }

    fn get_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.tensors[i].data
    }

    fn layer(&self, l: usize, k: usize) -> &[T] {
        self.get(2 + l * PER_LAYER + k)
    }

    fn layer_mut(&mut self, l: usize, k: usize) -> &mut [T] {
        self.get_mut(2 + l * PER_LAYER + k)
    }

    fn ln_f(&self) -> (&[T], &[T]) {
        let base = 2 + self.layers * PER_LAYER;
        (self.get(base), self.get(base + 1))
    }

    fn lm_head_index(&self) -> usize {
        2 + self.layers * PER_LAYER + 2
    }
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// One supervised position: the output at `position` is scored against
/// `token` with loss coefficient `coef`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Target<T> {
    pub position: usize,
    pub token: TokenId,
    pub coef: T,
}

struct LnCache<T> {
    xhat: Vec<T>,
    rstd: Vec<T>,
}

struct LayerCache<T> {
    ln1: LnCache<T>,
    a: Vec<T>,
    qkv: Vec<T>,
    probs: Vec<T>,
    ctx: Vec<T>,
    drop_attn: Option<Vec<T>>,
    ln2: LnCache<T>,
    m: Vec<T>,
    h: Vec<T>,
    g: Vec<T>,
    drop_ffn: Option<Vec<T>>,
}

struct ForwardCache<T> {
    len: usize,
    drop_emb: Option<Vec<T>>,
    layers: Vec<LayerCache<T>>,
    ln_f: LnCache<T>,
    z: Vec<T>,
}

fn layer_norm<T: Scalar>(x: &[T], gain: &[T], bias: &[T], d: usize, out: &mut [T]) -> LnCache<T> {
    let rows = x.len() / d;
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); rows];
    let n = T::lit(d as f64);
    let eps = T::lit(LN_EPS);
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().copied().sum::<T>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for j in 0..d {
            let xh = (row[j] - mean) * rs;
            xhat[r * d + j] = xh;
            out[r * d + j] = gain[j] * xh + bias[j];
        }
    }
    LnCache { xhat, rstd }
}

/// Returns dx; accumulates dgain and dbias.
fn layer_norm_backward<T: Scalar>(
    dy: &[T],
    cache: &LnCache<T>,
    gain: &[T],
    dgain: &mut [T],
    dbias: &mut [T],
    d: usize,
) -> Vec<T> {
    let rows = dy.len() / d;
    let mut dx = vec![T::zero(); dy.len()];
    let n = T::lit(d as f64);
    let mut dxhat = vec![T::zero(); d];
    for r in 0..rows {
        let dyr = &dy[r * d..(r + 1) * d];
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let mut mean_dxhat = T::zero();
        let mut mean_dxhat_xhat = T::zero();
        for j in 0..d {
            dgain[j] += dyr[j] * xh[j];
            dbias[j] += dyr[j];
            dxhat[j] = dyr[j] * gain[j];
            mean_dxhat += dxhat[j];
            mean_dxhat_xhat += dxhat[j] * xh[j];
        }
        mean_dxhat /= n;
        mean_dxhat_xhat /= n;
        let rs = cache.rstd[r];
        for j in 0..d {
            dx[r * d + j] = rs * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
    }
    dx
}

fn gelu_coeffs<T: Scalar>() -> (T, T) {
    (T::lit((2.0 / std::f64::consts::PI).sqrt()), T::lit(0.044715))
}

fn gelu<T: Scalar>(x: T) -> T {
    let (c, a) = gelu_coeffs::<T>();
    let half = T::lit(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let (c, a) = gelu_coeffs::<T>();
    let half = T::lit(0.5);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::lit(3.0) * a * x * x)
}

fn add_bias<T: Scalar>(x: &mut [T], bias: &[T]) {
    let n = bias.len();
    for row in x.chunks_mut(n) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += *b;
        }
    }
}

fn bias_grad<T: Scalar>(dy: &[T], dbias: &mut [T]) {
    let n = dbias.len();
    for row in dy.chunks(n) {
        for (g, v) in dbias.iter_mut().zip(row) {
            *g += *v;
        }
    }
}

fn dropout_mask<T: Scalar>(len: usize, rate: f32, rng: &mut ChaCha8Rng) -> Vec<T> {
    let keep = T::lit(1.0 / (1.0 - rate as f64));
    (0..len)
        .map(|_| if rng.gen::<f32>() < rate { T::zero() } else { keep })
        .collect()
}

fn apply_mask<T: Scalar>(x: &mut [T], mask: &Option<Vec<T>>) {
    if let Some(m) = mask {
        x.iter_mut().zip(m).for_each(|(v, k)| *v *= *k);
    }
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(x, y)| *x * *y).sum()
}

fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    y.iter_mut().zip(x).for_each(|(yv, xv)| *yv += alpha * *xv);
}

/// Per-layer key/value rows for incremental decoding.
#[derive(Debug, Clone, Default)]
pub struct KvCache<T> {
    keys: Vec<Vec<T>>,
    values: Vec<Vec<T>>,
    len: usize,
}

impl<T: Scalar> KvCache<T> {
    pub fn new(layers: usize) -> Self {
        KvCache {
            keys: vec![Vec::new(); layers],
            values: vec![Vec::new(); layers],
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn clear(&mut self) {
        self.keys.iter_mut().for_each(Vec::clear);
        self.values.iter_mut().for_each(Vec::clear);
        self.len = 0;
    }

    /// Forgets every position at or after `len`.
    pub fn truncate(&mut self, len: usize) {
        if len >= self.len {
            return;
        }
        for (k, v) in self.keys.iter_mut().zip(&mut self.values) {
            let width = k.len() / self.len;
            k.truncate(len * width);
            v.truncate(len * width);
        }
        self.len = len;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transformer<T> {
    pub config: ModelConfig,
    pub params: Params<T>,
}

impl<T: Scalar> Transformer<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = Params::init(&config, seed);
        Ok(Transformer { config, params })
    }

    pub fn from_params(config: ModelConfig, params: Params<T>) -> Result<Self> {
        config.validate()?;
        let params = Params::from_tensors(&config, params.tensors)?;
        Ok(Transformer { config, params })
    }

    fn check_ids(&self, ids: &[TokenId], offset: usize) -> Result<()> {
        if offset + ids.len() > self.config.max_seq_len {
            return Err(Error::SequenceTooLong {
                len: offset + ids.len(),
                max: self.config.max_seq_len,
            });
        }
        if let Some(bad) = ids.iter().find(|&&id| id as usize >= self.config.vocab_size) {
            return Err(Error::InvalidConfig(format!("token id {bad} outside vocabulary")));
        }
        Ok(())
    }

    fn embed(&self, ids: &[TokenId], offset: usize) -> Vec<T> {
        let d = self.config.embed_dim;
        let tok = self.params.get(0);
        let pos = self.params.get(1);
        let mut x = vec![T::zero(); ids.len() * d];
        for (i, &id) in ids.iter().enumerate() {
            let t = &tok[id as usize * d..(id as usize + 1) * d];
            let p = &pos[(offset + i) * d..(offset + i + 1) * d];
            for j in 0..d {
                x[i * d + j] = t[j] + p[j];
            }
        }
        x
    }

    fn forward_train(&self, ids: &[TokenId], mut rng: Option<&mut ChaCha8Rng>) -> Result<ForwardCache<T>> {
        self.check_ids(ids, 0)?;
        let cfg = &self.config;
        let (d, f, heads) = (cfg.embed_dim, cfg.ffn_dim, cfg.heads);
        let dh = cfg.head_dim();
        let len = ids.len();
        let scale = T::one() / T::lit(dh as f64).sqrt();
        let rate = cfg.dropout;
        let mut mask = |n: usize| -> Option<Vec<T>> {
            match rng.as_deref_mut() {
                Some(r) if rate > 0.0 => Some(dropout_mask(n, rate, r)),
                _ => None,
            }
        };

        let mut x = self.embed(ids, 0);
        let drop_emb = mask(x.len());
        apply_mask(&mut x, &drop_emb);

        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let p = &self.params;
            let mut a = vec![T::zero(); len * d];
            let ln1 = layer_norm(&x, p.layer(l, LN1_G), p.layer(l, LN1_B), d, &mut a);
            let mut qkv = vec![T::zero(); len * 3 * d];
            matmul(&a, p.layer(l, QKV_W), &mut qkv, len, d, 3 * d, false, false, false);
            add_bias(&mut qkv, p.layer(l, QKV_B));

            let mut probs = vec![T::zero(); heads * len * len];
            let mut ctx = vec![T::zero(); len * d];
            for h in 0..heads {
                for i in 0..len {
                    let q = &qkv[i * 3 * d + h * dh..i * 3 * d + (h + 1) * dh];
                    let row = &mut probs[(h * len + i) * len..(h * len + i) * len + i + 1];
                    let mut max = T::neg_infinity();
                    for (j, s) in row.iter_mut().enumerate() {
                        let k = &qkv[j * 3 * d + d + h * dh..j * 3 * d + d + (h + 1) * dh];
                        *s = dot(q, k) * scale;
                        max = max.max(*s);
                    }
                    let mut sum = T::zero();
                    for s in row.iter_mut() {
                        *s = (*s - max).exp();
                        sum += *s;
                    }
                    let out = &mut ctx[i * d + h * dh..i * d + (h + 1) * dh];
                    for (j, s) in row.iter_mut().enumerate() {
                        *s /= sum;
                        let v = &qkv[j * 3 * d + 2 * d + h * dh..j * 3 * d + 2 * d + (h + 1) * dh];
                        axpy(*s, v, out);
                    }
                }
            }
            let mut o = vec![T::zero(); len * d];
            matmul(&ctx, p.layer(l, PROJ_W), &mut o, len, d, d, false, false, false);
            add_bias(&mut o, p.layer(l, PROJ_B));
            let drop_attn = mask(o.len());
            apply_mask(&mut o, &drop_attn);
            x.iter_mut().zip(&o).for_each(|(xv, ov)| *xv += *ov);

            let mut m = vec![T::zero(); len * d];
            let ln2 = layer_norm(&x, p.layer(l, LN2_G), p.layer(l, LN2_B), d, &mut m);
            let mut hpre = vec![T::zero(); len * f];
            matmul(&m, p.layer(l, FC_W), &mut hpre, len, d, f, false, false, false);
            add_bias(&mut hpre, p.layer(l, FC_B));
            let g: Vec<T> = hpre.iter().map(|&v| gelu(v)).collect();
            let mut y = vec![T::zero(); len * d];
            matmul(&g, p.layer(l, OUT_W), &mut y, len, f, d, false, false, false);
            add_bias(&mut y, p.layer(l, OUT_B));
            let drop_ffn = mask(y.len());
            apply_mask(&mut y, &drop_ffn);
            x.iter_mut().zip(&y).for_each(|(xv, yv)| *xv += *yv);

            layers.push(LayerCache {
                ln1,
                a,
                qkv,
                probs,
                ctx,
                drop_attn,
                ln2,
                m,
                h: hpre,
                g,
                drop_ffn,
            });
        }
        let (gf, bf) = self.params.ln_f();
        let mut z = vec![T::zero(); len * d];
        let ln_f = layer_norm(&x, gf, bf, d, &mut z);
        Ok(ForwardCache {
            len,
            drop_emb,
            layers,
            ln_f,
            z,
        })
    }

    /// Logits for the targets' positions, `[targets, vocab]`.
    fn target_logits(&self, cache: &ForwardCache<T>, targets: &[Target<T>]) -> (Vec<T>, Vec<T>) {
        let (d, v) = (self.config.embed_dim, self.config.vocab_size);
        let mut zsel = vec![T::zero(); targets.len() * d];
        for (r, t) in targets.iter().enumerate() {
            zsel[r * d..(r + 1) * d].copy_from_slice(&cache.z[t.position * d..(t.position + 1) * d]);
        }
        let mut logits = vec![T::zero(); targets.len() * v];
        let w = self.params.get(self.params.lm_head_index());
        matmul(&zsel, w, &mut logits, targets.len(), d, v, false, false, false);
        (zsel, logits)
    }

    fn check_targets(&self, len: usize, targets: &[Target<T>]) -> Result<()> {
        match targets
            .iter()
            .find(|t| t.position >= len || t.token as usize >= self.config.vocab_size)
        {
            Some(t) => Err(Error::InvalidConfig(format!(
                "target at position {} (token {}) outside sequence of {len}",
                t.position, t.token
            ))),
            None => Ok(()),
        }
    }

    /// `Σ coef · −log P(token | prefix)` over the targets, without dropout.
    pub fn loss(&self, ids: &[TokenId], targets: &[Target<T>]) -> Result<f64> {
        let cache = self.forward_train(ids, None)?;
        self.check_targets(cache.len, targets)?;
        let (_, mut logits) = self.target_logits(&cache, targets);
        let v = self.config.vocab_size;
        let mut total = 0.0;
        for (r, t) in targets.iter().enumerate() {
            let nll = softmax_nll(&mut logits[r * v..(r + 1) * v], t.token as usize);
            total += (t.coef * nll).to_f64().unwrap();
        }
        Ok(total)
    }

    /// Unweighted masked loss: plain sum of `−log P` over the positions.
    pub fn nll_terms(&self, ids: &[TokenId], positions: &[(usize, TokenId)]) -> Result<Vec<T>> {
        let cache = self.forward_train(ids, None)?;
        let targets: Vec<Target<T>> = positions
            .iter()
            .map(|&(position, token)| Target {
                position,
                token,
                coef: T::one(),
            })
            .collect();
        self.check_targets(cache.len, &targets)?;
        let (_, mut logits) = self.target_logits(&cache, &targets);
        let v = self.config.vocab_size;
        Ok(targets
            .iter()
            .enumerate()
            .map(|(r, t)| softmax_nll(&mut logits[r * v..(r + 1) * v], t.token as usize))
            .collect())
    }

    /// Forward and backward pass. Gradients are added into `grads`; returns
    /// the loss. Dropout is active when `rng` is given.
    pub fn loss_and_grad(
        &self,
        ids: &[TokenId],
        targets: &[Target<T>],
        grads: &mut Params<T>,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<f64> {
        let cache = self.forward_train(ids, rng)?;
        self.check_targets(cache.len, targets)?;
        let cfg = &self.config;
        let (d, f, v, heads) = (cfg.embed_dim, cfg.ffn_dim, cfg.vocab_size, cfg.heads);
        let dh = cfg.head_dim();
        let len = cache.len;
        let scale = T::one() / T::lit(dh as f64).sqrt();
        let p = &self.params;

        // Output projection and softmax cross-entropy.
        let (zsel, mut logits) = self.target_logits(&cache, targets);
        let mut total = 0.0;
        for (r, t) in targets.iter().enumerate() {
            let row = &mut logits[r * v..(r + 1) * v];
            let nll = softmax_nll(row, t.token as usize);
            total += (t.coef * nll).to_f64().unwrap();
            // row now holds probabilities
            row[t.token as usize] -= T::one();
            row.iter_mut().for_each(|x| *x *= t.coef);
        }
        let head = p.lm_head_index();
        matmul(&zsel, &logits, grads.get_mut(head), d, targets.len(), v, true, false, true);
        let mut dzsel = vec![T::zero(); targets.len() * d];
        matmul(&logits, p.get(head), &mut dzsel, targets.len(), v, d, false, true, false);
        let mut dz = vec![T::zero(); len * d];
        for (r, t) in targets.iter().enumerate() {
            axpy(T::one(), &dzsel[r * d..(r + 1) * d], &mut dz[t.position * d..(t.position + 1) * d]);
        }

        let base = 2 + cfg.layers * PER_LAYER;
        let mut dx = {
            let (gf, _) = p.ln_f();
            let (dg, db) = two_mut(&mut grads.tensors, base, base + 1);
            layer_norm_backward(&dz, &cache.ln_f, gf, dg, db, d)
        };

        for l in (0..cfg.layers).rev() {
            let c = &cache.layers[l];
            let gi = |k: usize| 2 + l * PER_LAYER + k;

            // Feed-forward branch.
            let mut dy = dx.clone();
            apply_mask(&mut dy, &c.drop_ffn);
            matmul(&c.g, &dy, grads.get_mut(gi(OUT_W)), f, len, d, true, false, true);
            bias_grad(&dy, grads.layer_mut(l, OUT_B));
            let mut dg = vec![T::zero(); len * f];
            matmul(&dy, p.layer(l, OUT_W), &mut dg, len, d, f, false, true, false);
            for (g, h) in dg.iter_mut().zip(&c.h) {
                *g *= gelu_grad(*h);
            }
            matmul(&c.m, &dg, grads.get_mut(gi(FC_W)), d, len, f, true, false, true);
            bias_grad(&dg, grads.layer_mut(l, FC_B));
            let mut dm = vec![T::zero(); len * d];
            matmul(&dg, p.layer(l, FC_W), &mut dm, len, f, d, false, true, false);
            let dmid = {
                let (dgain, dbias) = two_mut(&mut grads.tensors, gi(LN2_G), gi(LN2_B));
                layer_norm_backward(&dm, &c.ln2, p.layer(l, LN2_G), dgain, dbias, d)
            };
            dx.iter_mut().zip(&dmid).for_each(|(a, b)| *a += *b);

            // Attention branch.
            let mut dout = dx.clone();
            apply_mask(&mut dout, &c.drop_attn);
            matmul(&c.ctx, &dout, grads.get_mut(gi(PROJ_W)), d, len, d, true, false, true);
            bias_grad(&dout, grads.layer_mut(l, PROJ_B));
            let mut dctx = vec![T::zero(); len * d];
            matmul(&dout, p.layer(l, PROJ_W), &mut dctx, len, d, d, false, true, false);

            let mut dqkv = vec![T::zero(); len * 3 * d];
            let mut dp = vec![T::zero(); len];
            for h in 0..heads {
                for i in 0..len {
                    let probs = &c.probs[(h * len + i) * len..(h * len + i) * len + i + 1];
                    let dc = &dctx[i * d + h * dh..i * d + (h + 1) * dh];
                    let mut weighted = T::zero();
                    for j in 0..=i {
                        let vj = &c.qkv[j * 3 * d + 2 * d + h * dh..j * 3 * d + 2 * d + (h + 1) * dh];
                        dp[j] = dot(dc, vj);
                        weighted += dp[j] * probs[j];
                        let dv = &mut dqkv[j * 3 * d + 2 * d + h * dh..j * 3 * d + 2 * d + (h + 1) * dh];
                        axpy(probs[j], dc, dv);
                    }
                    let qi_off = i * 3 * d + h * dh;
                    for j in 0..=i {
                        let ds = probs[j] * (dp[j] - weighted) * scale;
                        if ds == T::zero() {
                            continue;
                        }
                        let k_off = j * 3 * d + d + h * dh;
                        for e in 0..dh {
                            let kv = c.qkv[k_off + e];
                            let qv = c.qkv[qi_off + e];
                            dqkv[qi_off + e] += ds * kv;
                            dqkv[k_off + e] += ds * qv;
                        }
                    }
                }
            }
            matmul(&c.a, &dqkv, grads.get_mut(gi(QKV_W)), d, len, 3 * d, true, false, true);
            bias_grad(&dqkv, grads.layer_mut(l, QKV_B));
            let mut da = vec![T::zero(); len * d];
            matmul(&dqkv, p.layer(l, QKV_W), &mut da, len, 3 * d, d, false, true, false);
            let din = {
                let (dgain, dbias) = two_mut(&mut grads.tensors, gi(LN1_G), gi(LN1_B));
                layer_norm_backward(&da, &c.ln1, p.layer(l, LN1_G), dgain, dbias, d)
            };
            dx.iter_mut().zip(&din).for_each(|(a, b)| *a += *b);
        }

        apply_mask(&mut dx, &cache.drop_emb);
        let (dtok, dpos) = two_mut(&mut grads.tensors, 0, 1);
        for (i, &id) in ids.iter().enumerate() {
            let row = &dx[i * d..(i + 1) * d];
            axpy(T::one(), row, &mut dtok[id as usize * d..(id as usize + 1) * d]);
            axpy(T::one(), row, &mut dpos[i * d..(i + 1) * d]);
        }
        Ok(total)
    }

    /// Feeds `ids` after the cached prefix and returns logits for the new
    /// positions (all of them, or only the last when `all` is false).
    pub fn decode_step(&self, cache: &mut KvCache<T>, ids: &[TokenId], all: bool) -> Result<Vec<T>> {
        let offset = cache.len;
        self.check_ids(ids, offset)?;
        if ids.is_empty() {
            return Ok(Vec::new());
        }
        let cfg = &self.config;
        let (d, f, heads, v) = (cfg.embed_dim, cfg.ffn_dim, cfg.heads, cfg.vocab_size);
        let dh = cfg.head_dim();
        let n = ids.len();
        let scale = T::one() / T::lit(dh as f64).sqrt();
        let p = &self.params;

        let mut x = self.embed(ids, offset);
        let mut a = vec![T::zero(); n * d];
        let mut qkv = vec![T::zero(); n * 3 * d];
        let mut ctx = vec![T::zero(); n * d];
        let mut o = vec![T::zero(); n * d];
        let mut hbuf = vec![T::zero(); n * f];
        let mut scores = vec![T::zero(); offset + n];
        for l in 0..cfg.layers {
            layer_norm(&x, p.layer(l, LN1_G), p.layer(l, LN1_B), d, &mut a);
            matmul(&a, p.layer(l, QKV_W), &mut qkv, n, d, 3 * d, false, false, false);
            add_bias(&mut qkv, p.layer(l, QKV_B));
            for r in 0..n {
                cache.keys[l].extend_from_slice(&qkv[r * 3 * d + d..r * 3 * d + 2 * d]);
                cache.values[l].extend_from_slice(&qkv[r * 3 * d + 2 * d..r * 3 * d + 3 * d]);
            }
            let keys = &cache.keys[l];
            let values = &cache.values[l];
            ctx.iter_mut().for_each(|c| *c = T::zero());
            for h in 0..heads {
                for r in 0..n {
                    let visible = offset + r + 1;
                    let q = &qkv[r * 3 * d + h * dh..r * 3 * d + (h + 1) * dh];
                    let mut max = T::neg_infinity();
                    for (j, s) in scores[..visible].iter_mut().enumerate() {
                        *s = dot(q, &keys[j * d + h * dh..j * d + (h + 1) * dh]) * scale;
                        max = max.max(*s);
                    }
                    let mut sum = T::zero();
                    for s in scores[..visible].iter_mut() {
                        *s = (*s - max).exp();
                        sum += *s;
                    }
                    let out = &mut ctx[r * d + h * dh..r * d + (h + 1) * dh];
                    for (j, s) in scores[..visible].iter().enumerate() {
                        axpy(*s / sum, &values[j * d + h * dh..j * d + (h + 1) * dh], out);
                    }
                }
            }
            matmul(&ctx, p.layer(l, PROJ_W), &mut o, n, d, d, false, false, false);
            add_bias(&mut o, p.layer(l, PROJ_B));
            x.iter_mut().zip(&o).for_each(|(xv, ov)| *xv += *ov);

            layer_norm(&x, p.layer(l, LN2_G), p.layer(l, LN2_B), d, &mut a);
            matmul(&a, p.layer(l, FC_W), &mut hbuf, n, d, f, false, false, false);
            add_bias(&mut hbuf, p.layer(l, FC_B));
            hbuf.iter_mut().for_each(|v| *v = gelu(*v));
            matmul(&hbuf, p.layer(l, OUT_W), &mut o, n, f, d, false, false, false);
            add_bias(&mut o, p.layer(l, OUT_B));
            x.iter_mut().zip(&o).for_each(|(xv, ov)| *xv += *ov);
        }
        cache.len += n;

        let rows = if all { 0..n } else { n - 1..n };
        let xs = &x[rows.start * d..rows.end * d];
        let (gf, bf) = p.ln_f();
        let mut z = vec![T::zero(); xs.len()];
        layer_norm(xs, gf, bf, d, &mut z);
        let mut logits = vec![T::zero(); rows.len() * v];
        matmul(&z, p.get(p.lm_head_index()), &mut logits, rows.len(), d, v, false, false, false);
        Ok(logits)
    }

    /// Next-token distributions at every position of `ids`.
    pub fn forward(&self, ids: &[TokenId]) -> Result<Vec<Vec<T>>> {
        let mut cache = KvCache::new(self.config.layers);
        let logits = self.decode_step(&mut cache, ids, true)?;
        let v = self.config.vocab_size;
        Ok(logits
            .chunks(v)
            .map(|row| {
                let mut row = row.to_vec();
                softmax_in_place(&mut row);
                row
            })
            .collect())
    }
}

/// Borrows two distinct tensors mutably.
fn two_mut<T>(tensors: &mut [Tensor<T>], a: usize, b: usize) -> (&mut [T], &mut [T]) {
    assert!(a < b);
    let (left, right) = tensors.split_at_mut(b);
    (&mut left[a].data, &mut right[0].data)
}

pub fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    row.iter_mut().for_each(|x| *x /= sum);
}

/// Replaces logits by probabilities and returns `−log p[target]`.
fn softmax_nll<T: Scalar>(row: &mut [T], target: usize) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in row.iter() {
        sum += (*x - max).exp();
    }
    let nll = sum.ln() + max - row[target];
    for x in row.iter_mut() {
        *x = (*x - max).exp() / sum;
    }
    nll
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig {
            layers: 2,
            heads: 2,
            embed_dim: 8,
            ffn_dim: 16,
            max_seq_len: 32,
            dropout: 0.0,
            vocab_size: 11,
        }
    }

    #[test]
    fn layout_and_classes() {
        let p = Params::<f32>::zeros(&cfg());
        assert_eq!(p.tensors.len(), 2 + 2 * PER_LAYER + 3);
        assert_eq!(ParamClass::of("tok_emb"), ParamClass::Embedding);
        assert_eq!(ParamClass::of("layers.0.attn.qkv.weight"), ParamClass::Attention);
        assert_eq!(ParamClass::of("layers.1.ffn.fc.bias"), ParamClass::FeedForward);
        assert_eq!(ParamClass::of("layers.1.ln2.gain"), ParamClass::LayerNorm);
        assert_eq!(ParamClass::of("ln_f.bias"), ParamClass::LayerNorm);
        assert_eq!(ParamClass::of("lm_head.weight"), ParamClass::OutputProjection);
    }

    #[test]
    fn distributions_are_normalized() {
        let m = Transformer::<f64>::new(cfg(), 3).unwrap();
        let out = m.forward(&[1, 4, 2, 9]).unwrap();
        assert_eq!(out.len(), 4);
        for row in &out {
            assert_eq!(row.len(), 11);
            assert!(row.iter().all(|&p| p >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        assert_eq!(m.forward(&[5]).unwrap().len(), 1);
    }

    #[test]
    fn causal_prefix_is_bitwise_stable() {
        let m = Transformer::<f32>::new(cfg(), 4).unwrap();
        let ids = [1, 2, 3, 4, 5, 6];
        let base = m.forward(&ids).unwrap();
        let mut changed = ids;
        changed[4] = 9;
        let other = m.forward(&changed).unwrap();
        for i in 0..4 {
            assert_eq!(base[i], other[i], "position {i}");
        }
        assert_ne!(base[4], other[4]);
    }

    #[test]
    fn incremental_decoding_matches_full_forward() {
        let m = Transformer::<f64>::new(cfg(), 5).unwrap();
        let ids = [3, 1, 4, 1, 5, 9, 2, 6];
        let full = m.forward(&ids).unwrap();
        let mut cache = KvCache::new(2);
        m.decode_step(&mut cache, &ids[..5], false).unwrap();
        for (i, &id) in ids.iter().enumerate().skip(5) {
            let mut logits = m.decode_step(&mut cache, &[id], false).unwrap();
            softmax_in_place(&mut logits);
            for (a, b) in logits.iter().zip(&full[i]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert_eq!(cache.len(), ids.len());
    }

    #[test]
    fn training_and_inference_paths_agree() {
        let m = Transformer::<f64>::new(cfg(), 6).unwrap();
        let ids = [3, 1, 4, 1, 5];
        let probs = m.forward(&ids).unwrap();
        let targets: Vec<(usize, TokenId)> = (0..4).map(|i| (i, ids[i + 1])).collect();
        let nll = m.nll_terms(&ids, &targets).unwrap();
        for (i, &(pos, tok)) in targets.iter().enumerate() {
            assert!((nll[i] + probs[pos][tok as usize].ln()).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_overlong_sequences() {
        let m = Transformer::<f32>::new(cfg(), 1).unwrap();
        let ids = vec![1; 33];
        assert!(matches!(m.forward(&ids), Err(Error::SequenceTooLong { len: 33, max: 32 })));
    }

    #[test]
    fn dropout_changes_loss_only_when_enabled() {
        let mut c = cfg();
        c.dropout = 0.5;
        let m = Transformer::<f64>::new(c, 2).unwrap();
        let ids = [1, 2, 3, 4];
        let targets = [Target { position: 2, token: 4, coef: 1.0 }];
        let mut g = Params::zeros(&m.config);
        let clean = m.loss(&ids, &targets).unwrap();
        let same = m.loss_and_grad(&ids, &targets, &mut g, None).unwrap();
        assert_eq!(clean, same);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let noisy = m.loss_and_grad(&ids, &targets, &mut g, Some(&mut rng)).unwrap();
        assert_ne!(clean, noisy);
    }
}
