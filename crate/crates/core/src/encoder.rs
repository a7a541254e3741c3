//! Contextual token encoder trained with a masked-token objective.
//!
//! Each token id is looked up in an embedding table, read left-to-right and
//! right-to-left by two tanh recurrent layers, and the concatenated states
//! are projected back to `embed_dim`. The projected vector is the word
//! embedding; its mean over a line (unit-normalised) is the sentence
//! embedding. During training, masked positions are predicted with a
//! softmax over the vocabulary whose weights are tied to the embedding table.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::modelfile;

const MODULE: &str = "encoder";
const MAGIC: &[u8] = b"LSTMP-ENC";
const FORMAT_VERSION: u16 = 1;
const CLIP_NORM: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub mask_probability: f64,
    pub max_vocab: usize,
    pub min_token_count: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            embed_dim: 64,
            hidden_dim: 128,
            epochs: 5,
            learning_rate: 0.01,
            mask_probability: 0.15,
            max_vocab: 20_000,
            min_token_count: 1,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::parameter(MODULE, m.to_string()));
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.epochs == 0 {
            return bad("embed_dim, hidden_dim and epochs must be at least 1");
        }
        if !(self.mask_probability > 0.0 && self.mask_probability < 1.0) {
            return bad("mask_probability must be in (0, 1)");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.max_vocab == 0 {
            return bad("max_vocab must be at least 1");
        }
        Ok(())
    }
}

/// Token vocabulary with two reserved ids after the real tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Vocab { tokens, index }
    }

    /// Real tokens, most frequent first.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn unknown_id(&self) -> u32 {
        self.tokens.len() as u32
    }

    pub fn mask_id(&self) -> u32 {
        self.tokens.len() as u32 + 1
    }

    /// Number of ids including the reserved ones.
    pub fn len(&self) -> usize {
        self.tokens.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or_else(|| self.unknown_id())
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }
}

/// Counts tokens, drops those below `min_token_count`, keeps the
/// `max_vocab` most frequent (ties broken lexicographically).
pub fn build_vocab(corpus: &Dataset, config: &EncoderConfig) -> Vocab {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for rec in &corpus.records {
        for t in &rec.tokens {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> =
        counts.into_iter().filter(|&(_, c)| c >= config.min_token_count).collect();
    ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(config.max_vocab);
    Vocab::from_tokens(ranked.into_iter().map(|(t, _)| t.to_string()).collect())
}

/// Every trainable tensor of the encoder. Also used as the gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub embeddings: Mat,
    pub fwd_in: Mat,
    pub fwd_rec: Mat,
    pub fwd_bias: Mat,
    pub bwd_in: Mat,
    pub bwd_rec: Mat,
    pub bwd_bias: Mat,
    pub proj: Mat,
    pub proj_bias: Mat,
    pub out_bias: Mat,
}

impl EncoderParams {
    fn init(vocab_size: usize, embed_dim: usize, hidden_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let (d, h) = (embed_dim, hidden_dim);
        EncoderParams {
            embeddings: Mat::uniform(vocab_size, d, (3.0 / d as f64).sqrt(), rng),
            fwd_in: Mat::glorot(h, d, rng),
            fwd_rec: Mat::glorot(h, h, rng),
            fwd_bias: Mat::zeros(h, 1),
            bwd_in: Mat::glorot(h, d, rng),
            bwd_rec: Mat::glorot(h, h, rng),
            bwd_bias: Mat::zeros(h, 1),
            proj: Mat::glorot(d, 2 * h, rng),
            proj_bias: Mat::zeros(d, 1),
            out_bias: Mat::zeros(vocab_size, 1),
        }
    }

    pub fn tensors(&self) -> [(&'static str, &Mat); 10] {
        [
            ("embeddings", &self.embeddings),
            ("fwd_in", &self.fwd_in),
            ("fwd_rec", &self.fwd_rec),
            ("fwd_bias", &self.fwd_bias),
            ("bwd_in", &self.bwd_in),
            ("bwd_rec", &self.bwd_rec),
            ("bwd_bias", &self.bwd_bias),
            ("proj", &self.proj),
            ("proj_bias", &self.proj_bias),
            ("out_bias", &self.out_bias),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Mat; 10] {
        [
            &mut self.embeddings,
            &mut self.fwd_in,
            &mut self.fwd_rec,
            &mut self.fwd_bias,
            &mut self.bwd_in,
            &mut self.bwd_rec,
            &mut self.bwd_bias,
            &mut self.proj,
            &mut self.proj_bias,
            &mut self.out_bias,
        ]
    }

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.tensors_mut().into_iter().for_each(Mat::fill_zero);
        z
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderTrainingMeta {
    pub config: EncoderConfig,
    /// Mean masked-token loss before the first update.
    pub initial_loss: f64,
    pub epoch_losses: Vec<f64>,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    pub vocab: Vocab,
    pub params: EncoderParams,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub training_meta: EncoderTrainingMeta,
}

/// A line prepared for the masked objective: `input` has masked positions
/// replaced by the MASK id, `targets` lists `(position, original id)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedLine {
    pub input: Vec<u32>,
    pub targets: Vec<(usize, u32)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SentenceEmbedding {
    pub vector: Vec<f64>,
    pub source_id: usize,
}

/// Forward activations of one sequence, kept for backpropagation.
struct Trace {
    fwd: Vec<Vec<f64>>,
    bwd: Vec<Vec<f64>>,
    out: Vec<Vec<f64>>,
}

/// Positions to mask in a line of `len` tokens: each independently with
/// probability `p`, and one uniformly chosen position if none came up.
pub fn sample_mask_positions(len: usize, p: f64, rng: &mut impl Rng) -> Vec<usize> {
    let mut picked: Vec<usize> = (0..len).filter(|_| rng.gen_bool(p)).collect();
    if picked.is_empty() && len > 0 {
        picked.push(rng.gen_range(0..len));
    }
    picked
}

pub fn mask_line(ids: &[u32], positions: &[usize], mask_id: u32) -> MaskedLine {
    let mut input = ids.to_vec();
    let targets = positions
        .iter()
        .map(|&p| {
            input[p] = mask_id;
            (p, ids[p])
        })
        .collect();
    MaskedLine { input, targets }
}

impl EncoderModel {
    /// Freshly initialised, untrained model over `vocab`.
    pub fn initialize(vocab: Vocab, config: &EncoderConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = EncoderParams::init(vocab.len(), config.embed_dim, config.hidden_dim, &mut rng);
        Ok(EncoderModel {
            vocab,
            params,
            embed_dim: config.embed_dim,
            hidden_dim: config.hidden_dim,
            training_meta: EncoderTrainingMeta {
                config: config.clone(),
                initial_loss: 0.0,
                epoch_losses: Vec::new(),
                final_loss: 0.0,
            },
        })
    }

    /// Zeroes both recurrent transition matrices so each output depends only
    /// on its own token. Useful as a context-free baseline.
    pub fn zero_recurrence(&mut self) {
        self.params.fwd_rec.fill_zero();
        self.params.bwd_rec.fill_zero();
    }

    fn forward(&self, ids: &[u32]) -> Trace {
        let p = &self.params;
        let (d, h, n) = (self.embed_dim, self.hidden_dim, ids.len());

        let mut fwd = Vec::with_capacity(n);
        let mut prev = vec![0.0; h];
        for &id in ids {
            let mut a = p.fwd_bias.data.clone();
            p.fwd_in.matvec_acc(p.embeddings.row(id as usize), &mut a);
            p.fwd_rec.matvec_acc(&prev, &mut a);
            a.iter_mut().for_each(|x| *x = x.tanh());
            prev.clone_from(&a);
            fwd.push(a);
        }

        let mut bwd = vec![Vec::new(); n];
        let mut next = vec![0.0; h];
        for t in (0..n).rev() {
            let mut a = p.bwd_bias.data.clone();
            p.bwd_in.matvec_acc(p.embeddings.row(ids[t] as usize), &mut a);
            p.bwd_rec.matvec_acc(&next, &mut a);
            a.iter_mut().for_each(|x| *x = x.tanh());
            next.clone_from(&a);
            bwd[t] = a;
        }

        let mut out = Vec::with_capacity(n);
        let mut cat = vec![0.0; 2 * h];
        for t in 0..n {
            cat[..h].copy_from_slice(&fwd[t]);
            cat[h..].copy_from_slice(&bwd[t]);
            let mut o = p.proj_bias.data.clone();
            p.proj.matvec_acc(&cat, &mut o);
            o.iter_mut().for_each(|x| *x = x.tanh());
            debug_assert_eq!(o.len(), d);
            out.push(o);
        }
        Trace { fwd, bwd, out }
    }

    /// Masked-token cross-entropy of one line (mean over its targets) and,
    /// if `grads` is given, its gradient accumulated into it.
    fn line_loss(&self, line: &MaskedLine, grads: Option<&mut EncoderParams>) -> (f64, usize) {
        if line.targets.is_empty() {
            return (0.0, 0);
        }
        let p = &self.params;
        let v = self.vocab.len();
        let trace = self.forward(&line.input);
        let scale = 1.0 / line.targets.len() as f64;

        let mut loss = 0.0;
        let mut correct = 0;
        let mut logits = vec![0.0; v];
        let mut logp = vec![0.0; v];
        let mut d_out: Vec<Vec<f64>> = Vec::new();
        if grads.is_some() {
            d_out = vec![vec![0.0; self.embed_dim]; line.input.len()];
        }
        let mut grads = grads;

        for &(pos, target) in &line.targets {
            logits.copy_from_slice(&p.out_bias.data);
            p.embeddings.matvec_acc(&trace.out[pos], &mut logits);
            linalg::log_softmax(&logits, &mut logp);
            loss -= logp[target as usize] * scale;
            let best = argmax(&logits);
            if best == target as usize {
                correct += 1;
            }
            if let Some(g) = grads.as_deref_mut() {
                // dlogits = (softmax - onehot) / |targets|
                let mut dl: Vec<f64> = logp.iter().map(|lp| lp.exp() * scale).collect();
                dl[target as usize] -= scale;
                g.embeddings.add_outer(&dl, &trace.out[pos]);
                g.out_bias.add_vec(&dl);
                p.embeddings.matvec_t_acc(&dl, &mut d_out[pos]);
            }
        }

        if let Some(g) = grads {
            self.backward(&line.input, &trace, &d_out, g);
        }
        (loss, correct)
    }

    /// Backpropagates output-embedding gradients `d_out` through the
    /// projection and both recurrent directions.
    fn backward(&self, ids: &[u32], trace: &Trace, d_out: &[Vec<f64>], g: &mut EncoderParams) {
        let p = &self.params;
        let (h, n) = (self.hidden_dim, ids.len());
        let mut d_fwd = vec![vec![0.0; h]; n];
        let mut d_bwd = vec![vec![0.0; h]; n];
        let mut d_x = vec![vec![0.0; self.embed_dim]; n];
        let mut cat = vec![0.0; 2 * h];
        let mut d_cat = vec![0.0; 2 * h];

        for t in 0..n {
            let da: Vec<f64> =
                d_out[t].iter().zip(&trace.out[t]).map(|(g, o)| g * (1.0 - o * o)).collect();
            if da.iter().all(|&x| x == 0.0) {
                continue;
            }
            cat[..h].copy_from_slice(&trace.fwd[t]);
            cat[h..].copy_from_slice(&trace.bwd[t]);
            g.proj.add_outer(&da, &cat);
            g.proj_bias.add_vec(&da);
            d_cat.iter_mut().for_each(|x| *x = 0.0);
            p.proj.matvec_t_acc(&da, &mut d_cat);
            linalg::axpy(1.0, &d_cat[..h], &mut d_fwd[t]);
            linalg::axpy(1.0, &d_cat[h..], &mut d_bwd[t]);
        }

        let zeros = vec![0.0; h];
        let mut carry = vec![0.0; h];
        for t in (0..n).rev() {
            let dz: Vec<f64> = d_fwd[t]
                .iter()
                .zip(&carry)
                .zip(&trace.fwd[t])
                .map(|((a, c), s)| (a + c) * (1.0 - s * s))
                .collect();
            let prev = if t > 0 { &trace.fwd[t - 1] } else { &zeros };
            g.fwd_in.add_outer(&dz, p.embeddings.row(ids[t] as usize));
            g.fwd_rec.add_outer(&dz, prev);
            g.fwd_bias.add_vec(&dz);
            carry.iter_mut().for_each(|x| *x = 0.0);
            p.fwd_rec.matvec_t_acc(&dz, &mut carry);
            p.fwd_in.matvec_t_acc(&dz, &mut d_x[t]);
        }

        carry.iter_mut().for_each(|x| *x = 0.0);
        for t in 0..n {
            let dz: Vec<f64> = d_bwd[t]
                .iter()
                .zip(&carry)
                .zip(&trace.bwd[t])
                .map(|((a, c), s)| (a + c) * (1.0 - s * s))
                .collect();
            let next = if t + 1 < n { &trace.bwd[t + 1] } else { &zeros };
            g.bwd_in.add_outer(&dz, p.embeddings.row(ids[t] as usize));
            g.bwd_rec.add_outer(&dz, next);
            g.bwd_bias.add_vec(&dz);
            carry.iter_mut().for_each(|x| *x = 0.0);
            p.bwd_rec.matvec_t_acc(&dz, &mut carry);
            p.bwd_in.matvec_t_acc(&dz, &mut d_x[t]);
        }

        for (t, dx) in d_x.iter().enumerate() {
            linalg::axpy(1.0, dx, g.embeddings.row_mut(ids[t] as usize));
        }
    }

    /// Sum of per-line masked losses over `lines` and its exact gradient.
    pub fn masked_loss_and_grad(&self, lines: &[MaskedLine]) -> (f64, EncoderParams) {
        let mut grads = self.params.zeros_like();
        let loss = lines.iter().map(|l| self.line_loss(l, Some(&mut grads)).0).sum();
        (loss, grads)
    }

    pub fn masked_loss(&self, lines: &[MaskedLine]) -> f64 {
        lines.iter().map(|l| self.line_loss(l, None).0).sum()
    }

    /// Mean per-line loss and fraction of masked positions predicted exactly.
    pub fn masked_evaluation(&self, lines: &[MaskedLine]) -> (f64, f64) {
        let (mut loss, mut correct, mut total) = (0.0, 0, 0);
        for l in lines {
            let (lo, c) = self.line_loss(l, None);
            loss += lo;
            correct += c;
            total += l.targets.len();
        }
        (loss / lines.len().max(1) as f64, correct as f64 / total.max(1) as f64)
    }

    /// One contextual vector of length `embed_dim` per token.
    pub fn embed_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> Result<Vec<Vec<f64>>> {
        if tokens.is_empty() {
            return Err(Error::input(MODULE, "cannot embed an empty token list"));
        }
        Ok(self.forward(&self.vocab.encode(tokens)).out)
    }

    /// Mean of the token vectors, L2-normalised.
    pub fn embed_sentence<S: AsRef<str>>(&self, tokens: &[S], source_id: usize) -> Result<SentenceEmbedding> {
        let vectors = self.embed_tokens(tokens)?;
        let mut mean = vec![0.0; self.embed_dim];
        for v in &vectors {
            linalg::axpy(1.0, v, &mut mean);
        }
        let n = vectors.len() as f64;
        mean.iter_mut().for_each(|x| *x /= n);
        let norm = linalg::l2_norm(&mean);
        if norm > 0.0 {
            mean.iter_mut().for_each(|x| *x /= norm);
        } else {
            // degenerate all-zero mean; pick a fixed unit direction
            mean[0] = 1.0;
        }
        Ok(SentenceEmbedding { vector: mean, source_id })
    }

    pub fn is_finite(&self) -> bool {
        self.params.tensors().iter().all(|(_, m)| m.is_finite())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        modelfile::write_file(MODULE, path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&modelfile::read_file(MODULE, path)?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = FileHeader {
            embed_dim: self.embed_dim,
            hidden_dim: self.hidden_dim,
            vocab: self.vocab.tokens.clone(),
            training_meta: self.training_meta.clone(),
        };
        let json = serde_json::to_string(&header).expect("header serialises");
        modelfile::encode(MAGIC, FORMAT_VERSION, &json, &self.params.tensors())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut c = modelfile::decode(MODULE, MAGIC, FORMAT_VERSION, bytes)?;
        let header: FileHeader = serde_json::from_str(&c.header)
            .map_err(|e| Error::format(MODULE, format!("bad header: {e}")))?;
        let vocab = Vocab::from_tokens(header.vocab);
        let (v, d, h) = (vocab.len(), header.embed_dim, header.hidden_dim);
        let mut t = |name: &str, r, k| c.tensor(MODULE, name, r, k);
        let params = EncoderParams {
            embeddings: t("embeddings", v, d)?,
            fwd_in: t("fwd_in", h, d)?,
            fwd_rec: t("fwd_rec", h, h)?,
            fwd_bias: t("fwd_bias", h, 1)?,
            bwd_in: t("bwd_in", h, d)?,
            bwd_rec: t("bwd_rec", h, h)?,
            bwd_bias: t("bwd_bias", h, 1)?,
            proj: t("proj", d, 2 * h)?,
            proj_bias: t("proj_bias", d, 1)?,
            out_bias: t("out_bias", v, 1)?,
        };
        Ok(EncoderModel {
            vocab,
            params,
            embed_dim: d,
            hidden_dim: h,
            training_meta: header.training_meta,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct FileHeader {
    embed_dim: usize,
    hidden_dim: usize,
    vocab: Vec<String>,
    training_meta: EncoderTrainingMeta,
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Trains an encoder on `corpus` with per-line stochastic gradient descent.
///
/// Every epoch re-samples masks and visits lines in a seeded random order.
/// Parameters are rounded to `f32` at the end so saved models reproduce
/// embeddings exactly.
pub fn train_encoder(corpus: &Dataset, config: &EncoderConfig) -> Result<EncoderModel> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::input(MODULE, "cannot train on an empty corpus"));
    }
    let vocab = build_vocab(corpus, config);
    let mut model = EncoderModel::initialize(vocab, config)?;
    let encoded: Vec<Vec<u32>> =
        corpus.records.iter().map(|r| model.vocab.encode(&r.tokens)).collect();
    let mask_id = model.vocab.mask_id();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed));
    let draw = |rng: &mut ChaCha8Rng| -> Vec<MaskedLine> {
        encoded
            .iter()
            .map(|ids| {
                let pos = sample_mask_positions(ids.len(), config.mask_probability, rng);
                mask_line(ids, &pos, mask_id)
            })
            .collect()
    };

    let probe = draw(&mut rng);
    let initial_loss = model.masked_loss(&probe) / probe.len() as f64;

    let mut order: Vec<usize> = (0..encoded.len()).collect();
    let mut grads = model.params.zeros_like();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let lines = draw(&mut rng);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            grads.tensors_mut().into_iter().for_each(Mat::fill_zero);
            total += model.line_loss(&lines[i], Some(&mut grads)).0;
            sgd_step(&mut model.params, &mut grads, config.learning_rate);
        }
        epoch_losses.push(total / lines.len() as f64);
    }

    model.params.tensors_mut().into_iter().for_each(Mat::narrow_to_f32);
    if !model.is_finite() {
        return Err(Error::consistency(MODULE, "training diverged to non-finite parameters"));
    }
    model.training_meta = EncoderTrainingMeta {
        config: config.clone(),
        initial_loss,
        final_loss: *epoch_losses.last().unwrap(),
        epoch_losses,
    };
    Ok(model)
}

fn sgd_step(params: &mut EncoderParams, grads: &mut EncoderParams, lr: f64) {
    let mut gs = grads.tensors_mut();
    linalg::clip_global_norm(&mut gs, CLIP_NORM);
    for (p, g) in params.tensors_mut().into_iter().zip(gs) {
        linalg::axpy(-lr, &g.data, &mut p.data);
    }
}
