//! TEMPLATE/VARIABLE word classifier over frozen contextual embeddings.

mod layers;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use layers::{Conv3, Gru};

use crate::encoder::EncoderModel;
use crate::error::{Error, Result};
use crate::labeler::{LabeledSentence, WordLabel};
use crate::linalg::{self, Mat};
use crate::modelfile;

const MODULE: &str = "tagger";
const MAGIC: &[u8] = b"LSTMP-TAG";
const FORMAT_VERSION: u16 = 1;
const CLIP_NORM: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    RecurrentBidir,
    RecurrentUnidir,
    Convolutional,
}

impl Architecture {
    pub const ALL: [Architecture; 3] =
        [Architecture::RecurrentBidir, Architecture::RecurrentUnidir, Architecture::Convolutional];

    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::RecurrentBidir => "recurrent_bidir",
            Architecture::RecurrentUnidir => "recurrent_unidir",
            Architecture::Convolutional => "convolutional",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "recurrent_bidir" | "bidir" | "lstm" => Ok(Architecture::RecurrentBidir),
            "recurrent_unidir" | "unidir" | "rnn" => Ok(Architecture::RecurrentUnidir),
            "convolutional" | "conv" | "cnn" => Ok(Architecture::Convolutional),
            other => Err(Error::parameter(MODULE, format!("unknown tagger architecture `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaggerConfig {
    pub architecture: Architecture,
    pub hidden_dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TaggerConfig {
    fn default() -> Self {
        TaggerConfig {
            architecture: Architecture::RecurrentBidir,
            hidden_dim: 64,
            epochs: 10,
            learning_rate: 0.1,
            seed: 0,
        }
    }
}

impl TaggerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.epochs == 0 {
            return Err(Error::parameter(MODULE, "hidden_dim and epochs must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::parameter(MODULE, "learning_rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Body {
    Bidir { fwd: Gru, bwd: Gru },
    Unidir { fwd: Gru },
    Conv(Conv3),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaggerParams {
    pub body: Body,
    /// 2 × feature_dim; row 0 is TEMPLATE, row 1 VARIABLE.
    pub out_w: Mat,
    pub out_b: Mat,
}

impl TaggerParams {
    fn init(arch: Architecture, input: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let (body, features) = match arch {
            Architecture::RecurrentBidir => {
                let fwd = Gru::init(input, hidden, rng);
                let bwd = Gru::init(input, hidden, rng);
                (Body::Bidir { fwd, bwd }, 2 * hidden)
            }
            Architecture::RecurrentUnidir => (Body::Unidir { fwd: Gru::init(input, hidden, rng) }, hidden),
            Architecture::Convolutional => (Body::Conv(Conv3::init(input, hidden, rng)), hidden),
        };
        TaggerParams { body, out_w: Mat::glorot(2, features, rng), out_b: Mat::zeros(2, 1) }
    }

    pub fn architecture(&self) -> Architecture {
        match self.body {
            Body::Bidir { .. } => Architecture::RecurrentBidir,
            Body::Unidir { .. } => Architecture::RecurrentUnidir,
            Body::Conv(_) => Architecture::Convolutional,
        }
    }

    pub fn tensors(&self) -> Vec<(String, &Mat)> {
        let mut out: Vec<(String, &Mat)> = Vec::new();
        match &self.body {
            Body::Bidir { fwd, bwd } => {
                out.extend(fwd.tensors().into_iter().map(|(n, m)| (format!("fwd.{n}"), m)));
                out.extend(bwd.tensors().into_iter().map(|(n, m)| (format!("bwd.{n}"), m)));
            }
            Body::Unidir { fwd } => {
                out.extend(fwd.tensors().into_iter().map(|(n, m)| (format!("fwd.{n}"), m)));
            }
            Body::Conv(c) => {
                out.extend(c.tensors().into_iter().map(|(n, m)| (format!("conv.{n}"), m)));
            }
        }
        out.push(("out_w".to_string(), &self.out_w));
        out.push(("out_b".to_string(), &self.out_b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Mat> {
        let mut out: Vec<&mut Mat> = Vec::new();
        match &mut self.body {
            Body::Bidir { fwd, bwd } => {
                out.extend(fwd.tensors_mut());
                out.extend(bwd.tensors_mut());
            }
            Body::Unidir { fwd } => out.extend(fwd.tensors_mut()),
            Body::Conv(c) => out.extend(c.tensors_mut()),
        }
        out.push(&mut self.out_w);
        out.push(&mut self.out_b);
        out
    }

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.tensors_mut().into_iter().for_each(Mat::fill_zero);
        z
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggerTrainingMeta {
    pub config: TaggerConfig,
    /// Mean per-token loss before the first update.
    pub initial_loss: f64,
    pub epoch_losses: Vec<f64>,
    pub final_loss: f64,
    /// Token accuracy on the training sentences after the last epoch.
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaggerModel {
    pub params: TaggerParams,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub training_meta: TaggerTrainingMeta,
}

/// Embedded inputs and class targets for one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggingExample {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<usize>,
}

enum Features {
    Bidir(Vec<layers::GruStep>, Vec<layers::GruStep>),
    Unidir(Vec<layers::GruStep>),
    Conv(Vec<Vec<f64>>),
}

impl Features {
    fn at(&self, t: usize) -> Vec<f64> {
        match self {
            Features::Bidir(f, b) => {
                let mut v = f[t].h.clone();
                v.extend_from_slice(&b[t].h);
                v
            }
            Features::Unidir(f) => f[t].h.clone(),
            Features::Conv(c) => c[t].clone(),
        }
    }
}

impl TaggerModel {
    pub fn initialize(input_dim: usize, config: &TaggerConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(TaggerModel {
            params: TaggerParams::init(config.architecture, input_dim, config.hidden_dim, &mut rng),
            input_dim,
            hidden_dim: config.hidden_dim,
            training_meta: TaggerTrainingMeta {
                config: config.clone(),
                initial_loss: 0.0,
                epoch_losses: Vec::new(),
                final_loss: 0.0,
                train_accuracy: 0.0,
            },
        })
    }

    pub fn architecture(&self) -> Architecture {
        self.params.architecture()
    }

    fn features(&self, xs: &[Vec<f64>]) -> Features {
        match &self.params.body {
            Body::Bidir { fwd, bwd } => Features::Bidir(fwd.forward(xs, false), bwd.forward(xs, true)),
            Body::Unidir { fwd } => Features::Unidir(fwd.forward(xs, false)),
            Body::Conv(c) => Features::Conv(c.forward(xs)),
        }
    }

    /// Two-class logits `[template, variable]` per position.
    pub fn logits(&self, xs: &[Vec<f64>]) -> Vec<[f64; 2]> {
        let feats = self.features(xs);
        (0..xs.len())
            .map(|t| {
                let mut l = self.params.out_b.data.clone();
                self.params.out_w.matvec_acc(&feats.at(t), &mut l);
                [l[0], l[1]]
            })
            .collect()
    }

    /// Mean token cross-entropy of one example and, optionally, its gradient.
    fn example_loss(&self, ex: &TaggingExample, grads: Option<&mut TaggerParams>) -> (f64, usize) {
        let n = ex.inputs.len();
        let feats = self.features(&ex.inputs);
        let scale = 1.0 / n as f64;
        let mut loss = 0.0;
        let mut correct = 0;
        let mut d_feat: Vec<Vec<f64>> = Vec::new();
        let want_grad = grads.is_some();
        let mut grads = grads;
        let mut logp = [0.0; 2];

        for t in 0..n {
            let f = feats.at(t);
            let mut l = self.params.out_b.data.clone();
            self.params.out_w.matvec_acc(&f, &mut l);
            linalg::log_softmax(&l, &mut logp);
            loss -= logp[ex.targets[t]] * scale;
            if decide(l[0], l[1]).class() == ex.targets[t] {
                correct += 1;
            }
            if let Some(g) = grads.as_deref_mut() {
                let mut dl = [logp[0].exp() * scale, logp[1].exp() * scale];
                dl[ex.targets[t]] -= scale;
                g.out_w.add_outer(&dl, &f);
                g.out_b.add_vec(&dl);
                let mut df = vec![0.0; f.len()];
                self.params.out_w.matvec_t_acc(&dl, &mut df);
                d_feat.push(df);
            }
        }

        if want_grad {
            let g = grads.unwrap();
            match (&self.params.body, &mut g.body, &feats) {
                (Body::Bidir { fwd, bwd }, Body::Bidir { fwd: gf, bwd: gb }, Features::Bidir(sf, sb)) => {
                    let h = fwd.hidden();
                    let d_f: Vec<Vec<f64>> = d_feat.iter().map(|d| d[..h].to_vec()).collect();
                    let d_b: Vec<Vec<f64>> = d_feat.iter().map(|d| d[h..].to_vec()).collect();
                    fwd.backward(&ex.inputs, sf, &d_f, false, gf);
                    bwd.backward(&ex.inputs, sb, &d_b, true, gb);
                }
                (Body::Unidir { fwd }, Body::Unidir { fwd: gf }, Features::Unidir(sf)) => {
                    fwd.backward(&ex.inputs, sf, &d_feat, false, gf);
                }
                (Body::Conv(c), Body::Conv(gc), Features::Conv(out)) => {
                    c.backward(&ex.inputs, out, &d_feat, gc);
                }
                _ => unreachable!("gradient buffer shares the model's architecture"),
            }
        }
        (loss, correct)
    }

    /// Sum of per-example mean losses and the exact gradient.
    pub fn loss_and_grad(&self, examples: &[TaggingExample]) -> (f64, TaggerParams) {
        let mut g = self.params.zeros_like();
        let loss = examples.iter().map(|e| self.example_loss(e, Some(&mut g)).0).sum();
        (loss, g)
    }

    pub fn loss(&self, examples: &[TaggingExample]) -> f64 {
        examples.iter().map(|e| self.example_loss(e, None).0).sum()
    }

    /// Labels for already-embedded inputs.
    pub fn predict(&self, xs: &[Vec<f64>]) -> Vec<WordLabel> {
        self.logits(xs).into_iter().map(|[t, v]| decide(t, v)).collect()
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
            architecture: self.architecture(),
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
            training_meta: self.training_meta.clone(),
        };
        let json = serde_json::to_string(&header).expect("header serialises");
        let tensors = self.params.tensors();
        let refs: Vec<(&str, &Mat)> = tensors.iter().map(|(n, m)| (n.as_str(), *m)).collect();
        modelfile::encode(MAGIC, FORMAT_VERSION, &json, &refs)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut c = modelfile::decode(MODULE, MAGIC, FORMAT_VERSION, bytes)?;
        let header: FileHeader = serde_json::from_str(&c.header)
            .map_err(|e| Error::format(MODULE, format!("bad header: {e}")))?;
        let (d, h) = (header.input_dim, header.hidden_dim);
        let mut gru = |prefix: &str| -> Result<Gru> {
            let mut t = |name: &str, r, k| c.tensor(MODULE, &format!("{prefix}.{name}"), r, k);
            Ok(Gru {
                w_z: t("w_z", h, d)?,
                u_z: t("u_z", h, h)?,
                b_z: t("b_z", h, 1)?,
                w_r: t("w_r", h, d)?,
                u_r: t("u_r", h, h)?,
                b_r: t("b_r", h, 1)?,
                w_n: t("w_n", h, d)?,
                u_n: t("u_n", h, h)?,
                b_n: t("b_n", h, 1)?,
            })
        };
        let (body, features) = match header.architecture {
            Architecture::RecurrentBidir => {
                let fwd = gru("fwd")?;
                let bwd = gru("bwd")?;
                (Body::Bidir { fwd, bwd }, 2 * h)
            }
            Architecture::RecurrentUnidir => (Body::Unidir { fwd: gru("fwd")? }, h),
            Architecture::Convolutional => {
                let kernel = c.tensor(MODULE, "conv.kernel", h, 3 * d)?;
                let bias = c.tensor(MODULE, "conv.bias", h, 1)?;
                (Body::Conv(Conv3 { kernel, bias }), h)
            }
        };
        let out_w = c.tensor(MODULE, "out_w", 2, features)?;
        let out_b = c.tensor(MODULE, "out_b", 2, 1)?;
        Ok(TaggerModel {
            params: TaggerParams { body, out_w, out_b },
            input_dim: d,
            hidden_dim: h,
            training_meta: header.training_meta,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct FileHeader {
    architecture: Architecture,
    input_dim: usize,
    hidden_dim: usize,
    training_meta: TaggerTrainingMeta,
}

/// Argmax over `[template, variable]`; ties go to TEMPLATE.
fn decide(template_logit: f64, variable_logit: f64) -> WordLabel {
    if variable_logit > template_logit {
        WordLabel::Variable
    } else {
        WordLabel::Template
    }
}

/// Embeds every sentence with the frozen encoder and checks label arity.
pub fn prepare_examples(labeled: &[LabeledSentence], encoder: &EncoderModel) -> Result<Vec<TaggingExample>> {
    labeled
        .iter()
        .map(|s| {
            if s.tokens.is_empty() {
                return Err(Error::input(MODULE, format!("sentence {} is empty", s.record_id)));
            }
            if s.tokens.len() != s.labels.len() {
                return Err(Error::consistency(
                    MODULE,
                    format!(
                        "sentence {} has {} tokens but {} labels",
                        s.record_id,
                        s.tokens.len(),
                        s.labels.len()
                    ),
                ));
            }
            Ok(TaggingExample {
                inputs: encoder.embed_tokens(&s.tokens)?,
                targets: s.labels.iter().map(|l| l.class()).collect(),
            })
        })
        .collect()
}

/// Trains a tagger on pseudo-labelled sentences embedded by `encoder`.
pub fn train_tagger(
    labeled: &[LabeledSentence],
    encoder: &EncoderModel,
    config: &TaggerConfig,
) -> Result<TaggerModel> {
    config.validate()?;
    if labeled.is_empty() {
        return Err(Error::input(MODULE, "no labelled sentences to train on"));
    }
    let examples = prepare_examples(labeled, encoder)?;
    train_on_examples(&examples, encoder.embed_dim, config)
}

/// Per-sentence stochastic gradient descent in a seeded order.
pub fn train_on_examples(
    examples: &[TaggingExample],
    input_dim: usize,
    config: &TaggerConfig,
) -> Result<TaggerModel> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::input(MODULE, "no training examples"));
    }
    let mut model = TaggerModel::initialize(input_dim, config)?;
    let total_tokens: usize = examples.iter().map(|e| e.targets.len()).sum();
    let token_loss = |m: &TaggerModel| -> (f64, usize) {
        examples.iter().fold((0.0, 0), |(l, c), e| {
            let (el, ec) = m.example_loss(e, None);
            (l + el * e.targets.len() as f64, c + ec)
        })
    };
    let initial_loss = token_loss(&model).0 / total_tokens as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x7a99));
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut grads = model.params.zeros_like();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for &i in &order {
            grads.tensors_mut().into_iter().for_each(Mat::fill_zero);
            let (l, _) = model.example_loss(&examples[i], Some(&mut grads));
            total += l * examples[i].targets.len() as f64;
            let mut gs = grads.tensors_mut();
            linalg::clip_global_norm(&mut gs, CLIP_NORM);
            for (p, g) in model.params.tensors_mut().into_iter().zip(gs) {
                linalg::axpy(-config.learning_rate, &g.data, &mut p.data);
            }
        }
        epoch_losses.push(total / total_tokens as f64);
    }

    model.params.tensors_mut().into_iter().for_each(Mat::narrow_to_f32);
    if !model.is_finite() {
        return Err(Error::consistency(MODULE, "training diverged to non-finite parameters"));
    }
    let (final_loss, correct) = token_loss(&model);
    model.training_meta = TaggerTrainingMeta {
        config: config.clone(),
        initial_loss,
        epoch_losses,
        final_loss: final_loss / total_tokens as f64,
        train_accuracy: correct as f64 / total_tokens as f64,
    };
    Ok(model)
}

/// One label per token.
pub fn tag<S: AsRef<str>>(model: &TaggerModel, encoder: &EncoderModel, tokens: &[S]) -> Result<Vec<WordLabel>> {
    if tokens.is_empty() {
        return Err(Error::input(MODULE, "cannot tag an empty token list"));
    }
    if encoder.embed_dim != model.input_dim {
        return Err(Error::consistency(
            MODULE,
            format!("encoder emits {} dims, tagger expects {}", encoder.embed_dim, model.input_dim),
        ));
    }
    Ok(model.predict(&encoder.embed_tokens(tokens)?))
}

/// Fraction of tokens where the tagger agrees with the given labels.
pub fn token_accuracy(model: &TaggerModel, encoder: &EncoderModel, labeled: &[LabeledSentence]) -> Result<f64> {
    if labeled.is_empty() {
        return Err(Error::input(MODULE, "no sentences to score"));
    }
    let examples = prepare_examples(labeled, encoder)?;
    Ok(example_accuracy(model, &examples))
}

pub fn example_accuracy(model: &TaggerModel, examples: &[TaggingExample]) -> f64 {
    let (mut correct, mut total) = (0usize, 0usize);
    for e in examples {
        let pred = model.predict(&e.inputs);
        correct += pred.iter().zip(&e.targets).filter(|(p, t)| p.class() == **t).count();
        total += e.targets.len();
    }
    correct as f64 / total.max(1) as f64
}
