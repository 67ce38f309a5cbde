//! The three model families and their composition into the two-stage stack:
//! a base BiLSTM tagger, a denoising-autoencoder refiner that reconstructs
//! the word embedding while correcting the tag, and conditioning refiners
//! that classify from (embedding, noisy label) jointly.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::embeddings::{embed_sentence, EmbeddingTable, MAX_LEN};
use crate::error::{Error, Result};
use crate::layers::{bilstm, dense, lstm_sequence, Activation, DenseParams, Direction, LstmParams, ParamRegistry};
use crate::tensor::{Graph, NodeId};

/// How base-model labels are handed to a refiner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LabelFeed {
    /// One-hot of the argmax tag (the default: the base emits a single
    /// noisy tag per token).
    #[default]
    HardOnehot,
    /// The full predicted distribution.
    SoftDistribution,
}

/// Row-normalized per-token tag probabilities, [len x classes].
#[derive(Debug, Clone, PartialEq)]
pub struct TagDistribution {
    pub probs: Vec<f64>,
    pub len: usize,
    pub classes: usize,
}

impl TagDistribution {
    pub fn row(&self, t: usize) -> &[f64] {
        &self.probs[t * self.classes..(t + 1) * self.classes]
    }

    pub fn argmax(&self, t: usize) -> usize {
        argmax(self.row(t))
    }
}

pub fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap()
}

pub fn one_hot(idx: usize, classes: usize) -> Vec<f64> {
    let mut v = vec![0.0; classes];
    v[idx] = 1.0;
    v
}

/// Build a padded one-hot gold matrix [MAX_LEN x classes] from tag indices.
pub fn gold_matrix(tags: &[usize], classes: usize) -> Vec<f64> {
    let mut m = vec![0.0; MAX_LEN * classes];
    for (t, &tag) in tags.iter().take(MAX_LEN).enumerate() {
        m[t * classes + tag] = 1.0;
    }
    m
}

// ---------------------------------------------------------------------------
// Base BiLSTM tagger
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaseConfig {
    pub emb_dim: usize,
    pub hidden: usize,
    pub classes: usize,
    pub dropout: f64,
}

impl Default for BaseConfig {
    fn default() -> Self {
        BaseConfig { emb_dim: 300, hidden: 256, classes: 13, dropout: 0.5 }
    }
}

/// Two stacked BiLSTM layers with inter-layer dropout and a softmax dense
/// output, one tag distribution per token.
#[derive(Debug, Clone)]
pub struct BaseTagger {
    pub config: BaseConfig,
    l1_fwd: LstmParams,
    l1_bwd: LstmParams,
    l2_fwd: LstmParams,
    l2_bwd: LstmParams,
    out: DenseParams,
}

impl BaseTagger {
    pub fn new<R: Rng>(config: BaseConfig, rng: &mut R) -> Result<Self> {
        let (d, h, c) = (config.emb_dim, config.hidden, config.classes);
        Ok(BaseTagger {
            config,
            l1_fwd: LstmParams::new(d, h, rng)?,
            l1_bwd: LstmParams::new(d, h, rng)?,
            l2_fwd: LstmParams::new(2 * h, h, rng)?,
            l2_bwd: LstmParams::new(2 * h, h, rng)?,
            out: DenseParams::new(2 * h, c, Activation::Softmax, rng)?,
        })
    }

    pub fn registry(&self) -> ParamRegistry {
        let mut reg = ParamRegistry::new();
        for (prefix, p) in [
            ("l1.fwd", &self.l1_fwd),
            ("l1.bwd", &self.l1_bwd),
            ("l2.fwd", &self.l2_fwd),
            ("l2.bwd", &self.l2_bwd),
        ] {
            reg.register(format!("{prefix}.w"), &p.w);
            reg.register(format!("{prefix}.u"), &p.u);
            reg.register(format!("{prefix}.b"), &p.b);
        }
        reg.register("out.w", &self.out.w);
        reg.register("out.b", &self.out.b);
        reg
    }

    /// Forward pass over an embedded sentence [T x D]. Dropout is applied
    /// between the BiLSTM layers and before the output layer, only when
    /// training. `mask` marks real rows; masked (pad) rows are inert — they
    /// contribute nothing to the hidden states at real rows.
    pub fn forward<R: Rng>(
        &self,
        g: &mut Graph,
        emb: NodeId,
        mask: Option<&[f64]>,
        training: bool,
        rng: &mut R,
    ) -> Result<NodeId> {
        let shape = g.shape(emb).to_vec();
        if shape.len() != 2 || shape[1] != self.config.emb_dim {
            return Err(Error::Dimension {
                op: "base_forward",
                lhs: shape,
                rhs: vec![self.config.emb_dim],
            });
        }
        let f1 = self.l1_fwd.to_nodes(g);
        let b1 = self.l1_bwd.to_nodes(g);
        let h1 = bilstm(g, emb, &f1, &b1, mask)?;
        let h1 = g.dropout(h1, self.config.dropout, training, rng)?;
        let f2 = self.l2_fwd.to_nodes(g);
        let b2 = self.l2_bwd.to_nodes(g);
        let h2 = bilstm(g, h1, &f2, &b2, mask)?;
        let h2 = g.dropout(h2, self.config.dropout, training, rng)?;
        dense(g, h2, &self.out)
    }

    /// Dropout-free tag distribution for a padded embedding matrix.
    pub fn probs(
        &self,
        emb_matrix: &[f64],
        rows: usize,
        mask: Option<&[f64]>,
    ) -> Result<TagDistribution> {
        let mut g = Graph::new();
        let emb = g.constant(vec![rows, self.config.emb_dim], emb_matrix.to_vec());
        let mut rng = ChaCha20Rng::seed_from_u64(0); // never drawn from in eval mode
        let out = self.forward(&mut g, emb, mask, false, &mut rng)?;
        Ok(TagDistribution {
            probs: g.value(out).to_vec(),
            len: rows,
            classes: self.config.classes,
        })
    }
}

/// Masked categorical cross-entropy of a tag distribution against one-hot
/// gold labels.
pub fn tag_loss(g: &mut Graph, probs: NodeId, gold: NodeId, mask: &[f64]) -> Result<NodeId> {
    g.cross_entropy(probs, gold, mask)
}

// ---------------------------------------------------------------------------
// DAE refiner
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DaeConfig {
    pub emb_dim: usize,
    pub classes: usize,
    pub enc_hidden: usize,
    pub bottleneck: usize,
    pub dec_hidden: usize,
    pub lambda: f64,
    /// Run the decoder LSTM back-to-front in time.
    pub decoder_reversed: bool,
}

impl Default for DaeConfig {
    fn default() -> Self {
        DaeConfig {
            emb_dim: 300,
            classes: 13,
            enc_hidden: 256,
            bottleneck: 128,
            dec_hidden: 256,
            lambda: 1.0,
            decoder_reversed: false,
        }
    }
}

/// Denoising autoencoder over (embedding, noisy label) pairs. The encoder
/// is one LSTM layer plus a dense bottleneck that compresses the input; the
/// decoder expands through a dense layer and an LSTM over time, ending in a
/// reconstruction head (the embedding) and a tag head (the corrected label).
#[derive(Debug, Clone)]
pub struct DaeRefiner {
    pub config: DaeConfig,
    enc: LstmParams,
    enc_dense: DenseParams,
    dec_dense: DenseParams,
    dec: LstmParams,
    recon_head: DenseParams,
    tag_head: DenseParams,
}

impl DaeRefiner {
    pub fn new<R: Rng>(config: DaeConfig, rng: &mut R) -> Result<Self> {
        let input = config.emb_dim + config.classes;
        if config.bottleneck >= input {
            return Err(Error::Parameter {
                name: "dae bottleneck",
                reason: format!(
                    "bottleneck {} must compress the input {input}",
                    config.bottleneck
                ),
            });
        }
        if config.lambda < 0.0 {
            return Err(Error::Parameter {
                name: "dae lambda",
                reason: format!("must be >= 0, got {}", config.lambda),
            });
        }
        Ok(DaeRefiner {
            config,
            enc: LstmParams::new(input, config.enc_hidden, rng)?,
            enc_dense: DenseParams::new(config.enc_hidden, config.bottleneck, Activation::Tanh, rng)?,
            dec_dense: DenseParams::new(config.bottleneck, config.dec_hidden, Activation::Tanh, rng)?,
            dec: LstmParams::new(config.dec_hidden, config.dec_hidden, rng)?,
            recon_head: DenseParams::new(config.dec_hidden, config.emb_dim, Activation::None, rng)?,
            tag_head: DenseParams::new(config.dec_hidden, config.classes, Activation::Softmax, rng)?,
        })
    }

    pub fn registry(&self) -> ParamRegistry {
        let mut reg = ParamRegistry::new();
        for (prefix, p) in [("enc", &self.enc), ("dec", &self.dec)] {
            reg.register(format!("{prefix}.w"), &p.w);
            reg.register(format!("{prefix}.u"), &p.u);
            reg.register(format!("{prefix}.b"), &p.b);
        }
        for (prefix, p) in [
            ("enc_dense", &self.enc_dense),
            ("dec_dense", &self.dec_dense),
            ("recon_head", &self.recon_head),
            ("tag_head", &self.tag_head),
        ] {
            reg.register(format!("{prefix}.w"), &p.w);
            reg.register(format!("{prefix}.b"), &p.b);
        }
        reg
    }

    /// emb [T x D] and noisy [T x C], time-aligned. Returns
    /// (reconstruction [T x D], tag distribution [T x C]). `mask` marks real
    /// rows; pad rows stay inert through both LSTMs.
    pub fn forward(
        &self,
        g: &mut Graph,
        emb: NodeId,
        noisy: NodeId,
        mask: Option<&[f64]>,
    ) -> Result<(NodeId, NodeId)> {
        check_aligned_inputs(g, emb, noisy, self.config.emb_dim, self.config.classes, "dae_forward")?;
        let x = g.concat(emb, noisy, 1)?;
        let enc_nodes = self.enc.to_nodes(g);
        let h_enc = lstm_sequence(g, x, &enc_nodes, Direction::Forward, None, mask)?;
        let z = dense(g, h_enc, &self.enc_dense)?;
        let expanded = dense(g, z, &self.dec_dense)?;
        let dec_nodes = self.dec.to_nodes(g);
        let direction = if self.config.decoder_reversed {
            Direction::Backward
        } else {
            Direction::Forward
        };
        let h_dec = lstm_sequence(g, expanded, &dec_nodes, direction, None, mask)?;
        let recon = dense(g, h_dec, &self.recon_head)?;
        let tags = dense(g, h_dec, &self.tag_head)?;
        Ok((recon, tags))
    }
}

/// Joint DAE objective: cross_entropy(tags, gold) + lambda * mse(recon, emb).
pub fn dae_loss(
    g: &mut Graph,
    recon: NodeId,
    tags: NodeId,
    emb_target: NodeId,
    gold: NodeId,
    mask: &[f64],
    lambda: f64,
) -> Result<NodeId> {
    if lambda < 0.0 {
        return Err(Error::Parameter {
            name: "lambda",
            reason: format!("must be >= 0, got {lambda}"),
        });
    }
    let ce = g.cross_entropy(tags, gold, mask)?;
    if lambda == 0.0 {
        return Ok(ce);
    }
    let rec = g.mse(recon, emb_target, mask)?;
    let scaled = g.scale(rec, lambda);
    g.add(ce, scaled)
}

// ---------------------------------------------------------------------------
// Conditioning refiners
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CondVariant {
    Bilstm,
    Dense,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CondConfig {
    pub variant: CondVariant,
    pub emb_dim: usize,
    pub classes: usize,
    /// Hidden size per direction for the bilstm variant.
    pub hidden: usize,
    /// Hidden widths for the dense variant; the final classes-wide layer is
    /// implicit. The full chain must strictly decrease.
    pub widths: Vec<usize>,
    pub dropout: f64,
}

impl Default for CondConfig {
    fn default() -> Self {
        CondConfig {
            variant: CondVariant::Bilstm,
            emb_dim: 300,
            classes: 13,
            hidden: 128,
            widths: vec![256, 64],
            dropout: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
enum CondKind {
    Bilstm {
        l1_fwd: LstmParams,
        l1_bwd: LstmParams,
        l2_fwd: LstmParams,
        l2_bwd: LstmParams,
        out: DenseParams,
    },
    Dense {
        layers: Vec<DenseParams>,
    },
}

/// Classifier over per-token (embedding, noisy label) input. The bilstm
/// variant mixes information across tokens; the dense variant is a per-token
/// compression stack with no cross-token mixing.
#[derive(Debug, Clone)]
pub struct CondRefiner {
    pub config: CondConfig,
    kind: CondKind,
}

impl CondRefiner {
    pub fn new<R: Rng>(config: CondConfig, rng: &mut R) -> Result<Self> {
        let input = config.emb_dim + config.classes;
        let kind = match config.variant {
            CondVariant::Bilstm => {
                let h = config.hidden;
                CondKind::Bilstm {
                    l1_fwd: LstmParams::new(input, h, rng)?,
                    l1_bwd: LstmParams::new(input, h, rng)?,
                    l2_fwd: LstmParams::new(2 * h, h, rng)?,
                    l2_bwd: LstmParams::new(2 * h, h, rng)?,
                    out: DenseParams::new(2 * h, config.classes, Activation::Softmax, rng)?,
                }
            }
            CondVariant::Dense => {
                let chain: Vec<usize> = config
                    .widths
                    .iter()
                    .copied()
                    .chain(std::iter::once(config.classes))
                    .collect();
                if chain.windows(2).any(|w| w[0] <= w[1]) {
                    return Err(Error::Parameter {
                        name: "cond dense widths",
                        reason: format!("widths must strictly decrease, got {chain:?}"),
                    });
                }
                let mut layers = Vec::new();
                let mut d_in = input;
                for (i, &w) in chain.iter().enumerate() {
                    let act = if i + 1 == chain.len() {
                        Activation::Softmax
                    } else {
                        Activation::Tanh
                    };
                    layers.push(DenseParams::new(d_in, w, act, rng)?);
                    d_in = w;
                }
                CondKind::Dense { layers }
            }
        };
        Ok(CondRefiner { config, kind })
    }

    pub fn registry(&self) -> ParamRegistry {
        let mut reg = ParamRegistry::new();
        match &self.kind {
            CondKind::Bilstm { l1_fwd, l1_bwd, l2_fwd, l2_bwd, out } => {
                for (prefix, p) in [
                    ("l1.fwd", l1_fwd),
                    ("l1.bwd", l1_bwd),
                    ("l2.fwd", l2_fwd),
                    ("l2.bwd", l2_bwd),
                ] {
                    reg.register(format!("{prefix}.w"), &p.w);
                    reg.register(format!("{prefix}.u"), &p.u);
                    reg.register(format!("{prefix}.b"), &p.b);
                }
                reg.register("out.w", &out.w);
                reg.register("out.b", &out.b);
            }
            CondKind::Dense { layers } => {
                for (i, p) in layers.iter().enumerate() {
                    reg.register(format!("dense{i}.w"), &p.w);
                    reg.register(format!("dense{i}.b"), &p.b);
                }
            }
        }
        reg
    }

    /// emb [T x D] and noisy [T x C] -> tag distribution [T x C]. `mask`
    /// marks real rows (only the bilstm variant mixes across tokens; the
    /// dense variant is per-token and needs no masking).
    pub fn forward<R: Rng>(
        &self,
        g: &mut Graph,
        emb: NodeId,
        noisy: NodeId,
        mask: Option<&[f64]>,
        training: bool,
        rng: &mut R,
    ) -> Result<NodeId> {
        check_aligned_inputs(g, emb, noisy, self.config.emb_dim, self.config.classes, "cond_forward")?;
        let x = g.concat(emb, noisy, 1)?;
        match &self.kind {
            CondKind::Bilstm { l1_fwd, l1_bwd, l2_fwd, l2_bwd, out } => {
                let f1 = l1_fwd.to_nodes(g);
                let b1 = l1_bwd.to_nodes(g);
                let h1 = bilstm(g, x, &f1, &b1, mask)?;
                let h1 = g.dropout(h1, self.config.dropout, training, rng)?;
                let f2 = l2_fwd.to_nodes(g);
                let b2 = l2_bwd.to_nodes(g);
                let h2 = bilstm(g, h1, &f2, &b2, mask)?;
                let h2 = g.dropout(h2, self.config.dropout, training, rng)?;
                dense(g, h2, out)
            }
            CondKind::Dense { layers } => {
                let mut h = x;
                for p in layers {
                    h = dense(g, h, p)?;
                }
                Ok(h)
            }
        }
    }
}

fn check_aligned_inputs(
    g: &Graph,
    emb: NodeId,
    noisy: NodeId,
    emb_dim: usize,
    classes: usize,
    op: &'static str,
) -> Result<()> {
    let se = g.shape(emb);
    let sn = g.shape(noisy);
    if se.len() != 2 || sn.len() != 2 || se[0] != sn[0] || se[1] != emb_dim || sn[1] != classes {
        return Err(Error::Dimension {
            op: match op {
                "dae_forward" => "dae_forward",
                _ => "cond_forward",
            },
            lhs: se.to_vec(),
            rhs: sn.to_vec(),
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Stack
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub enum Refiner {
    Dae(DaeRefiner),
    Cond(CondRefiner),
}

impl Refiner {
    pub fn registry(&self) -> ParamRegistry {
        match self {
            Refiner::Dae(r) => r.registry(),
            Refiner::Cond(r) => r.registry(),
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            Refiner::Dae(r) => r.config.classes,
            Refiner::Cond(r) => r.config.classes,
        }
    }

    /// Eval-mode tag distribution from aligned (emb, noisy) inputs.
    pub fn refine(
        &self,
        g: &mut Graph,
        emb: NodeId,
        noisy: NodeId,
        mask: Option<&[f64]>,
    ) -> Result<NodeId> {
        match self {
            Refiner::Dae(r) => r.forward(g, emb, noisy, mask).map(|(_, tags)| tags),
            Refiner::Cond(r) => {
                let mut rng = ChaCha20Rng::seed_from_u64(0); // eval mode, never drawn
                r.forward(g, emb, noisy, mask, false, &mut rng)
            }
        }
    }
}

/// Frozen base tagger plus an optional refiner.
#[derive(Debug, Clone)]
pub struct Stack {
    pub base: BaseTagger,
    pub refiner: Option<Refiner>,
    pub feed: LabelFeed,
}

impl Stack {
    pub fn base_only(base: BaseTagger) -> Self {
        Stack { base, refiner: None, feed: LabelFeed::default() }
    }

    pub fn new(base: BaseTagger, refiner: Refiner, feed: LabelFeed) -> Result<Self> {
        if refiner.classes() != base.config.classes {
            return Err(Error::Dimension {
                op: "stack classes",
                lhs: vec![base.config.classes],
                rhs: vec![refiner.classes()],
            });
        }
        Ok(Stack { base, refiner: Some(refiner), feed })
    }

    /// Tag a sentence: embed, run the base without dropout, optionally feed
    /// the labels to the refiner, argmax per real token. Tokens beyond the
    /// padding cap are dropped.
    pub fn predict(&self, tokens: &[String], table: &EmbeddingTable) -> Result<Vec<usize>> {
        if tokens.is_empty() {
            return Err(Error::DegenerateInput("predict on empty sentence".into()));
        }
        let emb = embed_sentence(table, tokens)?;
        let classes = self.base.config.classes;
        let base_dist = self.base.probs(&emb.matrix, MAX_LEN, Some(&emb.mask))?;
        let final_dist = match &self.refiner {
            None => base_dist,
            Some(refiner) => {
                let noisy = feed_matrix(&base_dist, emb.real_len, self.feed);
                let mut g = Graph::new();
                let emb_node = g.constant(vec![MAX_LEN, table.dim()], emb.matrix.clone());
                let noisy_node = g.constant(vec![MAX_LEN, classes], noisy);
                let tags = refiner.refine(&mut g, emb_node, noisy_node, Some(&emb.mask))?;
                TagDistribution { probs: g.value(tags).to_vec(), len: MAX_LEN, classes }
            }
        };
        Ok((0..emb.real_len).map(|t| final_dist.argmax(t)).collect())
    }
}

/// Convert a base-model distribution into the refiner's label feed matrix
/// [MAX_LEN x classes]; pad rows stay zero.
pub fn feed_matrix(dist: &TagDistribution, real_len: usize, feed: LabelFeed) -> Vec<f64> {
    let c = dist.classes;
    let mut m = vec![0.0; MAX_LEN * c];
    for t in 0..real_len.min(MAX_LEN) {
        match feed {
            LabelFeed::HardOnehot => m[t * c + dist.argmax(t)] = 1.0,
            LabelFeed::SoftDistribution => m[t * c..(t + 1) * c].copy_from_slice(dist.row(t)),
        }
    }
    m
}

/// Per-sentence noisy-label feed for refiner training.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix {
    /// [MAX_LEN x classes], pad rows zero.
    pub data: Vec<f64>,
    pub real_len: usize,
}

/// Anything that can produce per-token tag distributions for a sentence:
/// the trained base tagger, or oracle/noise-channel stubs in tests.
pub trait TagSource {
    fn distributions(&self, tokens: &[String], table: &EmbeddingTable) -> Result<TagDistribution>;
}

impl TagSource for BaseTagger {
    fn distributions(&self, tokens: &[String], table: &EmbeddingTable) -> Result<TagDistribution> {
        let emb = embed_sentence(table, tokens)?;
        self.probs(&emb.matrix, MAX_LEN, Some(&emb.mask))
    }
}

/// Fixed per-sentence label sequences as a [`TagSource`] (oracle stubs and
/// synthetic noise channels).
pub struct FixedLabels {
    pub labels: Vec<Vec<usize>>,
    pub classes: usize,
}

impl FixedLabels {
    /// Index sentences by position; the caller iterates the corpus in order.
    pub fn source_for(&self, idx: usize) -> impl TagSource + '_ {
        FixedSentence { labels: &self.labels[idx], classes: self.classes }
    }
}

struct FixedSentence<'a> {
    labels: &'a [usize],
    classes: usize,
}

impl TagSource for FixedSentence<'_> {
    fn distributions(&self, tokens: &[String], _table: &EmbeddingTable) -> Result<TagDistribution> {
        let mut probs = vec![0.0; MAX_LEN * self.classes];
        for (t, &l) in self.labels.iter().take(tokens.len()).take(MAX_LEN).enumerate() {
            probs[t * self.classes + l] = 1.0;
        }
        Ok(TagDistribution { probs, len: MAX_LEN, classes: self.classes })
    }
}

/// Generate the per-sentence label feed for refiner training from a frozen
/// base model (or stub). Dropout is off by construction.
pub fn make_noisy_labels<S: TagSource>(
    source: &S,
    corpus: &Corpus,
    table: &EmbeddingTable,
    feed: LabelFeed,
) -> Result<Vec<LabelMatrix>> {
    corpus
        .sentences
        .iter()
        .map(|s| {
            let dist = source.distributions(&s.tokens, table)?;
            let real_len = s.len().min(MAX_LEN);
            Ok(LabelMatrix {
                data: feed_matrix(&dist, real_len, feed),
                real_len,
            })
        })
        .collect()
}

/// Label feed generated sentence-by-sentence from fixed label sequences.
pub fn labels_to_feed(labels: &[Vec<usize>], classes: usize, feed: LabelFeed) -> Vec<LabelMatrix> {
    labels
        .iter()
        .map(|ls| {
            let real_len = ls.len().min(MAX_LEN);
            let mut data = vec![0.0; MAX_LEN * classes];
            for (t, &l) in ls.iter().take(MAX_LEN).enumerate() {
                match feed {
                    LabelFeed::HardOnehot | LabelFeed::SoftDistribution => {
                        data[t * classes + l] = 1.0
                    }
                }
            }
            LabelMatrix { data, real_len }
        })
        .collect()
}
