//! Mini-batch Adam training loops for the base tagger and the refiners,
//! with early stopping on validation entity F1.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::adam::{adam_step, clip_global_norm, zero_grads, AdamState};
use crate::corpus::Corpus;
use crate::embeddings::{embed_sentence, EmbeddingTable, SentenceEmbedding, MAX_LEN};
use crate::error::{Error, Result};
use crate::eval::{entity_f1, evaluate, ConfusionCounts};
use crate::layers::ParamRegistry;
use crate::models::{
    dae_loss, gold_matrix, tag_loss, BaseTagger, LabelFeed, LabelMatrix, Refiner, Stack,
    TagDistribution,
};
use crate::tensor::Graph;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Reconstruction weight for the DAE objective.
    pub lambda: f64,
    pub label_feed: LabelFeed,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.003,
            batch_size: 8,
            max_epochs: 100,
            patience: 10,
            seed: 0,
            lambda: 1.0,
            label_feed: LabelFeed::default(),
            clip: Some(5.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return Err(Error::Parameter { name: "lr", reason: format!("must be > 0, got {}", self.lr) });
        }
        if self.batch_size == 0 {
            return Err(Error::Parameter { name: "batch_size", reason: "must be > 0".into() });
        }
        if self.max_epochs == 0 {
            return Err(Error::Parameter { name: "max_epochs", reason: "must be > 0".into() });
        }
        if self.lambda < 0.0 {
            return Err(Error::Parameter { name: "lambda", reason: format!("must be >= 0, got {}", self.lambda) });
        }
        if let Some(c) = self.clip {
            if c <= 0.0 {
                return Err(Error::Parameter { name: "clip", reason: format!("must be > 0, got {c}") });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
    pub val_f1: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_f1: f64,
    pub stopped_early: bool,
}

impl TrainHistory {
    /// CSV with full-precision numeric columns; timing last so the
    /// reproducible columns come first.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_acc,val_f1,seconds\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{:.3}\n",
                r.epoch, r.train_loss, r.val_acc, r.val_f1, r.seconds
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

/// Shuffled batch index lists for one epoch. Every index appears exactly
/// once; the final batch may be short.
pub fn batch_order(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    let epoch_seed = seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    idx.shuffle(&mut ChaCha20Rng::seed_from_u64(epoch_seed));
    idx.chunks(batch_size).map(|c| c.to_vec()).collect()
}

/// Per-sentence tensors prepared once before the epoch loop.
struct Prepared {
    emb: SentenceEmbedding,
    gold: Vec<f64>,
    tokens_real: f64,
}

fn prepare(corpus: &Corpus, table: &EmbeddingTable, classes: usize) -> Result<Vec<Prepared>> {
    if corpus.is_empty() {
        return Err(Error::DegenerateInput("training split is empty".into()));
    }
    corpus
        .sentences
        .iter()
        .map(|s| {
            let emb = embed_sentence(table, &s.tokens)?;
            let gold = gold_matrix(&s.tags, classes);
            let tokens_real = emb.mask.iter().sum();
            Ok(Prepared { emb, gold, tokens_real })
        })
        .collect()
}

/// Train the base tagger in place. Batch losses average over real tokens in
/// the batch; validation is scored after every epoch and the best-epoch
/// weights are restored at the end.
pub fn train_base(
    base: &BaseTagger,
    train: &Corpus,
    val: &Corpus,
    table: &EmbeddingTable,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    cfg.validate()?;
    let classes = base.config.classes;
    let dim = base.config.emb_dim;
    if table.dim() != dim {
        return Err(Error::Dimension { op: "train_base", lhs: vec![table.dim()], rhs: vec![dim] });
    }
    let prepared = prepare(train, table, classes)?;
    if val.is_empty() {
        return Err(Error::DegenerateInput("validation split is empty".into()));
    }
    let registry = base.registry();
    let params = registry.params();
    let mut states: Vec<AdamState> =
        params.iter().map(|p| AdamState::new(p.borrow().numel())).collect();
    let mut drop_rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ DROPOUT_STREAM);
    run_loop(cfg, &registry, |epoch, history| {
        let start = Instant::now();
        let mut loss_sum = 0.0;
        let mut token_sum = 0.0;
        for batch in batch_order(prepared.len(), cfg.batch_size, cfg.seed, epoch) {
            let mut g = Graph::new();
            let mut weighted = Vec::new();
            let mut batch_tokens = 0.0;
            for &i in &batch {
                let p = &prepared[i];
                let emb = g.constant(vec![MAX_LEN, dim], p.emb.matrix.clone());
                let probs = base.forward(&mut g, emb, Some(&p.emb.mask), true, &mut drop_rng)?;
                let gold = g.constant(vec![MAX_LEN, classes], p.gold.clone());
                let ce = tag_loss(&mut g, probs, gold, &p.emb.mask)?;
                weighted.push(g.scale(ce, p.tokens_real));
                batch_tokens += p.tokens_real;
            }
            let mut total = weighted[0];
            for &w in &weighted[1..] {
                total = g.add(total, w)?;
            }
            let loss = g.scale(total, 1.0 / batch_tokens);
            let loss_val = g.value(loss)[0];
            if !loss_val.is_finite() {
                return Err(Error::Training(format!("non-finite loss at epoch {epoch}")));
            }
            g.backward(loss)?;
            if let Some(c) = cfg.clip {
                clip_global_norm(&params, c);
            }
            adam_step(&params, &mut states, cfg.lr)?;
            zero_grads(&params);
            loss_sum += loss_val * batch_tokens;
            token_sum += batch_tokens;
        }
        let stack = Stack::base_only(base.clone());
        let e = evaluate(&stack, val, table)?;
        history.records.push(EpochRecord {
            epoch,
            train_loss: loss_sum / token_sum,
            val_acc: e.overall.token_accuracy(),
            val_f1: entity_f1(&e.overall),
            seconds: start.elapsed().as_secs_f64(),
        });
        Ok(())
    })
}

// fixed xor so the dropout stream differs from the shuffle stream
const DROPOUT_STREAM: u64 = 0xD20F_0A57_1B3C_9E41;

/// Train a refiner in place against precomputed label feeds, one
/// [`LabelMatrix`] per sentence, aligned with each corpus. The base model is
/// not part of the loop; `frozen` lets callers assert that some other
/// registry (the base) is untouched by training.
#[allow(clippy::too_many_arguments)]
pub fn train_refiner(
    refiner: &Refiner,
    train: &Corpus,
    train_feed: &[LabelMatrix],
    val: &Corpus,
    val_feed: &[LabelMatrix],
    table: &EmbeddingTable,
    cfg: &TrainConfig,
    frozen: Option<&ParamRegistry>,
) -> Result<TrainHistory> {
    cfg.validate()?;
    let classes = refiner.classes();
    if train.len() != train_feed.len() || val.len() != val_feed.len() {
        return Err(Error::State(format!(
            "label feed misaligned: {} train sentences vs {} feeds, {} val vs {}",
            train.len(),
            train_feed.len(),
            val.len(),
            val_feed.len()
        )));
    }
    let frozen_before = frozen.map(|r| r.checksum());
    let dim = table.dim();
    let prepared = prepare(train, table, classes)?;
    if val.is_empty() {
        return Err(Error::DegenerateInput("validation split is empty".into()));
    }
    let registry = refiner.registry();
    let params = registry.params();
    let mut states: Vec<AdamState> =
        params.iter().map(|p| AdamState::new(p.borrow().numel())).collect();
    let mut drop_rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ DROPOUT_STREAM);
    let history = run_loop(cfg, &registry, |epoch, history| {
        let start = Instant::now();
        let mut loss_sum = 0.0;
        let mut token_sum = 0.0;
        for batch in batch_order(prepared.len(), cfg.batch_size, cfg.seed, epoch) {
            let mut g = Graph::new();
            let mut weighted = Vec::new();
            let mut batch_tokens = 0.0;
            for &i in &batch {
                let p = &prepared[i];
                let emb = g.constant(vec![MAX_LEN, dim], p.emb.matrix.clone());
                let noisy = g.constant(vec![MAX_LEN, classes], train_feed[i].data.clone());
                let gold = g.constant(vec![MAX_LEN, classes], p.gold.clone());
                let sentence_loss = match refiner {
                    Refiner::Dae(r) => {
                        let (recon, tags) = r.forward(&mut g, emb, noisy, Some(&p.emb.mask))?;
                        dae_loss(&mut g, recon, tags, emb, gold, &p.emb.mask, cfg.lambda)?
                    }
                    Refiner::Cond(r) => {
                        let tags =
                            r.forward(&mut g, emb, noisy, Some(&p.emb.mask), true, &mut drop_rng)?;
                        tag_loss(&mut g, tags, gold, &p.emb.mask)?
                    }
                };
                weighted.push(g.scale(sentence_loss, p.tokens_real));
                batch_tokens += p.tokens_real;
            }
            let mut total = weighted[0];
            for &w in &weighted[1..] {
                total = g.add(total, w)?;
            }
            let loss = g.scale(total, 1.0 / batch_tokens);
            let loss_val = g.value(loss)[0];
            if !loss_val.is_finite() {
                return Err(Error::Training(format!("non-finite loss at epoch {epoch}")));
            }
            g.backward(loss)?;
            if let Some(c) = cfg.clip {
                clip_global_norm(&params, c);
            }
            adam_step(&params, &mut states, cfg.lr)?;
            zero_grads(&params);
            loss_sum += loss_val * batch_tokens;
            token_sum += batch_tokens;
        }
        let counts = refiner_confusion(refiner, val, val_feed, table)?;
        history.records.push(EpochRecord {
            epoch,
            train_loss: loss_sum / token_sum,
            val_acc: counts.token_accuracy(),
            val_f1: entity_f1(&counts),
            seconds: start.elapsed().as_secs_f64(),
        });
        Ok(())
    })?;
    if let (Some(before), Some(reg)) = (frozen_before, frozen) {
        if reg.checksum() != before {
            return Err(Error::Invariant(
                "frozen parameters changed during refiner training".into(),
            ));
        }
    }
    Ok(history)
}

/// Score a refiner's own predictions against gold, given a label feed.
pub fn refiner_confusion(
    refiner: &Refiner,
    corpus: &Corpus,
    feed: &[LabelMatrix],
    table: &EmbeddingTable,
) -> Result<ConfusionCounts> {
    let classes = refiner.classes();
    let mut counts = ConfusionCounts::new(classes);
    for (s, f) in corpus.sentences.iter().zip(feed) {
        let emb = embed_sentence(table, &s.tokens)?;
        let mut g = Graph::new();
        let ne = g.constant(vec![MAX_LEN, table.dim()], emb.matrix.clone());
        let nn = g.constant(vec![MAX_LEN, classes], f.data.clone());
        let tags = refiner.refine(&mut g, ne, nn, Some(&emb.mask))?;
        let dist = TagDistribution { probs: g.value(tags).to_vec(), len: MAX_LEN, classes };
        for (t, &gold) in s.tags.iter().take(MAX_LEN).enumerate() {
            counts.record(gold, dist.argmax(t));
        }
    }
    Ok(counts)
}

/// Shared epoch loop: early stopping on validation entity F1 and best-epoch
/// weight restoration.
fn run_loop<F>(cfg: &TrainConfig, registry: &ParamRegistry, mut epoch_fn: F) -> Result<TrainHistory>
where
    F: FnMut(usize, &mut TrainHistory) -> Result<()>,
{
    let mut history = TrainHistory::default();
    let mut best_snapshot = registry.snapshot();
    let mut best_f1 = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut since_best = 0usize;
    for epoch in 1..=cfg.max_epochs {
        epoch_fn(epoch, &mut history)?;
        let rec = *history.records.last().expect("epoch_fn must push a record");
        if rec.val_f1 > best_f1 {
            best_f1 = rec.val_f1;
            best_epoch = epoch;
            best_snapshot = registry.snapshot();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                history.stopped_early = true;
                break;
            }
        }
    }
    registry.restore(&best_snapshot);
    history.best_epoch = best_epoch;
    history.best_val_f1 = best_f1;
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic_corpus, SynthSpec};
    use crate::models::{BaseConfig, CondConfig, CondRefiner, CondVariant, LabelFeed};

    fn synth_setup(seed: u64, n: usize, dim: usize) -> (Corpus, EmbeddingTable) {
        let spec = SynthSpec { seed, n_sentences: n, ..SynthSpec::default() };
        let corpus = generate_synthetic_corpus(&spec);
        let words: Vec<String> =
            corpus.sentences.iter().flat_map(|s| s.tokens.iter().cloned()).collect();
        let table = EmbeddingTable::random(words, dim, seed.wrapping_add(99));
        (corpus, table)
    }

    #[test]
    fn batches_partition_the_indices() {
        let batches = batch_order(10, 4, 7, 3);
        assert_eq!(batches.len(), 3);
        assert_eq!(batches[2].len(), 2);
        let mut all: Vec<usize> = batches.into_iter().flatten().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        // epoch changes the order
        assert_ne!(batch_order(10, 4, 7, 3), batch_order(10, 4, 7, 4));
        // same seed and epoch reproduce it
        assert_eq!(batch_order(10, 4, 7, 3), batch_order(10, 4, 7, 3));
    }

    #[test]
    fn base_training_reduces_loss_and_is_deterministic() {
        let run = || {
            let (corpus, table) = synth_setup(5, 12, 8);
            let cfg = BaseConfig { emb_dim: 8, hidden: 8, classes: 13, dropout: 0.2 };
            let mut rng = ChaCha20Rng::seed_from_u64(11);
            let base = BaseTagger::new(cfg, &mut rng).unwrap();
            let tcfg = TrainConfig {
                max_epochs: 8,
                patience: 8,
                seed: 3,
                ..TrainConfig::default()
            };
            let h = train_base(&base, &corpus, &corpus, &table, &tcfg).unwrap();
            (h, base.registry().checksum())
        };
        let (h1, sum1) = run();
        let (h2, sum2) = run();
        assert!(h1.records.last().unwrap().train_loss < h1.records[0].train_loss);
        assert_eq!(sum1, sum2);
        for (a, b) in h1.records.iter().zip(&h2.records) {
            assert_eq!(a.train_loss, b.train_loss);
            assert_eq!(a.val_acc, b.val_acc);
            assert_eq!(a.val_f1, b.val_f1);
        }
        assert_eq!(h1.best_epoch, h2.best_epoch);
    }

    #[test]
    fn early_stopping_restores_best_epoch_weights() {
        let (corpus, table) = synth_setup(6, 8, 6);
        let cfg = BaseConfig { emb_dim: 6, hidden: 4, classes: 13, dropout: 0.0 };
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        let base = BaseTagger::new(cfg, &mut rng).unwrap();
        let registry = base.registry();
        let tcfg = TrainConfig { max_epochs: 4, patience: 1, seed: 4, ..TrainConfig::default() };
        let h = train_base(&base, &corpus, &corpus, &table, &tcfg).unwrap();
        assert!(h.best_epoch >= 1);
        // retrain from the restored weights for zero epochs is impossible;
        // instead verify the restored weights reproduce the best val score
        let stack = Stack::base_only(base.clone());
        let e = evaluate(&stack, &corpus, &table).unwrap();
        let best = h.records.iter().find(|r| r.epoch == h.best_epoch).unwrap();
        assert!((entity_f1(&e.overall) - best.val_f1).abs() < 1e-12);
        let _ = registry;
    }

    #[test]
    fn refiner_training_leaves_frozen_registry_untouched() {
        let (corpus, table) = synth_setup(7, 8, 6);
        let cfg = BaseConfig { emb_dim: 6, hidden: 4, classes: 13, dropout: 0.5 };
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        let base = BaseTagger::new(cfg, &mut rng).unwrap();
        let base_registry = base.registry();
        let before = base_registry.checksum();
        let ccfg = CondConfig {
            variant: CondVariant::Dense,
            emb_dim: 6,
            classes: 13,
            widths: vec![16, 14],
            ..CondConfig::default()
        };
        let cond = Refiner::Cond(CondRefiner::new(ccfg, &mut rng).unwrap());
        let gold: Vec<Vec<usize>> = corpus.sentences.iter().map(|s| s.tags.clone()).collect();
        let feed = crate::models::labels_to_feed(&gold, 13, LabelFeed::HardOnehot);
        let tcfg = TrainConfig { max_epochs: 3, patience: 3, seed: 5, ..TrainConfig::default() };
        let h = train_refiner(
            &cond,
            &corpus,
            &feed,
            &corpus,
            &feed,
            &table,
            &tcfg,
            Some(&base_registry),
        )
        .unwrap();
        assert_eq!(h.records.len(), 3);
        assert_eq!(base_registry.checksum(), before);
    }

    #[test]
    fn misaligned_feed_is_a_state_error() {
        let (corpus, table) = synth_setup(8, 4, 6);
        let mut rng = ChaCha20Rng::seed_from_u64(14);
        let ccfg = CondConfig {
            variant: CondVariant::Dense,
            emb_dim: 6,
            classes: 13,
            widths: vec![16, 14],
            ..CondConfig::default()
        };
        let cond = Refiner::Cond(CondRefiner::new(ccfg, &mut rng).unwrap());
        let err = train_refiner(
            &cond,
            &corpus,
            &[],
            &corpus,
            &[],
            &table,
            &TrainConfig::default(),
            None,
        )
        .unwrap_err();
        assert!(matches!(err, Error::State(_)));
    }

    #[test]
    fn invalid_config_is_rejected() {
        let bad = TrainConfig { lr: 0.0, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { batch_size: 0, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { clip: Some(-1.0), ..TrainConfig::default() };
        assert!(bad.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }

    #[test]
    fn csv_round_trips_numeric_columns() {
        let h = TrainHistory {
            records: vec![EpochRecord {
                epoch: 1,
                train_loss: 2.5649493574615367,
                val_acc: 0.1234567890123456,
                val_f1: 0.0,
                seconds: 1.0,
            }],
            best_epoch: 1,
            best_val_f1: 0.0,
            stopped_early: false,
        };
        let csv = h.to_csv();
        let line = csv.lines().nth(1).unwrap();
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[1].parse::<f64>().unwrap(), 2.5649493574615367);
        assert_eq!(fields[2].parse::<f64>().unwrap(), 0.1234567890123456);
    }
}
