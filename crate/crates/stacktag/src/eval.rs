//! Confusion counting and the metric surface: per-class precision/recall/F1,
//! entity-level micro scores (pooled over the twelve entity classes, the
//! catch-all excluded), macro-F1, token accuracy, and an OOV breakdown.

use crate::corpus::{Corpus, TagSet, OTHER};
use crate::embeddings::{embed_sentence, EmbeddingTable, MAX_LEN};
use crate::error::{Error, Result};
use crate::models::Stack;

/// Square confusion matrix, rows gold, columns predicted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub classes: usize,
    counts: Vec<usize>,
}

impl ConfusionCounts {
    pub fn new(classes: usize) -> Self {
        ConfusionCounts { classes, counts: vec![0; classes * classes] }
    }

    pub fn record(&mut self, gold: usize, pred: usize) {
        self.counts[gold * self.classes + pred] += 1;
    }

    pub fn get(&self, gold: usize, pred: usize) -> usize {
        self.counts[gold * self.classes + pred]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn merge(&mut self, other: &ConfusionCounts) {
        assert_eq!(self.classes, other.classes);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn tp(&self, c: usize) -> usize {
        self.get(c, c)
    }

    pub fn fp(&self, c: usize) -> usize {
        (0..self.classes).filter(|&g| g != c).map(|g| self.get(g, c)).sum()
    }

    pub fn fn_(&self, c: usize) -> usize {
        (0..self.classes).filter(|&p| p != c).map(|p| self.get(c, p)).sum()
    }

    /// Gold occurrences of class c.
    pub fn support(&self, c: usize) -> usize {
        (0..self.classes).map(|p| self.get(c, p)).sum()
    }

    pub fn token_accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let correct: usize = (0..self.classes).map(|c| self.tp(c)).sum();
        correct as f64 / total as f64
    }
}

/// Precision/recall/F1 triple; zero denominators score 0.0 by convention.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrF1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn prf1(tp: usize, fp: usize, fn_: usize) -> PrF1 {
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    // integer form of 2PR/(P+R): exact for hand-countable cases
    let f1 = if 2 * tp + fp + fn_ == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    };
    PrF1 { precision, recall, f1 }
}

/// All scores derived from one confusion matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub per_class: Vec<PrF1>,
    pub support: Vec<usize>,
    /// TP/FP/FN pooled across the entity classes (everything except the
    /// catch-all), then scored once.
    pub entity_micro: PrF1,
    /// Mean of per-class F1 over classes with gold support.
    pub macro_f1: f64,
    pub token_accuracy: f64,
}

pub fn metrics(counts: &ConfusionCounts) -> MetricsReport {
    let c = counts.classes;
    let per_class: Vec<PrF1> = (0..c).map(|k| prf1(counts.tp(k), counts.fp(k), counts.fn_(k))).collect();
    let support: Vec<usize> = (0..c).map(|k| counts.support(k)).collect();
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for k in 0..c {
        if k == OTHER {
            continue;
        }
        tp += counts.tp(k);
        fp += counts.fp(k);
        fn_ += counts.fn_(k);
    }
    let entity_micro = prf1(tp, fp, fn_);
    let present: Vec<usize> = (0..c).filter(|&k| support[k] > 0).collect();
    let macro_f1 = if present.is_empty() {
        0.0
    } else {
        present.iter().map(|&k| per_class[k].f1).sum::<f64>() / present.len() as f64
    };
    MetricsReport {
        per_class,
        support,
        entity_micro,
        macro_f1,
        token_accuracy: counts.token_accuracy(),
    }
}

/// Entity-level micro F1 straight from counts (the early-stopping signal).
pub fn entity_f1(counts: &ConfusionCounts) -> f64 {
    metrics(counts).entity_micro.f1
}

/// Render a per-class score table as CSV, one row per tag plus summary rows.
pub fn metrics_csv(report: &MetricsReport, tagset: &TagSet) -> String {
    let mut out = String::from("tag,precision,recall,f1,support\n");
    for (k, label) in tagset.labels().iter().enumerate() {
        let p = &report.per_class[k];
        out.push_str(&format!(
            "{label},{:.6},{:.6},{:.6},{}\n",
            p.precision, p.recall, p.f1, report.support[k]
        ));
    }
    out.push_str(&format!(
        "entity-micro,{:.6},{:.6},{:.6},{}\n",
        report.entity_micro.precision,
        report.entity_micro.recall,
        report.entity_micro.f1,
        report.support.iter().enumerate().filter(|(k, _)| *k != OTHER).map(|(_, s)| s).sum::<usize>()
    ));
    out.push_str(&format!("macro-f1,,,{:.6},\n", report.macro_f1));
    out.push_str(&format!("token-accuracy,,,{:.6},\n", report.token_accuracy));
    out
}

/// Confusion counts for a tagged corpus, partitioned by vocabulary status.
/// The overall matrix is exactly the sum of the OOV and in-vocab parts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Evaluation {
    pub overall: ConfusionCounts,
    pub oov: ConfusionCounts,
    pub in_vocab: ConfusionCounts,
    /// Gold tokens lost to the length cap, never scored.
    pub truncated_tokens: usize,
}

/// Run a stack over every sentence and score against gold. Tokens beyond the
/// length cap are excluded from scoring on both sides.
pub fn evaluate(stack: &Stack, corpus: &Corpus, table: &EmbeddingTable) -> Result<Evaluation> {
    let classes = stack.base.config.classes;
    let mut overall = ConfusionCounts::new(classes);
    let mut oov = ConfusionCounts::new(classes);
    let mut in_vocab = ConfusionCounts::new(classes);
    let mut truncated = 0usize;
    for s in &corpus.sentences {
        if s.tokens.is_empty() {
            return Err(Error::DegenerateInput("evaluate on empty sentence".into()));
        }
        let pred = stack.predict(&s.tokens, table)?;
        let emb = embed_sentence(table, &s.tokens)?;
        truncated += s.len().saturating_sub(MAX_LEN);
        for (t, (&gold, &p)) in s.tags.iter().zip(&pred).take(MAX_LEN).enumerate() {
            overall.record(gold, p);
            if emb.oov[t] {
                oov.record(gold, p);
            } else {
                in_vocab.record(gold, p);
            }
        }
    }
    Ok(Evaluation { overall, oov, in_vocab, truncated_tokens: truncated })
}
