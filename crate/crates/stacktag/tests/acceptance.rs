//! End-to-end acceptance gates. Each test is one criterion and prints a
//! single pass line on success (run with `--nocapture` to see them; a failed
//! assertion is the fail line).

use std::time::Instant;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

use stacktag::adam::{adam_step, AdamState};
use stacktag::checkpoint::base_to_checkpoint;
use stacktag::corpus::{
    generate_synthetic_corpus, parse_corpus_str, preprocess, Corpus, NoiseChannel, Provenance,
    SynthSpec, TagSet,
};
use stacktag::embeddings::{embed_sentence, EmbeddingTable, MAX_LEN};
use stacktag::eval::{entity_f1, evaluate, prf1, ConfusionCounts};
use stacktag::models::{
    gold_matrix, labels_to_feed, tag_loss, BaseConfig, BaseTagger, CondConfig,
    CondRefiner, CondVariant, DaeConfig, DaeRefiner, LabelFeed, Refiner, Stack,
};
use stacktag::tensor::{param, Graph};
use stacktag::training::{refiner_confusion, train_base, train_refiner, TrainConfig};

fn pass(n: usize, msg: &str) {
    println!("criterion {n:02}: pass — {msg}");
}

fn synth_with_vectors(seed: u64, n: usize, dim: usize) -> (Corpus, EmbeddingTable) {
    let spec = SynthSpec { seed, n_sentences: n, ..SynthSpec::default() };
    let corpus = generate_synthetic_corpus(&spec);
    let words: Vec<String> =
        corpus.sentences.iter().flat_map(|s| s.tokens.iter().cloned()).collect();
    let table = EmbeddingTable::random(words, dim, seed.wrapping_add(5));
    (corpus, table)
}

/// 1. Analytic gradients agree with central differences for every op, every
/// layer, and all four model families, across at least ten seeds, in under
/// a minute.
#[test]
fn criterion_01_gradient_suite() {
    let start = Instant::now();
    let results = stacktag::gradcheck::run_suite(0).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let seeds: std::collections::HashSet<&str> = results
        .iter()
        .filter_map(|r| r.name.rsplit_once("seed "))
        .map(|(_, s)| s.trim_end_matches(')'))
        .collect();
    assert!(seeds.len() >= 10, "only {} seeds exercised", seeds.len());
    for r in &results {
        assert!(r.pass, "{r}");
    }
    assert!(elapsed < 60.0, "suite took {elapsed:.1}s");
    pass(1, &format!("{} gradient checks across {} seeds in {elapsed:.1}s", results.len(), seeds.len()));
}

/// 2. The base tagger memorizes a 50-sentence synthetic corpus (vocabulary
/// 100, five active tags) to at least 0.99 token accuracy within 200 epochs
/// at default hyperparameters.
#[test]
fn criterion_02_overfit_oracle() {
    let (corpus, table) = synth_with_vectors(41, 50, 16);
    let cfg = BaseConfig { emb_dim: 16, hidden: 32, classes: 13, dropout: 0.5 };
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let base = BaseTagger::new(cfg, &mut rng).unwrap();
    let tcfg = TrainConfig { max_epochs: 200, patience: 200, seed: 1, ..TrainConfig::default() };
    assert_eq!(tcfg.lr, 0.003);
    assert_eq!(tcfg.batch_size, 8);
    let history = train_base(&base, &corpus, &corpus, &table, &tcfg).unwrap();
    let stack = Stack::base_only(base);
    let e = evaluate(&stack, &corpus, &table).unwrap();
    let acc = e.overall.token_accuracy();
    assert!(acc >= 0.99, "train accuracy {acc:.4} after {} epochs", history.records.len());
    pass(2, &format!("train accuracy {acc:.4} (best epoch {})", history.best_epoch));
}

/// 3. Refiners trained on 30%-corrupted labels recover well past the noisy
/// baseline: the DAE by at least +0.10 entity F1, both conditioning
/// variants by any positive margin.
#[test]
fn criterion_03_denoising_oracle() {
    let (corpus, table) = synth_with_vectors(31, 120, 16);
    let train = Corpus::new(corpus.sentences[..100].to_vec(), corpus.provenance);
    let eval_c = Corpus::new(corpus.sentences[100..].to_vec(), corpus.provenance);
    let noisy = NoiseChannel { flip_rate: 0.3, seed: 77 }.corrupt(&corpus);
    let (noisy_train, noisy_eval) = (noisy[..100].to_vec(), noisy[100..].to_vec());

    let mut baseline = ConfusionCounts::new(13);
    for (s, n) in eval_c.sentences.iter().zip(&noisy_eval) {
        for (&g, &p) in s.tags.iter().zip(n) {
            baseline.record(g, p);
        }
    }
    let noisy_f1 = entity_f1(&baseline);

    let train_feed = labels_to_feed(&noisy_train, 13, LabelFeed::HardOnehot);
    let eval_feed = labels_to_feed(&noisy_eval, 13, LabelFeed::HardOnehot);
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    let dae = Refiner::Dae(
        DaeRefiner::new(
            DaeConfig { emb_dim: 16, classes: 13, enc_hidden: 48, bottleneck: 24, dec_hidden: 48, ..DaeConfig::default() },
            &mut rng,
        )
        .unwrap(),
    );
    let bilstm = Refiner::Cond(
        CondRefiner::new(
            CondConfig { variant: CondVariant::Bilstm, emb_dim: 16, classes: 13, hidden: 24, dropout: 0.1, ..CondConfig::default() },
            &mut rng,
        )
        .unwrap(),
    );
    let dense = Refiner::Cond(
        CondRefiner::new(
            CondConfig { variant: CondVariant::Dense, emb_dim: 16, classes: 13, widths: vec![64, 32], ..CondConfig::default() },
            &mut rng,
        )
        .unwrap(),
    );
    let cfg = TrainConfig { max_epochs: 60, patience: 60, seed: 3, lambda: 0.3, ..TrainConfig::default() };
    let mut scores = Vec::new();
    for (name, refiner) in [("dae", &dae), ("cond-bilstm", &bilstm), ("cond-dense", &dense)] {
        train_refiner(refiner, &train, &train_feed, &eval_c, &eval_feed, &table, &cfg, None).unwrap();
        let counts = refiner_confusion(refiner, &eval_c, &eval_feed, &table).unwrap();
        scores.push((name, entity_f1(&counts)));
    }
    let dae_f1 = scores[0].1;
    assert!(
        dae_f1 >= noisy_f1 + 0.10,
        "dae {dae_f1:.4} vs noisy {noisy_f1:.4}"
    );
    for &(name, f1) in &scores[1..] {
        assert!(f1 > noisy_f1, "{name} {f1:.4} vs noisy {noisy_f1:.4}");
    }
    pass(3, &format!(
        "noisy {noisy_f1:.3}; dae {:.3}, cond-bilstm {:.3}, cond-dense {:.3}",
        scores[0].1, scores[1].1, scores[2].1
    ));
}

/// 4. A stack with no refiner is the base tagger, argmax for argmax, over a
/// thousand random sentences, and refiner training leaves the frozen base
/// bitwise untouched.
#[test]
fn criterion_04_stack_identity_and_frozen_base() {
    let (corpus, table) = synth_with_vectors(51, 1000, 12);
    let cfg = BaseConfig { emb_dim: 12, hidden: 8, classes: 13, dropout: 0.5 };
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let base = BaseTagger::new(cfg, &mut rng).unwrap();
    let registry = base.registry();
    let before = registry.checksum();

    let stack = Stack::base_only(base.clone());
    assert_eq!(corpus.sentences.len(), 1000);
    for s in &corpus.sentences {
        let via_stack = stack.predict(&s.tokens, &table).unwrap();
        let emb = embed_sentence(&table, &s.tokens).unwrap();
        let dist = base.probs(&emb.matrix, MAX_LEN, Some(&emb.mask)).unwrap();
        let direct: Vec<usize> = (0..emb.real_len).map(|t| dist.argmax(t)).collect();
        assert_eq!(via_stack, direct);
    }

    let small = Corpus::new(corpus.sentences[..20].to_vec(), corpus.provenance);
    let cond = Refiner::Cond(
        CondRefiner::new(
            CondConfig { variant: CondVariant::Dense, emb_dim: 12, classes: 13, widths: vec![24, 16], ..CondConfig::default() },
            &mut rng,
        )
        .unwrap(),
    );
    let gold: Vec<Vec<usize>> = small.sentences.iter().map(|s| s.tags.clone()).collect();
    let feed = labels_to_feed(&gold, 13, LabelFeed::HardOnehot);
    let tcfg = TrainConfig { max_epochs: 3, patience: 3, seed: 4, ..TrainConfig::default() };
    train_refiner(&cond, &small, &feed, &small, &feed, &table, &tcfg, Some(&registry)).unwrap();
    assert_eq!(registry.checksum(), before, "base parameters changed");
    pass(4, "refiner-free stack equals base on 1000 sentences; base checksum unchanged through refiner training");
}

/// 5. Unknown words embed to the exact zero vector, and padding is inert:
/// pad rows are exactly zero, the mask counts only real tokens, the masked
/// loss over a padded sentence equals the loss over just its real rows, and
/// a sentence predicts bit-identically whether it is padded to 30 rows or
/// trimmed to its real length.
#[test]
fn criterion_05_oov_and_padding() {
    let mut table = EmbeddingTable::new(8);
    for i in 0..30 {
        table.insert(format!("w{i}"), vec![0.25 * (i as f64 + 1.0); 8]).unwrap();
    }
    let lookup = table.lookup("never-seen");
    assert!(!lookup.in_vocab);
    assert!(lookup.vector.iter().all(|v| *v == 0.0));

    let tokens: Vec<String> = (0..23).map(|i| format!("w{i}")).collect();
    let emb = embed_sentence(&table, &tokens).unwrap();
    assert_eq!(emb.real_len, 23);
    assert_eq!(emb.mask.iter().sum::<f64>(), 23.0);
    for row in 23..30 {
        assert!(emb.matrix[row * 8..(row + 1) * 8].iter().all(|v| *v == 0.0));
    }

    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let cfg = BaseConfig { emb_dim: 8, hidden: 6, classes: 13, dropout: 0.5 };
    let base = BaseTagger::new(cfg, &mut rng).unwrap();
    // push every parameter off its init values (fresh LSTM biases are mostly
    // zero, which would make pad rows accidentally inert even without the
    // mask) so the invariance below is tested against worst-case weights
    for p in base.registry().params() {
        for (i, v) in p.borrow_mut().data.iter_mut().enumerate() {
            *v += 0.05 * (((i % 17) as f64) - 8.0) / 8.0;
        }
    }

    // real-token predictions are bitwise identical between the padded
    // matrix and the trimmed one...
    let padded = base.probs(&emb.matrix, MAX_LEN, Some(&emb.mask)).unwrap();
    let trimmed = base.probs(&emb.matrix[..23 * 8], 23, None).unwrap();
    assert_eq!(&padded.probs[..23 * 13], &trimmed.probs[..]);
    // ...and the mask is load-bearing: without it, pad rows would leak into
    // real tokens through the backward-direction LSTM
    let unmasked = base.probs(&emb.matrix, MAX_LEN, None).unwrap();
    assert_ne!(&unmasked.probs[..23 * 13], &trimmed.probs[..]);

    // masked loss over the padded matrix == loss over the 23 real rows
    let probs_full: Vec<f64> = padded.probs.clone();
    let tags: Vec<usize> = (0..23).map(|i| i % 13).collect();
    let gold_full = gold_matrix(&tags, 13);
    let mut g = Graph::new();
    let p_full = g.constant(vec![30, 13], probs_full.clone());
    let t_full = g.constant(vec![30, 13], gold_full.clone());
    let l_full = tag_loss(&mut g, p_full, t_full, &emb.mask).unwrap();
    let p_real = g.constant(vec![23, 13], probs_full[..23 * 13].to_vec());
    let t_real = g.constant(vec![23, 13], gold_full[..23 * 13].to_vec());
    let l_real = tag_loss(&mut g, p_real, t_real, &vec![1.0; 23]).unwrap();
    assert_eq!(g.value(l_full)[0], g.value(l_real)[0]);
    pass(5, "OOV is the exact zero vector; padding changes neither predictions nor loss, bit for bit");
}

/// 6. Preprocessing produces byte-identical golden output and is idempotent.
#[test]
fn criterion_06_preprocessing_golden() {
    let raw = "\
राम\tperson\n\
(\tother\n\
अयोध्या\tlocation\n\
)\tother\n\
गये\tother\n\
।\tother\n\
\n\
सीता\tperson\n\
,\tother\n\
(\tother\n\
खुला\tother\n\
\n\
॥\tother\n\
!\tother\n\
\n\
दिल्ली\tlocation\n\
२०२०\ttime\n";
    let corpus = parse_corpus_str(raw, Provenance::Raw).unwrap();
    let (clean, report) = preprocess(&corpus);
    let golden = "\
राम\tperson\n\
गये\tother\n\
\n\
सीता\tperson\n\
\n\
दिल्ली\tlocation\n\
२०२०\ttime\n";
    let out = stacktag::corpus::corpus_to_string(&clean);
    assert_eq!(out, golden, "preprocessed bytes differ from golden");
    assert_eq!(report.sentences_dropped, 1); // the all-punctuation sentence
    assert_eq!(report.unbalanced_parens, 1); // the unclosed '(' span
    let (again, report2) = preprocess(&clean);
    assert_eq!(stacktag::corpus::corpus_to_string(&again), golden, "not idempotent");
    assert_eq!(report2.tokens_removed, 0);
    pass(6, "golden bytes match and a second pass changes nothing");
}

/// 7. Same seed, same everything: two training runs produce identical loss
/// and metric trajectories and bit-identical checkpoints.
#[test]
fn criterion_07_determinism() {
    let run = || {
        let (corpus, table) = synth_with_vectors(61, 16, 10);
        let cfg = BaseConfig { emb_dim: 10, hidden: 8, classes: 13, dropout: 0.4 };
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let base = BaseTagger::new(cfg, &mut rng).unwrap();
        let tcfg = TrainConfig { max_epochs: 6, patience: 6, seed: 21, ..TrainConfig::default() };
        let h = train_base(&base, &corpus, &corpus, &table, &tcfg).unwrap();
        let ckpt = base_to_checkpoint(&base, &TagSet::standard(), None);
        (h, serde_json::to_string(&ckpt).unwrap())
    };
    let (h1, c1) = run();
    let (h2, c2) = run();
    assert_eq!(h1.records.len(), h2.records.len());
    for (a, b) in h1.records.iter().zip(&h2.records) {
        assert!((a.train_loss - b.train_loss).abs() < 1e-12);
        assert!((a.val_acc - b.val_acc).abs() < 1e-12);
        assert!((a.val_f1 - b.val_f1).abs() < 1e-12);
    }
    assert_eq!(c1, c2, "serialized checkpoints differ");
    pass(7, "two identical runs: identical histories and byte-identical checkpoints");
}

/// 8. Numeric hygiene: softmax rows are unit-sum to 1e-9, a fresh model's
/// loss sits near ln(13), Adam holds still on zero gradients, and nothing
/// in a forward/backward pass is NaN or infinite.
#[test]
fn criterion_08_numeric_hygiene() {
    let mut rng = ChaCha20Rng::seed_from_u64(13);
    let cfg = BaseConfig { emb_dim: 12, hidden: 16, classes: 13, dropout: 0.5 };
    let base = BaseTagger::new(cfg, &mut rng).unwrap();
    let (corpus, table) = synth_with_vectors(71, 10, 12);

    let mut losses = Vec::new();
    for s in &corpus.sentences {
        let emb = embed_sentence(&table, &s.tokens).unwrap();
        let dist = base.probs(&emb.matrix, MAX_LEN, Some(&emb.mask)).unwrap();
        for t in 0..MAX_LEN {
            let sum: f64 = dist.row(t).iter().sum();
            assert!((sum - 1.0).abs() < 1e-9, "row sum {sum}");
        }
        let mut g = Graph::new();
        let ne = g.constant(vec![MAX_LEN, 12], emb.matrix.clone());
        let probs = base.forward(&mut g, ne, Some(&emb.mask), true, &mut rng).unwrap();
        let gold = g.constant(vec![MAX_LEN, 13], gold_matrix(&s.tags, 13));
        let loss = tag_loss(&mut g, probs, gold, &emb.mask).unwrap();
        let v = g.value(loss)[0];
        assert!(v.is_finite());
        g.backward(loss).unwrap();
        losses.push(v);
    }
    // dropout-free loss of the untrained model is close to uniform
    {
        let s = &corpus.sentences[0];
        let emb = embed_sentence(&table, &s.tokens).unwrap();
        let dist = base.probs(&emb.matrix, MAX_LEN, Some(&emb.mask)).unwrap();
        let mut g = Graph::new();
        let p = g.constant(vec![MAX_LEN, 13], dist.probs);
        let gold = g.constant(vec![MAX_LEN, 13], gold_matrix(&s.tags, 13));
        let loss = tag_loss(&mut g, p, gold, &emb.mask).unwrap();
        let v = g.value(loss)[0];
        assert!((v - (13.0f64).ln()).abs() < 0.3, "initial loss {v}");
    }
    for p in base.registry().params() {
        let t = p.borrow();
        assert!(t.data.iter().all(|v| v.is_finite()));
        if let Some(grad) = &t.grad {
            assert!(grad.iter().all(|v| v.is_finite()));
        }
    }
    // Adam fixed point on zero gradients
    let p = param(vec![4], vec![1.0, -2.0, 0.5, 3.0]);
    p.borrow_mut().grad = Some(vec![0.0; 4]);
    let mut st = vec![AdamState::new(4)];
    for _ in 0..10 {
        adam_step(std::slice::from_ref(&p), &mut st, 0.003).unwrap();
    }
    assert_eq!(p.borrow().data, vec![1.0, -2.0, 0.5, 3.0]);
    pass(8, "unit-sum softmax, near-ln(13) initial loss, Adam fixed point, all values finite");
}

/// 9. Metric arithmetic is exact: TP=2, FP=1, FN=2 scores F1 = 4/7 with no
/// rounding, and the OOV/in-vocab partition sums exactly to the overall
/// confusion matrix.
#[test]
fn criterion_09_metric_arithmetic() {
    let p = prf1(2, 1, 2);
    assert_eq!(p.precision, 2.0 / 3.0);
    assert_eq!(p.recall, 0.5);
    assert_eq!(p.f1, 4.0 / 7.0);

    let cfg = BaseConfig { emb_dim: 6, hidden: 4, classes: 13, dropout: 0.5 };
    let mut rng = ChaCha20Rng::seed_from_u64(17);
    let base = BaseTagger::new(cfg, &mut rng).unwrap();
    let stack = Stack::base_only(base);
    let (corpus, _) = synth_with_vectors(81, 12, 6);
    // drop half the vocabulary so the OOV side is populated
    let kept: Vec<String> = corpus
        .sentences
        .iter()
        .flat_map(|s| s.tokens.iter().cloned())
        .filter(|w| w.len() % 2 == 0)
        .collect();
    let table = EmbeddingTable::random(kept, 6, 19);
    let e = evaluate(&stack, &corpus, &table).unwrap();
    assert!(e.oov.total() > 0 && e.in_vocab.total() > 0);
    let mut sum = e.oov.clone();
    sum.merge(&e.in_vocab);
    assert_eq!(sum, e.overall);
    pass(9, "F1(2,1,2) = 4/7 exactly; OOV partition sums exactly to overall counts");
}

/// 10. Diagnostic only: when STACKTAG_DATASET points at a real tagged
/// corpus, run the full pipeline briefly and report scores. Skipped (and
/// passing) when unset.
#[test]
fn criterion_10_dataset_reproduction() {
    let Some(path) = std::env::var_os("STACKTAG_DATASET") else {
        pass(10, "skipped (set STACKTAG_DATASET to a token\\ttag corpus to enable)");
        return;
    };
    let path = std::path::PathBuf::from(path);
    let raw = stacktag::corpus::parse_corpus(&path, Provenance::Raw).unwrap();
    let (clean, _) = preprocess(&raw);
    let spec = stacktag::corpus::SplitSpec::default_with_seed(0);
    let (train, val, test) = stacktag::corpus::split_corpus(&clean, &spec).unwrap();
    let words: Vec<String> =
        clean.sentences.iter().flat_map(|s| s.tokens.iter().cloned()).collect();
    let table = EmbeddingTable::random(words, 32, 0);
    let cfg = BaseConfig { emb_dim: 32, hidden: 64, classes: 13, dropout: 0.5 };
    let mut rng = ChaCha20Rng::seed_from_u64(0);
    let base = BaseTagger::new(cfg, &mut rng).unwrap();
    let tcfg = TrainConfig { max_epochs: 20, patience: 5, seed: 0, ..TrainConfig::default() };
    let h = train_base(&base, &train, &val, &table, &tcfg).unwrap();
    let e = evaluate(&Stack::base_only(base), &test, &table).unwrap();
    pass(10, &format!(
        "diagnostic run on {} sentences: test entity F1 {:.4}, accuracy {:.4} (best epoch {})",
        clean.len(),
        entity_f1(&e.overall),
        e.overall.token_accuracy(),
        h.best_epoch
    ));
}
