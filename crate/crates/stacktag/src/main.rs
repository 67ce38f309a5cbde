//! Command-line front end: corpus preparation, training for every model
//! family, tagging, scoring, and the gradient self-check.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use stacktag::checkpoint::{
    base_from_checkpoint, base_to_checkpoint, refiner_from_checkpoint, refiner_to_checkpoint,
    Checkpoint,
};
use stacktag::corpus::{
    corpus_stats, filter_negative_only, generate_synthetic_corpus, parse_corpus, preprocess,
    split_corpus, write_corpus, Provenance, SplitSpec, SynthSpec, TagSet,
};
use stacktag::embeddings::{load_vec_file, load_vocab_filter, EmbeddingTable};
use stacktag::error::Error;
use stacktag::eval::{entity_f1, evaluate, metrics, metrics_csv};
use stacktag::models::{
    make_noisy_labels, BaseConfig, BaseTagger, CondConfig, CondRefiner, CondVariant, DaeConfig,
    DaeRefiner, Refiner, Stack,
};
use stacktag::training::{train_base, train_refiner, TrainConfig};

#[derive(Parser)]
#[command(name = "stacktag", version, about = "BiLSTM named-entity tagger with label-refinement stacks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic tagged corpus (and optionally matching vectors)
    Synth(SynthArgs),
    /// Clean a raw corpus: drop parenthesis spans and punctuation tokens
    Preprocess(PreprocessArgs),
    /// Shuffle and split a corpus into train/val/test files
    Split(SplitArgs),
    /// Print corpus summary statistics
    Stats(StatsArgs),
    /// Train the base tagger or a refiner
    Train(TrainArgs),
    /// Tag sentences with a trained stack
    Tag(TagArgs),
    /// Score a stack against a gold corpus
    Eval(EvalArgs),
    /// Verify analytic gradients against finite differences
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    sentences: usize,
    #[arg(long)]
    out: PathBuf,
    /// Also write a random embedding table covering the vocabulary
    #[arg(long)]
    embeddings_out: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    dim: usize,
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Additionally drop sentences whose tokens are all tagged catch-all
    #[arg(long)]
    filter_negative_only: bool,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out_prefix: String,
    /// Comma-separated train,val,test fractions summing to 1
    #[arg(long, default_value = "0.70,0.15,0.15")]
    ratios: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    input: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// base, dae, cond-bilstm, or cond-dense
    #[arg(long)]
    model: String,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    /// Restrict the embedding table to this word list
    #[arg(long)]
    vocab_filter: Option<PathBuf>,
    /// JSON config file; values override built-in defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-path overrides, e.g. --set train.lr=0.001 (highest precedence)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Checkpoint output path
    #[arg(long)]
    out: PathBuf,
    /// Frozen base checkpoint (required for refiners)
    #[arg(long)]
    base: Option<PathBuf>,
    /// Epoch history CSV output path
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args)]
struct TagArgs {
    #[arg(long)]
    base: PathBuf,
    #[arg(long)]
    refiner: Option<PathBuf>,
    #[arg(long)]
    embeddings: PathBuf,
    /// Input sentences: one token per line (first tab-separated field),
    /// blank line between sentences
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    base: PathBuf,
    #[arg(long)]
    refiner: Option<PathBuf>,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    gold: PathBuf,
    /// Also print separate scores for in-vocabulary and OOV tokens
    #[arg(long)]
    oov_breakdown: bool,
    /// Write the per-class table here instead of stdout
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Everything configurable from a file, grouped per component. Unspecified
/// fields keep their defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
struct FileConfig {
    base: BaseConfig,
    dae: DaeConfig,
    cond: CondConfig,
    train: TrainConfig,
}

/// defaults < config file < --set overrides
fn resolve_config(path: Option<&Path>, sets: &[String]) -> Result<FileConfig, Error> {
    let mut value = serde_json::to_value(FileConfig::default()).expect("defaults serialize");
    if let Some(p) = path {
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p.display().to_string(), e))?;
        let file: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", p.display())))?;
        merge_json(&mut value, &file);
    }
    for s in sets {
        let (key, raw) = s
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("override {s:?} is not KEY=VALUE")))?;
        let parsed: serde_json::Value =
            serde_json::from_str(raw).unwrap_or(serde_json::Value::String(raw.to_string()));
        set_path(&mut value, key, parsed)?;
    }
    serde_json::from_value(value).map_err(|e| Error::Format(format!("config: {e}")))
}

fn merge_json(base: &mut serde_json::Value, overlay: &serde_json::Value) {
    match (base, overlay) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) => merge_json(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

fn set_path(root: &mut serde_json::Value, key: &str, value: serde_json::Value) -> Result<(), Error> {
    let mut cursor = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cursor
            .as_object_mut()
            .ok_or_else(|| Error::Format(format!("override key {key:?}: {part} is not an object")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cursor = obj
            .entry(part.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    Err(Error::Format("empty override key".into()))
}

fn load_table(args_embeddings: &Path, vocab_filter: Option<&Path>) -> Result<EmbeddingTable, Error> {
    let filter: Option<HashSet<String>> = match vocab_filter {
        Some(p) => Some(load_vocab_filter(p)?),
        None => None,
    };
    load_vec_file(args_embeddings, filter.as_ref())
}

fn load_stack(base: &Path, refiner: Option<&Path>, tagset: &TagSet) -> Result<Stack, Error> {
    let (base_model, _) = base_from_checkpoint(&Checkpoint::read(base)?, tagset)?;
    match refiner {
        None => Ok(Stack::base_only(base_model)),
        Some(p) => {
            let (r, _) = refiner_from_checkpoint(&Checkpoint::read(p)?, tagset)?;
            Stack::new(base_model, r, Default::default())
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let tagset = TagSet::standard();
    match cli.command {
        Command::Synth(a) => {
            let spec = SynthSpec { seed: a.seed, n_sentences: a.sentences, ..SynthSpec::default() };
            let corpus = generate_synthetic_corpus(&spec);
            write_corpus(&corpus, &a.out)?;
            eprintln!("wrote {} sentences to {}", corpus.len(), a.out.display());
            if let Some(vec_out) = a.embeddings_out {
                let words: Vec<String> = corpus
                    .sentences
                    .iter()
                    .flat_map(|s| s.tokens.iter().cloned())
                    .collect::<HashSet<_>>()
                    .into_iter()
                    .collect();
                let table = EmbeddingTable::random(words.clone(), a.dim, a.seed);
                let mut sorted = words;
                sorted.sort();
                let mut text = format!("{} {}\n", sorted.len(), a.dim);
                for w in &sorted {
                    let l = table.lookup(w);
                    text.push_str(w);
                    for v in l.vector.iter() {
                        text.push_str(&format!(" {v}"));
                    }
                    text.push('\n');
                }
                std::fs::write(&vec_out, text)
                    .map_err(|e| Error::io(vec_out.display().to_string(), e))?;
                eprintln!("wrote {} vectors to {}", sorted.len(), vec_out.display());
            }
            Ok(())
        }
        Command::Preprocess(a) => {
            let raw = parse_corpus(&a.input, Provenance::Raw)?;
            let (mut cleaned, report) = preprocess(&raw);
            eprintln!(
                "removed {} tokens, dropped {} emptied sentences, {} unbalanced parenthesis spans",
                report.tokens_removed, report.sentences_dropped, report.unbalanced_parens
            );
            if a.filter_negative_only {
                let (kept, dropped, fraction) = filter_negative_only(&cleaned)?;
                eprintln!(
                    "dropped {dropped} all-catch-all sentences ({:.2}% of corpus)",
                    fraction * 100.0
                );
                cleaned = kept;
            }
            write_corpus(&cleaned, &a.output)?;
            eprintln!("wrote {} sentences to {}", cleaned.len(), a.output.display());
            Ok(())
        }
        Command::Split(a) => {
            let corpus = parse_corpus(&a.input, Provenance::Processed)?;
            let parts: Vec<f64> = a
                .ratios
                .split(',')
                .map(|r| {
                    r.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Format(format!("bad ratio {r:?}")))
                })
                .collect::<Result<_, _>>()?;
            if parts.len() != 3 {
                return Err(Error::Format(format!("need 3 ratios, got {}", parts.len())));
            }
            let spec = SplitSpec::new(parts[0], parts[1], parts[2], a.seed)?;
            let (train, val, test) = split_corpus(&corpus, &spec)?;
            for (name, c) in [("train", &train), ("val", &val), ("test", &test)] {
                let path = PathBuf::from(format!("{}-{name}.tsv", a.out_prefix));
                write_corpus(c, &path)?;
                eprintln!("{}: {} sentences", path.display(), c.len());
            }
            Ok(())
        }
        Command::Stats(a) => {
            let corpus = parse_corpus(&a.input, Provenance::Raw)?;
            println!("{}", corpus_stats(&corpus));
            Ok(())
        }
        Command::Train(a) => cmd_train(a, &tagset),
        Command::Tag(a) => {
            let stack = load_stack(&a.base, a.refiner.as_deref(), &tagset)?;
            let table = load_table(&a.embeddings, None)?;
            let text = std::fs::read_to_string(&a.input)
                .map_err(|e| Error::io(a.input.display().to_string(), e))?;
            let mut out = String::new();
            let mut sentence: Vec<String> = Vec::new();
            let flush = |sentence: &mut Vec<String>, out: &mut String| -> Result<(), Error> {
                if sentence.is_empty() {
                    return Ok(());
                }
                let tags = stack.predict(sentence, &table)?;
                for (tok, &t) in sentence.iter().zip(&tags) {
                    out.push_str(&format!("{tok}\t{}\n", tagset.label(t)));
                }
                // tokens beyond the length cap carry no prediction
                for tok in sentence.iter().skip(tags.len()) {
                    out.push_str(&format!("{tok}\t\n"));
                }
                out.push('\n');
                sentence.clear();
                Ok(())
            };
            for line in text.lines() {
                let tok = line.split('\t').next().unwrap_or("").trim();
                if tok.is_empty() {
                    flush(&mut sentence, &mut out)?;
                } else {
                    sentence.push(tok.to_string());
                }
            }
            flush(&mut sentence, &mut out)?;
            std::fs::write(&a.output, out).map_err(|e| Error::io(a.output.display().to_string(), e))?;
            Ok(())
        }
        Command::Eval(a) => {
            let stack = load_stack(&a.base, a.refiner.as_deref(), &tagset)?;
            let table = load_table(&a.embeddings, None)?;
            let gold = parse_corpus(&a.gold, Provenance::Processed)?;
            let e = evaluate(&stack, &gold, &table)?;
            let mut csv = metrics_csv(&metrics(&e.overall), &tagset);
            if a.oov_breakdown {
                for (name, counts) in [("in-vocab", &e.in_vocab), ("oov", &e.oov)] {
                    let m = metrics(counts);
                    csv.push_str(&format!(
                        "{name},{:.6},{:.6},{:.6},{}\n",
                        m.entity_micro.precision,
                        m.entity_micro.recall,
                        m.entity_micro.f1,
                        counts.total()
                    ));
                }
            }
            eprintln!(
                "entity F1 {:.4}, token accuracy {:.4}, {} truncated tokens",
                entity_f1(&e.overall),
                e.overall.token_accuracy(),
                e.truncated_tokens
            );
            match a.csv {
                Some(p) => std::fs::write(&p, csv).map_err(|e| Error::io(p.display().to_string(), e))?,
                None => print!("{csv}"),
            }
            Ok(())
        }
        Command::Gradcheck(a) => {
            let results = stacktag::gradcheck::run_suite(a.seed)?;
            let mut failed = 0;
            for r in &results {
                println!("{r}");
                if !r.pass {
                    failed += 1;
                }
            }
            if failed > 0 {
                return Err(Error::Invariant(format!("{failed} gradient checks failed")));
            }
            eprintln!("all {} gradient checks passed", results.len());
            Ok(())
        }
    }
}

fn cmd_train(a: TrainArgs, tagset: &TagSet) -> Result<(), Error> {
    let cfg = resolve_config(a.config.as_deref(), &a.sets)?;
    let table = load_table(&a.embeddings, a.vocab_filter.as_deref())?;
    let train = parse_corpus(&a.train, Provenance::Processed)?;
    let val = parse_corpus(&a.val, Provenance::Processed)?;
    let dim = table.dim();
    let classes = tagset.len();

    let history = match a.model.as_str() {
        "base" => {
            let model_cfg = BaseConfig { emb_dim: dim, classes, ..cfg.base };
            echo_config(&a.model, &model_cfg, &cfg.train);
            let mut rng = ChaCha20Rng::seed_from_u64(cfg.train.seed);
            let base = BaseTagger::new(model_cfg, &mut rng)?;
            let h = train_base(&base, &train, &val, &table, &cfg.train)?;
            base_to_checkpoint(&base, tagset, None).write(&a.out)?;
            h
        }
        "dae" | "cond-bilstm" | "cond-dense" => {
            let base_path = a.base.as_deref().ok_or_else(|| {
                Error::State("refiner training requires --base <checkpoint>".into())
            })?;
            let (base, _) = base_from_checkpoint(&Checkpoint::read(base_path)?, tagset)?;
            if base.config.emb_dim != dim {
                return Err(Error::Dimension {
                    op: "train refiner",
                    lhs: vec![base.config.emb_dim],
                    rhs: vec![dim],
                });
            }
            let base_registry = base.registry();
            let train_feed = make_noisy_labels(&base, &train, &table, cfg.train.label_feed)?;
            let val_feed = make_noisy_labels(&base, &val, &table, cfg.train.label_feed)?;
            let mut rng = ChaCha20Rng::seed_from_u64(cfg.train.seed);
            let refiner = match a.model.as_str() {
                "dae" => {
                    let model_cfg = DaeConfig { emb_dim: dim, classes, ..cfg.dae };
                    echo_config(&a.model, &model_cfg, &cfg.train);
                    Refiner::Dae(DaeRefiner::new(model_cfg, &mut rng)?)
                }
                variant => {
                    let model_cfg = CondConfig {
                        emb_dim: dim,
                        classes,
                        variant: if variant == "cond-bilstm" {
                            CondVariant::Bilstm
                        } else {
                            CondVariant::Dense
                        },
                        ..cfg.cond
                    };
                    echo_config(&a.model, &model_cfg, &cfg.train);
                    Refiner::Cond(CondRefiner::new(model_cfg, &mut rng)?)
                }
            };
            let h = train_refiner(
                &refiner,
                &train,
                &train_feed,
                &val,
                &val_feed,
                &table,
                &cfg.train,
                Some(&base_registry),
            )?;
            refiner_to_checkpoint(&refiner, tagset, None).write(&a.out)?;
            h
        }
        other => {
            return Err(Error::State(format!(
                "unknown model {other:?}; expected base, dae, cond-bilstm, or cond-dense"
            )))
        }
    };

    eprintln!(
        "best epoch {} (entity F1 {:.4}){}",
        history.best_epoch,
        history.best_val_f1,
        if history.stopped_early { ", stopped early" } else { "" }
    );
    if let Some(p) = a.history {
        history.write_csv(&p)?;
        eprintln!("history: {}", p.display());
    }
    eprintln!("checkpoint: {}", a.out.display());
    Ok(())
}

fn echo_config<M: Serialize>(model: &str, model_cfg: &M, train_cfg: &TrainConfig) {
    let resolved = serde_json::json!({
        "model": model,
        "config": model_cfg,
        "train": train_cfg,
    });
    eprintln!("resolved config: {resolved}");
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
