//! Pretrained word-vector tables in the text `.vec` layout, the zero-vector
//! OOV policy, and fixed-length padded sentence matrices.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};

/// Fixed sentence length: longer sentences are truncated, shorter ones are
/// padded with zero rows.
pub const MAX_LEN: usize = 30;

/// In-memory word -> vector table. Lookups are exact-match on the UTF-8
/// token; unknown words map to the zero vector.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    dim: usize,
    entries: HashMap<String, Vec<f64>>,
}

/// Result of looking a word up: its vector plus whether it was found.
pub struct Lookup<'a> {
    pub vector: std::borrow::Cow<'a, [f64]>,
    pub in_vocab: bool,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable { dim, entries: HashMap::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, word: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Format(format!(
                "vector of length {} in a dim-{} table",
                vector.len(),
                self.dim
            )));
        }
        self.entries.insert(word.into(), vector);
        Ok(())
    }

    pub fn contains(&self, word: &str) -> bool {
        self.entries.contains_key(word)
    }

    /// Stored vector if present, zero vector otherwise. A stored all-zero
    /// vector still counts as in-vocab.
    pub fn lookup(&self, word: &str) -> Lookup<'_> {
        match self.entries.get(word) {
            Some(v) => Lookup { vector: std::borrow::Cow::Borrowed(v), in_vocab: true },
            None => Lookup {
                vector: std::borrow::Cow::Owned(vec![0.0; self.dim]),
                in_vocab: false,
            },
        }
    }

    /// Deterministic random table for synthetic corpora: every word gets a
    /// distinct vector with components in [-1, 1].
    pub fn random(words: impl IntoIterator<Item = String>, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut table = EmbeddingTable::new(dim);
        let mut sorted: Vec<String> = words.into_iter().collect();
        sorted.sort();
        sorted.dedup();
        for w in sorted {
            let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            table.entries.insert(w, v);
        }
        table
    }
}

/// Padded sentence matrix plus mask and per-position OOV flags.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceEmbedding {
    /// Row-major [MAX_LEN x dim]; pad rows are zero.
    pub matrix: Vec<f64>,
    /// 1.0 for real tokens, 0.0 for pad.
    pub mask: Vec<f64>,
    /// True where a real token was out of vocabulary. False on pad rows.
    pub oov: Vec<bool>,
    /// Number of real (kept) tokens.
    pub real_len: usize,
    /// True when the sentence exceeded [`MAX_LEN`] and was cut.
    pub truncated: bool,
}

/// Embed a tokenized sentence into a fixed [MAX_LEN x dim] matrix.
/// Tokens beyond the cap are dropped.
pub fn embed_sentence(table: &EmbeddingTable, tokens: &[String]) -> Result<SentenceEmbedding> {
    if tokens.is_empty() {
        return Err(Error::DegenerateInput("embed_sentence on empty token list".into()));
    }
    let dim = table.dim();
    let real_len = tokens.len().min(MAX_LEN);
    let mut matrix = vec![0.0; MAX_LEN * dim];
    let mut mask = vec![0.0; MAX_LEN];
    let mut oov = vec![false; MAX_LEN];
    for (i, tok) in tokens.iter().take(MAX_LEN).enumerate() {
        let l = table.lookup(tok);
        matrix[i * dim..(i + 1) * dim].copy_from_slice(&l.vector);
        mask[i] = 1.0;
        oov[i] = !l.in_vocab;
    }
    Ok(SentenceEmbedding {
        matrix,
        mask,
        oov,
        real_len,
        truncated: tokens.len() > MAX_LEN,
    })
}

/// Load a `.vec` text file: header line `count dim`, then one word plus
/// `dim` reals per line. An optional vocabulary filter keeps only listed
/// words. Duplicate words: last occurrence wins, with a warning.
pub fn load_vec_file(path: &Path, vocab_filter: Option<&HashSet<String>>) -> Result<EmbeddingTable> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Format("empty embedding file".into()))?;
    let header = header.map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut parts = header.split_whitespace();
    let declared: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format(format!("bad header line {header:?}")))?;
    let dim: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format(format!("bad header line {header:?}")))?;
    if parts.next().is_some() || dim == 0 {
        return Err(Error::Format(format!("bad header line {header:?}")));
    }

    let mut table = EmbeddingTable::new(dim);
    let mut seen = 0usize;
    for (i, line) in lines {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let word = fields.next().ok_or_else(|| Error::Parse {
            line: lineno,
            reason: "missing word".into(),
        })?;
        let values: Vec<f64> = fields
            .map(|f| {
                f.parse::<f64>().map_err(|_| Error::Parse {
                    line: lineno,
                    reason: format!("malformed numeric field {f:?}"),
                })
            })
            .collect::<Result<_>>()?;
        if values.len() != dim {
            return Err(Error::Format(format!(
                "line {lineno}: {} components for word {word:?}, expected {dim}",
                values.len()
            )));
        }
        seen += 1;
        if let Some(filter) = vocab_filter {
            if !filter.contains(word) {
                continue;
            }
        }
        if table.contains(word) {
            eprintln!("warning: duplicate word {word:?} at line {lineno}; last occurrence wins");
        }
        table.entries.insert(word.to_string(), values);
    }
    if seen != declared {
        eprintln!("warning: header declared {declared} entries but file contains {seen}");
    }
    Ok(table)
}

/// Read a vocabulary-filter file: one word per line.
pub fn load_vocab_filter(path: &Path) -> Result<HashSet<String>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(text.lines().filter(|l| !l.is_empty()).map(String::from).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_two_word_file() {
        let f = write_temp("2 3\nalpha 1.0 2.0 3.0\nbeta -1 0 0.5\n");
        let t = load_vec_file(f.path(), None).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.dim(), 3);
        assert_eq!(t.lookup("alpha").vector.as_ref(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn duplicate_word_last_wins() {
        let f = write_temp("2 2\nw 1 1\nw 2 2\n");
        let t = load_vec_file(f.path(), None).unwrap();
        assert_eq!(t.lookup("w").vector.as_ref(), &[2.0, 2.0]);
    }

    #[test]
    fn empty_file_is_format_error() {
        let f = write_temp("");
        assert!(matches!(load_vec_file(f.path(), None), Err(Error::Format(_))));
    }

    #[test]
    fn malformed_number_names_line() {
        let f = write_temp("1 2\nw 1.0 oops\n");
        let err = load_vec_file(f.path(), None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn dim_mismatch_is_format_error() {
        let f = write_temp("1 3\nw 1.0 2.0\n");
        assert!(matches!(load_vec_file(f.path(), None), Err(Error::Format(_))));
    }

    #[test]
    fn vocab_filter_drops_unlisted_words() {
        let f = write_temp("3 1\na 1\nb 2\nc 3\n");
        let filter: HashSet<String> = ["a", "c"].iter().map(|s| s.to_string()).collect();
        let t = load_vec_file(f.path(), Some(&filter)).unwrap();
        assert_eq!(t.len(), 2);
        assert!(!t.contains("b"));
    }

    #[test]
    fn oov_is_zero_vector_of_table_dim() {
        let mut t = EmbeddingTable::new(300);
        t.insert("known", vec![0.5; 300]).unwrap();
        let l = t.lookup("unknown");
        assert!(!l.in_vocab);
        assert_eq!(l.vector.len(), 300);
        assert!(l.vector.iter().all(|v| *v == 0.0));
        assert!(t.lookup("known").in_vocab);
    }

    #[test]
    fn stored_zero_vector_is_still_in_vocab() {
        let mut t = EmbeddingTable::new(2);
        t.insert("zeroed", vec![0.0, 0.0]).unwrap();
        let l = t.lookup("zeroed");
        assert!(l.in_vocab);
        assert!(l.vector.iter().all(|v| *v == 0.0));
    }

    fn toks(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("t{i}")).collect()
    }

    #[test]
    fn pad_rows_are_zero_and_mask_counts_real_tokens() {
        let t = EmbeddingTable::random(toks(40).into_iter(), 4, 1);
        let e = embed_sentence(&t, &toks(23)).unwrap();
        assert_eq!(e.real_len, 23);
        assert_eq!(e.mask.iter().sum::<f64>(), 23.0);
        assert!(!e.truncated);
        for row in 23..30 {
            assert!(e.matrix[row * 4..(row + 1) * 4].iter().all(|v| *v == 0.0));
            assert_eq!(e.mask[row], 0.0);
        }
    }

    #[test]
    fn exactly_thirty_tokens_has_no_pad() {
        let t = EmbeddingTable::random(toks(40).into_iter(), 4, 1);
        let e = embed_sentence(&t, &toks(30)).unwrap();
        assert_eq!(e.mask.iter().sum::<f64>(), 30.0);
        assert!(!e.truncated);
    }

    #[test]
    fn long_sentences_are_truncated() {
        let t = EmbeddingTable::random(toks(40).into_iter(), 4, 1);
        let e = embed_sentence(&t, &toks(35)).unwrap();
        assert_eq!(e.real_len, 30);
        assert!(e.truncated);
    }

    #[test]
    fn empty_sentence_is_degenerate() {
        let t = EmbeddingTable::new(4);
        assert!(embed_sentence(&t, &[]).is_err());
    }

    #[test]
    fn lookup_is_pure() {
        let t = EmbeddingTable::random(toks(5).into_iter(), 3, 2);
        assert_eq!(
            t.lookup("t1").vector.as_ref(),
            t.lookup("t1").vector.as_ref()
        );
    }
}
