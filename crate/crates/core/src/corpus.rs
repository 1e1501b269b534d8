//! Corpus preprocessing: tokenization, vocabulary construction, and the
//! column-per-utterance frequency matrix.

use crate::{CpmError, Result};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Surface form of the sentinel absorbing rare and out-of-vocabulary words.
pub const UNK_TOKEN: &str = "[UNK]";

/// Lowercases, splits on whitespace, and isolates punctuation (any
/// non-alphanumeric character) into standalone single-character tokens.
///
/// Total over all inputs; empty input yields an empty list.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !word.is_empty() {
                tokens.push(std::mem::take(&mut word));
            }
        } else if ch.is_alphanumeric() {
            for lc in ch.to_lowercase() {
                word.push(lc);
            }
        } else {
            if !word.is_empty() {
                tokens.push(std::mem::take(&mut word));
            }
            tokens.push(ch.to_string());
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

/// Word-to-index map over a thresholded corpus vocabulary.
///
/// Ordering is descending corpus count with lexicographic tie-breaking, and
/// the `[UNK]` sentinel always sits at the last index. Every corpus word
/// whose count falls below `min_count` maps to the sentinel.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Vocabulary {
    words: Vec<String>,
    unk_index: usize,
    min_count: u32,
    #[serde(skip)]
    index_of: HashMap<String, usize>,
}

impl Vocabulary {
    /// Number of entries, i.e. the bag-of-words dimension. Includes `[UNK]`.
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Ordered surface strings; `words()[i]` has index `i`.
    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn unk_index(&self) -> usize {
        self.unk_index
    }

    pub fn min_count(&self) -> u32 {
        self.min_count
    }

    /// Index of `word`, falling back to the `[UNK]` index.
    pub fn index_or_unk(&self, word: &str) -> usize {
        self.index_of.get(word).copied().unwrap_or(self.unk_index)
    }

    /// Index of `word` if it is a vocabulary entry.
    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index_of.get(word).copied()
    }

    pub fn word(&self, index: usize) -> Option<&str> {
        self.words.get(index).map(|s| s.as_str())
    }

    fn from_parts(words: Vec<String>, unk_index: usize, min_count: u32) -> Self {
        let index_of = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Self {
            words,
            unk_index,
            min_count,
            index_of,
        }
    }
}

// The reverse map is rebuilt on load rather than persisted.
impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D>(deserializer: D) -> std::result::Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        #[derive(Deserialize)]
        struct Raw {
            words: Vec<String>,
            unk_index: usize,
            min_count: u32,
        }
        let raw = Raw::deserialize(deserializer)?;
        if raw.unk_index >= raw.words.len() {
            return Err(serde::de::Error::custom("unk_index out of range"));
        }
        Ok(Vocabulary::from_parts(
            raw.words,
            raw.unk_index,
            raw.min_count,
        ))
    }
}

/// Builds the vocabulary of all tokens occurring at least `min_count` times,
/// ordered by descending count then lexicographically, with `[UNK]` appended
/// last.
pub fn build_vocabulary(utterances: &[Vec<String>], min_count: u32) -> Result<Vocabulary> {
    if min_count < 1 {
        return Err(CpmError::InvalidParameter(
            "min_count must be at least 1".into(),
        ));
    }
    if utterances.is_empty() {
        return Err(CpmError::EmptyCorpus);
    }
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for utt in utterances {
        for tok in utt {
            *counts.entry(tok.as_str()).or_insert(0) += 1;
        }
    }
    let mut kept: Vec<(&str, u64)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= u64::from(min_count))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

    let mut words: Vec<String> = kept.into_iter().map(|(w, _)| w.to_string()).collect();
    words.push(UNK_TOKEN.to_string());
    let unk_index = words.len() - 1;
    Ok(Vocabulary::from_parts(words, unk_index, min_count))
}

/// Column-per-utterance word frequency matrix.
///
/// Rows follow the vocabulary ordering; every retained column is
/// sum-normalized. Utterances with no tokens are dropped and their
/// identifiers recorded in `dropped_ids`.
#[derive(Debug, Clone)]
pub struct UtteranceMatrix {
    /// F x n, non-negative, columns summing to 1.
    pub matrix: DMatrix<f64>,
    /// Source identifier (1-based corpus line number) per retained column.
    pub utterance_ids: Vec<usize>,
    /// Identifiers of utterances dropped for being empty.
    pub dropped_ids: Vec<usize>,
}

/// Counts each utterance's tokens over the vocabulary (out-of-vocabulary
/// tokens land on `[UNK]`) and sum-normalizes every nonempty column.
///
/// `ids` supplies the source identifier per utterance; pass `None` to use
/// positional indices starting at 1.
pub fn vectorize(
    utterances: &[Vec<String>],
    vocab: &Vocabulary,
    ids: Option<&[usize]>,
) -> Result<UtteranceMatrix> {
    if vocab.is_empty() {
        return Err(CpmError::InvalidParameter("empty vocabulary".into()));
    }
    if let Some(ids) = ids {
        if ids.len() != utterances.len() {
            return Err(CpmError::DimensionMismatch {
                what: "utterance ids",
                expected: utterances.len(),
                found: ids.len(),
            });
        }
    }
    let f = vocab.len();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    let mut utterance_ids = Vec::new();
    let mut dropped_ids = Vec::new();
    for (u, utt) in utterances.iter().enumerate() {
        let id = ids.map_or(u + 1, |ids| ids[u]);
        if utt.is_empty() {
            dropped_ids.push(id);
            continue;
        }
        let mut col = vec![0.0; f];
        for tok in utt {
            col[vocab.index_or_unk(tok)] += 1.0;
        }
        let sum: f64 = col.iter().sum();
        for v in &mut col {
            *v /= sum;
        }
        columns.push(col);
        utterance_ids.push(id);
    }
    if columns.is_empty() {
        return Err(CpmError::NoNonemptyUtterances);
    }
    let n = columns.len();
    let matrix = DMatrix::from_fn(f, n, |r, c| columns[c][r]);
    Ok(UtteranceMatrix {
        matrix,
        utterance_ids,
        dropped_ids,
    })
}

/// Reads a corpus from line-oriented text: one utterance per line, lines
/// beginning with `#` ignored. Returns `(token lists, 1-based line numbers)`
/// aligned index-for-index. Blank and comment lines are not represented.
pub fn read_corpus_text(text: &str) -> (Vec<Vec<String>>, Vec<usize>) {
    let mut utterances = Vec::new();
    let mut line_numbers = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.starts_with('#') {
            continue;
        }
        utterances.push(tokenize(line));
        line_numbers.push(i + 1);
    }
    (utterances, line_numbers)
}
