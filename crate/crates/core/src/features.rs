//! Interpretable artifacts derived from a fitted model: per-vertex word
//! weights, top-correlated word tables, cosine similarity overlays for token
//! sequences, nearest utterances per vertex, and single-sequence composition
//! coefficients.
//!
//! Everything here is a pure function of immutable inputs; all operations
//! are safe to call concurrently.

use crate::corpus::{vectorize, Vocabulary};
use crate::simplex::{barycentric_clipped, Simplex};
use crate::subspace::{backproject, project_matrix, PcaModel, ReducedPoints};
use crate::{CpmError, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Vocabulary-space coordinates of the simplex vertices.
///
/// Entry `(i, j)` is the weight of word `i` at vertex `j`; column `j` is the
/// back-projection `mean + basis * v_j` of vertex `j`. Row `i` is the word
/// vector used for similarity scoring.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VertexWordMatrix {
    /// Vocabulary surfaces, one per row, in vocabulary order.
    pub words: Vec<String>,
    /// F x (R+1) weight matrix.
    #[serde(with = "crate::matrix_serde")]
    pub weights: DMatrix<f64>,
}

/// One row of a top-words table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopWord {
    pub word: String,
    pub weight: f64,
}

/// One row of a nearest-utterances table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearestUtterance {
    /// Source utterance identifier.
    pub id: usize,
    /// Euclidean distance to the vertex in the reduced space.
    pub distance: f64,
}

/// Pairwise cosine similarities for one token sequence, raw and row-softmaxed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenSimilarity {
    /// The token surfaces the rows/columns correspond to.
    pub tokens: Vec<String>,
    /// t x t cosine matrix; symmetric, entries in [-1, 1], diagonal 1 for
    /// tokens whose word vector is nonzero.
    #[serde(with = "crate::matrix_serde")]
    pub raw: DMatrix<f64>,
    /// Row-wise softmax of `raw`; every row sums to 1.
    #[serde(with = "crate::matrix_serde")]
    pub hat: DMatrix<f64>,
}

/// Back-projects the simplex vertices into vocabulary space, one column per
/// vertex.
pub fn vertex_word_matrix(
    vocab: &Vocabulary,
    model: &PcaModel,
    simplex: &Simplex,
) -> Result<VertexWordMatrix> {
    if vocab.len() != model.input_dim() {
        return Err(CpmError::DimensionMismatch {
            what: "vocabulary size vs. PCA input dim",
            expected: model.input_dim(),
            found: vocab.len(),
        });
    }
    if simplex.dim() != model.r {
        return Err(CpmError::DimensionMismatch {
            what: "simplex dim vs. PCA output dim",
            expected: model.r,
            found: simplex.dim(),
        });
    }
    let rows = backproject(model, &simplex.vertices)?;
    Ok(VertexWordMatrix {
        words: vocab.words().to_vec(),
        weights: rows.transpose(),
    })
}

impl VertexWordMatrix {
    /// Vocabulary size F.
    pub fn vocab_size(&self) -> usize {
        self.weights.nrows()
    }

    /// Number of vertices R+1.
    pub fn num_vertices(&self) -> usize {
        self.weights.ncols()
    }
}

/// The `k` highest-weight words of one vertex column, descending; equal
/// weights are ordered lexicographically.
pub fn top_words(v: &VertexWordMatrix, vertex: usize, k: usize) -> Result<Vec<TopWord>> {
    let f = v.vocab_size();
    if vertex >= v.num_vertices() {
        return Err(CpmError::IndexOutOfRange {
            what: "vertex",
            index: vertex,
            len: v.num_vertices(),
        });
    }
    if k < 1 || k > f {
        return Err(CpmError::InvalidParameter(format!(
            "k must satisfy 1 <= k <= F = {f}"
        )));
    }
    let mut order: Vec<usize> = (0..f).collect();
    order.sort_by(|&a, &b| {
        v.weights[(b, vertex)]
            .total_cmp(&v.weights[(a, vertex)])
            .then_with(|| v.words[a].cmp(&v.words[b]))
    });
    Ok(order[..k]
        .iter()
        .map(|&i| TopWord {
            word: v.words[i].clone(),
            weight: v.weights[(i, vertex)],
        })
        .collect())
}

/// Cosine of word rows `i` and `j`; 0 if either row is the zero vector.
pub fn word_similarity(v: &VertexWordMatrix, i: usize, j: usize) -> Result<f64> {
    let f = v.vocab_size();
    for (label, idx) in [("word index i", i), ("word index j", j)] {
        if idx >= f {
            return Err(CpmError::IndexOutOfRange {
                what: label,
                index: idx,
                len: f,
            });
        }
    }
    Ok(cosine(
        &v.weights.row(i).transpose(),
        &v.weights.row(j).transpose(),
    ))
}

/// Builds the pairwise similarity overlay for a token sequence. Tokens
/// outside the vocabulary fall back to the `[UNK]` row.
pub fn token_similarity_matrix(
    v: &VertexWordMatrix,
    vocab: &Vocabulary,
    tokens: &[String],
) -> Result<TokenSimilarity> {
    if tokens.is_empty() {
        return Err(CpmError::EmptyTokens);
    }
    if vocab.len() != v.vocab_size() {
        return Err(CpmError::DimensionMismatch {
            what: "vocabulary size vs. weight rows",
            expected: v.vocab_size(),
            found: vocab.len(),
        });
    }
    let t = tokens.len();
    let rows: Vec<DVector<f64>> = tokens
        .iter()
        .map(|tok| v.weights.row(vocab.index_or_unk(tok)).transpose())
        .collect();
    let mut raw = DMatrix::zeros(t, t);
    for i in 0..t {
        for j in i..t {
            let s = cosine(&rows[i], &rows[j]);
            raw[(i, j)] = s;
            raw[(j, i)] = s;
        }
    }
    let mut hat = DMatrix::zeros(t, t);
    for i in 0..t {
        let soft = softmax(raw.row(i).iter().copied());
        for (j, s) in soft.into_iter().enumerate() {
            hat[(i, j)] = s;
        }
    }
    Ok(TokenSimilarity {
        tokens: tokens.to_vec(),
        raw,
        hat,
    })
}

/// The `m` utterances closest to vertex `vertex` in the reduced space,
/// ascending distance; equal distances are ordered by utterance id.
pub fn nearest_utterances(
    points: &ReducedPoints,
    simplex: &Simplex,
    vertex: usize,
    m: usize,
) -> Result<Vec<NearestUtterance>> {
    let n = points.coords.nrows();
    if vertex >= simplex.num_vertices() {
        return Err(CpmError::IndexOutOfRange {
            what: "vertex",
            index: vertex,
            len: simplex.num_vertices(),
        });
    }
    if points.coords.ncols() != simplex.dim() {
        return Err(CpmError::DimensionMismatch {
            what: "point dim vs. simplex dim",
            expected: simplex.dim(),
            found: points.coords.ncols(),
        });
    }
    if m > n {
        return Err(CpmError::InvalidParameter(format!(
            "m must satisfy m <= n = {n}"
        )));
    }
    let target = simplex.vertices.row(vertex);
    let mut ranked: Vec<NearestUtterance> = (0..n)
        .map(|i| NearestUtterance {
            id: points.utterance_ids[i],
            distance: (points.coords.row(i) - target).norm(),
        })
        .collect();
    ranked.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.id.cmp(&b.id)));
    ranked.truncate(m);
    Ok(ranked)
}

/// Composition coefficients for a single token sequence: vectorize, project,
/// and decompose with clipping. Token order is irrelevant (bag of words).
pub fn sequence_coefficients(
    vocab: &Vocabulary,
    model: &PcaModel,
    simplex: &Simplex,
    tokens: &[String],
) -> Result<DVector<f64>> {
    if tokens.is_empty() {
        return Err(CpmError::EmptyTokens);
    }
    let x = vectorize(&[tokens.to_vec()], vocab, None)?;
    let reduced = project_matrix(model, &x.matrix)?;
    let point = reduced.row(0).transpose();
    let (coeffs, _) = barycentric_clipped(simplex, &point)?;
    Ok(coeffs)
}

fn cosine(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let na = a.norm();
    let nb = b.norm();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (a.dot(b) / (na * nb)).clamp(-1.0, 1.0)
}

/// Max-subtracted softmax; the result sums to 1.
fn softmax(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let vals: Vec<f64> = values.collect();
    let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = vals.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
