//! Browser bindings for the corpus-model pipeline.
//!
//! Every function takes and returns JSON strings, so the page needs no
//! generated glue types and the same code paths are unit-testable natively.
//! Failures come back as `{"error":{"kind":…,"message":…}}` rather than
//! exceptions, letting the page render them inline.
//!
//! The demo always fits at R = 2: the reduced space is then the plane, and
//! the simplex a triangle the page can draw directly.

use cpm_core::artifact::{self, FitConfig, ModelArtifact, Provenance, SCHEMA_VERSION};
use cpm_core::corpus::{build_vocabulary, read_corpus_text, tokenize, vectorize};
use cpm_core::features::{
    sequence_coefficients, token_similarity_matrix, top_words, vertex_word_matrix, TopWord,
};
use cpm_core::simplex::{fit_mves, MvesConfig};
use cpm_core::subspace::{fit_pca, project, project_matrix};
use cpm_core::{CpmError, Result};
use serde::Serialize;
use wasm_bindgen::prelude::wasm_bindgen;

/// Plot-ready coordinates: one entry per retained corpus line.
#[derive(Serialize)]
struct Scatter {
    xs: Vec<f64>,
    ys: Vec<f64>,
    /// 1-based corpus line numbers, aligned with `xs`/`ys`.
    ids: Vec<usize>,
}

#[derive(Serialize)]
struct VertexWords {
    vertex: usize,
    words: Vec<TopWord>,
}

#[derive(Serialize)]
struct FitView {
    volume: f64,
    line_count: usize,
    vocab_size: usize,
    points: Scatter,
    vertices: Scatter,
    top_words: Vec<VertexWords>,
}

#[derive(Serialize)]
struct FitResponse {
    /// Full model artifact; the page holds it and passes it back verbatim
    /// to the other operations.
    artifact: serde_json::Value,
    view: FitView,
}

#[derive(Serialize)]
struct CoefficientsResponse {
    tokens: Vec<String>,
    /// One non-negative coefficient per vertex, summing to 1.
    coefficients: Vec<f64>,
    /// The text's own position in the plane, for plotting.
    x: f64,
    y: f64,
}

fn error_json(err: &CpmError) -> String {
    serde_json::json!({
        "error": { "kind": err.kind(), "message": err.to_string() }
    })
    .to_string()
}

fn respond<T: Serialize>(result: Result<T>) -> String {
    match result {
        Ok(value) => {
            serde_json::to_string(&value).unwrap_or_else(|e| error_json(&CpmError::from(e)))
        }
        Err(err) => error_json(&err),
    }
}

fn scatter_from_rows(m: &nalgebra::DMatrix<f64>, ids: Vec<usize>) -> Scatter {
    Scatter {
        xs: (0..m.nrows()).map(|i| m[(i, 0)]).collect(),
        ys: (0..m.nrows()).map(|i| m[(i, 1)]).collect(),
        ids,
    }
}

fn fit_impl(corpus: &str, min_count: u32) -> Result<FitResponse> {
    let (utterances, line_ids) = read_corpus_text(corpus);
    let vocabulary = build_vocabulary(&utterances, min_count)?;
    let x = vectorize(&utterances, &vocabulary, Some(&line_ids))?;
    let pca = fit_pca(&x, 2)?;
    let reduced = project(&pca, &x)?;
    let config = MvesConfig::default();
    let simplex = fit_mves(&reduced, &config)?;
    let model = ModelArtifact {
        schema_version: SCHEMA_VERSION,
        vocabulary,
        pca,
        simplex,
        config: FitConfig {
            dim: 2,
            min_count,
            slack: config.slack,
            seed: 0,
        },
        provenance: Provenance {
            corpus_path: "pasted".to_string(),
            line_count: x.utterance_ids.len(),
            timestamp: None,
        },
    };
    let vwm = vertex_word_matrix(&model.vocabulary, &model.pca, &model.simplex)?;
    let k = 8.min(vwm.vocab_size());
    let top_words = (0..vwm.num_vertices())
        .map(|vertex| {
            Ok(VertexWords {
                vertex,
                words: top_words(&vwm, vertex, k)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let view = FitView {
        volume: model.simplex.volume,
        line_count: model.provenance.line_count,
        vocab_size: model.vocabulary.len(),
        points: scatter_from_rows(&reduced.coords, reduced.utterance_ids.clone()),
        vertices: scatter_from_rows(&model.simplex.vertices, (0..=2).collect()),
        top_words,
    };
    Ok(FitResponse {
        artifact: serde_json::to_value(&model)?,
        view,
    })
}

fn coefficients_impl(artifact_json: &str, text: &str) -> Result<CoefficientsResponse> {
    let model = artifact::from_json(artifact_json)?;
    let tokens = tokenize(text);
    let coeffs = sequence_coefficients(&model.vocabulary, &model.pca, &model.simplex, &tokens)?;
    let x = vectorize(std::slice::from_ref(&tokens), &model.vocabulary, None)?;
    let point = project_matrix(&model.pca, &x.matrix)?;
    Ok(CoefficientsResponse {
        tokens,
        coefficients: coeffs.iter().copied().collect(),
        x: point[(0, 0)],
        y: point[(0, 1)],
    })
}

fn similarity_impl(artifact_json: &str, text: &str) -> Result<cpm_core::features::TokenSimilarity> {
    let model = artifact::from_json(artifact_json)?;
    let vwm = vertex_word_matrix(&model.vocabulary, &model.pca, &model.simplex)?;
    token_similarity_matrix(&vwm, &model.vocabulary, &tokenize(text))
}

/// Fits a pasted corpus (one utterance per line, `#` comments ignored) at
/// R = 2 and returns the artifact plus plot-ready scatter, triangle, and
/// top-word data as JSON.
#[wasm_bindgen]
pub fn fit_corpus(corpus: &str, min_count: u32) -> String {
    respond(fit_impl(corpus, min_count))
}

/// Decomposes a text against a fitted artifact: tokens, per-vertex
/// coefficients, and the text's 2-D position.
#[wasm_bindgen]
pub fn coefficients(artifact_json: &str, text: &str) -> String {
    respond(coefficients_impl(artifact_json, text))
}

/// Pairwise token similarities for a text under a fitted artifact: the raw
/// cosine matrix and its row-softmaxed form, shape-tagged row-major.
#[wasm_bindgen]
pub fn similarity(artifact_json: &str, text: &str) -> String {
    respond(similarity_impl(artifact_json, text))
}
