//! Output shapes for the subcommands.
//!
//! Matrices are emitted shape-tagged (`rows`, `cols`, row-major `data`) in
//! every JSON payload, matching the model artifact's own matrix encoding.
//! CSV output follows RFC 4180; floats print with shortest round-trip
//! decimals in both formats.

use anyhow::Result;
use cpm_core::features::{TokenSimilarity, TopWord};
use nalgebra::DMatrix;
use serde::Serialize;

/// A matrix serialized as `{"rows": …, "cols": …, "data": […]}`.
#[derive(Serialize)]
pub struct TaggedMatrix(#[serde(with = "cpm_core::matrix_serde")] pub DMatrix<f64>);

/// One-line summary printed by `fit`.
#[derive(Serialize)]
pub struct FitSummary {
    pub volume: f64,
    pub iterations: usize,
    pub max_violation: f64,
}

/// Scatter data written by `fit --emit-points`.
#[derive(Serialize)]
pub struct PointsOutput {
    /// Source line number of each reduced point, aligned with `points` rows.
    pub utterance_ids: Vec<usize>,
    /// n x R reduced coordinates.
    pub points: TaggedMatrix,
    /// (R+1) x R simplex vertices.
    pub vertices: TaggedMatrix,
}

/// `topwords` payload: one table per requested vertex.
#[derive(Serialize)]
pub struct TopwordsOutput {
    pub k: usize,
    pub tables: Vec<VertexTable>,
}

#[derive(Serialize)]
pub struct VertexTable {
    pub vertex: usize,
    pub words: Vec<TopWord>,
}

/// `nearest` payload.
#[derive(Serialize)]
pub struct NearestOutput {
    pub vertex: usize,
    pub neighbors: Vec<Neighbor>,
}

#[derive(Serialize)]
pub struct Neighbor {
    /// 1-based corpus line number.
    pub id: usize,
    /// The corpus line itself.
    pub text: String,
    /// Euclidean distance to the vertex in the reduced space.
    pub distance: f64,
}

/// `attend` payload.
#[derive(Serialize)]
pub struct AttendOutput {
    pub tokens: Vec<String>,
    pub heads: usize,
    pub head_dim: usize,
    pub embed_dim: usize,
    pub seed: u64,
    /// Composition coefficients driving the gates.
    pub coefficients: Vec<f64>,
    pub per_head: Vec<HeadOutput>,
}

#[derive(Serialize)]
pub struct HeadOutput {
    pub head: usize,
    /// Query-side gate per position.
    pub lambda_q: Vec<f64>,
    /// Key-side gate per position.
    pub lambda_k: Vec<f64>,
    /// Gated attention weights, n x n.
    pub attention: TaggedMatrix,
    /// Ungated attention weights; present only under `--vanilla`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vanilla: Option<TaggedMatrix>,
}

/// `attribute` payload. Attributions are signed; ranking is by magnitude.
#[derive(Serialize)]
pub struct AttributeOutput {
    pub target: &'static str,
    pub steps: usize,
    /// Labels in index order: vertex names or token surfaces.
    pub labels: Vec<String>,
    /// Signed attribution per label, in index order.
    pub attributions: Vec<f64>,
    /// The `--top` largest-magnitude entries, descending.
    pub top: Vec<RankedAttribution>,
}

#[derive(Serialize)]
pub struct RankedAttribution {
    pub index: usize,
    pub label: String,
    pub attribution: f64,
}

/// Prints a value as pretty JSON on standard output.
pub fn print_pretty<T: Serialize>(value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    emit(&text)
}

/// Prints a value as one JSON line on standard output.
pub fn print_line<T: Serialize>(value: &T) -> Result<()> {
    let mut text = serde_json::to_string(value)?;
    text.push('\n');
    emit(&text)
}

/// Writes to standard output, exiting quietly if the reading end of a pipe
/// has gone away (`cpm … | head`).
pub fn emit(text: &str) -> Result<()> {
    use std::io::Write;
    let result = std::io::stdout().lock().write_all(text.as_bytes());
    match result {
        Err(err) if err.kind() == std::io::ErrorKind::BrokenPipe => std::process::exit(0),
        other => Ok(other?),
    }
}

/// Renders both similarity matrices as one RFC 4180 CSV document. The first
/// column discriminates the block (`raw` or `hat`), the second names the row
/// token, and the header repeats the token sequence as column names.
pub fn similarity_csv(sim: &TokenSimilarity) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["matrix".to_string(), "token".to_string()];
    header.extend(sim.tokens.iter().cloned());
    writer.write_record(&header)?;
    for (name, matrix) in [("raw", &sim.raw), ("hat", &sim.hat)] {
        for i in 0..sim.tokens.len() {
            let mut record = vec![name.to_string(), sim.tokens[i].clone()];
            record.extend((0..matrix.ncols()).map(|j| format!("{}", matrix[(i, j)])));
            writer.write_record(&record)?;
        }
    }
    Ok(String::from_utf8(writer.into_inner()?)?)
}
