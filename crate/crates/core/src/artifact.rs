//! Persistence for a fitted model: vocabulary, PCA subspace, simplex, the
//! configuration that produced them, and corpus provenance, as one JSON
//! file.
//!
//! Serialization goes through shortest-round-trip decimal formatting, so a
//! save/load cycle reproduces every numeric field bit for bit. Files carry
//! a schema version; loading any other version is an explicit error, never
//! a silent coercion.

use crate::corpus::Vocabulary;
use crate::simplex::Simplex;
use crate::subspace::PcaModel;
use crate::{CpmError, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Version written by [`save`] and required by [`load`].
pub const SCHEMA_VERSION: u32 = 1;

/// Echo of the parameters the model was fitted with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Reduced dimension R.
    pub dim: usize,
    /// Vocabulary threshold: words below this corpus count map to `[UNK]`.
    pub min_count: u32,
    /// Enclosure slack the simplex was fitted with.
    pub slack: f64,
    /// Seed echoed into the artifact for reproducibility bookkeeping.
    pub seed: u64,
}

/// Where the training corpus came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Path the corpus was read from, as given on the command line.
    pub corpus_path: String,
    /// Number of retained (nonempty, non-comment) corpus lines.
    pub line_count: usize,
    /// RFC 3339 modification time of the corpus file, if it was readable.
    /// Derived from file metadata, not the wall clock, so refitting the
    /// same corpus reproduces the artifact byte for byte.
    pub timestamp: Option<String>,
}

impl Provenance {
    /// Builds provenance for a corpus file, taking the timestamp from the
    /// file's modification time when available.
    pub fn for_corpus(path: &Path, line_count: usize) -> Provenance {
        let timestamp = std::fs::metadata(path)
            .and_then(|m| m.modified())
            .ok()
            .map(|t| humantime::format_rfc3339_seconds(t).to_string());
        Provenance {
            corpus_path: path.display().to_string(),
            line_count,
            timestamp,
        }
    }
}

/// Everything a downstream command needs to reuse a fitted model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub schema_version: u32,
    pub vocabulary: Vocabulary,
    pub pca: PcaModel,
    pub simplex: Simplex,
    pub config: FitConfig,
    pub provenance: Provenance,
}

/// Serializes an artifact to pretty-printed JSON (stable field order,
/// shortest-round-trip numbers) with a trailing newline.
pub fn to_json(artifact: &ModelArtifact) -> Result<String> {
    let mut text = serde_json::to_string_pretty(artifact)?;
    text.push('\n');
    Ok(text)
}

/// Writes an artifact to disk as JSON.
pub fn save(artifact: &ModelArtifact, path: &Path) -> Result<()> {
    std::fs::write(path, to_json(artifact)?)?;
    Ok(())
}

/// Reads an artifact back, refusing any schema version other than
/// [`SCHEMA_VERSION`].
pub fn load(path: &Path) -> Result<ModelArtifact> {
    let text = std::fs::read_to_string(path)?;
    from_json(&text)
}

/// Parses an artifact from JSON text with the same version check as
/// [`load`].
pub fn from_json(text: &str) -> Result<ModelArtifact> {
    // Check the version before interpreting anything else, so files written
    // by a future layout fail with a version message rather than a parse
    // error about some unrelated field.
    let value: serde_json::Value = serde_json::from_str(text)?;
    let found = value
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| CpmError::InvalidParameter("artifact has no schema_version".into()))?;
    if found != SCHEMA_VERSION as u64 {
        return Err(CpmError::SchemaVersion {
            found: found as u32,
            expected: SCHEMA_VERSION,
        });
    }
    Ok(serde_json::from_value(value)?)
}
