//! Subcommand implementations: thin orchestration over the core library.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use cpm_core::artifact::{self, FitConfig, ModelArtifact, Provenance, SCHEMA_VERSION};
use cpm_core::corpus::{build_vocabulary, read_corpus_text, tokenize, vectorize};
use cpm_core::features::{
    nearest_utterances, sequence_coefficients, token_similarity_matrix, top_words,
    vertex_word_matrix,
};
use cpm_core::fusion::{
    fused_attention, fused_gradients, init_layer, integrated_gradients, FusionLayer, LinearProbe,
};
use cpm_core::simplex::{fit_mves, MvesConfig};
use cpm_core::subspace::{fit_pca, project};
use cpm_core::CpmError;
use nalgebra::{DMatrix, DVector};

use crate::output::{
    print_line, print_pretty, similarity_csv, AttendOutput, AttributeOutput, FitSummary,
    HeadOutput, NearestOutput, Neighbor, PointsOutput, RankedAttribution, TaggedMatrix,
    TopwordsOutput, VertexTable,
};
use crate::{
    AttendArgs, AttributeArgs, CoeffsArgs, FitArgs, Format, NearestArgs, SimmatrixArgs, Target,
    TopwordsArgs,
};

pub fn fit(args: &FitArgs) -> Result<()> {
    let text = fs::read_to_string(&args.corpus)
        .with_context(|| format!("reading corpus {}", args.corpus.display()))?;
    let (utterances, line_ids) = read_corpus_text(&text);
    let vocabulary = build_vocabulary(&utterances, args.min_count)?;
    let x = vectorize(&utterances, &vocabulary, Some(&line_ids))?;
    let pca = fit_pca(&x, args.dim)?;
    let reduced = project(&pca, &x)?;
    let config = MvesConfig {
        slack: args.slack,
        seed: args.seed,
        ..MvesConfig::default()
    };
    let simplex = fit_mves(&reduced, &config)?;
    let model = ModelArtifact {
        schema_version: SCHEMA_VERSION,
        vocabulary,
        pca,
        simplex,
        config: FitConfig {
            dim: args.dim,
            min_count: args.min_count,
            slack: args.slack,
            seed: args.seed,
        },
        provenance: Provenance::for_corpus(&args.corpus, x.utterance_ids.len()),
    };
    artifact::save(&model, &args.out)
        .with_context(|| format!("writing artifact {}", args.out.display()))?;
    if let Some(points_path) = &args.emit_points {
        let points = PointsOutput {
            utterance_ids: reduced.utterance_ids.clone(),
            points: TaggedMatrix(reduced.coords.clone()),
            vertices: TaggedMatrix(model.simplex.vertices.clone()),
        };
        let mut text = serde_json::to_string_pretty(&points)?;
        text.push('\n');
        fs::write(points_path, text)
            .with_context(|| format!("writing points {}", points_path.display()))?;
    }
    print_line(&FitSummary {
        volume: model.simplex.volume,
        iterations: model.simplex.fit_report.iterations,
        max_violation: model.simplex.fit_report.max_violation,
    })
}

pub fn topwords(args: &TopwordsArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let vwm = vertex_word_matrix(&model.vocabulary, &model.pca, &model.simplex)?;
    let k = args.k.min(vwm.vocab_size());
    let vertices: Vec<usize> = match args.vertex {
        Some(j) => vec![j],
        None => (0..vwm.num_vertices()).collect(),
    };
    let tables = vertices
        .into_iter()
        .map(|vertex| {
            Ok(VertexTable {
                vertex,
                words: top_words(&vwm, vertex, k)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    print_pretty(&TopwordsOutput { k, tables })
}

pub fn nearest(args: &NearestArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let text = fs::read_to_string(&args.corpus)
        .with_context(|| format!("reading corpus {}", args.corpus.display()))?;
    let lines: Vec<&str> = text.lines().collect();
    let (utterances, line_ids) = read_corpus_text(&text);
    let x = vectorize(&utterances, &model.vocabulary, Some(&line_ids))?;
    if x.utterance_ids.len() != model.provenance.line_count {
        eprintln!(
            "warning: corpus has {} usable lines but the artifact was fitted on {}",
            x.utterance_ids.len(),
            model.provenance.line_count
        );
    }
    let reduced = project(&model.pca, &x)?;
    let ranked = nearest_utterances(&reduced, &model.simplex, args.vertex, args.m)?;
    let neighbors = ranked
        .into_iter()
        .map(|near| Neighbor {
            id: near.id,
            text: lines[near.id - 1].to_string(),
            distance: near.distance,
        })
        .collect();
    print_pretty(&NearestOutput {
        vertex: args.vertex,
        neighbors,
    })
}

pub fn coeffs(args: &CoeffsArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let tokens = tokenize(&args.text);
    let coeffs = sequence_coefficients(&model.vocabulary, &model.pca, &model.simplex, &tokens)?;
    print_line(&coeffs.iter().copied().collect::<Vec<f64>>())
}

pub fn simmatrix(args: &SimmatrixArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let vwm = vertex_word_matrix(&model.vocabulary, &model.pca, &model.simplex)?;
    let tokens = tokenize(&args.text);
    let sim = token_similarity_matrix(&vwm, &model.vocabulary, &tokens)?;
    match args.format {
        Format::Json => print_pretty(&sim),
        Format::Csv => crate::output::emit(&similarity_csv(&sim)?),
    }
}

pub fn attend(args: &AttendArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let toy = toy_attention(
        &model,
        &args.text,
        args.heads,
        args.head_dim,
        args.embed_dim,
        args.seed,
    )?;
    let trace = fused_attention(&toy.layer, &toy.embeddings, &toy.coeffs, &toy.overlay)?;
    let per_head = trace
        .heads
        .into_iter()
        .enumerate()
        .map(|(head, t)| HeadOutput {
            head,
            lambda_q: t.lambda_q,
            lambda_k: t.lambda_k,
            attention: TaggedMatrix(t.fused),
            vanilla: args.vanilla.then_some(TaggedMatrix(t.vanilla)),
        })
        .collect();
    print_pretty(&AttendOutput {
        tokens: toy.tokens,
        heads: args.heads,
        head_dim: args.head_dim,
        embed_dim: toy.embeddings.ncols(),
        seed: args.seed,
        coefficients: toy.coeffs.iter().copied().collect(),
        per_head,
    })
}

pub fn attribute(args: &AttributeArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let toy = toy_attention(
        &model,
        &args.text,
        args.heads,
        args.head_dim,
        args.embed_dim,
        args.seed,
    )?;
    let n = toy.tokens.len();
    let probe = LinearProbe::uniform(args.heads, n, args.head_dim);
    let (target, labels, attr) = match args.target {
        Target::VertexCoeffs => {
            let len = toy.coeffs.len();
            check_top(args.top, len, "R+1")?;
            let f = |a: &DVector<f64>| {
                let (value, grads) =
                    fused_gradients(&toy.layer, &toy.embeddings, a, &toy.overlay, &probe)?;
                Ok((value, grads.a))
            };
            let baseline = DVector::from_element(len, 1.0 / len as f64);
            let attr = integrated_gradients(f, &toy.coeffs, &baseline, args.steps)?;
            let labels = (0..len).map(|j| format!("vertex-{j}")).collect();
            ("vertex-coeffs", labels, attr)
        }
        Target::Tokens => {
            check_top(args.top, n, "token count")?;
            let d_model = toy.embeddings.ncols();
            let flat = DVector::from_fn(n * d_model, |i, _| {
                toy.embeddings[(i / d_model, i % d_model)]
            });
            let f = |z: &DVector<f64>| {
                let x = DMatrix::from_fn(n, d_model, |i, j| z[i * d_model + j]);
                let (value, grads) =
                    fused_gradients(&toy.layer, &x, &toy.coeffs, &toy.overlay, &probe)?;
                let flat_grad =
                    DVector::from_fn(n * d_model, |i, _| grads.x[(i / d_model, i % d_model)]);
                Ok((value, flat_grad))
            };
            let baseline = DVector::zeros(n * d_model);
            let per_dim = integrated_gradients(f, &flat, &baseline, args.steps)?;
            let attr = DVector::from_fn(n, |t, _| {
                (0..d_model).map(|j| per_dim[t * d_model + j]).sum()
            });
            ("tokens", toy.tokens.clone(), attr)
        }
    };
    let mut order: Vec<usize> = (0..attr.len()).collect();
    order.sort_by(|&i, &j| attr[j].abs().total_cmp(&attr[i].abs()).then(i.cmp(&j)));
    let top = order[..args.top]
        .iter()
        .map(|&index| RankedAttribution {
            index,
            label: labels[index].clone(),
            attribution: attr[index],
        })
        .collect();
    print_pretty(&AttributeOutput {
        target,
        steps: args.steps,
        labels,
        attributions: attr.iter().copied().collect(),
        top,
    })
}

fn load_model(path: &Path) -> Result<ModelArtifact> {
    artifact::load(path).with_context(|| format!("loading model {}", path.display()))
}

fn check_top(top: usize, len: usize, what: &str) -> Result<()> {
    if top > len {
        return Err(
            CpmError::InvalidParameter(format!("top must satisfy top <= {what} = {len}")).into(),
        );
    }
    Ok(())
}

/// Everything `attend` and `attribute` share: tokens, coefficients, the
/// similarity overlay, toy embeddings, and a freshly initialized layer.
struct ToyAttention {
    tokens: Vec<String>,
    coeffs: DVector<f64>,
    overlay: DMatrix<f64>,
    embeddings: DMatrix<f64>,
    layer: FusionLayer,
}

fn toy_attention(
    model: &ModelArtifact,
    text: &str,
    heads: usize,
    head_dim: usize,
    embed_dim: Option<usize>,
    seed: u64,
) -> Result<ToyAttention> {
    let d_model = embed_dim.unwrap_or(heads * head_dim);
    if heads < 1 || head_dim < 1 || d_model < 1 {
        return Err(CpmError::InvalidParameter(
            "heads, head-dim, and embed-dim must be at least 1".into(),
        )
        .into());
    }
    let tokens = tokenize(text);
    let vwm = vertex_word_matrix(&model.vocabulary, &model.pca, &model.simplex)?;
    let sim = token_similarity_matrix(&vwm, &model.vocabulary, &tokens)?;
    let coeffs = sequence_coefficients(&model.vocabulary, &model.pca, &model.simplex, &tokens)?;
    let table = crate::embed::embedding_table(model.vocabulary.len(), d_model, seed);
    let embeddings = crate::embed::embed_tokens(&table, &model.vocabulary, &tokens);
    let layer = init_layer(heads, head_dim, d_model, model.pca.r, seed);
    Ok(ToyAttention {
        tokens,
        coeffs,
        overlay: sim.hat,
        embeddings,
        layer,
    })
}
