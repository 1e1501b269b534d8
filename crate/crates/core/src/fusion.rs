//! A self-contained, double-precision, multi-head self-attention layer whose
//! query and key streams can be gated toward a per-sequence composition
//! vector, with a similarity overlay added on top of the attention weights.
//!
//! The layer is deliberately toy-sized: one attention block, no feed-forward
//! sublayer, residuals, or normalization. What it provides is exact
//! arithmetic for the gated fusion equations, analytic gradients for every
//! trainable tensor (verified against central finite differences), and
//! integrated-gradients attribution over arbitrary scalar probes.
//!
//! Per head, with input embeddings `X` (n x d_model), composition vector `a`
//! (length R+1), and row-stochastic overlay `M̂` (n x n):
//!
//! ```text
//! Q = X W_Q        K = X W_K        V = X W_V
//! c_Q = aᵀ U_Q     (a context row shared by all positions)
//! λ_Q = tanh(Q v_Q + (c_Q · v_Qa) 1)          per-token gate in [-1, 1]
//! Q̂[i] = (1 - λ_Q[i]) Q[i] + λ_Q[i] c_Q       (K̂ analogous)
//! Â    = softmax(Q̂ K̂ᵀ / √d) + 0.5 (λ_Q + λ_K) ∘ M̂   (row-wise overlay)
//! O    = Â V                                   (values stay ungated)
//! ```
//!
//! Every row of `Â` therefore sums to `1 + 0.5 (λ_Q[i] + λ_K[i])`.
//!
//! Layers are immutable after construction; all evaluation functions are
//! pure and safe to call concurrently.

use crate::{CpmError, Result};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Per-head trainable tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadWeights {
    /// Query projection, d_model x d.
    #[serde(with = "crate::matrix_serde")]
    pub w_q: DMatrix<f64>,
    /// Key projection, d_model x d.
    #[serde(with = "crate::matrix_serde")]
    pub w_k: DMatrix<f64>,
    /// Value projection, d_model x d.
    #[serde(with = "crate::matrix_serde")]
    pub w_v: DMatrix<f64>,
    /// Maps the composition vector to a query-side context row, (R+1) x d.
    #[serde(with = "crate::matrix_serde")]
    pub u_q: DMatrix<f64>,
    /// Maps the composition vector to a key-side context row, (R+1) x d.
    #[serde(with = "crate::matrix_serde")]
    pub u_k: DMatrix<f64>,
    /// Query-side gate weights, length d.
    #[serde(with = "crate::vector_serde")]
    pub v_q: DVector<f64>,
    /// Key-side gate weights, length d.
    #[serde(with = "crate::vector_serde")]
    pub v_k: DVector<f64>,
}

/// The gated attention layer: per-head weights plus the two context gate
/// vectors shared across heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionLayer {
    pub heads: Vec<HeadWeights>,
    /// Query-side context gate weights shared by all heads, length d.
    #[serde(with = "crate::vector_serde")]
    pub v_qa: DVector<f64>,
    /// Key-side context gate weights shared by all heads, length d.
    #[serde(with = "crate::vector_serde")]
    pub v_ka: DVector<f64>,
    /// Embedding width the layer consumes.
    pub d_model: usize,
    /// Per-head query/key/value width d.
    pub head_dim: usize,
    /// Length of the composition vector, R+1.
    pub num_coeffs: usize,
    /// Seed the weights were drawn from.
    pub seed: u64,
}

/// Everything one head computed during a forward pass.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeadTrace {
    /// Query-side gate per position; empty on the vanilla path.
    pub lambda_q: Vec<f64>,
    /// Key-side gate per position; empty on the vanilla path.
    pub lambda_k: Vec<f64>,
    /// Gated attention weights (n x n); 0x0 on the vanilla path.
    #[serde(with = "crate::matrix_serde")]
    pub fused: DMatrix<f64>,
    /// Ungated scaled-dot-product attention weights (n x n).
    #[serde(with = "crate::matrix_serde")]
    pub vanilla: DMatrix<f64>,
    /// Output representations (n x d): fused path if gates were applied,
    /// vanilla path otherwise.
    #[serde(with = "crate::matrix_serde")]
    pub output: DMatrix<f64>,
}

/// Forward-pass record, one entry per head.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttentionTrace {
    pub heads: Vec<HeadTrace>,
}

/// Scalar probe over the layer outputs: the loss is the sum over heads of
/// `<weights[h], output[h]>`. A fixed random probe exercises every gradient
/// path; an all-ones probe is plain output summation.
#[derive(Debug, Clone)]
pub struct LinearProbe {
    /// One n x d weighting per head.
    pub weights: Vec<DMatrix<f64>>,
}

impl LinearProbe {
    /// Sum-of-outputs probe.
    pub fn uniform(heads: usize, n: usize, d: usize) -> LinearProbe {
        LinearProbe {
            weights: vec![DMatrix::from_element(n, d, 1.0); heads],
        }
    }

    /// Seeded random probe with entries in (-1, 1).
    pub fn random(heads: usize, n: usize, d: usize, seed: u64) -> LinearProbe {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LinearProbe {
            weights: (0..heads)
                .map(|_| random_matrix(&mut rng, n, d, 1.0))
                .collect(),
        }
    }

    /// Loss value for a set of per-head outputs.
    pub fn value(&self, outputs: &[DMatrix<f64>]) -> f64 {
        self.weights
            .iter()
            .zip(outputs.iter())
            .map(|(w, o)| w.dot(o))
            .sum()
    }
}

/// Gradients of a scalar probe with respect to every trainable tensor and
/// both runtime inputs.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub heads: Vec<HeadGradients>,
    pub v_qa: DVector<f64>,
    pub v_ka: DVector<f64>,
    /// Gradient with respect to the input embeddings, n x d_model.
    pub x: DMatrix<f64>,
    /// Gradient with respect to the composition vector, length R+1.
    pub a: DVector<f64>,
}

/// Per-head slice of [`Gradients`], field-for-field with [`HeadWeights`].
#[derive(Debug, Clone)]
pub struct HeadGradients {
    pub w_q: DMatrix<f64>,
    pub w_k: DMatrix<f64>,
    pub w_v: DMatrix<f64>,
    pub u_q: DMatrix<f64>,
    pub u_k: DMatrix<f64>,
    pub v_q: DVector<f64>,
    pub v_k: DVector<f64>,
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> DMatrix<f64> {
    // Row-major draw order so the stream of samples is part of the format.
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    DMatrix::from_row_slice(rows, cols, &data)
}

fn random_vector(rng: &mut ChaCha8Rng, len: usize, bound: f64) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.gen_range(-bound..bound))
}

/// Builds a layer with all weights drawn uniformly from
/// (-1/sqrt(fan_in), 1/sqrt(fan_in)), reproducibly for a given seed.
///
/// `r` is the reduced dimension; composition vectors have length `r + 1`.
/// Draw order per head: w_q, w_k, w_v, u_q, u_k, v_q, v_k; then the shared
/// v_qa, v_ka. All dimensions must be at least 1.
pub fn init_layer(heads: usize, d: usize, d_model: usize, r: usize, seed: u64) -> FusionLayer {
    assert!(
        heads >= 1 && d >= 1 && d_model >= 1 && r >= 1,
        "layer dimensions must be at least 1"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let num_coeffs = r + 1;
    let wb = 1.0 / (d_model as f64).sqrt();
    let ub = 1.0 / (num_coeffs as f64).sqrt();
    let vb = 1.0 / (d as f64).sqrt();
    let head_weights = (0..heads)
        .map(|_| HeadWeights {
            w_q: random_matrix(&mut rng, d_model, d, wb),
            w_k: random_matrix(&mut rng, d_model, d, wb),
            w_v: random_matrix(&mut rng, d_model, d, wb),
            u_q: random_matrix(&mut rng, num_coeffs, d, ub),
            u_k: random_matrix(&mut rng, num_coeffs, d, ub),
            v_q: random_vector(&mut rng, d, vb),
            v_k: random_vector(&mut rng, d, vb),
        })
        .collect();
    FusionLayer {
        heads: head_weights,
        v_qa: random_vector(&mut rng, d, vb),
        v_ka: random_vector(&mut rng, d, vb),
        d_model,
        head_dim: d,
        num_coeffs,
        seed,
    }
}

impl FusionLayer {
    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    /// Verifies that every tensor matches the declared dimensions.
    pub fn validate(&self) -> Result<()> {
        let checks: Vec<(&'static str, usize, usize)> = vec![
            ("shared gate vector v_qa", self.v_qa.len(), self.head_dim),
            ("shared gate vector v_ka", self.v_ka.len(), self.head_dim),
        ];
        for (what, found, expected) in checks {
            if found != expected {
                return Err(CpmError::DimensionMismatch {
                    what,
                    expected,
                    found,
                });
            }
        }
        type ShapeCheck = (&'static str, (usize, usize), (usize, usize));
        for head in &self.heads {
            let shapes: Vec<ShapeCheck> = vec![
                (
                    "head weight w_q",
                    head.w_q.shape(),
                    (self.d_model, self.head_dim),
                ),
                (
                    "head weight w_k",
                    head.w_k.shape(),
                    (self.d_model, self.head_dim),
                ),
                (
                    "head weight w_v",
                    head.w_v.shape(),
                    (self.d_model, self.head_dim),
                ),
                (
                    "head weight u_q",
                    head.u_q.shape(),
                    (self.num_coeffs, self.head_dim),
                ),
                (
                    "head weight u_k",
                    head.u_k.shape(),
                    (self.num_coeffs, self.head_dim),
                ),
                ("head gate v_q", (head.v_q.len(), 1), (self.head_dim, 1)),
                ("head gate v_k", (head.v_k.len(), 1), (self.head_dim, 1)),
            ];
            for (what, found, expected) in shapes {
                if found != expected {
                    return Err(CpmError::DimensionMismatch {
                        what,
                        expected: expected.0 * expected.1,
                        found: found.0 * found.1,
                    });
                }
            }
        }
        Ok(())
    }

    /// Serializes all weights to JSON (shape-tagged, row-major matrices).
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Loads a layer from [`to_json`](Self::to_json) output and validates
    /// its shapes.
    pub fn from_json(text: &str) -> Result<FusionLayer> {
        let layer: FusionLayer = serde_json::from_str(text)?;
        layer.validate()?;
        Ok(layer)
    }
}

/// Row-wise softmax with max subtraction.
fn softmax_rows(z: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = z.clone();
    for mut row in out.row_iter_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

fn check_embeddings(layer: &FusionLayer, x: &DMatrix<f64>) -> Result<usize> {
    if x.ncols() != layer.d_model {
        return Err(CpmError::DimensionMismatch {
            what: "embedding width",
            expected: layer.d_model,
            found: x.ncols(),
        });
    }
    if x.nrows() == 0 {
        return Err(CpmError::InvalidParameter(
            "attention needs at least one position".into(),
        ));
    }
    Ok(x.nrows())
}

/// Standard scaled dot-product attention per head; gate and fused fields of
/// the trace are left empty.
pub fn vanilla_attention(layer: &FusionLayer, x: &DMatrix<f64>) -> Result<AttentionTrace> {
    check_embeddings(layer, x)?;
    let scale = 1.0 / (layer.head_dim as f64).sqrt();
    let heads = layer
        .heads
        .iter()
        .map(|head| {
            let q = x * &head.w_q;
            let k = x * &head.w_k;
            let v = x * &head.w_v;
            let attn = softmax_rows(&(&q * k.transpose() * scale));
            let output = &attn * v;
            HeadTrace {
                lambda_q: vec![],
                lambda_k: vec![],
                fused: DMatrix::zeros(0, 0),
                vanilla: attn,
                output,
            }
        })
        .collect();
    Ok(AttentionTrace { heads })
}

/// Gate vectors for one head: λ_Q = tanh(Q v_q + (c_Q · v_qa)) with the
/// context term broadcast across positions, and the K-side analogue.
pub fn gates(
    layer: &FusionLayer,
    head: usize,
    q: &DMatrix<f64>,
    k: &DMatrix<f64>,
    a: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if head >= layer.heads.len() {
        return Err(CpmError::IndexOutOfRange {
            what: "head",
            index: head,
            len: layer.heads.len(),
        });
    }
    check_coeffs(layer, a)?;
    for (what, m) in [("query matrix width", q), ("key matrix width", k)] {
        if m.ncols() != layer.head_dim {
            return Err(CpmError::DimensionMismatch {
                what,
                expected: layer.head_dim,
                found: m.ncols(),
            });
        }
    }
    let hw = &layer.heads[head];
    let (lam_q, lam_k, _, _) = head_gates(hw, &layer.v_qa, &layer.v_ka, q, k, a);
    Ok((lam_q, lam_k))
}

fn check_coeffs(layer: &FusionLayer, a: &DVector<f64>) -> Result<()> {
    if a.len() != layer.num_coeffs {
        return Err(CpmError::DimensionMismatch {
            what: "composition vector length",
            expected: layer.num_coeffs,
            found: a.len(),
        });
    }
    Ok(())
}

fn check_overlay(m_hat: &DMatrix<f64>, n: usize) -> Result<()> {
    if m_hat.nrows() != n || m_hat.ncols() != n {
        return Err(CpmError::DimensionMismatch {
            what: "overlay matrix size",
            expected: n * n,
            found: m_hat.nrows() * m_hat.ncols(),
        });
    }
    for i in 0..n {
        let sum: f64 = m_hat.row(i).iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(CpmError::NotRowStochastic { row: i, sum });
        }
    }
    Ok(())
}

/// Returns (λ_Q, λ_K, c_Q, c_K) for one head.
fn head_gates(
    head: &HeadWeights,
    v_qa: &DVector<f64>,
    v_ka: &DVector<f64>,
    q: &DMatrix<f64>,
    k: &DMatrix<f64>,
    a: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>) {
    let c_q = head.u_q.transpose() * a;
    let c_k = head.u_k.transpose() * a;
    let ctx_q = c_q.dot(v_qa);
    let ctx_k = c_k.dot(v_ka);
    let lam_q = (q * &head.v_q).map(|s| (s + ctx_q).tanh());
    let lam_k = (k * &head.v_k).map(|s| (s + ctx_k).tanh());
    (lam_q, lam_k, c_q, c_k)
}

/// Per-head intermediates kept for the backward pass.
struct HeadCache {
    q: DMatrix<f64>,
    k: DMatrix<f64>,
    v: DMatrix<f64>,
    c_q: DVector<f64>,
    c_k: DVector<f64>,
    lam_q: DVector<f64>,
    lam_k: DVector<f64>,
    q_hat: DMatrix<f64>,
    k_hat: DMatrix<f64>,
    /// The softmax component of the fused attention.
    soft: DMatrix<f64>,
    fused: DMatrix<f64>,
    output: DMatrix<f64>,
}

fn forward_head(
    layer: &FusionLayer,
    head: &HeadWeights,
    x: &DMatrix<f64>,
    a: &DVector<f64>,
    m_hat: &DMatrix<f64>,
) -> HeadCache {
    let n = x.nrows();
    let scale = 1.0 / (layer.head_dim as f64).sqrt();
    let q = x * &head.w_q;
    let k = x * &head.w_k;
    let v = x * &head.w_v;
    let (lam_q, lam_k, c_q, c_k) = head_gates(head, &layer.v_qa, &layer.v_ka, &q, &k, a);
    let mut q_hat = q.clone();
    let mut k_hat = k.clone();
    for i in 0..n {
        for t in 0..layer.head_dim {
            q_hat[(i, t)] = (1.0 - lam_q[i]) * q[(i, t)] + lam_q[i] * c_q[t];
            k_hat[(i, t)] = (1.0 - lam_k[i]) * k[(i, t)] + lam_k[i] * c_k[t];
        }
    }
    let soft = softmax_rows(&(&q_hat * k_hat.transpose() * scale));
    let mut fused = soft.clone();
    for i in 0..n {
        let g = 0.5 * (lam_q[i] + lam_k[i]);
        for j in 0..n {
            fused[(i, j)] += g * m_hat[(i, j)];
        }
    }
    let output = &fused * &v;
    HeadCache {
        q,
        k,
        v,
        c_q,
        c_k,
        lam_q,
        lam_k,
        q_hat,
        k_hat,
        soft,
        fused,
        output,
    }
}

/// Gated attention over all heads. `m_hat` must be n x n with rows summing
/// to 1 within 1e-6; `a` must have length R+1. The trace carries the fused
/// weights, gates, outputs, and the ungated attention for comparison.
pub fn fused_attention(
    layer: &FusionLayer,
    x: &DMatrix<f64>,
    a: &DVector<f64>,
    m_hat: &DMatrix<f64>,
) -> Result<AttentionTrace> {
    let n = check_embeddings(layer, x)?;
    check_coeffs(layer, a)?;
    check_overlay(m_hat, n)?;
    let scale = 1.0 / (layer.head_dim as f64).sqrt();
    let heads = layer
        .heads
        .iter()
        .map(|head| {
            let cache = forward_head(layer, head, x, a, m_hat);
            let vanilla = softmax_rows(&(&cache.q * cache.k.transpose() * scale));
            HeadTrace {
                lambda_q: cache.lam_q.iter().copied().collect(),
                lambda_k: cache.lam_k.iter().copied().collect(),
                fused: cache.fused,
                vanilla,
                output: cache.output,
            }
        })
        .collect();
    Ok(AttentionTrace { heads })
}

/// Backpropagates through a row softmax: given S = softmax(Z) row-wise and
/// dL/dS, returns dL/dZ.
fn softmax_backward(soft: &DMatrix<f64>, d_soft: &DMatrix<f64>) -> DMatrix<f64> {
    let mut dz = soft.clone();
    for i in 0..soft.nrows() {
        let dot: f64 = (0..soft.ncols())
            .map(|j| d_soft[(i, j)] * soft[(i, j)])
            .sum();
        for j in 0..soft.ncols() {
            dz[(i, j)] = soft[(i, j)] * (d_soft[(i, j)] - dot);
        }
    }
    dz
}

/// Probe loss and its exact gradients through the fused path, for every
/// trainable tensor plus the embeddings `x` and composition vector `a`.
pub fn fused_gradients(
    layer: &FusionLayer,
    x: &DMatrix<f64>,
    a: &DVector<f64>,
    m_hat: &DMatrix<f64>,
    probe: &LinearProbe,
) -> Result<(f64, Gradients)> {
    let n = check_embeddings(layer, x)?;
    check_coeffs(layer, a)?;
    check_overlay(m_hat, n)?;
    if probe.weights.len() != layer.heads.len() {
        return Err(CpmError::DimensionMismatch {
            what: "probe head count",
            expected: layer.heads.len(),
            found: probe.weights.len(),
        });
    }
    let d = layer.head_dim;
    let scale = 1.0 / (d as f64).sqrt();
    let mut loss = 0.0;
    let mut grads = Gradients {
        heads: Vec::with_capacity(layer.heads.len()),
        v_qa: DVector::zeros(d),
        v_ka: DVector::zeros(d),
        x: DMatrix::zeros(n, layer.d_model),
        a: DVector::zeros(layer.num_coeffs),
    };
    for (head, g) in layer.heads.iter().zip(probe.weights.iter()) {
        let cache = forward_head(layer, head, x, a, m_hat);
        loss += g.dot(&cache.output);

        // Output and overlay.
        let d_fused = g * cache.v.transpose();
        let dv = cache.fused.transpose() * g;
        let mut d_lam_q = DVector::zeros(n);
        let mut d_lam_k = DVector::zeros(n);
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..n {
                s += d_fused[(i, j)] * m_hat[(i, j)];
            }
            d_lam_q[i] = 0.5 * s;
            d_lam_k[i] = 0.5 * s;
        }

        // Softmax and the gated mixing step.
        let dz = softmax_backward(&cache.soft, &d_fused);
        let d_qhat = &dz * &cache.k_hat * scale;
        let d_khat = dz.transpose() * &cache.q_hat * scale;
        let mut dq = DMatrix::zeros(n, d);
        let mut dk = DMatrix::zeros(n, d);
        let mut dc_q = DVector::zeros(d);
        let mut dc_k = DVector::zeros(d);
        for i in 0..n {
            for t in 0..d {
                dq[(i, t)] += (1.0 - cache.lam_q[i]) * d_qhat[(i, t)];
                dk[(i, t)] += (1.0 - cache.lam_k[i]) * d_khat[(i, t)];
                d_lam_q[i] += d_qhat[(i, t)] * (cache.c_q[t] - cache.q[(i, t)]);
                d_lam_k[i] += d_khat[(i, t)] * (cache.c_k[t] - cache.k[(i, t)]);
                dc_q[t] += cache.lam_q[i] * d_qhat[(i, t)];
                dc_k[t] += cache.lam_k[i] * d_khat[(i, t)];
            }
        }

        // Gate preactivations: λ = tanh(s), ds = dλ (1 - λ²).
        let ds_q = DVector::from_fn(n, |i, _| d_lam_q[i] * (1.0 - cache.lam_q[i].powi(2)));
        let ds_k = DVector::from_fn(n, |i, _| d_lam_k[i] * (1.0 - cache.lam_k[i].powi(2)));
        let dv_q = cache.q.transpose() * &ds_q;
        let dv_k = cache.k.transpose() * &ds_k;
        let sig_q: f64 = ds_q.sum();
        let sig_k: f64 = ds_k.sum();
        grads.v_qa += sig_q * &cache.c_q;
        grads.v_ka += sig_k * &cache.c_k;
        dc_q += sig_q * &layer.v_qa;
        dc_k += sig_k * &layer.v_ka;
        for i in 0..n {
            for t in 0..d {
                dq[(i, t)] += ds_q[i] * head.v_q[t];
                dk[(i, t)] += ds_k[i] * head.v_k[t];
            }
        }

        // Context rows: c = Uᵀ a.
        let du_q = a * dc_q.transpose();
        let du_k = a * dc_k.transpose();
        grads.a += &head.u_q * &dc_q + &head.u_k * &dc_k;

        // Input projections.
        grads.heads.push(HeadGradients {
            w_q: x.transpose() * &dq,
            w_k: x.transpose() * &dk,
            w_v: x.transpose() * &dv,
            u_q: du_q,
            u_k: du_k,
            v_q: dv_q,
            v_k: dv_k,
        });
        grads.x +=
            &dq * head.w_q.transpose() + &dk * head.w_k.transpose() + &dv * head.w_v.transpose();
    }
    Ok((loss, grads))
}

/// Probe loss and gradients through the ungated path. Gate tensors receive
/// zero gradient because they do not enter this computation.
pub fn vanilla_gradients(
    layer: &FusionLayer,
    x: &DMatrix<f64>,
    probe: &LinearProbe,
) -> Result<(f64, Gradients)> {
    let n = check_embeddings(layer, x)?;
    if probe.weights.len() != layer.heads.len() {
        return Err(CpmError::DimensionMismatch {
            what: "probe head count",
            expected: layer.heads.len(),
            found: probe.weights.len(),
        });
    }
    let d = layer.head_dim;
    let scale = 1.0 / (d as f64).sqrt();
    let mut loss = 0.0;
    let mut grads = Gradients {
        heads: Vec::with_capacity(layer.heads.len()),
        v_qa: DVector::zeros(d),
        v_ka: DVector::zeros(d),
        x: DMatrix::zeros(n, layer.d_model),
        a: DVector::zeros(layer.num_coeffs),
    };
    for (head, g) in layer.heads.iter().zip(probe.weights.iter()) {
        let q = x * &head.w_q;
        let k = x * &head.w_k;
        let v = x * &head.w_v;
        let soft = softmax_rows(&(&q * k.transpose() * scale));
        let output = &soft * &v;
        loss += g.dot(&output);

        let d_soft = g * v.transpose();
        let dv = soft.transpose() * g;
        let dz = softmax_backward(&soft, &d_soft);
        let dq = &dz * &k * scale;
        let dk = dz.transpose() * &q * scale;
        grads.heads.push(HeadGradients {
            w_q: x.transpose() * &dq,
            w_k: x.transpose() * &dk,
            w_v: x.transpose() * &dv,
            u_q: DMatrix::zeros(layer.num_coeffs, d),
            u_k: DMatrix::zeros(layer.num_coeffs, d),
            v_q: DVector::zeros(d),
            v_k: DVector::zeros(d),
        });
        grads.x +=
            &dq * head.w_q.transpose() + &dk * head.w_k.transpose() + &dv * head.w_v.transpose();
    }
    Ok((loss, grads))
}

/// Flat parameter vector in a fixed order: per head w_q, w_k, w_v, u_q,
/// u_k, v_q, v_k; then the shared v_qa, v_ka.
fn flatten_params(layer: &FusionLayer) -> Vec<f64> {
    let mut out = Vec::new();
    for head in &layer.heads {
        out.extend(head.w_q.iter());
        out.extend(head.w_k.iter());
        out.extend(head.w_v.iter());
        out.extend(head.u_q.iter());
        out.extend(head.u_k.iter());
        out.extend(head.v_q.iter());
        out.extend(head.v_k.iter());
    }
    out.extend(layer.v_qa.iter());
    out.extend(layer.v_ka.iter());
    out
}

/// Writes a flat vector produced by [`flatten_params`] back into a layer.
fn apply_params(layer: &mut FusionLayer, vals: &[f64]) {
    let mut it = vals.iter();
    let mut fill = |slot: &mut f64| *slot = *it.next().expect("parameter count");
    for head in &mut layer.heads {
        head.w_q.iter_mut().for_each(&mut fill);
        head.w_k.iter_mut().for_each(&mut fill);
        head.w_v.iter_mut().for_each(&mut fill);
        head.u_q.iter_mut().for_each(&mut fill);
        head.u_k.iter_mut().for_each(&mut fill);
        head.v_q.iter_mut().for_each(&mut fill);
        head.v_k.iter_mut().for_each(&mut fill);
    }
    layer.v_qa.iter_mut().for_each(&mut fill);
    layer.v_ka.iter_mut().for_each(&mut fill);
    assert!(it.next().is_none(), "parameter count");
}

/// [`Gradients`] flattened in the same order as [`flatten_params`].
fn flatten_grads(grads: &Gradients) -> Vec<f64> {
    let mut out = Vec::new();
    for head in &grads.heads {
        out.extend(head.w_q.iter());
        out.extend(head.w_k.iter());
        out.extend(head.w_v.iter());
        out.extend(head.u_q.iter());
        out.extend(head.u_k.iter());
        out.extend(head.v_q.iter());
        out.extend(head.v_k.iter());
    }
    out.extend(grads.v_qa.iter());
    out.extend(grads.v_ka.iter());
    out
}

const FD_STEP: f64 = 1e-5;

fn relative_error(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1.0)
}

/// Verifies analytic gradients of the fused path against central finite
/// differences (step 1e-5) for every trainable tensor. Returns the maximum
/// relative error `|g_a - g_fd| / max(1, |g_a|, |g_fd|)`.
pub fn grad_check(
    layer: &FusionLayer,
    x: &DMatrix<f64>,
    a: &DVector<f64>,
    m_hat: &DMatrix<f64>,
    probe: &LinearProbe,
) -> Result<f64> {
    let (_, grads) = fused_gradients(layer, x, a, m_hat, probe)?;
    let analytic = flatten_grads(&grads);
    let eval = |l: &FusionLayer| -> Result<f64> {
        let trace = fused_attention(l, x, a, m_hat)?;
        let outputs: Vec<DMatrix<f64>> = trace.heads.into_iter().map(|h| h.output).collect();
        Ok(probe.value(&outputs))
    };
    fd_sweep(layer, &analytic, eval)
}

/// Vanilla-path analogue of [`grad_check`].
pub fn grad_check_vanilla(
    layer: &FusionLayer,
    x: &DMatrix<f64>,
    probe: &LinearProbe,
) -> Result<f64> {
    let (_, grads) = vanilla_gradients(layer, x, probe)?;
    let analytic = flatten_grads(&grads);
    let eval = |l: &FusionLayer| -> Result<f64> {
        let trace = vanilla_attention(l, x)?;
        let outputs: Vec<DMatrix<f64>> = trace.heads.into_iter().map(|h| h.output).collect();
        Ok(probe.value(&outputs))
    };
    fd_sweep(layer, &analytic, eval)
}

fn fd_sweep(
    layer: &FusionLayer,
    analytic: &[f64],
    eval: impl Fn(&FusionLayer) -> Result<f64>,
) -> Result<f64> {
    let base = flatten_params(layer);
    let mut probe_layer = layer.clone();
    let mut worst: f64 = 0.0;
    let mut vals = base.clone();
    for i in 0..base.len() {
        vals[i] = base[i] + FD_STEP;
        apply_params(&mut probe_layer, &vals);
        let plus = eval(&probe_layer)?;
        vals[i] = base[i] - FD_STEP;
        apply_params(&mut probe_layer, &vals);
        let minus = eval(&probe_layer)?;
        vals[i] = base[i];
        let fd = (plus - minus) / (2.0 * FD_STEP);
        worst = worst.max(relative_error(analytic[i], fd));
    }
    Ok(worst)
}

/// Integrated gradients by the midpoint Riemann rule:
/// `(x - baseline) ∘ mean over k of ∇f(baseline + (k+0.5)/steps (x - baseline))`.
///
/// `f` returns the scalar value and its gradient at a point; only the
/// gradient is used here, the value being the caller's concern.
pub fn integrated_gradients<F>(
    f: F,
    x: &DVector<f64>,
    baseline: &DVector<f64>,
    steps: usize,
) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    if steps < 1 {
        return Err(CpmError::InvalidParameter(
            "steps must be at least 1".into(),
        ));
    }
    if baseline.len() != x.len() {
        return Err(CpmError::DimensionMismatch {
            what: "baseline length",
            expected: x.len(),
            found: baseline.len(),
        });
    }
    let delta = x - baseline;
    let mut acc = DVector::zeros(x.len());
    for k in 0..steps {
        let alpha = (k as f64 + 0.5) / steps as f64;
        let point = baseline + alpha * &delta;
        let (_, grad) = f(&point)?;
        if grad.len() != x.len() {
            return Err(CpmError::DimensionMismatch {
                what: "gradient length",
                expected: x.len(),
                found: grad.len(),
            });
        }
        acc += grad;
    }
    Ok(delta.component_mul(&acc) / steps as f64)
}

/// Ranks vertices by integrated-gradients attribution of a scalar function
/// of the composition vector: largest attribution magnitude first, ties to
/// the smaller index. Magnitude is what marks a vertex as important — a
/// strong negative contribution matters exactly as much as a positive one.
///
/// The baseline defaults to the uniform vector 1/(R+1); attribution uses 128
/// midpoint steps.
pub fn important_vertices<F>(
    f: F,
    a: &DVector<f64>,
    baseline: Option<&DVector<f64>>,
    top: usize,
) -> Result<Vec<usize>>
where
    F: Fn(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    let len = a.len();
    if top > len {
        return Err(CpmError::InvalidParameter(format!(
            "top must satisfy top <= R+1 = {len}"
        )));
    }
    let uniform = DVector::from_element(len, 1.0 / len as f64);
    let base = baseline.unwrap_or(&uniform);
    let attr = integrated_gradients(f, a, base, 128)?;
    let mut order: Vec<usize> = (0..len).collect();
    order.sort_by(|&i, &j| attr[j].abs().total_cmp(&attr[i].abs()).then(i.cmp(&j)));
    order.truncate(top);
    Ok(order)
}
