//! PCA reduction of utterance vectors and back-projection to vocabulary
//! space.
//!
//! The normative algorithm is an SVD of the centered data matrix; an
//! explicit covariance eigendecomposition would square the condition number
//! for wide matrices and appears only as a test oracle.

use crate::corpus::UtteranceMatrix;
use crate::{CpmError, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Fitted PCA subspace: column mean, orthonormal basis, and the sample
/// covariance eigenvalues of the retained directions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PcaModel {
    /// Column mean of the fit data, length F.
    pub mean: Vec<f64>,
    /// F x R, orthonormal columns, deterministic sign convention: the
    /// largest-magnitude entry of each column is positive.
    #[serde(with = "crate::matrix_serde")]
    pub basis: DMatrix<f64>,
    /// Descending, non-negative, length R. Eigenvalues of the 1/(n-1)
    /// sample covariance along the basis directions.
    pub eigenvalues: Vec<f64>,
    /// Target dimension.
    pub r: usize,
}

/// Utterance representations in the reduced space, one row per utterance.
#[derive(Debug, Clone)]
pub struct ReducedPoints {
    /// n x R; row i is basis^T (x_i - mean).
    pub coords: DMatrix<f64>,
    pub utterance_ids: Vec<usize>,
}

/// Singular values of the centered data, descending, with the rank under the
/// standard `sigma_max * max(dim) * eps` threshold.
fn centered_svd(x: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>, Vec<f64>, usize) {
    let f = x.nrows();
    let n = x.ncols();
    let mean = x.column_mean();
    let mut centered = x.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    let svd = centered.svd(true, false);
    let u = svd.u.expect("left singular vectors requested");

    // nalgebra does not guarantee ordering; sort descending, stable by index.
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    let singular: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let u_sorted = DMatrix::from_fn(f, order.len(), |r, c| u[(r, order[c])]);

    let tol = singular.first().copied().unwrap_or(0.0) * (f.max(n) as f64) * f64::EPSILON;
    let rank = singular.iter().filter(|&&s| s > tol).count();
    (mean, u_sorted, singular, rank)
}

/// Fits an R-dimensional PCA model to the columns of `x`.
pub fn fit_pca(x: &UtteranceMatrix, r: usize) -> Result<PcaModel> {
    let f = x.matrix.nrows();
    let n = x.matrix.ncols();
    if r < 1 || n < 2 || r > f.min(n - 1) {
        return Err(CpmError::InvalidParameter(format!(
            "R must satisfy 1 <= R <= min(F, n-1) = {}",
            f.min(n.saturating_sub(1))
        )));
    }
    let (mean, u, singular, rank) = centered_svd(&x.matrix);
    if r > rank {
        return Err(CpmError::RankDeficient { max_usable: rank });
    }

    let mut basis = u.columns(0, r).into_owned();
    for mut col in basis.column_iter_mut() {
        // Largest-magnitude entry made positive; first index wins ties.
        let mut pivot = 0;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        if col[pivot] < 0.0 {
            col.neg_mut();
        }
    }

    let denom = (n - 1) as f64;
    let eigenvalues: Vec<f64> = singular
        .iter()
        .take(r)
        .map(|s| (s * s / denom).max(0.0))
        .collect();

    Ok(PcaModel {
        mean: mean.iter().copied().collect(),
        basis,
        eigenvalues,
        r,
    })
}

impl PcaModel {
    /// Vocabulary-space dimension F.
    pub fn input_dim(&self) -> usize {
        self.basis.nrows()
    }

    pub fn mean_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.mean)
    }
}

/// Projects columns of `x` into the reduced space: row i of the result is
/// basis^T (x_i - mean).
pub fn project(model: &PcaModel, x: &UtteranceMatrix) -> Result<ReducedPoints> {
    let coords = project_matrix(model, &x.matrix)?;
    Ok(ReducedPoints {
        coords,
        utterance_ids: x.utterance_ids.clone(),
    })
}

/// Matrix form of [`project`]: columns of `x` become rows of the result.
pub fn project_matrix(model: &PcaModel, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.nrows() != model.input_dim() {
        return Err(CpmError::DimensionMismatch {
            what: "project input rows",
            expected: model.input_dim(),
            found: x.nrows(),
        });
    }
    let mean = model.mean_vector();
    let mut centered = x.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    Ok(centered.transpose() * &model.basis)
}

/// Maps reduced-space rows of `y` (m x R) back to vocabulary space
/// (m x F): each row becomes mean + basis * y.
pub fn backproject(model: &PcaModel, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if y.ncols() != model.r {
        return Err(CpmError::DimensionMismatch {
            what: "backproject input cols",
            expected: model.r,
            found: y.ncols(),
        });
    }
    let mut out = y * model.basis.transpose();
    let mean = model.mean_vector();
    for mut row in out.row_iter_mut() {
        row += mean.transpose();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(f: usize, n: usize, seed: u64) -> UtteranceMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        UtteranceMatrix {
            matrix: DMatrix::from_fn(f, n, |_, _| rng.gen_range(-1.0..1.0)),
            utterance_ids: (1..=n).collect(),
            dropped_ids: vec![],
        }
    }

    /// Test oracle: eigenvalues of the explicit 1/(n-1) sample covariance,
    /// descending. Independent of the SVD path under test.
    fn covariance_eigenvalues(x: &DMatrix<f64>) -> Vec<f64> {
        let n = x.ncols();
        let mean = x.column_mean();
        let mut centered = x.clone();
        for mut col in centered.column_iter_mut() {
            col -= &mean;
        }
        let cov = &centered * centered.transpose() / (n as f64 - 1.0);
        let mut eig: Vec<f64> = SymmetricEigen::new(cov)
            .eigenvalues
            .iter()
            .copied()
            .collect();
        eig.sort_by(|a, b| b.partial_cmp(a).unwrap());
        eig
    }

    #[test]
    fn eigenvalues_match_covariance_oracle() {
        let x = random_matrix(5, 10, 7);
        let model = fit_pca(&x, 3).unwrap();
        let oracle = covariance_eigenvalues(&x.matrix);
        for (got, want) in model.eigenvalues.iter().zip(oracle.iter()) {
            assert!(
                (got - want).abs() <= 1e-8 * (1.0 + want.abs()),
                "{got} vs {want}"
            );
        }
    }

    #[test]
    fn total_variance_matches_covariance_trace() {
        for seed in 0..5 {
            let x = random_matrix(4, 9, seed);
            let model = fit_pca(&x, 3).unwrap();
            // rank <= n-1 = 8, and F = 4, so R = 3 of 4 possible; the full
            // spectrum comes from the oracle.
            let oracle = covariance_eigenvalues(&x.matrix);
            let trace: f64 = oracle.iter().sum();
            let top: f64 = model.eigenvalues.iter().sum();
            assert!(top <= trace + 1e-9);
            assert!((oracle[..3].iter().sum::<f64>() - top).abs() < 1e-8 * trace);
        }
    }

    #[test]
    fn exact_subspace_reconstructs_and_truncates_spectrum() {
        // Points in an exact 2-D affine subspace of 6-dim space.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let b = DMatrix::from_fn(6, 2, |_, _| rng.gen_range(-1.0..1.0));
        let offset = DVector::from_fn(6, |_, _| rng.gen_range(-1.0..1.0));
        let n = 12;
        let coords = DMatrix::from_fn(2, n, |_, _| rng.gen_range(-1.0..1.0));
        let mut data = &b * coords;
        for mut col in data.column_iter_mut() {
            col += &offset;
        }
        let x = UtteranceMatrix {
            matrix: data.clone(),
            utterance_ids: (1..=n).collect(),
            dropped_ids: vec![],
        };
        let model = fit_pca(&x, 2).unwrap();
        let reduced = project(&model, &x).unwrap();
        let recon = backproject(&model, &reduced.coords).unwrap();
        for c in 0..n {
            for r in 0..6 {
                assert!((recon[(c, r)] - data[(r, c)]).abs() < 1e-8);
            }
        }
        // Spectrum vanishes past the true rank.
        let oracle = covariance_eigenvalues(&data);
        for ev in &oracle[2..] {
            assert!(ev.abs() < 1e-12);
        }
        // Asking for more than the rank fails loudly.
        let err = fit_pca(&x, 3).unwrap_err();
        match err {
            CpmError::RankDeficient { max_usable } => assert_eq!(max_usable, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn duplicated_columns_leave_basis_and_mean_unchanged() {
        let x = random_matrix(5, 8, 3);
        let doubled = UtteranceMatrix {
            matrix: DMatrix::from_fn(5, 16, |r, c| x.matrix[(r, c % 8)]),
            utterance_ids: (1..=16).collect(),
            dropped_ids: vec![],
        };
        let m1 = fit_pca(&x, 3).unwrap();
        let m2 = fit_pca(&doubled, 3).unwrap();
        for i in 0..5 {
            assert!((m1.mean[i] - m2.mean[i]).abs() < 1e-12);
        }
        assert!((&m1.basis - &m2.basis).abs().max() < 1e-8);
        // Duplication rescales eigenvalues by 2(n-1)/(2n-1).
        let scale = 2.0 * 7.0 / 15.0;
        for (a, b) in m1.eigenvalues.iter().zip(m2.eigenvalues.iter()) {
            assert!((a * scale - b).abs() < 1e-10 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn basis_is_orthonormal() {
        let x = random_matrix(7, 12, 5);
        let model = fit_pca(&x, 4).unwrap();
        let gram = model.basis.transpose() * &model.basis;
        let eye = DMatrix::<f64>::identity(4, 4);
        assert!((gram - eye).abs().max() < 1e-8);
    }

    #[test]
    fn projecting_the_mean_gives_origin() {
        let x = random_matrix(6, 9, 13);
        let model = fit_pca(&x, 2).unwrap();
        let mean_col = DMatrix::from_column_slice(6, 1, &model.mean);
        let coords = project_matrix(&model, &mean_col).unwrap();
        assert!(coords.abs().max() < 1e-12);
    }

    #[test]
    fn reconstruction_residual_equals_discarded_spectrum() {
        for seed in 0..5 {
            let x = random_matrix(6, 10, 100 + seed);
            let r = 3;
            let model = fit_pca(&x, r).unwrap();
            let reduced = project(&model, &x).unwrap();
            let recon = backproject(&model, &reduced.coords).unwrap();
            let mut residual = 0.0;
            for c in 0..10 {
                for row in 0..6 {
                    let d = x.matrix[(row, c)] - recon[(c, row)];
                    residual += d * d;
                }
            }
            let oracle = covariance_eigenvalues(&x.matrix);
            let discarded: f64 = oracle[r..].iter().sum::<f64>() * 9.0;
            assert!(
                (residual - discarded).abs() <= 1e-6 * (1.0 + discarded),
                "residual {residual} vs discarded {discarded}"
            );
        }
    }

    #[test]
    fn project_is_deterministic_for_training_columns() {
        let x = random_matrix(5, 9, 21);
        let model = fit_pca(&x, 3).unwrap();
        let all = project(&model, &x).unwrap();
        let single = UtteranceMatrix {
            matrix: x.matrix.columns(4, 1).into_owned(),
            utterance_ids: vec![x.utterance_ids[4]],
            dropped_ids: vec![],
        };
        let one = project(&model, &single).unwrap();
        for j in 0..3 {
            assert_eq!(one.coords[(0, j)], all.coords[(4, j)]);
        }
    }

    #[test]
    fn backproject_origin_gives_mean() {
        let x = random_matrix(5, 9, 2);
        let model = fit_pca(&x, 2).unwrap();
        let out = backproject(&model, &DMatrix::zeros(1, 2)).unwrap();
        for i in 0..5 {
            assert!((out[(0, i)] - model.mean[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn project_backproject_roundtrips_reduced_vectors() {
        let x = random_matrix(6, 11, 17);
        let model = fit_pca(&x, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let y = DMatrix::from_fn(4, 3, |_, _| rng.gen_range(-2.0..2.0));
        let up = backproject(&model, &y).unwrap();
        let down = project_matrix(&model, &up.transpose()).unwrap();
        assert!((&down - &y).abs().max() < 1e-9);
    }

    #[test]
    fn fit_is_deterministic() {
        let x = random_matrix(8, 14, 40);
        let a = fit_pca(&x, 4).unwrap();
        let b = fit_pca(&x, 4).unwrap();
        assert_eq!(a.basis, b.basis);
        assert_eq!(a.eigenvalues, b.eigenvalues);
        assert_eq!(a.mean, b.mean);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let x = random_matrix(5, 9, 2);
        let model = fit_pca(&x, 2).unwrap();
        let wrong = random_matrix(4, 3, 8);
        assert!(matches!(
            project(&model, &wrong),
            Err(CpmError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            backproject(&model, &DMatrix::zeros(2, 3)),
            Err(CpmError::DimensionMismatch { .. })
        ));
    }
}
