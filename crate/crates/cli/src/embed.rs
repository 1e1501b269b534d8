//! Toy embedding table: a seeded random stand-in for a trained encoder.
//!
//! Real deployments would feed contextual encoder states into the attention
//! layer; here each vocabulary entry gets a fixed random vector so the
//! `attend` and `attribute` commands are self-contained and reproducible.

use cpm_core::corpus::Vocabulary;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Builds an F x d_model table with entries drawn uniformly from
/// (-1/sqrt(d_model), 1/sqrt(d_model)). Draws are row-major in vocabulary
/// order, so a (vocabulary size, width, seed) triple pins the table exactly.
pub fn embedding_table(vocab_len: usize, d_model: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = 1.0 / (d_model as f64).sqrt();
    let data: Vec<f64> = (0..vocab_len * d_model)
        .map(|_| rng.gen_range(-bound..bound))
        .collect();
    DMatrix::from_row_slice(vocab_len, d_model, &data)
}

/// Stacks one table row per token, in token order; out-of-vocabulary tokens
/// use the `[UNK]` row.
pub fn embed_tokens(table: &DMatrix<f64>, vocab: &Vocabulary, tokens: &[String]) -> DMatrix<f64> {
    DMatrix::from_fn(tokens.len(), table.ncols(), |i, j| {
        table[(vocab.index_or_unk(&tokens[i]), j)]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use cpm_core::corpus::{build_vocabulary, tokenize};

    fn vocab() -> Vocabulary {
        let utts = vec![tokenize("alpha beta gamma"), tokenize("beta gamma delta")];
        build_vocabulary(&utts, 1).unwrap()
    }

    #[test]
    fn table_is_seed_deterministic_and_bounded() {
        let a = embedding_table(7, 6, 99);
        let b = embedding_table(7, 6, 99);
        assert_eq!(a, b);
        let c = embedding_table(7, 6, 100);
        assert_ne!(a, c);
        let bound = 1.0 / 6.0_f64.sqrt();
        assert!(a.iter().all(|v| v.abs() < bound));
    }

    #[test]
    fn tokens_pick_their_vocabulary_rows() {
        let vocab = vocab();
        let table = embedding_table(vocab.len(), 4, 1);
        let tokens = tokenize("gamma alpha");
        let x = embed_tokens(&table, &vocab, &tokens);
        assert_eq!(x.nrows(), 2);
        let g = vocab.index_of("gamma").unwrap();
        let a = vocab.index_of("alpha").unwrap();
        assert_eq!(x.row(0), table.row(g));
        assert_eq!(x.row(1), table.row(a));
    }

    #[test]
    fn unknown_tokens_share_the_unk_row() {
        let vocab = vocab();
        let table = embedding_table(vocab.len(), 4, 1);
        let tokens = vec!["zzz".to_string(), "qqq".to_string()];
        let x = embed_tokens(&table, &vocab, &tokens);
        assert_eq!(x.row(0), table.row(vocab.unk_index()));
        assert_eq!(x.row(0), x.row(1));
    }
}
