//! Shape-tagged, row-major (de)serialization for `DMatrix<f64>` fields.
//!
//! Persisted matrices carry explicit `rows`/`cols` so files stay readable
//! and shape errors surface at load time instead of as silent reshapes.

use nalgebra::DMatrix;
use serde::de::Error as DeError;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Serialize, Deserialize)]
struct Tagged {
    rows: usize,
    cols: usize,
    /// Row-major entries, `rows * cols` long.
    data: Vec<f64>,
}

pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
    let mut data = Vec::with_capacity(m.nrows() * m.ncols());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            data.push(m[(r, c)]);
        }
    }
    Tagged {
        rows: m.nrows(),
        cols: m.ncols(),
        data,
    }
    .serialize(s)
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
    let tagged = Tagged::deserialize(d)?;
    if tagged.data.len() != tagged.rows * tagged.cols {
        return Err(D::Error::custom(format!(
            "matrix data length {} does not match {}x{}",
            tagged.data.len(),
            tagged.rows,
            tagged.cols
        )));
    }
    Ok(DMatrix::from_row_slice(
        tagged.rows,
        tagged.cols,
        &tagged.data,
    ))
}
