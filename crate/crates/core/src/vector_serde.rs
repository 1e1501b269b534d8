//! Plain-array (de)serialization for `DVector<f64>` fields.
//!
//! Vectors carry no shape ambiguity, so they persist as bare JSON arrays.

use nalgebra::DVector;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
    let data: Vec<f64> = v.iter().copied().collect();
    data.serialize(s)
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
    let data = Vec::<f64>::deserialize(d)?;
    Ok(DVector::from_vec(data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::{Deserialize, Serialize};

    #[derive(Serialize, Deserialize)]
    struct Holder {
        #[serde(with = "crate::vector_serde")]
        v: DVector<f64>,
    }

    #[test]
    fn roundtrip_is_exact() {
        let v = DVector::from_vec(vec![1.0, 0.1 + 0.2, -5.5e-13]);
        let json = serde_json::to_string(&Holder { v: v.clone() }).unwrap();
        let back: Holder = serde_json::from_str(&json).unwrap();
        assert_eq!(back.v, v);
    }
}
