//! Serde helpers for general (possibly rectangular) dense matrices.
//!
//! Matrices are written as `{"rows": [[...], ...]}`. A `"dim"` key is accepted
//! on input and must then match a square shape.

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DenseJson {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dim: Option<usize>,
    rows: Vec<Vec<f64>>,
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, String> {
    let nrows = rows.len();
    if nrows == 0 {
        return Err("matrix must have at least one row".into());
    }
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        return Err("ragged matrix rows".into());
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err("non-finite matrix entry".into());
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub mod dense {
    use super::*;

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        DenseJson { dim: None, rows: to_rows(m) }.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let raw = DenseJson::deserialize(d)?;
        let m = from_rows(&raw.rows).map_err(serde::de::Error::custom)?;
        if let Some(n) = raw.dim {
            if m.nrows() != n || m.ncols() != n {
                return Err(serde::de::Error::custom(format!(
                    "dim {n} does not match a {}x{} matrix",
                    m.nrows(),
                    m.ncols()
                )));
            }
        }
        Ok(m)
    }
}

pub mod dense_opt {
    use super::*;

    pub fn serialize<S: Serializer>(m: &Option<DMatrix<f64>>, s: S) -> Result<S::Ok, S::Error> {
        m.as_ref().map(|m| DenseJson { dim: None, rows: to_rows(m) }).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DMatrix<f64>>, D::Error> {
        let raw = Option::<DenseJson>::deserialize(d)?;
        raw.map(|r| from_rows(&r.rows).map_err(serde::de::Error::custom)).transpose()
    }
}
