//! JSON and CSV conventions: matrices are row-major nested arrays, scalars
//! are promoted to 1×1, and CSV numbers carry 17 significant digits so that
//! every `f64` round-trips exactly.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Deserialize)]
#[serde(untagged)]
enum RawMatrix {
    Scalar(f64),
    Flat(Vec<f64>),
    Nested(Vec<Vec<f64>>),
}

fn nested_to_matrix(rows: Vec<Vec<f64>>) -> Result<DMatrix<f64>, String> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != ncols) {
        return Err("ragged matrix rows".into());
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(DMatrix::from_row_slice(nrows, ncols, &flat))
}

fn matrix_to_nested(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().cloned().collect()).collect()
}

/// `#[serde(with = "mat")]` for `DMatrix<f64>` fields.
pub mod mat {
    use super::*;

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        matrix_to_nested(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        match RawMatrix::deserialize(d)? {
            RawMatrix::Scalar(v) => Ok(DMatrix::from_element(1, 1, v)),
            RawMatrix::Flat(_) => Err(D::Error::custom(
                "matrices must be nested row arrays (a flat array is ambiguous)",
            )),
            RawMatrix::Nested(rows) => nested_to_matrix(rows).map_err(D::Error::custom),
        }
    }
}

/// `#[serde(with = "vector")]` for `DVector<f64>` fields: a scalar, a flat
/// array, or an n×1 nested column.
pub mod vector {
    use super::*;

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        match RawMatrix::deserialize(d)? {
            RawMatrix::Scalar(v) => Ok(DVector::from_element(1, v)),
            RawMatrix::Flat(v) => Ok(DVector::from_vec(v)),
            RawMatrix::Nested(rows) => {
                let m = nested_to_matrix(rows).map_err(D::Error::custom)?;
                if m.ncols() != 1 {
                    return Err(D::Error::custom("vector must be a column"));
                }
                Ok(DVector::from_column_slice(m.as_slice()))
            }
        }
    }
}

/// Formats one CSV number: 17 significant digits, scientific notation.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Minimal CSV table builder with the fixed number format.
#[derive(Debug, Clone)]
pub struct CsvTable {
    out: String,
    columns: usize,
}

impl CsvTable {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        let mut out = String::new();
        let names: Vec<&str> = header.iter().map(|h| h.as_ref()).collect();
        let _ = writeln!(out, "{}", names.join(","));
        Self { out, columns: header.len() }
    }

    /// Appends a row of preformatted cells.
    pub fn push_cells(&mut self, cells: &[String]) {
        debug_assert_eq!(cells.len(), self.columns);
        let _ = writeln!(self.out, "{}", cells.join(","));
    }

    pub fn push_floats(&mut self, values: &[f64]) {
        let cells: Vec<String> = values.iter().map(|&v| fmt_f64(v)).collect();
        self.push_cells(&cells);
    }

    pub fn as_str(&self) -> &str {
        &self.out
    }

    pub fn into_string(self) -> String {
        self.out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize, Deserialize)]
    struct Holder {
        #[serde(with = "mat")]
        m: DMatrix<f64>,
        #[serde(with = "vector")]
        v: DVector<f64>,
    }

    #[test]
    fn scalars_promote() {
        let h: Holder = serde_json::from_str(r#"{"m": 2.5, "v": -30}"#).unwrap();
        assert_eq!(h.m.shape(), (1, 1));
        assert_eq!(h.m[(0, 0)], 2.5);
        assert_eq!(h.v.len(), 1);
    }

    #[test]
    fn nested_is_row_major() {
        let h: Holder = serde_json::from_str(r#"{"m": [[1,2,3],[4,5,6]], "v": [1,2]}"#).unwrap();
        assert_eq!(h.m.shape(), (2, 3));
        assert_eq!(h.m[(0, 2)], 3.0);
        assert_eq!(h.m[(1, 0)], 4.0);
        let back = serde_json::to_string(&h).unwrap();
        assert_eq!(back, r#"{"m":[[1.0,2.0,3.0],[4.0,5.0,6.0]],"v":[1.0,2.0]}"#);
    }

    #[test]
    fn ragged_and_flat_rejected() {
        assert!(serde_json::from_str::<Holder>(r#"{"m": [[1,2],[3]], "v": 1}"#).is_err());
        assert!(serde_json::from_str::<Holder>(r#"{"m": [1,2], "v": 1}"#).is_err());
    }

    #[test]
    fn csv_numbers_round_trip() {
        for v in [0.1, -30.0, 1.0 / 3.0, 1e-300, 162.13329792972155] {
            let s = fmt_f64(v);
            assert_eq!(s.parse::<f64>().unwrap(), v);
        }
    }
}
