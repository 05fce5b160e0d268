//! Row-major JSON encodings for matrices and subspaces.

use serde::ser::{SerializeSeq, Serializer};

use crate::subspace::{Matrix, Subspace};

pub fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn matrix<S: Serializer>(m: &Matrix, s: S) -> Result<S::Ok, S::Error> {
    let rows = rows(m);
    let mut seq = s.serialize_seq(Some(rows.len()))?;
    for r in &rows {
        seq.serialize_element(r)?;
    }
    seq.end()
}

pub fn matrices<S: Serializer>(ms: &[Matrix], s: S) -> Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(ms.len()))?;
    for m in ms {
        seq.serialize_element(&rows(m))?;
    }
    seq.end()
}

/// Basis columns, one vector per element.
pub fn subspace<S: Serializer>(v: &Subspace, s: S) -> Result<S::Ok, S::Error> {
    let basis = v.basis();
    let mut seq = s.serialize_seq(Some(basis.ncols()))?;
    for c in basis.column_iter() {
        seq.serialize_element(&c.iter().copied().collect::<Vec<f64>>())?;
    }
    seq.end()
}
