//! Real symmetric embedding of Hermitian matrices,
//! `H -> [[Re H, -Im H], [Im H, Re H]]`.
//!
//! The embedding preserves positive semidefiniteness, doubles the trace and
//! the rank, and repeats every eigenvalue twice.

use nalgebra::DMatrix;

use crate::{CMatrix, C64};

pub fn real_embedding(h: &CMatrix) -> DMatrix<f64> {
    let n = h.nrows();
    DMatrix::from_fn(2 * n, 2 * n, |i, j| {
        let z = h[(i % n, j % n)];
        match (i < n, j < n) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    })
}

/// Recovers the Hermitian matrix from an embedding, averaging the two copies.
pub fn real_embedding_extract(e: &DMatrix<f64>) -> CMatrix {
    let n = e.nrows() / 2;
    CMatrix::from_fn(n, n, |i, j| {
        let re = 0.5 * (e[(i, j)] + e[(i + n, j + n)]);
        let im = 0.5 * (e[(i + n, j)] - e[(i, j + n)]);
        C64::new(re, im)
    })
}
