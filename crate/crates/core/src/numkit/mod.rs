//! Dense linear algebra, a counter-based RNG and PCA.
//!
//! Everything on the training path runs in `f64`. Nothing here tries to be
//! a BLAS; matrices are small enough at desk scale that straightforward
//! row-major loops are fast enough.

mod matrix;
mod pca;
mod rng;

pub use matrix::{matmul, Matrix};
pub use pca::{pca, symmetric_eigen, Pca};
pub use rng::Rng;

/// Euclidean norm.
pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
