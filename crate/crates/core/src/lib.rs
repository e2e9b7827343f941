//! Learning compact binary hash codes from feature vectors.
//!
//! A two-layer affine head maps D-dimensional descriptors to L real outputs
//! whose signs are the code. Training alternates a closed-form sign step on
//! auxiliary codes with momentum SGD on a pairwise loss that combines a
//! contrastive term and a quantization penalty. Pairs are mined from a
//! co-observation world: same-model images sharing enough points match,
//! hard negatives are drawn at random from the nearest foreign images.
//!
//! Modules, bottom up:
//!
//! - [`numkit`]: matrices, RNG, PCA
//! - [`dataset`]: worlds, feature stores and their file formats
//! - [`retrieval`]: packed codes, Hamming search, AP/mAP
//! - [`mining`]: matching and non-matching pairs
//! - [`model`]: MAC pooling and the hashing head
//! - [`loss`]: the pairwise penalty loss and its gradient
//! - [`optimizer`]: the alternating training loop and evaluation

pub mod dataset;
pub mod error;
pub mod loss;
pub mod mining;
pub mod model;
pub mod numkit;
pub mod optimizer;
pub mod retrieval;

pub use error::{Error, Result};
