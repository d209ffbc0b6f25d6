//! Hierarchical Tucker tensors on binary dimension trees.

pub mod tensor;
pub mod transfer;
pub mod tree;

pub use tensor::{ContractionVector, CoarsenReport, HtTensor, Key, Rows, TruncationReport};
pub use transfer::Transfer;
pub use tree::{DimTree, TreeNode};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HtError {
    #[error("a dimension tree needs at least one dimension")]
    ZeroDimension,
    #[error("tensors live on different dimension trees")]
    TreeMismatch,
    #[error("tolerance must be non-negative, got {0}")]
    NegativeTolerance(f64),
    #[error("rank bound must be at least 1, got {0}")]
    InvalidRank(usize),
    #[error("dimension {0} out of range for d = {1}")]
    DimensionOutOfRange(usize, usize),
    #[error("dense array with {0} entries exceeds the size guard")]
    TooLarge(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Random tensor with Gaussian frames and transfers; every non-root rank equals `rank`.
pub fn random<K: Key, R: Rng + ?Sized>(tree: Arc<DimTree>, rows: Vec<Rows<K>>, rank: usize, rng: &mut R) -> Result<HtTensor<K>, HtError> {
    let mut gauss = |m: usize, n: usize| DMatrix::from_fn(m, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    if tree.d() == 1 {
        let f = gauss(rows[0].len(), 1);
        return HtTensor::from_parts(tree, rows, vec![f], vec![None]);
    }
    let frames = rows.iter().map(|r| gauss(r.len(), rank)).collect();
    let transfers = (0..tree.len())
        .map(|t| tree.children(t).map(|_| Transfer::from_data(rank, rank, gauss(rank * rank, if t == 0 { 1 } else { rank }))))
        .collect();
    HtTensor::from_parts(tree, rows, frames, transfers)
}
