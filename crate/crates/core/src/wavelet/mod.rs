//! One-dimensional orthonormal multiwavelets on (0,1) with homogeneous Dirichlet conditions.

pub mod basis;
pub mod family;
pub mod index;
pub mod piecewise;

pub use basis::{Basis1D, BasisError};
pub use index::{IndexSet1D, Kind, WaveletIndex};
