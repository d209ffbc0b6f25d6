pub mod ht;
pub mod linalg;
pub mod operator;
pub mod precond;
pub mod solver;
pub mod wavelet;
pub mod awgm;
pub mod diagnostics;
pub mod cli;
