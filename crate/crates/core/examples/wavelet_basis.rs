//! Inspect the multiwavelet basis: orthonormality, H¹ norms and the stiffness matrix.
//!
//! cargo run --release --example wavelet_basis

use htawgm::wavelet::index::uniform;
use htawgm::wavelet::Basis1D;
use nalgebra::{DMatrix, SymmetricEigen};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let basis = Basis1D::new();
    println!("generator angle {:.6}, {} mother functions", basis.family().theta, basis.num_mothers());

    for level in 0..=5 {
        let set = uniform(level);
        let rows = set.to_vec();
        let mass = basis.mass_matrix(&rows, &rows);
        let stiff = basis.stiffness_matrix(&rows, &rows);
        let n = rows.len();
        let mut off = 0.0f64;
        for (r, c, v) in mass.triplet_iter() {
            let target = if r == c { 1.0 } else { 0.0 };
            off = off.max((v - target).abs());
        }
        // diagonally scaled stiffness D^{-1/2} A D^{-1/2}
        let h: Vec<f64> = rows.iter().map(|w| basis.h1_norm(w).unwrap()).collect();
        let mut a = DMatrix::zeros(n, n);
        for (r, c, v) in stiff.triplet_iter() {
            a[(r, c)] = v / (h[r] * h[c]);
        }
        let ev = SymmetricEigen::new(a).eigenvalues;
        println!(
            "level {level}: {n:>4} functions, |M - I|max {off:.1e}, max H1 norm {:>8.1}, scaled condition {:.2}",
            h.iter().cloned().fold(0.0, f64::max),
            ev.max() / ev.min()
        );
    }

    let set = uniform(2);
    let f = basis.rhs_one_coefficients(&set);
    let mass: f64 = f.iter().map(|x| x * x).sum();
    println!("‖P(1)‖² on level 2 = {mass:.12} (exact value 1)");
    Ok(())
}
