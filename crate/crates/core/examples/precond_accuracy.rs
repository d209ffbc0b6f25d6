//! Exponential-sum approximation of 1/√t and the separable H¹ scaling it induces.
//!
//! cargo run --release --example precond_accuracy

use htawgm::ht::{DimTree, HtTensor};
use htawgm::precond::{preconditioned_spectrum, ExpSumPrecond, ScalingWeights};
use htawgm::wavelet::index::uniform;
use htawgm::wavelet::{Basis1D, WaveletIndex};
use std::sync::Arc;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    println!("{:>6} {:>8} {:>6} {:>12}", "delta", "T", "terms", "sup error");
    for delta in [0.5, 0.1, 0.01] {
        for t in [1e3, 1e6] {
            let p = ExpSumPrecond::with_default_eta(delta, t)?;
            println!("{delta:>6} {t:>8.0e} {:>6} {:>12.3e}", p.num_terms(), p.sup_error(10_000));
        }
    }

    // S⁻¹ applied to the load 1 ⊗ 1 ⊗ 1 against the exact diagonal scaling
    let basis = Basis1D::new();
    let d = 3;
    let level = 4;
    let set: Vec<WaveletIndex> = uniform(level).to_vec();
    let f = HtTensor::elementary(Arc::new(DimTree::balanced(d)?), vec![(set.clone(), set.iter().map(|w| basis.rhs_one(w)).collect()); d])?;
    let p = ExpSumPrecond::with_default_eta(0.1, ExpSumPrecond::window_for(&basis, d, level))?;
    let (g, stats) = p.apply_abs(&f, &basis, 1e-8)?;
    let mut exact2 = 0.0;
    for a in &set {
        for b in &set {
            for c in &set {
                let t = basis.weight(0, a) + basis.weight(1, b) + basis.weight(2, c);
                exact2 += (basis.rhs_one(a) * basis.rhs_one(b) * basis.rhs_one(c)).powi(2) / t;
            }
        }
    }
    println!(
        "‖S⁻¹f‖ = {:.6}, ‖D⁻¹f‖ = {:.6}, rank {}, {} terms used, {} dropped",
        g.norm(),
        exact2.sqrt(),
        g.max_rank(),
        stats.terms_used,
        stats.terms_dropped
    );

    for d in [2, 3, 4] {
        let set = uniform(1).to_vec();
        let p = ExpSumPrecond::with_default_eta(0.1, ExpSumPrecond::window_for(&basis, d, 1))?;
        let (lo, hi) = preconditioned_spectrum(&p, &basis, d, &set, 60)?;
        println!("d={d}: spectrum of S⁻¹AS⁻¹ on level 1 in [{lo:.3}, {hi:.3}], condition {:.2}", hi / lo);
    }
    Ok(())
}
