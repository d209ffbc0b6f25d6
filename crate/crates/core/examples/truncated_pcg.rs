//! Truncated PCG on a Kronecker-sum system with low-rank right-hand side.
//!
//! cargo run --release --example truncated_pcg

use htawgm::ht::{DimTree, HtTensor, Rows};
use htawgm::operator::laplacian;
use htawgm::precond::ExpSumPrecond;
use htawgm::solver::{estimate_spectrum, truncated_pcg, FnMap, PcgOptions, SolverError, TruncStrategy};
use htawgm::wavelet::index::uniform;
use htawgm::wavelet::{Basis1D, WaveletIndex};
use std::sync::Arc;

type T = HtTensor<WaveletIndex>;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let basis = Arc::new(Basis1D::new());
    let d = 3;
    let level = 2;
    let op = laplacian(basis.clone(), d)?;
    let set: Vec<WaveletIndex> = uniform(level).to_vec();
    let rows: Vec<Rows<WaveletIndex>> = vec![Arc::new(set.clone()); d];
    let tree = Arc::new(DimTree::balanced(d)?);
    let p = ExpSumPrecond::with_default_eta(0.1, ExpSumPrecond::window_for(&basis, d, level))?;

    // symmetric preconditioned operator S⁻¹ A S⁻¹
    let mut map = FnMap(|x: &T| -> Result<T, SolverError> {
        let tol = 1e-6 * x.norm();
        let (y, _) = p.apply_abs(x, basis.as_ref(), tol)?;
        let ay = op.apply(&y, &rows)?;
        Ok(p.apply_abs(&ay, basis.as_ref(), tol)?.0)
    });
    let raw = HtTensor::elementary(tree.clone(), vec![(set.clone(), set.iter().map(|w| basis.rhs_one(w)).collect()); d])?;
    let (f, _) = p.apply_abs(&raw, basis.as_ref(), 1e-8)?;
    let spec = estimate_spectrum(&mut map, &f, 15, 1e-3)?.widened(1.2);
    println!("spectrum estimate [{:.3}, {:.3}], kappa {:.2}", spec.lambda_min, spec.lambda_max, spec.kappa());

    let u0 = HtTensor::zeros(tree, rows.clone())?;
    for (name, strategy) in [
        ("adaptive", TruncStrategy::adaptive(0.1)),
        ("worst case", TruncStrategy::worst_case(spec.lambda_min, spec.lambda_max)),
    ] {
        let (x, stats) = truncated_pcg(&mut map, &f, &u0, &rows, &strategy, PcgOptions::new(1e-4 * f.norm(), 40))?;
        println!(
            "{name:>10}: {} iterations, converged {}, final rank {}, residuals {:?}",
            stats.iterations,
            stats.converged,
            x.max_rank(),
            stats.residual_norms.iter().map(|r| format!("{r:.1e}")).collect::<Vec<_>>()
        );
    }
    Ok(())
}
