//! Solves −Δu = 1 on the unit cube in `d` dimensions and prints the convergence log.
//!
//! cargo run --release --example poisson_awgm -- 2 1e-4

use htawgm::awgm::{ht_awgm_with, AwgmParams, ConvergenceRecord, OnesLoad};
use htawgm::operator::laplacian;
use htawgm::wavelet::Basis1D;
use std::sync::Arc;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let d: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(2);
    let eps: f64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1e-4);
    let basis = Arc::new(Basis1D::new());
    let op = laplacian(basis.clone(), d)?;
    let mut params = AwgmParams::defaults(d);
    params.eps = eps;
    println!("{:>3} {:>3} {:>8} {:>12} {:>5} {:>7} {:>5} {:>4} {:>8}", "k", "m", "event", "residual", "rank", "support", "level", "pcg", "time");
    let out = ht_awgm_with(&op, &OnesLoad(basis.clone()), &basis, &params, &mut |r: &ConvergenceRecord| {
        println!(
            "{:>3} {:>3} {:>8} {:>12.4e} {:>5} {:>7} {:>5} {:>4} {:>8.2}",
            r.outer, r.inner, r.event, r.residual, r.max_rank, r.support, r.max_level, r.pcg_iterations, r.time_s
        );
    })?;
    println!(
        "lambda_min {:.4}  lambda_max {:.4}  kappa {:.2}  omega0 {:.4}  M* {}  K* {}",
        out.spectrum.lambda_min,
        out.spectrum.lambda_max,
        out.spectrum.kappa(),
        out.omega0,
        out.validated.m_star,
        out.validated.k_star
    );
    Ok(())
}
