//! Exact versus contraction-based index set sizes on small random tensors.
//!
//! cargo run --release --example diag_ratio

use htawgm::diagnostics::{diagonal_family, ratio_experiment, RatioConfig, Structure};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for structure in [Structure::Random, Structure::ResidualLike] {
        let cfg = RatioConfig { dims: vec![2, 3], sizes: vec![5], alphas: vec![0.3, 0.5, 0.7, 0.9], trials: 50, structure, seed: 42 };
        let report = ratio_experiment(&cfg)?;
        println!("{structure}:");
        for s in &report.summary {
            println!(
                "  d={} {:>7} alpha={:.1}  NQ/NE mean {:.3} max {:.3}  in window {}/{}",
                s.d, s.shape, s.alpha, s.ratio_mean, s.ratio_max, s.within, s.trials
            );
        }
    }
    for p in diagonal_family(2, 0.7, &[0.5, 0.1, 0.05, 0.01], 0.5)? {
        println!("diag(1, t, ...) t={:<5} n={:<5} NE={} NQ={} ratio {:.1}", p.t, p.n, p.ne, p.nq, p.ratio);
    }
    Ok(())
}
