//! Apply the d-dimensional Laplacian to a low-rank tensor and compare with a dense product.
//!
//! cargo run --release --example laplacian_apply

use htawgm::ht::{random, DimTree, Rows};
use htawgm::operator::laplacian;
use htawgm::wavelet::index::uniform;
use htawgm::wavelet::{Basis1D, WaveletIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;
use std::time::Instant;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let basis = Arc::new(Basis1D::new());
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for d in [2, 3, 4, 8] {
        let op = laplacian(basis.clone(), d)?;
        let tree = Arc::new(DimTree::balanced(d)?);
        let rows: Vec<Rows<WaveletIndex>> = vec![Arc::new(uniform(4).to_vec()); d];
        let u = random(tree, rows.clone(), 4, &mut rng)?;
        let start = Instant::now();
        let au = op.apply(&u, &rows)?;
        let secs = start.elapsed().as_secs_f64();
        let energy = u.inner(&au)?;
        println!("d={d}: ranks {:?} -> {:?}, <u,Au>/<u,u> = {:.2}, {:.1} ms", u.ranks(), au.ranks(), energy / u.norm().powi(2), 1e3 * secs);
    }

    // dense check in 2D on a small set
    let d = 2;
    let op = laplacian(basis.clone(), d)?;
    let rows: Vec<Rows<WaveletIndex>> = vec![Arc::new(uniform(1).to_vec()); d];
    let u = random(Arc::new(DimTree::balanced(d)?), rows.clone(), 3, &mut rng)?;
    let au = op.apply(&u, &rows)?;
    let dense = op.to_dense(&rows)?;
    let x = u.densify()?;
    let y = au.densify()?;
    let xv = nalgebra::DVector::from_iterator(x.len(), x.t().iter().cloned());
    let yv = nalgebra::DVector::from_iterator(y.len(), y.t().iter().cloned());
    println!("dense check: ‖Au − A·u‖ = {:.2e}", (&dense * xv - yv).norm());
    Ok(())
}
