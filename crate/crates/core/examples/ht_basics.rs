//! Build, compress and coarsen a hierarchical Tucker tensor.
//!
//! cargo run --release --example ht_basics

use htawgm::ht::{random, DimTree, HtTensor, Rows};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let d = 4;
    let tree = Arc::new(DimTree::balanced(d)?);
    let rows: Vec<Rows<usize>> = vec![Arc::new((0..12).collect()); d];
    let mut rng = ChaCha8Rng::seed_from_u64(42);

    // a rank-6 tensor plus a small rank-6 perturbation
    let u = random(tree.clone(), rows.clone(), 6, &mut rng)?;
    let noise = random(tree.clone(), rows.clone(), 6, &mut rng)?;
    let x = HtTensor::lin_comb(&[(1.0, &u), (1e-6 * u.norm() / noise.norm(), &noise)])?;
    println!("sum: ranks {:?}, norm {:.6}", x.ranks(), x.norm());

    for eps in [1e-3, 1e-7] {
        let (t, rep) = x.truncate(eps * x.norm())?;
        let err = x.sub(&t)?.norm() / x.norm();
        println!("truncate at {eps:.0e}: ranks {:?}, relative error {err:.2e}, bound {:.2e}", t.ranks(), rep.error_bound / x.norm());
    }

    let (t, _) = x.truncate_to_rank(2)?;
    println!("rank 2: relative error {:.3}", x.sub(&t)?.norm() / x.norm());

    // contractions and coarsening on a tensor with decaying rows
    let decay: Vec<(Vec<usize>, Vec<f64>)> = (0..d).map(|_| ((0..12).collect(), (0..12).map(|i| 0.5f64.powi(i)).collect())).collect();
    let e = HtTensor::elementary(tree, decay)?;
    let pi = e.contraction(0)?;
    println!("contraction of dimension 0: {:?}", pi.values.iter().take(4).map(|(_, v)| format!("{v:.3}")).collect::<Vec<_>>());
    let (c, rep) = e.coarsen(1e-2 * e.norm())?;
    println!("coarsened support {} -> {}, discarded {:?}", e.support_size(), c.support_size(), rep.discarded);
    Ok(())
}
