//! Construction of the orthonormal cubic multiwavelet family on (0,1).
//!
//! The coarse space on a unit cell is `P_3 ⊕ span{s}` with a symmetric extra
//! function `s = cos(θ)·hat + sin(θ)·hat³`, `hat(x) = min(x, 1−x)`. Its
//! restriction to functions vanishing at both ends is spanned by three
//! orthonormal bubbles. The remaining degree of freedom per node is a single
//! hat-like function `N`, and `θ` is fixed so that the two halves of `N`
//! are orthogonal, which makes the node functions at neighbouring integers
//! orthogonal. The scaling space is therefore orthonormal without any
//! Gram-Schmidt across cells, and the wavelets are built by local
//! orthogonal complements.

use super::piecewise::Piecewise;
use nalgebra::{DMatrix, SymmetricEigen};

const NULL_TOL: f64 = 1e-10;

/// All mother functions of the family together with a few derived constants.
#[derive(Clone, Debug)]
pub struct Family {
    pub theta: f64,
    /// Node function at 0, support `[-1, 1]`.
    pub node: Piecewise,
    /// Orthonormal bubbles on `[0, 1]`, ascending stiffness.
    pub bubbles: Vec<Piecewise>,
    /// Two wavelets supported on one cell.
    pub cell: Vec<Piecewise>,
    /// Two wavelets supported on `[-1, 1]`, centred on a node.
    pub node_wavelets: Vec<Piecewise>,
    pub left: Piecewise,
    pub right: Piecewise,
}

fn gram(fs: &[Piecewise], gs: &[Piecewise]) -> DMatrix<f64> {
    DMatrix::from_fn(fs.len(), gs.len(), |i, j| fs[i].inner(&gs[j]))
}

fn combine(fs: &[Piecewise], coeffs: &[f64]) -> Piecewise {
    let terms: Vec<(f64, &Piecewise)> = coeffs.iter().copied().zip(fs.iter()).collect();
    Piecewise::lin_comb(&terms)
}

/// Orthonormal basis of `span(fs)`, dropping numerically dependent directions.
pub(crate) fn orthonormal_span(fs: &[Piecewise]) -> Vec<Piecewise> {
    if fs.is_empty() {
        return Vec::new();
    }
    let eig = SymmetricEigen::new(gram(fs, fs));
    let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let mut out = Vec::new();
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam > NULL_TOL * top.max(1.0) {
            let v: Vec<f64> = eig.eigenvectors.column(k).iter().map(|x| x / lam.sqrt()).collect();
            out.push(combine(fs, &v));
        }
    }
    out
}

/// Combinations of `cands` orthogonal to every function in `constraints`.
fn orthogonal_combos(cands: &[Piecewise], constraints: &[Piecewise]) -> Vec<Piecewise> {
    let o = gram(constraints, cands);
    let scale = cands.iter().map(|c| c.inner(c)).fold(0.0, f64::max);
    let eig = SymmetricEigen::new(o.transpose() * &o);
    let mut out = Vec::new();
    for (k, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam.abs() < NULL_TOL * scale {
            let v: Vec<f64> = eig.eigenvectors.column(k).iter().cloned().collect();
            out.push(combine(cands, &v));
        }
    }
    out
}

fn project_out(f: &Piecewise, onb: &[Piecewise]) -> Piecewise {
    let mut terms = vec![(1.0, f)];
    let coeffs: Vec<f64> = onb.iter().map(|q| q.inner(f)).collect();
    for (c, q) in coeffs.iter().zip(onb) {
        terms.push((-c, q));
    }
    Piecewise::lin_comb(&terms)
}

/// Rotate an orthonormal group so that its stiffness matrix is diagonal with
/// ascending entries, then fix signs by the first clearly non-zero moment.
fn canonical(group: Vec<Piecewise>) -> Vec<Piecewise> {
    let k = DMatrix::from_fn(group.len(), group.len(), |i, j| group[i].deriv_inner(&group[j]));
    let eig = SymmetricEigen::new(k);
    let mut order: Vec<usize> = (0..group.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    order
        .into_iter()
        .map(|c| {
            let v: Vec<f64> = eig.eigenvectors.column(c).iter().cloned().collect();
            let f = combine(&group, &v);
            let origin = f.support().0;
            let sign = (0..12)
                .map(|m| f.moment(m, origin))
                .find(|mo| mo.abs() > 1e-8)
                .map_or(1.0, f64::signum);
            f.scale(sign)
        })
        .collect()
}

fn hat_family(theta: f64) -> Piecewise {
    let hat = Piecewise::new(1, 0, vec![[0.0, 0.5, 0.0, 0.0], [0.5, -0.5, 0.0, 0.0]]);
    let hat3 = Piecewise::new(
        1,
        0,
        vec![[0.0, 0.0, 0.0, 0.125], [0.125, -0.375, 0.375, -0.125]],
    );
    Piecewise::lin_comb(&[(theta.cos(), &hat), (theta.sin(), &hat3)])
}

struct CellSpace {
    bubbles: Vec<Piecewise>,
    /// Right half of the node function before normalisation: `(1−x) − P_B(1−x)`.
    f: Piecewise,
}

fn cell_space(theta: f64) -> CellSpace {
    let q1 = Piecewise::from_global(1, 0, 2, &[0.0, 1.0, -1.0, 0.0]);
    let q2 = Piecewise::from_global(1, 0, 2, &[0.0, 0.0, 1.0, -1.0]);
    let bubbles = orthonormal_span(&[q1, q2, hat_family(theta)]);
    let e = Piecewise::from_global(1, 0, 2, &[1.0, -1.0, 0.0, 0.0]);
    let f = project_out(&e, &bubbles);
    CellSpace { bubbles, f }
}

/// `⟨f, f(1−·)⟩`; its zeros make the scaling functions orthonormal.
pub fn half_overlap(theta: f64) -> f64 {
    let cs = cell_space(theta);
    let g = cs.f.reflect().shift(1);
    cs.f.inner(&g)
}

/// All zeros of [`half_overlap`] in `[0, π)`.
pub fn theta_roots() -> Vec<f64> {
    let n = 400;
    let grid: Vec<f64> = (0..=n).map(|i| std::f64::consts::PI * i as f64 / n as f64).collect();
    let vals: Vec<f64> = grid.iter().map(|&t| half_overlap(t)).collect();
    let mut roots = Vec::new();
    for i in 0..n {
        if vals[i] == 0.0 {
            roots.push(grid[i]);
        } else if vals[i] * vals[i + 1] < 0.0 {
            let (mut a, mut b, mut fa) = (grid[i], grid[i + 1], vals[i]);
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                let fm = half_overlap(m);
                if fm == 0.0 || (b - a) < 1e-16 {
                    a = m;
                    b = m;
                    break;
                }
                if fa * fm < 0.0 {
                    b = m;
                } else {
                    a = m;
                    fa = fm;
                }
            }
            roots.push(0.5 * (a + b));
        }
    }
    roots
}

impl Family {
    /// The family used throughout the crate.
    ///
    /// Of the two admissible angles the larger one gives roughly four times
    /// smaller condition numbers for the diagonally scaled stiffness matrix.
    pub fn standard() -> Family {
        let roots = theta_roots();
        Family::build(*roots.last().expect("no admissible angle"))
    }

    pub fn build(theta: f64) -> Family {
        let cs = cell_space(theta);
        let g = cs.f.reflect();
        let node_raw = cs.f.add(&g);
        let node = node_raw.scale(1.0 / node_raw.norm());
        let bubbles = canonical(cs.bubbles);

        // fine-level functions: node at half-integer c, bubbles on [a, a+1/2]
        let v1_node = |c2: i64| node.dilate(1, c2);
        let v1_bub = |a2: i64| -> Vec<Piecewise> { bubbles.iter().map(|b| b.dilate(1, a2)).collect() };
        let v0_node = |k: i64| node.shift(k);
        let v0_bub = |k: i64| -> Vec<Piecewise> { bubbles.iter().map(|b| b.shift(k)).collect() };

        // cell wavelets
        let mut cands = vec![v1_node(1)];
        cands.extend(v1_bub(0));
        cands.extend(v1_bub(1));
        let mut cons = vec![v0_node(0), v0_node(1)];
        cons.extend(v0_bub(0));
        let cell = canonical(orthonormal_span(&orthogonal_combos(&cands, &cons)));
        assert_eq!(cell.len(), 2, "cell wavelet count");

        // node wavelets
        let mut cands = vec![v1_node(-1), v1_node(0), v1_node(1)];
        for a2 in -2..2 {
            cands.extend(v1_bub(a2));
        }
        let mut cons = vec![v0_node(-1), v0_node(0), v0_node(1)];
        cons.extend(v0_bub(-1));
        cons.extend(v0_bub(0));
        let raw = orthogonal_combos(&cands, &cons);
        let mut q = cell.clone();
        q.extend(cell.iter().map(|c| c.shift(-1)));
        let projected: Vec<Piecewise> = raw.iter().map(|w| project_out(w, &q)).collect();
        let node_wavelets = canonical(orthonormal_span(&projected));
        assert_eq!(node_wavelets.len(), 2, "node wavelet count");

        // boundary wavelet at 0; the node function at 0 is absent under Dirichlet conditions
        let mut cands = vec![v1_node(1)];
        cands.extend(v1_bub(0));
        cands.extend(v1_bub(1));
        let mut cons = vec![v0_node(1)];
        cons.extend(v0_bub(0));
        let raw = orthogonal_combos(&cands, &cons);
        let projected: Vec<Piecewise> = raw.iter().map(|w| project_out(w, &cell)).collect();
        let left = canonical(orthonormal_span(&projected));
        assert_eq!(left.len(), 1, "boundary wavelet count");
        let left = left.into_iter().next().unwrap();
        let right = left.reflect().shift(1);

        Family { theta, node, bubbles, cell, node_wavelets, left, right }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_admissible_angles() {
        let roots = theta_roots();
        assert_eq!(roots.len(), 2, "{roots:?}");
        for r in roots {
            assert!(half_overlap(r).abs() < 1e-13);
        }
    }

    #[test]
    fn node_functions_are_orthonormal_with_bubbles() {
        let fam = Family::standard();
        assert!((fam.node.norm() - 1.0).abs() < 1e-13);
        assert!(fam.node.inner(&fam.node.shift(1)).abs() < 1e-12);
        for b in &fam.bubbles {
            assert!(fam.node.inner(b).abs() < 1e-12);
            assert!(fam.node.inner(&b.shift(-1)).abs() < 1e-12);
            let (l, r) = b.end_values();
            assert!(l.abs() < 1e-13 && r.abs() < 1e-13);
        }
        assert!(fam.node.max_jump() < 1e-12);
        assert!((fam.node.eval(0.0) - fam.node.eval(-1e-15)).abs() < 1e-9);
    }

    #[test]
    fn wavelets_are_continuous_and_vanish_at_support_ends() {
        let fam = Family::standard();
        let all = fam.cell.iter().chain(&fam.node_wavelets).chain([&fam.left, &fam.right]);
        for w in all {
            assert!(w.max_jump() < 1e-11);
            let (l, r) = w.end_values();
            assert!(l.abs() < 1e-11 && r.abs() < 1e-11, "{l} {r}");
            assert!((w.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn interior_wavelets_have_four_vanishing_moments() {
        let fam = Family::standard();
        for w in fam.cell.iter().chain(&fam.node_wavelets) {
            for m in 0..4 {
                assert!(w.moment(m, 0.0).abs() < 1e-11, "moment {m}");
            }
        }
    }
}
