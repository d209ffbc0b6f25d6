//! Small dense kernels: thin QR and a one-sided Jacobi SVD.
//!
//! Node matrices in the tensor format are small, so a Jacobi SVD on the
//! triangular factor of a QR decomposition is accurate and fast enough.

use nalgebra::{DMatrix, DVector, QR};

/// Thin QR, `a = q·r` with `q` of size `m × min(m,n)`; empty shapes are allowed.
pub fn thin_qr(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return (DMatrix::zeros(m, 0), DMatrix::zeros(0, n));
    }
    let qr = QR::new(a.clone());
    (qr.q(), qr.r())
}

/// Thin SVD `a = u·diag(s)·vᵀ` with descending singular values.
#[derive(Clone, Debug)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub s: Vec<f64>,
    pub v: DMatrix<f64>,
}

/// Rotates the columns of `w` in place until they are mutually orthogonal.
/// Returns the accumulated rotation `j` with `w_in · j = w_out`.
fn jacobi_columns(w: &mut DMatrix<f64>) -> DMatrix<f64> {
    let n = w.ncols();
    let mut j = DMatrix::<f64>::identity(n, n);
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = w.column(p).norm_squared();
                let beta = w.column(q).norm_squared();
                let gamma = w.column(p).dot(&w.column(q));
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for m in [&mut *w, &mut j] {
                    for r in 0..m.nrows() {
                        let a = m[(r, p)];
                        let b = m[(r, q)];
                        m[(r, p)] = c * a - s * b;
                        m[(r, q)] = s * a + c * b;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    j
}

fn sorted(u: DMatrix<f64>, s: Vec<f64>, v: DMatrix<f64>) -> Svd {
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap());
    let u = DMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    let v = DMatrix::from_fn(v.nrows(), order.len(), |r, c| v[(r, order[c])]);
    let s = order.iter().map(|&i| s[i]).collect();
    Svd { u, s, v }
}

fn normalised_columns(w: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let s: Vec<f64> = (0..w.ncols()).map(|c| w.column(c).norm()).collect();
    let mut out = w.clone();
    for (c, &sc) in s.iter().enumerate() {
        if sc > 0.0 {
            out.column_mut(c).scale_mut(1.0 / sc);
        }
    }
    (s, out)
}

/// Thin SVD. The left singular vectors come out of accumulated rotations and
/// are orthonormal to working precision even for tiny singular values.
pub fn svd(a: &DMatrix<f64>) -> Svd {
    let (m, n) = a.shape();
    let k = m.min(n);
    if k == 0 {
        return Svd { u: DMatrix::zeros(m, 0), s: Vec::new(), v: DMatrix::zeros(n, 0) };
    }
    if m >= n {
        // a = q r, rᵀ j = w  ⇒  r = j wᵀ, left vectors q j
        let (q, r) = thin_qr(a);
        let mut w = r.transpose();
        let j = jacobi_columns(&mut w);
        let (s, vhat) = normalised_columns(&w);
        sorted(q * j, s, vhat)
    } else {
        // aᵀ = q r, r j = w  ⇒  a = j wᵀ qᵀ, left vectors j
        let (q, r) = thin_qr(&a.transpose());
        let mut w = r;
        let j = jacobi_columns(&mut w);
        let (s, what) = normalised_columns(&w);
        sorted(j, s, q * what)
    }
}

pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    svd(a).s
}

pub fn column_norms(a: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(a.ncols(), a.column_iter().map(|c| c.norm()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(m: usize, n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn reconstructs_tall_and_wide() {
        for &(m, n) in &[(7, 3), (3, 7), (5, 5), (1, 4), (4, 1)] {
            let a = random(m, n, (m * 10 + n) as u64);
            let f = svd(&a);
            let rec = &f.u * DMatrix::from_diagonal(&DVector::from_vec(f.s.clone())) * f.v.transpose();
            assert!((rec - &a).norm() < 1e-12 * a.norm());
            let k = m.min(n);
            assert!((f.u.transpose() * &f.u - DMatrix::identity(k, k)).norm() < 1e-13);
            assert!(f.s.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn matches_reference_singular_values() {
        let a = random(9, 6, 3);
        let mut ours = singular_values(&a);
        let mut theirs: Vec<f64> = a.clone().svd(false, false).singular_values.iter().cloned().collect();
        ours.sort_by(|a, b| b.partial_cmp(a).unwrap());
        theirs.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for (x, y) in ours.iter().zip(&theirs) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_deficient_input_keeps_orthonormal_left_vectors() {
        let b = random(6, 2, 9);
        let a = &b * b.transpose();
        let f = svd(&a);
        assert!(f.s[2] < 1e-14);
        assert!((f.u.transpose() * &f.u - DMatrix::identity(6, 6)).norm() < 1e-12);
    }
}
