use htawgm::ht::{self, DimTree, HtTensor, Rows};
use htawgm::operator::{laplacian, Explicit, Factor, Matrix1D, OperatorError, SepOperator};
use htawgm::wavelet::index::uniform;
use htawgm::wavelet::{Basis1D, WaveletIndex};
use nalgebra::DMatrix;
use ndarray::{ArrayD, Axis};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::{Arc, OnceLock};

fn basis() -> Arc<Basis1D> {
    static B: OnceLock<Arc<Basis1D>> = OnceLock::new();
    B.get_or_init(|| Arc::new(Basis1D::new())).clone()
}

fn set(n: usize) -> Rows<WaveletIndex> {
    Arc::new(uniform(2).to_vec().into_iter().take(n).collect())
}

/// Stiffness matrix assembled entry by entry.
fn dense_t(rows: &[WaveletIndex]) -> DMatrix<f64> {
    let b = basis();
    DMatrix::from_fn(rows.len(), rows.len(), |i, j| b.stiffness_entry(&rows[i], &rows[j]))
}

/// Kronecker sum with dimension 0 varying fastest.
fn kron_sum(ts: &[DMatrix<f64>]) -> DMatrix<f64> {
    let n: usize = ts.iter().map(|t| t.nrows()).product();
    let mut out = DMatrix::zeros(n, n);
    for j in 0..ts.len() {
        let mut k = DMatrix::from_element(1, 1, 1.0);
        for (i, t) in ts.iter().enumerate() {
            let f = if i == j { t.clone() } else { DMatrix::identity(t.nrows(), t.nrows()) };
            k = f.kronecker(&k);
        }
        out += k;
    }
    out
}

/// Applies a matrix along one axis of a dense array.
fn mode_apply(x: &ArrayD<f64>, m: &DMatrix<f64>, axis: usize) -> ArrayD<f64> {
    let mut out = x.clone();
    for (mut o, lane) in out.lanes_mut(Axis(axis)).into_iter().zip(x.lanes(Axis(axis))) {
        for i in 0..m.nrows() {
            o[i] = (0..m.ncols()).map(|k| m[(i, k)] * lane[k]).sum();
        }
    }
    out
}

fn random(d: usize, n: usize, rank: usize, seed: u64) -> HtTensor<WaveletIndex> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ht::random(Arc::new(DimTree::balanced(d).unwrap()), vec![set(n); d], rank, &mut rng).unwrap()
}

fn rel_diff(a: &ArrayD<f64>, b: &ArrayD<f64>) -> f64 {
    let n = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt() / n
}

#[test]
fn one_dimensional_laplacian_is_a_single_term() {
    let a = laplacian(basis(), 1).unwrap();
    assert_eq!(a.rank(), 1);
    assert!(!a.terms()[0][0].is_identity());
}

#[test]
fn three_dimensional_laplacian_has_one_matrix_per_term() {
    let a = laplacian(basis(), 3).unwrap();
    assert_eq!(a.rank(), 3);
    for (j, t) in a.terms().iter().enumerate() {
        let nonid: Vec<usize> = (0..3).filter(|&i| !t[i].is_identity()).collect();
        assert_eq!(nonid, vec![j]);
    }
}

#[test]
fn dense_matrix_matches_kronecker_oracle() {
    let s = set(4);
    for d in [2, 3] {
        let a = laplacian(basis(), d).unwrap();
        let m = a.to_dense(&vec![s.clone(); d]).unwrap();
        let oracle = kron_sum(&vec![dense_t(&s); d]);
        assert!((m - &oracle).norm() < 1e-12 * oracle.norm());
    }
}

#[test]
fn elementary_input_gives_the_two_term_image() {
    let s = set(6);
    let v: Vec<f64> = (0..6).map(|i| 1.0 + i as f64).collect();
    let w: Vec<f64> = (0..6).map(|i| (i as f64 * 0.7).sin()).collect();
    let t = Arc::new(DimTree::balanced(2).unwrap());
    let u = HtTensor::elementary(t.clone(), vec![(s.to_vec(), v.clone()), (s.to_vec(), w.clone())]).unwrap();
    let a = laplacian(basis(), 2).unwrap();
    let au = a.apply(&u, &[s.clone(), s.clone()]).unwrap();
    assert!(au.max_rank() <= 2);
    let tm = dense_t(&s);
    let tv = &tm * nalgebra::DVector::from_vec(v.clone());
    let tw = &tm * nalgebra::DVector::from_vec(w.clone());
    let e = HtTensor::elementary(t.clone(), vec![(s.to_vec(), tv.as_slice().to_vec()), (s.to_vec(), w)]).unwrap();
    let f = HtTensor::elementary(t, vec![(s.to_vec(), v), (s.to_vec(), tw.as_slice().to_vec())]).unwrap();
    let expect = e.add(&f).unwrap().densify().unwrap();
    assert!(rel_diff(&au.densify().unwrap(), &expect) < 1e-12);
}

#[test]
fn apply_matches_dense_mode_products() {
    let s = set(5);
    let tm = dense_t(&s);
    for d in [2, 3, 4] {
        let u = random(d, 5, 2, d as u64);
        let a = laplacian(basis(), d).unwrap();
        let au = a.apply(&u, &vec![s.clone(); d]).unwrap();
        let x = u.densify().unwrap();
        let mut expect = ArrayD::zeros(x.raw_dim());
        for j in 0..d {
            expect = expect + mode_apply(&x, &tm, j);
        }
        assert!(rel_diff(&au.densify().unwrap(), &expect) < 1e-12, "d = {d}");
    }
}

#[test]
fn generic_path_agrees_with_kronecker_fast_path() {
    let s = set(5);
    let t: Arc<dyn Matrix1D<WaveletIndex>> = Arc::new(htawgm::operator::Stiffness::new(basis()));
    let fast = laplacian(basis(), 3).unwrap();
    // an extra zero-weight identity term defeats the fast path detection
    let mut terms: Vec<Vec<Factor<WaveletIndex>>> = fast.terms().to_vec();
    let zero = Explicit::from_dense(s.to_vec(), &DMatrix::zeros(5, 5)).unwrap();
    terms.push(vec![Factor::Matrix(Arc::new(zero)), Factor::Identity, Factor::Matrix(t)]);
    let slow = SepOperator::new(3, terms).unwrap();
    let u = random(3, 5, 3, 9);
    let out = vec![s.clone(); 3];
    let a = fast.apply(&u, &out).unwrap().densify().unwrap();
    let b = slow.apply(&u, &out).unwrap().densify().unwrap();
    assert!(rel_diff(&b, &a) < 1e-12);
}

#[test]
fn identity_operator_leaves_input_unchanged() {
    let u = random(3, 4, 2, 3);
    let i = SepOperator::<WaveletIndex>::identity(3).unwrap();
    let v = i.apply(&u, u.all_rows()).unwrap();
    assert!(v.sub(&u).unwrap().norm() < 1e-13 * u.norm());
}

#[test]
fn restricted_output_equals_restriction_of_full_output() {
    let u = random(2, 6, 2, 4);
    let a = laplacian(basis(), 2).unwrap();
    let full = a.apply(&u, &[set(10), set(10)]).unwrap();
    let part = a.apply(&u, &[set(3), set(7)]).unwrap();
    let r = full.restrict(&[set(3), set(7)]).unwrap();
    assert!(part.sub(&r).unwrap().norm() < 1e-12 * r.norm());
}

#[test]
fn dimension_mismatch_is_reported() {
    let u = random(2, 4, 1, 5);
    let a = laplacian(basis(), 3).unwrap();
    assert!(matches!(a.apply(&u, u.all_rows()), Err(OperatorError::DimensionMismatch { op: 3, tensor: 2 })));
}

#[test]
fn rows_outside_an_explicit_domain_are_rejected() {
    let s = set(4);
    let e: Arc<dyn Matrix1D<WaveletIndex>> = Arc::new(Explicit::from_dense(s[..3].to_vec(), &DMatrix::identity(3, 3)).unwrap());
    let a = SepOperator::kronecker_sum(vec![e.clone(), e]).unwrap();
    let u = random(2, 4, 1, 6);
    assert!(matches!(a.apply(&u, u.all_rows()), Err(OperatorError::OutsideDomain { .. })));
}

#[test]
fn galerkin_restriction_matches_dense_submatrix() {
    let s = set(7);
    let a = laplacian(basis(), 2).unwrap();
    let r = a.galerkin_restrict(&[s.clone(), s.clone()]).unwrap();
    let u = random(2, 7, 3, 8);
    let v = r.apply(&u, &[s.clone(), s.clone()]).unwrap();
    let m = kron_sum(&[dense_t(&s), dense_t(&s)]);
    let x = u.densify().unwrap();
    // densify is first-index-fastest, matching the Kronecker ordering
    let xv = nalgebra::DVector::from_iterator(x.len(), x.t().iter().cloned());
    let yv = m * xv;
    let y = v.densify().unwrap();
    let yd = nalgebra::DVector::from_iterator(y.len(), y.t().iter().cloned());
    assert!((yd - &yv).norm() < 1e-12 * yv.norm());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn laplacian_is_symmetric_and_positive(seed in 0u64..10_000, d in 2usize..5, r in 1usize..4) {
        let a = laplacian(basis(), d).unwrap();
        let u = random(d, 5, r, seed);
        let v = random(d, 5, r, seed + 77_777);
        let rows = u.all_rows().to_vec();
        let au = a.apply(&u, &rows).unwrap();
        let av = a.apply(&v, &rows).unwrap();
        let (x, y) = (au.inner(&v).unwrap(), u.inner(&av).unwrap());
        prop_assert!((x - y).abs() <= 1e-11 * x.abs().max(y.abs()));
        prop_assert!(u.inner(&au).unwrap() > 0.0);
    }

    #[test]
    fn node_ranks_grow_at_most_by_the_term_count(seed in 0u64..10_000, d in 2usize..5, r in 1usize..4) {
        let a = laplacian(basis(), d).unwrap();
        let u = random(d, 5, r, seed);
        let au = a.apply(&u, u.all_rows()).unwrap();
        for (x, y) in au.ranks().iter().zip(u.ranks()) {
            prop_assert!(*x <= a.rank() * y);
        }
    }
}
