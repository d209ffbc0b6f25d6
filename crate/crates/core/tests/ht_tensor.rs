use htawgm::ht::{self, DimTree, HtError, HtTensor, Rows};
use nalgebra::DMatrix;
use ndarray::{ArrayD, IxDyn};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

fn rows(n: usize) -> Rows<usize> {
    Arc::new((0..n).collect())
}

fn tree(d: usize) -> Arc<DimTree> {
    Arc::new(DimTree::balanced(d).unwrap())
}

fn rand_tensor(shape: &[usize], rank: usize, seed: u64) -> HtTensor<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ht::random(tree(shape.len()), shape.iter().map(|&n| rows(n)).collect(), rank, &mut rng).unwrap()
}

fn dense_norm(a: &ArrayD<f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn max_diff(a: &ArrayD<f64>, b: &ArrayD<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Slice norms of a dense array along one axis.
fn slice_norms(a: &ArrayD<f64>, j: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.shape()[j]];
    for (idx, v) in a.indexed_iter() {
        out[idx[j]] += v * v;
    }
    out.into_iter().map(f64::sqrt).collect()
}

#[test]
fn zero_dimensional_tree_is_rejected() {
    assert_eq!(DimTree::balanced(0).unwrap_err(), HtError::ZeroDimension);
}

#[test]
fn elementary_sum_matches_dense_sum() {
    let t = tree(3);
    let u = HtTensor::elementary(t.clone(), vec![(vec![0, 1, 2], vec![1.0, 2.0, 3.0]); 3]).unwrap();
    let v = HtTensor::elementary(t, vec![(vec![0, 1, 2], vec![0.5, -1.0, 0.0]), (vec![0, 1, 2], vec![1.0, 1.0, 1.0]), (vec![0, 1, 2], vec![2.0, 0.0, 1.0])]).unwrap();
    let w = u.add(&v).unwrap();
    assert_eq!(w.max_rank(), 2);
    let expect = u.densify().unwrap() + v.densify().unwrap();
    assert!(max_diff(&w.densify().unwrap(), &expect) < 1e-12 * dense_norm(&expect));
}

#[test]
fn adding_zero_keeps_ranks() {
    let u = rand_tensor(&[3, 4, 5], 2, 1);
    let z = HtTensor::zeros(u.tree().clone(), u.all_rows().to_vec()).unwrap();
    let w = u.add(&z).unwrap();
    assert_eq!(w.ranks(), u.ranks());
    assert!(max_diff(&w.densify().unwrap(), &u.densify().unwrap()) < 1e-14);
}

#[test]
fn cancellation_truncates_to_nothing() {
    let u = rand_tensor(&[4, 4, 4, 4], 3, 2);
    let (w, _) = u.sub(&u).unwrap().truncate(1e-12 * u.norm()).unwrap();
    assert!(w.norm() <= 1e-12 * u.norm());
    assert_eq!(w.max_rank(), 0);
}

#[test]
fn union_of_row_sets_pads_with_zeros() {
    let t = tree(2);
    let u = HtTensor::elementary(t.clone(), vec![(vec![1, 5], vec![1.0, 2.0]), (vec![0], vec![1.0])]).unwrap();
    let v = HtTensor::elementary(t, vec![(vec![2, 5], vec![3.0, 4.0]), (vec![1], vec![1.0])]).unwrap();
    let w = u.add(&v).unwrap();
    assert_eq!(**w.rows(0), vec![1, 2, 5]);
    assert_eq!(**w.rows(1), vec![0, 1]);
    let a = w.densify().unwrap();
    assert_eq!(a[[0, 0]], 1.0);
    assert_eq!(a[[1, 1]], 3.0);
    assert_eq!(a[[2, 0]], 2.0);
    assert_eq!(a[[2, 1]], 4.0);
    assert_eq!(a[[1, 0]], 0.0);
}

#[test]
fn inner_product_of_elementary_tensors_factorises() {
    let t = tree(2);
    let u = HtTensor::elementary(t.clone(), vec![(vec![0, 1], vec![1.0, 2.0]), (vec![0, 1, 2], vec![1.0, -1.0, 3.0])]).unwrap();
    let v = HtTensor::elementary(t, vec![(vec![1, 2], vec![5.0, 7.0]), (vec![0, 2], vec![2.0, 1.0])]).unwrap();
    assert!((u.inner(&v).unwrap() - (2.0 * 5.0) * (2.0 + 3.0)).abs() < 1e-14);
}

#[test]
fn inner_product_matches_dense_dot() {
    let u = rand_tensor(&[3, 4, 5], 3, 7);
    let v = rand_tensor(&[3, 4, 5], 2, 8);
    let dot: f64 = u.densify().unwrap().iter().zip(v.densify().unwrap().iter()).map(|(a, b)| a * b).sum();
    assert!((u.inner(&v).unwrap() - dot).abs() <= 1e-12 * dot.abs().max(u.norm() * v.norm()));
}

#[test]
fn mismatched_trees_are_rejected() {
    let u = rand_tensor(&[2, 2], 1, 1);
    let v = rand_tensor(&[2, 2, 2], 1, 1);
    assert_eq!(u.inner(&v).unwrap_err(), HtError::TreeMismatch);
    assert!(u.add(&v).is_err());
}

#[test]
fn orthogonalization_keeps_the_tensor_and_orthonormalises_frames() {
    let u = rand_tensor(&[4, 5, 3, 4], 3, 11);
    let o = u.orthogonalize();
    let (a, b) = (u.densify().unwrap(), o.densify().unwrap());
    assert!(max_diff(&a, &b) <= 1e-12 * dense_norm(&a));
    for j in 0..4 {
        let f = o.frame(j);
        let g = f.transpose() * f;
        assert!((g - DMatrix::identity(f.ncols(), f.ncols())).norm() < 1e-10);
    }
    for t in 1..o.tree().len() {
        if let Some(b) = o.transfer(t) {
            let g = b.data.transpose() * &b.data;
            assert!((g - DMatrix::identity(b.rt(), b.rt())).norm() < 1e-10);
        }
    }
}

fn diag_tensor() -> HtTensor<usize> {
    let mut x = ArrayD::zeros(IxDyn(&[3, 3]));
    x[[0, 0]] = 1.0;
    x[[1, 1]] = 0.1;
    x[[2, 2]] = 0.01;
    HtTensor::from_dense(tree(2), vec![rows(3), rows(3)], &x).unwrap()
}

#[test]
fn truncation_of_known_spectrum() {
    let u = diag_tensor();
    let (w, rep) = u.truncate(0.05).unwrap();
    assert_eq!(w.rank(1), 2);
    let err = dense_norm(&(u.densify().unwrap() - w.densify().unwrap()));
    assert!((err - 0.01).abs() < 1e-12);

    let (w, rep1) = u.truncate_to_rank(1).unwrap();
    let err = dense_norm(&(u.densify().unwrap() - w.densify().unwrap()));
    let tail = (0.1f64 * 0.1 + 0.01 * 0.01).sqrt();
    assert!((err - tail).abs() < 1e-12);
    assert!((rep1.node_tails[1] - tail).abs() < 1e-12);
    assert!(rep.error_bound >= 0.01 - 1e-14);
}

#[test]
fn truncation_leaves_elementary_tensors_alone() {
    let u = HtTensor::elementary(tree(3), vec![(vec![0, 1], vec![1.0, 2.0]); 3]).unwrap();
    for eps in [0.0, 0.1, 1.0] {
        let (w, rep) = u.truncate(eps).unwrap();
        assert_eq!(w.ranks(), u.ranks());
        assert!(rep.error_bound < 1e-14);
    }
    let (w, _) = u.truncate_to_rank(4).unwrap();
    assert_eq!(w.ranks(), u.ranks());
    assert!(u.truncate(-1.0).is_err());
    assert!(u.truncate_to_rank(0).is_err());
}

#[test]
fn random_four_way_truncation_respects_tolerance() {
    let u = rand_tensor(&[4, 4, 4, 4], 4, 3);
    let u = u.scale(1.0 / u.norm());
    let (w, rep) = u.truncate(0.3).unwrap();
    let err = dense_norm(&(u.densify().unwrap() - w.densify().unwrap()));
    assert!(err <= 0.3);
    assert!(err <= rep.error_bound + 1e-12);
    assert!(w.max_rank() < u.max_rank());
}

#[test]
fn truncated_rank_error_is_quasi_optimal_against_alternating_projection() {
    // rank-1 approximation by alternating projections serves as an estimate of the best rank-1 error
    let u = rand_tensor(&[3, 3, 3], 3, 5);
    let a = u.densify().unwrap();
    let mut best = f64::INFINITY;
    for start in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(start);
        let mut vs: Vec<Vec<f64>> = (0..3).map(|_| (0..3).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect()).collect();
        for _ in 0..500 {
            for j in 0..3 {
                let mut nv = vec![0.0; 3];
                for (idx, x) in a.indexed_iter() {
                    let mut p = *x;
                    for k in 0..3 {
                        if k != j {
                            p *= vs[k][idx[k]];
                        }
                    }
                    nv[idx[j]] += p;
                }
                let n = nv.iter().map(|x| x * x).sum::<f64>().sqrt();
                vs[j] = nv.iter().map(|x| x / n).collect();
            }
        }
        let mut c = 0.0;
        for (idx, x) in a.indexed_iter() {
            c += x * vs[0][idx[0]] * vs[1][idx[1]] * vs[2][idx[2]];
        }
        best = best.min((dense_norm(&a).powi(2) - c * c).max(0.0).sqrt());
    }
    let (w, _) = u.truncate_to_rank(1).unwrap();
    let err = dense_norm(&(a - w.densify().unwrap()));
    assert!(err <= 3f64.sqrt() * best * (1.0 + 1e-9), "{err} vs {best}");
}

#[test]
fn contractions_of_an_elementary_tensor() {
    let u = HtTensor::elementary(tree(2), vec![(vec![0, 1], vec![1.0, 2.0]), (vec![0, 1], vec![3.0, 4.0])]).unwrap();
    let pi = u.contractions();
    assert!((pi[0].values[0].1 - 5.0).abs() < 1e-13);
    assert!((pi[0].values[1].1 - 10.0).abs() < 1e-13);
    assert!((pi[1].values[0].1 - 45f64.sqrt()).abs() < 1e-13);
    assert!((pi[1].values[1].1 - 80f64.sqrt()).abs() < 1e-13);
    assert!(u.contraction(2).is_err());
}

#[test]
fn contractions_match_slice_norms() {
    let u = rand_tensor(&[4, 3, 5], 3, 17);
    let a = u.densify().unwrap();
    for j in 0..3 {
        let brute = slice_norms(&a, j);
        let pi = u.contraction(j).unwrap();
        for (p, b) in pi.values.iter().zip(&brute) {
            assert!((p.1 - b).abs() <= 1e-12 * dense_norm(&a));
        }
    }
}

#[test]
fn coarsen_drops_the_small_axis_entries() {
    let u = HtTensor::elementary(tree(2), vec![(vec![0, 1], vec![1.0, 0.01]); 2]).unwrap();
    let (w, rep) = u.coarsen(0.05).unwrap();
    assert_eq!(**w.rows(0), vec![0]);
    assert_eq!(**w.rows(1), vec![0]);
    assert_eq!(rep.discarded, vec![1, 1]);
    let err = (u.norm().powi(2) - w.norm().powi(2)).sqrt();
    let expect = (0.01f64.powi(2) * 2.0 + 1e-8).sqrt();
    assert!((err - expect).abs() < 1e-12);
    let (same, _) = u.coarsen(0.0).unwrap();
    assert_eq!(same.all_rows(), u.all_rows());
}

#[test]
fn coarsen_on_random_tensor_respects_tolerance() {
    let u = rand_tensor(&[6, 6, 6], 2, 23);
    let eps = 0.1 * u.norm();
    let (w, _) = u.coarsen(eps).unwrap();
    let wz = w.restrict(u.all_rows()).unwrap();
    let err = dense_norm(&(u.densify().unwrap() - wz.densify().unwrap()));
    assert!(err <= eps);
}

#[test]
fn densify_guard() {
    let big: Vec<Rows<usize>> = vec![rows(1000), rows(1000), rows(11)];
    let u = HtTensor::zeros(tree(3), big).unwrap();
    assert!(matches!(u.densify(), Err(HtError::TooLarge(_))));
}

#[test]
fn one_dimensional_tensors_are_vectors() {
    let u = HtTensor::elementary(tree(1), vec![(vec![3, 1], vec![2.0, -1.0])]).unwrap();
    assert_eq!(**u.rows(0), vec![1, 3]);
    assert!((u.norm() - 5f64.sqrt()).abs() < 1e-15);
    let (w, _) = u.coarsen(1.0).unwrap();
    assert_eq!(**w.rows(0), vec![3]);
    let z = HtTensor::<usize>::zeros(tree(1), vec![rows(2)]).unwrap();
    assert_eq!(z.norm(), 0.0);
}

#[test]
fn debug_dump_lists_ranks_and_sets() {
    let u = rand_tensor(&[2, 3], 1, 0);
    let j = u.debug_json();
    assert_eq!(j["d"], 2);
    assert_eq!(j["ranks"], serde_json::json!([1, 1, 1]));
    assert_eq!(j["index_sets"][1], serde_json::json!([0, 1, 2]));
}

#[test]
fn tensors_cross_threads() {
    let u = rand_tensor(&[3, 3], 2, 4);
    let n = std::thread::spawn(move || u.norm()).join().unwrap();
    assert!(n > 0.0);
}

fn shape_strategy() -> impl Strategy<Value = Vec<usize>> {
    prop_oneof![prop::collection::vec(2usize..=6, 3), prop::collection::vec(2usize..=5, 4)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn truncation_error_below_tolerance_and_tail(shape in shape_strategy(), rank in 1usize..4, seed in 0u64..1000, rel in 0.01f64..0.8) {
        let u = rand_tensor(&shape, rank, seed);
        let eps = rel * u.norm();
        let (w, rep) = u.truncate(eps).unwrap();
        let err = dense_norm(&(u.densify().unwrap() - w.densify().unwrap()));
        prop_assert!(err <= eps * (1.0 + 1e-12));
        prop_assert!(err <= rep.error_bound * (1.0 + 1e-10) + 1e-12 * u.norm());
    }

    #[test]
    fn contraction_sandwich(shape in shape_strategy(), rank in 1usize..4, seed in 0u64..1000, mask in prop::collection::vec(any::<bool>(), 24)) {
        let u = rand_tensor(&shape, rank, seed);
        let d = shape.len();
        let mut m = mask.into_iter();
        let kept: Vec<Rows<usize>> = shape.iter().map(|&n| Arc::new((0..n).filter(|_| m.next().unwrap_or(true)).collect::<Vec<_>>())).collect();
        let r = u.restrict(&kept).unwrap().restrict(u.all_rows()).unwrap();
        let lhs = dense_norm(&(u.densify().unwrap() - r.densify().unwrap()));
        let pis = u.contractions();
        let mid = pis.iter().enumerate().map(|(j, cv)| cv.values.iter().filter(|(k, _)| !kept[j].contains(k)).map(|(_, v)| v * v).sum::<f64>()).sum::<f64>().sqrt();
        let tol = 1e-10 * u.norm();
        prop_assert!(lhs <= mid + tol);
        prop_assert!(mid <= (d as f64).sqrt() * lhs + tol);
    }

    #[test]
    fn contractions_preserve_the_norm(shape in shape_strategy(), rank in 1usize..4, seed in 0u64..1000) {
        let u = rand_tensor(&shape, rank, seed);
        let n2 = u.inner(&u).unwrap();
        for cv in u.contractions() {
            prop_assert!((cv.norm().powi(2) - n2).abs() <= 1e-10 * n2);
            prop_assert!(cv.values.iter().all(|(_, v)| *v >= 0.0));
        }
    }

    #[test]
    fn addition_is_exact(shape in shape_strategy(), seed in 0u64..1000) {
        let u = rand_tensor(&shape, 2, seed);
        let v = rand_tensor(&shape, 3, seed + 1);
        let w = u.add(&v).unwrap();
        let e = u.densify().unwrap() + v.densify().unwrap();
        prop_assert!(max_diff(&w.densify().unwrap(), &e) <= 1e-12 * dense_norm(&e));
    }

    #[test]
    fn minimal_tensors_are_fixed_points(shape in shape_strategy(), seed in 0u64..1000) {
        let (u, _) = rand_tensor(&shape, 2, seed).truncate(0.0).unwrap();
        let (w, _) = u.truncate(0.0).unwrap();
        prop_assert_eq!(w.ranks(), u.ranks());
        prop_assert_eq!(u.orthogonalize().ranks(), u.ranks());
    }

    #[test]
    fn from_dense_round_trip(shape in shape_strategy(), seed in 0u64..1000) {
        let u = rand_tensor(&shape, 2, seed);
        let a = u.densify().unwrap();
        let v = HtTensor::from_dense(u.tree().clone(), u.all_rows().to_vec(), &a).unwrap();
        prop_assert!(max_diff(&v.densify().unwrap(), &a) <= 1e-11 * dense_norm(&a));
    }
}
