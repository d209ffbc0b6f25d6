use htawgm::awgm::{
    expand, ht_awgm, is_tree, omega2_bound, omega3_bound, residual, tree_closure, validate_params, vartheta, AwgmError, AwgmParams, OnesLoad, ParamError,
};
use htawgm::ht::{DimTree, HtTensor, Rows};
use htawgm::operator::laplacian;
use htawgm::precond::ScalingWeights;
use htawgm::wavelet::index::uniform;
use htawgm::wavelet::{Basis1D, IndexSet1D, WaveletIndex};
use ndarray::{ArrayD, IxDyn};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

fn rows(v: &[usize]) -> Rows<usize> {
    Arc::new(v.to_vec())
}

fn dense2(r: &[usize], c: &[usize], f: impl Fn(usize, usize) -> f64) -> HtTensor<usize> {
    let a = ArrayD::from_shape_fn(IxDyn(&[r.len(), c.len()]), |ix| f(r[ix[0]], c[ix[1]]));
    HtTensor::from_dense(Arc::new(DimTree::balanced(2).unwrap()), vec![rows(r), rows(c)], &a).unwrap()
}

fn small_omegas(d: usize) -> AwgmParams {
    let mut p = AwgmParams::defaults(d);
    p.omega3 = 0.2 * omega3_bound(d);
    let a = (2.0 * d as f64 - 3.0).sqrt();
    p.omega4 = 1.5 * a * p.omega3;
    p.omega5 = 1.5 * (d as f64).sqrt() * (1.0 + a) * p.omega3;
    p
}

#[test]
fn omega2_at_nine_tenths_of_its_bound_does_not_contract() {
    let mut p = small_omegas(2);
    p.alpha = 0.95;
    p.omega1 = 0.1;
    let kappa = 10.0;
    let bound = (1.0 - 0.1) * (0.95 + 0.1) / 1.1 / kappa;
    assert!((omega2_bound(0.95, 0.1, kappa) - bound).abs() < 1e-15);
    p.omega2 = Some(0.9 * bound);
    let a = (0.95 - 0.1) / 1.1;
    let b = 0.9 * bound / 0.9;
    let expect = (1.0 - a * a / kappa + b * b * kappa).sqrt();
    assert!(expect > 1.0);
    match validate_params(&p, 2, kappa, 1.0) {
        Err(ParamError::Contraction(v)) => assert!((v - expect).abs() < 1e-14),
        other => panic!("{other:?}"),
    }
}

#[test]
fn accepted_example_has_contracting_inner_loop() {
    let mut p = small_omegas(2);
    p.alpha = 0.95;
    p.omega1 = 0.1;
    let kappa = 10.0;
    let bound = (1.0 - 0.1) * (0.95 + 0.1) / 1.1 / kappa;
    p.omega2 = Some(0.5 * bound);
    let v = validate_params(&p, 2, kappa, 1.0).unwrap();
    let a = (0.95 - 0.1) / 1.1;
    let b = 0.5 * bound / 0.9;
    let expect = (1.0 - a * a / kappa + b * b * kappa).sqrt();
    assert!((v.vartheta - expect).abs() < 1e-14);
    assert!(v.vartheta > 0.0 && v.vartheta < 1.0);
    let m = ((p.omega3 / kappa.sqrt()).ln() / expect.ln()).abs().ceil() as usize;
    assert_eq!(v.m_star, m);
}

#[test]
fn k_star_matches_formula() {
    let p = AwgmParams::defaults(2);
    let (kappa, omega0) = (12.0, 0.3);
    let v = validate_params(&p, 2, kappa, omega0).unwrap();
    let arg = (1.0 - p.omega1) / (p.eps * kappa * p.omega3 * omega0 * (1.0 + p.omega1));
    let k = (arg.ln() / (p.omega3 + p.omega4 + p.omega5).ln()).abs().ceil() as usize;
    assert_eq!(v.k_star, k);
}

#[test]
fn omega1_not_below_alpha_is_rejected() {
    let mut p = AwgmParams::defaults(2);
    p.omega1 = p.alpha;
    let e = validate_params(&p, 2, 10.0, 1.0).unwrap_err();
    assert_eq!(e.name(), "omega1");
    p.omega1 = 0.95;
    assert!(matches!(validate_params(&p, 2, 10.0, 1.0), Err(ParamError::Omega1 { .. })));
}

#[test]
fn omega4_at_its_lower_bound_is_rejected_in_2d() {
    let mut p = small_omegas(2);
    p.omega4 = p.omega3;
    match validate_params(&p, 2, 10.0, 1.0) {
        Err(ParamError::Omega4 { omega4, bound }) => {
            assert_eq!(omega4, p.omega3);
            assert!((bound - p.omega3).abs() < 1e-15);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn defaults_are_admissible_in_every_dimension() {
    for d in [2, 3, 4, 8, 16, 32] {
        let p = AwgmParams::defaults(d);
        assert!(p.omega_sum() < 1.0);
        validate_params(&p, d, 15.0, 1.0).unwrap();
    }
}

#[test]
fn each_violation_is_reported_by_name() {
    let base = AwgmParams::defaults(4);
    let cases: Vec<(&str, Box<dyn Fn(&mut AwgmParams)>)> = vec![
        ("eps", Box::new(|p| p.eps = 0.0)),
        ("delta", Box::new(|p| p.delta = 1.0)),
        ("alpha", Box::new(|p| p.alpha = 1.2)),
        ("omega2", Box::new(|p| p.omega2 = Some(1.0))),
        ("omega3", Box::new(|p| p.omega3 = -1.0)),
        ("omega5", Box::new(|p| p.omega5 = p.omega3)),
        ("omega_sum", Box::new(|p| p.omega5 = 0.99)),
        ("max_inner", Box::new(|p| p.max_inner = Some(1))),
    ];
    for (name, f) in cases {
        let mut p = base.clone();
        f(&mut p);
        assert_eq!(validate_params(&p, 4, 15.0, 1.0).unwrap_err().name(), name);
    }
    assert_eq!(validate_params(&base, 1, 15.0, 1.0).unwrap_err().name(), "d");
    assert_eq!(validate_params(&base, 4, 0.5, 1.0).unwrap_err().name(), "kappa");
}

#[test]
fn contraction_factor_can_exceed_one() {
    assert!(vartheta(0.5, 0.1, 0.2, 1.0) < 1.0);
    assert!(vartheta(0.5, 0.4, 2.0, 5.0) > 1.0);
}

/// All product supersets of `base` inside `full`, smallest first, that satisfy the bulk condition.
fn brute_force_minimum(r: &HtTensor<usize>, base: &[Vec<usize>], full: &[Vec<usize>], alpha: f64) -> usize {
    let extra: Vec<Vec<usize>> = full.iter().zip(base).map(|(f, b)| f.iter().filter(|k| !b.contains(k)).cloned().collect()).collect();
    let total = r.norm();
    let mut best = usize::MAX;
    for m0 in 0..(1usize << extra[0].len()) {
        for m1 in 0..(1usize << extra[1].len()) {
            let pick = |b: &Vec<usize>, e: &Vec<usize>, m: usize| {
                let mut s: Vec<usize> = b.iter().cloned().chain(e.iter().enumerate().filter(|(i, _)| m >> i & 1 == 1).map(|(_, k)| *k)).collect();
                s.sort();
                s
            };
            let s0 = pick(&base[0], &extra[0], m0);
            let s1 = pick(&base[1], &extra[1], m1);
            let kept = r.restrict(&[rows(&s0), rows(&s1)]).unwrap().norm();
            if kept >= alpha * total - 1e-14 {
                best = best.min(s0.len() + s1.len());
            }
        }
    }
    best
}

#[test]
fn expand_adds_the_heavier_off_diagonal_entry() {
    let r = dense2(&[1, 2], &[1, 2], |i, j| match (i, j) {
        (1, 2) => 0.6,
        (2, 1) => 0.8,
        _ => 0.0,
    });
    let set = vec![rows(&[1]), rows(&[1])];
    let out = expand(&set, &r, 0.7).unwrap();
    assert_eq!(out[0].as_slice(), &[1, 2]);
    assert_eq!(out[1].as_slice(), &[1]);
    let kept = r.restrict(&out).unwrap().norm();
    assert!((kept - 0.8).abs() < 1e-12);
    let best = brute_force_minimum(&r, &[vec![1], vec![1]], &[vec![1, 2], vec![1, 2]], 0.7);
    assert_eq!(out[0].len() + out[1].len(), best);
}

#[test]
fn tiny_alpha_keeps_the_set() {
    let r = dense2(&[0, 1, 2], &[0, 1], |i, j| 1.0 + (i * 2 + j) as f64);
    let set = vec![rows(&[0]), rows(&[1])];
    let out = expand(&set, &r, 1e-9).unwrap();
    assert_eq!(out, set);
    assert!(matches!(expand(&set, &r, 0.0), Err(ParamError::Alpha(_))));
    assert!(matches!(expand(&set, &r, 1.0), Err(ParamError::Alpha(_))));
}

#[test]
fn expand_keeps_wavelet_sets_closed_under_ancestors() {
    let tree = Arc::new(DimTree::balanced(2).unwrap());
    let zone: Rows<WaveletIndex> = Arc::new(uniform(3).to_vec());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let r = htawgm::ht::random(tree, vec![zone.clone(), zone.clone()], 3, &mut rng).unwrap();
    let deep: Vec<WaveletIndex> = zone.iter().filter(|w| w.level == 3).cloned().collect();
    let r = r.restrict(&[Arc::new(deep.clone()), zone.clone()]).unwrap();
    let roots: Rows<WaveletIndex> = Arc::new(IndexSet1D::roots().to_vec());
    for alpha in [0.3, 0.7, 0.95] {
        let out = expand(&[roots.clone(), roots.clone()], &r, alpha).unwrap();
        assert!(out.iter().all(|s| is_tree(s)));
        assert!(out[0].iter().any(|w| w.level == 3));
        assert!(r.restrict(&out).unwrap().norm() >= alpha * r.norm() - 1e-12);
    }
    let closed = tree_closure(&deep);
    assert!(is_tree(&closed));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]
    #[test]
    fn expand_always_reaches_the_bulk(seed in 0u64..10_000, alpha in 0.05f64..0.99, n0 in 2usize..6, n1 in 2usize..6, k0 in 0usize..2, k1 in 0usize..2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tree = Arc::new(DimTree::balanced(2).unwrap());
        let full = vec![rows(&(0..n0).collect::<Vec<_>>()), rows(&(0..n1).collect::<Vec<_>>())];
        let r = htawgm::ht::random(tree, full, 2, &mut rng).unwrap();
        let set = vec![rows(&(0..k0).collect::<Vec<_>>()), rows(&(0..k1).collect::<Vec<_>>())];
        let out = expand(&set, &r, alpha).unwrap();
        prop_assert!(r.restrict(&out).unwrap().norm() >= alpha * r.norm() * (1.0 - 1e-12));
        for (o, s) in out.iter().zip(&set) {
            prop_assert!(s.iter().all(|k| o.binary_search(k).is_ok()));
        }
    }
}

#[test]
fn residual_of_zero_is_the_scaled_load() {
    let basis = Arc::new(Basis1D::new());
    let op = laplacian(basis.clone(), 2).unwrap();
    let tree = Arc::new(DimTree::balanced(2).unwrap());
    let set: Vec<Rows<WaveletIndex>> = vec![Arc::new(uniform(1).to_vec()); 2];
    let u = HtTensor::zeros(tree, set.clone()).unwrap();
    let delta = 0.1;
    let res = residual(&op, &basis, &OnesLoad(basis.clone()), &u, &set, delta, 1e-3, 1.0, 3.0).unwrap();
    assert!(res.eta <= (1.0 - delta) / 2.0);
    let z0 = &res.zone[0];
    let z1 = &res.zone[1];
    let mut exact2 = 0.0;
    for a in z0.iter() {
        for b in z1.iter() {
            let t = basis.weight(0, a) + basis.weight(1, b);
            let f = basis.rhs_one(a) * basis.rhs_one(b);
            exact2 += f * f / t;
        }
    }
    let exact = exact2.sqrt();
    let got = res.r.norm();
    let slack = delta + res.eta + 1e-3 / exact;
    assert!(got >= (1.0 - slack) * exact && got <= (1.0 + slack) * exact, "{got} vs {exact}");
}

#[test]
fn zero_load_returns_zero_immediately() {
    let basis = Arc::new(Basis1D::new());
    let op = laplacian(basis.clone(), 2).unwrap();
    let tree = Arc::new(DimTree::balanced(2).unwrap());
    let load = HtTensor::zeros(tree, vec![Arc::new(uniform(2).to_vec()); 2]).unwrap();
    let mut p = AwgmParams::defaults(2);
    p.rhs_level = 2;
    let out = ht_awgm(&op, &load, &basis, &p).unwrap();
    assert_eq!(out.omega0, 0.0);
    assert!(out.log.is_empty());
    assert_eq!(out.u.norm(), 0.0);
}

#[test]
fn poisson_2d_converges_with_a_consistent_log() {
    let basis = Arc::new(Basis1D::new());
    let op = laplacian(basis.clone(), 2).unwrap();
    let mut p = AwgmParams::defaults(2);
    p.eps = 1e-3;
    let out = ht_awgm(&op, &OnesLoad(basis.clone()), &basis, &p).unwrap();
    let last = out.log.last().unwrap();
    assert!(last.residual <= p.eps && last.event == "inner");
    let q = p.omega_sum();
    let mut expect = out.omega0;
    let mut prev: Option<&htawgm::awgm::ConvergenceRecord> = None;
    for r in &out.log {
        if r.event == "coarsen" {
            expect *= q;
        }
        assert!((r.omega0_k - expect).abs() <= 1e-12 * expect);
        if let Some(pr) = prev {
            if pr.event == "inner" && r.event == "inner" && pr.outer == r.outer {
                assert!(r.support >= pr.support);
            }
        }
        assert!(r.residual.is_finite());
        prev = Some(r);
    }
    let total = out.log.iter().filter(|r| r.event == "inner").count();
    assert!(total <= out.validated.k_star * out.validated.m_star);
    assert!(out.spectrum.lambda_min < out.raw_spectrum.lambda_min);
    assert!(out.spectrum.lambda_max > out.raw_spectrum.lambda_max);
}

#[test]
fn infeasible_parameters_stop_before_solving() {
    let basis = Arc::new(Basis1D::new());
    let op = laplacian(basis.clone(), 2).unwrap();
    let mut p = AwgmParams::defaults(2);
    p.omega1 = 0.95;
    assert!(matches!(ht_awgm(&op, &OnesLoad(basis.clone()), &basis, &p), Err(AwgmError::Params(ParamError::Omega1 { .. }))));
}
