//! Separable approximation of the diagonal `H¹` scaling by exponential sums.
//!
//! `1/√t ≈ φ(t) = Σ_k ω_k exp(−a_k t)` on `[1, T]`, and with
//! `t_λ = Σ_j ‖ψ_{λ_j}‖²_{H¹}` every term factorises over dimensions.

use crate::ht::{HtError, HtTensor, Key};
use crate::wavelet::{Basis1D, WaveletIndex};
use nalgebra::DMatrix;
use nalgebra_sparse::CsrMatrix;
use serde::Serialize;
use std::f64::consts::PI;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PrecondError {
    #[error("accuracy δ must lie in (0,1), got {0}")]
    Delta(f64),
    #[error("tail accuracy η must be positive, got {0}")]
    Eta(f64),
    #[error("window bound T must exceed 1, got {0}")]
    Window(f64),
    #[error("scaling weight {weight} exceeds the window bound {bound}; rebuild with a larger T")]
    WindowExceeded { weight: f64, bound: f64 },
    #[error(transparent)]
    Tensor(#[from] HtError),
}

/// One-dimensional scaling weights `‖ψ_λ‖²_{H¹}` per dimension.
pub trait ScalingWeights<K: Key>: Send + Sync {
    fn weight(&self, dim: usize, k: &K) -> f64;
}

impl ScalingWeights<WaveletIndex> for Basis1D {
    fn weight(&self, _dim: usize, k: &WaveletIndex) -> f64 {
        self.h1_norm_sq_unchecked(k)
    }
}

impl<K: Key, W: ScalingWeights<K> + ?Sized> ScalingWeights<K> for Arc<W> {
    fn weight(&self, dim: usize, k: &K) -> f64 {
        (**self).weight(dim, k)
    }
}

/// Weights given by a plain function (tests and toy problems).
pub struct FnWeights<F>(pub F);

impl<K: Key, F: Fn(usize, &K) -> f64 + Send + Sync> ScalingWeights<K> for FnWeights<F> {
    fn weight(&self, dim: usize, k: &K) -> f64 {
        (self.0)(dim, k)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ExpSumPrecond {
    pub delta: f64,
    pub eta: f64,
    pub t_max: f64,
    pub h: f64,
    pub n_plus: usize,
    pub n_minus: usize,
    /// `(k, ω_k, a_k)` for `k = −n, …, n⁺`.
    pub terms: Vec<(i64, f64, f64)>,
}

/// Largest admissible step for accuracy `δ`.
pub fn step_bound(delta: f64) -> f64 {
    PI * PI / (5.0 * ((delta / 2.0).ln().abs() + 4.0))
}

fn weight_fn(x: f64) -> f64 {
    2.0 / PI.sqrt() / (1.0 + (-x).exp())
}

fn exponent_fn(x: f64) -> f64 {
    // ln(1 + e^x), stable for large |x|
    let l = if x > 30.0 { x + (-x).exp().ln_1p() } else { x.exp().ln_1p() };
    l * l
}

/// Bookkeeping of one application.
#[derive(Clone, Debug, Default, Serialize)]
pub struct PrecondStats {
    pub terms_used: usize,
    pub terms_dropped: usize,
    pub max_rank: usize,
    pub t_min: f64,
    pub t_max: f64,
}

impl ExpSumPrecond {
    pub fn new(delta: f64, eta: f64, t_max: f64) -> Result<Self, PrecondError> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(PrecondError::Delta(delta));
        }
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(PrecondError::Eta(eta));
        }
        if !(t_max > 1.0 && t_max.is_finite()) {
            return Err(PrecondError::Window(t_max));
        }
        let h = 0.9 * step_bound(delta);
        let n_plus = ((4.0 / PI.sqrt()).max((delta / 2.0).ln().abs().sqrt()) / h).ceil() as usize;
        let tail = (2.0 / PI.sqrt()).ln() + (delta / 2.0).min(eta).ln().abs() + 0.5 * t_max.ln();
        let n_minus = (tail / h).ceil() as usize;
        let terms = (-(n_minus as i64)..=n_plus as i64)
            .map(|k| {
                let x = k as f64 * h;
                (k, h * weight_fn(x), exponent_fn(x))
            })
            .collect();
        Ok(ExpSumPrecond { delta, eta, t_max, h, n_plus, n_minus, terms })
    }

    /// Default tail accuracy `η = δ/10`.
    pub fn with_default_eta(delta: f64, t_max: f64) -> Result<Self, PrecondError> {
        Self::new(delta, delta / 10.0, t_max)
    }

    /// Window bound for `d` dimensions and wavelet levels up to `level`.
    pub fn window_for(basis: &Basis1D, d: usize, level: u32) -> f64 {
        1.1 * d as f64 * basis.max_h1_norm_sq(level)
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    /// `φ(t) = Σ_k ω_k e^{−a_k t}`.
    pub fn phi(&self, t: f64) -> f64 {
        self.terms.iter().map(|&(_, w, a)| w * (-a * t).exp()).sum()
    }

    /// `φ` restricted to terms with `k ≥ −m`.
    pub fn phi_truncated(&self, t: f64, m: usize) -> f64 {
        self.terms.iter().filter(|(k, _, _)| *k >= -(m as i64)).map(|&(_, w, a)| w * (-a * t).exp()).sum()
    }

    /// Sampled `sup √t·|1/√t − φ(t)|` on a logarithmic grid over `[1, T]`.
    pub fn sup_error(&self, points: usize) -> f64 {
        log_grid(self.t_max, points).map(|t| (1.0 - t.sqrt() * self.phi(t)).abs()).fold(0.0, f64::max)
    }

    fn row_weights<K: Key, W: ScalingWeights<K> + ?Sized>(u: &HtTensor<K>, w: &W) -> Vec<Vec<f64>> {
        (0..u.d()).map(|j| u.rows(j).iter().map(|k| w.weight(j, k)).collect()).collect()
    }

    /// Largest product weight over the rows of `u`.
    pub fn max_weight<K: Key, W: ScalingWeights<K> + ?Sized>(u: &HtTensor<K>, w: &W) -> f64 {
        Self::row_weights(u, w).iter().map(|v| v.iter().cloned().fold(0.0, f64::max)).sum()
    }

    /// `S⁻¹ u` with absolute truncation tolerance `tol`.
    ///
    /// Terms are added one at a time with intermediate truncations; terms whose
    /// contribution is provably below a share of `tol` on the active rows are skipped.
    pub fn apply_abs<K: Key, W: ScalingWeights<K> + ?Sized>(&self, u: &HtTensor<K>, w: &W, tol: f64) -> Result<(HtTensor<K>, PrecondStats), PrecondError> {
        if !(tol >= 0.0) {
            return Err(HtError::NegativeTolerance(tol).into());
        }
        let weights = Self::row_weights(u, w);
        let mins: Vec<f64> = weights.iter().map(|v| v.iter().cloned().fold(f64::INFINITY, f64::min)).collect();
        let maxs: Vec<f64> = weights.iter().map(|v| v.iter().cloned().fold(0.0, f64::max)).collect();
        let t_max: f64 = maxs.iter().sum();
        let t_min: f64 = if mins.iter().any(|m| m.is_infinite()) { 0.0 } else { mins.iter().sum() };
        if t_max > self.t_max * (1.0 + 1e-12) {
            return Err(PrecondError::WindowExceeded { weight: t_max, bound: self.t_max });
        }
        let mut stats = PrecondStats { t_min, t_max, ..Default::default() };
        if u.d() == 1 {
            let frame = u.frame(0);
            let scaled = DMatrix::from_fn(frame.nrows(), 1, |i, _| frame[(i, 0)] * self.phi(weights[0][i]));
            stats.terms_used = self.terms.len();
            stats.max_rank = 1;
            return Ok((u.with_leaf(0, u.rows(0).clone(), scaled)?, stats));
        }
        let norm = u.norm();
        if norm == 0.0 {
            return Ok((u.clone(), stats));
        }
        // drop terms whose operator norm on the active rows is negligible
        let budget = 0.25 * tol / norm;
        let mut bounds: Vec<(f64, usize)> = self.terms.iter().enumerate().map(|(i, &(_, w, a))| (w * (-a * t_min).exp(), i)).collect();
        bounds.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut keep = vec![true; self.terms.len()];
        let mut spent = 0.0;
        for (b, i) in bounds {
            if spent + b > budget {
                break;
            }
            spent += b;
            keep[i] = false;
        }
        let active: Vec<usize> = (0..self.terms.len()).filter(|&i| keep[i]).collect();
        stats.terms_used = active.len();
        stats.terms_dropped = self.terms.len() - active.len();
        let step_tol = if active.len() > 1 { 0.25 * tol / (active.len() - 1) as f64 } else { 0.0 };
        let base = u.orthogonalize();
        let mut acc: Option<HtTensor<K>> = None;
        for &i in &active {
            let (_, wk, ak) = self.terms[i];
            let mut term = base.scale(wk);
            for j in 0..u.d() {
                let f = base.frame(j);
                let scaled = DMatrix::from_fn(f.nrows(), f.ncols(), |r, c| f[(r, c)] * (-ak * weights[j][r]).exp());
                term = term.with_leaf(j, base.rows(j).clone(), scaled)?;
            }
            acc = Some(match acc {
                None => term,
                Some(a) => {
                    let s = a.add(&term)?;
                    stats.max_rank = stats.max_rank.max(s.max_rank());
                    s.truncate(step_tol)?.0
                }
            });
        }
        let acc = match acc {
            Some(a) => a,
            None => HtTensor::zeros(u.tree().clone(), u.all_rows().to_vec())?,
        };
        let (out, _) = acc.truncate(0.5 * tol)?;
        Ok((out, stats))
    }

    /// `S⁻¹ u`, truncated to `rel_tol·‖u‖`.
    pub fn apply<K: Key, W: ScalingWeights<K> + ?Sized>(&self, u: &HtTensor<K>, w: &W, rel_tol: f64) -> Result<HtTensor<K>, PrecondError> {
        Ok(self.apply_abs(u, w, rel_tol * u.norm())?.0)
    }
}

/// Extreme eigenvalues of `S⁻¹ A S⁻¹` for the Laplacian on the full product set `set^d`,
/// from a Lanczos run with full reorthogonalisation on explicit vectors.
pub fn preconditioned_spectrum(p: &ExpSumPrecond, basis: &Basis1D, d: usize, set: &[WaveletIndex], steps: usize) -> Result<(f64, f64), PrecondError> {
    let t = Arc::new(basis.stiffness_matrix(set, set));
    kronecker_spectrum(p, basis, &vec![t; d], set, steps)
}

/// As [`preconditioned_spectrum`] for the Kronecker sum `Σ_j I ⊗ ⋯ ⊗ T_j ⊗ ⋯ ⊗ I`
/// with the blocks `T_j` given on `set`.
pub fn kronecker_spectrum(p: &ExpSumPrecond, basis: &Basis1D, blocks: &[Arc<CsrMatrix<f64>>], set: &[WaveletIndex], steps: usize) -> Result<(f64, f64), PrecondError> {
    let d = blocks.len();
    let n1 = set.len();
    let n = n1.checked_pow(d as u32).filter(|&n| n <= 4_000_000).ok_or(HtError::TooLarge(usize::MAX))?;
    let w1: Vec<f64> = set.iter().map(|k| basis.weight(0, k)).collect();
    let mut scale = vec![0.0; n];
    for (i, s) in scale.iter_mut().enumerate() {
        let mut rest = i;
        let mut tw = 0.0;
        for _ in 0..d {
            tw += w1[rest % n1];
            rest /= n1;
        }
        if tw > p.t_max * (1.0 + 1e-12) {
            return Err(PrecondError::WindowExceeded { weight: tw, bound: p.t_max });
        }
        *s = p.phi(tw);
    }
    let apply = |x: &[f64], y: &mut [f64]| {
        y.iter_mut().for_each(|v| *v = 0.0);
        let sx: Vec<f64> = x.iter().zip(&scale).map(|(a, b)| a * b).collect();
        let mut stride = 1;
        for t in blocks {
            for base in 0..n {
                if (base / stride) % n1 != 0 {
                    continue;
                }
                for (r, c, v) in t.triplet_iter() {
                    y[base + r * stride] += v * sx[base + c * stride];
                }
            }
            stride *= n1;
        }
        y.iter_mut().zip(&scale).for_each(|(a, b)| *a *= b);
    };
    Ok(lanczos_extremes(n, steps, apply))
}

/// Spectral enclosure of `S⁻¹AS⁻¹` for a Kronecker sum, valid in every dimension.
///
/// With `c W ≤ T_j ≤ C W` for the one-dimensional blocks and `W = diag(‖ψ_λ‖²_{H¹})`,
/// the sum satisfies `c D² ≤ A ≤ C D²`, and `√t φ(t) ∈ [1−δ, 1+δ]` on the window
/// gives `[c(1−δ)², C(1+δ)²]`.
pub fn kronecker_sum_bounds(p: &ExpSumPrecond, basis: &Basis1D, blocks: &[Arc<CsrMatrix<f64>>], set: &[WaveletIndex]) -> (f64, f64) {
    let s: Vec<f64> = set.iter().map(|k| 1.0 / basis.weight(0, k).sqrt()).collect();
    let (mut c, mut big_c) = (f64::INFINITY, 0.0f64);
    for t in blocks {
        let mut m = DMatrix::zeros(set.len(), set.len());
        for (r, col, v) in t.triplet_iter() {
            m[(r, col)] = v * s[r] * s[col];
        }
        let ev = m.symmetric_eigenvalues();
        c = c.min(ev.min());
        big_c = big_c.max(ev.max());
    }
    (c * (1.0 - p.delta).powi(2), big_c * (1.0 + p.delta).powi(2))
}

fn lanczos_extremes(n: usize, steps: usize, apply: impl Fn(&[f64], &mut [f64])) -> (f64, f64) {
    let m = steps.min(n).max(1);
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + ((i * 7919) % 113) as f64 / 113.0).collect();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= nv);
    let (mut alpha, mut beta) = (Vec::new(), Vec::new());
    let mut w = vec![0.0; n];
    for _ in 0..m {
        apply(&v, &mut w);
        let a: f64 = w.iter().zip(&v).map(|(x, y)| x * y).sum();
        alpha.push(a);
        q.push(v.clone());
        for _pass in 0..2 {
            for qi in &q {
                let c: f64 = w.iter().zip(qi).map(|(x, y)| x * y).sum();
                w.iter_mut().zip(qi).for_each(|(x, y)| *x -= c * y);
            }
        }
        let b = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if b < 1e-12 * a.abs().max(1.0) {
            break;
        }
        beta.push(b);
        v = w.iter().map(|x| x / b).collect();
    }
    let k = alpha.len();
    let tri = DMatrix::from_fn(k, k, |i, j| {
        if i == j {
            alpha[i]
        } else if i + 1 == j || j + 1 == i {
            beta[i.min(j)]
        } else {
            0.0
        }
    });
    let ev = tri.symmetric_eigenvalues();
    (ev.min(), ev.max())
}

/// `points` logarithmically spaced values in `[1, t_max]`.
pub fn log_grid(t_max: f64, points: usize) -> impl Iterator<Item = f64> {
    let l = t_max.ln();
    let n = points.max(2);
    (0..n).map(move |i| (l * i as f64 / (n - 1) as f64).exp())
}
