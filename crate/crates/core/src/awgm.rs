//! The adaptive wavelet Galerkin driver in HT format.

use crate::ht::{DimTree, HtError, HtTensor, Key, Rows};
use crate::operator::SepOperator;
use crate::precond::{kronecker_spectrum, kronecker_sum_bounds, ExpSumPrecond, PrecondError, ScalingWeights};
use crate::solver::{estimate_spectrum, truncated_pcg, LinearMap, PcgOptions, SolverError, Spectrum, TruncStrategy};
use crate::wavelet::{Basis1D, IndexSet1D, WaveletIndex};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Instant;
use thiserror::Error;

/// Keys with a parent relation; sets are kept closed under it.
pub trait TreeKey: Key {
    fn parent_key(&self) -> Option<Self>;
}

impl TreeKey for WaveletIndex {
    fn parent_key(&self) -> Option<Self> {
        self.parent()
    }
}

impl TreeKey for usize {
    fn parent_key(&self) -> Option<Self> {
        None
    }
}

/// A constraint of [`AwgmParams`] that failed, with the offending values.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("eps must be positive, got {0}")]
    Eps(f64),
    #[error("delta must lie in (0,1), got {0}")]
    Delta(f64),
    #[error("alpha must lie in (0,1), got {0}")]
    Alpha(f64),
    #[error("omega1 = {omega1} must satisfy 0 < omega1 < alpha = {alpha}")]
    Omega1 { omega1: f64, alpha: f64 },
    #[error("omega2 = {omega2} must lie in (0, {bound})")]
    Omega2 { omega2: f64, bound: f64 },
    #[error("omega3 = {omega3} must lie in (0, {bound})")]
    Omega3 { omega3: f64, bound: f64 },
    #[error("omega4 = {omega4} must exceed sqrt(2d-3)*omega3 = {bound}")]
    Omega4 { omega4: f64, bound: f64 },
    #[error("omega5 = {omega5} must exceed sqrt(d)(1+sqrt(2d-3))*omega3 = {bound}")]
    Omega5 { omega5: f64, bound: f64 },
    #[error("omega3 + omega4 + omega5 = {sum} must be below 1")]
    OmegaSum { sum: f64 },
    #[error("inner cap M = {m} is below M* = {m_star}")]
    InnerCap { m: usize, m_star: usize },
    #[error("kappa estimate must be at least 1, got {0}")]
    Kappa(f64),
    #[error("dimension must be at least 2, got {0}")]
    Dimension(usize),
    #[error("inner contraction factor {0} is not below 1")]
    Contraction(f64),
}

impl ParamError {
    /// Short name of the violated constraint.
    pub fn name(&self) -> &'static str {
        match self {
            ParamError::Eps(_) => "eps",
            ParamError::Delta(_) => "delta",
            ParamError::Alpha(_) => "alpha",
            ParamError::Omega1 { .. } => "omega1",
            ParamError::Omega2 { .. } => "omega2",
            ParamError::Omega3 { .. } => "omega3",
            ParamError::Omega4 { .. } => "omega4",
            ParamError::Omega5 { .. } => "omega5",
            ParamError::OmegaSum { .. } => "omega_sum",
            ParamError::InnerCap { .. } => "max_inner",
            ParamError::Kappa(_) => "kappa",
            ParamError::Dimension(_) => "d",
            ParamError::Contraction(_) => "vartheta",
        }
    }
}

#[derive(Debug, Error)]
pub enum AwgmError {
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error("no convergence after {outer} outer iterations, last residual {residual}")]
    MaxOuter { outer: usize, residual: f64 },
    #[error("iteration count {iterations} exceeds the bound K*·M* = {bound}")]
    IterationBound { iterations: usize, bound: usize },
    #[error("index set in dimension {0} lost its tree structure")]
    NotTree(usize),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Precond(#[from] PrecondError),
    #[error(transparent)]
    Tensor(#[from] HtError),
}

impl From<crate::operator::OperatorError> for AwgmError {
    fn from(e: crate::operator::OperatorError) -> Self {
        AwgmError::Solver(e.into())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AwgmParams {
    pub eps: f64,
    pub delta: f64,
    pub alpha: f64,
    /// `None`: `1.1·‖S⁻¹f‖`.
    pub omega0: Option<f64>,
    pub omega1: f64,
    /// `None`: half its upper bound.
    pub omega2: Option<f64>,
    pub omega3: f64,
    pub omega4: f64,
    pub omega5: f64,
    /// Inner cap `M`; `None`: `M*`.
    pub max_inner: Option<usize>,
    pub max_outer: usize,
    pub c_ad: f64,
    pub pcg_max_iter: usize,
    /// Uniform level on which the spectrum of the preconditioned operator is estimated.
    pub spectrum_level: u32,
    pub power_steps: usize,
    pub safety: f64,
    /// Uniform level on which `‖S⁻¹f‖` is evaluated for `ω₀`.
    pub rhs_level: u32,
}

/// `sqrt(2d−3)` and `sqrt(d)(1+sqrt(2d−3))`.
fn omega_factors(d: usize) -> (f64, f64) {
    let a = (2.0 * d as f64 - 3.0).max(0.0).sqrt();
    (a, (d as f64).sqrt() * (1.0 + a))
}

/// Upper bound on `ω₃` implied by `ω₃+ω₄+ω₅ < 1`.
pub fn omega3_bound(d: usize) -> f64 {
    let (a, b) = omega_factors(d);
    1.0 / (1.0 + a + b)
}

/// Upper bound on `ω₂` for given `α`, `ω₁` and `κ`.
pub fn omega2_bound(alpha: f64, omega1: f64, kappa: f64) -> f64 {
    (1.0 - omega1) * (alpha + omega1) / (1.0 + omega1) / kappa
}

impl AwgmParams {
    /// Values strictly inside the admissible region for dimension `d`.
    pub fn defaults(d: usize) -> Self {
        let (a, b) = omega_factors(d);
        let omega3 = 0.5 * omega3_bound(d);
        AwgmParams {
            eps: 1e-4,
            delta: 0.1,
            alpha: 0.9,
            omega0: None,
            omega1: 0.2,
            omega2: None,
            omega3,
            omega4: 1.1 * a * omega3,
            omega5: 1.1 * b * omega3,
            max_inner: None,
            max_outer: 60,
            c_ad: 0.1,
            pcg_max_iter: 50,
            spectrum_level: 3,
            power_steps: 20,
            safety: 1.2,
            rhs_level: 10,
        }
    }

    pub fn omega2_for(&self, kappa: f64) -> f64 {
        self.omega2.unwrap_or(0.5 * omega2_bound(self.alpha, self.omega1, kappa))
    }

    pub fn omega_sum(&self) -> f64 {
        self.omega3 + self.omega4 + self.omega5
    }
}

/// Result of [`validate_params`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Validated {
    pub m_star: usize,
    pub k_star: usize,
    pub vartheta: f64,
    pub omega2: f64,
}

/// Inner contraction factor `ϑ`.
pub fn vartheta(alpha: f64, omega1: f64, omega2: f64, kappa: f64) -> f64 {
    let a = (alpha - omega1) / (1.0 + omega1);
    let b = omega2 / (1.0 - omega1);
    (1.0 - a * a / kappa + b * b * kappa).sqrt()
}

/// Checks every constraint on the parameters and returns the iteration bounds `M*`, `K*`.
/// `omega0` is only needed for `K*`; pass the value that will be used.
pub fn validate_params(p: &AwgmParams, d: usize, kappa: f64, omega0: f64) -> Result<Validated, ParamError> {
    if d < 2 {
        return Err(ParamError::Dimension(d));
    }
    if !(kappa >= 1.0 && kappa.is_finite()) {
        return Err(ParamError::Kappa(kappa));
    }
    if !(p.eps > 0.0) {
        return Err(ParamError::Eps(p.eps));
    }
    if !(p.delta > 0.0 && p.delta < 1.0) {
        return Err(ParamError::Delta(p.delta));
    }
    if !(p.alpha > 0.0 && p.alpha < 1.0) {
        return Err(ParamError::Alpha(p.alpha));
    }
    if !(p.omega1 > 0.0 && p.omega1 < p.alpha) {
        return Err(ParamError::Omega1 { omega1: p.omega1, alpha: p.alpha });
    }
    let bound2 = omega2_bound(p.alpha, p.omega1, kappa);
    let omega2 = p.omega2_for(kappa);
    if !(omega2 > 0.0 && omega2 < bound2) {
        return Err(ParamError::Omega2 { omega2, bound: bound2 });
    }
    let (a, b) = omega_factors(d);
    let bound3 = omega3_bound(d);
    if !(p.omega3 > 0.0 && p.omega3 < bound3) {
        if p.omega3 > 0.0 && p.omega_sum() >= 1.0 {
            return Err(ParamError::OmegaSum { sum: p.omega_sum() });
        }
        return Err(ParamError::Omega3 { omega3: p.omega3, bound: bound3 });
    }
    if !(p.omega4 > a * p.omega3) {
        return Err(ParamError::Omega4 { omega4: p.omega4, bound: a * p.omega3 });
    }
    if !(p.omega5 > b * p.omega3) {
        return Err(ParamError::Omega5 { omega5: p.omega5, bound: b * p.omega3 });
    }
    if !(p.omega_sum() < 1.0) {
        return Err(ParamError::OmegaSum { sum: p.omega_sum() });
    }
    let vt = vartheta(p.alpha, p.omega1, omega2, kappa);
    if !(vt > 0.0 && vt < 1.0) {
        return Err(ParamError::Contraction(vt));
    }
    let m_star = ((p.omega3 / kappa.sqrt()).ln() / vt.ln()).abs().ceil() as usize;
    if let Some(m) = p.max_inner {
        if m < m_star {
            return Err(ParamError::InnerCap { m, m_star });
        }
    }
    let k_arg = (1.0 - p.omega1) / (p.eps * kappa * p.omega3 * omega0.max(f64::MIN_POSITIVE) * (1.0 + p.omega1));
    let k_star = (k_arg.ln() / p.omega_sum().ln()).abs().ceil() as usize;
    Ok(Validated { m_star, k_star: k_star.max(1), vartheta: vt, omega2 })
}

/// Sorted union of `set` and all ancestors of its members.
pub fn tree_closure<K: TreeKey>(set: &[K]) -> Vec<K> {
    let mut out: BTreeSet<K> = BTreeSet::new();
    for &k in set {
        let mut cur = Some(k);
        while let Some(c) = cur {
            if !out.insert(c) {
                break;
            }
            cur = c.parent_key();
        }
    }
    out.into_iter().collect()
}

pub fn is_tree<K: TreeKey>(set: &[K]) -> bool {
    set.iter().all(|k| k.parent_key().is_none_or(|p| set.binary_search(&p).is_ok()))
}

/// Bulk chasing on contractions: grows `set` inside the support of `r` until the
/// contraction mass outside the new set is at most `sqrt(1−α²)‖r‖`.
/// A set that already carries `α‖r‖` is only closed.
pub fn expand<K: TreeKey>(set: &[Rows<K>], r: &HtTensor<K>, alpha: f64) -> Result<Vec<Rows<K>>, ParamError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(ParamError::Alpha(alpha));
    }
    let d = set.len();
    let closed: Vec<Rows<K>> = set.iter().map(|s| Arc::new(tree_closure(s))).collect();
    let total = r.norm();
    if total == 0.0 || r.restrict(&closed).map(|x| x.norm() >= alpha * total).unwrap_or(false) {
        return Ok(closed);
    }
    let mut members: Vec<BTreeSet<K>> = set.iter().map(|s| s.iter().cloned().collect()).collect();
    let mut cands: Vec<(f64, usize, K)> = Vec::new();
    let mut tail2 = 0.0;
    for cv in r.contractions() {
        for &(k, v) in &cv.values {
            if !members[cv.dim].contains(&k) {
                cands.push((v, cv.dim, k));
                tail2 += v * v;
            }
        }
    }
    let goal2 = (1.0 - alpha * alpha) * r.norm().powi(2);
    cands.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let values: Vec<std::collections::HashMap<K, f64>> = (0..d)
        .map(|j| cands.iter().filter(|c| c.1 == j).map(|c| (c.2, c.0)).collect())
        .collect();
    for (_, j, k) in cands {
        if tail2 <= goal2 {
            break;
        }
        let mut cur = Some(k);
        while let Some(c) = cur {
            if !members[j].insert(c) {
                break;
            }
            if let Some(v) = values[j].get(&c) {
                tail2 -= v * v;
            }
            cur = c.parent_key();
        }
    }
    Ok(members.into_iter().map(|m| Arc::new(tree_closure(&m.into_iter().collect::<Vec<_>>()))).collect())
}

/// One row of the convergence log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRecord {
    pub outer: usize,
    pub inner: usize,
    /// `"inner"` or `"coarsen"`.
    pub event: String,
    /// `(1+ω₁)‖r‖`.
    pub residual: f64,
    pub omega0_k: f64,
    pub max_rank: usize,
    pub support: usize,
    pub max_level: u32,
    pub pcg_iterations: usize,
    pub time_s: f64,
}

#[derive(Clone, Debug)]
pub struct AwgmOutput {
    pub u: HtTensor<WaveletIndex>,
    pub log: Vec<ConvergenceRecord>,
    /// Estimates after the safety factor.
    pub spectrum: Spectrum,
    pub raw_spectrum: Spectrum,
    pub omega0: f64,
    pub validated: Validated,
}

/// A separable load vector that can be evaluated on any product set.
pub trait Load<K: Key> {
    fn on(&self, tree: &Arc<DimTree>, sets: &[Rows<K>]) -> Result<HtTensor<K>, HtError>;
}

impl<K: Key> Load<K> for HtTensor<K> {
    fn on(&self, _tree: &Arc<DimTree>, sets: &[Rows<K>]) -> Result<HtTensor<K>, HtError> {
        self.restrict(sets)
    }
}

/// The load `f = 1 ⊗ ⋯ ⊗ 1`.
pub struct OnesLoad(pub Arc<Basis1D>);

impl Load<WaveletIndex> for OnesLoad {
    fn on(&self, tree: &Arc<DimTree>, sets: &[Rows<WaveletIndex>]) -> Result<HtTensor<WaveletIndex>, HtError> {
        let factors = sets.iter().map(|s| (s.to_vec(), s.iter().map(|w| self.0.rhs_one(w)).collect())).collect();
        HtTensor::elementary(tree.clone(), factors)
    }
}

fn max_level(sets: &[Rows<WaveletIndex>]) -> u32 {
    sets.iter().flat_map(|s| s.iter().map(|w| w.level)).max().unwrap_or(0)
}

fn support(sets: &[Rows<WaveletIndex>]) -> usize {
    sets.iter().map(|s| s.len()).sum()
}

fn zone(sets: &[Rows<WaveletIndex>]) -> Vec<Rows<WaveletIndex>> {
    sets.iter()
        .map(|s| {
            let set: IndexSet1D = s.iter().cloned().collect();
            Arc::new(set.expand_security_zone(1).to_vec())
        })
        .collect()
}

/// Preconditioned Galerkin map `R_Λ S⁻¹ A S⁻¹` with truncated intermediate steps.
pub struct Galerkin<'a> {
    pub op: &'a SepOperator<WaveletIndex>,
    pub precond: ExpSumPrecond,
    pub basis: &'a Basis1D,
    pub set: Vec<Rows<WaveletIndex>>,
    /// Raw load on `set`; when present the residual is evaluated as `S⁻¹(f − A S⁻¹x)`.
    pub load: Option<HtTensor<WaveletIndex>>,
    /// Relative truncation accuracy of the intermediate steps.
    pub rel: f64,
    /// Absolute truncation accuracy for residual evaluations.
    pub abs: f64,
    sqrt_t: f64,
}

impl<'a> Galerkin<'a> {
    pub fn new(op: &'a SepOperator<WaveletIndex>, precond: ExpSumPrecond, basis: &'a Basis1D, set: Vec<Rows<WaveletIndex>>, rel: f64) -> Self {
        let t: f64 = set.iter().map(|s| s.iter().map(|w| basis.weight(0, w)).fold(1.0, f64::max)).sum();
        Galerkin { op, precond, basis, set, load: None, rel, abs: 0.0, sqrt_t: t.sqrt() }
    }

    fn inner(&self, x: &HtTensor<WaveletIndex>, tol: f64) -> Result<HtTensor<WaveletIndex>, SolverError> {
        let (y, _) = self.precond.apply_abs(x, self.basis, tol)?;
        Ok(self.op.apply(&y, &self.set)?)
    }
}

impl LinearMap<WaveletIndex> for Galerkin<'_> {
    fn apply(&mut self, x: &HtTensor<WaveletIndex>) -> Result<HtTensor<WaveletIndex>, SolverError> {
        let xn = x.norm();
        let y = self.inner(x, self.rel * xn / self.sqrt_t)?;
        let (z, _) = self.precond.apply_abs(&y, self.basis, self.rel * xn)?;
        Ok(z)
    }

    fn residual(&mut self, f: &HtTensor<WaveletIndex>, x: &HtTensor<WaveletIndex>) -> Result<HtTensor<WaveletIndex>, SolverError> {
        match &self.load {
            Some(load) => {
                let tol = if self.abs > 0.0 { self.abs } else { self.rel * f.norm() };
                let ax = self.inner(x, tol / self.sqrt_t)?;
                let g = load.sub(&ax)?;
                Ok(self.precond.apply_abs(&g, self.basis, tol)?.0)
            }
            None => {
                let ax = self.apply(x)?;
                Ok(f.sub(&ax)?)
            }
        }
    }
}

/// Approximate residual `S⁻¹(δ,η)(f − A S⁻¹(δ,η)u)` on the security zone of `set`.
pub struct Residual {
    pub r: HtTensor<WaveletIndex>,
    pub zone: Vec<Rows<WaveletIndex>>,
    pub eta: f64,
}

/// Evaluates the residual to accuracy `tol`, with `η` chosen so that the
/// scaling error stays below `tol/3` and truncations below `tol/10`.
#[allow(clippy::too_many_arguments)]
pub fn residual<L: Load<WaveletIndex>>(
    op: &SepOperator<WaveletIndex>,
    basis: &Basis1D,
    load: &L,
    u: &HtTensor<WaveletIndex>,
    set: &[Rows<WaveletIndex>],
    delta: f64,
    tol: f64,
    f_norm: f64,
    a_norm: f64,
) -> Result<Residual, AwgmError> {
    let d = u.d();
    let zone = zone(set);
    let v_norm = u.norm();
    let eta = ((1.0 - delta) / 2.0).min(tol * (1.0 - delta) / (3.0 * (f_norm + 2.0 * a_norm * v_norm)));
    let window = ExpSumPrecond::window_for(basis, d, max_level(&zone) + 1);
    let p = ExpSumPrecond::new(delta, eta, window)?;
    let t_max: f64 = zone.iter().map(|s| s.iter().map(|w| basis.weight(0, w)).fold(1.0, f64::max)).sum();
    let budget = 0.05 * tol;
    let (w, _) = p.apply_abs(&u.restrict(set)?, basis, budget / (a_norm * (1.0 + delta) * t_max.sqrt()))?;
    let aw = op.apply(&w, &zone)?;
    let g = load.on(u.tree(), &zone)?.sub(&aw)?;
    let (r, _) = p.apply_abs(&g, basis, budget)?;
    Ok(Residual { r, zone, eta })
}

fn estimate(op: &SepOperator<WaveletIndex>, basis: &Basis1D, tree: &Arc<DimTree>, p: &AwgmParams) -> Result<Spectrum, AwgmError> {
    let d = tree.d();
    let dense_level = (1..=p.spectrum_level)
        .rev()
        .find(|&l| crate::wavelet::index::uniform(l).len().checked_pow(d as u32).is_some_and(|n| n <= 4_000_000));
    if let Some(level) = dense_level {
        let set = crate::wavelet::index::uniform(level).to_vec();
        if let Some(blocks) = op.kronecker_blocks(&set) {
            let precond = ExpSumPrecond::with_default_eta(p.delta, ExpSumPrecond::window_for(basis, d, level))?;
            let (lambda_min, lambda_max) = kronecker_spectrum(&precond, basis, &blocks, &set, 2 * p.power_steps)?;
            return Ok(Spectrum { lambda_min, lambda_max });
        }
    }
    let set: Rows<WaveletIndex> = Arc::new(crate::wavelet::index::uniform(p.spectrum_level).to_vec());
    let precond = ExpSumPrecond::with_default_eta(p.delta, ExpSumPrecond::window_for(basis, d, p.spectrum_level))?;
    if let Some(blocks) = op.kronecker_blocks(&set) {
        let (lambda_min, lambda_max) = kronecker_sum_bounds(&precond, basis, &blocks, &set);
        return Ok(Spectrum { lambda_min, lambda_max });
    }
    let sets = vec![set.clone(); d];
    let mut map = Galerkin::new(op, precond, basis, sets.clone(), 1e-3);
    let start = HtTensor::elementary(tree.clone(), vec![(set.to_vec(), vec![1.0; set.len()]); d])?;
    Ok(estimate_spectrum(&mut map, &start, p.power_steps, 1e-2)?)
}

/// `‖S⁻¹(δ) f‖` on a uniform set.
fn load_norm<L: Load<WaveletIndex>>(basis: &Basis1D, load: &L, tree: &Arc<DimTree>, p: &AwgmParams) -> Result<f64, AwgmError> {
    let d = tree.d();
    let set: Rows<WaveletIndex> = Arc::new(crate::wavelet::index::uniform(p.rhs_level).to_vec());
    let f = load.on(tree, &vec![set; d])?;
    let precond = ExpSumPrecond::with_default_eta(p.delta, ExpSumPrecond::window_for(basis, d, p.rhs_level))?;
    Ok(precond.apply(&f, basis, 1e-8)?.norm())
}

fn check_trees(sets: &[Rows<WaveletIndex>]) -> Result<(), AwgmError> {
    match sets.iter().position(|s| !is_tree(s)) {
        Some(j) => Err(AwgmError::NotTree(j)),
        None => Ok(()),
    }
}

/// Runs the adaptive solver for `A u = f` and returns `u` in preconditioned
/// coordinates (wavelet coefficients are `S⁻¹(δ) u`).
pub fn ht_awgm<L: Load<WaveletIndex>>(
    op: &SepOperator<WaveletIndex>,
    load: &L,
    basis: &Basis1D,
    p: &AwgmParams,
) -> Result<AwgmOutput, AwgmError> {
    ht_awgm_with(op, load, basis, p, &mut |_: &ConvergenceRecord| {})
}

/// Constants fixed before the first iteration.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Setup {
    pub spectrum: Spectrum,
    pub raw_spectrum: Spectrum,
    pub omega0: f64,
    pub validated: Validated,
}

/// Receives the setup and every log record as soon as it exists.
pub trait Observer {
    fn setup(&mut self, _s: &Setup) {}
    fn record(&mut self, r: &ConvergenceRecord);
}

impl<F: FnMut(&ConvergenceRecord)> Observer for F {
    fn record(&mut self, r: &ConvergenceRecord) {
        self(r)
    }
}

/// As [`ht_awgm`], reporting progress to `obs`.
pub fn ht_awgm_with<L: Load<WaveletIndex>>(
    op: &SepOperator<WaveletIndex>,
    load: &L,
    basis: &Basis1D,
    p: &AwgmParams,
    obs: &mut dyn Observer,
) -> Result<AwgmOutput, AwgmError> {
    let start = Instant::now();
    let d = op.d();
    let tree = Arc::new(DimTree::balanced(d)?);
    let raw = estimate(op, basis, &tree, p)?;
    let spectrum = raw.widened(p.safety);
    let kappa = spectrum.kappa();
    let f_norm = load_norm(basis, load, &tree, p)?;
    let omega0 = p.omega0.unwrap_or(1.1 * f_norm);
    let validated = validate_params(p, d, kappa, omega0)?;
    obs.setup(&Setup { spectrum, raw_spectrum: raw, omega0, validated });
    let m_cap = p.max_inner.unwrap_or(validated.m_star);
    let omega2 = validated.omega2;
    let (lmin, lmax) = (spectrum.lambda_min, spectrum.lambda_max);
    let roots: Rows<WaveletIndex> = Arc::new(IndexSet1D::roots().to_vec());
    let initial = vec![roots; d];
    let mut set = initial.clone();
    let mut u = HtTensor::zeros(tree.clone(), set.clone())?;
    let mut log = Vec::new();
    let out = |u: HtTensor<WaveletIndex>, log: Vec<ConvergenceRecord>| AwgmOutput { u, log, spectrum, raw_spectrum: raw, omega0, validated };
    if omega0 == 0.0 {
        return Ok(out(u, log));
    }
    let mut r_norm = omega0;
    let mut omega0_k = omega0;
    let mut total = 0usize;
    let bound = validated.k_star.saturating_mul(validated.m_star).max(1);
    let strategy = TruncStrategy::adaptive(p.c_ad);
    let pcg_eta = p.delta / 10.0;
    for k in 0..p.max_outer {
        for m in 0..=m_cap {
            total += 1;
            if total > bound {
                return Err(AwgmError::IterationBound { iterations: total, bound });
            }
            let window = ExpSumPrecond::window_for(basis, d, max_level(&set));
            let precond = ExpSumPrecond::new(p.delta, pcg_eta, window)?;
            let tol = omega2 * r_norm;
            let mut map = Galerkin::new(op, precond.clone(), basis, set.clone(), 0.1 * omega2);
            let raw_f = load.on(&tree, &set)?;
            let (f_delta, _) = precond.apply_abs(&raw_f, basis, 0.05 * tol)?;
            map.load = Some(raw_f);
            map.abs = 0.05 * tol;
            let opts = PcgOptions::new(tol, p.pcg_max_iter);
            let (x, stats) = truncated_pcg(&mut map, &f_delta, &u, &set, &strategy, opts)?;
            u = x;
            let res = residual(op, basis, load, &u, &set, p.delta, p.omega1 * r_norm, f_norm, lmax)?;
            r_norm = res.r.norm();
            let shown = (1.0 + p.omega1) * r_norm;
            log.push(ConvergenceRecord {
                outer: k,
                inner: m,
                event: "inner".into(),
                residual: shown,
                omega0_k,
                max_rank: u.max_rank(),
                support: support(&set),
                max_level: max_level(&set),
                pcg_iterations: stats.iterations,
                time_s: start.elapsed().as_secs_f64(),
            });
            obs.record(log.last().unwrap());
            if shown <= p.eps {
                return Ok(out(u, log));
            }
            if shown <= p.omega3 * omega0_k || m == m_cap {
                let (t, _) = u.truncate(p.omega4 * omega0_k / lmin)?;
                let (c, _) = t.coarsen(p.omega5 * omega0_k / lmin)?;
                set = (0..d)
                    .map(|j| {
                        let mut s: Vec<WaveletIndex> = c.rows(j).iter().chain(initial[j].iter()).cloned().collect();
                        s.sort();
                        s.dedup();
                        Arc::new(tree_closure(&s))
                    })
                    .collect();
                check_trees(&set)?;
                u = c.restrict(&set)?;
                let res = residual(op, basis, load, &u, &set, p.delta, p.omega1 * r_norm, f_norm, lmax)?;
                r_norm = res.r.norm();
                omega0_k *= p.omega_sum();
                log.push(ConvergenceRecord {
                    outer: k,
                    inner: m,
                    event: "coarsen".into(),
                    residual: (1.0 + p.omega1) * r_norm,
                    omega0_k,
                    max_rank: u.max_rank(),
                    support: support(&set),
                    max_level: max_level(&set),
                    pcg_iterations: 0,
                    time_s: start.elapsed().as_secs_f64(),
                });
                obs.record(log.last().unwrap());
                break;
            }
            let grown = expand(&set, &res.r, p.alpha)?;
            check_trees(&grown)?;
            debug_assert!(grown.iter().zip(&set).all(|(g, s)| s.iter().all(|w| g.binary_search(w).is_ok())));
            set = grown;
            u = u.restrict(&set)?;
        }
    }
    let residual = log.last().map(|r| r.residual).unwrap_or(f64::INFINITY);
    Err(AwgmError::MaxOuter { outer: p.max_outer, residual })
}
