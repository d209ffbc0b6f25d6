//! Rank-truncated descent solvers for symmetric positive definite maps on HT tensors.

use crate::ht::{HtError, HtTensor, Key, Rows};
use crate::operator::OperatorError;
use crate::precond::PrecondError;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("⟨d, Ad⟩ = {0} is not positive; the operator is not SPD on this set")]
    NotPositive(f64),
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("invalid truncation strategy: {0}")]
    Strategy(String),
    #[error(transparent)]
    Tensor(#[from] HtError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Precond(#[from] PrecondError),
}

/// A linear map on tensors supported on a fixed product set.
pub trait LinearMap<K: Key> {
    fn apply(&mut self, x: &HtTensor<K>) -> Result<HtTensor<K>, SolverError>;

    /// `f − A x`; maps that can evaluate this more cheaply than `apply` override it.
    fn residual(&mut self, f: &HtTensor<K>, x: &HtTensor<K>) -> Result<HtTensor<K>, SolverError> {
        let ax = self.apply(x)?;
        Ok(f.sub(&ax)?)
    }
}

/// Adapter turning a closure into a [`LinearMap`].
pub struct FnMap<F>(pub F);

impl<K: Key, F: FnMut(&HtTensor<K>) -> Result<HtTensor<K>, SolverError>> LinearMap<K> for FnMap<F> {
    fn apply(&mut self, x: &HtTensor<K>) -> Result<HtTensor<K>, SolverError> {
        (self.0)(x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum TruncMode {
    /// No approximation; updates are only recompressed to the sizes of their matricisations.
    Exact,
    /// `‖ε₂‖ ≤ θμ/λ_max · ‖r‖`.
    WorstCase { lambda_min: f64, lambda_max: f64, mu: f64 },
    /// `‖ε₂‖ ≤ c·α‖d‖`.
    Adaptive { c_ad: f64 },
}

/// Truncation rules for the iterate (ε₂) and the search direction (ε₁).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TruncStrategy {
    pub mode: TruncMode,
    pub delta1: f64,
    pub delta2: f64,
}

/// Direction-truncation parameters `(δ₁, δ₂)`.
///
/// The closed form `(1/τ² − (1+κ²))·2/5` with `τ = 1/(2√(1+κ²))` exceeds 2 for
/// every κ and would make the angle bound `(1−δ₁/2)τ` negative, so it is capped at 1.
pub fn default_deltas(kappa: f64) -> (f64, f64) {
    let tau = default_tau(kappa);
    let v = ((1.0 / (tau * tau) - (1.0 + kappa * kappa)) * 0.4).min(1.0);
    (v, v)
}

pub fn default_tau(kappa: f64) -> f64 {
    0.5 / (1.0 + kappa * kappa).sqrt()
}

impl TruncStrategy {
    pub fn exact() -> Self {
        TruncStrategy { mode: TruncMode::Exact, delta1: 0.0, delta2: 0.0 }
    }

    pub fn adaptive(c_ad: f64) -> Self {
        let (d1, d2) = default_deltas(1.0);
        TruncStrategy { mode: TruncMode::Adaptive { c_ad }, delta1: d1, delta2: d2 }
    }

    /// Worst-case rule with `μ` halfway inside its admissible range.
    pub fn worst_case(lambda_min: f64, lambda_max: f64) -> Self {
        let kappa = lambda_max / lambda_min;
        let (d1, d2) = default_deltas(kappa);
        let mut s = TruncStrategy { mode: TruncMode::WorstCase { lambda_min, lambda_max, mu: 0.0 }, delta1: d1, delta2: d2 };
        let theta = s.theta().unwrap_or(1.0);
        s.mode = TruncMode::WorstCase { lambda_min, lambda_max, mu: 0.5 * (1.0 / theta - 1.0) };
        s
    }

    pub fn with_deltas(mut self, delta1: f64, delta2: f64) -> Self {
        self.delta1 = delta1;
        self.delta2 = delta2;
        self
    }

    pub fn with_mu(mut self, mu: f64) -> Self {
        if let TruncMode::WorstCase { lambda_min, lambda_max, .. } = self.mode {
            self.mode = TruncMode::WorstCase { lambda_min, lambda_max, mu };
        }
        self
    }

    pub fn kappa(&self) -> Option<f64> {
        match self.mode {
            TruncMode::WorstCase { lambda_min, lambda_max, .. } => Some(lambda_max / lambda_min),
            _ => None,
        }
    }

    /// Guaranteed angle `γ = (1 − δ₁/2)τ`.
    pub fn gamma(&self, kappa: f64) -> f64 {
        (1.0 - self.delta1 / 2.0) * default_tau(kappa)
    }

    /// `θ = √(1 − γ²/(2κ))` for the worst-case rule.
    pub fn theta(&self) -> Option<f64> {
        let k = self.kappa()?;
        let g = self.gamma(k);
        Some((1.0 - g * g / (2.0 * k)).sqrt())
    }

    /// Error reduction factor `ϱ = θ(1+μ)`.
    pub fn rho(&self) -> Option<f64> {
        match self.mode {
            TruncMode::WorstCase { mu, .. } => Some(self.theta()? * (1.0 + mu)),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        match self.mode {
            TruncMode::Exact => Ok(()),
            TruncMode::Adaptive { c_ad } => {
                if c_ad > 0.0 && c_ad < 1.0 {
                    Ok(())
                } else {
                    Err(SolverError::Strategy(format!("c_ad = {c_ad} not in (0,1)")))
                }
            }
            TruncMode::WorstCase { lambda_min, lambda_max, mu } => {
                if !(lambda_min > 0.0 && lambda_max >= lambda_min) {
                    return Err(SolverError::Strategy(format!("bad spectral bounds [{lambda_min}, {lambda_max}]")));
                }
                let kappa = lambda_max / lambda_min;
                let tau = default_tau(kappa);
                if !(self.delta1 > 0.0 && self.delta2 > 0.0) {
                    return Err(SolverError::Strategy("δ₁, δ₂ must be positive".into()));
                }
                if 1.5 * self.delta1 + self.delta2 > 1.0 / (tau * tau) - (1.0 + kappa * kappa) {
                    return Err(SolverError::Strategy("3/2·δ₁ + δ₂ exceeds 1/τ² − (1+κ²)".into()));
                }
                if self.gamma(kappa) <= 0.0 {
                    return Err(SolverError::Strategy("descent angle γ is not positive".into()));
                }
                let theta = self.theta().unwrap();
                if !(mu > 0.0 && mu < 1.0 / theta - 1.0) {
                    return Err(SolverError::Strategy(format!("μ = {mu} violates μ < 1/θ − 1 = {}", 1.0 / theta - 1.0)));
                }
                Ok(())
            }
        }
    }

    fn x_tol(&self, r_norm: f64, alpha: f64, d_norm: f64) -> f64 {
        match self.mode {
            TruncMode::Exact => 0.0,
            TruncMode::Adaptive { c_ad } => c_ad * alpha.abs() * d_norm,
            TruncMode::WorstCase { lambda_max, mu, .. } => self.theta().unwrap() * mu / lambda_max * r_norm,
        }
    }

    /// `min{δ₁/2, δ₂‖r‖/(2|β|‖d_prev‖)}·‖r‖`.
    fn d_tol(&self, r_norm: f64, prev: Option<(f64, f64)>) -> f64 {
        if let TruncMode::Exact = self.mode {
            return 0.0;
        }
        let mut f = self.delta1 / 2.0;
        if let Some((beta, dn)) = prev {
            if beta != 0.0 && dn > 0.0 {
                f = f.min(self.delta2 * r_norm / (2.0 * beta.abs() * dn));
            }
        }
        f * r_norm
    }
}

/// Which update a perturbation hook is called for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Update {
    Direction,
    Iterate,
}

/// Replaces the truncation of an update: receives the untruncated tensor and the
/// admissible error and returns the tensor to use instead.
pub type Hook<'a, K> = &'a mut dyn FnMut(Update, usize, &HtTensor<K>, f64) -> Result<HtTensor<K>, SolverError>;

pub struct PcgOptions<'a, K: Key> {
    pub tol: f64,
    pub max_iter: usize,
    /// Keep every iterate in the statistics.
    pub keep_iterates: bool,
    /// Measure ‖ε₁‖, ‖ε₂‖ exactly instead of using truncation bounds.
    pub measure: bool,
    /// Called in place of each truncation.
    pub hook: Option<Hook<'a, K>>,
}

impl<K: Key> PcgOptions<'_, K> {
    pub fn new(tol: f64, max_iter: usize) -> Self {
        PcgOptions { tol, max_iter, keep_iterates: false, measure: false, hook: None }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PcgStats<K: Key> {
    pub iterations: usize,
    pub converged: bool,
    /// `‖r^{(k)}‖` for `k = 0, …, iterations`.
    pub residual_norms: Vec<f64>,
    pub max_ranks: Vec<usize>,
    pub x_tols: Vec<f64>,
    pub d_tols: Vec<f64>,
    /// `⟨r,d⟩/(‖r‖‖d‖)` for every direction used.
    pub angles: Vec<f64>,
    /// `‖r‖/‖d‖` for every direction used.
    pub r_over_d: Vec<f64>,
    /// `⟨d^{(k+1)}, A d^{(k)}⟩` (zero in exact arithmetic without truncation).
    pub conjugacy: Vec<f64>,
    pub eps1: Vec<f64>,
    pub eps2: Vec<f64>,
    #[serde(skip)]
    pub iterates: Vec<HtTensor<K>>,
}

impl<K: Key> Default for PcgStats<K> {
    fn default() -> Self {
        PcgStats {
            iterations: 0,
            converged: false,
            residual_norms: Vec::new(),
            max_ranks: Vec::new(),
            x_tols: Vec::new(),
            d_tols: Vec::new(),
            angles: Vec::new(),
            r_over_d: Vec::new(),
            conjugacy: Vec::new(),
            eps1: Vec::new(),
            eps2: Vec::new(),
            iterates: Vec::new(),
        }
    }
}

fn finite(x: f64, what: &'static str) -> Result<f64, SolverError> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(SolverError::NonFinite(what))
    }
}

fn truncate_step<K: Key>(
    v: HtTensor<K>,
    tol: f64,
    which: Update,
    k: usize,
    opts: &mut PcgOptions<'_, K>,
) -> Result<(HtTensor<K>, f64), SolverError> {
    let (t, bound) = match opts.hook.as_mut() {
        Some(h) => (h(which, k, &v, tol)?, tol),
        None if tol > 0.0 => {
            let (t, rep) = v.truncate(tol)?;
            (t, rep.error_bound)
        }
        None => (v.truncate(0.0)?.0, 0.0),
    };
    let err = if opts.measure { t.sub(&v)?.norm() } else { bound };
    Ok((t, err))
}

/// `⟨r, d⟩ ≥ γ‖r‖‖d‖`.
pub fn check_descent_angle<K: Key>(r: &HtTensor<K>, d: &HtTensor<K>, gamma: f64) -> Result<bool, SolverError> {
    let rd = r.inner(d)?;
    let rhs = gamma * r.norm() * d.norm();
    Ok(rd >= rhs && !(gamma > 0.0 && rd <= 0.0))
}

/// Truncated preconditioned CG: the residual is recomputed at every step,
/// iterates and directions are truncated according to `strategy`.
pub fn truncated_pcg<K: Key, A: LinearMap<K> + ?Sized>(
    a: &mut A,
    f: &HtTensor<K>,
    u0: &HtTensor<K>,
    set: &[Rows<K>],
    strategy: &TruncStrategy,
    mut opts: PcgOptions<'_, K>,
) -> Result<(HtTensor<K>, PcgStats<K>), SolverError> {
    strategy.validate()?;
    let f = f.restrict(set)?;
    let mut x = u0.restrict(set)?;
    let mut stats = PcgStats::default();
    let mut r = a.residual(&f, &x)?;
    let mut rn = finite(r.norm(), "residual")?;
    stats.residual_norms.push(rn);
    stats.max_ranks.push(x.max_rank());
    if opts.keep_iterates {
        stats.iterates.push(x.clone());
    }
    if rn <= opts.tol {
        stats.converged = true;
        return Ok((x, stats));
    }
    let dt = strategy.d_tol(rn, None);
    let (mut d, e1) = truncate_step(r.clone(), dt, Update::Direction, 0, &mut opts)?;
    stats.d_tols.push(dt);
    stats.eps1.push(e1);
    for k in 0..opts.max_iter {
        let dn = d.norm();
        let rd = r.inner(&d)?;
        stats.angles.push(rd / (rn * dn));
        stats.r_over_d.push(rn / dn);
        let ad = a.apply(&d)?;
        let dad = finite(d.inner(&ad)?, "⟨d,Ad⟩")?;
        if dad <= 0.0 {
            return Err(SolverError::NotPositive(dad));
        }
        let alpha = finite(rd / dad, "step size")?;
        let xt = strategy.x_tol(rn, alpha, dn);
        let (nx, e2) = truncate_step(HtTensor::lin_comb(&[(1.0, &x), (alpha, &d)])?, xt, Update::Iterate, k + 1, &mut opts)?;
        x = nx;
        stats.x_tols.push(xt);
        stats.eps2.push(e2);
        r = a.residual(&f, &x)?;
        rn = finite(r.norm(), "residual")?;
        stats.iterations = k + 1;
        stats.residual_norms.push(rn);
        stats.max_ranks.push(x.max_rank());
        if opts.keep_iterates {
            stats.iterates.push(x.clone());
        }
        if rn <= opts.tol {
            stats.converged = true;
            break;
        }
        let beta = -r.inner(&ad)? / dad;
        let dt = strategy.d_tol(rn, Some((beta, dn)));
        let (nd, e1) = truncate_step(HtTensor::lin_comb(&[(1.0, &r), (beta, &d)])?, dt, Update::Direction, k + 1, &mut opts)?;
        stats.conjugacy.push(nd.inner(&ad)?);
        d = nd;
        stats.d_tols.push(dt);
        stats.eps1.push(e1);
    }
    Ok((x, stats))
}

/// Steepest descent with exact line search and the same truncation hooks.
pub fn truncated_gradient_descent<K: Key, A: LinearMap<K> + ?Sized>(
    a: &mut A,
    f: &HtTensor<K>,
    u0: &HtTensor<K>,
    set: &[Rows<K>],
    strategy: &TruncStrategy,
    mut opts: PcgOptions<'_, K>,
) -> Result<(HtTensor<K>, PcgStats<K>), SolverError> {
    strategy.validate()?;
    let f = f.restrict(set)?;
    let mut x = u0.restrict(set)?;
    let mut stats = PcgStats::default();
    let mut r = a.residual(&f, &x)?;
    let mut rn = finite(r.norm(), "residual")?;
    stats.residual_norms.push(rn);
    stats.max_ranks.push(x.max_rank());
    if opts.keep_iterates {
        stats.iterates.push(x.clone());
    }
    for k in 0..opts.max_iter {
        if rn <= opts.tol {
            stats.converged = true;
            break;
        }
        let dt = strategy.d_tol(rn, None);
        let (d, e1) = truncate_step(r.clone(), dt, Update::Direction, k, &mut opts)?;
        stats.d_tols.push(dt);
        stats.eps1.push(e1);
        let dn = d.norm();
        let rd = r.inner(&d)?;
        stats.angles.push(rd / (rn * dn));
        stats.r_over_d.push(rn / dn);
        let ad = a.apply(&d)?;
        let dad = finite(d.inner(&ad)?, "⟨d,Ad⟩")?;
        if dad <= 0.0 {
            return Err(SolverError::NotPositive(dad));
        }
        let alpha = rd / dad;
        let xt = strategy.x_tol(rn, alpha, dn);
        let (nx, e2) = truncate_step(HtTensor::lin_comb(&[(1.0, &x), (alpha, &d)])?, xt, Update::Iterate, k + 1, &mut opts)?;
        x = nx;
        stats.x_tols.push(xt);
        stats.eps2.push(e2);
        r = a.residual(&f, &x)?;
        rn = finite(r.norm(), "residual")?;
        stats.iterations = k + 1;
        stats.residual_norms.push(rn);
        stats.max_ranks.push(x.max_rank());
        if opts.keep_iterates {
            stats.iterates.push(x.clone());
        }
    }
    if rn <= opts.tol {
        stats.converged = true;
    }
    Ok((x, stats))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Spectrum {
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl Spectrum {
    pub fn kappa(&self) -> f64 {
        self.lambda_max / self.lambda_min
    }

    /// Widened by `factor` on both ends.
    pub fn widened(&self, factor: f64) -> Spectrum {
        Spectrum { lambda_min: self.lambda_min / factor, lambda_max: self.lambda_max * factor }
    }
}

/// Power iteration for `λ_max`, then on `λ_max·I − A` for `λ_min`.
/// Iterates are truncated to `rel_tol` of their norm to keep ranks bounded.
pub fn estimate_spectrum<K: Key, A: LinearMap<K> + ?Sized>(a: &mut A, start: &HtTensor<K>, steps: usize, rel_tol: f64) -> Result<Spectrum, SolverError> {
    let normalise = |v: &HtTensor<K>| -> Result<HtTensor<K>, SolverError> {
        let n = v.norm();
        if !(n > 0.0) {
            return Err(SolverError::NonFinite("power iteration vector"));
        }
        let (t, _) = v.truncate(rel_tol * n)?;
        Ok(t.scale(1.0 / t.norm()))
    };
    let mut x = normalise(start)?;
    let mut lmax: f64 = 0.0;
    for _ in 0..steps {
        let ax = a.apply(&x)?;
        lmax = lmax.max(x.inner(&ax)?);
        x = normalise(&ax)?;
    }
    let shift = lmax;
    let mut y = normalise(start)?;
    let mut mu: f64 = 0.0;
    for _ in 0..steps {
        let ay = a.apply(&y)?;
        let by = HtTensor::lin_comb(&[(shift, &y), (-1.0, &ay)])?;
        mu = mu.max(y.inner(&by)?);
        y = normalise(&by)?;
    }
    let lmin = (shift - mu).max(f64::MIN_POSITIVE);
    Ok(Spectrum { lambda_min: lmin, lambda_max: lmax })
}
