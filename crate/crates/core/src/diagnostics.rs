//! How much is lost by selecting product index sets from contractions?
//!
//! `NE(α, v)` is the smallest `Σ_j #Λ_j` over product sets with
//! `‖R_Λ v‖ ≥ α‖v‖`; `NQ(α, v)` is the smallest number of largest contraction
//! entries whose complement has mass at most `sqrt(1−α²)‖v‖`. Everything here
//! works on small dense arrays.

use ndarray::{ArrayD, Axis, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Exhaustive search limits for [`ne_exact`].
pub const MAX_ENTRIES: usize = 1_000_000;
pub const MAX_MODE_SUM: usize = 40;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagError {
    #[error("alpha must lie in (0,1), got {0}")]
    Alpha(f64),
    #[error("tensor of shape {shape:?} exceeds the exhaustive search limits")]
    TooLarge { shape: Vec<usize> },
    #[error("tensor must have at least one mode and no empty mode")]
    Shape,
    #[error("unknown structure '{0}', expected random or residual_like")]
    Structure(String),
}

fn check(v: &ArrayD<f64>, alpha: f64) -> Result<(), DiagError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(DiagError::Alpha(alpha));
    }
    if v.ndim() == 0 || v.shape().contains(&0) {
        return Err(DiagError::Shape);
    }
    Ok(())
}

/// Slice norms of `v` along every mode.
pub fn contractions(v: &ArrayD<f64>) -> Vec<Vec<f64>> {
    let sq = v.mapv(|x| x * x);
    (0..v.ndim())
        .map(|j| {
            let mut s = sq.clone();
            for k in (0..v.ndim()).rev().filter(|&k| k != j) {
                s = s.sum_axis(Axis(k));
            }
            s.iter().map(|x| x.sqrt()).collect()
        })
        .collect()
}

/// Minimal `Σ_j #Λ_j` with `‖R_Λ v‖ ≥ α‖v‖`, by exhaustive search.
///
/// All subsets of every mode but the longest are enumerated; for each such
/// choice the best subset of the longest mode is its heaviest slices.
pub fn ne_exact(v: &ArrayD<f64>, alpha: f64) -> Result<usize, DiagError> {
    check(v, alpha)?;
    let shape = v.shape().to_vec();
    if v.len() > MAX_ENTRIES || shape.iter().sum::<usize>() > MAX_MODE_SUM {
        return Err(DiagError::TooLarge { shape });
    }
    let d = shape.len();
    let total: f64 = v.iter().map(|x| x * x).sum();
    if total == 0.0 {
        return Ok(d);
    }
    let goal = alpha * alpha * total * (1.0 - 1e-14);
    let last = (0..d).max_by_key(|&j| (shape[j], j)).unwrap();
    let others: Vec<usize> = (0..d).filter(|&j| j != last).collect();
    let moved = v.view().permuted_axes(IxDyn(&others.iter().cloned().chain([last]).collect::<Vec<_>>()));
    let flat: Vec<f64> = moved.iter().map(|x| x * x).collect();
    let rows: Vec<&[f64]> = flat.chunks(shape[last]).collect();
    let sizes: Vec<usize> = others.iter().map(|&j| shape[j]).collect();
    let subsets: Vec<Vec<u64>> = sizes
        .iter()
        .map(|&n| {
            let mut m: Vec<u64> = (1..(1u64 << n)).collect();
            m.sort_by_key(|m| m.count_ones());
            m
        })
        .collect();
    let mut best = shape.iter().sum::<usize>();
    let mut masks = vec![0u64; sizes.len()];
    let ctx = Search { rows: &rows, sizes: &sizes, subsets: &subsets, n_last: shape[last], goal };
    ctx.run(0, &mut masks, 0, &mut best);
    Ok(best)
}

struct Search<'a> {
    rows: &'a [&'a [f64]],
    sizes: &'a [usize],
    subsets: &'a [Vec<u64>],
    n_last: usize,
    goal: f64,
}

impl Search<'_> {
    fn run(&self, dim: usize, masks: &mut [u64], used: usize, best: &mut usize) {
        let rest = self.sizes.len() - dim;
        if used + rest + 1 >= *best {
            return;
        }
        if rest == 0 {
            let mut e = vec![0.0; self.n_last];
            let mut idx = vec![0usize; self.sizes.len()];
            for row in self.rows {
                if idx.iter().enumerate().all(|(k, &i)| masks[k] >> i & 1 == 1) {
                    e.iter_mut().zip(row.iter()).for_each(|(a, b)| *a += b);
                }
                advance(&mut idx, self.sizes);
            }
            e.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let mut acc = 0.0;
            for (s, x) in e.iter().enumerate() {
                acc += x;
                if acc >= self.goal {
                    *best = (*best).min(used + s + 1);
                    return;
                }
            }
            return;
        }
        for &m in &self.subsets[dim] {
            let c = m.count_ones() as usize;
            if used + c + rest >= *best {
                break;
            }
            masks[dim] = m;
            self.run(dim + 1, masks, used + c, best);
        }
    }
}

/// Row-major multi-index increment (last index fastest).
fn advance(idx: &mut [usize], sizes: &[usize]) {
    for k in (0..idx.len()).rev() {
        idx[k] += 1;
        if idx[k] < sizes[k] {
            return;
        }
        idx[k] = 0;
    }
}

/// Minimal `N` such that keeping the `N` largest contraction entries (over all
/// modes together) leaves a tail of at most `sqrt(1−α²)‖v‖`.
pub fn nq_contraction(v: &ArrayD<f64>, alpha: f64) -> Result<usize, DiagError> {
    check(v, alpha)?;
    Ok(nq_from(contractions(v), alpha))
}

fn nq_from(pis: Vec<Vec<f64>>, alpha: f64) -> usize {
    let d = pis.len() as f64;
    let mut all: Vec<f64> = pis.into_iter().flatten().map(|x| x * x).collect();
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let norm2 = all.iter().sum::<f64>() / d;
    let limit = (1.0 - alpha * alpha) * norm2 * (1.0 + 1e-14);
    // `all` is ascending: dropping the k smallest keeps the N = len − k largest.
    let mut tail = 0.0;
    let mut dropped = 0;
    for x in &all {
        if tail + x > limit {
            break;
        }
        tail += x;
        dropped += 1;
    }
    all.len() - dropped
}

/// `NE` for a diagonal tensor `v[i,…,i] = diag[i]` in `d` modes: a product set
/// keeps exactly the diagonal entries common to all `Λ_j`, so the optimum
/// takes the `k` heaviest indices in every mode.
pub fn ne_diagonal(diag: &[f64], d: usize, alpha: f64) -> Result<usize, DiagError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(DiagError::Alpha(alpha));
    }
    if diag.is_empty() || d == 0 {
        return Err(DiagError::Shape);
    }
    let mut sq: Vec<f64> = diag.iter().map(|x| x * x).collect();
    sq.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let goal = alpha * alpha * sq.iter().sum::<f64>() * (1.0 - 1e-14);
    let mut acc = 0.0;
    for (k, x) in sq.iter().enumerate() {
        acc += x;
        if acc >= goal {
            return Ok(d * (k + 1));
        }
    }
    Ok(d * sq.len())
}

/// `NQ` for a diagonal tensor; every contraction equals `|diag|`.
pub fn nq_diagonal(diag: &[f64], d: usize, alpha: f64) -> Result<usize, DiagError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(DiagError::Alpha(alpha));
    }
    if diag.is_empty() || d == 0 {
        return Err(DiagError::Shape);
    }
    let pi: Vec<f64> = diag.iter().map(|x| x.abs()).collect();
    Ok(nq_from(vec![pi; d], alpha))
}

/// Ratio of arithmetic and geometric mean of the mode sizes.
pub fn c_mean(shape: &[usize]) -> f64 {
    let n = shape.len() as f64;
    let am = shape.iter().map(|&s| s as f64).sum::<f64>() / n;
    let gm = (shape.iter().map(|&s| (s as f64).ln()).sum::<f64>() / n).exp();
    am / gm
}

/// Window `[low, high]` for a `v`-independent constant bounding `NQ/NE`.
pub fn bound_window(d: usize, alpha: f64, c_mean: f64) -> (f64, f64) {
    let d = d as f64;
    let num = c_mean * (d - 1.0 + alpha * alpha) / d;
    (num / alpha.powf(2.0 / d), num / (alpha * alpha))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Structure {
    /// Independent standard normal entries.
    Random,
    /// A smooth, geometrically decaying bulk plus a few large spikes.
    ResidualLike,
}

impl fmt::Display for Structure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Structure::Random => "random",
            Structure::ResidualLike => "residual_like",
        })
    }
}

impl FromStr for Structure {
    type Err = DiagError;
    fn from_str(s: &str) -> Result<Self, DiagError> {
        match s {
            "random" => Ok(Structure::Random),
            "residual_like" => Ok(Structure::ResidualLike),
            _ => Err(DiagError::Structure(s.into())),
        }
    }
}

pub fn sample(shape: &[usize], structure: Structure, rng: &mut impl Rng) -> ArrayD<f64> {
    match structure {
        Structure::Random => ArrayD::from_shape_simple_fn(IxDyn(shape), || rng.sample(StandardNormal)),
        Structure::ResidualLike => {
            let mut v = ArrayD::from_shape_fn(IxDyn(shape), |ix| {
                let decay: f64 = (0..shape.len()).map(|j| 0.5f64.powi(ix[j] as i32)).product();
                let noise: f64 = rng.sample(StandardNormal);
                decay * (1.0 + 0.1 * noise)
            });
            let spikes = (v.len() / 20).max(1);
            for _ in 0..spikes {
                let ix: Vec<usize> = shape.iter().map(|&n| rng.random_range(0..n)).collect();
                v[IxDyn(&ix)] += rng.random_range(0.2..0.6);
            }
            v
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RatioConfig {
    pub dims: Vec<usize>,
    pub sizes: Vec<usize>,
    pub alphas: Vec<f64>,
    pub trials: usize,
    pub structure: Structure,
    pub seed: u64,
}

/// One CSV row of the experiment.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RatioRow {
    pub d: usize,
    pub shape: String,
    pub alpha: f64,
    pub structure: Structure,
    pub trial: usize,
    pub ne: usize,
    pub nq: usize,
    pub ratio: f64,
    pub bound_low: f64,
    pub bound_high: f64,
    pub within_bounds: bool,
}

/// Aggregate over the trials of one `(d, shape, α)` configuration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RatioSummary {
    pub d: usize,
    pub shape: String,
    pub alpha: f64,
    pub trials: usize,
    pub ratio_min: f64,
    pub ratio_mean: f64,
    pub ratio_max: f64,
    pub within: usize,
    pub below_low: usize,
    pub above_high: usize,
    /// Trials with `NQ < NE`; zero unless something is broken.
    pub nq_below_ne: usize,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct RatioReport {
    pub rows: Vec<RatioRow>,
    pub summary: Vec<RatioSummary>,
}

impl RatioReport {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn violations(&self) -> usize {
        self.summary.iter().map(|s| s.nq_below_ne).sum()
    }
}

/// Runs `trials` samples for every `d`, cubic size and `α` in the config.
pub fn ratio_experiment(cfg: &RatioConfig) -> Result<RatioReport, DiagError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = RatioReport::default();
    for &d in &cfg.dims {
        for &n in &cfg.sizes {
            let shape = vec![n; d];
            let label = shape.iter().map(|s| s.to_string()).collect::<Vec<_>>().join("x");
            let cm = c_mean(&shape);
            for &alpha in &cfg.alphas {
                let (low, high) = bound_window(d, alpha, cm);
                let first = report.rows.len();
                for trial in 0..cfg.trials {
                    let v = sample(&shape, cfg.structure, &mut rng);
                    let ne = ne_exact(&v, alpha)?;
                    let nq = nq_contraction(&v, alpha)?;
                    let ratio = nq as f64 / ne as f64;
                    report.rows.push(RatioRow {
                        d,
                        shape: label.clone(),
                        alpha,
                        structure: cfg.structure,
                        trial,
                        ne,
                        nq,
                        ratio,
                        bound_low: low,
                        bound_high: high,
                        within_bounds: ratio >= low && ratio <= high,
                    });
                }
                let rows = &report.rows[first..];
                let ratios: Vec<f64> = rows.iter().map(|r| r.ratio).collect();
                report.summary.push(RatioSummary {
                    d,
                    shape: label.clone(),
                    alpha,
                    trials: rows.len(),
                    ratio_min: ratios.iter().cloned().fold(f64::INFINITY, f64::min),
                    ratio_mean: ratios.iter().sum::<f64>() / ratios.len().max(1) as f64,
                    ratio_max: ratios.iter().cloned().fold(0.0, f64::max),
                    within: rows.iter().filter(|r| r.within_bounds).count(),
                    below_low: rows.iter().filter(|r| r.ratio < r.bound_low).count(),
                    above_high: rows.iter().filter(|r| r.ratio > r.bound_high).count(),
                    nq_below_ne: rows.iter().filter(|r| r.nq < r.ne).count(),
                });
            }
        }
    }
    Ok(report)
}

/// One member of the diagonal family.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiagonalPoint {
    pub t: f64,
    pub n: usize,
    pub ne: usize,
    pub nq: usize,
    pub ratio: f64,
}

/// Diagonal tensors `diag(1, t, …, t)` with `n = 1 + ⌈mass/t²⌉` entries, so the
/// tail mass stays fixed while the size grows as `t → 0`.
pub fn diagonal_family(d: usize, alpha: f64, ts: &[f64], mass: f64) -> Result<Vec<DiagonalPoint>, DiagError> {
    ts.iter()
        .map(|&t| {
            let n = 1 + (mass / (t * t)).ceil() as usize;
            let diag: Vec<f64> = std::iter::once(1.0).chain(std::iter::repeat_n(t, n - 1)).collect();
            let ne = ne_diagonal(&diag, d, alpha)?;
            let nq = nq_diagonal(&diag, d, alpha)?;
            Ok(DiagonalPoint { t, n, ne, nq, ratio: nq as f64 / ne as f64 })
        })
        .collect()
}
