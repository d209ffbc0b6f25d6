//! Separable operators `Σ_terms ⊗_j A_j` acting on hierarchical Tucker tensors.

use crate::ht::tensor::{matched, reindex};
use crate::ht::{HtError, HtTensor, Key, Rows, Transfer};
use crate::wavelet::{Basis1D, WaveletIndex};
use nalgebra::DMatrix;
use nalgebra_sparse::{CooMatrix, CsrMatrix};
use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::fmt::Debug;
use std::hash::{Hash, Hasher};
use std::sync::{Arc, Mutex};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OperatorError {
    #[error("operator acts on {op} dimensions, tensor has {tensor}")]
    DimensionMismatch { op: usize, tensor: usize },
    #[error("row {row} of dimension {dim} lies outside the factor's domain")]
    OutsideDomain { dim: usize, row: String },
    #[error(transparent)]
    Tensor(#[from] HtError),
}

/// A one-dimensional matrix indexed by row labels.
pub trait Matrix1D<K: Key>: Send + Sync + Debug {
    /// The block with the given (sorted) row and column labels.
    fn block(&self, rows: &[K], cols: &[K]) -> Arc<CsrMatrix<f64>>;

    fn contains(&self, _k: &K) -> bool {
        true
    }
}

#[derive(Clone, Debug)]
pub enum Factor<K: Key> {
    Identity,
    Matrix(Arc<dyn Matrix1D<K>>),
}

impl<K: Key> Factor<K> {
    pub fn is_identity(&self) -> bool {
        matches!(self, Factor::Identity)
    }
}

fn fingerprint<K: Key>(k: &[K]) -> u64 {
    let mut h = DefaultHasher::new();
    k.hash(&mut h);
    h.finish()
}

type BlockCache = Mutex<HashMap<(u64, u64), Arc<CsrMatrix<f64>>>>;

const CACHE_LIMIT: usize = 64;

fn cached(cache: &BlockCache, key: (u64, u64), build: impl FnOnce() -> CsrMatrix<f64>) -> Arc<CsrMatrix<f64>> {
    if let Some(m) = cache.lock().unwrap().get(&key) {
        return m.clone();
    }
    let m = Arc::new(build());
    let mut c = cache.lock().unwrap();
    if c.len() >= CACHE_LIMIT {
        c.clear();
    }
    c.insert(key, m.clone());
    m
}

/// The 1D stiffness matrix of a wavelet basis; blocks are assembled on demand and memoised.
#[derive(Debug)]
pub struct Stiffness {
    basis: Arc<Basis1D>,
    cache: BlockCache,
}

impl Stiffness {
    pub fn new(basis: Arc<Basis1D>) -> Self {
        Stiffness { basis, cache: Mutex::new(HashMap::new()) }
    }
}

impl Matrix1D<WaveletIndex> for Stiffness {
    fn block(&self, rows: &[WaveletIndex], cols: &[WaveletIndex]) -> Arc<CsrMatrix<f64>> {
        cached(&self.cache, (fingerprint(rows), fingerprint(cols)), || self.basis.stiffness_matrix(rows, cols))
    }

    fn contains(&self, k: &WaveletIndex) -> bool {
        k.is_valid()
    }
}

/// An explicit sparse matrix on a finite label set.
#[derive(Debug)]
pub struct Explicit<K: Key> {
    labels: Vec<K>,
    matrix: CsrMatrix<f64>,
    cache: BlockCache,
}

impl<K: Key> Explicit<K> {
    /// `labels` must be sorted and match the matrix dimensions.
    pub fn new(labels: Vec<K>, matrix: CsrMatrix<f64>) -> Result<Self, HtError> {
        if !labels.windows(2).all(|w| w[0] < w[1]) || matrix.nrows() != labels.len() || matrix.ncols() != labels.len() {
            return Err(HtError::Shape("explicit factor labels do not match the matrix".into()));
        }
        Ok(Explicit { labels, matrix, cache: Mutex::new(HashMap::new()) })
    }

    pub fn from_dense(labels: Vec<K>, m: &DMatrix<f64>) -> Result<Self, HtError> {
        let mut coo = CooMatrix::new(m.nrows(), m.ncols());
        for c in 0..m.ncols() {
            for r in 0..m.nrows() {
                if m[(r, c)] != 0.0 {
                    coo.push(r, c, m[(r, c)]);
                }
            }
        }
        Self::new(labels, CsrMatrix::from(&coo))
    }

    pub fn labels(&self) -> &[K] {
        &self.labels
    }

    pub fn matrix(&self) -> &CsrMatrix<f64> {
        &self.matrix
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        self.matrix.triplet_iter().all(|(i, j, v)| (self.matrix.get_entry(j, i).map_or(0.0, |e| e.into_value()) - v).abs() <= tol)
    }
}

impl<K: Key> Matrix1D<K> for Explicit<K> {
    fn block(&self, rows: &[K], cols: &[K]) -> Arc<CsrMatrix<f64>> {
        cached(&self.cache, (fingerprint(rows), fingerprint(cols)), || {
            let rpos = matched(&self.labels, rows);
            let cpos: HashMap<usize, usize> = matched(&self.labels, cols).into_iter().collect();
            let mut coo = CooMatrix::new(rows.len(), cols.len());
            for (src, dst) in rpos {
                let row = self.matrix.row(src);
                for (&c, &v) in row.col_indices().iter().zip(row.values()) {
                    if let Some(&cc) = cpos.get(&c) {
                        coo.push(dst, cc, v);
                    }
                }
            }
            CsrMatrix::from(&coo)
        })
    }

    fn contains(&self, k: &K) -> bool {
        self.labels.binary_search(k).is_ok()
    }
}

/// `Σ_t ⊗_j F_{t,j}` with identity factors kept symbolic.
#[derive(Clone, Debug)]
pub struct SepOperator<K: Key> {
    d: usize,
    terms: Vec<Vec<Factor<K>>>,
}

impl<K: Key> SepOperator<K> {
    pub fn new(d: usize, terms: Vec<Vec<Factor<K>>>) -> Result<Self, HtError> {
        if d == 0 {
            return Err(HtError::ZeroDimension);
        }
        if terms.iter().any(|t| t.len() != d) {
            return Err(HtError::Shape("every term needs one factor per dimension".into()));
        }
        Ok(SepOperator { d, terms })
    }

    /// `Σ_j I ⊗ ⋯ ⊗ M_j ⊗ ⋯ ⊗ I`.
    pub fn kronecker_sum(factors: Vec<Arc<dyn Matrix1D<K>>>) -> Result<Self, HtError> {
        let d = factors.len();
        let terms = factors
            .into_iter()
            .enumerate()
            .map(|(j, m)| (0..d).map(|i| if i == j { Factor::Matrix(m.clone()) } else { Factor::Identity }).collect())
            .collect();
        Self::new(d, terms)
    }

    pub fn identity(d: usize) -> Result<Self, HtError> {
        Self::new(d, vec![vec![Factor::Identity; d]])
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Number of Kronecker terms.
    pub fn rank(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> &[Vec<Factor<K>>] {
        &self.terms
    }

    /// For a Kronecker sum, the non-identity factor of each dimension.
    fn kronecker_factors(&self) -> Option<Vec<Arc<dyn Matrix1D<K>>>> {
        if self.terms.len() != self.d || self.d < 2 {
            return None;
        }
        let mut out: Vec<Option<Arc<dyn Matrix1D<K>>>> = vec![None; self.d];
        for t in &self.terms {
            let mut found = None;
            for (j, f) in t.iter().enumerate() {
                if let Factor::Matrix(m) = f {
                    if found.is_some() {
                        return None;
                    }
                    found = Some((j, m.clone()));
                }
            }
            let (j, m) = found?;
            if out[j].is_some() {
                return None;
            }
            out[j] = Some(m);
        }
        out.into_iter().collect()
    }

    /// For a Kronecker sum, the factor blocks on `set` in every dimension.
    pub fn kronecker_blocks(&self, set: &[K]) -> Option<Vec<Arc<CsrMatrix<f64>>>> {
        Some(self.kronecker_factors()?.iter().map(|m| m.block(set, set)).collect())
    }

    fn check(&self, u: &HtTensor<K>) -> Result<(), OperatorError> {
        if u.d() != self.d {
            return Err(OperatorError::DimensionMismatch { op: self.d, tensor: u.d() });
        }
        for t in &self.terms {
            for (j, f) in t.iter().enumerate() {
                if let Factor::Matrix(m) = f {
                    if let Some(k) = u.rows(j).iter().find(|k| !m.contains(k)) {
                        return Err(OperatorError::OutsideDomain { dim: j, row: format!("{k:?}") });
                    }
                }
            }
        }
        Ok(())
    }

    fn leaf_image(f: &Factor<K>, frame: &DMatrix<f64>, from: &[K], to: &[K]) -> DMatrix<f64> {
        match f {
            Factor::Identity => reindex(frame, from, to),
            Factor::Matrix(m) => {
                if frame.ncols() == 0 || to.is_empty() || from.is_empty() {
                    return DMatrix::zeros(to.len(), frame.ncols());
                }
                let b = m.block(to, from);
                b.as_ref() * frame
            }
        }
    }

    /// `R_{Λ_out} A u`, exact; node ranks grow by at most the number of terms.
    pub fn apply(&self, u: &HtTensor<K>, out: &[Rows<K>]) -> Result<HtTensor<K>, OperatorError> {
        self.check(u)?;
        if out.len() != self.d {
            return Err(OperatorError::DimensionMismatch { op: self.d, tensor: out.len() });
        }
        if let Some(fs) = self.kronecker_factors() {
            return Ok(kronecker_sum_apply(&fs, u, out)?);
        }
        let mut parts = Vec::with_capacity(self.terms.len());
        for t in &self.terms {
            let mut v = u.restrict(out)?;
            for (j, f) in t.iter().enumerate() {
                if !f.is_identity() {
                    let img = Self::leaf_image(f, u.frame(j), u.rows(j), &out[j]);
                    v = v.with_leaf(j, out[j].clone(), img)?;
                }
            }
            parts.push(v);
        }
        if parts.is_empty() {
            return Ok(HtTensor::zeros(u.tree().clone(), out.to_vec())?);
        }
        let terms: Vec<(f64, &HtTensor<K>)> = parts.iter().map(|p| (1.0, p)).collect();
        Ok(HtTensor::lin_comb(&terms)?)
    }

    /// `A_Λ = R_Λ A E_Λ` with every factor materialised on `Λ_j`.
    pub fn galerkin_restrict(&self, sets: &[Rows<K>]) -> Result<SepOperator<K>, OperatorError> {
        if sets.len() != self.d {
            return Err(OperatorError::DimensionMismatch { op: self.d, tensor: sets.len() });
        }
        let terms = self
            .terms
            .iter()
            .map(|t| {
                t.iter()
                    .enumerate()
                    .map(|(j, f)| match f {
                        Factor::Identity => Ok(Factor::Identity),
                        Factor::Matrix(m) => {
                            let b = m.block(&sets[j], &sets[j]);
                            let e = Explicit::new(sets[j].to_vec(), b.as_ref().clone())?;
                            Ok(Factor::Matrix(Arc::new(e) as Arc<dyn Matrix1D<K>>))
                        }
                    })
                    .collect::<Result<Vec<_>, HtError>>()
            })
            .collect::<Result<Vec<_>, HtError>>()?;
        Ok(SepOperator { d: self.d, terms })
    }

    /// Dense matrix of the operator on a product set, first index fastest (test oracle).
    pub fn to_dense(&self, sets: &[Rows<K>]) -> Result<DMatrix<f64>, HtError> {
        let sizes: Vec<usize> = sets.iter().map(|s| s.len()).collect();
        let n: usize = sizes.iter().product();
        if n > 20_000 {
            return Err(HtError::TooLarge(n * n));
        }
        let mut out = DMatrix::zeros(n, n);
        for t in &self.terms {
            let mut k = DMatrix::from_element(1, 1, 1.0);
            for (j, f) in t.iter().enumerate() {
                let m = match f {
                    Factor::Identity => DMatrix::identity(sizes[j], sizes[j]),
                    Factor::Matrix(m) => {
                        let b = m.block(&sets[j], &sets[j]);
                        let mut dm = DMatrix::zeros(sizes[j], sizes[j]);
                        for (r, c, v) in b.triplet_iter() {
                            dm[(r, c)] = *v;
                        }
                        dm
                    }
                };
                k = m.kronecker(&k);
            }
            out += k;
        }
        Ok(out)
    }
}

/// `(Σ_j I⊗⋯⊗M_j⊗⋯⊗I) u` with rank `2r`: each node carries the plain basis and the
/// basis with exactly one factor applied below it.
fn kronecker_sum_apply<K: Key>(fs: &[Arc<dyn Matrix1D<K>>], u: &HtTensor<K>, out: &[Rows<K>]) -> Result<HtTensor<K>, HtError> {
    let tree = u.tree().clone();
    let d = tree.d();
    let mut frames = Vec::with_capacity(d);
    for j in 0..d {
        let plain = reindex(u.frame(j), u.rows(j), &out[j]);
        let applied = SepOperator::leaf_image(&Factor::Matrix(fs[j].clone()), u.frame(j), u.rows(j), &out[j]);
        let r = plain.ncols();
        let mut f = DMatrix::zeros(out[j].len(), 2 * r);
        f.columns_mut(0, r).copy_from(&plain);
        f.columns_mut(r, r).copy_from(&applied);
        frames.push(f);
    }
    let mut transfers = vec![None; tree.len()];
    for (t, slot) in transfers.iter_mut().enumerate() {
        let Some(b) = u.transfer(t) else { continue };
        let (rl, rr, rt) = (b.rl, b.rr, b.rt());
        let root = t == tree.root();
        let mut nb = Transfer::zeros(2 * rl, 2 * rr, if root { 1 } else { 2 * rt });
        for k in 0..rt {
            let ko = if root { 0 } else { rt + k };
            for j in 0..rr {
                for i in 0..rl {
                    let v = b.get(i, j, k);
                    if v == 0.0 {
                        continue;
                    }
                    if !root {
                        nb.set(i, j, k, v);
                    }
                    nb.set(rl + i, j, ko, v);
                    nb.set(i, rr + j, ko, v);
                }
            }
        }
        *slot = Some(nb);
    }
    HtTensor::from_parts(tree, out.to_vec(), frames, transfers)
}

/// The Laplacian `Σ_j I⊗⋯⊗T⊗⋯⊗I` with `T` the 1D stiffness matrix.
pub fn laplacian(basis: Arc<Basis1D>, d: usize) -> Result<SepOperator<WaveletIndex>, HtError> {
    let t: Arc<dyn Matrix1D<WaveletIndex>> = Arc::new(Stiffness::new(basis));
    if d == 1 {
        return SepOperator::new(1, vec![vec![Factor::Matrix(t)]]);
    }
    SepOperator::kronecker_sum(vec![t; d])
}
