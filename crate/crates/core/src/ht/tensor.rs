//! The hierarchical Tucker tensor and its algebra.

use super::transfer::Transfer;
use super::tree::DimTree;
use super::HtError;
use crate::linalg::{svd, thin_qr};
use nalgebra::DMatrix;
use ndarray::{ArrayD, IxDyn, ShapeBuilder};
use serde::Serialize;
use std::fmt::Debug;
use std::hash::Hash;
use std::sync::Arc;

/// Row labels of leaf frames.
pub trait Key: Copy + Ord + Hash + Debug + Send + Sync + Serialize + 'static {}
impl<T> Key for T where T: Copy + Ord + Hash + Debug + Send + Sync + Serialize + 'static {}

/// Sorted, duplicate-free row labels shared between tensors.
pub type Rows<K> = Arc<Vec<K>>;

/// Refuse to densify beyond this many entries.
pub const DENSE_LIMIT: usize = 10_000_000;

/// A tensor in hierarchical Tucker format over sparse 1D row sets.
///
/// For `d = 1` the root is a leaf and its frame is the coefficient vector.
#[derive(Clone, Debug)]
pub struct HtTensor<K: Key> {
    tree: Arc<DimTree>,
    rows: Vec<Rows<K>>,
    frames: Vec<DMatrix<f64>>,
    transfers: Vec<Option<Transfer>>,
    orthogonal: bool,
}

/// Per-node record of a truncation.
#[derive(Clone, Debug, Default, Serialize)]
pub struct TruncationReport {
    /// Norm of the discarded singular values at each node (root entry is zero).
    pub node_tails: Vec<f64>,
    /// `sqrt(Σ tails²)`, an upper bound for the truncation error.
    pub error_bound: f64,
    pub ranks_before: Vec<usize>,
    pub ranks_after: Vec<usize>,
}

/// `π_j(u)`: per-row slice norms in dimension `dim`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContractionVector<K: Key> {
    pub dim: usize,
    pub values: Vec<(K, f64)>,
}

impl<K: Key> ContractionVector<K> {
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|(_, v)| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct CoarsenReport {
    pub discarded: Vec<usize>,
    /// `sqrt(Σ_j Σ_{discarded λ} π_j[λ]²)`.
    pub error_bound: f64,
}

enum Rule {
    Tolerance(f64),
    MaxRank(usize),
}

pub(crate) fn merge_rows<K: Key>(a: &[K], b: &[K]) -> Vec<K> {
    let mut out = Vec::with_capacity(a.len().max(b.len()));
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        if j == b.len() || (i < a.len() && a[i] < b[j]) {
            out.push(a[i]);
            i += 1;
        } else if i == a.len() || b[j] < a[i] {
            out.push(b[j]);
            j += 1;
        } else {
            out.push(a[i]);
            i += 1;
            j += 1;
        }
    }
    out
}

/// Pairs `(position in a, position in b)` of common labels.
pub(crate) fn matched<K: Key>(a: &[K], b: &[K]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push((i, j));
                i += 1;
                j += 1;
            }
        }
    }
    out
}

/// Moves the rows of `frame` (labelled by `old`) onto the labels `new`; missing rows are zero.
pub(crate) fn reindex<K: Key>(frame: &DMatrix<f64>, old: &[K], new: &[K]) -> DMatrix<f64> {
    if old == new {
        return frame.clone();
    }
    let mut out = DMatrix::zeros(new.len(), frame.ncols());
    for (i, j) in matched(old, new) {
        out.row_mut(j).copy_from(&frame.row(i));
    }
    out
}

fn check_rows<K: Key>(rows: &[K]) -> Result<(), HtError> {
    if rows.windows(2).all(|w| w[0] < w[1]) {
        Ok(())
    } else {
        Err(HtError::Shape("row labels must be strictly ascending".into()))
    }
}

fn same_tree(a: &Arc<DimTree>, b: &Arc<DimTree>) -> bool {
    Arc::ptr_eq(a, b) || **a == **b
}

impl<K: Key> HtTensor<K> {
    /// Assemble a tensor from its parts, checking every shape.
    pub fn from_parts(
        tree: Arc<DimTree>,
        rows: Vec<Rows<K>>,
        frames: Vec<DMatrix<f64>>,
        transfers: Vec<Option<Transfer>>,
    ) -> Result<Self, HtError> {
        let d = tree.d();
        if rows.len() != d || frames.len() != d || transfers.len() != tree.len() {
            return Err(HtError::Shape("part counts do not match the tree".into()));
        }
        for j in 0..d {
            check_rows(&rows[j])?;
            if frames[j].nrows() != rows[j].len() {
                return Err(HtError::Shape(format!("frame {j} has {} rows for {} labels", frames[j].nrows(), rows[j].len())));
            }
        }
        let u = HtTensor { tree, rows, frames, transfers, orthogonal: false };
        for t in 0..u.tree.len() {
            match (u.tree.children(t), &u.transfers[t]) {
                (Some((l, r)), Some(b)) => {
                    if b.rl != u.rank(l) || b.rr != u.rank(r) {
                        return Err(HtError::Shape(format!("transfer at node {t} does not match child ranks")));
                    }
                    if t == 0 && b.rt() != 1 {
                        return Err(HtError::Shape("root rank must be 1".into()));
                    }
                }
                (None, None) => {}
                _ => return Err(HtError::Shape(format!("node {t}: transfer presence mismatch"))),
            }
        }
        if d == 1 && u.frames[0].ncols() != 1 {
            return Err(HtError::Shape("a one-dimensional tensor is a single column".into()));
        }
        Ok(u)
    }

    /// The zero tensor on the given row sets, with rank 0 at every non-root node.
    pub fn zeros(tree: Arc<DimTree>, rows: Vec<Rows<K>>) -> Result<Self, HtError> {
        let d = tree.d();
        if rows.len() != d {
            return Err(HtError::Shape("one row set per dimension".into()));
        }
        let rt = if d == 1 { 1 } else { 0 };
        let frames = rows.iter().map(|r| DMatrix::zeros(r.len(), rt)).collect();
        let transfers = (0..tree.len())
            .map(|t| tree.children(t).map(|_| Transfer::zeros(0, 0, if t == 0 { 1 } else { 0 })))
            .collect();
        Self::from_parts(tree, rows, frames, transfers)
    }

    /// `v_1 ⊗ ⋯ ⊗ v_d`; row labels need not be sorted.
    pub fn elementary(tree: Arc<DimTree>, factors: Vec<(Vec<K>, Vec<f64>)>) -> Result<Self, HtError> {
        if factors.len() != tree.d() {
            return Err(HtError::Shape("one factor per dimension".into()));
        }
        let mut rows = Vec::new();
        let mut frames = Vec::new();
        for (labels, vals) in factors {
            if labels.len() != vals.len() {
                return Err(HtError::Shape("factor labels and values differ in length".into()));
            }
            let mut pairs: Vec<(K, f64)> = labels.into_iter().zip(vals).collect();
            pairs.sort_by(|a, b| a.0.cmp(&b.0));
            rows.push(Arc::new(pairs.iter().map(|p| p.0).collect::<Vec<K>>()));
            frames.push(DMatrix::from_iterator(pairs.len(), 1, pairs.iter().map(|p| p.1)));
        }
        let transfers = (0..tree.len()).map(|t| tree.children(t).map(|_| Transfer::from_data(1, 1, DMatrix::from_element(1, 1, 1.0)))).collect();
        Self::from_parts(tree, rows, frames, transfers)
    }

    pub fn tree(&self) -> &Arc<DimTree> {
        &self.tree
    }

    pub fn d(&self) -> usize {
        self.tree.d()
    }

    pub fn rows(&self, j: usize) -> &Rows<K> {
        &self.rows[j]
    }

    pub fn all_rows(&self) -> &[Rows<K>] {
        &self.rows
    }

    pub fn frame(&self, j: usize) -> &DMatrix<f64> {
        &self.frames[j]
    }

    pub fn transfer(&self, t: usize) -> Option<&Transfer> {
        self.transfers[t].as_ref()
    }

    pub fn is_orthogonal(&self) -> bool {
        self.orthogonal
    }

    /// Rank of node `t`.
    pub fn rank(&self, t: usize) -> usize {
        match &self.transfers[t] {
            Some(b) => b.rt(),
            None => self.frames[self.tree.leaf_dim(t)].ncols(),
        }
    }

    /// Ranks of all nodes in id order.
    pub fn ranks(&self) -> Vec<usize> {
        (0..self.tree.len()).map(|t| self.rank(t)).collect()
    }

    /// Largest rank over non-root nodes.
    pub fn max_rank(&self) -> usize {
        (1..self.tree.len()).map(|t| self.rank(t)).max().unwrap_or(1)
    }

    /// `Σ_j #Λ_j`.
    pub fn support_size(&self) -> usize {
        self.rows.iter().map(|r| r.len()).sum()
    }

    /// Replace a leaf frame and its labels, keeping the rank.
    pub fn with_leaf(&self, j: usize, rows: Rows<K>, frame: DMatrix<f64>) -> Result<Self, HtError> {
        check_rows(&rows)?;
        if frame.ncols() != self.frames[j].ncols() || frame.nrows() != rows.len() {
            return Err(HtError::Shape(format!("replacement frame for dimension {j} has the wrong shape")));
        }
        let mut out = self.clone();
        out.rows[j] = rows;
        out.frames[j] = frame;
        out.orthogonal = false;
        Ok(out)
    }

    pub fn scale(&self, c: f64) -> Self {
        let mut out = self.clone();
        if self.d() == 1 {
            out.frames[0] *= c;
        } else if let Some(b) = out.transfers[0].as_mut() {
            b.data *= c;
        }
        out.orthogonal = self.orthogonal;
        out
    }

    fn check_tree(&self, other: &Self) -> Result<(), HtError> {
        if same_tree(&self.tree, &other.tree) {
            Ok(())
        } else {
            Err(HtError::TreeMismatch)
        }
    }

    /// `Σ c_i u_i` with leaf row sets unioned; node ranks add.
    pub fn lin_comb(terms: &[(f64, &HtTensor<K>)]) -> Result<Self, HtError> {
        let first = terms.first().ok_or_else(|| HtError::Shape("empty linear combination".into()))?.1;
        for (_, u) in terms {
            first.check_tree(u)?;
        }
        let tree = first.tree.clone();
        let d = tree.d();
        let rows: Vec<Rows<K>> = (0..d)
            .map(|j| {
                if terms.iter().all(|(_, u)| Arc::ptr_eq(&u.rows[j], &first.rows[j]) || *u.rows[j] == *first.rows[j]) {
                    first.rows[j].clone()
                } else {
                    let mut acc: Vec<K> = Vec::new();
                    for (_, u) in terms {
                        acc = merge_rows(&acc, &u.rows[j]);
                    }
                    Arc::new(acc)
                }
            })
            .collect();
        if d == 1 {
            let mut f = DMatrix::zeros(rows[0].len(), 1);
            for (c, u) in terms {
                f += reindex(&u.frames[0], &u.rows[0], &rows[0]) * *c;
            }
            return Self::from_parts(tree, rows, vec![f], vec![None]);
        }
        let frames = (0..d)
            .map(|j| {
                let total: usize = terms.iter().map(|(_, u)| u.frames[j].ncols()).sum();
                let mut f = DMatrix::zeros(rows[j].len(), total);
                let mut off = 0;
                for (_, u) in terms {
                    let r = u.frames[j].ncols();
                    if r > 0 {
                        let g = reindex(&u.frames[j], &u.rows[j], &rows[j]);
                        f.columns_mut(off, r).copy_from(&g);
                    }
                    off += r;
                }
                f
            })
            .collect();
        let mut transfers = vec![None; tree.len()];
        for (t, slot) in transfers.iter_mut().enumerate() {
            let Some((l, r)) = tree.children(t) else { continue };
            let rl: usize = terms.iter().map(|(_, u)| u.rank(l)).sum();
            let rr: usize = terms.iter().map(|(_, u)| u.rank(r)).sum();
            let rt: usize = if t == 0 { 1 } else { terms.iter().map(|(_, u)| u.rank(t)).sum() };
            let mut b = Transfer::zeros(rl, rr, rt);
            let (mut ol, mut or, mut ot) = (0, 0, 0);
            for (c, u) in terms {
                let bu = u.transfers[t].as_ref().unwrap();
                let coef = if t == 0 { *c } else { 1.0 };
                for k in 0..bu.rt() {
                    for jj in 0..bu.rr {
                        for ii in 0..bu.rl {
                            b.set(ol + ii, or + jj, ot + k, coef * bu.get(ii, jj, k));
                        }
                    }
                }
                ol += bu.rl;
                or += bu.rr;
                if t != 0 {
                    ot += bu.rt();
                }
            }
            *slot = Some(b);
        }
        Self::from_parts(tree, rows, frames, transfers)
    }

    pub fn add(&self, other: &Self) -> Result<Self, HtError> {
        Self::lin_comb(&[(1.0, self), (1.0, other)])
    }

    pub fn sub(&self, other: &Self) -> Result<Self, HtError> {
        Self::lin_comb(&[(1.0, self), (-1.0, other)])
    }

    /// Euclidean inner product, via leaf Gram matrices propagated to the root.
    pub fn inner(&self, other: &Self) -> Result<f64, HtError> {
        self.check_tree(other)?;
        let d = self.d();
        let leaf_gram = |j: usize| -> DMatrix<f64> {
            let pairs = matched(&self.rows[j], &other.rows[j]);
            let a = DMatrix::from_fn(pairs.len(), self.frames[j].ncols(), |p, c| self.frames[j][(pairs[p].0, c)]);
            let b = DMatrix::from_fn(pairs.len(), other.frames[j].ncols(), |p, c| other.frames[j][(pairs[p].1, c)]);
            a.transpose() * b
        };
        if d == 1 {
            return Ok(leaf_gram(0)[(0, 0)]);
        }
        let mut g: Vec<Option<DMatrix<f64>>> = vec![None; self.tree.len()];
        for t in (0..self.tree.len()).rev() {
            let m = match self.tree.children(t) {
                None => leaf_gram(self.tree.leaf_dim(t)),
                Some((l, r)) => {
                    let bu = self.transfers[t].as_ref().unwrap();
                    let bv = other.transfers[t].as_ref().unwrap();
                    let x = bv.mode1(g[l].as_ref().unwrap()).mode2(g[r].as_ref().unwrap());
                    if bu.data.nrows() == 0 {
                        DMatrix::zeros(bu.rt(), bv.rt())
                    } else {
                        bu.data.transpose() * x.data
                    }
                }
            };
            g[t] = Some(m);
        }
        Ok(g[0].as_ref().unwrap()[(0, 0)])
    }

    /// Euclidean norm, from the root coefficients of an orthogonalised copy
    /// (a Gram-based evaluation would lose half the digits on differences).
    pub fn norm(&self) -> f64 {
        if self.d() == 1 {
            return self.frames[0].norm();
        }
        if self.orthogonal {
            return self.transfers[self.tree.root()].as_ref().map_or(0.0, |b| b.data.norm());
        }
        self.orthogonalize().norm()
    }

    /// Same tensor with orthonormal bases at every non-root node.
    pub fn orthogonalize(&self) -> Self {
        if self.orthogonal {
            return self.clone();
        }
        let mut out = self.clone();
        if self.d() == 1 {
            out.orthogonal = true;
            return out;
        }
        let n = self.tree.len();
        let mut carry: Vec<Option<DMatrix<f64>>> = vec![None; n];
        for t in (0..n).rev() {
            match self.tree.children(t) {
                None => {
                    let j = self.tree.leaf_dim(t);
                    let (q, r) = thin_qr(&out.frames[j]);
                    out.frames[j] = q;
                    carry[t] = Some(r);
                }
                Some((l, r)) => {
                    let b = out.transfers[t].take().unwrap();
                    let b = b.mode1(carry[l].as_ref().unwrap()).mode2(carry[r].as_ref().unwrap());
                    if t == 0 {
                        out.transfers[t] = Some(b);
                    } else {
                        let (q, rr) = thin_qr(&b.data);
                        out.transfers[t] = Some(Transfer::from_data(b.rl, b.rr, q));
                        carry[t] = Some(rr);
                    }
                }
            }
        }
        out.orthogonal = true;
        out
    }

    /// Left singular vectors and singular values of every non-root matricization.
    /// Requires orthonormal node bases.
    fn node_svds(&self) -> Vec<Option<(DMatrix<f64>, Vec<f64>)>> {
        debug_assert!(self.orthogonal);
        let n = self.tree.len();
        let mut out: Vec<Option<(DMatrix<f64>, Vec<f64>)>> = vec![None; n];
        let mut factor: Vec<Option<DMatrix<f64>>> = vec![None; n];
        factor[0] = Some(DMatrix::from_element(1, 1, 1.0));
        for t in 0..n {
            let Some((l, r)) = self.tree.children(t) else { continue };
            let b = self.transfers[t].as_ref().unwrap();
            let c = b.times3(factor[t].as_ref().unwrap());
            for (child, unfold) in [(l, c.unfold1()), (r, c.unfold2())] {
                let f = svd(&unfold);
                let mut fac = f.u.clone();
                for (k, s) in f.s.iter().enumerate() {
                    fac.column_mut(k).scale_mut(*s);
                }
                factor[child] = Some(fac);
                out[child] = Some((f.u, f.s));
            }
        }
        out
    }

    fn truncate_with(&self, rule: Rule) -> (Self, TruncationReport) {
        let before = self.ranks();
        let n = self.tree.len();
        if self.d() == 1 {
            let report = TruncationReport { node_tails: vec![0.0], error_bound: 0.0, ranks_before: before.clone(), ranks_after: before };
            return (self.clone(), report);
        }
        let u = self.orthogonalize();
        let svds = u.node_svds();
        let mut keep: Vec<Option<DMatrix<f64>>> = vec![None; n];
        let mut tails = vec![0.0; n];
        for t in 1..n {
            let (w, s) = svds[t].as_ref().unwrap();
            let nonzero = s.iter().take_while(|&&x| x > 0.0).count();
            let k = match rule {
                Rule::MaxRank(r) => r.min(nonzero),
                Rule::Tolerance(eps) => {
                    let mut k = nonzero;
                    let mut tail2 = 0.0;
                    while k > 0 {
                        let next = tail2 + s[k - 1] * s[k - 1];
                        if next.sqrt() <= eps {
                            tail2 = next;
                            k -= 1;
                        } else {
                            break;
                        }
                    }
                    k
                }
            };
            tails[t] = s[k..].iter().map(|x| x * x).sum::<f64>().sqrt();
            keep[t] = Some(w.columns(0, k).into_owned());
        }
        let mut out = u.clone();
        for t in 0..n {
            match self.tree.children(t) {
                None => {
                    let j = self.tree.leaf_dim(t);
                    let w = keep[t].as_ref().unwrap();
                    out.frames[j] = if w.ncols() == 0 || u.frames[j].ncols() == 0 {
                        DMatrix::zeros(u.frames[j].nrows(), w.ncols())
                    } else {
                        &u.frames[j] * w
                    };
                }
                Some((l, r)) => {
                    let b = u.transfers[t].as_ref().unwrap();
                    let mut nb = b.mode1(&keep[l].as_ref().unwrap().transpose()).mode2(&keep[r].as_ref().unwrap().transpose());
                    if t != 0 {
                        nb = nb.mode3(&keep[t].as_ref().unwrap().transpose());
                    }
                    out.transfers[t] = Some(nb);
                }
            }
        }
        out.orthogonal = true;
        let error_bound = tails.iter().map(|x| x * x).sum::<f64>().sqrt();
        let after = out.ranks();
        (out, TruncationReport { node_tails: tails, error_bound, ranks_before: before, ranks_after: after })
    }

    /// Hierarchical SVD truncation with `‖u − result‖ ≤ ε`.
    ///
    /// The budget is split equally over the `2d − 2` non-root nodes.
    pub fn truncate(&self, eps: f64) -> Result<(Self, TruncationReport), HtError> {
        if !(eps >= 0.0) {
            return Err(HtError::NegativeTolerance(eps));
        }
        let nodes = self.tree.num_non_root().max(1) as f64;
        Ok(self.truncate_with(Rule::Tolerance(eps / nodes.sqrt())))
    }

    /// Truncation to rank at most `rmax` at every non-root node.
    pub fn truncate_to_rank(&self, rmax: usize) -> Result<(Self, TruncationReport), HtError> {
        if rmax < 1 {
            return Err(HtError::InvalidRank(rmax));
        }
        Ok(self.truncate_with(Rule::MaxRank(rmax)))
    }

    /// `π_j(u)` for every dimension.
    pub fn contractions(&self) -> Vec<ContractionVector<K>> {
        let d = self.d();
        if d == 1 {
            let values = self.rows[0].iter().zip(self.frames[0].column(0).iter()).map(|(k, v)| (*k, v.abs())).collect();
            return vec![ContractionVector { dim: 0, values }];
        }
        let u = self.orthogonalize();
        let svds = u.node_svds();
        (0..d)
            .map(|j| {
                let t = self.tree.leaf(j);
                let (w, s) = svds[t].as_ref().unwrap();
                let frame = &u.frames[j];
                let values = if frame.ncols() == 0 {
                    u.rows[j].iter().map(|k| (*k, 0.0)).collect()
                } else {
                    let mut p = frame * w;
                    for (c, sc) in s.iter().enumerate() {
                        p.column_mut(c).scale_mut(*sc);
                    }
                    u.rows[j].iter().enumerate().map(|(i, k)| (*k, p.row(i).norm())).collect()
                };
                ContractionVector { dim: j, values }
            })
            .collect()
    }

    pub fn contraction(&self, j: usize) -> Result<ContractionVector<K>, HtError> {
        if j >= self.d() {
            return Err(HtError::DimensionOutOfRange(j, self.d()));
        }
        Ok(self.contractions().swap_remove(j))
    }

    /// Restrict (or zero-extend) every leaf to the given row sets.
    pub fn restrict(&self, rows: &[Rows<K>]) -> Result<Self, HtError> {
        if rows.len() != self.d() {
            return Err(HtError::Shape("one row set per dimension".into()));
        }
        let mut out = self.clone();
        for j in 0..self.d() {
            check_rows(&rows[j])?;
            out.frames[j] = reindex(&self.frames[j], &self.rows[j], &rows[j]);
            out.rows[j] = rows[j].clone();
        }
        out.orthogonal = false;
        Ok(out)
    }

    /// Drop rows with the smallest contraction values while
    /// `sqrt(Σ_j Σ_{dropped} π_j²) ≤ ε`, using factor-√2 buckets.
    pub fn coarsen(&self, eps: f64) -> Result<(Self, CoarsenReport), HtError> {
        if !(eps >= 0.0) {
            return Err(HtError::NegativeTolerance(eps));
        }
        let d = self.d();
        if eps == 0.0 {
            return Ok((self.clone(), CoarsenReport { discarded: vec![0; d], error_bound: 0.0 }));
        }
        let pis = self.contractions();
        let mut entries: Vec<(usize, usize, f64)> = Vec::new();
        for cv in &pis {
            for (i, (_, v)) in cv.values.iter().enumerate() {
                entries.push((cv.dim, i, *v));
            }
        }
        let drop = bucket_discard(&entries, eps);
        let mut keep_rows: Vec<Vec<K>> = vec![Vec::new(); d];
        let mut discarded = vec![0; d];
        let mut err2 = 0.0;
        for (e, &dr) in entries.iter().zip(&drop) {
            if dr {
                discarded[e.0] += 1;
                err2 += e.2 * e.2;
            } else {
                keep_rows[e.0].push(self.rows[e.0][e.1]);
            }
        }
        let rows: Vec<Rows<K>> = keep_rows.into_iter().map(Arc::new).collect();
        let out = self.restrict(&rows)?;
        Ok((out, CoarsenReport { discarded, error_bound: err2.sqrt() }))
    }

    /// Dense array of shape `(#Λ_1, …, #Λ_d)`.
    pub fn densify(&self) -> Result<ArrayD<f64>, HtError> {
        let shape: Vec<usize> = self.rows.iter().map(|r| r.len()).collect();
        let total = shape.iter().try_fold(1usize, |a, &b| a.checked_mul(b)).unwrap_or(usize::MAX);
        if total > DENSE_LIMIT {
            return Err(HtError::TooLarge(total));
        }
        let n = self.tree.len();
        let mut dense: Vec<Option<DMatrix<f64>>> = vec![None; n];
        for t in (0..n).rev() {
            let m = match self.tree.children(t) {
                None => self.frames[self.tree.leaf_dim(t)].clone(),
                Some((l, r)) => {
                    let dl = dense[l].take().unwrap();
                    let dr = dense[r].take().unwrap();
                    let b = self.transfers[t].as_ref().unwrap();
                    let mut m = DMatrix::zeros(dl.nrows() * dr.nrows(), b.rt());
                    if b.rl > 0 && b.rr > 0 {
                        for k in 0..b.rt() {
                            let x = &dl * b.slice(k) * dr.transpose();
                            m.column_mut(k).copy_from_slice(x.as_slice());
                        }
                    }
                    m
                }
            };
            dense[t] = Some(m);
        }
        let root = dense[0].take().unwrap();
        let data: Vec<f64> = if root.ncols() == 0 { vec![0.0; total] } else { root.column(0).iter().cloned().collect() };
        Ok(ArrayD::from_shape_vec(IxDyn(&shape).f(), data).expect("dense shape"))
    }

    /// Exact hierarchical representation of a dense array (test oracle).
    pub fn from_dense(tree: Arc<DimTree>, rows: Vec<Rows<K>>, x: &ArrayD<f64>) -> Result<Self, HtError> {
        let d = tree.d();
        let shape: Vec<usize> = rows.iter().map(|r| r.len()).collect();
        if x.shape() != shape.as_slice() || rows.len() != d {
            return Err(HtError::Shape("dense array shape does not match row sets".into()));
        }
        let buf: Vec<f64> = x.t().iter().cloned().collect();
        if d == 1 {
            let f = DMatrix::from_column_slice(buf.len(), 1, &buf);
            return Self::from_parts(tree, rows, vec![f], vec![None]);
        }
        let n = tree.len();
        let mut bases: Vec<Option<DMatrix<f64>>> = vec![None; n];
        for (t, slot) in bases.iter_mut().enumerate() {
            if t == 0 {
                *slot = Some(DMatrix::from_column_slice(buf.len(), 1, &buf));
                continue;
            }
            let dims = &tree.node(t).dims;
            let pre: usize = shape[..dims[0]].iter().product();
            let mid: usize = dims.iter().map(|&j| shape[j]).product();
            let post: usize = shape[dims[dims.len() - 1] + 1..].iter().product();
            let m = DMatrix::from_fn(mid, pre * post, |i, c| buf[c % pre + pre * (i + mid * (c / pre))]);
            let f = svd(&m);
            let top = f.s.first().cloned().unwrap_or(0.0);
            let k = f.s.iter().take_while(|&&s| s > 1e-13 * top && s > 0.0).count();
            *slot = Some(f.u.columns(0, k).into_owned());
        }
        let mut frames = vec![DMatrix::zeros(0, 0); d];
        let mut transfers = vec![None; n];
        for t in 0..n {
            match tree.children(t) {
                None => frames[tree.leaf_dim(t)] = bases[t].clone().unwrap(),
                Some((l, r)) => {
                    let ul = bases[l].as_ref().unwrap();
                    let ur = bases[r].as_ref().unwrap();
                    let ut = bases[t].as_ref().unwrap();
                    let mut b = Transfer::zeros(ul.ncols(), ur.ncols(), ut.ncols());
                    for k in 0..ut.ncols() {
                        let m = DMatrix::from_column_slice(ul.nrows(), ur.nrows(), ut.column(k).as_slice());
                        let s = ul.transpose() * m * ur;
                        b.data.column_mut(k).copy_from_slice(s.as_slice());
                    }
                    transfers[t] = Some(b);
                }
            }
        }
        Self::from_parts(tree, rows, frames, transfers)
    }

    /// JSON description of tree, ranks and index sets for fixtures and debugging.
    pub fn debug_json(&self) -> serde_json::Value {
        serde_json::json!({
            "d": self.d(),
            "tree": self.tree.nodes(),
            "ranks": self.ranks(),
            "index_sets": self.rows.iter().map(|r| r.as_ref().clone()).collect::<Vec<_>>(),
            "orthogonal": self.orthogonal,
        })
    }
}

/// Marks entries `(dim, pos, value)` to drop: smallest-first by factor-√2
/// buckets relative to the largest value, stopping before the squared sum
/// of dropped values would exceed `eps²`.
pub(crate) fn bucket_discard(entries: &[(usize, usize, f64)], eps: f64) -> Vec<bool> {
    const BUCKETS: usize = 128;
    let mut drop = vec![false; entries.len()];
    let top = entries.iter().map(|e| e.2).fold(0.0, f64::max);
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); BUCKETS + 1];
    for (i, e) in entries.iter().enumerate() {
        let b = if e.2 <= 0.0 || top == 0.0 {
            BUCKETS
        } else {
            ((-2.0 * (e.2 / top).log2()).floor().max(0.0) as usize).min(BUCKETS - 1)
        };
        buckets[b].push(i);
    }
    let budget = eps * eps;
    let mut used = 0.0;
    for b in buckets.iter().rev() {
        for &i in b {
            let v = entries[i].2;
            if used + v * v > budget {
                return drop;
            }
            used += v * v;
            drop[i] = true;
        }
    }
    drop
}
