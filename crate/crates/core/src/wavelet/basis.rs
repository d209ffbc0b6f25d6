//! The 1D basis: exact mass and stiffness entries, H¹ norms and load vectors.

use super::family::Family;
use super::index::{IndexSet1D, Kind, WaveletIndex, MAX_LEVEL};
use super::piecewise::Piecewise;
use nalgebra_sparse::{CooMatrix, CsrMatrix};
use std::collections::HashMap;
use std::sync::RwLock;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BasisError {
    #[error("invalid wavelet index {0}")]
    InvalidIndex(WaveletIndex),
}

type EntryKey = (usize, usize, u32, i64);

/// Orthonormal cubic multiwavelet basis of `H¹₀(0,1)`.
///
/// Entries between two indices depend only on the pair of mothers, the level
/// difference and the relative translation, so they are cached under that key.
pub struct Basis1D {
    family: Family,
    mothers: Vec<Piecewise>,
    mother_support: Vec<(i64, i64)>,
    mother_stiffness: Vec<f64>,
    mother_integral: Vec<f64>,
    cache: RwLock<HashMap<EntryKey, (f64, f64)>>,
}

impl std::fmt::Debug for Basis1D {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Basis1D").field("theta", &self.family.theta).finish()
    }
}

impl Default for Basis1D {
    fn default() -> Self {
        Self::new()
    }
}

impl Basis1D {
    pub fn new() -> Self {
        Self::from_family(Family::standard())
    }

    pub fn from_family(family: Family) -> Self {
        let mut mothers: Vec<Piecewise> = family.bubbles.clone();
        mothers.extend(family.cell.iter().cloned());
        mothers.extend(family.node_wavelets.iter().cloned());
        mothers.push(family.left.clone());
        mothers.push(family.right.clone());
        let mother_support = (0..mothers.len()).map(|m| if m == 5 || m == 6 { (-1, 1) } else { (0, 1) }).collect();
        let mother_stiffness = mothers.iter().map(|m| m.deriv_inner(m)).collect();
        let mother_integral = mothers.iter().map(|m| m.integral()).collect();
        Basis1D {
            family,
            mothers,
            mother_support,
            mother_stiffness,
            mother_integral,
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    fn check(&self, w: &WaveletIndex) -> Result<(), BasisError> {
        if w.is_valid() {
            Ok(())
        } else {
            Err(BasisError::InvalidIndex(*w))
        }
    }

    /// `ψ_λ` as a piecewise polynomial on `(0,1)`.
    pub fn function(&self, w: &WaveletIndex) -> Result<Piecewise, BasisError> {
        self.check(w)?;
        Ok(self.mothers[w.mother()].dilate(w.level, w.translation))
    }

    /// `‖ψ_λ‖_{H¹}`; the L₂ part is exactly one.
    pub fn h1_norm(&self, w: &WaveletIndex) -> Result<f64, BasisError> {
        self.check(w)?;
        Ok(self.h1_norm_sq_unchecked(w).sqrt())
    }

    pub(crate) fn h1_norm_sq_unchecked(&self, w: &WaveletIndex) -> f64 {
        1.0 + (4.0f64).powi(w.level as i32) * self.mother_stiffness[w.mother()]
    }

    /// Largest `‖ψ_λ‖²_{H¹}` over all indices up to `level`.
    pub fn max_h1_norm_sq(&self, level: u32) -> f64 {
        let m = self.mother_stiffness.iter().cloned().fold(0.0, f64::max);
        1.0 + (4.0f64).powi(level as i32) * m
    }

    fn reference(&self, a: usize, b: usize, gap: u32, m: i64) -> (f64, f64) {
        let key = (a, b, gap, m);
        if let Some(v) = self.cache.read().unwrap().get(&key) {
            return *v;
        }
        let fa = &self.mothers[a];
        let fb = self.mothers[b].dilate(gap, m);
        let v = (fa.inner(&fb), fa.deriv_inner(&fb));
        self.cache.write().unwrap().insert(key, v);
        v
    }

    fn entries(&self, l: &WaveletIndex, r: &WaveletIndex) -> (f64, f64) {
        let (l, r) = if l.level <= r.level { (l, r) } else { (r, l) };
        let gap = r.level - l.level;
        let m = r.translation - (l.translation << gap);
        let (a, b) = (l.mother(), r.mother());
        let (la, ha) = self.mother_support[a];
        let (lb, hb) = self.mother_support[b];
        // supports in units of 2^-(r.level) relative to the coarse mother
        if ((lb + m) >= (ha << gap)) || ((hb + m) <= (la << gap)) {
            return (0.0, 0.0);
        }
        let (mass, stiff) = self.reference(a, b, gap, m);
        (mass, stiff * (4.0f64).powi(l.level as i32))
    }

    /// `∫ ψ_λ' ψ_μ' dx`.
    pub fn stiffness_entry(&self, l: &WaveletIndex, r: &WaveletIndex) -> f64 {
        self.entries(l, r).1
    }

    /// `∫ ψ_λ ψ_μ dx`.
    pub fn mass_entry(&self, l: &WaveletIndex, r: &WaveletIndex) -> f64 {
        self.entries(l, r).0
    }

    fn assemble(&self, rows: &[WaveletIndex], cols: &[WaveletIndex], pick: impl Fn((f64, f64)) -> f64) -> CsrMatrix<f64> {
        // bucket the columns by level, sorted by the left end of their support
        let mut by_level: HashMap<u32, Vec<(i64, usize)>> = HashMap::new();
        for (p, c) in cols.iter().enumerate() {
            by_level.entry(c.level).or_default().push((c.support_cells().0, p));
        }
        for v in by_level.values_mut() {
            v.sort_unstable();
        }
        let mut coo = CooMatrix::new(rows.len(), cols.len());
        for (i, r) in rows.iter().enumerate() {
            let (lo, hi) = r.support();
            for (&lev, list) in &by_level {
                let scale = (lev as f64).exp2();
                let a = (lo * scale).floor() as i64 - 2;
                let b = (hi * scale).ceil() as i64 + 1;
                let start = list.partition_point(|&(s, _)| s < a);
                for &(s, p) in &list[start..] {
                    if s > b {
                        break;
                    }
                    let v = pick(self.entries(r, &cols[p]));
                    if v != 0.0 {
                        coo.push(i, p, v);
                    }
                }
            }
        }
        CsrMatrix::from(&coo)
    }

    /// Stiffness matrix with rows `rows` and columns `cols`.
    pub fn stiffness_matrix(&self, rows: &[WaveletIndex], cols: &[WaveletIndex]) -> CsrMatrix<f64> {
        self.assemble(rows, cols, |e| e.1)
    }

    /// Mass matrix with rows `rows` and columns `cols`; the identity on an orthonormal basis.
    pub fn mass_matrix(&self, rows: &[WaveletIndex], cols: &[WaveletIndex]) -> CsrMatrix<f64> {
        self.assemble(rows, cols, |e| e.0)
    }

    /// Galerkin stiffness matrix on `Λ`.
    pub fn assemble_stiffness(&self, set: &IndexSet1D) -> CsrMatrix<f64> {
        let v = set.to_vec();
        self.stiffness_matrix(&v, &v)
    }

    /// `∫₀¹ ψ_λ dx` for every member of `Λ`, in set order.
    pub fn rhs_one_coefficients(&self, set: &IndexSet1D) -> Vec<f64> {
        set.iter().map(|w| self.rhs_one(w)).collect()
    }

    pub fn rhs_one(&self, w: &WaveletIndex) -> f64 {
        self.mother_integral[w.mother()] * (-(w.level as f64) / 2.0).exp2()
    }

    /// Level bound used to size preconditioner windows.
    pub fn max_level(&self) -> u32 {
        MAX_LEVEL
    }

    pub fn num_mothers(&self) -> usize {
        self.mothers.len()
    }

    pub fn is_scaling(w: &WaveletIndex) -> bool {
        w.kind == Kind::Scaling
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavelet::index::uniform;

    #[test]
    fn mass_is_identity_on_uniform_sets() {
        let b = Basis1D::new();
        let v = uniform(4).to_vec();
        let m = b.mass_matrix(&v, &v);
        for (i, j, x) in m.triplet_iter() {
            let e = if i == j { 1.0 } else { 0.0 };
            assert!((x - e).abs() < 1e-10, "{} {} {}", v[i], v[j], x);
        }
        for i in 0..v.len() {
            assert!(m.get_entry(i, i).is_some());
        }
    }

    #[test]
    fn h1_ratio_tends_to_two() {
        let b = Basis1D::new();
        let r = b.h1_norm(&WaveletIndex::wavelet(11, 0, 3)).unwrap() / b.h1_norm(&WaveletIndex::wavelet(10, 0, 3)).unwrap();
        assert!((r - 2.0).abs() < 1e-4);
        assert!(b.h1_norm(&WaveletIndex::wavelet(1, 2, 0)).is_err());
    }
}
