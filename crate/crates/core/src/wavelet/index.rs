//! Wavelet indices, their tree structure and tree-structured index sets.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;

/// Number of scaling functions on level 0 (the three bubbles of `[0,1]`).
pub const NUM_SCALING: u8 = 3;
/// Cell wavelet components.
pub const CELL: [u8; 2] = [0, 1];
/// Node wavelet components.
pub const NODE: [u8; 2] = [2, 3];
pub const LEFT: u8 = 4;
pub const RIGHT: u8 = 5;
/// Largest supported level; translations are kept exactly in `i64`.
pub const MAX_LEVEL: u32 = 40;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Kind {
    Scaling,
    Wavelet,
}

/// `ψ_{j,k}(x) = 2^{j/2} M(2^j x − k)` for the mother selected by `kind` and `component`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WaveletIndex {
    pub level: u32,
    pub kind: Kind,
    pub component: u8,
    pub translation: i64,
}

impl fmt::Display for WaveletIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let k = match self.kind {
            Kind::Scaling => 's',
            Kind::Wavelet => 'w',
        };
        write!(f, "{}{}.{}:{}", k, self.component, self.level, self.translation)
    }
}

impl WaveletIndex {
    pub fn scaling(component: u8) -> Self {
        WaveletIndex { level: 0, kind: Kind::Scaling, component, translation: 0 }
    }

    pub fn wavelet(level: u32, component: u8, translation: i64) -> Self {
        WaveletIndex { level, kind: Kind::Wavelet, component, translation }
    }

    pub fn is_valid(&self) -> bool {
        if self.level > MAX_LEVEL {
            return false;
        }
        let n = 1i64 << self.level;
        let k = self.translation;
        match self.kind {
            Kind::Scaling => self.level == 0 && self.component < NUM_SCALING && k == 0,
            Kind::Wavelet => match self.component {
                0 | 1 => (0..n).contains(&k),
                2 | 3 => k >= 1 && k < n,
                LEFT => k == 0,
                RIGHT => k == n - 1,
                _ => false,
            },
        }
    }

    /// Index into the table of mother functions: bubbles first, then wavelet components.
    pub fn mother(&self) -> usize {
        match self.kind {
            Kind::Scaling => self.component as usize,
            Kind::Wavelet => NUM_SCALING as usize + self.component as usize,
        }
    }

    /// Support `[lo, hi]` in `(0,1)`.
    pub fn support(&self) -> (f64, f64) {
        let (a, b) = self.support_cells();
        let h = (-(self.level as f64)).exp2();
        (a as f64 * h, b as f64 * h)
    }

    /// Support in units of `2^-level`.
    pub fn support_cells(&self) -> (i64, i64) {
        let k = self.translation;
        match (self.kind, self.component) {
            (Kind::Wavelet, 2 | 3) => (k - 1, k + 1),
            _ => (k, k + 1),
        }
    }

    pub fn is_root(&self) -> bool {
        self.level == 0
    }

    /// The unique coarser index whose support contains this index's support centre.
    pub fn parent(&self) -> Option<WaveletIndex> {
        if self.level == 0 {
            return None;
        }
        let j = self.level - 1;
        let k = self.translation;
        let c = self.component;
        Some(match c {
            0 | 1 => WaveletIndex::wavelet(j, c, k >> 1),
            2 | 3 if k % 2 == 0 => WaveletIndex::wavelet(j, c, k / 2),
            2 | 3 => WaveletIndex::wavelet(j, c - 2, (k - 1) / 2),
            LEFT => WaveletIndex::wavelet(j, LEFT, 0),
            _ => WaveletIndex::wavelet(j, RIGHT, (1i64 << j) - 1),
        })
    }

    pub fn children(&self) -> Vec<WaveletIndex> {
        if self.kind == Kind::Scaling {
            return level_zero_wavelets();
        }
        let j = self.level + 1;
        let k = self.translation;
        let c = self.component;
        match c {
            0 | 1 => vec![
                WaveletIndex::wavelet(j, c, 2 * k),
                WaveletIndex::wavelet(j, c, 2 * k + 1),
                WaveletIndex::wavelet(j, c + 2, 2 * k + 1),
            ],
            2 | 3 => vec![WaveletIndex::wavelet(j, c, 2 * k)],
            LEFT => vec![WaveletIndex::wavelet(j, LEFT, 0)],
            _ => vec![WaveletIndex::wavelet(j, RIGHT, (1i64 << j) - 1)],
        }
    }

    /// All valid indices on this index's level whose translation differs by at most `width`.
    pub fn neighbours(&self, width: i64) -> Vec<WaveletIndex> {
        if self.kind == Kind::Scaling {
            return (0..NUM_SCALING).map(WaveletIndex::scaling).collect();
        }
        let mut out = Vec::new();
        for k in self.translation - width..=self.translation + width {
            for c in 0..=RIGHT {
                let w = WaveletIndex::wavelet(self.level, c, k);
                if w.is_valid() {
                    out.push(w);
                }
            }
        }
        out
    }
}

pub fn level_zero_wavelets() -> Vec<WaveletIndex> {
    vec![
        WaveletIndex::wavelet(0, 0, 0),
        WaveletIndex::wavelet(0, 1, 0),
        WaveletIndex::wavelet(0, LEFT, 0),
        WaveletIndex::wavelet(0, RIGHT, 0),
    ]
}

/// All indices of levels `0..=max_level`, scaling functions included.
pub fn uniform(max_level: u32) -> IndexSet1D {
    let mut set: BTreeSet<WaveletIndex> = (0..NUM_SCALING).map(WaveletIndex::scaling).collect();
    for j in 0..=max_level {
        let n = 1i64 << j;
        for k in 0..n {
            for c in 0..=RIGHT {
                let w = WaveletIndex::wavelet(j, c, k);
                if w.is_valid() {
                    set.insert(w);
                }
            }
        }
    }
    IndexSet1D { members: set }
}

/// An ordered set of 1D indices.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexSet1D {
    members: BTreeSet<WaveletIndex>,
}

impl FromIterator<WaveletIndex> for IndexSet1D {
    fn from_iter<T: IntoIterator<Item = WaveletIndex>>(iter: T) -> Self {
        IndexSet1D { members: iter.into_iter().collect() }
    }
}

impl IndexSet1D {
    pub fn new() -> Self {
        Self::default()
    }

    /// The three level-0 scaling functions.
    pub fn roots() -> Self {
        (0..NUM_SCALING).map(WaveletIndex::scaling).collect()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, w: &WaveletIndex) -> bool {
        self.members.contains(w)
    }

    pub fn insert(&mut self, w: WaveletIndex) -> bool {
        self.members.insert(w)
    }

    pub fn iter(&self) -> impl Iterator<Item = &WaveletIndex> {
        self.members.iter()
    }

    pub fn to_vec(&self) -> Vec<WaveletIndex> {
        self.members.iter().copied().collect()
    }

    pub fn max_level(&self) -> u32 {
        self.members.iter().map(|w| w.level).max().unwrap_or(0)
    }

    pub fn is_subset(&self, other: &IndexSet1D) -> bool {
        self.members.is_subset(&other.members)
    }

    pub fn union(&self, other: &IndexSet1D) -> IndexSet1D {
        IndexSet1D { members: self.members.union(&other.members).copied().collect() }
    }

    pub fn is_tree(&self) -> bool {
        self.members.iter().all(|w| w.parent().is_none_or(|p| self.members.contains(&p)))
    }

    /// Insert `w` together with all its ancestors.
    pub fn insert_with_ancestors(&mut self, w: WaveletIndex) {
        let mut cur = Some(w);
        while let Some(c) = cur {
            if !self.members.insert(c) {
                break;
            }
            cur = c.parent();
        }
    }

    pub fn tree_closure(&self) -> IndexSet1D {
        let mut out = IndexSet1D::new();
        for &w in &self.members {
            out.insert_with_ancestors(w);
        }
        out
    }

    /// Children and same-level neighbours within `width` translations, then tree closure.
    pub fn expand_security_zone(&self, width: i64) -> IndexSet1D {
        let mut out = self.tree_closure();
        if width == 0 {
            return out;
        }
        for w in &self.members {
            for c in w.children() {
                if c.level <= MAX_LEVEL {
                    out.insert_with_ancestors(c);
                }
            }
            for n in w.neighbours(width) {
                out.insert_with_ancestors(n);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parent_child_inverse() {
        let set = uniform(5);
        for w in set.iter() {
            for c in w.children() {
                assert!(c.is_valid(), "{c}");
                if w.kind == Kind::Wavelet {
                    assert_eq!(c.parent(), Some(*w));
                }
            }
            if let Some(p) = w.parent() {
                assert!(p.children().contains(w));
            }
        }
    }

    #[test]
    fn level_counts() {
        for j in 0..6 {
            let n = uniform(j).len() - uniform(j.saturating_sub(1)).len();
            if j == 0 {
                assert_eq!(uniform(0).len(), 3 + 4);
            } else {
                assert_eq!(n, 4 << j);
            }
        }
    }

    #[test]
    fn parent_support_contains_centre() {
        for w in uniform(6).iter().filter(|w| w.level > 0) {
            let (a, b) = w.support();
            let c = 0.5 * (a + b);
            let (pa, pb) = w.parent().unwrap().support();
            assert!(pa <= c && c <= pb);
        }
    }

    #[test]
    fn security_zone_of_singleton_root() {
        let s: IndexSet1D = [WaveletIndex::wavelet(0, 0, 0)].into_iter().collect();
        let e = s.expand_security_zone(1);
        assert!(e.is_tree());
        let expected: IndexSet1D = level_zero_wavelets()
            .into_iter()
            .chain([
                WaveletIndex::wavelet(1, 0, 0),
                WaveletIndex::wavelet(1, 0, 1),
                WaveletIndex::wavelet(1, 2, 1),
            ])
            .collect();
        assert_eq!(e, expected);
        assert_eq!(s.expand_security_zone(0), s);
    }
}
