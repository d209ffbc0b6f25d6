//! Piecewise cubic polynomials on dyadic meshes with exact integrals.

/// Monomial coefficients of a cubic in the local cell coordinate `t ∈ [0,1]`.
pub type Poly = [f64; 4];

/// A piecewise cubic supported on consecutive cells of width `2^-depth`.
///
/// Cell `i` covers `[(start+i)·h, (start+i+1)·h]` with `h = 2^-depth`.
#[derive(Clone, Debug, PartialEq)]
pub struct Piecewise {
    depth: u32,
    start: i64,
    pieces: Vec<Poly>,
}

fn poly_compose(p: &Poly, a: f64, w: f64) -> Poly {
    // q(s) = p(a + w s)
    let mut q = [0.0; 4];
    let binom = [[1.0, 0.0, 0.0, 0.0], [1.0, 1.0, 0.0, 0.0], [1.0, 2.0, 1.0, 0.0], [1.0, 3.0, 3.0, 1.0]];
    for (k, &c) in p.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        for i in 0..=k {
            q[i] += c * binom[k][i] * a.powi((k - i) as i32) * w.powi(i as i32);
        }
    }
    q
}

fn poly_deriv(p: &Poly) -> Poly {
    [p[1], 2.0 * p[2], 3.0 * p[3], 0.0]
}

fn unit_product_integral(p: &Poly, q: &Poly) -> f64 {
    let mut s = 0.0;
    for (a, &pa) in p.iter().enumerate() {
        if pa == 0.0 {
            continue;
        }
        for (b, &qb) in q.iter().enumerate() {
            s += pa * qb / (a + b + 1) as f64;
        }
    }
    s
}

impl Piecewise {
    pub fn new(depth: u32, start: i64, pieces: Vec<Poly>) -> Self {
        Piecewise { depth, start, pieces }
    }

    pub fn zero() -> Self {
        Piecewise { depth: 0, start: 0, pieces: Vec::new() }
    }

    /// Restriction of a global polynomial (monomials in `x`) to `n` cells.
    pub fn from_global(depth: u32, start: i64, n: usize, coeffs: &Poly) -> Self {
        let h = Self::cell_width(depth);
        let pieces = (0..n).map(|i| poly_compose(coeffs, (start + i as i64) as f64 * h, h)).collect();
        Piecewise { depth, start, pieces }
    }

    fn cell_width(depth: u32) -> f64 {
        (-(depth as f64)).exp2()
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn start(&self) -> i64 {
        self.start
    }

    pub fn pieces(&self) -> &[Poly] {
        &self.pieces
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn support(&self) -> (f64, f64) {
        let h = Self::cell_width(self.depth);
        (self.start as f64 * h, (self.start + self.pieces.len() as i64) as f64 * h)
    }

    pub fn eval(&self, x: f64) -> f64 {
        if self.pieces.is_empty() {
            return 0.0;
        }
        let h = Self::cell_width(self.depth);
        let u = x / h - self.start as f64;
        let n = self.pieces.len() as f64;
        if u < 0.0 || u > n {
            return 0.0;
        }
        let i = (u.floor() as usize).min(self.pieces.len() - 1);
        let t = u - i as f64;
        let p = &self.pieces[i];
        ((p[3] * t + p[2]) * t + p[1]) * t + p[0]
    }

    /// Derivative values inside cells (one-sided at breakpoints, from the right).
    pub fn eval_deriv(&self, x: f64) -> f64 {
        if self.pieces.is_empty() {
            return 0.0;
        }
        let h = Self::cell_width(self.depth);
        let u = x / h - self.start as f64;
        let n = self.pieces.len() as f64;
        if u < 0.0 || u > n {
            return 0.0;
        }
        let i = (u.floor() as usize).min(self.pieces.len() - 1);
        let t = u - i as f64;
        let p = poly_deriv(&self.pieces[i]);
        ((p[2] * t + p[1]) * t + p[0]) / h
    }

    pub fn scale(&self, c: f64) -> Self {
        let pieces = self.pieces.iter().map(|p| [c * p[0], c * p[1], c * p[2], c * p[3]]).collect();
        Piecewise { depth: self.depth, start: self.start, pieces }
    }

    /// `x ↦ 2^{j/2} f(2^j x − k)`.
    pub fn dilate(&self, j: u32, k: i64) -> Self {
        let mut out = self.scale((j as f64 / 2.0).exp2());
        out.start = self.start + (k << self.depth);
        out.depth = self.depth + j;
        out
    }

    /// `x ↦ f(x − m)` for an integer `m`.
    pub fn shift(&self, m: i64) -> Self {
        let mut out = self.clone();
        out.start += m << self.depth;
        out
    }

    /// `x ↦ f(−x)`.
    pub fn reflect(&self) -> Self {
        let pieces = self.pieces.iter().rev().map(|p| poly_compose(p, 1.0, -1.0)).collect();
        Piecewise {
            depth: self.depth,
            start: -(self.start + self.pieces.len() as i64),
            pieces,
        }
    }

    /// Restriction of this function to cell `g` of the finer mesh at `depth`.
    fn piece_at(&self, depth: u32, g: i64) -> Option<Poly> {
        debug_assert!(depth >= self.depth);
        let gap = depth - self.depth;
        let c = g >> gap;
        let idx = c - self.start;
        if idx < 0 || idx >= self.pieces.len() as i64 {
            return None;
        }
        if gap == 0 {
            return Some(self.pieces[idx as usize]);
        }
        let w = (-(gap as f64)).exp2();
        let off = (g - (c << gap)) as f64 * w;
        Some(poly_compose(&self.pieces[idx as usize], off, w))
    }

    fn cell_range(&self, depth: u32) -> (i64, i64) {
        let gap = depth - self.depth;
        (self.start << gap, (self.start + self.pieces.len() as i64) << gap)
    }

    pub fn refined_to(&self, depth: u32) -> Self {
        assert!(depth >= self.depth);
        let (lo, hi) = self.cell_range(depth);
        let pieces = (lo..hi).map(|g| self.piece_at(depth, g).unwrap()).collect();
        Piecewise { depth, start: lo, pieces }
    }

    pub fn lin_comb(terms: &[(f64, &Piecewise)]) -> Self {
        let live: Vec<_> = terms.iter().filter(|(_, f)| !f.pieces.is_empty()).collect();
        if live.is_empty() {
            return Piecewise::zero();
        }
        let depth = live.iter().map(|(_, f)| f.depth).max().unwrap();
        let lo = live.iter().map(|(_, f)| f.cell_range(depth).0).min().unwrap();
        let hi = live.iter().map(|(_, f)| f.cell_range(depth).1).max().unwrap();
        let mut pieces = vec![[0.0; 4]; (hi - lo) as usize];
        for (c, f) in live {
            let (a, b) = f.cell_range(depth);
            for g in a..b {
                let p = f.piece_at(depth, g).unwrap();
                let q = &mut pieces[(g - lo) as usize];
                for i in 0..4 {
                    q[i] += c * p[i];
                }
            }
        }
        Piecewise { depth, start: lo, pieces }
    }

    pub fn add(&self, other: &Piecewise) -> Self {
        Self::lin_comb(&[(1.0, self), (1.0, other)])
    }

    pub fn sub(&self, other: &Piecewise) -> Self {
        Self::lin_comb(&[(1.0, self), (-1.0, other)])
    }

    fn overlap_fold(&self, other: &Piecewise, f: impl Fn(&Poly, &Poly) -> f64) -> (f64, u32) {
        if self.pieces.is_empty() || other.pieces.is_empty() {
            return (0.0, 0);
        }
        let depth = self.depth.max(other.depth);
        let (a0, a1) = self.cell_range(depth);
        let (b0, b1) = other.cell_range(depth);
        let (lo, hi) = (a0.max(b0), a1.min(b1));
        let mut s = 0.0;
        for g in lo..hi {
            let p = self.piece_at(depth, g).unwrap();
            let q = other.piece_at(depth, g).unwrap();
            s += f(&p, &q);
        }
        (s, depth)
    }

    /// `∫ f g dx`, exact.
    pub fn inner(&self, other: &Piecewise) -> f64 {
        let (s, depth) = self.overlap_fold(other, unit_product_integral);
        s * Self::cell_width(depth)
    }

    /// `∫ f' g' dx`, exact.
    pub fn deriv_inner(&self, other: &Piecewise) -> f64 {
        let (s, depth) = self.overlap_fold(other, |p, q| unit_product_integral(&poly_deriv(p), &poly_deriv(q)));
        s / Self::cell_width(depth)
    }

    pub fn norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    pub fn integral(&self) -> f64 {
        let s: f64 = self.pieces.iter().map(|p| p[0] + p[1] / 2.0 + p[2] / 3.0 + p[3] / 4.0).sum();
        s * Self::cell_width(self.depth)
    }

    /// `∫ (x − origin)^m f(x) dx`, exact.
    pub fn moment(&self, m: u32, origin: f64) -> f64 {
        let h = Self::cell_width(self.depth);
        let mut s = 0.0;
        for (i, p) in self.pieces.iter().enumerate() {
            // (x − origin) = a + h t on this cell
            let a = (self.start + i as i64) as f64 * h - origin;
            let mut pow = vec![1.0];
            for _ in 0..m {
                let mut next = vec![0.0; pow.len() + 1];
                for (k, &c) in pow.iter().enumerate() {
                    next[k] += c * a;
                    next[k + 1] += c * h;
                }
                pow = next;
            }
            for (k, &c) in pow.iter().enumerate() {
                for (l, &pl) in p.iter().enumerate() {
                    s += c * pl / (k + l + 1) as f64;
                }
            }
        }
        s * h
    }

    /// Largest jump of the function value across interior breakpoints.
    pub fn max_jump(&self) -> f64 {
        self.pieces
            .windows(2)
            .map(|w| (w[0].iter().sum::<f64>() - w[1][0]).abs())
            .fold(0.0, f64::max)
    }

    /// Values at the left and right ends of the support.
    pub fn end_values(&self) -> (f64, f64) {
        match (self.pieces.first(), self.pieces.last()) {
            (Some(a), Some(b)) => (a[0], b.iter().sum()),
            _ => (0.0, 0.0),
        }
    }
}
