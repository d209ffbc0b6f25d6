//! Three-way transfer tensors `B[i, j, k]` stored as `(rl·rr) × rt` matrices.

use nalgebra::DMatrix;

#[derive(Clone, Debug, PartialEq)]
pub struct Transfer {
    pub rl: usize,
    pub rr: usize,
    /// Row `i + rl·j`, column `k`.
    pub data: DMatrix<f64>,
}

impl Transfer {
    pub fn zeros(rl: usize, rr: usize, rt: usize) -> Self {
        Transfer { rl, rr, data: DMatrix::zeros(rl * rr, rt) }
    }

    pub fn from_data(rl: usize, rr: usize, data: DMatrix<f64>) -> Self {
        assert_eq!(data.nrows(), rl * rr, "transfer data shape");
        Transfer { rl, rr, data }
    }

    pub fn rt(&self) -> usize {
        self.data.ncols()
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i + self.rl * j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        self.data[(i + self.rl * j, k)] = v;
    }

    /// The `rl × rr` slice for fixed `k`.
    pub fn slice(&self, k: usize) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.rl, self.rr, self.data.column(k).as_slice())
    }

    /// Mode-1 unfolding, `rl × (rr·rt)`.
    pub fn unfold1(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.rl, self.rr * self.rt(), self.data.as_slice())
    }

    /// Mode-2 unfolding, `rr × (rl·rt)`.
    pub fn unfold2(&self) -> DMatrix<f64> {
        let rt = self.rt();
        DMatrix::from_fn(self.rr, self.rl * rt, |j, c| self.get(c % self.rl, j, c / self.rl))
    }

    /// `B ×₁ m` with `m` of size `p × rl`.
    pub fn mode1(&self, m: &DMatrix<f64>) -> Transfer {
        assert_eq!(m.ncols(), self.rl);
        let p = m.nrows();
        if self.rr * self.rt() == 0 || p == 0 || self.rl == 0 {
            return Transfer::zeros(p, self.rr, self.rt());
        }
        let prod = m * self.unfold1();
        Transfer { rl: p, rr: self.rr, data: DMatrix::from_column_slice(p * self.rr, self.rt(), prod.as_slice()) }
    }

    /// `B ×₂ m` with `m` of size `q × rr`.
    pub fn mode2(&self, m: &DMatrix<f64>) -> Transfer {
        assert_eq!(m.ncols(), self.rr);
        let q = m.nrows();
        let rt = self.rt();
        let mut out = Transfer::zeros(self.rl, q, rt);
        if self.rl == 0 || q == 0 || rt == 0 || self.rr == 0 {
            return out;
        }
        let mt = m.transpose();
        for k in 0..rt {
            let s = self.slice(k) * &mt;
            out.data.column_mut(k).copy_from_slice(s.as_slice());
        }
        out
    }

    /// `B ×₃ m` with `m` of size `s × rt`.
    pub fn mode3(&self, m: &DMatrix<f64>) -> Transfer {
        assert_eq!(m.ncols(), self.rt());
        if self.data.nrows() == 0 || m.ncols() == 0 {
            return Transfer::zeros(self.rl, self.rr, m.nrows());
        }
        Transfer { rl: self.rl, rr: self.rr, data: &self.data * m.transpose() }
    }

    /// Contracts the third mode with the columns of `f`: `C[i,j,s] = Σ_k B[i,j,k] f[k,s]`.
    pub fn times3(&self, f: &DMatrix<f64>) -> Transfer {
        assert_eq!(f.nrows(), self.rt());
        if self.data.nrows() == 0 || f.nrows() == 0 {
            return Transfer::zeros(self.rl, self.rr, f.ncols());
        }
        Transfer { rl: self.rl, rr: self.rr, data: &self.data * f }
    }
}
