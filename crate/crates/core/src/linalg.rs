//! Small dense/banded solvers used by the Newton iterations.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Solves a tridiagonal system with the Thomas algorithm.
///
/// `lower[i]` couples row `i + 1` to column `i`, `upper[i]` couples row `i`
/// to column `i + 1`.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    if rhs.len() != n || lower.len() + 1 != n.max(1) || upper.len() + 1 != n.max(1) {
        return Err(Error::Mismatch("tridiagonal dimensions".into()));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut pivot = diag[0];
    if pivot == 0.0 || !pivot.is_finite() {
        return Err(Error::Singular);
    }
    if n > 1 {
        c[0] = upper[0] / pivot;
    }
    d[0] = rhs[0] / pivot;
    for i in 1..n {
        pivot = diag[i] - lower[i - 1] * c[i - 1];
        if pivot == 0.0 || !pivot.is_finite() {
            return Err(Error::Singular);
        }
        if i + 1 < n {
            c[i] = upper[i] / pivot;
        }
        d[i] = (rhs[i] - lower[i - 1] * d[i - 1]) / pivot;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Ok(d)
}

/// Symmetric matrix in one of the two storage layouts the 1D schemes need.
#[derive(Debug, Clone, PartialEq)]
pub enum SymMatrix {
    /// `off[i]` is the entry at `(i, i + 1)`.
    Tridiagonal { diag: Vec<f64>, off: Vec<f64> },
    Dense(DMatrix<f64>),
}

impl SymMatrix {
    pub fn dim(&self) -> usize {
        match self {
            SymMatrix::Tridiagonal { diag, .. } => diag.len(),
            SymMatrix::Dense(m) => m.nrows(),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match self {
            SymMatrix::Tridiagonal { diag, off } => {
                if i == j {
                    diag[i]
                } else if i + 1 == j {
                    off[i]
                } else if j + 1 == i {
                    off[j]
                } else {
                    0.0
                }
            }
            SymMatrix::Dense(m) => m[(i, j)],
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            SymMatrix::Dense(m) => m.clone(),
            SymMatrix::Tridiagonal { .. } => {
                let n = self.dim();
                DMatrix::from_fn(n, n, |i, j| self.get(i, j))
            }
        }
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        match self {
            SymMatrix::Tridiagonal { diag, off } => {
                let n = diag.len();
                let mut out = vec![0.0; n];
                for i in 0..n {
                    let mut acc = diag[i] * v[i];
                    if i > 0 {
                        acc += off[i - 1] * v[i - 1];
                    }
                    if i + 1 < n {
                        acc += off[i] * v[i + 1];
                    }
                    out[i] = acc;
                }
                out
            }
            SymMatrix::Dense(m) => (m * nalgebra::DVector::from_column_slice(v)).as_slice().to_vec(),
        }
    }

    /// Principal submatrix on the given (sorted, contiguous or not) indices.
    pub fn restrict(&self, idx: &[usize]) -> SymMatrix {
        let contiguous = idx.windows(2).all(|w| w[1] == w[0] + 1);
        match self {
            SymMatrix::Tridiagonal { diag, off } if contiguous => {
                let d = idx.iter().map(|&i| diag[i]).collect();
                let o = idx.windows(2).map(|w| off[w[0]]).collect();
                SymMatrix::Tridiagonal { diag: d, off: o }
            }
            _ => SymMatrix::Dense(DMatrix::from_fn(idx.len(), idx.len(), |a, b| self.get(idx[a], idx[b]))),
        }
    }

    /// `self + scale * other`, keeping tridiagonal storage when both are tridiagonal.
    pub fn add_scaled(&self, other: &SymMatrix, scale: f64) -> SymMatrix {
        match (self, other) {
            (SymMatrix::Tridiagonal { diag: d1, off: o1 }, SymMatrix::Tridiagonal { diag: d2, off: o2 }) => {
                SymMatrix::Tridiagonal {
                    diag: d1.iter().zip(d2).map(|(a, b)| a + scale * b).collect(),
                    off: o1.iter().zip(o2).map(|(a, b)| a + scale * b).collect(),
                }
            }
            _ => SymMatrix::Dense(self.to_dense() + other.to_dense() * scale),
        }
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        match self {
            SymMatrix::Tridiagonal { diag, off } => solve_tridiagonal(off, diag, off, rhs),
            SymMatrix::Dense(m) => {
                let lu = m.clone().lu();
                let b = nalgebra::DVector::from_column_slice(rhs);
                let x = lu.solve(&b).ok_or(Error::Singular)?;
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Singular);
                }
                Ok(x.as_slice().to_vec())
            }
        }
    }
}

/// Symmetric banded matrix stored by lower diagonals, with an in-place
/// Cholesky factorization. `band[i][j]` holds entry `(i, i - j)`.
#[derive(Debug, Clone)]
pub struct BandedSym {
    n: usize,
    bw: usize,
    band: Vec<f64>,
}

impl BandedSym {
    pub fn zeros(n: usize, bw: usize) -> Self {
        BandedSym { n, bw, band: vec![0.0; n * (bw + 1)] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        let d = hi - lo;
        (d <= self.bw).then_some(hi * (self.bw + 1) + d)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.slot(i, j).map_or(0.0, |s| self.band[s])
    }

    /// Adds `v` to entry `(i, j)` (and, implicitly, `(j, i)`).
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let s = self.slot(i, j).expect("entry outside band");
        self.band[s] += v;
    }

    pub fn add_diag(&mut self, i: usize, v: f64) {
        self.add(i, i, v);
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for i in 0..self.n {
            out[i] += self.band[i * (self.bw + 1)] * v[i];
            for d in 1..=self.bw.min(i) {
                let a = self.band[i * (self.bw + 1) + d];
                out[i] += a * v[i - d];
                out[i - d] += a * v[i];
            }
        }
        out
    }

    /// Cholesky factor `L` (same banded storage). Fails when a pivot is not positive.
    pub fn cholesky(&self) -> Result<BandedCholesky> {
        let n = self.n;
        let bw = self.bw;
        let w = bw + 1;
        let mut l = self.band.clone();
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                // entry (i, j)
                let mut s = l[i * w + (i - j)];
                let k0 = j0.max(j.saturating_sub(bw));
                for k in k0..j {
                    s -= l[i * w + (i - k)] * l[j * w + (j - k)];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::Singular);
                    }
                    l[i * w] = s.sqrt();
                } else {
                    l[i * w + (i - j)] = s / l[j * w];
                }
            }
        }
        Ok(BandedCholesky { n, bw, l })
    }
}

#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    l: Vec<f64>,
}

impl BandedCholesky {
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let w = self.bw + 1;
        let mut y = rhs.to_vec();
        for i in 0..self.n {
            let mut s = y[i];
            for k in i.saturating_sub(self.bw)..i {
                s -= self.l[i * w + (i - k)] * y[k];
            }
            y[i] = s / self.l[i * w];
        }
        for i in (0..self.n).rev() {
            let mut s = y[i];
            for k in i + 1..(i + self.bw + 1).min(self.n) {
                s -= self.l[k * w + (k - i)] * y[k];
            }
            y[i] = s / self.l[i * w];
        }
        y
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thomas_matches_dense() {
        let lower = [1.0, -0.5, 0.25];
        let diag = [4.0, 5.0, 6.0, 3.0];
        let upper = [0.5, 1.0, -1.0];
        let rhs = [1.0, 2.0, 3.0, 4.0];
        let x = solve_tridiagonal(&lower, &diag, &upper, &rhs).unwrap();
        let m = DMatrix::from_fn(4, 4, |i, j| {
            if i == j {
                diag[i]
            } else if j == i + 1 {
                upper[i]
            } else if i == j + 1 {
                lower[j]
            } else {
                0.0
            }
        });
        let r = m * nalgebra::DVector::from_column_slice(&x);
        for i in 0..4 {
            assert!((r[i] - rhs[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn banded_cholesky_solves_spd() {
        let n = 12;
        let bw = 3;
        let mut a = BandedSym::zeros(n, bw);
        for i in 0..n {
            a.add_diag(i, 10.0 + i as f64);
            for d in 1..=bw.min(i) {
                a.add(i, i - d, 1.0 / (1.0 + d as f64 + i as f64));
            }
        }
        let rhs: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let x = a.cholesky().unwrap().solve(&rhs);
        let r = a.mul_vec(&x);
        for i in 0..n {
            assert!((r[i] - rhs[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn banded_cholesky_rejects_indefinite() {
        let mut a = BandedSym::zeros(2, 1);
        a.add_diag(0, 1.0);
        a.add_diag(1, 1.0);
        a.add(1, 0, 2.0);
        assert!(a.cholesky().is_err());
    }
}
