//! Small dense/banded complex linear algebra: band matrices, state vectors and
//! a symmetric tridiagonal eigensolver.

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

/// A Hermitian operator acting on a finite-dimensional state space.
pub trait Operator {
    fn dim(&self) -> usize;

    /// `out = A psi`.
    fn apply(&self, psi: &[C64], out: &mut [C64]);

    fn to_band(&self) -> BandMatrix;

    /// `<psi|A|psi>`, real part.
    fn expectation(&self, psi: &[C64]) -> f64 {
        let mut out = vec![C64::new(0.0, 0.0); psi.len()];
        self.apply(psi, &mut out);
        inner(psi, &out).re
    }
}

/// Square complex matrix with entries only on diagonals `-k..=k`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandMatrix {
    n: usize,
    k: usize,
    data: Vec<C64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, k: usize) -> Self {
        let k = k.min(n.saturating_sub(1));
        Self {
            n,
            k,
            data: vec![C64::new(0.0, 0.0); n * (2 * k + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn half_bandwidth(&self) -> usize {
        self.k
    }

    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        let offset = j as isize - i as isize;
        (offset.unsigned_abs() <= self.k).then(|| i * (2 * self.k + 1) + (offset + self.k as isize) as usize)
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.slot(i, j).map_or(C64::new(0.0, 0.0), |s| self.data[s])
    }

    /// Panics if `(i, j)` lies outside the band.
    pub fn set(&mut self, i: usize, j: usize, value: C64) {
        let s = self.slot(i, j).expect("entry outside band");
        self.data[s] = value;
    }

    fn column_range(&self, i: usize) -> std::ops::Range<usize> {
        i.saturating_sub(self.k)..(i + self.k + 1).min(self.n)
    }

    pub fn apply(&self, x: &[C64], out: &mut [C64]) {
        for (i, o) in out.iter_mut().enumerate().take(self.n) {
            let mut acc = C64::new(0.0, 0.0);
            for j in self.column_range(i) {
                acc += self.data[i * (2 * self.k + 1) + j + self.k - i] * x[j];
            }
            *o = acc;
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, factor: C64) -> Self {
        Self {
            n: self.n,
            k: self.k,
            data: self.data.iter().map(|z| z * factor).collect(),
        }
    }

    /// `a * self + b * other` with the wider band.
    pub fn combine(&self, a: C64, other: &Self, b: C64) -> Self {
        assert_eq!(self.n, other.n, "dimension mismatch");
        let mut out = Self::zeros(self.n, self.k.max(other.k));
        for i in 0..self.n {
            for j in out.column_range(i) {
                let v = a * self.get(i, j) + b * other.get(i, j);
                out.set(i, j, v);
            }
        }
        out
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n, "dimension mismatch");
        let mut out = Self::zeros(self.n, self.k + other.k);
        for i in 0..self.n {
            for m in self.column_range(i) {
                let a = self.get(i, m);
                if a == C64::new(0.0, 0.0) {
                    continue;
                }
                for j in other.column_range(m) {
                    let s = out.slot(i, j).unwrap();
                    out.data[s] += a * other.get(m, j);
                }
            }
        }
        out
    }

    /// `[self, other]`.
    pub fn commutator(&self, other: &Self) -> Self {
        let ab = self.mul(other);
        let ba = other.mul(self);
        ab.combine(C64::new(1.0, 0.0), &ba, C64::new(-1.0, 0.0))
    }

    /// `‖A - A†‖_F / ‖A‖_F` (0 for the zero matrix).
    pub fn hermiticity_defect(&self) -> f64 {
        let norm = self.frobenius_norm();
        if norm == 0.0 {
            return 0.0;
        }
        let mut acc = 0.0;
        for i in 0..self.n {
            for j in self.column_range(i) {
                acc += (self.get(i, j) - self.get(j, i).conj()).norm_sqr();
            }
        }
        acc.sqrt() / norm
    }

    pub fn to_dense(&self) -> Vec<Vec<C64>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j)).collect())
            .collect()
    }
}

impl Operator for BandMatrix {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, psi: &[C64], out: &mut [C64]) {
        BandMatrix::apply(self, psi, out)
    }

    fn to_band(&self) -> BandMatrix {
        self.clone()
    }
}

/// `<a|b>`.
pub fn inner(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm(a: &[C64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Normalized complex amplitude vector.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    amplitudes: Vec<C64>,
}

impl StateVector {
    /// Accepts amplitudes whose norm is 1 within 1e-12.
    pub fn new(amplitudes: Vec<C64>) -> Result<Self> {
        let n = norm(&amplitudes);
        if amplitudes.is_empty() || (n - 1.0).abs() > 1e-12 {
            return Err(Error::NotNormalized { norm: n });
        }
        Ok(Self { amplitudes })
    }

    /// Rescales to unit norm; fails on the zero vector.
    pub fn normalized(mut amplitudes: Vec<C64>) -> Result<Self> {
        let n = norm(&amplitudes);
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::NotNormalized { norm: n });
        }
        for a in &mut amplitudes {
            *a /= n;
        }
        Ok(Self { amplitudes })
    }

    /// Unit vector `|index>` in a space of `dim` states.
    pub fn basis(dim: usize, index: usize) -> Result<Self> {
        if index >= dim {
            return Err(Error::InvalidArgument(format!("basis index {index} outside dimension {dim}")));
        }
        let mut amplitudes = vec![C64::new(0.0, 0.0); dim];
        amplitudes[index] = C64::new(1.0, 0.0);
        Ok(Self { amplitudes })
    }

    /// Wraps amplitudes without checking the norm (propagated states carry drift).
    pub(crate) fn unchecked(amplitudes: Vec<C64>) -> Self {
        Self { amplitudes }
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        norm(&self.amplitudes)
    }

    /// `<self|other>`.
    pub fn overlap(&self, other: &Self) -> C64 {
        inner(&self.amplitudes, &other.amplitudes)
    }

    pub fn population(&self, index: usize) -> f64 {
        self.amplitudes[index].norm_sqr()
    }

    /// Multiplies every amplitude by `e^{i phase}`.
    pub fn with_phase(mut self, phase: f64) -> Self {
        let f = C64::from_polar(1.0, phase);
        for a in &mut self.amplitudes {
            *a *= f;
        }
        self
    }

    /// Fixes the global phase so the largest-magnitude component is real positive.
    pub fn canonical_phase(self) -> Self {
        let pivot = self
            .amplitudes
            .iter()
            .enumerate()
            .fold((0, 0.0), |(bi, bm), (i, z)| if z.norm() > bm { (i, z.norm()) } else { (bi, bm) })
            .0;
        let arg = self.amplitudes[pivot].arg();
        self.with_phase(-arg)
    }
}

/// Eigen-decomposition of a real symmetric tridiagonal matrix by implicit QL.
///
/// `diag` has length n, `off[i]` couples rows i and i+1 (length n-1).
/// Returns ascending eigenvalues and column eigenvectors `vectors[row][col]`.
pub fn tridiagonal_eigen(diag: &[f64], off: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = diag.len();
    let mut d = diag.to_vec();
    let mut e: Vec<f64> = off.iter().copied().chain(std::iter::once(0.0)).take(n).collect();
    e.resize(n, 0.0);
    let mut v = vec![vec![0.0; n]; n];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    if n == 0 {
        return (d, v);
    }

    let eps = f64::EPSILON;
    let mut f = 0.0;
    let mut tst1: f64 = 0.0;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 && e[m].abs() > eps * tst1 {
            m += 1;
        }
        if m > l {
            for _ in 0..100 {
                let g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    let g = c * e[i];
                    let h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    for row in v.iter_mut() {
                        let h = row[i + 1];
                        row[i + 1] = s * row[i] + c * h;
                        row[i] = c * row[i] - s * h;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]));
    let values = order.iter().map(|&i| d[i]).collect();
    let vectors = (0..n)
        .map(|row| order.iter().map(|&col| v[row][col]).collect())
        .collect();
    (values, vectors)
}
