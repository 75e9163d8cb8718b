//! Truncated number-basis representation of quadratic oscillator operators,
//! their eigenpairs, analytic wavefunctions and grid-to-Fock projection.
//!
//! Ladder conventions: `q = √(ħ/2mω_r)(a + a†)`, `p = i√(ħmω_r/2)(a† − a)`,
//! hence `pq + qp = iħ(a†² − a²)`. Every quadratic form is pentadiagonal with
//! the ±1 diagonals empty, so even and odd number states never mix.

use num_complex::Complex64 as C64;

use crate::curves::uniform_weights;
use crate::error::{Error, Result};
use crate::ho_design::{ErmakovDesign, QuadraticForm};
use crate::linalg::{tridiagonal_eigen, BandMatrix, Operator, StateVector};
use crate::{HBAR, MASS};

/// Hermitian operator in the first `N` number states of an oscillator of
/// frequency `omega_ref`.
#[derive(Debug, Clone, PartialEq)]
pub struct FockOperator {
    band: BandMatrix,
    omega_ref: f64,
}

/// Matrix of `form` in the number basis of frequency `omega_ref`.
pub fn build_operator(form: QuadraticForm, dim: usize, omega_ref: f64) -> Result<FockOperator> {
    if dim < 4 {
        return Err(Error::InvalidArgument(format!("Fock dimension must be at least 4, got {dim}")));
    }
    if !(omega_ref > 0.0) {
        return Err(Error::InvalidArgument(format!("omega_ref must be positive, got {omega_ref}")));
    }
    let q2 = HBAR / (2.0 * MASS * omega_ref);
    let p2 = HBAR * MASS * omega_ref / 2.0;
    let diag_scale = form.c_pp * p2 + form.c_qq * q2;
    let off_re = form.c_qq * q2 - form.c_pp * p2;
    let off_im = -HBAR * form.c_pq;

    let mut band = BandMatrix::zeros(dim, 2);
    for n in 0..dim {
        band.set(n, n, C64::new(diag_scale * (2.0 * n as f64 + 1.0), 0.0));
        if n + 2 < dim {
            let root = ((n + 1) as f64 * (n + 2) as f64).sqrt();
            let upper = C64::new(off_re * root, off_im * root);
            band.set(n, n + 2, upper);
            band.set(n + 2, n, upper.conj());
        }
    }
    Ok(FockOperator { band, omega_ref })
}

/// One eigenvalue with its unit eigenvector.
#[derive(Debug, Clone, PartialEq)]
pub struct Eigenpair {
    pub value: f64,
    pub vector: StateVector,
}

impl FockOperator {
    pub fn dim(&self) -> usize {
        self.band.dim()
    }

    pub fn omega_ref(&self) -> f64 {
        self.omega_ref
    }

    pub fn band(&self) -> &BandMatrix {
        &self.band
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.band.get(i, j)
    }

    /// The `k` lowest eigenpairs, ascending; each eigenvector has its
    /// largest-magnitude component real and positive.
    pub fn eigenpairs(&self, k: usize) -> Result<Vec<Eigenpair>> {
        let dim = self.dim();
        if k > dim {
            return Err(Error::InvalidArgument(format!("requested {k} eigenpairs of a {dim}-dimensional operator")));
        }
        let mut all = Vec::with_capacity(dim);
        for parity in 0..2 {
            let idx: Vec<usize> = (parity..dim).step_by(2).collect();
            let diag: Vec<f64> = idx.iter().map(|&n| self.band.get(n, n).re).collect();
            // Diagonal unitary that makes the sector's off-diagonals real positive.
            let mut phase = vec![0.0; idx.len()];
            let mut off = Vec::with_capacity(idx.len().saturating_sub(1));
            for j in 0..idx.len().saturating_sub(1) {
                let t = self.band.get(idx[j], idx[j + 1]);
                off.push(t.norm());
                phase[j + 1] = phase[j] - t.arg();
            }
            let (values, vectors) = tridiagonal_eigen(&diag, &off);
            for (col, value) in values.into_iter().enumerate() {
                let mut amplitudes = vec![C64::new(0.0, 0.0); dim];
                for (j, &n) in idx.iter().enumerate() {
                    amplitudes[n] = C64::from_polar(vectors[j][col], phase[j]);
                }
                all.push((value, amplitudes));
            }
        }
        all.sort_by(|a, b| a.0.total_cmp(&b.0));
        all.into_iter()
            .take(k)
            .map(|(value, amplitudes)| {
                Ok(Eigenpair {
                    value,
                    vector: StateVector::normalized(amplitudes)?.canonical_phase(),
                })
            })
            .collect()
    }
}

impl Operator for FockOperator {
    fn dim(&self) -> usize {
        self.band.dim()
    }

    fn apply(&self, psi: &[C64], out: &mut [C64]) {
        self.band.apply(psi, out)
    }

    fn to_band(&self) -> BandMatrix {
        self.band.clone()
    }
}

/// Normalized oscillator eigenfunctions `ψ_0..=ψ_max_n` of frequency `omega` at `x`.
///
/// Runs the three-term recurrence on normalized functions and carries the
/// Gaussian factor as a separate log-magnitude, rescaling whenever the
/// polynomial part grows large, so neither factor overflows or underflows
/// prematurely.
pub fn hermite_wavefunctions(max_n: usize, omega: f64, x: f64) -> Vec<f64> {
    let xi = (MASS * omega / HBAR).sqrt() * x;
    let mut log_scale = 0.25 * (MASS * omega / (std::f64::consts::PI * HBAR)).ln() - 0.5 * xi * xi;
    let mut out = Vec::with_capacity(max_n + 1);
    let mut prev = 0.0;
    let mut curr = 1.0;
    out.push(curr * log_scale.exp());
    for k in 0..max_n {
        let kf = k as f64;
        let next = (2.0 / (kf + 1.0)).sqrt() * xi * curr - (kf / (kf + 1.0)).sqrt() * prev;
        prev = curr;
        curr = next;
        let mag = curr.abs();
        if mag > 1e150 {
            prev /= mag;
            curr /= mag;
            log_scale += mag.ln();
        }
        out.push(curr * log_scale.exp());
    }
    out
}

/// Normalized `n`-th eigenfunction of an oscillator of frequency `omega`.
pub fn hermite_wavefunction(n: usize, omega: f64, x: f64) -> f64 {
    hermite_wavefunctions(n, omega, x)[n]
}

/// Eigenfunction `φ_n(t, x)` of the Ermakov invariant: the ω₀ eigenfunction
/// dilated by `b`, times the chirp `exp(i m ḃ x² / 2ħb)`.
pub fn invariant_mode_wavefunction(design: &ErmakovDesign, n: usize, t: f64, x: f64) -> C64 {
    let s = design.scaling(t);
    let envelope = hermite_wavefunction(n, design.omega0(), x / s.b) / s.b.sqrt();
    C64::from_polar(envelope, MASS * s.b_dot * x * x / (2.0 * HBAR * s.b))
}

/// Uniform position grid symmetric about 0 with composite-Simpson weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionGrid {
    x_max: f64,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl PositionGrid {
    pub fn symmetric(half_width: f64, n_points: usize) -> Result<Self> {
        if !(half_width > 0.0) || n_points < 4 {
            return Err(Error::InvalidArgument(format!(
                "position grid needs a positive half-width and at least 4 points, got {half_width}, {n_points}"
            )));
        }
        let h = 2.0 * half_width / (n_points - 1) as f64;
        let points = (0..n_points).map(|i| -half_width + h * i as f64).collect();
        Ok(Self {
            x_max: half_width,
            points,
            weights: uniform_weights(n_points, h),
        })
    }

    /// `[−12, 12]` oscillator lengths of `omega`, 1024 points.
    pub fn default_for(omega: f64) -> Self {
        Self::symmetric(12.0 * (HBAR / (MASS * omega)).sqrt(), 1024).expect("valid default grid")
    }

    pub fn x_min(&self) -> f64 {
        -self.x_max
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `∫ |f|² dx` by the grid rule.
    pub fn norm_squared(&self, samples: &[C64]) -> f64 {
        self.weights.iter().zip(samples).map(|(w, z)| w * z.norm_sqr()).sum()
    }
}

/// Result of projecting a sampled wavefunction onto the truncated basis.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    /// Renormalized Fock amplitudes.
    pub state: StateVector,
    /// Grid norm not captured by the first `N` number states.
    pub discarded_norm: f64,
    pub grid_norm: f64,
}

/// Above this fraction of lost norm the truncated basis is rejected.
pub const MAX_DISCARDED_NORM: f64 = 1e-6;

/// Coefficients `<n|ψ>` for `n < dim` by quadrature on `grid`.
pub fn project_to_fock(samples: &[C64], grid: &PositionGrid, dim: usize, omega_ref: f64) -> Result<Projection> {
    if samples.len() != grid.len() {
        return Err(Error::DimensionMismatch {
            expected: grid.len(),
            got: samples.len(),
        });
    }
    if dim < 4 {
        return Err(Error::InvalidArgument(format!("Fock dimension must be at least 4, got {dim}")));
    }
    let grid_norm = grid.norm_squared(samples);
    if !(grid_norm > 0.0) {
        return Err(Error::ZeroSamples);
    }
    let peak = samples.iter().map(|z| z.norm_sqr()).fold(0.0, f64::max);
    let edge = samples[0].norm_sqr().max(samples[samples.len() - 1].norm_sqr());
    if edge > 1e-12 * peak {
        return Err(Error::GridTooNarrow { edge: edge / peak });
    }

    let mut coefficients = vec![C64::new(0.0, 0.0); dim];
    for ((&x, &w), &psi) in grid.points().iter().zip(grid.weights()).zip(samples) {
        if psi == C64::new(0.0, 0.0) {
            continue;
        }
        let basis = hermite_wavefunctions(dim - 1, omega_ref, x);
        for (c, phi) in coefficients.iter_mut().zip(basis) {
            *c += w * phi * psi;
        }
    }
    let captured: f64 = coefficients.iter().map(|c| c.norm_sqr()).sum();
    let discarded_norm = grid_norm - captured;
    if discarded_norm / grid_norm > MAX_DISCARDED_NORM {
        return Err(Error::TruncationInsufficient {
            discarded: discarded_norm / grid_norm,
        });
    }
    Ok(Projection {
        state: StateVector::normalized(coefficients)?,
        discarded_norm,
        grid_norm,
    })
}
