//! Two-level atom: invariant angles (γ, β) to physical controls (Ω_R, Δ),
//! Lewis-Riesenfeld phases, endpoint commutation, Hamiltonian reconstruction,
//! transitionless-tracking terms and the standard presets.
//!
//! Basis order is `[|2⟩, |1⟩]`; the Hamiltonian is
//! `(ħ/2)[[Δ, Ω_R e^{iφ}], [Ω_R e^{−iφ}, −Δ]]`.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

use num_complex::Complex64 as C64;

use crate::curves::{cumulative_integral, fit_polynomial, BoundaryConstraint, PolynomialCurve, SampledScalar, TimeGrid};
use crate::error::{Error, Result};
use crate::linalg::{BandMatrix, Operator, StateVector};
use crate::HBAR;

#[cfg(test)]
const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Hermitian 2×2 matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoLevelMatrix {
    m: [[C64; 2]; 2],
}

impl TwoLevelMatrix {
    /// Checks Hermiticity to 1e−14 relative.
    pub fn new(m: [[C64; 2]; 2]) -> Result<Self> {
        let out = Self { m };
        let defect = out.hermiticity_defect();
        if defect > 1e-14 * out.frobenius_norm().max(1.0) {
            return Err(Error::NotHermitian { t: f64::NAN, defect });
        }
        Ok(out)
    }

    /// `[[d0, upper], [upper*, d1]]`.
    pub fn hermitian(d0: f64, d1: f64, upper: C64) -> Self {
        Self {
            m: [[C64::new(d0, 0.0), upper], [upper.conj(), C64::new(d1, 0.0)]],
        }
    }

    pub fn zero() -> Self {
        Self::hermitian(0.0, 0.0, C64::new(0.0, 0.0))
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.m[i][j]
    }

    pub fn entries(&self) -> [[C64; 2]; 2] {
        self.m
    }

    pub fn trace(&self) -> f64 {
        (self.m[0][0] + self.m[1][1]).re
    }

    pub fn det(&self) -> f64 {
        (self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]).re
    }

    /// Ascending.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let mean = 0.5 * self.trace();
        let half_gap = (0.25 * (self.m[0][0] - self.m[1][1]).re.powi(2) + self.m[0][1].norm_sqr()).sqrt();
        (mean - half_gap, mean + half_gap)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.m.iter().flatten().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn hermiticity_defect(&self) -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                d = d.max((self.m[i][j] - self.m[j][i].conj()).norm());
            }
        }
        d
    }

    /// `AB − BA` (anti-Hermitian, so returned as a plain array).
    pub fn commutator(&self, other: &Self) -> [[C64; 2]; 2] {
        let mut out = [[C64::new(0.0, 0.0); 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    out[i][j] += self.m[i][k] * other.m[k][j] - other.m[i][k] * self.m[k][j];
                }
            }
        }
        out
    }

    pub fn commutator_norm(&self, other: &Self) -> f64 {
        self.commutator(other).iter().flatten().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs_difference(&self, other: &Self) -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                d = d.max((self.m[i][j] - other.m[i][j]).norm());
            }
        }
        d
    }

    pub fn apply_to(&self, psi: [C64; 2]) -> [C64; 2] {
        [
            self.m[0][0] * psi[0] + self.m[0][1] * psi[1],
            self.m[1][0] * psi[0] + self.m[1][1] * psi[1],
        ]
    }
}

impl Add for TwoLevelMatrix {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        let mut m = self.m;
        for i in 0..2 {
            for j in 0..2 {
                m[i][j] += rhs.m[i][j];
            }
        }
        Self { m }
    }
}

impl Sub for TwoLevelMatrix {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        let mut m = self.m;
        for i in 0..2 {
            for j in 0..2 {
                m[i][j] -= rhs.m[i][j];
            }
        }
        Self { m }
    }
}

impl Mul<TwoLevelMatrix> for f64 {
    type Output = TwoLevelMatrix;
    fn mul(self, rhs: TwoLevelMatrix) -> TwoLevelMatrix {
        let mut m = rhs.m;
        for row in m.iter_mut() {
            for z in row.iter_mut() {
                *z *= self;
            }
        }
        TwoLevelMatrix { m }
    }
}

impl Operator for TwoLevelMatrix {
    fn dim(&self) -> usize {
        2
    }

    fn apply(&self, psi: &[C64], out: &mut [C64]) {
        let r = self.apply_to([psi[0], psi[1]]);
        out[0] = r[0];
        out[1] = r[1];
    }

    fn to_band(&self) -> BandMatrix {
        let mut b = BandMatrix::zeros(2, 1);
        for i in 0..2 {
            for j in 0..2 {
                b.set(i, j, self.m[i][j]);
            }
        }
        b
    }
}

/// Instantaneous control values. `omega_r` is non-negative for anything
/// produced by this module.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Controls {
    pub delta: f64,
    pub omega_r: f64,
    pub phi: f64,
}

/// Time derivatives of [`Controls`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlRates {
    pub delta_dot: f64,
    pub omega_r_dot: f64,
    pub phi_dot: f64,
}

/// Mixing angle, energies and eigenvectors of the instantaneous Hamiltonian.
#[derive(Debug, Clone, PartialEq)]
pub struct Eigensystem {
    pub theta: f64,
    pub e_plus: f64,
    pub e_minus: f64,
    pub n_plus: StateVector,
    pub n_minus: StateVector,
}

impl Controls {
    /// Generalized Rabi frequency `√(Δ² + Ω_R²)`.
    pub fn omega(&self) -> f64 {
        self.delta.hypot(self.omega_r)
    }

    pub fn hamiltonian(&self) -> TwoLevelMatrix {
        0.5 * HBAR * TwoLevelMatrix::hermitian(self.delta, -self.delta, C64::from_polar(self.omega_r, self.phi))
    }

    /// `t` only labels the error.
    pub fn eigensystem(&self, t: f64) -> Result<Eigensystem> {
        let omega = self.omega();
        if !(omega > 0.0) {
            return Err(Error::DegeneratePoint { t });
        }
        let theta = (self.delta / omega).clamp(-1.0, 1.0).acos();
        let (s, c) = (0.5 * theta).sin_cos();
        let e = C64::from_polar(1.0, self.phi);
        Ok(Eigensystem {
            theta,
            e_plus: 0.5 * HBAR * omega,
            e_minus: -0.5 * HBAR * omega,
            n_plus: StateVector::normalized(vec![c * e, C64::new(s, 0.0)])?,
            n_minus: StateVector::normalized(vec![s * e, C64::new(-c, 0.0)])?,
        })
    }

    fn folded(delta: f64, omega_r: f64, phi: f64) -> Self {
        if omega_r < 0.0 {
            Self { delta, omega_r: -omega_r, phi: phi + PI }
        } else {
            Self { delta, omega_r, phi }
        }
    }
}

/// Any source of controls that can be evaluated at arbitrary times.
pub trait ControlSchedule: Send + Sync {
    fn t_f(&self) -> f64;
    fn controls_at(&self, t: f64) -> Result<Controls>;
    fn rates_at(&self, t: f64) -> Result<ControlRates>;

    fn hamiltonian_at(&self, t: f64) -> Result<TwoLevelMatrix> {
        Ok(self.controls_at(t)?.hamiltonian())
    }
}

/// Fourth-order first derivative of a vector-valued function, one-sided
/// near the ends of `[lo, hi]`.
pub(crate) fn fd_derivative<const N: usize>(
    f: impl Fn(f64) -> Result<[f64; N]>,
    t: f64,
    h: f64,
    lo: f64,
    hi: f64,
) -> Result<[f64; N]> {
    let (offsets, weights): ([f64; 5], [f64; 5]) = if t - 2.0 * h >= lo && t + 2.0 * h <= hi {
        ([-2.0, -1.0, 0.0, 1.0, 2.0], [1.0, -8.0, 0.0, 8.0, -1.0])
    } else if t - 2.0 * h < lo {
        ([0.0, 1.0, 2.0, 3.0, 4.0], [-25.0, 48.0, -36.0, 16.0, -3.0])
    } else {
        ([0.0, -1.0, -2.0, -3.0, -4.0], [25.0, -48.0, 36.0, -16.0, 3.0])
    };
    let mut out = [0.0; N];
    for (o, w) in offsets.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        let v = f(t + o * h)?;
        for (acc, x) in out.iter_mut().zip(v) {
            *acc += w * x;
        }
    }
    for x in out.iter_mut() {
        *x /= 12.0 * h;
    }
    Ok(out)
}

/// Fourth-order derivative of samples on a uniform grid (at least 5 nodes).
pub(crate) fn sampled_derivative(values: &[f64], h: f64) -> Vec<f64> {
    let n = values.len();
    let dot = |start: usize, w: [f64; 5]| (0..5).map(|k| w[k] * values[start + k]).sum::<f64>();
    (0..n)
        .map(|i| {
            let d = if i >= 2 && i + 2 < n {
                dot(i - 2, [1.0, -8.0, 0.0, 8.0, -1.0])
            } else if i == 0 {
                dot(0, [-25.0, 48.0, -36.0, 16.0, -3.0])
            } else if i == 1 {
                dot(0, [-3.0, -10.0, 18.0, -6.0, 1.0])
            } else if i == n - 2 {
                dot(n - 5, [-1.0, 6.0, -18.0, 10.0, 3.0])
            } else {
                dot(n - 5, [3.0, -16.0, 36.0, -48.0, 25.0])
            };
            d / (12.0 * h)
        })
        .collect()
}

/// Invariant parameterization by the angles γ(t), β(t) with laser phase φ(t).
#[derive(Debug, Clone, PartialEq)]
pub struct AngleDesign {
    gamma: PolynomialCurve,
    beta: PolynomialCurve,
    phi: PolynomialCurve,
    omega0: f64,
    t_f: f64,
    // γ and β − φ re-expanded about each endpoint with the nearest multiple
    // of π (resp. π/2, counted by the integer) removed.
    gamma_start: PolynomialCurve,
    gamma_end: PolynomialCurve,
    x_start: (PolynomialCurve, i64),
    x_end: (PolynomialCurve, i64),
}

fn reduced_about(p: &PolynomialCurve, t0: f64, period: f64) -> (PolynomialCurve, i64) {
    let mut c = p.taylor_shift(t0).coefficients().to_vec();
    let m = (c[0] / period).round();
    c[0] -= m * period;
    if c[0].abs() <= 1e-12 {
        c[0] = 0.0;
    }
    (PolynomialCurve::new(c), m as i64)
}

fn difference(a: &PolynomialCurve, b: &PolynomialCurve) -> PolynomialCurve {
    let (a, b) = (a.coefficients(), b.coefficients());
    let c = (0..a.len().max(b.len()))
        .map(|j| a.get(j).copied().unwrap_or(0.0) - b.get(j).copied().unwrap_or(0.0))
        .collect();
    PolynomialCurve::new(c)
}

/// `(sin, cos)` of `m·π/2 + r`.
fn quarter_sin_cos(m: i64, r: f64) -> (f64, f64) {
    let (s, c) = r.sin_cos();
    match m.rem_euclid(4) {
        0 => (s, c),
        1 => (c, -s),
        2 => (-s, -c),
        _ => (-c, s),
    }
}

impl AngleDesign {
    /// γ endpoint conditions are reported by [`commutator_endpoint_report`],
    /// not enforced here.
    pub fn new(gamma: PolynomialCurve, beta: PolynomialCurve, phi: PolynomialCurve, omega0: f64, t_f: f64) -> Result<Self> {
        if !(t_f > 0.0) || !t_f.is_finite() {
            return Err(Error::InvalidArgument(format!("t_f must be positive, got {t_f}")));
        }
        if !(omega0 > 0.0) {
            return Err(Error::InvalidArgument(format!("Omega0 must be positive, got {omega0}")));
        }
        let gamma_start = reduced_about(&gamma, 0.0, PI).0;
        let gamma_end = reduced_about(&gamma, t_f, PI).0;
        let x = difference(&beta, &phi);
        let x_start = reduced_about(&x, 0.0, 0.5 * PI);
        let x_end = reduced_about(&x, t_f, 0.5 * PI);
        Ok(Self {
            gamma,
            beta,
            phi,
            omega0,
            t_f,
            gamma_start,
            gamma_end,
            x_start,
            x_end,
        })
    }

    pub fn gamma(&self) -> &PolynomialCurve {
        &self.gamma
    }

    pub fn beta(&self) -> &PolynomialCurve {
        &self.beta
    }

    pub fn phi(&self) -> &PolynomialCurve {
        &self.phi
    }

    pub fn omega0(&self) -> f64 {
        self.omega0
    }

    pub fn t_f(&self) -> f64 {
        self.t_f
    }

    /// `(ħΩ₀/2)[[cos γ, sin γ e^{iβ}], [sin γ e^{−iβ}, −cos γ]]`.
    pub fn invariant_matrix(&self, t: f64) -> TwoLevelMatrix {
        let (s, c) = self.gamma.value(t).sin_cos();
        0.5 * HBAR * self.omega0 * TwoLevelMatrix::hermitian(c, -c, C64::from_polar(s, self.beta.value(t)))
    }

    /// Exact `dI/dt`.
    pub fn invariant_rate(&self, t: f64) -> TwoLevelMatrix {
        let (s, c) = self.gamma.value(t).sin_cos();
        let g1 = self.gamma.eval(t, 1);
        let b1 = self.beta.eval(t, 1);
        let upper = C64::new(c * g1, s * b1) * C64::from_polar(1.0, self.beta.value(t));
        0.5 * HBAR * self.omega0 * TwoLevelMatrix::hermitian(-s * g1, s * g1, upper)
    }

    /// Eigenvectors `|φ₊⟩, |φ₋⟩` of the invariant (eigenvalues `±ħΩ₀/2`).
    pub fn invariant_modes(&self, t: f64) -> (StateVector, StateVector) {
        let (s, c) = (0.5 * self.gamma.value(t)).sin_cos();
        let e = C64::from_polar(1.0, self.beta.value(t));
        (
            StateVector::normalized(vec![c * e, C64::new(s, 0.0)]).expect("unit"),
            StateVector::normalized(vec![s * e, C64::new(-c, 0.0)]).expect("unit"),
        )
    }

    /// `(γ − nπ)` about the nearer endpoint with its first derivative, and
    /// `(sin, cos)` of β − φ evaluated from the matching reduced expansion.
    fn reduced_angles(&self, t: f64) -> (f64, f64, (f64, f64)) {
        let (g, (x, m), t0) = if t <= 0.5 * self.t_f {
            (&self.gamma_start, &self.x_start, 0.0)
        } else {
            (&self.gamma_end, &self.x_end, self.t_f)
        };
        let tau = t - t0;
        (g.value(tau), g.eval(tau, 1), quarter_sin_cos(*m, x.value(tau)))
    }

    /// Controls before the sign of Ω_R is folded into φ.
    fn signed_controls(&self, t: f64) -> Result<(f64, f64)> {
        let (g, g1, (sin_x, cos_x)) = self.reduced_angles(t);
        let beta_dot = self.beta.eval(t, 1);
        let sin_g = g.sin();

        if sin_g.abs() <= 1e-150 {
            // γ = nπ: Ω_R cot γ cos(β−φ) is 0·∞. Near a zero of order k,
            // γ̇ cot γ → k/τ and cos(β−φ)/sin(β−φ) → −(β̇−φ̇)τ.
            let k = zero_order(&self.gamma, t, self.t_f);
            let x_dot = beta_dot - self.phi.eval(t, 1);
            if k > 0 && cos_x.abs() > 1e-6 {
                return Err(Error::InfiniteDetuning { t });
            }
            let omega_r = if sin_x.abs() < 1e-12 {
                if g1.abs() > 1e-12 {
                    return Err(Error::InfiniteRabi { t });
                }
                0.0
            } else {
                g1 / sin_x
            };
            return Ok((-(k as f64) * x_dot - beta_dot, omega_r));
        }

        if sin_x.abs() < 1e-12 {
            if g1.abs() > 1e-12 {
                return Err(Error::InfiniteRabi { t });
            }
            return Ok((-beta_dot, 0.0));
        }
        let omega_r = g1 / sin_x;
        let delta = omega_r * g.cos() / sin_g * cos_x - beta_dot;
        if !delta.is_finite() {
            return Err(Error::InfiniteDetuning { t });
        }
        Ok((delta, omega_r))
    }
}

/// Order of the lowest non-negligible Taylor term of `γ` about `t`
/// (after removing the nearest multiple of π); 0 if γ is locally constant.
fn zero_order(gamma: &PolynomialCurve, t: f64, t_f: f64) -> usize {
    let c = gamma.taylor_shift(t);
    let scaled: Vec<f64> = c
        .coefficients()
        .iter()
        .enumerate()
        .skip(1)
        .map(|(j, a)| (a * t_f.powi(j as i32)).abs())
        .collect();
    let max = scaled.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    scaled.iter().position(|&a| a > 1e-6 * max).map_or(0, |j| j + 1)
}

impl ControlSchedule for AngleDesign {
    fn t_f(&self) -> f64 {
        self.t_f
    }

    fn controls_at(&self, t: f64) -> Result<Controls> {
        let (delta, omega_r) = self.signed_controls(t)?;
        Ok(Controls::folded(delta, omega_r, self.phi.value(t)))
    }

    fn rates_at(&self, t: f64) -> Result<ControlRates> {
        let h = 1e-3 * self.t_f;
        let [delta_dot, omega_r_dot] = fd_derivative(
            |s| self.signed_controls(s).map(|(d, o)| [d, o]),
            t,
            h,
            0.0,
            self.t_f,
        )?;
        let (_, omega_r) = self.signed_controls(t)?;
        Ok(ControlRates {
            delta_dot,
            omega_r_dot: if omega_r < 0.0 { -omega_r_dot } else { omega_r_dot },
            phi_dot: self.phi.eval(t, 1),
        })
    }
}

/// Controls given directly as polynomials Δ(t), Ω_R(t), φ(t).
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSchedule {
    pub delta: PolynomialCurve,
    pub omega_r: PolynomialCurve,
    pub phi: PolynomialCurve,
    pub t_f: f64,
}

impl ControlSchedule for CurveSchedule {
    fn t_f(&self) -> f64 {
        self.t_f
    }

    fn controls_at(&self, t: f64) -> Result<Controls> {
        Ok(Controls::folded(self.delta.value(t), self.omega_r.value(t), self.phi.value(t)))
    }

    fn rates_at(&self, t: f64) -> Result<ControlRates> {
        let sign = if self.omega_r.value(t) < 0.0 { -1.0 } else { 1.0 };
        Ok(ControlRates {
            delta_dot: self.delta.eval(t, 1),
            omega_r_dot: sign * self.omega_r.eval(t, 1),
            phi_dot: self.phi.eval(t, 1),
        })
    }
}

/// Controls given by mixing angle θ(t) and generalized Rabi frequency Ω(t):
/// Δ = Ω cos θ, Ω_R = Ω sin θ.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingSchedule {
    pub theta: PolynomialCurve,
    pub omega: PolynomialCurve,
    pub phi: PolynomialCurve,
    pub t_f: f64,
}

impl MixingSchedule {
    fn signed(&self, t: f64) -> (f64, f64) {
        let (s, c) = self.theta.value(t).sin_cos();
        let w = self.omega.value(t);
        (w * c, w * s)
    }
}

impl ControlSchedule for MixingSchedule {
    fn t_f(&self) -> f64 {
        self.t_f
    }

    fn controls_at(&self, t: f64) -> Result<Controls> {
        let (delta, omega_r) = self.signed(t);
        Ok(Controls::folded(delta, omega_r, self.phi.value(t)))
    }

    fn rates_at(&self, t: f64) -> Result<ControlRates> {
        let (s, c) = self.theta.value(t).sin_cos();
        let (w, w1, th1) = (self.omega.value(t), self.omega.eval(t, 1), self.theta.eval(t, 1));
        let sign = if w * s < 0.0 { -1.0 } else { 1.0 };
        Ok(ControlRates {
            delta_dot: w1 * c - w * s * th1,
            omega_r_dot: sign * (w1 * s + w * c * th1),
            phi_dot: self.phi.eval(t, 1),
        })
    }
}

/// A reference (non-invariant) control schedule in either parameterization.
#[derive(Debug, Clone, PartialEq)]
pub enum ReferenceSchedule {
    Curves(CurveSchedule),
    Mixing(MixingSchedule),
}

impl ControlSchedule for ReferenceSchedule {
    fn t_f(&self) -> f64 {
        match self {
            Self::Curves(s) => s.t_f,
            Self::Mixing(s) => s.t_f,
        }
    }

    fn controls_at(&self, t: f64) -> Result<Controls> {
        match self {
            Self::Curves(s) => s.controls_at(t),
            Self::Mixing(s) => s.controls_at(t),
        }
    }

    fn rates_at(&self, t: f64) -> Result<ControlRates> {
        match self {
            Self::Curves(s) => s.rates_at(t),
            Self::Mixing(s) => s.rates_at(t),
        }
    }
}

/// Δ, Ω_R, φ sampled on a common grid, with their time derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct TLSControls {
    grid: TimeGrid,
    delta: SampledScalar,
    omega_r: SampledScalar,
    phi: SampledScalar,
    rates: Vec<ControlRates>,
}

impl TLSControls {
    pub fn from_schedule(schedule: &dyn ControlSchedule, grid: &TimeGrid) -> Result<Self> {
        let mut values = Vec::with_capacity(grid.len());
        let mut rates = Vec::with_capacity(grid.len());
        for &t in grid.nodes() {
            values.push(schedule.controls_at(t)?);
            rates.push(schedule.rates_at(t)?);
        }
        Ok(Self::assemble(grid, &values, rates))
    }

    /// Raw samples; derivatives by fourth-order differences, so the grid must
    /// be uniform with at least 5 nodes. Negative Ω_R is folded into φ.
    pub fn from_samples(grid: &TimeGrid, delta: Vec<f64>, omega_r: Vec<f64>, phi: Vec<f64>) -> Result<Self> {
        for v in [&delta, &omega_r, &phi] {
            if v.len() != grid.len() {
                return Err(Error::DimensionMismatch {
                    expected: grid.len(),
                    got: v.len(),
                });
            }
        }
        let h = grid
            .step()
            .filter(|_| grid.len() >= 5)
            .ok_or_else(|| Error::InvalidArgument("sampled controls need a uniform grid of at least 5 nodes".into()))?;
        let dd = sampled_derivative(&delta, h);
        let od = sampled_derivative(&omega_r, h);
        let pd = sampled_derivative(&phi, h);
        let values: Vec<Controls> = (0..grid.len()).map(|i| Controls::folded(delta[i], omega_r[i], phi[i])).collect();
        let rates = (0..grid.len())
            .map(|i| ControlRates {
                delta_dot: dd[i],
                omega_r_dot: if omega_r[i] < 0.0 { -od[i] } else { od[i] },
                phi_dot: pd[i],
            })
            .collect();
        Ok(Self::assemble(grid, &values, rates))
    }

    fn assemble(grid: &TimeGrid, values: &[Controls], rates: Vec<ControlRates>) -> Self {
        let col = |f: fn(&Controls) -> f64| SampledScalar::new(grid.clone(), values.iter().map(f).collect()).expect("same grid");
        Self {
            grid: grid.clone(),
            delta: col(|c| c.delta),
            omega_r: col(|c| c.omega_r),
            phi: col(|c| c.phi),
            rates,
        }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn delta(&self) -> &SampledScalar {
        &self.delta
    }

    pub fn omega_r(&self) -> &SampledScalar {
        &self.omega_r
    }

    pub fn phi(&self) -> &SampledScalar {
        &self.phi
    }

    pub fn at(&self, node: usize) -> Controls {
        Controls {
            delta: self.delta.value(node),
            omega_r: self.omega_r.value(node),
            phi: self.phi.value(node),
        }
    }

    pub fn rates(&self, node: usize) -> ControlRates {
        self.rates[node]
    }

    pub fn max_control(&self) -> f64 {
        self.delta
            .values()
            .iter()
            .chain(self.omega_r.values())
            .fold(0.0, |m: f64, v| m.max(v.abs()))
    }
}

pub fn controls_from_angles(design: &AngleDesign, grid: &TimeGrid) -> Result<TLSControls> {
    TLSControls::from_schedule(design, grid)
}

pub fn hamiltonian(controls: &TLSControls, node: usize) -> TwoLevelMatrix {
    controls.at(node).hamiltonian()
}

pub fn invariant_matrix(design: &AngleDesign, t: f64) -> TwoLevelMatrix {
    design.invariant_matrix(t)
}

pub fn instantaneous_eigensystem(controls: &TLSControls, node: usize) -> Result<Eigensystem> {
    controls.at(node).eigensystem(controls.grid.node(node))
}

/// Integrand `½(Δ − 2Ω̃)` of the LR phase α₊.
fn lr_phase_rate(design: &AngleDesign, c: &Controls, t: f64) -> f64 {
    let gamma = design.gamma.value(t);
    let beta = design.beta.value(t);
    let tilde = (c.delta + design.beta.eval(t, 1)) * (0.5 * gamma).cos().powi(2)
        + 0.5 * c.omega_r * gamma.sin() * (beta - c.phi).cos();
    0.5 * (c.delta - 2.0 * tilde)
}

/// `(α₊, α₋)` at node `up_to`.
pub fn lr_phase_tls(design: &AngleDesign, controls: &TLSControls, up_to: usize) -> Result<(f64, f64)> {
    let all = lr_phase_curve(design, controls);
    let a = *all
        .get(up_to)
        .ok_or_else(|| Error::InvalidArgument(format!("node {up_to} outside grid of {} nodes", controls.len())))?;
    Ok((a, -a))
}

/// α₊ at every node.
pub fn lr_phase_curve(design: &AngleDesign, controls: &TLSControls) -> Vec<f64> {
    let values = controls
        .grid
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, &t)| lr_phase_rate(design, &controls.at(i), t))
        .collect();
    cumulative_integral(&SampledScalar::new(controls.grid.clone(), values).expect("same grid"))
}

/// Endpoint commutation of H and I.
#[derive(Debug, Clone, PartialEq)]
pub struct EndpointReport {
    pub norm_start: f64,
    pub norm_end: f64,
    pub rabi_zero_start: bool,
    pub gamma_multiple_start: bool,
    pub rabi_zero_end: bool,
    pub gamma_multiple_end: bool,
    /// `ħ²Ω₀·max|Δ|`, the natural scale of the norms.
    pub scale: f64,
}

impl EndpointReport {
    pub fn commutes(&self, rel_tol: f64) -> bool {
        let bound = rel_tol * self.scale.max(f64::MIN_POSITIVE);
        self.norm_start <= bound && self.norm_end <= bound
    }
}

pub fn commutator_endpoint_report(design: &AngleDesign, controls: &TLSControls) -> EndpointReport {
    let last = controls.len() - 1;
    let end_t = controls.grid.node(last);
    let norm_at = |node: usize, t: f64| hamiltonian(controls, node).commutator_norm(&design.invariant_matrix(t));
    let near_multiple = |g: f64| (g - (g / PI).round() * PI).abs() <= 1e-10;
    let max_delta = controls.delta.values().iter().fold(0.0, |m: f64, v| m.max(v.abs()));
    let rabi_tol = 1e-10 * controls.max_control().max(1.0);
    EndpointReport {
        norm_start: norm_at(0, controls.grid.node(0)),
        norm_end: norm_at(last, end_t),
        rabi_zero_start: controls.omega_r.value(0).abs() <= rabi_tol,
        gamma_multiple_start: near_multiple(design.gamma.value(controls.grid.node(0))),
        rabi_zero_end: controls.omega_r.value(last).abs() <= rabi_tol,
        gamma_multiple_end: near_multiple(design.gamma.value(end_t)),
        scale: HBAR * HBAR * design.omega0 * max_delta,
    }
}

fn reconstruct_from(c: &Controls, gamma: f64, gamma_dot: f64, beta: f64, beta_dot: f64) -> TwoLevelMatrix {
    let (s, co) = gamma.sin_cos();
    let cx = (beta - c.phi).cos();
    let m = c.delta * co * co + c.omega_r * s * co * cx - beta_dot * s * s;
    let n = C64::new((c.delta * co + c.omega_r * s * cx + beta_dot * co) * s, -gamma_dot);
    0.5 * HBAR * TwoLevelMatrix::hermitian(m, -m, n * C64::from_polar(1.0, beta))
}

/// H rebuilt from the invariant angles and the controls via the M, N entries.
pub fn reconstruct_hamiltonian(design: &AngleDesign, controls: &TLSControls, node: usize) -> TwoLevelMatrix {
    let t = controls.grid.node(node);
    reconstruct_from(
        &controls.at(node),
        design.gamma.value(t),
        design.gamma.eval(t, 1),
        design.beta.value(t),
        design.beta.eval(t, 1),
    )
}

/// Counterdiabatic term for the instantaneous eigenbasis of `c`.
pub fn berry_cd_matrix(c: &Controls, r: &ControlRates, t: f64) -> Result<TwoLevelMatrix> {
    let omega2 = c.delta * c.delta + c.omega_r * c.omega_r;
    if !(omega2 > 0.0) {
        return Err(Error::DegeneratePoint { t });
    }
    let theta = (c.delta / omega2.sqrt()).clamp(-1.0, 1.0).acos();
    let theta_dot = -(c.omega_r * r.delta_dot - r.omega_r_dot * c.delta) / omega2;
    let s2 = theta.sin().powi(2);
    let upper = C64::new(0.5 * r.phi_dot * (2.0 * theta).sin(), -theta_dot) * C64::from_polar(1.0, c.phi);
    Ok(0.5 * HBAR * TwoLevelMatrix::hermitian(-r.phi_dot * s2, r.phi_dot * s2, upper))
}

pub fn berry_cd_term(controls: &TLSControls, node: usize) -> Result<TwoLevelMatrix> {
    berry_cd_matrix(&controls.at(node), &controls.rates(node), controls.grid.node(node))
}

/// `Ω_a = (Ω_R Δ̇ − Ω̇_R Δ)/Ω²`, the coupling of the φ ≡ 0 counterdiabatic term.
pub fn omega_a(c: &Controls, r: &ControlRates) -> f64 {
    (c.omega_r * r.delta_dot - r.omega_r_dot * c.delta) / (c.delta * c.delta + c.omega_r * c.omega_r)
}

/// `H₀ + H₁` for transitionless tracking of a schedule's eigenstates.
pub fn counterdiabatic_hamiltonian(schedule: &dyn ControlSchedule, t: f64) -> Result<TwoLevelMatrix> {
    let c = schedule.controls_at(t)?;
    Ok(c.hamiltonian() + berry_cd_matrix(&c, &schedule.rates_at(t)?, t)?)
}

/// `max |Ω_R Δ̇ − Ω̇_R Δ| / Ω³` over the grid.
pub fn adiabaticity_metric(controls: &TLSControls) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for i in 0..controls.len() {
        let c = controls.at(i);
        let omega = c.omega();
        if !(omega > 0.0) {
            return Err(Error::DegeneratePoint { t: controls.grid.node(i) });
        }
        let r = controls.rates(i);
        worst = worst.max((c.omega_r * r.delta_dot - r.omega_r_dot * c.delta).abs() / omega.powi(3));
    }
    Ok(worst)
}

/// `H₀ = [(Δ cos γ + Ω_R sin γ cos(β−φ))/Ω₀]·I(t)`.
pub fn tracking_h0_from_angles(design: &AngleDesign, controls: &TLSControls, node: usize) -> TwoLevelMatrix {
    let t = controls.grid.node(node);
    let c = controls.at(node);
    let (s, co) = design.gamma.value(t).sin_cos();
    let factor = (c.delta * co + c.omega_r * s * (design.beta.value(t) - c.phi).cos()) / design.omega0;
    factor * design.invariant_matrix(t)
}

/// `(ħ/2)[[−β̇ sin²γ, (−iγ̇ + (β̇/2) sin 2γ)e^{iβ}], [c.c., β̇ sin²γ]]`.
pub fn tracking_h1_from_angles(design: &AngleDesign, t: f64) -> TwoLevelMatrix {
    let gamma = design.gamma.value(t);
    let b1 = design.beta.eval(t, 1);
    let s2 = gamma.sin().powi(2);
    let upper = C64::new(0.5 * b1 * (2.0 * gamma).sin(), -design.gamma.eval(t, 1)) * C64::from_polar(1.0, design.beta.value(t));
    0.5 * HBAR * TwoLevelMatrix::hermitian(-b1 * s2, b1 * s2, upper)
}

/// Invariant of the tracking Hamiltonian, `(Ω₀/Ω)·H₀`.
pub fn tracking_invariant(c: &Controls, omega0: f64, t: f64) -> Result<TwoLevelMatrix> {
    let omega = c.omega();
    if !(omega > 0.0) {
        return Err(Error::DegeneratePoint { t });
    }
    Ok((omega0 / omega) * c.hamiltonian())
}

/// Phase `ξ₊(t) = −∫(Ω/2 + φ̇ cos²(θ/2))` acquired by `|n₊⟩` under tracking.
pub fn tracking_phase_curve(controls: &TLSControls) -> Result<Vec<f64>> {
    let mut rate = Vec::with_capacity(controls.len());
    for i in 0..controls.len() {
        let c = controls.at(i);
        let e = c.eigensystem(controls.grid.node(i))?;
        rate.push(-(0.5 * c.omega() + controls.rates(i).phi_dot * (0.5 * e.theta).cos().powi(2)));
    }
    Ok(cumulative_integral(&SampledScalar::new(controls.grid.clone(), rate)?))
}

/// Cubic γ from π to 0 with zero slope at both ends, and cubic β
/// with β = −π/2 at both ends, β̇(0) = 3π/(2t_f), β̇(t_f) = −3π/(2t_f).
pub fn preset_fig1(t_f: f64) -> Result<AngleDesign> {
    let beta = fit_polynomial(
        &[
            BoundaryConstraint::new(0.0, 0, -PI / 2.0),
            BoundaryConstraint::new(0.0, 1, 3.0 * PI / (2.0 * t_f)),
            BoundaryConstraint::new(t_f, 0, -PI / 2.0),
            BoundaryConstraint::new(t_f, 1, -3.0 * PI / (2.0 * t_f)),
        ],
        3,
    )?;
    AngleDesign::new(preset_gamma(t_f)?, beta, PolynomialCurve::constant(0.0), 1.0, t_f)
}

/// Same γ as [`preset_fig1`]; quartic β held near −π/2, crossing it at t_f/2.
pub fn preset_fig2(t_f: f64) -> Result<AngleDesign> {
    let beta = fit_polynomial(
        &[
            BoundaryConstraint::new(0.0, 0, -PI / 2.0),
            BoundaryConstraint::new(0.0, 1, PI / (2.0 * t_f)),
            BoundaryConstraint::new(0.5 * t_f, 0, -PI / 2.0),
            BoundaryConstraint::new(t_f, 0, -PI / 2.0),
            BoundaryConstraint::new(t_f, 1, -PI / (2.0 * t_f)),
        ],
        4,
    )?;
    AngleDesign::new(preset_gamma(t_f)?, beta, PolynomialCurve::constant(0.0), 1.0, t_f)
}

fn preset_gamma(t_f: f64) -> Result<PolynomialCurve> {
    if !(t_f > 0.0) {
        return Err(Error::InvalidArgument(format!("t_f must be positive, got {t_f}")));
    }
    fit_polynomial(&smoothstep_constraints(t_f, PI, 0.0), 3)
}

fn smoothstep_constraints(t_f: f64, from: f64, to: f64) -> [BoundaryConstraint; 4] {
    [
        BoundaryConstraint::new(0.0, 0, from),
        BoundaryConstraint::new(0.0, 1, 0.0),
        BoundaryConstraint::new(t_f, 0, to),
        BoundaryConstraint::new(t_f, 1, 0.0),
    ]
}

/// Reference schedule for tracking: θ a cubic smoothstep from π to 0, Ω ≡ 1, φ ≡ 0.
pub fn preset_tracking(t_f: f64) -> Result<MixingSchedule> {
    if !(t_f > 0.0) {
        return Err(Error::InvalidArgument(format!("t_f must be positive, got {t_f}")));
    }
    Ok(MixingSchedule {
        theta: fit_polynomial(&smoothstep_constraints(t_f, PI, 0.0), 3)?,
        omega: PolynomialCurve::constant(1.0),
        phi: PolynomialCurve::constant(0.0),
        t_f,
    })
}
