//! Time-dependent harmonic oscillator: Ermakov scaling design, quadratic-form
//! snapshots of `H`, `I`, `H₀`, `H₁`, Lewis–Riesenfeld phases, and the
//! counterdiabatic (tracking) Hamiltonian of a reference frequency ramp.

use std::ops::{Add, Mul, Sub};

use crate::curves::{fit_polynomial, integrate_sampled, BoundaryConstraint, PolynomialCurve, SampledScalar, TimeGrid};
use crate::error::{Error, Result};
use crate::MASS;

/// Samples used when checking positivity of `b(t)` or `ω(t)` over the ramp.
const SCAN_SAMPLES: usize = 2049;

/// `c_pp p² + c_qq q² + c_pq (pq + qp)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QuadraticForm {
    pub c_pp: f64,
    pub c_qq: f64,
    pub c_pq: f64,
}

impl QuadraticForm {
    pub fn new(c_pp: f64, c_qq: f64, c_pq: f64) -> Self {
        Self { c_pp, c_qq, c_pq }
    }

    /// `p²/2m + m ω² q²/2` (ω² may be negative).
    pub fn oscillator(omega_squared: f64) -> Self {
        Self::new(0.5 / MASS, 0.5 * MASS * omega_squared, 0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.c_pp == 0.0 && self.c_qq == 0.0 && self.c_pq == 0.0
    }

    pub fn max_abs(&self) -> f64 {
        self.c_pp.abs().max(self.c_qq.abs()).max(self.c_pq.abs())
    }

    pub fn norm(&self) -> f64 {
        (self.c_pp.powi(2) + self.c_qq.powi(2) + self.c_pq.powi(2)).sqrt()
    }

    /// `[self, other] / (iħ)`, again a quadratic form.
    pub fn bracket(&self, other: &Self) -> Self {
        let (a, b) = (self, other);
        Self::new(
            -4.0 * (a.c_pp * b.c_pq - a.c_pq * b.c_pp),
            4.0 * (a.c_qq * b.c_pq - a.c_pq * b.c_qq),
            -2.0 * (a.c_pp * b.c_qq - a.c_qq * b.c_pp),
        )
    }
}

impl Add for QuadraticForm {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.c_pp + o.c_pp, self.c_qq + o.c_qq, self.c_pq + o.c_pq)
    }
}

impl Sub for QuadraticForm {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.c_pp - o.c_pp, self.c_qq - o.c_qq, self.c_pq - o.c_pq)
    }
}

impl Mul<QuadraticForm> for f64 {
    type Output = QuadraticForm;
    fn mul(self, q: QuadraticForm) -> QuadraticForm {
        QuadraticForm::new(self * q.c_pp, self * q.c_qq, self * q.c_pq)
    }
}

/// Value, first and second derivative of the scaling factor at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scaling {
    pub b: f64,
    pub b_dot: f64,
    pub b_ddot: f64,
}

/// `b(0)=1, ḃ=b̈=0` at both ends and `b(t_f) = √(ω₀/ω_f)`, the stationary
/// point of the Ermakov equation at the final frequency.
pub fn standard_boundary_constraints(omega0: f64, omega_f: f64, t_f: f64) -> Vec<BoundaryConstraint> {
    let b_f = (omega0 / omega_f).sqrt();
    vec![
        BoundaryConstraint::new(0.0, 0, 1.0),
        BoundaryConstraint::new(0.0, 1, 0.0),
        BoundaryConstraint::new(0.0, 2, 0.0),
        BoundaryConstraint::new(t_f, 0, b_f),
        BoundaryConstraint::new(t_f, 1, 0.0),
        BoundaryConstraint::new(t_f, 2, 0.0),
    ]
}

/// Standard constraints, plus vanishing 3rd, 4th, ... derivatives at both
/// ends for odd degrees above 5.
fn constraints_for_degree(omega0: f64, omega_f: f64, t_f: f64, degree: usize) -> Vec<BoundaryConstraint> {
    let mut c = standard_boundary_constraints(omega0, omega_f, t_f);
    let mut order = 3;
    while c.len() + 2 <= degree + 1 {
        c.push(BoundaryConstraint::new(0.0, order, 0.0));
        c.push(BoundaryConstraint::new(t_f, order, 0.0));
        order += 1;
    }
    c
}

fn check_positive(name: &str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be positive, got {value}")))
    }
}

/// Invariant-based expansion/compression design.
#[derive(Debug, Clone, PartialEq)]
pub struct ErmakovDesign {
    omega0: f64,
    omega_f: f64,
    t_f: f64,
    b: PolynomialCurve,
}

impl ErmakovDesign {
    /// Polynomial `b(t)` of the given degree (5, 7, 9, ...) fitted to the
    /// standard boundary conditions.
    pub fn polynomial(omega0: f64, omega_f: f64, t_f: f64, degree: usize) -> Result<Self> {
        check_positive("omega0", omega0)?;
        check_positive("omega_f", omega_f)?;
        check_positive("t_f", t_f)?;
        let b = fit_polynomial(&constraints_for_degree(omega0, omega_f, t_f, degree), degree)?;
        Self::from_parts(omega0, omega_f, t_f, b)
    }

    /// Rebuilds a design from stored coefficients; `b` must stay positive.
    pub fn from_parts(omega0: f64, omega_f: f64, t_f: f64, b: PolynomialCurve) -> Result<Self> {
        check_positive("omega0", omega0)?;
        check_positive("omega_f", omega_f)?;
        check_positive("t_f", t_f)?;
        for i in 0..SCAN_SAMPLES {
            let t = t_f * i as f64 / (SCAN_SAMPLES - 1) as f64;
            if !(b.value(t) > 0.0) {
                return Err(Error::NonPositiveScaling { t });
            }
        }
        Ok(Self { omega0, omega_f, t_f, b })
    }

    /// `b ≡ 1`: the oscillator stays at `omega0`.
    pub fn static_oscillator(omega0: f64, t_f: f64) -> Result<Self> {
        Self::from_parts(omega0, omega0, t_f, PolynomialCurve::constant(1.0))
    }

    pub fn omega0(&self) -> f64 {
        self.omega0
    }

    pub fn omega_f(&self) -> f64 {
        self.omega_f
    }

    pub fn t_f(&self) -> f64 {
        self.t_f
    }

    pub fn b(&self) -> &PolynomialCurve {
        &self.b
    }

    pub fn scaling(&self, t: f64) -> Scaling {
        Scaling {
            b: self.b.eval(t, 0),
            b_dot: self.b.eval(t, 1),
            b_ddot: self.b.eval(t, 2),
        }
    }

    /// `ω²(t) = ω₀²/b⁴ − b̈/b`, signed: negative values mean the trap is inverted.
    pub fn omega_squared(&self, t: f64) -> Result<f64> {
        let s = self.scaling(t);
        if !(s.b > 0.0) {
            return Err(Error::NonPositiveScaling { t });
        }
        Ok(self.omega0 * self.omega0 / s.b.powi(4) - s.b_ddot / s.b)
    }

    /// `|b̈ + ω² b − ω₀²/b³|`.
    pub fn ermakov_residual(&self, t: f64) -> Result<f64> {
        let s = self.scaling(t);
        let w2 = self.omega_squared(t)?;
        Ok((s.b_ddot + w2 * s.b - self.omega0 * self.omega0 / s.b.powi(3)).abs())
    }

    /// Coefficients of `I(t) = [ω₀² q²/b² + π²]/2` with `π = b p − m ḃ q`.
    pub fn invariant_form(&self, t: f64) -> QuadraticForm {
        let s = self.scaling(t);
        QuadraticForm::new(
            s.b * s.b / (2.0 * MASS),
            0.5 * MASS * (self.omega0 * self.omega0 / (s.b * s.b) + s.b_dot * s.b_dot),
            -0.5 * s.b * s.b_dot,
        )
    }

    pub fn hamiltonian_form(&self, t: f64) -> Result<QuadraticForm> {
        Ok(QuadraticForm::oscillator(self.omega_squared(t)?))
    }

    /// Proportionality factor λ(t) of `H₀ = λ I`.
    pub fn tracking_factor(&self, t: f64) -> f64 {
        let s = self.scaling(t);
        1.0 / (s.b * s.b) + (s.b_dot * s.b_dot - s.b_ddot * s.b) / (2.0 * self.omega0 * self.omega0)
    }

    /// `(H₀, H₁)` with `H₀ = λ I` and `H₁ = H − H₀`.
    pub fn h0_h1_split(&self, t: f64) -> Result<(QuadraticForm, QuadraticForm)> {
        let h = self.hamiltonian_form(t)?;
        let h0 = self.tracking_factor(t) * self.invariant_form(t);
        Ok((h0, h - h0))
    }

    /// `α_n(t) = −(n+½) ω₀ ∫₀ᵗ dt′/b²`.
    pub fn lr_phase(&self, n: usize, t: f64) -> Result<f64> {
        if t == 0.0 {
            return Ok(0.0);
        }
        let grid = TimeGrid::uniform(t, 4097)?;
        let f = SampledScalar::from_fn(&grid, |s| self.b.value(s).powi(-2));
        let integral = integrate_sampled(&f, grid.len() - 1)?;
        Ok(-(n as f64 + 0.5) * self.omega0 * integral)
    }

    /// Smallest `ω²` over the ramp and where it occurs.
    pub fn trap_scan(&self) -> Result<TrapScan> {
        let mut min = f64::INFINITY;
        let mut at = 0.0;
        for i in 0..SCAN_SAMPLES {
            let t = self.t_f * i as f64 / (SCAN_SAMPLES - 1) as f64;
            let w2 = self.omega_squared(t)?;
            if w2 < min {
                min = w2;
                at = t;
            }
        }
        Ok(TrapScan {
            min_omega_squared: min,
            at,
            inverted: min < 0.0,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrapScan {
    pub min_omega_squared: f64,
    pub at: f64,
    pub inverted: bool,
}

/// Reference frequency schedule for the transitionless-tracking route.
#[derive(Debug, Clone, PartialEq)]
pub struct OmegaRamp {
    omega: PolynomialCurve,
    t_f: f64,
}

impl OmegaRamp {
    pub fn new(omega: PolynomialCurve, t_f: f64) -> Result<Self> {
        check_positive("t_f", t_f)?;
        for i in 0..SCAN_SAMPLES {
            let t = t_f * i as f64 / (SCAN_SAMPLES - 1) as f64;
            if !(omega.value(t) > 0.0) {
                return Err(Error::NonPositiveFrequency { t });
            }
        }
        Ok(Self { omega, t_f })
    }

    /// Quintic from `omega0` to `omega_f` with vanishing first and second
    /// derivatives at both ends.
    pub fn smoothstep(omega0: f64, omega_f: f64, t_f: f64) -> Result<Self> {
        check_positive("omega0", omega0)?;
        check_positive("omega_f", omega_f)?;
        check_positive("t_f", t_f)?;
        let c = [
            BoundaryConstraint::new(0.0, 0, omega0),
            BoundaryConstraint::new(0.0, 1, 0.0),
            BoundaryConstraint::new(0.0, 2, 0.0),
            BoundaryConstraint::new(t_f, 0, omega_f),
            BoundaryConstraint::new(t_f, 1, 0.0),
            BoundaryConstraint::new(t_f, 2, 0.0),
        ];
        Self::new(fit_polynomial(&c, 5)?, t_f)
    }

    pub fn omega(&self) -> &PolynomialCurve {
        &self.omega
    }

    pub fn t_f(&self) -> f64 {
        self.t_f
    }

    pub fn omega0(&self) -> f64 {
        self.omega.value(0.0)
    }

    fn positive_omega(&self, t: f64) -> Result<f64> {
        let w = self.omega.value(t);
        if w > 0.0 {
            Ok(w)
        } else {
            Err(Error::NonPositiveFrequency { t })
        }
    }

    /// `H₀(t)`: ordinary oscillator at `ω(t)`.
    pub fn reference_hamiltonian(&self, t: f64) -> Result<QuadraticForm> {
        let w = self.positive_omega(t)?;
        Ok(QuadraticForm::oscillator(w * w))
    }

    /// `H₀ + H₁` with the crossed term `−ω̇/(4ω) (pq + qp)`.
    pub fn berry_hamiltonian(&self, t: f64) -> Result<QuadraticForm> {
        let w = self.positive_omega(t)?;
        let w_dot = self.omega.eval(t, 1);
        Ok(QuadraticForm::new(0.5 / MASS, 0.5 * MASS * w * w, -w_dot / (4.0 * w)))
    }

    /// `I(t) = (ω₀/ω) H₀(t)`.
    pub fn invariant(&self, t: f64) -> Result<QuadraticForm> {
        let w = self.positive_omega(t)?;
        Ok((self.omega0() / w) * QuadraticForm::oscillator(w * w))
    }

    /// `max |ω̇|/ω²` over the ramp.
    pub fn adiabaticity_metric(&self) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for i in 0..SCAN_SAMPLES {
            let t = self.t_f * i as f64 / (SCAN_SAMPLES - 1) as f64;
            let w = self.positive_omega(t)?;
            worst = worst.max(self.omega.eval(t, 1).abs() / (w * w));
        }
        Ok(worst)
    }

    /// Dynamical phase of level `n`, `−(n+½)∫ω dt/ħ` (the geometric part vanishes).
    pub fn adiabatic_phase(&self, n: usize, t: f64) -> f64 {
        let c = self.omega.coefficients();
        let integral: f64 = c
            .iter()
            .enumerate()
            .map(|(j, a)| a * t.powi(j as i32 + 1) / (j as f64 + 1.0))
            .sum();
        -(n as f64 + 0.5) * integral
    }
}
