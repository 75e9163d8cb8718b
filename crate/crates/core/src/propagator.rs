//! Adaptive integration of `iħ ψ̇ = H(t) ψ` and the diagnostics built on it:
//! populations, adiabatic references, mode transport, invariance residuals.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::curves::{integrate_sampled, SampledScalar, TimeGrid};
use crate::error::{Error, Result};
use crate::fock::build_operator;
use crate::ho_design::{ErmakovDesign, OmegaRamp, QuadraticForm};
use crate::linalg::{inner, norm, BandMatrix, Operator, StateVector};
use crate::tls_design::{AngleDesign, ControlSchedule, TLSControls, TwoLevelMatrix};
use crate::HBAR;

pub const DEFAULT_REL_TOL: f64 = 1e-10;
pub const DEFAULT_ABS_TOL: f64 = 1e-12;

/// Time-dependent Hermitian generator.
pub trait HamiltonianSchedule: Sync {
    fn dim(&self) -> usize;

    fn matrix(&self, t: f64) -> Result<BandMatrix>;

    /// Whether higher-order difference stencils may be used on this schedule.
    fn is_smooth(&self) -> bool {
        true
    }

    fn apply(&self, t: f64, psi: &[C64], out: &mut [C64]) -> Result<()> {
        self.matrix(t)?.apply(psi, out);
        Ok(())
    }
}

/// Two-level schedule from a closure.
pub struct TwoLevelSchedule<F> {
    f: F,
    smooth: bool,
}

impl<F: Fn(f64) -> Result<TwoLevelMatrix> + Sync> TwoLevelSchedule<F> {
    pub fn new(f: F) -> Self {
        Self { f, smooth: true }
    }

    pub fn non_smooth(mut self) -> Self {
        self.smooth = false;
        self
    }
}

impl<F: Fn(f64) -> Result<TwoLevelMatrix> + Sync> HamiltonianSchedule for TwoLevelSchedule<F> {
    fn dim(&self) -> usize {
        2
    }

    fn matrix(&self, t: f64) -> Result<BandMatrix> {
        Ok((self.f)(t)?.to_band())
    }

    fn is_smooth(&self) -> bool {
        self.smooth
    }

    fn apply(&self, t: f64, psi: &[C64], out: &mut [C64]) -> Result<()> {
        (self.f)(t)?.apply(psi, out);
        Ok(())
    }
}

/// Quadratic oscillator operator in a truncated number basis, from a closure.
pub struct FockSchedule<F> {
    f: F,
    dim: usize,
    omega_ref: f64,
}

impl<F: Fn(f64) -> Result<QuadraticForm> + Sync> FockSchedule<F> {
    pub fn new(dim: usize, omega_ref: f64, f: F) -> Result<Self> {
        build_operator(QuadraticForm::oscillator(1.0), dim, omega_ref)?;
        Ok(Self { f, dim, omega_ref })
    }
}

impl<F: Fn(f64) -> Result<QuadraticForm> + Sync> HamiltonianSchedule for FockSchedule<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn matrix(&self, t: f64) -> Result<BandMatrix> {
        Ok(build_operator((self.f)(t)?, self.dim, self.omega_ref)?.band().clone())
    }

    fn apply(&self, t: f64, psi: &[C64], out: &mut [C64]) -> Result<()> {
        build_operator((self.f)(t)?, self.dim, self.omega_ref)?.apply(psi, out);
        Ok(())
    }
}

/// `H(t)` of a two-level control schedule.
pub fn tls_reference(schedule: &dyn ControlSchedule) -> impl HamiltonianSchedule + '_ {
    TwoLevelSchedule::new(move |t| schedule.hamiltonian_at(t))
}

/// `H₀(t) + H₁(t)`: the schedule plus its counterdiabatic term.
pub fn tls_counterdiabatic(schedule: &dyn ControlSchedule) -> impl HamiltonianSchedule + '_ {
    TwoLevelSchedule::new(move |t| crate::tls_design::counterdiabatic_hamiltonian(schedule, t))
}

/// Invariant `I(t)` of an angle design.
pub fn tls_invariant(design: &AngleDesign) -> impl HamiltonianSchedule + '_ {
    TwoLevelSchedule::new(move |t| Ok(design.invariant_matrix(t)))
}

/// `H(t)` of an Ermakov design in the number basis of `omega_ref`.
pub fn ho_reference(design: &ErmakovDesign, dim: usize, omega_ref: f64) -> Result<impl HamiltonianSchedule + '_> {
    FockSchedule::new(dim, omega_ref, move |t| design.hamiltonian_form(t))
}

/// `I(t)` of an Ermakov design in the number basis of `omega_ref`.
pub fn ho_invariant(design: &ErmakovDesign, dim: usize, omega_ref: f64) -> Result<impl HamiltonianSchedule + '_> {
    FockSchedule::new(dim, omega_ref, move |t| Ok(design.invariant_form(t)))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub min_step: f64,
    pub max_step: f64,
    pub evaluations: usize,
}

/// Trajectory sampled at the nodes of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagationRecord {
    pub grid: TimeGrid,
    pub states: Vec<StateVector>,
    /// `max |‖ψ‖ − 1|` over accepted steps and output nodes.
    pub norm_drift: f64,
    pub stats: StepStats,
}

impl PropagationRecord {
    pub fn final_state(&self) -> &StateVector {
        self.states.last().expect("non-empty record")
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const MAX_GROWTH: f64 = 5.0;
const MAX_SHRINK: f64 = 10.0;
const PI_BETA: f64 = 0.04;
const HERMITICITY_PROBES: usize = 16;

struct Rhs<'a> {
    schedule: &'a dyn HamiltonianSchedule,
    evaluations: usize,
}

impl Rhs<'_> {
    /// `out = −(i/ħ) H(t) y`.
    fn eval(&mut self, t: f64, y: &[C64], out: &mut [C64]) -> Result<()> {
        self.evaluations += 1;
        self.schedule.apply(t, y, out)?;
        let f = C64::new(0.0, -1.0 / HBAR);
        for z in out.iter_mut() {
            *z *= f;
        }
        Ok(())
    }
}

fn lincomb(y: &[C64], h: f64, terms: &[(f64, &[C64])], out: &mut [C64]) {
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = C64::new(0.0, 0.0);
        for (c, k) in terms {
            if *c != 0.0 {
                acc += *c * k[i];
            }
        }
        *o = y[i] + h * acc;
    }
}

fn check_hermitian(schedule: &dyn HamiltonianSchedule, t0: f64, t1: f64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5ca1_ab1e);
    for _ in 0..HERMITICITY_PROBES {
        let t = rng.random_range(t0..=t1);
        let defect = schedule.matrix(t)?.hermiticity_defect();
        if defect > 1e-12 {
            return Err(Error::NotHermitian { t, defect });
        }
    }
    Ok(())
}

/// Integrates from the first to the last grid node with the Dormand-Prince
/// 5(4) pair, PI step control and continuous output at the nodes.
///
/// The local error is controlled per unit step in the max norm, so the
/// accumulated error stays of order `rel_tol` however long the run.
pub fn propagate(
    schedule: &dyn HamiltonianSchedule,
    psi0: &StateVector,
    grid: &TimeGrid,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<PropagationRecord> {
    if !(1e-13..=1e-6).contains(&rel_tol) {
        return Err(Error::InvalidArgument(format!("rel_tol must lie in [1e-13, 1e-6], got {rel_tol}")));
    }
    if !(abs_tol > 0.0) {
        return Err(Error::InvalidArgument(format!("abs_tol must be positive, got {abs_tol}")));
    }
    let n = schedule.dim();
    if psi0.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, got: psi0.dim() });
    }
    if (psi0.norm() - 1.0).abs() > 1e-12 {
        return Err(Error::NotNormalized { norm: psi0.norm() });
    }
    let t0 = grid.node(0);
    let t_end = grid.node(grid.len() - 1);
    check_hermitian(schedule, t0, t_end)?;

    let mut states = Vec::with_capacity(grid.len());
    states.push(psi0.clone());
    let mut stats = StepStats {
        min_step: f64::INFINITY,
        ..StepStats::default()
    };
    if grid.len() == 1 {
        stats.min_step = 0.0;
        return Ok(PropagationRecord {
            grid: grid.clone(),
            states,
            norm_drift: 0.0,
            stats,
        });
    }

    let mut rhs = Rhs { schedule, evaluations: 0 };
    let zero = C64::new(0.0, 0.0);
    let mut y = psi0.amplitudes().to_vec();
    let (mut k1, mut k2, mut k3, mut k4, mut k5, mut k6, mut k7) =
        (vec![zero; n], vec![zero; n], vec![zero; n], vec![zero; n], vec![zero; n], vec![zero; n], vec![zero; n]);
    let mut stage = vec![zero; n];
    let mut y_new = vec![zero; n];
    rhs.eval(t0, &y, &mut k1)?;

    let span = t_end - t0;
    let h_min = span * 1e-14;
    let mut h = initial_step(&mut rhs, t0, &y, &k1, span, rel_tol, abs_tol)?;
    let mut t = t0;
    let mut next_node = 1;
    let mut fac_old: f64 = 1e-4;
    let mut last_rejected = false;
    let mut norm_drift: f64 = 0.0;
    let expo = 0.25 - PI_BETA * 0.75;

    while next_node < grid.len() {
        let last = t + 1.01 * h >= t_end;
        if last {
            h = t_end - t;
        }
        if h < h_min {
            return Err(Error::StiffnessFailure { t, step: h });
        }

        lincomb(&y, h, &[(A21, &k1)], &mut stage);
        rhs.eval(t + C2 * h, &stage, &mut k2)?;
        lincomb(&y, h, &[(A31, &k1), (A32, &k2)], &mut stage);
        rhs.eval(t + C3 * h, &stage, &mut k3)?;
        lincomb(&y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)], &mut stage);
        rhs.eval(t + C4 * h, &stage, &mut k4)?;
        lincomb(&y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)], &mut stage);
        rhs.eval(t + C5 * h, &stage, &mut k5)?;
        lincomb(&y, h, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)], &mut stage);
        rhs.eval(t + h, &stage, &mut k6)?;
        lincomb(&y, h, &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)], &mut y_new);
        let t_new = if last { t_end } else { t + h };
        rhs.eval(t_new, &y_new, &mut k7)?;

        let mut err: f64 = 0.0;
        for i in 0..n {
            let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = (abs_tol + rel_tol * y[i].norm().max(y_new[i].norm())) * (h / span);
            err = err.max(e.norm() / sc);
        }
        let fac11 = err.powf(expo);

        if err <= 1.0 {
            stats.accepted += 1;
            stats.min_step = stats.min_step.min(h);
            stats.max_step = stats.max_step.max(h);
            while next_node < grid.len() && (grid.node(next_node) <= t_new || last) {
                let tn = grid.node(next_node);
                let out = if tn >= t_new {
                    y_new.clone()
                } else {
                    dense_output(&y, &y_new, [&k1, &k3, &k4, &k5, &k6, &k7], h, (tn - t) / h)
                };
                norm_drift = norm_drift.max((norm(&out) - 1.0).abs());
                states.push(StateVector::unchecked(out));
                next_node += 1;
            }
            norm_drift = norm_drift.max((norm(&y_new) - 1.0).abs());
            let fac = (fac11 / fac_old.powf(PI_BETA) / SAFETY).clamp(1.0 / MAX_GROWTH, MAX_SHRINK);
            let mut h_new = h / fac;
            if last_rejected {
                h_new = h_new.min(h);
            }
            fac_old = err.max(1e-4);
            last_rejected = false;
            std::mem::swap(&mut y, &mut y_new);
            std::mem::swap(&mut k1, &mut k7);
            t = t_new;
            h = h_new;
        } else {
            stats.rejected += 1;
            last_rejected = true;
            h /= (fac11 / SAFETY).min(MAX_SHRINK);
        }
    }

    stats.evaluations = rhs.evaluations;
    if norm_drift > 1e-6 {
        return Err(Error::AccuracyFailure { drift: norm_drift });
    }
    Ok(PropagationRecord {
        grid: grid.clone(),
        states,
        norm_drift,
        stats,
    })
}

fn dense_output(y: &[C64], y_new: &[C64], k: [&[C64]; 6], h: f64, theta: f64) -> Vec<C64> {
    let [k1, k3, k4, k5, k6, k7] = k;
    let theta1 = 1.0 - theta;
    (0..y.len())
        .map(|i| {
            let r2 = y_new[i] - y[i];
            let r3 = h * k1[i] - r2;
            let r4 = r2 - h * k7[i] - r3;
            let r5 = h * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
            y[i] + theta * (r2 + theta1 * (r3 + theta * (r4 + theta1 * r5)))
        })
        .collect()
}

fn initial_step(rhs: &mut Rhs, t0: f64, y: &[C64], f0: &[C64], h_max: f64, rel_tol: f64, abs_tol: f64) -> Result<f64> {
    let sk: Vec<f64> = y.iter().map(|z| abs_tol + rel_tol * z.norm()).collect();
    let dnf: f64 = f0.iter().zip(&sk).map(|(f, s)| (f.norm() / s).powi(2)).sum();
    let dny: f64 = y.iter().zip(&sk).map(|(v, s)| (v.norm() / s).powi(2)).sum();
    let mut h = if dnf <= 1e-10 || dny <= 1e-10 { 1e-6 } else { (dny / dnf).sqrt() * 0.01 };
    h = h.min(h_max);
    let y1: Vec<C64> = y.iter().zip(f0).map(|(v, f)| v + h * f).collect();
    let mut f1 = vec![C64::new(0.0, 0.0); y.len()];
    rhs.eval(t0 + h, &y1, &mut f1)?;
    let der2 = f1.iter().zip(f0).zip(&sk).map(|((a, b), s)| ((a - b).norm() / s).powi(2)).sum::<f64>().sqrt() / h;
    let der12 = der2.max(dnf.sqrt());
    let h1 = if der12 <= 1e-15 { (h * 1e-3).max(1e-6) } else { (0.01 / der12).powf(0.2) };
    Ok((100.0 * h).min(h1).min(h_max))
}

/// `|ψ_i|²` for every component at every node.
pub fn populations(record: &PropagationRecord) -> Vec<Vec<f64>> {
    record
        .states
        .iter()
        .map(|s| s.amplitudes().iter().map(|z| z.norm_sqr()).collect())
        .collect()
}

/// Selected level populations per node.
pub fn level_populations(record: &PropagationRecord, levels: &[usize]) -> Vec<Vec<f64>> {
    record
        .states
        .iter()
        .map(|s| levels.iter().map(|&l| s.population(l)).collect())
        .collect()
}

/// `(P₁, P₂)` per node for a two-level record (component 0 is |2⟩).
pub fn tls_populations(record: &PropagationRecord) -> Vec<(f64, f64)> {
    record.states.iter().map(|s| (s.population(1), s.population(0))).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Plus,
    Minus,
}

/// `(P₁ᵃᵈ, P₂ᵃᵈ)` of the instantaneous eigenstate on the given branch.
pub fn adiabatic_reference(controls: &TLSControls, branch: Branch) -> Result<Vec<(f64, f64)>> {
    (0..controls.len())
        .map(|i| {
            let e = controls.at(i).eigensystem(controls.grid().node(i))?;
            let (s2, c2) = ((0.5 * e.theta).sin().powi(2), (0.5 * e.theta).cos().powi(2));
            Ok(match branch {
                Branch::Plus => (s2, c2),
                Branch::Minus => (c2, s2),
            })
        })
        .collect()
}

/// Source of the invariant's eigenvectors ("dynamical modes").
pub trait ModeProvider {
    fn mode(&self, n: usize, t: f64) -> Result<StateVector>;

    /// Lewis-Riesenfeld phase `α_n(t)` in this provider's gauge.
    fn lr_phase(&self, n: usize, t: f64) -> Result<f64>;

    /// Numerically obtained modes carry an arbitrary phase per time and must
    /// be aligned node to node.
    fn needs_gauge_alignment(&self) -> bool {
        false
    }
}

impl ModeProvider for AngleDesign {
    fn mode(&self, n: usize, t: f64) -> Result<StateVector> {
        let (plus, minus) = self.invariant_modes(t);
        match n {
            0 => Ok(plus),
            1 => Ok(minus),
            _ => Err(Error::InvalidArgument(format!("two-level invariant has modes 0 and 1, not {n}"))),
        }
    }

    fn lr_phase(&self, n: usize, t: f64) -> Result<f64> {
        if n > 1 {
            return Err(Error::InvalidArgument(format!("two-level invariant has modes 0 and 1, not {n}")));
        }
        if t == 0.0 {
            return Ok(0.0);
        }
        let grid = TimeGrid::uniform(t, 2049)?;
        let controls = TLSControls::from_schedule(self, &grid)?;
        let alpha = crate::tls_design::lr_phase_curve(self, &controls)[grid.len() - 1];
        Ok(if n == 0 { alpha } else { -alpha })
    }
}

/// Eigenvectors of the Ermakov invariant from the truncated number basis.
pub struct FockInvariantModes<'a> {
    pub design: &'a ErmakovDesign,
    pub dim: usize,
    pub omega_ref: f64,
}

impl ModeProvider for FockInvariantModes<'_> {
    fn mode(&self, n: usize, t: f64) -> Result<StateVector> {
        let op = build_operator(self.design.invariant_form(t), self.dim, self.omega_ref)?;
        Ok(op.eigenpairs(n + 1)?.pop().expect("n + 1 pairs").vector)
    }

    fn lr_phase(&self, n: usize, t: f64) -> Result<f64> {
        self.design.lr_phase(n, t)
    }

    fn needs_gauge_alignment(&self) -> bool {
        true
    }
}

/// Instantaneous eigenvectors `|n₊⟩, |n₋⟩` of a reference two-level schedule,
/// transported exactly by its counterdiabatic Hamiltonian.
pub struct TrackingModes<'a> {
    pub schedule: &'a dyn ControlSchedule,
}

impl ModeProvider for TrackingModes<'_> {
    fn mode(&self, n: usize, t: f64) -> Result<StateVector> {
        let e = self.schedule.controls_at(t)?.eigensystem(t)?;
        match n {
            0 => Ok(e.n_plus),
            1 => Ok(e.n_minus),
            _ => Err(Error::InvalidArgument(format!("two-level schedule has modes 0 and 1, not {n}"))),
        }
    }

    /// `∓∫Ω/2 − ∫φ̇ cos²(θ/2)` for `n₊`, `+∫Ω/2 − ∫φ̇ sin²(θ/2)` for `n₋`.
    fn lr_phase(&self, n: usize, t: f64) -> Result<f64> {
        if n > 1 {
            return Err(Error::InvalidArgument(format!("two-level schedule has modes 0 and 1, not {n}")));
        }
        if t == 0.0 {
            return Ok(0.0);
        }
        let grid = TimeGrid::uniform(t, 2049)?;
        let mut rate = Vec::with_capacity(grid.len());
        for &s in grid.nodes() {
            let c = self.schedule.controls_at(s)?;
            let half = 0.5 * c.eigensystem(s)?.theta;
            let phi_dot = self.schedule.rates_at(s)?.phi_dot;
            rate.push(if n == 0 {
                -0.5 * c.omega() - phi_dot * half.cos().powi(2)
            } else {
                0.5 * c.omega() - phi_dot * half.sin().powi(2)
            });
        }
        integrate_on(&grid, rate, grid.len() - 1)
    }
}

/// Eigenvectors of a reference ω ramp's oscillator `H₀(t)` in a number basis.
pub struct RampModes<'a> {
    pub ramp: &'a OmegaRamp,
    pub dim: usize,
    pub omega_ref: f64,
}

impl ModeProvider for RampModes<'_> {
    fn mode(&self, n: usize, t: f64) -> Result<StateVector> {
        let op = build_operator(self.ramp.reference_hamiltonian(t)?, self.dim, self.omega_ref)?;
        Ok(op.eigenpairs(n + 1)?.pop().expect("n + 1 pairs").vector)
    }

    fn lr_phase(&self, n: usize, t: f64) -> Result<f64> {
        Ok(self.ramp.adiabatic_phase(n, t))
    }

    fn needs_gauge_alignment(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeOverlap {
    pub modulus: f64,
    /// `arg⟨φ_n|ψ⟩`, unwrapped by continuity.
    pub phase: f64,
}

/// Overlap of the trajectory with mode `n` at every node.
pub fn mode_transport_check(record: &PropagationRecord, provider: &dyn ModeProvider, n: usize) -> Result<Vec<ModeOverlap>> {
    let mut out: Vec<ModeOverlap> = Vec::with_capacity(record.states.len());
    let mut prev: Option<StateVector> = None;
    for (i, state) in record.states.iter().enumerate() {
        let mut mode = provider.mode(n, record.grid.node(i))?;
        if provider.needs_gauge_alignment() {
            if let Some(p) = &prev {
                let align = p.overlap(&mode);
                mode = mode.with_phase(-align.arg());
            }
        }
        let a = mode.overlap(state);
        let raw = a.arg();
        let phase = match out.last() {
            Some(last) => raw + 2.0 * PI * ((last.phase - raw) / (2.0 * PI)).round(),
            None => raw,
        };
        out.push(ModeOverlap { modulus: a.norm(), phase });
        prev = Some(mode);
    }
    Ok(out)
}

/// `c_n = ⟨φ_n(t)|ψ(t)⟩ e^{−iα_n(t)}` for `n < n_modes` at one node.
pub fn decompose_into_modes(record: &PropagationRecord, provider: &dyn ModeProvider, node: usize, n_modes: usize) -> Result<Vec<C64>> {
    let t = record.grid.node(node);
    let psi = &record.states[node];
    (0..n_modes)
        .map(|n| {
            let mode = provider.mode(n, t)?;
            Ok(mode.overlap(psi) * C64::from_polar(1.0, -provider.lr_phase(n, t)?))
        })
        .collect()
}

fn derivative_stencil(t: f64, h: f64, lo: f64, hi: f64, smooth: bool) -> Option<Vec<(f64, f64)>> {
    let eps = 1e-12 * (hi - lo);
    if smooth {
        if t - 2.0 * h >= lo - eps && t + 2.0 * h <= hi + eps {
            Some(vec![(-2.0, 1.0), (-1.0, -8.0), (1.0, 8.0), (2.0, -1.0)].into_iter().map(|(o, w)| (o, w / 12.0)).collect())
        } else if t + 4.0 * h <= hi + eps {
            Some(vec![(0.0, -25.0), (1.0, 48.0), (2.0, -36.0), (3.0, 16.0), (4.0, -3.0)].into_iter().map(|(o, w)| (o, w / 12.0)).collect())
        } else if t - 4.0 * h >= lo - eps {
            Some(vec![(0.0, 25.0), (-1.0, -48.0), (-2.0, 36.0), (-3.0, -16.0), (-4.0, 3.0)].into_iter().map(|(o, w)| (o, w / 12.0)).collect())
        } else {
            None
        }
    } else if t - h >= lo - eps && t + h <= hi + eps {
        Some(vec![(-1.0, -0.5), (1.0, 0.5)])
    } else {
        None
    }
}

/// `max ‖iħ İ − [H, I]‖_F / (‖H‖_F ‖I‖_F)` over the grid, İ by differences
/// with the grid spacing (fourth order when `invariant` is smooth).
pub fn invariance_residual(
    hamiltonian: &dyn HamiltonianSchedule,
    invariant: &dyn HamiltonianSchedule,
    grid: &TimeGrid,
) -> Result<f64> {
    let nodes = grid.nodes();
    if nodes.len() < 2 {
        return Ok(0.0);
    }
    let h = nodes.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let (lo, hi) = (nodes[0], nodes[nodes.len() - 1]);
    let mut worst: f64 = 0.0;
    for &t in nodes {
        let Some(stencil) = derivative_stencil(t, h, lo, hi, invariant.is_smooth()) else {
            continue;
        };
        let i_t = invariant.matrix(t)?;
        let mut di = BandMatrix::zeros(i_t.dim(), i_t.half_bandwidth());
        for (o, w) in stencil {
            let m = invariant.matrix(t + o * h)?;
            di = di.combine(C64::new(1.0, 0.0), &m, C64::new(w / h, 0.0));
        }
        let h_t = hamiltonian.matrix(t)?;
        let defect = di.combine(C64::new(0.0, HBAR), &h_t.commutator(&i_t), C64::new(-1.0, 0.0));
        let num = defect.frobenius_norm();
        let denom = h_t.frobenius_norm() * i_t.frobenius_norm();
        if denom == 0.0 {
            if num > 0.0 {
                return Ok(f64::INFINITY);
            }
            continue;
        }
        worst = worst.max(num / denom);
    }
    Ok(worst)
}

/// Same residual for quadratic forms, evaluated in the operator algebra
/// rather than in a truncated basis: `‖İ − [H, I]/(iħ)‖ / (‖H‖‖I‖)` on
/// coefficient vectors.
pub fn form_invariance_residual(
    hamiltonian: &dyn Fn(f64) -> Result<QuadraticForm>,
    invariant: &dyn Fn(f64) -> Result<QuadraticForm>,
    grid: &TimeGrid,
) -> Result<f64> {
    let nodes = grid.nodes();
    if nodes.len() < 2 {
        return Ok(0.0);
    }
    let h = nodes.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let (lo, hi) = (nodes[0], nodes[nodes.len() - 1]);
    let mut worst: f64 = 0.0;
    for &t in nodes {
        let Some(stencil) = derivative_stencil(t, h, lo, hi, true) else {
            continue;
        };
        let mut di = QuadraticForm::default();
        for (o, w) in stencil {
            di = di + (w / h) * invariant(t + o * h)?;
        }
        let (h_t, i_t) = (hamiltonian(t)?, invariant(t)?);
        let num = (di - h_t.bracket(&i_t)).norm();
        let denom = h_t.norm() * i_t.norm();
        if denom == 0.0 {
            if num > 0.0 {
                return Ok(f64::INFINITY);
            }
            continue;
        }
        worst = worst.max(num / denom);
    }
    Ok(worst)
}

/// `max_t |⟨ψ(t)|I(t)|ψ(t)⟩ − ⟨ψ(0)|I(0)|ψ(0)⟩|`.
pub fn expectation_drift(record: &PropagationRecord, invariant: &dyn HamiltonianSchedule) -> Result<f64> {
    let mut first = None;
    let mut worst: f64 = 0.0;
    for (i, s) in record.states.iter().enumerate() {
        let v = invariant.matrix(record.grid.node(i))?.expectation(s.amplitudes());
        let v0 = *first.get_or_insert(v);
        worst = worst.max((v - v0).abs());
    }
    Ok(worst)
}

/// `|⟨a|b⟩|²`.
pub fn fidelity(a: &StateVector, b: &StateVector) -> f64 {
    inner(a.amplitudes(), b.amplitudes()).norm_sqr()
}

/// `∫₀^{t_k} f` helper for callers holding plain vectors.
pub fn integrate_on(grid: &TimeGrid, values: Vec<f64>, up_to: usize) -> Result<f64> {
    integrate_sampled(&SampledScalar::new(grid.clone(), values)?, up_to)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tls_design::{controls_from_angles, preset_fig1, Controls};
    use proptest::prelude::*;

    fn constant_tls(delta: f64, omega_r: f64, phi: f64) -> impl HamiltonianSchedule {
        TwoLevelSchedule::new(move |_| Ok(Controls { delta, omega_r, phi }.hamiltonian()))
    }

    /// Classical RK4 with a fixed step, used as an independent oracle.
    fn rk4(schedule: &dyn HamiltonianSchedule, psi0: &[C64], t_f: f64, steps: usize) -> Vec<C64> {
        let n = psi0.len();
        let h = t_f / steps as f64;
        let f = |t: f64, y: &[C64]| {
            let mut out = vec![C64::new(0.0, 0.0); n];
            schedule.apply(t, y, &mut out).unwrap();
            out.into_iter().map(|z| z * C64::new(0.0, -1.0 / HBAR)).collect::<Vec<_>>()
        };
        let mut y = psi0.to_vec();
        for s in 0..steps {
            let t = s as f64 * h;
            let k1 = f(t, &y);
            let y2: Vec<C64> = (0..n).map(|i| y[i] + 0.5 * h * k1[i]).collect();
            let k2 = f(t + 0.5 * h, &y2);
            let y3: Vec<C64> = (0..n).map(|i| y[i] + 0.5 * h * k2[i]).collect();
            let k3 = f(t + 0.5 * h, &y3);
            let y4: Vec<C64> = (0..n).map(|i| y[i] + h * k3[i]).collect();
            let k4 = f(t + h, &y4);
            for i in 0..n {
                y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        y
    }

    #[test]
    fn rabi_oscillation() {
        let omega = 2.0;
        let t_f = PI / omega;
        let grid = TimeGrid::uniform(t_f, 101).unwrap();
        let psi0 = StateVector::basis(2, 1).unwrap();
        let rec = propagate(&constant_tls(0.0, omega, 0.0), &psi0, &grid, DEFAULT_REL_TOL, DEFAULT_ABS_TOL).unwrap();
        let pops = tls_populations(&rec);
        for (i, &(p1, p2)) in pops.iter().enumerate() {
            let expected = (0.5 * omega * grid.node(i)).sin().powi(2);
            assert!((p2 - expected).abs() < 1e-8);
            assert!((p1 + p2 - 1.0).abs() < 1e-9);
        }
        assert!((pops[100].1 - 1.0).abs() < 1e-10);
        assert_eq!(pops[0], (1.0, 0.0));
        assert!(rec.norm_drift <= 10.0 * DEFAULT_REL_TOL);
    }

    #[test]
    fn diagonal_evolution() {
        let delta = 1.7;
        let grid = TimeGrid::uniform(3.0, 31).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let psi0 = StateVector::new(vec![C64::new(s, 0.0), C64::new(s, 0.0)]).unwrap();
        let rec = propagate(&constant_tls(delta, 0.0, 0.0), &psi0, &grid, DEFAULT_REL_TOL, DEFAULT_ABS_TOL).unwrap();
        for (i, st) in rec.states.iter().enumerate() {
            let a = st.amplitudes();
            assert!((a[0].norm_sqr() - 0.5).abs() < 1e-10);
            let rel = a[1] / a[0];
            assert!((rel - C64::from_polar(1.0, delta * grid.node(i))).norm() < 1e-10);
        }
    }

    #[test]
    fn stationary_fock_state() {
        let w = 1.3;
        let sched = FockSchedule::new(16, w, move |_| Ok(QuadraticForm::oscillator(w * w))).unwrap();
        let grid = TimeGrid::uniform(4.0, 9).unwrap();
        let rec = propagate(&sched, &StateVector::basis(16, 3).unwrap(), &grid, DEFAULT_REL_TOL, DEFAULT_ABS_TOL).unwrap();
        for (i, st) in rec.states.iter().enumerate() {
            let a = st.amplitudes()[3];
            assert!((a.norm() - 1.0).abs() < 1e-9);
            let expected = C64::from_polar(1.0, -3.5 * w * grid.node(i) / HBAR);
            assert!((a - expected).norm() < 1e-9);
        }
    }

    #[test]
    fn argument_validation() {
        let grid = TimeGrid::uniform(1.0, 5).unwrap();
        let psi0 = StateVector::basis(2, 0).unwrap();
        let s = constant_tls(1.0, 1.0, 0.0);
        assert!(propagate(&s, &psi0, &grid, 1e-5, 1e-12).is_err());
        assert!(propagate(&s, &psi0, &grid, 1e-14, 1e-12).is_err());
        assert!(matches!(
            propagate(&s, &StateVector::basis(3, 0).unwrap(), &grid, 1e-10, 1e-12),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn non_hermitian_schedule_rejected() {
        struct Skew;
        impl HamiltonianSchedule for Skew {
            fn dim(&self) -> usize {
                2
            }
            fn matrix(&self, _t: f64) -> Result<BandMatrix> {
                let mut b = BandMatrix::zeros(2, 1);
                b.set(0, 1, C64::new(1.0, 0.0));
                Ok(b)
            }
        }
        let grid = TimeGrid::uniform(1.0, 5).unwrap();
        let psi0 = StateVector::basis(2, 0).unwrap();
        assert!(matches!(propagate(&Skew, &psi0, &grid, 1e-10, 1e-12), Err(Error::NotHermitian { .. })));
    }

    #[test]
    fn stiffness_detected() {
        let grid = TimeGrid::uniform(1.0, 3).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let psi = StateVector::new(vec![C64::new(s, 0.0), C64::new(s, 0.0)]).unwrap();
        let huge = constant_tls(0.0, 1e18, 0.0);
        assert!(matches!(propagate(&huge, &psi, &grid, 1e-10, 1e-12), Err(Error::StiffnessFailure { .. })));
    }

    #[test]
    fn agrees_with_fixed_step_oracle() {
        let design = preset_fig1(1.0).unwrap();
        let sched = tls_reference(&design);
        let grid = TimeGrid::uniform(1.0, 11).unwrap();
        let psi0 = StateVector::basis(2, 1).unwrap();
        let oracle = rk4(&sched, psi0.amplitudes(), 1.0, 1 << 16);
        let mut errors = Vec::new();
        for tol in [1e-6, 1e-8, 1e-10] {
            let rec = propagate(&sched, &psi0, &grid, tol, tol * 1e-2).unwrap();
            let end = rec.final_state().amplitudes();
            errors.push(end.iter().zip(&oracle).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max));
            assert!(rec.norm_drift <= 10.0 * tol, "drift {} at tol {tol}", rec.norm_drift);
        }
        assert!(errors[0] > errors[1] && errors[1] > errors[2], "{errors:?}");
        assert!(errors[2] < 1e-9, "{errors:?}");
    }

    #[test]
    fn adiabatic_reference_angles() {
        let grid = TimeGrid::uniform(1.0, 3).unwrap();
        let c = TLSControls::from_samples(&grid, vec![-1.0, 0.0, 1.0], vec![0.0, 1.0, 0.0], vec![0.0; 3]);
        assert!(c.is_err());
        let grid = TimeGrid::uniform(1.0, 5).unwrap();
        let c = TLSControls::from_samples(&grid, vec![-1.0, 0.0, 1.0, 1.0, 1.0], vec![0.0, 1.0, 0.0, 0.0, 0.0], vec![0.0; 5]).unwrap();
        let r = adiabatic_reference(&c, Branch::Plus).unwrap();
        assert!((r[0].0 - 1.0).abs() < 1e-15 && r[0].1.abs() < 1e-15);
        assert!((r[1].0 - 0.5).abs() < 1e-15 && (r[1].1 - 0.5).abs() < 1e-15);
        assert!(r[2].0.abs() < 1e-15 && (r[2].1 - 1.0).abs() < 1e-15);
        let m = adiabatic_reference(&c, Branch::Minus).unwrap();
        assert_eq!(m[0], (r[0].1, r[0].0));
    }

    #[test]
    fn superposition_populations() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let grid = TimeGrid::uniform(1.0, 2).unwrap();
        let rec = PropagationRecord {
            grid,
            states: vec![StateVector::new(vec![C64::new(s, 0.0), C64::new(0.0, s)]).unwrap(); 2],
            norm_drift: 0.0,
            stats: StepStats::default(),
        };
        let p = tls_populations(&rec);
        assert!((p[0].0 - 0.5).abs() < 1e-15 && (p[0].1 - 0.5).abs() < 1e-15);
        assert_eq!(level_populations(&rec, &[1])[1].len(), 1);
    }

    #[test]
    fn transport_and_decomposition() {
        let design = preset_fig1(1.0).unwrap();
        let sched = tls_reference(&design);
        let grid = TimeGrid::uniform(1.0, 101).unwrap();
        let rec = propagate(&sched, &StateVector::basis(2, 1).unwrap(), &grid, DEFAULT_REL_TOL, DEFAULT_ABS_TOL).unwrap();
        let ov = mode_transport_check(&rec, &design, 0).unwrap();
        assert_eq!(ov[0].phase, 0.0);
        for o in &ov {
            assert!(1.0 - o.modulus.powi(2) <= 1e-8);
        }

        let (p, m) = design.invariant_modes(0.0);
        let mix: Vec<C64> = p.amplitudes().iter().zip(m.amplitudes()).map(|(a, b)| (a + b) / 2f64.sqrt()).collect();
        let rec = propagate(&sched, &StateVector::new(mix).unwrap(), &grid, DEFAULT_REL_TOL, DEFAULT_ABS_TOL).unwrap();
        for node in [0, 30, 70, 100] {
            let c = decompose_into_modes(&rec, &design, node, 2).unwrap();
            for a in c {
                assert!((a.norm() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn residual_examples() {
        let grid = TimeGrid::uniform(1.0, 21).unwrap();
        let h = constant_tls(0.4, 1.1, 0.2);
        assert!(invariance_residual(&h, &h, &grid).unwrap() < 1e-13);

        let design = preset_fig1(1.0).unwrap();
        let grid = TimeGrid::uniform(1.0, 2001).unwrap();
        let r = invariance_residual(&tls_reference(&design), &tls_invariant(&design), &grid).unwrap();
        assert!(r <= 1e-8, "{r}");

        let mut g = design.gamma().coefficients().to_vec();
        g[2] *= 1.05;
        g[3] *= 1.05;
        let bent = AngleDesign::new(crate::curves::PolynomialCurve::new(g), design.beta().clone(), design.phi().clone(), 1.0, 1.0).unwrap();
        let r = invariance_residual(&tls_reference(&design), &tls_invariant(&bent), &grid).unwrap();
        assert!(r > 1e-3, "{r}");
    }

    #[test]
    fn invariant_expectation_is_conserved() {
        let design = preset_fig1(1.0).unwrap();
        let grid = TimeGrid::uniform(1.0, 201).unwrap();
        let s = 0.6f64;
        let psi0 = StateVector::new(vec![C64::new(s, 0.0), C64::new(0.0, 0.8)]).unwrap();
        let rec = propagate(&tls_reference(&design), &psi0, &grid, DEFAULT_REL_TOL, DEFAULT_ABS_TOL).unwrap();
        assert!(expectation_drift(&rec, &tls_invariant(&design)).unwrap() <= 1e-7 * design.omega0());
        let _ = controls_from_angles(&design, &grid).unwrap();
    }

    #[test]
    fn dense_output_matches_direct_steps() {
        // Same run sampled coarsely and finely must agree at shared nodes.
        let design = preset_fig1(1.0).unwrap();
        let sched = tls_reference(&design);
        let psi0 = StateVector::basis(2, 1).unwrap();
        let coarse = propagate(&sched, &psi0, &TimeGrid::uniform(1.0, 5).unwrap(), 1e-11, 1e-13).unwrap();
        let fine = propagate(&sched, &psi0, &TimeGrid::uniform(1.0, 401).unwrap(), 1e-11, 1e-13).unwrap();
        for i in 0..5 {
            let d = coarse.states[i].amplitudes().iter().zip(fine.states[100 * i].amplitudes()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(d < 1e-9, "node {i}: {d}");
        }
    }

    #[test]
    fn oscillator_form_residuals() {
        let grid = TimeGrid::uniform(2.0, 2001).unwrap();
        let d = ErmakovDesign::polynomial(1.0, 0.1, 2.0, 5).unwrap();
        let r = form_invariance_residual(&|t| d.hamiltonian_form(t), &|t| Ok(d.invariant_form(t)), &grid).unwrap();
        assert!(r <= 1e-8, "{r}");
        let bent = ErmakovDesign::polynomial(1.0, 0.2, 2.0, 5).unwrap();
        let r = form_invariance_residual(&|t| d.hamiltonian_form(t), &|t| Ok(bent.invariant_form(t)), &grid).unwrap();
        assert!(r > 1e-3, "{r}");

        let ramp = OmegaRamp::smoothstep(1.0, 0.1, 1.0).unwrap();
        let grid = TimeGrid::uniform(1.0, 2001).unwrap();
        let r = form_invariance_residual(&|t| ramp.berry_hamiltonian(t), &|t| ramp.invariant(t), &grid).unwrap();
        assert!(r <= 1e-8, "{r}");
        let r = form_invariance_residual(&|t| ramp.reference_hamiltonian(t), &|t| ramp.invariant(t), &grid).unwrap();
        assert!(r > 1e-3, "{r}");
    }

    #[test]
    fn tracking_transport() {
        let reference = crate::tls_design::preset_tracking(1.0).unwrap();
        let grid = TimeGrid::uniform(1.0, 101).unwrap();
        let modes = TrackingModes { schedule: &reference };
        let psi0 = modes.mode(0, 0.0).unwrap();
        let rec = propagate(&tls_counterdiabatic(&reference), &psi0, &grid, DEFAULT_REL_TOL, DEFAULT_ABS_TOL).unwrap();
        for o in mode_transport_check(&rec, &modes, 0).unwrap() {
            assert!(1.0 - o.modulus.powi(2) <= 1e-8);
        }
        let c = decompose_into_modes(&rec, &modes, 100, 2).unwrap();
        assert!((c[0] - C64::new(1.0, 0.0)).norm() < 1e-6, "{c:?}");
        assert!(c[1].norm() < 1e-8);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn unitarity(delta in -5.0..5.0f64, omega in 0.0..5.0f64, rate in -3.0..3.0f64, tol_exp in 7i32..12) {
            let sched = TwoLevelSchedule::new(move |t: f64| Ok(Controls { delta: delta + rate * t, omega_r: omega, phi: 0.3 * t }.hamiltonian()));
            let grid = TimeGrid::uniform(2.0, 17).unwrap();
            let tol = 10f64.powi(-tol_exp);
            let rec = propagate(&sched, &StateVector::basis(2, 1).unwrap(), &grid, tol, tol * 1e-2).unwrap();
            prop_assert!(rec.norm_drift <= 10.0 * tol);
            prop_assert_eq!(rec.states.len(), 17);
        }
    }
}
