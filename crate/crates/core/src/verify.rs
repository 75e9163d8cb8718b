//! Runs of a design document, the verification battery behind `check`, and
//! the per-duration summary used by sweeps.

use std::f64::consts::PI;
use std::str::FromStr;

use serde::Serialize;

use crate::curves::TimeGrid;
use crate::design_io::{DesignDocument, Method};
use crate::error::{Error, Result};
use crate::fock::build_operator;
use crate::ho_design::{ErmakovDesign, OmegaRamp};
use crate::linalg::StateVector;
use crate::propagator::{
    adiabatic_reference, expectation_drift, fidelity, form_invariance_residual, ho_invariant, invariance_residual,
    mode_transport_check, propagate, tls_counterdiabatic, tls_invariant, tls_reference, Branch, FockInvariantModes,
    FockSchedule, HamiltonianSchedule, ModeProvider, PropagationRecord, RampModes, TrackingModes, TwoLevelSchedule,
    DEFAULT_ABS_TOL, DEFAULT_REL_TOL,
};
use crate::tls_design::{
    adiabaticity_metric, commutator_endpoint_report, hamiltonian, lr_phase_curve, reconstruct_hamiltonian,
    tracking_invariant, tracking_phase_curve, AngleDesign, ControlSchedule, ReferenceSchedule, TLSControls,
};
use crate::HBAR;

pub const TLS_DEFAULT_SAMPLES: usize = 1001;
pub const HO_DEFAULT_SAMPLES: usize = 201;
pub const DEFAULT_FOCK_DIM: usize = 128;
/// Grid used for invariance residuals, independent of the output grid.
const RESIDUAL_SAMPLES: usize = 2001;

/// Starting state: a bare level (`1`, `2` for the atom, `n` for the
/// oscillator) or an invariant/adiabatic mode (`plus`, `minus`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialState {
    Level(usize),
    Mode(usize),
}

impl FromStr for InitialState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plus" => Ok(Self::Mode(0)),
            "minus" => Ok(Self::Mode(1)),
            _ => s
                .parse()
                .map(Self::Level)
                .map_err(|_| Error::InvalidArgument(format!("unknown initial state {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub method: Option<Method>,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub samples: Option<usize>,
    pub fock_dim: usize,
    pub state: Option<InitialState>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            method: None,
            rel_tol: DEFAULT_REL_TOL,
            abs_tol: DEFAULT_ABS_TOL,
            samples: None,
            fock_dim: DEFAULT_FOCK_DIM,
            state: None,
        }
    }
}

impl RunOptions {
    fn method_for(&self, doc: &DesignDocument) -> Result<Method> {
        let method = self.method.unwrap_or_else(|| doc.default_method());
        doc.check_method(method)?;
        Ok(method)
    }

    fn grid_for(&self, doc: &DesignDocument) -> Result<TimeGrid> {
        let default = match doc {
            DesignDocument::TwoLevel(_) => TLS_DEFAULT_SAMPLES,
            DesignDocument::Oscillator(_) => HO_DEFAULT_SAMPLES,
        };
        TimeGrid::uniform(doc.t_f(), self.samples.unwrap_or(default))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TlsRow {
    pub t: f64,
    pub p1: f64,
    pub p2: f64,
    pub p1_ad: f64,
    pub p2_ad: f64,
    pub overlap_mode_plus: f64,
    pub phase_mode_plus: f64,
    pub alpha_plus: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HoRow {
    pub t: f64,
    pub fidelity: f64,
    pub populations: Vec<f64>,
    pub norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Rows {
    TwoLevel(Vec<TlsRow>),
    Oscillator { mode: usize, levels: Vec<usize>, rows: Vec<HoRow> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub method: Method,
    pub record: PropagationRecord,
    /// `1 − |⟨target|ψ(t_f)⟩|²` for the mode the run started in.
    pub final_infidelity: f64,
    /// Minimum over nodes of `|⟨mode(t)|ψ(t)⟩|²`.
    pub min_mode_overlap: f64,
    pub peak_rabi: Option<f64>,
    pub min_omega_squared: Option<f64>,
    pub adiabaticity_metric: Option<f64>,
    pub rows: Rows,
}

enum TlsSource {
    Angles(AngleDesign),
    Reference(ReferenceSchedule),
}

impl TlsSource {
    fn schedule(&self) -> &dyn ControlSchedule {
        match self {
            Self::Angles(a) => a,
            Self::Reference(r) => r,
        }
    }
}

fn tls_source(doc: &DesignDocument, method: Method) -> Result<TlsSource> {
    let angles = doc.angles()?;
    match (method, doc.reference(), angles) {
        (Method::Invariant, _, Some(a)) => Ok(TlsSource::Angles(a)),
        (Method::Counterdiabatic | Method::ReferenceOnly, Some(r), _) => Ok(TlsSource::Reference(r)),
        (Method::Counterdiabatic, None, Some(a)) => Ok(TlsSource::Angles(a)),
        _ => Err(Error::InvalidArgument(format!("method {method} needs curves this design does not provide"))),
    }
}

fn tls_hamiltonian<'a>(schedule: &'a dyn ControlSchedule, method: Method) -> Box<dyn HamiltonianSchedule + 'a> {
    match method {
        Method::Counterdiabatic => Box::new(tls_counterdiabatic(schedule)),
        _ => Box::new(tls_reference(schedule)),
    }
}

fn tracked_mode(modes: &dyn ModeProvider, psi0: &StateVector, count: usize) -> Result<usize> {
    let mut best = (0, -1.0);
    for m in 0..count {
        let f = fidelity(&modes.mode(m, 0.0)?, psi0);
        if f > best.1 {
            best = (m, f);
        }
    }
    Ok(best.0)
}

/// Propagates the document's protocol and tabulates the trajectory.
pub fn run(doc: &DesignDocument, opts: &RunOptions) -> Result<Trajectory> {
    let method = opts.method_for(doc)?;
    match doc {
        DesignDocument::TwoLevel(_) => run_tls(doc, method, opts),
        DesignDocument::Oscillator(_) => run_ho(doc, method, opts, opts.fock_dim),
    }
}

fn run_tls(doc: &DesignDocument, method: Method, opts: &RunOptions) -> Result<Trajectory> {
    let source = tls_source(doc, method)?;
    let schedule = source.schedule();
    let grid = opts.grid_for(doc)?;
    let controls = TLSControls::from_schedule(schedule, &grid)?;
    let tracking = TrackingModes { schedule };
    let (modes, alpha): (&dyn ModeProvider, Vec<f64>) = match (&source, method) {
        (TlsSource::Angles(a), Method::Invariant) => (a, lr_phase_curve(a, &controls)),
        _ => (&tracking, tracking_phase_curve(&controls)?),
    };
    let psi0 = match opts.state.unwrap_or(InitialState::Level(1)) {
        InitialState::Level(1) => StateVector::basis(2, 1)?,
        InitialState::Level(2) => StateVector::basis(2, 0)?,
        InitialState::Mode(m) => modes.mode(m, 0.0)?,
        InitialState::Level(l) => return Err(Error::InvalidArgument(format!("two-level states are 1, 2, plus, minus; got {l}"))),
    };
    let h = tls_hamiltonian(schedule, method);
    let record = propagate(h.as_ref(), &psi0, &grid, opts.rel_tol, opts.abs_tol)?;

    let plus = mode_transport_check(&record, modes, 0)?;
    let tracked = tracked_mode(modes, &psi0, 2)?;
    let transport = if tracked == 0 { plus.clone() } else { mode_transport_check(&record, modes, tracked)? };
    let e0 = controls.at(0).eigensystem(0.0)?;
    let branch = if fidelity(&e0.n_plus, &psi0) >= 0.5 { Branch::Plus } else { Branch::Minus };
    let reference = adiabatic_reference(&controls, branch)?;

    let rows = (0..grid.len())
        .map(|i| {
            let s = &record.states[i];
            TlsRow {
                t: grid.node(i),
                p1: s.population(1),
                p2: s.population(0),
                p1_ad: reference[i].0,
                p2_ad: reference[i].1,
                overlap_mode_plus: plus[i].modulus,
                phase_mode_plus: plus[i].phase,
                alpha_plus: alpha[i],
            }
        })
        .collect();

    let mut peak: f64 = 0.0;
    for &t in grid.nodes() {
        peak = peak.max(2.0 * h.matrix(t)?.get(0, 1).norm() / HBAR);
    }
    let last = transport.last().expect("non-empty grid");
    Ok(Trajectory {
        method,
        final_infidelity: 1.0 - last.modulus.powi(2),
        min_mode_overlap: transport.iter().map(|o| o.modulus.powi(2)).fold(f64::INFINITY, f64::min),
        record,
        peak_rabi: Some(peak),
        min_omega_squared: None,
        adiabaticity_metric: adiabaticity_metric(&controls).ok(),
        rows: Rows::TwoLevel(rows),
    })
}

enum HoSource {
    Invariant(ErmakovDesign),
    Ramp(OmegaRamp),
}

fn ho_source(doc: &DesignDocument, method: Method) -> Result<HoSource> {
    let missing = || Error::InvalidArgument(format!("method {method} needs curves this design does not provide"));
    match method {
        Method::Invariant => Ok(HoSource::Invariant(doc.ermakov()?.ok_or_else(missing)?)),
        _ => Ok(HoSource::Ramp(doc.ramp()?.ok_or_else(missing)?)),
    }
}

fn omega0_of(doc: &DesignDocument) -> f64 {
    match doc {
        DesignDocument::Oscillator(d) => d.omega0,
        DesignDocument::TwoLevel(d) => d.omega0,
    }
}

fn ho_hamiltonian<'a>(source: &'a HoSource, method: Method, dim: usize, omega_ref: f64) -> Result<Box<dyn HamiltonianSchedule + 'a>> {
    Ok(match (source, method) {
        (HoSource::Invariant(d), _) => Box::new(FockSchedule::new(dim, omega_ref, move |t| d.hamiltonian_form(t))?),
        (HoSource::Ramp(r), Method::Counterdiabatic) => Box::new(FockSchedule::new(dim, omega_ref, move |t| r.berry_hamiltonian(t))?),
        (HoSource::Ramp(r), _) => Box::new(FockSchedule::new(dim, omega_ref, move |t| r.reference_hamiltonian(t))?),
    })
}

fn ho_modes<'a>(source: &'a HoSource, dim: usize, omega_ref: f64) -> Box<dyn ModeProvider + 'a> {
    match source {
        HoSource::Invariant(design) => Box::new(FockInvariantModes { design, dim, omega_ref }),
        HoSource::Ramp(ramp) => Box::new(RampModes { ramp, dim, omega_ref }),
    }
}

fn run_ho(doc: &DesignDocument, method: Method, opts: &RunOptions, dim: usize) -> Result<Trajectory> {
    let source = ho_source(doc, method)?;
    let omega_ref = omega0_of(doc);
    let grid = opts.grid_for(doc)?;
    let n = match opts.state.unwrap_or(InitialState::Level(0)) {
        InitialState::Level(n) if n < dim => n,
        other => return Err(Error::InvalidArgument(format!("oscillator start must be a level below {dim}, got {other:?}"))),
    };
    let h = ho_hamiltonian(&source, method, dim, omega_ref)?;
    let modes = ho_modes(&source, dim, omega_ref);
    let record = propagate(h.as_ref(), &StateVector::basis(dim, n)?, &grid, opts.rel_tol, opts.abs_tol)?;
    let transport = mode_transport_check(&record, modes.as_ref(), n)?;

    let t_f = doc.t_f();
    let final_form = match &source {
        HoSource::Invariant(d) => d.hamiltonian_form(t_f)?,
        HoSource::Ramp(r) => r.reference_hamiltonian(t_f)?,
    };
    let target = build_operator(final_form, dim, omega_ref)?.eigenpairs(n + 1)?.pop().expect("n + 1 pairs").vector;
    let final_fidelity = fidelity(&target, record.final_state());

    let levels: Vec<usize> = (0..(n + 5).min(dim)).collect();
    let rows = (0..grid.len())
        .map(|i| {
            let s = &record.states[i];
            HoRow {
                t: grid.node(i),
                fidelity: transport[i].modulus.powi(2),
                populations: levels.iter().map(|&l| s.population(l)).collect(),
                norm: s.norm(),
            }
        })
        .collect();

    let (min_omega_squared, metric) = match &source {
        HoSource::Invariant(d) => (Some(d.trap_scan()?.min_omega_squared), doc.ramp()?.map(|r| r.adiabaticity_metric()).transpose()?),
        HoSource::Ramp(r) => {
            let min = grid.nodes().iter().map(|&t| r.omega().value(t).powi(2)).fold(f64::INFINITY, f64::min);
            (Some(min), Some(r.adiabaticity_metric()?))
        }
    };
    Ok(Trajectory {
        method,
        final_infidelity: 1.0 - final_fidelity,
        min_mode_overlap: transport.iter().map(|o| o.modulus.powi(2)).fold(f64::INFINITY, f64::min),
        record,
        peak_rabi: None,
        min_omega_squared,
        adiabaticity_metric: metric,
        rows: Rows::Oscillator { mode: n, levels, rows },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    AtMost,
    AtLeast,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckEntry {
    pub name: String,
    pub value: Option<f64>,
    pub bound: Bound,
    pub threshold: f64,
    pub passed: bool,
    pub error: Option<String>,
}

/// Results of the verification battery. Quantities that do not apply to the
/// design are `null`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub system: String,
    pub method: Method,
    pub ermakov_residual_max: Option<f64>,
    pub endpoint_commutator_start: Option<f64>,
    pub endpoint_commutator_end: Option<f64>,
    pub invariance_residual: Option<f64>,
    pub norm_drift: Option<f64>,
    pub adiabaticity_metric: Option<f64>,
    pub truncation_delta: Option<f64>,
    pub final_infidelity: Option<f64>,
    pub peak_rabi: Option<f64>,
    pub min_omega_squared: Option<f64>,
    pub trap_inverted: Option<bool>,
    pub checks: Vec<CheckEntry>,
    pub passed: bool,
}

impl CheckReport {
    fn new(system: &str, method: Method) -> Self {
        Self {
            system: system.into(),
            method,
            ermakov_residual_max: None,
            endpoint_commutator_start: None,
            endpoint_commutator_end: None,
            invariance_residual: None,
            norm_drift: None,
            adiabaticity_metric: None,
            truncation_delta: None,
            final_infidelity: None,
            peak_rabi: None,
            min_omega_squared: None,
            trap_inverted: None,
            checks: Vec::new(),
            passed: true,
        }
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckEntry> {
        self.checks.iter().filter(|c| !c.passed)
    }

    fn record(&mut self, name: &str, value: Result<f64>, bound: Bound, threshold: f64) -> Option<f64> {
        let (value, error) = match value {
            Ok(v) => (Some(v), None),
            Err(e) => (None, Some(e.to_string())),
        };
        let passed = match (value, bound) {
            (Some(v), Bound::AtMost) => v <= threshold,
            (Some(v), Bound::AtLeast) => v >= threshold,
            (None, _) => false,
        };
        self.passed &= passed;
        self.checks.push(CheckEntry {
            name: name.into(),
            value,
            bound,
            threshold,
            passed,
            error,
        });
        value
    }

    fn at_most(&mut self, name: &str, value: Result<f64>, threshold: f64) -> Option<f64> {
        self.record(name, value, Bound::AtMost, threshold)
    }

    fn at_least(&mut self, name: &str, value: Result<f64>, threshold: f64) -> Option<f64> {
        self.record(name, value, Bound::AtLeast, threshold)
    }

    fn absorb_run(&mut self, traj: &Trajectory) {
        self.final_infidelity = Some(traj.final_infidelity);
        self.peak_rabi = traj.peak_rabi;
        self.min_omega_squared = traj.min_omega_squared;
        self.adiabaticity_metric = traj.adiabaticity_metric;
        self.norm_drift = Some(traj.record.norm_drift);
    }
}

fn wrap_angle(x: f64) -> f64 {
    x - 2.0 * PI * (x / (2.0 * PI)).round()
}

/// Runs every applicable check. Only document/method mismatches are errors;
/// numerical failures are reported as failed entries.
pub fn check(doc: &DesignDocument, opts: &RunOptions) -> Result<CheckReport> {
    let method = opts.method_for(doc)?;
    Ok(match doc {
        DesignDocument::TwoLevel(_) => check_tls(doc, method, opts),
        DesignDocument::Oscillator(_) => check_ho(doc, method, opts),
    })
}

fn check_tls(doc: &DesignDocument, method: Method, opts: &RunOptions) -> CheckReport {
    let mut report = CheckReport::new("two_level", method);
    let source = match tls_source(doc, method) {
        Ok(s) => s,
        Err(e) => {
            report.at_most("design", Err(e), 0.0);
            return report;
        }
    };
    let schedule = source.schedule();
    let t_f = doc.t_f();
    let residual_grid = TimeGrid::uniform(t_f, RESIDUAL_SAMPLES).expect("positive duration");
    let norm_bound = 10.0 * opts.rel_tol;

    if method == Method::ReferenceOnly {
        let traj = run_tls(doc, method, opts);
        match traj {
            Ok(t) => {
                report.absorb_run(&t);
                report.at_most("norm_drift", Ok(t.record.norm_drift), norm_bound);
            }
            Err(e) => {
                report.at_most("propagation", Err(e), 0.0);
            }
        }
        return report;
    }

    match (&source, method) {
        (TlsSource::Angles(design), Method::Invariant) => {
            let grid = opts.grid_for(doc).expect("positive duration");
            match TLSControls::from_schedule(design, &grid) {
                Ok(controls) => {
                    let ep = commutator_endpoint_report(design, &controls);
                    report.endpoint_commutator_start = Some(ep.norm_start);
                    report.endpoint_commutator_end = Some(ep.norm_end);
                    let scale = if ep.scale > 0.0 { ep.scale } else { 1.0 };
                    report.at_most("endpoint_commutation", Ok(ep.norm_start.max(ep.norm_end) / scale), 1e-10);
                    let mut worst: f64 = 0.0;
                    for i in 1..controls.len() - 1 {
                        worst = worst.max(reconstruct_hamiltonian(design, &controls, i).max_abs_difference(&hamiltonian(&controls, i)));
                    }
                    report.at_most("hamiltonian_reconstruction", Ok(worst / controls.max_control().max(1.0)), 1e-12);
                }
                Err(e) => {
                    report.at_most("controls", Err(e), 0.0);
                }
            }
            report.invariance_residual = report.at_most(
                "invariance_residual",
                invariance_residual(&tls_reference(design), &tls_invariant(design), &residual_grid),
                1e-8,
            );
        }
        _ => {
            let cd = tls_counterdiabatic(schedule);
            let inv = TwoLevelSchedule::new(move |t| tracking_invariant(&schedule.controls_at(t)?, 1.0, t));
            let endpoint = |t: f64| -> Result<f64> {
                let (h, i) = (cd.matrix(t)?, inv.matrix(t)?);
                Ok(h.commutator(&i).frobenius_norm() / (h.frobenius_norm() * i.frobenius_norm()))
            };
            let (s, e) = (endpoint(0.0), endpoint(t_f));
            report.endpoint_commutator_start = s.as_ref().ok().copied();
            report.endpoint_commutator_end = e.as_ref().ok().copied();
            report.at_most("endpoint_commutation", s.and_then(|a| e.map(|b| a.max(b))), 1e-10);
            report.invariance_residual =
                report.at_most("invariance_residual", invariance_residual(&cd, &inv, &residual_grid), 1e-8);
        }
    }

    let mode_opts = RunOptions {
        state: Some(InitialState::Mode(0)),
        ..opts.clone()
    };
    match run_tls(doc, method, &mode_opts) {
        Ok(traj) => {
            report.absorb_run(&traj);
            report.at_most("norm_drift", Ok(traj.record.norm_drift), norm_bound);
            report.at_least("mode_transport", Ok(traj.min_mode_overlap), 1.0 - 1e-8);
            if let Rows::TwoLevel(rows) = &traj.rows {
                let last = rows.last().expect("non-empty grid");
                report.at_most("lr_phase", Ok(wrap_angle(last.phase_mode_plus - last.alpha_plus).abs()), 1e-6);
            }
            let drift = match &source {
                TlsSource::Angles(design) if method == Method::Invariant => expectation_drift(&traj.record, &tls_invariant(design)),
                _ => expectation_drift(
                    &traj.record,
                    &TwoLevelSchedule::new(move |t| tracking_invariant(&schedule.controls_at(t)?, 1.0, t)),
                ),
            };
            report.at_most("invariant_expectation_drift", drift, 1e-7 * HBAR);
        }
        Err(e) => {
            report.at_most("propagation", Err(e), 0.0);
        }
    }
    report
}

fn check_ho(doc: &DesignDocument, method: Method, opts: &RunOptions) -> CheckReport {
    let mut report = CheckReport::new("oscillator", method);
    let source = match ho_source(doc, method) {
        Ok(s) => s,
        Err(e) => {
            report.at_most("design", Err(e), 0.0);
            return report;
        }
    };
    let t_f = doc.t_f();
    let omega0 = omega0_of(doc);
    let dim = opts.fock_dim;
    let norm_bound = 10.0 * opts.rel_tol;
    let residual_grid = TimeGrid::uniform(t_f, RESIDUAL_SAMPLES).expect("positive duration");

    if let HoSource::Invariant(d) = &source {
        if let Ok(scan) = d.trap_scan() {
            report.trap_inverted = Some(scan.inverted);
        }
        let residual = residual_grid.nodes().iter().try_fold(0.0f64, |m, &t| Ok::<_, Error>(m.max(d.ermakov_residual(t)?)));
        report.ermakov_residual_max = report.at_most("ermakov_residual", residual, 1e-10 * omega0 * omega0);
    }

    if method != Method::ReferenceOnly {
        let (h_form, i_form): (Box<dyn Fn(f64) -> Result<_>>, Box<dyn Fn(f64) -> Result<_>>) = match &source {
            HoSource::Invariant(d) => (Box::new(move |t| d.hamiltonian_form(t)), Box::new(move |t| Ok(d.invariant_form(t)))),
            HoSource::Ramp(r) => (Box::new(move |t| r.berry_hamiltonian(t)), Box::new(move |t| r.invariant(t))),
        };
        let endpoint = |t: f64| -> Result<f64> {
            let h = build_operator(h_form(t)?, dim, omega0)?;
            let i = build_operator(i_form(t)?, dim, omega0)?;
            Ok(h.band().commutator(i.band()).frobenius_norm() / (h.band().frobenius_norm() * i.band().frobenius_norm()))
        };
        let (s, e) = (endpoint(0.0), endpoint(t_f));
        report.endpoint_commutator_start = s.as_ref().ok().copied();
        report.endpoint_commutator_end = e.as_ref().ok().copied();
        report.at_most("endpoint_commutation", s.and_then(|a| e.map(|b| a.max(b))), 1e-10);
        report.invariance_residual =
            report.at_most("invariance_residual", form_invariance_residual(&*h_form, &*i_form, &residual_grid), 1e-8);
    }

    let traj = match run_ho(doc, method, opts, dim) {
        Ok(t) => t,
        Err(e) => {
            report.at_most("propagation", Err(e), 0.0);
            return report;
        }
    };
    report.absorb_run(&traj);
    report.at_most("norm_drift", Ok(traj.record.norm_drift), norm_bound);
    if method == Method::ReferenceOnly {
        return report;
    }
    report.at_least("final_fidelity", Ok(1.0 - traj.final_infidelity), 1.0 - 1e-6);
    report.at_least("mode_transport", Ok(traj.min_mode_overlap), 1.0 - 1e-6);
    let drift = match &source {
        HoSource::Invariant(d) => ho_invariant(d, dim, omega0).and_then(|i| expectation_drift(&traj.record, &i)),
        HoSource::Ramp(r) => FockSchedule::new(dim, omega0, move |t| r.invariant(t)).and_then(|i| expectation_drift(&traj.record, &i)),
    };
    report.at_most("invariant_expectation_drift", drift, 1e-7 * HBAR * omega0);
    let wider = run_ho(doc, method, opts, 2 * dim).map(|w| (w.final_infidelity - traj.final_infidelity).abs());
    report.truncation_delta = report.at_most("truncation_convergence", wider, 1e-8);
    report
}

/// One row of a duration sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub t_f: f64,
    pub infidelity: Option<f64>,
    pub peak_rabi: Option<f64>,
    pub min_omega_squared: Option<f64>,
    pub trap_inverted: Option<bool>,
    pub adiabaticity_metric: Option<f64>,
    pub error: Option<String>,
}

/// Builds the design for `t_f`, runs it and summarizes; failures land in `error`.
pub fn sweep_row(build: &dyn Fn(f64) -> Result<DesignDocument>, t_f: f64, opts: &RunOptions) -> SweepRow {
    let outcome = build(t_f).and_then(|doc| {
        let traj = run(&doc, opts)?;
        let inverted = match doc.ermakov()? {
            Some(d) if traj.method == Method::Invariant => Some(d.trap_scan()?.inverted),
            _ => None,
        };
        Ok((traj, inverted))
    });
    match outcome {
        Ok((traj, inverted)) => SweepRow {
            t_f,
            infidelity: Some(traj.final_infidelity),
            peak_rabi: traj.peak_rabi,
            min_omega_squared: traj.min_omega_squared,
            trap_inverted: inverted,
            adiabaticity_metric: traj.adiabaticity_metric,
            error: None,
        },
        Err(e) => SweepRow {
            t_f,
            infidelity: None,
            peak_rabi: None,
            min_omega_squared: None,
            trap_inverted: None,
            adiabaticity_metric: None,
            error: Some(e.to_string()),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig1() -> DesignDocument {
        DesignDocument::two_level_preset("fig1", 1.0).unwrap()
    }

    #[test]
    fn initial_state_parsing() {
        assert_eq!("plus".parse::<InitialState>().unwrap(), InitialState::Mode(0));
        assert_eq!("2".parse::<InitialState>().unwrap(), InitialState::Level(2));
        assert!("up".parse::<InitialState>().is_err());
    }

    #[test]
    fn fig1_run_and_check() {
        let traj = run(&fig1(), &RunOptions::default()).unwrap();
        let Rows::TwoLevel(rows) = &traj.rows else { panic!() };
        assert_eq!(rows.len(), TLS_DEFAULT_SAMPLES);
        let last = rows.last().unwrap();
        assert!(last.p2 >= 1.0 - 1e-6 && last.p2_ad > 1.0 - 1e-9);
        assert_eq!((rows[0].p1, rows[0].p2), (1.0, 0.0));
        assert!(traj.final_infidelity <= 1e-6);

        let report = check(&fig1(), &RunOptions::default()).unwrap();
        assert!(report.passed, "{:#?}", report.checks);
        assert!(report.truncation_delta.is_none() && report.invariance_residual.is_some());
    }

    #[test]
    fn broken_endpoint_fails_check() {
        let mut doc = fig1();
        if let DesignDocument::TwoLevel(d) = &mut doc {
            d.gamma_coefficients.as_mut().unwrap()[0] += 0.1;
        }
        let report = check(&doc, &RunOptions::default()).unwrap();
        assert!(!report.passed);
        assert!(report.failures().any(|c| c.name == "endpoint_commutation"));
    }

    #[test]
    fn tracking_methods() {
        let doc = DesignDocument::two_level_preset("tracking", 1.0).unwrap();
        let cd = run(&doc, &RunOptions::default()).unwrap();
        let Rows::TwoLevel(rows) = &cd.rows else { panic!() };
        assert!(rows.last().unwrap().p2 >= 1.0 - 1e-6);
        let bare = run(&doc, &RunOptions { method: Some(Method::ReferenceOnly), ..Default::default() }).unwrap();
        let Rows::TwoLevel(rows) = &bare.rows else { panic!() };
        assert!(rows.last().unwrap().p2 < 0.99);
        let report = check(&doc, &RunOptions::default()).unwrap();
        assert!(report.passed, "{:#?}", report.checks);
        assert!(run(&doc, &RunOptions { method: Some(Method::Invariant), ..Default::default() }).is_err());
    }

    #[test]
    fn static_oscillator_check() {
        let doc = DesignDocument::oscillator(1.0, 1.0, 1.0, 5).unwrap();
        let opts = RunOptions { fock_dim: 16, ..Default::default() };
        let report = check(&doc, &opts).unwrap();
        assert!(report.passed, "{:#?}", report.checks);
        assert_eq!(report.adiabaticity_metric, Some(0.0));
        assert_eq!(report.trap_inverted, Some(false));
    }

    #[test]
    fn sweep_rows() {
        let build = |t_f: f64| DesignDocument::two_level_preset("fig1", t_f);
        let a = sweep_row(&build, 0.5, &RunOptions::default());
        let b = sweep_row(&build, 1.0, &RunOptions::default());
        assert!(a.infidelity.unwrap() <= 1e-6 && b.infidelity.unwrap() <= 1e-6);
        let ratio = a.peak_rabi.unwrap() / b.peak_rabi.unwrap();
        assert!((ratio - 2.0).abs() < 1e-2, "{ratio}");
        let bad = sweep_row(&build, -1.0, &RunOptions::default());
        assert!(bad.error.is_some() && bad.infidelity.is_none());
    }

    #[test]
    fn wrap() {
        assert!((wrap_angle(2.0 * PI + 0.1) - 0.1).abs() < 1e-15);
        assert!((wrap_angle(-0.1) + 0.1).abs() < 1e-15);
    }
}
