mod common;

use std::f64::consts::PI;
use std::time::Instant;

use common::{max_abs_diff, rk4, verdict};
use num_complex::Complex64 as C64;
use sta_core::curves::{PolynomialCurve, TimeGrid};
use sta_core::design_io::{DesignDocument, Method, OscillatorDocument};
use sta_core::ho_design::{ErmakovDesign, OmegaRamp};
use sta_core::linalg::StateVector;
use sta_core::propagator::{
    adiabatic_reference, expectation_drift, ho_invariant, invariance_residual, mode_transport_check, propagate,
    tls_counterdiabatic, tls_invariant, tls_populations, tls_reference, Branch, PropagationRecord, TwoLevelSchedule,
    DEFAULT_ABS_TOL, DEFAULT_REL_TOL,
};
use sta_core::tls_design::{
    commutator_endpoint_report, controls_from_angles, hamiltonian, lr_phase_curve, preset_fig1, preset_fig2,
    preset_tracking, reconstruct_hamiltonian, AngleDesign, Controls,
};
use sta_core::verify::{run, InitialState, RunOptions, Trajectory};

const SAMPLES: usize = 1001;

fn tls_run(design: &AngleDesign) -> PropagationRecord {
    let grid = TimeGrid::uniform(design.t_f(), SAMPLES).unwrap();
    propagate(&tls_reference(design), &StateVector::basis(2, 1).unwrap(), &grid, DEFAULT_REL_TOL, DEFAULT_ABS_TOL).unwrap()
}

fn max_adiabatic_gap(design: &AngleDesign, record: &PropagationRecord) -> f64 {
    let controls = controls_from_angles(design, &record.grid).unwrap();
    let reference = adiabatic_reference(&controls, Branch::Plus).unwrap();
    tls_populations(record)
        .iter()
        .zip(&reference)
        .map(|(p, a)| (p.1 - a.1).abs())
        .fold(0.0, f64::max)
}

#[test]
fn criterion_01_fast_transfer_with_oracle() {
    let design = preset_fig1(1.0).unwrap();
    let start = Instant::now();
    let record = tls_run(&design);
    let elapsed = start.elapsed().as_secs_f64();
    let p2 = record.final_state().population(0);
    let oracle = rk4(&tls_reference(&design), StateVector::basis(2, 1).unwrap().amplitudes(), 1.0, 1 << 16);
    let gap = max_abs_diff(record.final_state().amplitudes(), &oracle);
    let pass = p2 >= 1.0 - 1e-6 && gap <= 1e-9 && elapsed < 1.0;
    verdict(1, "fig1 transfer", pass, &format!("P2 = {p2:.12}, |psi - rk4| = {gap:.2e}, runtime {elapsed:.3} s"));
    assert!(pass);
}

#[test]
fn criterion_02_mode_transport() {
    let design = preset_fig1(1.0).unwrap();
    let record = tls_run(&design);
    let worst = mode_transport_check(&record, &design, 0)
        .unwrap()
        .iter()
        .map(|o| 1.0 - o.modulus.powi(2))
        .fold(0.0, f64::max);
    let pass = worst <= 1e-8;
    verdict(2, "mode transport", pass, &format!("max 1 - |<phi+|psi>|^2 = {worst:.2e}"));
    assert!(pass);
}

#[test]
fn criterion_03_lewis_riesenfeld_phase() {
    let design = preset_fig1(1.0).unwrap();
    let record = tls_run(&design);
    let phase = mode_transport_check(&record, &design, 0).unwrap().last().unwrap().phase;
    let controls = controls_from_angles(&design, &record.grid).unwrap();
    let alpha = *lr_phase_curve(&design, &controls).last().unwrap();
    let d = phase - alpha;
    let err = (d - 2.0 * PI * (d / (2.0 * PI)).round()).abs();
    let pass = err <= 1e-6;
    verdict(3, "LR phase", pass, &format!("arg = {phase:.9}, alpha+ = {alpha:.9}, error {err:.2e} rad"));
    assert!(pass);
}

#[test]
fn criterion_04_invariance_residual() {
    let design = preset_fig1(1.0).unwrap();
    let grid = TimeGrid::uniform(1.0, 2001).unwrap();
    let good = invariance_residual(&tls_reference(&design), &tls_invariant(&design), &grid).unwrap();
    let mut g = design.gamma().coefficients().to_vec();
    g[2] *= 1.05;
    g[3] *= 1.05;
    let bent = AngleDesign::new(PolynomialCurve::new(g), design.beta().clone(), design.phi().clone(), 1.0, 1.0).unwrap();
    let bad = invariance_residual(&tls_reference(&design), &tls_invariant(&bent), &grid).unwrap();
    let pass = good <= 1e-8 && bad >= 1e-3;
    verdict(4, "invariance residual", pass, &format!("consistent {good:.2e}, perturbed {bad:.2e}"));
    assert!(pass);
}

#[test]
fn criterion_05_endpoint_commutation() {
    let mut worst: f64 = 0.0;
    for design in [preset_fig1(1.0).unwrap(), preset_fig2(1.0).unwrap()] {
        let controls = controls_from_angles(&design, &TimeGrid::uniform(1.0, SAMPLES).unwrap()).unwrap();
        let r = commutator_endpoint_report(&design, &controls);
        worst = worst.max(r.norm_start.max(r.norm_end) / r.scale);
    }
    let pass = worst <= 1e-10;
    verdict(5, "endpoint commutation", pass, &format!("max ||[H,I]||_F / scale = {worst:.2e}"));
    assert!(pass);
}

#[test]
fn criterion_06_non_adiabatic_route() {
    let fig1 = preset_fig1(1.0).unwrap();
    let fig2 = preset_fig2(1.0).unwrap();
    let (r1, r2) = (tls_run(&fig1), tls_run(&fig2));
    let (gap1, gap2) = (max_adiabatic_gap(&fig1, &r1), max_adiabatic_gap(&fig2, &r2));
    let p2 = r2.final_state().population(0);
    let pass = p2 >= 1.0 - 1e-6 && gap2 >= 0.05 && gap1 <= 0.05;
    verdict(
        6,
        "fig2 phenomenology",
        pass,
        &format!("fig2 P2 = {p2:.12}, max|P2 - P2ad| fig2 = {gap2:.4}, fig1 = {gap1:.4}"),
    );
    assert!(pass);
}

fn oscillator_doc() -> DesignDocument {
    DesignDocument::oscillator(1.0, 0.1, 2.0, 5).unwrap()
}

fn oscillator_run(n: usize, dim: usize) -> Trajectory {
    let opts = RunOptions {
        method: Some(Method::Invariant),
        fock_dim: dim,
        state: Some(InitialState::Level(n)),
        ..Default::default()
    };
    run(&oscillator_doc(), &opts).unwrap()
}

#[test]
fn criterion_07_oscillator_invariant_protocol() {
    let design = ErmakovDesign::polynomial(1.0, 0.1, 2.0, 5).unwrap();
    let invariant = ho_invariant(&design, 128, 1.0).unwrap();
    let start = Instant::now();
    let mut pass = true;
    let mut detail = Vec::new();
    for n in 0..3 {
        let traj = oscillator_run(n, 128);
        let drift = expectation_drift(&traj.record, &invariant).unwrap();
        pass &= traj.final_infidelity <= 1e-6 && 1.0 - traj.min_mode_overlap <= 1e-6 && drift <= 1e-7;
        detail.push(format!(
            "n={n}: 1-F = {:.1e}, 1-min overlap = {:.1e}, <I> drift = {drift:.1e}",
            traj.final_infidelity,
            1.0 - traj.min_mode_overlap
        ));
    }
    let elapsed = start.elapsed().as_secs_f64();
    pass &= elapsed < 10.0;
    verdict(7, "oscillator invariant protocol", pass, &format!("{}; runtime {elapsed:.2} s", detail.join("; ")));
    assert!(pass);
}

#[test]
fn criterion_08_oscillator_tracking() {
    let ramp = OmegaRamp::smoothstep(1.0, 0.1, 1.0).unwrap();
    let doc = DesignDocument::Oscillator(OscillatorDocument {
        omega0: 1.0,
        omega_f: 0.1,
        t_f: 1.0,
        b_coefficients: None,
        omega_coefficients: Some(ramp.omega().coefficients().to_vec()),
    });
    let with = |method| run(&doc, &RunOptions { method: Some(method), ..Default::default() }).unwrap();
    let full = 1.0 - with(Method::Counterdiabatic).final_infidelity;
    let bare = 1.0 - with(Method::ReferenceOnly).final_infidelity;
    let pass = full >= 1.0 - 1e-6 && bare <= 0.99;
    verdict(8, "oscillator tracking", pass, &format!("F(H0+H1) = {full:.12}, F(H0 only) = {bare:.6}"));
    assert!(pass);
}

#[test]
fn criterion_09_two_level_tracking() {
    let reference = preset_tracking(1.0).unwrap();
    let grid = TimeGrid::uniform(1.0, SAMPLES).unwrap();
    let psi0 = StateVector::basis(2, 1).unwrap();
    let record = propagate(&tls_counterdiabatic(&reference), &psi0, &grid, DEFAULT_REL_TOL, DEFAULT_ABS_TOL).unwrap();
    let p2 = record.final_state().population(0);
    let bare = propagate(&tls_reference(&reference), &psi0, &grid, DEFAULT_REL_TOL, DEFAULT_ABS_TOL).unwrap();
    let pass = p2 >= 1.0 - 1e-6;
    verdict(
        9,
        "two-level tracking",
        pass,
        &format!("P2(H0+H1) = {p2:.12}, P2(H0 only) = {:.6}", bare.final_state().population(0)),
    );
    assert!(pass);
}

#[test]
fn criterion_10_hamiltonian_reconstruction() {
    let mut worst: f64 = 0.0;
    for design in [preset_fig1(1.0).unwrap(), preset_fig2(1.0).unwrap()] {
        let controls = controls_from_angles(&design, &TimeGrid::uniform(1.0, SAMPLES).unwrap()).unwrap();
        for i in 1..SAMPLES - 1 {
            let h = hamiltonian(&controls, i);
            let rel = reconstruct_hamiltonian(&design, &controls, i).max_abs_difference(&h) / h.frobenius_norm();
            worst = worst.max(rel);
        }
    }
    let pass = worst <= 1e-12;
    verdict(10, "hamiltonian reconstruction", pass, &format!("max relative elementwise difference {worst:.2e}"));
    assert!(pass);
}

#[test]
fn criterion_11_rabi_oracle() {
    let omega = 2.0;
    let t_f = 2.0 * PI / omega;
    let h = TwoLevelSchedule::new(move |_| Ok(Controls { delta: 0.0, omega_r: omega, phi: 0.0 }.hamiltonian()));
    let grid = TimeGrid::uniform(t_f, SAMPLES).unwrap();
    let record = propagate(&h, &StateVector::basis(2, 1).unwrap(), &grid, DEFAULT_REL_TOL, DEFAULT_ABS_TOL).unwrap();
    let err = tls_populations(&record)
        .iter()
        .zip(grid.nodes())
        .map(|(p, t)| (p.1 - (0.5 * omega * t).sin().powi(2)).abs())
        .fold(0.0, f64::max);
    let pass = err <= 1e-8;
    verdict(11, "Rabi oracle", pass, &format!("max |P2 - sin^2(Omega t/2)| = {err:.2e}"));
    assert!(pass);
}

#[test]
fn criterion_12_truncation_convergence() {
    let mut worst: f64 = 0.0;
    for n in 0..3 {
        let a = oscillator_run(n, 128).final_infidelity;
        let b = oscillator_run(n, 256).final_infidelity;
        worst = worst.max((a - b).abs());
    }
    let pass = worst < 1e-8;
    verdict(12, "truncation convergence", pass, &format!("max |F(128) - F(256)| = {worst:.2e}"));
    assert!(pass);
}

#[test]
fn oracle_sanity() {
    // The oracle itself must reproduce a closed-form Rabi flop.
    let h = TwoLevelSchedule::new(|_| Ok(Controls { delta: 0.0, omega_r: 1.0, phi: 0.0 }.hamiltonian()));
    let out = rk4(&h, &[C64::new(0.0, 0.0), C64::new(1.0, 0.0)], PI, 4096);
    assert!((out[0].norm_sqr() - 1.0).abs() < 1e-12);
}
