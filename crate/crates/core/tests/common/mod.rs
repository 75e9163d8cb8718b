use num_complex::Complex64 as C64;
use sta_core::propagator::HamiltonianSchedule;

/// Classical fixed-step RK4 for `iψ̇ = Hψ` (ħ = 1).
pub fn rk4(schedule: &dyn HamiltonianSchedule, psi0: &[C64], t_f: f64, steps: usize) -> Vec<C64> {
    let n = psi0.len();
    let h = t_f / steps as f64;
    let f = |t: f64, y: &[C64]| {
        let mut out = vec![C64::new(0.0, 0.0); n];
        schedule.apply(t, y, &mut out).unwrap();
        out.iter().map(|z| z * C64::new(0.0, -1.0)).collect::<Vec<_>>()
    };
    let axpy = |y: &[C64], a: f64, k: &[C64]| y.iter().zip(k).map(|(u, v)| u + a * v).collect::<Vec<_>>();
    let mut y = psi0.to_vec();
    for s in 0..steps {
        let t = s as f64 * h;
        let k1 = f(t, &y);
        let k2 = f(t + 0.5 * h, &axpy(&y, 0.5 * h, &k1));
        let k3 = f(t + 0.5 * h, &axpy(&y, 0.5 * h, &k2));
        let k4 = f(t + h, &axpy(&y, h, &k3));
        for i in 0..n {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    y
}

pub fn max_abs_diff(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Prints the single summary line for an acceptance criterion.
pub fn verdict(id: u32, name: &str, passed: bool, detail: &str) {
    println!("criterion {id:2} {:<4} {name}: {detail}", if passed { "PASS" } else { "FAIL" });
}
