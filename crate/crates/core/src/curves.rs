//! Polynomial ansätze fitted to boundary data, exact derivative evaluation and
//! quadrature over sampled scalar functions of time.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sample times spanning `[0, t_f]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    t_f: f64,
    nodes: Vec<f64>,
    uniform: bool,
}

impl TimeGrid {
    /// Equally spaced nodes `0, t_f/(n-1), ..., t_f`.
    pub fn uniform(t_f: f64, n_samples: usize) -> Result<Self> {
        if !(t_f > 0.0) || !t_f.is_finite() {
            return Err(Error::InvalidArgument(format!("t_f must be positive, got {t_f}")));
        }
        if n_samples < 2 {
            return Err(Error::InvalidArgument(format!(
                "a time grid needs at least 2 samples, got {n_samples}"
            )));
        }
        let last = (n_samples - 1) as f64;
        let mut nodes: Vec<f64> = (0..n_samples).map(|i| t_f * i as f64 / last).collect();
        nodes[n_samples - 1] = t_f;
        Ok(Self { t_f, nodes, uniform: true })
    }

    /// Arbitrary strictly increasing nodes starting at 0.
    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::InvalidArgument("a time grid needs at least 2 nodes".into()));
        }
        if nodes[0] != 0.0 {
            return Err(Error::InvalidArgument("time grid must start at 0".into()));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("time grid nodes must be strictly increasing".into()));
        }
        let t_f = *nodes.last().unwrap();
        let h = t_f / (nodes.len() - 1) as f64;
        let uniform = nodes
            .iter()
            .enumerate()
            .all(|(i, &t)| (t - h * i as f64).abs() <= 1e-12 * t_f);
        Ok(Self { t_f, nodes, uniform })
    }

    pub fn t_f(&self) -> f64 {
        self.t_f
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> f64 {
        self.nodes[i]
    }

    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    /// Node spacing of a uniform grid.
    pub fn step(&self) -> Option<f64> {
        self.uniform.then(|| self.t_f / (self.nodes.len() - 1) as f64)
    }
}

/// Real polynomial `Σ c_j t^j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PolynomialCurve {
    coefficients: Vec<f64>,
}

impl PolynomialCurve {
    pub fn new(mut coefficients: Vec<f64>) -> Self {
        if coefficients.is_empty() {
            coefficients.push(0.0);
        }
        Self { coefficients }
    }

    pub fn constant(value: f64) -> Self {
        Self::new(vec![value])
    }

    /// `value_0 + slope * t`.
    pub fn linear(value_0: f64, slope: f64) -> Self {
        Self::new(vec![value_0, slope])
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    /// Nominal degree (length of the coefficient list minus one).
    pub fn degree(&self) -> usize {
        self.coefficients.len() - 1
    }

    /// Exact `order`-th derivative at `t`, term by term.
    pub fn eval(&self, t: f64, order: usize) -> f64 {
        let d = self.degree();
        if order > d {
            return 0.0;
        }
        // Horner on the differentiated coefficients j!/(j-order)! c_j.
        let mut acc = 0.0;
        for j in (order..=d).rev() {
            acc = acc * t + falling_factorial(j, order) * self.coefficients[j];
        }
        acc
    }

    pub fn value(&self, t: f64) -> f64 {
        self.eval(t, 0)
    }

    pub fn derivative(&self) -> Self {
        if self.degree() == 0 {
            return Self::constant(0.0);
        }
        Self::new(
            self.coefficients
                .iter()
                .enumerate()
                .skip(1)
                .map(|(j, c)| j as f64 * c)
                .collect(),
        )
    }

    /// Coefficients of `τ ↦ p(t0 + τ)`.
    ///
    /// Used to evaluate differences like `p(t) - p(t0)` near `t0` without
    /// catastrophic cancellation.
    pub fn taylor_shift(&self, t0: f64) -> Self {
        let d = self.degree();
        let mut factorial = 1.0;
        let mut out = Vec::with_capacity(d + 1);
        for k in 0..=d {
            if k > 0 {
                factorial *= k as f64;
            }
            out.push(self.eval(t0, k) / factorial);
        }
        Self::new(out)
    }

    /// `a * p + b * q`.
    pub fn combine(a: f64, p: &Self, b: f64, q: &Self) -> Self {
        let n = p.coefficients.len().max(q.coefficients.len());
        let get = |c: &[f64], j: usize| c.get(j).copied().unwrap_or(0.0);
        Self::new(
            (0..n)
                .map(|j| a * get(&p.coefficients, j) + b * get(&q.coefficients, j))
                .collect(),
        )
    }
}

fn falling_factorial(j: usize, k: usize) -> f64 {
    ((j - k + 1)..=j).fold(1.0, |acc, m| acc * m as f64)
}

/// A prescribed value of the `derivative_order`-th derivative at `time`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryConstraint {
    pub time: f64,
    pub derivative_order: usize,
    pub value: f64,
}

impl BoundaryConstraint {
    pub fn new(time: f64, derivative_order: usize, value: f64) -> Self {
        Self { time, derivative_order, value }
    }

    pub fn value_at(time: f64, value: f64) -> Self {
        Self::new(time, 0, value)
    }
}

/// Hermite–Birkhoff interpolation in the monomial basis.
///
/// Times are rescaled by the largest constraint time before the pivoted
/// solve, then the coefficients are mapped back to `t`.
pub fn fit_polynomial(constraints: &[BoundaryConstraint], degree: usize) -> Result<PolynomialCurve> {
    let size = degree + 1;
    if constraints.len() != size {
        return Err(Error::DegreeMismatch {
            degree,
            expected: size,
            got: constraints.len(),
        });
    }
    for (i, a) in constraints.iter().enumerate() {
        if !a.time.is_finite() || !a.value.is_finite() {
            return Err(Error::InvalidArgument("constraint times and values must be finite".into()));
        }
        if constraints[..i]
            .iter()
            .any(|b| b.time == a.time && b.derivative_order == a.derivative_order)
        {
            return Err(Error::DegenerateConstraints);
        }
    }

    let scale = constraints
        .iter()
        .map(|c| c.time.abs())
        .fold(0.0, f64::max);
    let scale = if scale > 0.0 { scale } else { 1.0 };

    let mut matrix = vec![vec![0.0; size]; size];
    let mut rhs = vec![0.0; size];
    for (row, c) in constraints.iter().enumerate() {
        let s = c.time / scale;
        let k = c.derivative_order;
        for j in k..size {
            matrix[row][j] = falling_factorial(j, k) * s.powi((j - k) as i32);
        }
        rhs[row] = c.value * scale.powi(k as i32);
    }

    let scaled = solve_dense(matrix, rhs)?;
    let coefficients: Vec<f64> = scaled
        .iter()
        .enumerate()
        .map(|(j, q)| q / scale.powi(j as i32))
        .collect();
    let curve = PolynomialCurve::new(coefficients);

    for c in constraints {
        let got = curve.eval(c.time, c.derivative_order);
        if (got - c.value).abs() > 1e-10 * c.value.abs().max(1.0) {
            return Err(Error::DegenerateConstraints);
        }
    }
    Ok(curve)
}

/// Gaussian elimination with partial pivoting.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    let norm = a
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0_f64, |m, v| m.max(v.abs()));
    if norm == 0.0 {
        return Err(Error::DegenerateConstraints);
    }
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[pivot][col].abs() <= 1e-12 * norm {
            return Err(Error::DegenerateConstraints);
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let tail: f64 = (row + 1..n).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - tail) / a[row][row];
    }
    Ok(x)
}

/// Values of a scalar function at the nodes of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledScalar {
    grid: TimeGrid,
    values: Vec<f64>,
}

impl SampledScalar {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: &TimeGrid, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.nodes().iter().map(|&t| f(t)).collect();
        Self { grid: grid.clone(), values }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, i: usize) -> f64 {
        self.values[i]
    }
}

/// `∫_0^{t_k} f dt` with `k = up_to`.
///
/// Uniform grids use composite Simpson, closing an odd interval count with the
/// 3/8 rule; a single interval uses the cubic through the first four nodes.
/// All branches are exact for cubics.
pub fn integrate_sampled(f: &SampledScalar, up_to: usize) -> Result<f64> {
    if up_to >= f.grid.len() {
        return Err(Error::InvalidArgument(format!(
            "node index {up_to} outside grid of {} nodes",
            f.grid.len()
        )));
    }
    Ok(match f.grid.step() {
        Some(h) => uniform_integral(&f.values, h, up_to),
        None => nonuniform_integral(f.grid.nodes(), &f.values, up_to),
    })
}

/// Integral from 0 to every node, in node order.
pub fn cumulative_integral(f: &SampledScalar) -> Vec<f64> {
    let n = f.grid.len();
    match f.grid.step() {
        Some(h) => {
            let v = &f.values;
            let mut even = vec![0.0; n];
            let mut k = 2;
            while k < n {
                even[k] = even[k - 2] + h / 3.0 * (v[k - 2] + 4.0 * v[k - 1] + v[k]);
                k += 2;
            }
            (0..n)
                .map(|k| {
                    if k % 2 == 0 {
                        even[k]
                    } else if k >= 3 {
                        even[k - 3] + three_eighths(v, h, k - 3)
                    } else {
                        uniform_integral(v, h, k)
                    }
                })
                .collect()
        }
        None => (0..n)
            .map(|k| nonuniform_integral(f.grid.nodes(), &f.values, k))
            .collect(),
    }
}

fn three_eighths(v: &[f64], h: f64, start: usize) -> f64 {
    3.0 * h / 8.0 * (v[start] + 3.0 * v[start + 1] + 3.0 * v[start + 2] + v[start + 3])
}

fn simpson(v: &[f64], h: f64, intervals: usize) -> f64 {
    debug_assert!(intervals % 2 == 0);
    let mut acc = 0.0;
    for k in (0..intervals).step_by(2) {
        acc += v[k] + 4.0 * v[k + 1] + v[k + 2];
    }
    acc * h / 3.0
}

fn uniform_integral(v: &[f64], h: f64, k: usize) -> f64 {
    match k {
        0 => 0.0,
        1 => match v.len() {
            2 => 0.5 * h * (v[0] + v[1]),
            3 => h / 12.0 * (5.0 * v[0] + 8.0 * v[1] - v[2]),
            _ => h / 24.0 * (9.0 * v[0] + 19.0 * v[1] - 5.0 * v[2] + v[3]),
        },
        k if k % 2 == 0 => simpson(v, h, k),
        k => simpson(v, h, k - 3) + three_eighths(v, h, k - 3),
    }
}

/// Piecewise-quadratic rule for irregular nodes.
fn nonuniform_integral(t: &[f64], v: &[f64], k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    if t.len() == 2 {
        return 0.5 * (t[1] - t[0]) * (v[0] + v[1]);
    }
    let mut acc = 0.0;
    let mut i = 0;
    while i + 2 <= k {
        acc += quadratic_panel(t[i], t[i + 1], t[i + 2], v[i], v[i + 1], v[i + 2], t[i], t[i + 2]);
        i += 2;
    }
    if i < k {
        // One interval [t_i, t_{i+1}] left: integrate the quadratic through a neighbouring triple.
        let j = if i + 2 < t.len() { i } else { i - 1 };
        acc += quadratic_panel(t[j], t[j + 1], t[j + 2], v[j], v[j + 1], v[j + 2], t[i], t[i + 1]);
    }
    acc
}

/// `∫_a^b` of the quadratic interpolating `(x_m, y_m)`, m = 0..3.
#[allow(clippy::too_many_arguments)]
fn quadratic_panel(x0: f64, x1: f64, x2: f64, y0: f64, y1: f64, y2: f64, a: f64, b: f64) -> f64 {
    // Newton form: y0 + d1 (x - x0) + d2 (x - x0)(x - x1)
    let d1 = (y1 - y0) / (x1 - x0);
    let d2 = ((y2 - y1) / (x2 - x1) - d1) / (x2 - x0);
    let prim = |x: f64| {
        let u = x - x0;
        y0 * u + d1 * u * u / 2.0 + d2 * (u * u * u / 3.0 - (x1 - x0) * u * u / 2.0)
    };
    prim(b) - prim(a)
}

/// Weights `w` of the uniform rule over the whole grid: `Σ w_i f_i = ∫_0^{t_f} f`.
pub fn uniform_weights(n: usize, h: f64) -> Vec<f64> {
    let mut w = vec![0.0; n];
    let k = n - 1;
    match k {
        0 => {}
        1 => {
            w[0] = 0.5 * h;
            w[1] = 0.5 * h;
        }
        _ => {
            let simpson_end = if k % 2 == 0 { k } else { k - 3 };
            for i in (0..simpson_end).step_by(2) {
                w[i] += h / 3.0;
                w[i + 1] += 4.0 * h / 3.0;
                w[i + 2] += h / 3.0;
            }
            if k % 2 == 1 {
                let s = k - 3;
                w[s] += 3.0 * h / 8.0;
                w[s + 1] += 9.0 * h / 8.0;
                w[s + 2] += 9.0 * h / 8.0;
                w[s + 3] += 3.0 * h / 8.0;
            }
        }
    }
    w
}
