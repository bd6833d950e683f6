//! Gaussian fundamental solutions of constant-coefficient operators
//! `v_t = sum a_ij v_ij + sum b_i v_i`, their adjoints, and numerical checks
//! of the kernel/adjoint duality and the derivative-transfer identity.
//!
//! Both directions share one formula: a Gaussian density in
//! `first - second + b_dir * tau` with covariance `2 A tau`, differentiated in
//! the first space argument. The forward kernel uses `b_dir = b` and needs
//! `s < t`; the adjoint uses `b_dir = -b` and runs forward in time, so
//! `p*(s, y; t, x)` is called with its first time smaller than the second.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::convex::MollifiedFunction;
use crate::numerics;
use crate::sampling::Halton;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("diffusion matrix is not symmetric positive definite")]
    NotPositiveDefinite,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("time arguments out of order for the {0:?} kernel (elapsed {1})")]
    TimeOrder(Direction, f64),
    #[error("quadrature radius {radius} is below the required {required}")]
    QuadratureRadius { radius: f64, required: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Forward,
    Adjoint,
}

/// Constant coefficients `(A, b)` of the generator plus a direction.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstKernel {
    a: DMatrix<f64>,
    b: Vec<f64>,
    direction: Direction,
    a_inv: DMatrix<f64>,
    log_det_a: f64,
}

impl ConstKernel {
    pub fn new(a: DMatrix<f64>, b: Vec<f64>, direction: Direction) -> Result<Self, KernelError> {
        let n = a.nrows();
        if a.ncols() != n || n == 0 {
            return Err(KernelError::DimensionMismatch { expected: n, got: a.ncols() });
        }
        if b.len() != n {
            return Err(KernelError::DimensionMismatch { expected: n, got: b.len() });
        }
        if numerics::asymmetry(&a) > 1e-12 * (1.0 + a.amax()) {
            return Err(KernelError::NotPositiveDefinite);
        }
        let sym = (&a + a.transpose()) * 0.5;
        let chol = Cholesky::new(sym.clone()).ok_or(KernelError::NotPositiveDefinite)?;
        let log_det_a = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let a_inv = chol.inverse();
        Ok(Self { a: sym, b, direction, a_inv, log_det_a })
    }

    pub fn forward(a: DMatrix<f64>, b: Vec<f64>) -> Result<Self, KernelError> {
        Self::new(a, b, Direction::Forward)
    }

    /// One-dimensional kernel with `A = a`, drift `b`.
    pub fn scalar(a: f64, b: f64) -> Result<Self, KernelError> {
        Self::forward(DMatrix::from_element(1, 1, a), vec![b])
    }

    /// Adjoint of this kernel: `a* = A`, `b* = -b`, `c* = 0`.
    pub fn adjoint(&self) -> Self {
        let direction = match self.direction {
            Direction::Forward => Direction::Adjoint,
            Direction::Adjoint => Direction::Forward,
        };
        Self { direction, ..self.clone() }
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// The generator drift `b`, independent of direction.
    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    /// Drift entering the density shift for this direction.
    pub fn effective_drift(&self) -> Vec<f64> {
        match self.direction {
            Direction::Forward => self.b.clone(),
            Direction::Adjoint => self.b.iter().map(|v| -v).collect(),
        }
    }

    pub fn max_diffusion_eigenvalue(&self) -> f64 {
        numerics::max_eigenvalue(&self.a)
    }
}

/// Value, gradient and Hessian in the first space argument.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelEval {
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess: DMatrix<f64>,
}

/// Evaluate the kernel at `(t, x; s, y)`.
///
/// Forward: `p(t, x; s, y)`, requires `s < t`. Adjoint: `p*(t, x; s, y)`,
/// requires `t < s`.
pub fn kernel(k: &ConstKernel, t: f64, x: &[f64], s: f64, y: &[f64]) -> Result<KernelEval, KernelError> {
    let n = k.dim();
    for p in [x, y] {
        if p.len() != n {
            return Err(KernelError::DimensionMismatch { expected: n, got: p.len() });
        }
    }
    let tau = match k.direction {
        Direction::Forward => t - s,
        Direction::Adjoint => s - t,
    };
    if !(tau > 0.0) {
        return Err(KernelError::TimeOrder(k.direction, tau));
    }
    let drift = k.effective_drift();
    let w = DVector::from_iterator(n, (0..n).map(|i| x[i] - y[i] + drift[i] * tau));
    // Covariance 2 A tau, precision A^{-1} / (2 tau).
    let prec = &k.a_inv / (2.0 * tau);
    let pw = &prec * &w;
    let quad = w.dot(&pw);
    let log_norm = -0.5 * n as f64 * (2.0 * std::f64::consts::PI * 2.0 * tau).ln() - 0.5 * k.log_det_a;
    let value = (log_norm - 0.5 * quad).exp();
    let grad: Vec<f64> = pw.iter().map(|v| -value * v).collect();
    let hess = (&pw * pw.transpose() - prec) * value;
    Ok(KernelEval { value, grad, hess })
}

/// Componentwise discrepancies between `p(t, x; s, y)` and `p*(s, y; t, x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualityReport {
    pub value_error: f64,
    /// Gradients compared as `p_i = -p*_i`: the adjoint is differentiated in
    /// its own first slot `y`, and the density depends on `x - y`.
    pub grad_error: f64,
    pub hess_error: f64,
    /// Error of the literal reading `p_i = +p*_i`; order one whenever the
    /// gradient does not vanish.
    pub literal_grad_error: f64,
}

fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
    if diff == 0.0 {
        return 0.0;
    }
    let scale = a.iter().chain(b).map(|v| v.abs()).fold(f64::MIN_POSITIVE, f64::max);
    diff / scale
}

pub fn duality_report(k: &ConstKernel, t: f64, x: &[f64], s: f64, y: &[f64]) -> Result<DualityReport, KernelError> {
    let fwd = match k.direction {
        Direction::Forward => k.clone(),
        Direction::Adjoint => k.adjoint(),
    };
    let p = kernel(&fwd, t, x, s, y)?;
    let q = kernel(&fwd.adjoint(), s, y, t, x)?;
    let neg: Vec<f64> = q.grad.iter().map(|v| -v).collect();
    Ok(DualityReport {
        value_error: rel_error(&[p.value], &[q.value]),
        grad_error: rel_error(&p.grad, &neg),
        hess_error: rel_error(p.hess.as_slice(), q.hess.as_slice()),
        literal_grad_error: rel_error(&p.grad, &q.grad),
    })
}

/// Worst relative discrepancy over value, gradient and Hessian.
pub fn lemma1_check(k: &ConstKernel, t: f64, x: &[f64], s: f64, y: &[f64]) -> Result<f64, KernelError> {
    let r = duality_report(k, t, x, s, y)?;
    Ok(r.value_error.max(r.grad_error).max(r.hess_error))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundWitness {
    pub elapsed: f64,
    pub offset: Vec<f64>,
    /// `ln(p* / bound)` at the witness; positive means violated.
    pub log_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub holds: bool,
    pub worst: BoundWitness,
}

/// Check `p*(sigma, eta; tau, xi) <= C* (tau-sigma)^{-n/2} exp(-lambda* |eta-xi|^2 / (tau-sigma))`
/// at quasi-random elapsed times in `[1e-3, horizon]` (log-uniform) and offsets
/// in a ball of radius `6 sqrt(2 Lambda horizon)`, plus the zero offset.
pub fn gaussian_bound_check(
    k: &ConstKernel,
    c_star: f64,
    lambda_star: f64,
    samples: usize,
    horizon: f64,
) -> BoundCheck {
    let n = k.dim();
    let adj = match k.direction {
        Direction::Adjoint => k.clone(),
        Direction::Forward => k.adjoint(),
    };
    let radius = 6.0 * (2.0 * k.max_diffusion_eigenvalue() * horizon).sqrt();
    let seq = Halton::new(n + 1, 0xB0B);
    let (lo, hi) = (1e-3_f64.ln(), horizon.ln());
    let xi = vec![0.0; n];
    let mut worst = BoundWitness { elapsed: f64::NAN, offset: vec![], log_ratio: f64::NEG_INFINITY };
    for i in 0..samples as u64 {
        let u = seq.point(i);
        let elapsed = (lo + (hi - lo) * u[0]).exp();
        let offset = if i % 8 == 0 {
            vec![0.0; n]
        } else {
            crate::sampling::cube_to_ball(&u[1..], radius)
        };
        let Ok(p) = kernel(&adj, 0.0, &offset, elapsed, &xi) else { continue };
        let r2: f64 = offset.iter().map(|v| v * v).sum();
        let log_bound = c_star.ln() - 0.5 * n as f64 * elapsed.ln() - lambda_star * r2 / elapsed;
        let log_ratio = if p.value > 0.0 {
            p.value.ln() - log_bound
        } else {
            // Underflowed density: recompute the exponent directly.
            let drift = adj.effective_drift();
            let w = DVector::from_iterator(n, (0..n).map(|j| offset[j] + drift[j] * elapsed));
            let quad = w.dot(&(&adj.a_inv * &w)) / (2.0 * elapsed);
            -0.5 * n as f64 * (4.0 * std::f64::consts::PI * elapsed).ln() - 0.5 * adj.log_det_a - 0.5 * quad
                - log_bound
        };
        if log_ratio > worst.log_ratio {
            worst = BoundWitness { elapsed, offset, log_ratio };
        }
    }
    BoundCheck { holds: worst.log_ratio <= 1e-12, worst }
}

/// `E[g(Z)]` for `Z ~ N(mean, sd^2)` by composite Simpson on `mean +- 8 sd`.
pub fn gaussian_expectation(g: impl Fn(f64) -> f64, mean: f64, sd: f64, intervals: usize) -> f64 {
    if sd <= 0.0 {
        return g(mean);
    }
    let m = intervals.max(2) & !1;
    let half = 8.0 * sd;
    let step = 2.0 * half / m as f64;
    let norm = 1.0 / (sd * (2.0 * std::f64::consts::PI).sqrt());
    let mut acc = 0.0;
    for i in 0..=m {
        let z = -half + step * i as f64;
        let w = if i == 0 || i == m {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += w * g(mean + z) * norm * (-0.5 * (z / sd).powi(2)).exp();
    }
    acc * step / 3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerReport {
    /// `lhs[i][j] = int f(<c,y>) d2p/dx_i dx_j (t, x; 0, y) dy`.
    pub lhs: Vec<Vec<f64>>,
    /// `rhs[i][j] = int c_i c_j f''(<c,y>) p*(0, y; t, x) dy`.
    pub rhs: Vec<Vec<f64>>,
    pub worst: f64,
}

/// Default nodes per axis for the tensor trapezoid rule.
pub fn default_ver_nodes(dim: usize) -> usize {
    if dim == 1 {
        2048
    } else {
        512
    }
}

/// Nodes per axis that resolve the mollifier: at least the default, and a
/// spacing no coarser than half the smoothing width or 1/48.
pub fn resolved_ver_nodes(dim: usize, m: &MollifiedFunction, radius: f64) -> usize {
    let spacing = (0.5 * m.smoothing_width).min(1.0 / 48.0);
    let needed = (2.0 * radius / spacing).ceil() as usize + 1;
    needed.max(default_ver_nodes(dim))
}

/// Both sides of the derivative-transfer identity on a grid of half-width
/// `8 sqrt(2 Lambda t)` around the kernel mean.
pub fn ver_identity_check(
    k: &ConstKernel,
    m: &MollifiedFunction,
    c: &[f64],
    t: f64,
    x: &[f64],
) -> Result<VerReport, KernelError> {
    let n = k.dim();
    let radius = 8.0 * (2.0 * k.max_diffusion_eigenvalue() * t).sqrt();
    ver_identity_check_with(k, m, c, t, x, radius, resolved_ver_nodes(n, m, radius))
}

/// As [`ver_identity_check`], with an explicit half-width of the box around
/// the kernel mean and node count per axis (dimension 1 or 2).
pub fn ver_identity_check_with(
    k: &ConstKernel,
    m: &MollifiedFunction,
    c: &[f64],
    t: f64,
    x: &[f64],
    radius: f64,
    nodes: usize,
) -> Result<VerReport, KernelError> {
    let n = k.dim();
    if c.len() != n || x.len() != n {
        return Err(KernelError::DimensionMismatch { expected: n, got: c.len().min(x.len()) });
    }
    if n > 2 {
        return Err(KernelError::DimensionMismatch { expected: 2, got: n });
    }
    let required = 8.0 * (2.0 * k.max_diffusion_eigenvalue() * t).sqrt();
    if radius < required * (1.0 - 1e-12) {
        return Err(KernelError::QuadratureRadius { radius, required });
    }
    if !(t > 0.0) {
        return Err(KernelError::TimeOrder(Direction::Forward, t));
    }
    let fwd = match k.direction {
        Direction::Forward => k.clone(),
        Direction::Adjoint => k.adjoint(),
    };
    let adj = fwd.adjoint();
    let centre: Vec<f64> = (0..n).map(|i| x[i] + fwd.b[i] * t).collect();
    let nodes = nodes.max(2);
    let step = 2.0 * radius / (nodes - 1) as f64;
    let weight = |i: usize| if i == 0 || i == nodes - 1 { 0.5 } else { 1.0 };
    let rows = if n == 1 { 1 } else { nodes };
    // One partial sum per row of the last axis, reduced in row order.
    let partial = crate::par::map_range(rows, |row| {
        let mut acc = vec![0.0; 2 * n * n];
        let mut y = vec![0.0; n];
        let row_weight = if n == 1 { 1.0 } else { weight(row) };
        if n == 2 {
            y[1] = centre[1] - radius + step * row as f64;
        }
        for col in 0..nodes {
            y[0] = centre[0] - radius + step * col as f64;
            let w = row_weight * weight(col);
            let z = numerics::dot(c, &y);
            let f = m.eval(z);
            let f2 = m.second_derivative(z);
            if f == 0.0 && f2 == 0.0 {
                continue;
            }
            let (Ok(p), Ok(q)) = (kernel(&fwd, t, x, 0.0, &y), kernel(&adj, 0.0, &y, t, x)) else {
                unreachable!("time order checked above")
            };
            for i in 0..n {
                for j in 0..n {
                    acc[i * n + j] += w * f * p.hess[(i, j)];
                    acc[n * n + i * n + j] += w * c[i] * c[j] * f2 * q.value;
                }
            }
        }
        acc
    });
    let cell = step.powi(n as i32);
    let mut lhs = vec![vec![0.0; n]; n];
    let mut rhs = vec![vec![0.0; n]; n];
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in 0..n {
            let l: Vec<f64> = partial.iter().map(|a| a[i * n + j]).collect();
            let r: Vec<f64> = partial.iter().map(|a| a[n * n + i * n + j]).collect();
            lhs[i][j] = numerics::pairwise_sum(&l) * cell;
            rhs[i][j] = numerics::pairwise_sum(&r) * cell;
            worst = worst.max((lhs[i][j] - rhs[i][j]).abs());
        }
    }
    Ok(VerReport { lhs, rhs, worst })
}

/// Adjoint coefficients of `sum a_ij d_ij + sum b_i d_i` at `x`:
/// `a* = a`, `b*_i = 2 sum_j d_j a_ij - b_i`, `c* = sum_ij d_i d_j a_ij - sum_i d_i b_i`,
/// with derivatives by central differences of step `h`.
pub fn adjoint_coefficients(
    a: impl Fn(&[f64]) -> DMatrix<f64>,
    b: impl Fn(&[f64]) -> Vec<f64>,
    x: &[f64],
    h: f64,
) -> (DMatrix<f64>, Vec<f64>, f64) {
    let n = x.len();
    let shifted = |d: &[(usize, f64)]| {
        let mut p = x.to_vec();
        for &(k, v) in d {
            p[k] += v;
        }
        p
    };
    let a0 = a(x);
    let b0 = b(x);
    let mut b_star = vec![0.0; n];
    let mut c_star = 0.0;
    for i in 0..n {
        let mut div = 0.0;
        for j in 0..n {
            let up = a(&shifted(&[(j, h)]));
            let dn = a(&shifted(&[(j, -h)]));
            div += (up[(i, j)] - dn[(i, j)]) / (2.0 * h);
            let mixed = if i == j {
                (up[(i, i)] - 2.0 * a0[(i, i)] + dn[(i, i)]) / (h * h)
            } else {
                let pp = a(&shifted(&[(i, h), (j, h)]));
                let pm = a(&shifted(&[(i, h), (j, -h)]));
                let mp = a(&shifted(&[(i, -h), (j, h)]));
                let mm = a(&shifted(&[(i, -h), (j, -h)]));
                (pp[(i, j)] - pm[(i, j)] - mp[(i, j)] + mm[(i, j)]) / (4.0 * h * h)
            };
            c_star += mixed;
        }
        b_star[i] = 2.0 * div - b0[i];
        let bu = b(&shifted(&[(i, h)]));
        let bd = b(&shifted(&[(i, -h)]));
        c_star -= (bu[i] - bd[i]) / (2.0 * h);
    }
    (a0, b_star, c_star)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_normal_peak() {
        let k = ConstKernel::scalar(0.5, 0.0).unwrap();
        let e = kernel(&k, 1.0, &[0.3], 0.0, &[0.3]).unwrap();
        assert!((e.value - 0.398_942_280_401_432_7).abs() < 1e-15);
        assert_eq!(e.grad, vec![0.0]);
    }

    #[test]
    fn time_order_is_enforced() {
        let k = ConstKernel::scalar(0.5, 0.0).unwrap();
        assert!(kernel(&k, 0.0, &[0.0], 1.0, &[0.0]).is_err());
        assert!(kernel(&k.adjoint(), 1.0, &[0.0], 0.0, &[0.0]).is_err());
        assert!(kernel(&k.adjoint(), 0.0, &[0.0], 1.0, &[0.0]).is_ok());
    }

    #[test]
    fn rejects_indefinite_matrix() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert_eq!(ConstKernel::forward(a, vec![0.0, 0.0]), Err(KernelError::NotPositiveDefinite));
    }

    #[test]
    fn adjoint_of_constant_coefficients() {
        let k = ConstKernel::scalar(0.5, 0.3).unwrap();
        assert_eq!(k.adjoint().effective_drift(), vec![-0.3]);
        assert_eq!(k.adjoint().adjoint(), k);
    }

    #[test]
    fn simpson_gaussian_moments() {
        let m2 = gaussian_expectation(|z| z * z, 1.0, 2.0, 256);
        assert!((m2 - 5.0).abs() < 1e-10);
        assert!((gaussian_expectation(|_| 1.0, 0.0, 0.5, 128) - 1.0).abs() < 1e-12);
    }
}
