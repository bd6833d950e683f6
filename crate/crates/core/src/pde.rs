//! Explicit finite-difference solver for the backward Kolmogorov equation
//! `v_t = sum a_ij v_ij + sum b_i v_i`, `a = sigma sigma^T / 2`, in one and
//! two space dimensions, with the propagation diagnostics used by the
//! comparison argument.

use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::convex::PayoffSpec;
use crate::kernels::gaussian_expectation;
use crate::model::DiffusionModel;
use crate::{numerics, par};

/// Fraction of the stability limit used for the time step.
pub const CFL_SAFETY: f64 = 0.8;

/// Cap on `nodes * time steps`; larger problems are refused.
pub const MAX_WORK: f64 = 4e10;

const BOUNDARY_INTERVALS: usize = 2048;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PdeError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("the finite-difference solver handles dimensions 1 and 2, got {0}")]
    DimensionCap(usize),
    #[error("diffusion matrix is degenerate at {at:?} (smallest eigenvalue {lambda:e})")]
    Degenerate { at: Vec<f64>, lambda: f64 },
    #[error("stable time stepping needs {steps} steps on {nodes} nodes, above the work cap")]
    TooMuchWork { steps: usize, nodes: usize },
    #[error("point {0:?} lies outside the grid")]
    OutOfDomain(Vec<f64>),
    #[error("fields live on different grids or data")]
    GridMismatch,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    /// The domain is `[-radius, radius]^dim`.
    pub radius: f64,
    pub nodes: usize,
    /// Minimum number of time steps; raised to meet the stability limit.
    pub time_steps: usize,
    pub horizon: f64,
    /// Keep every time slice, not only the first and last.
    #[serde(default)]
    pub keep_history: bool,
}

impl GridSpec {
    pub fn new(dim: usize, radius: f64, nodes: usize, horizon: f64) -> Result<Self, PdeError> {
        let g = Self { dim, radius, nodes, time_steps: 1, horizon, keep_history: false };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), PdeError> {
        if !(1..=2).contains(&self.dim) {
            return Err(PdeError::DimensionCap(self.dim));
        }
        if self.nodes < 16 {
            return Err(PdeError::InvalidGrid(format!("need at least 16 nodes per axis, got {}", self.nodes)));
        }
        if !(self.radius > 0.0 && self.horizon > 0.0) {
            return Err(PdeError::InvalidGrid("radius and horizon must be positive".into()));
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.radius / (self.nodes - 1) as f64
    }

    pub fn coordinate(&self, i: usize) -> f64 {
        -self.radius + self.spacing() * i as f64
    }

    pub fn node_count(&self) -> usize {
        self.nodes.pow(self.dim as u32)
    }

    /// Spatial point of flat node index `k` (first axis fastest).
    pub fn point(&self, k: usize) -> Vec<f64> {
        match self.dim {
            1 => vec![self.coordinate(k)],
            _ => vec![self.coordinate(k % self.nodes), self.coordinate(k / self.nodes)],
        }
    }

    /// The same domain with `(nodes + 1) / 2` nodes per axis; nested in this
    /// grid when `nodes` is odd.
    pub fn coarsened(&self) -> Self {
        Self { nodes: (self.nodes + 1) / 2, ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryPolicy {
    /// Boundary follows the exact Gaussian expectation of the data.
    ExactGaussian,
    /// Boundary frozen at the initial data.
    FrozenData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueField {
    pub grid: GridSpec,
    pub initial: Vec<f64>,
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub history: Option<Vec<Vec<f64>>>,
    pub time_steps: usize,
    pub dt: f64,
    pub boundary: BoundaryPolicy,
    pub model_tag: String,
}

/// Generator coefficients at every node.
struct Coefficients {
    a11: Vec<f64>,
    a12: Vec<f64>,
    a22: Vec<f64>,
    b1: Vec<f64>,
    b2: Vec<f64>,
}

fn node_coefficients(model: &DiffusionModel, grid: &GridSpec) -> Result<Coefficients, PdeError> {
    let count = grid.node_count();
    let n = grid.dim;
    let constant = model.is_constant_coefficient();
    let origin = vec![0.0; n];
    let eval = |p: &[f64]| -> Result<(DMatrix<f64>, Vec<f64>), PdeError> {
        let s = model.eval_dispersion(p).map_err(|e| PdeError::InvalidGrid(e.to_string()))?;
        let a = &s * s.transpose() * 0.5;
        let lambda = numerics::min_eigenvalue(&a);
        if !(lambda > 0.0) {
            return Err(PdeError::Degenerate { at: p.to_vec(), lambda });
        }
        let b = model.drift().eval(p).map_err(|e| PdeError::InvalidGrid(e.to_string()))?;
        Ok((a, b))
    };
    let mut c = Coefficients {
        a11: vec![0.0; count],
        a12: vec![0.0; count],
        a22: vec![0.0; count],
        b1: vec![0.0; count],
        b2: vec![0.0; count],
    };
    let fixed = if constant { Some(eval(&origin)?) } else { None };
    for k in 0..count {
        let (a, b) = match &fixed {
            Some(v) => v.clone(),
            None => eval(&grid.point(k))?,
        };
        c.a11[k] = a[(0, 0)];
        c.b1[k] = b[0];
        if n == 2 {
            c.a12[k] = 0.5 * (a[(0, 1)] + a[(1, 0)]);
            c.a22[k] = a[(1, 1)];
            c.b2[k] = b[1];
        }
    }
    Ok(c)
}

fn stable_dt(c: &Coefficients, h: f64, dim: usize) -> f64 {
    let mut dt = f64::INFINITY;
    for k in 0..c.a11.len() {
        let diff = if dim == 1 {
            4.0 * c.a11[k]
        } else {
            4.0 * (c.a11[k] + c.a22[k]) + 4.0 * c.a12[k].abs()
        };
        dt = dt.min(2.0 * h * h / diff);
        // Keep the centred drift from producing negative stencil weights.
        let a_min = if dim == 1 { c.a11[k] } else { c.a11[k].min(c.a22[k]) - c.a12[k].abs() };
        let b2 = c.b1[k] * c.b1[k] + c.b2[k] * c.b2[k];
        if b2 > 0.0 && a_min > 0.0 {
            dt = dt.min(2.0 * a_min / b2);
        }
    }
    CFL_SAFETY * dt
}

/// Far-field values for constant coefficients (closed form where the data
/// admits one, Simpson otherwise):
/// `E f(<c,x> + <c,b> t + sqrt(2 c^T A c t) Z)`, cached by `<c,x>`.
struct GaussianBoundary<'a> {
    payoff: &'a PayoffSpec,
    mean_rate: f64,
    var_rate: f64,
}

impl GaussianBoundary<'_> {
    fn new<'a>(payoff: &'a PayoffSpec, c: &Coefficients) -> GaussianBoundary<'a> {
        let w = payoff.weights();
        let mut mean_rate = w[0] * c.b1[0];
        let mut var_rate = 2.0 * w[0] * w[0] * c.a11[0];
        if w.len() == 2 {
            mean_rate += w[1] * c.b2[0];
            var_rate += 2.0 * (w[1] * w[1] * c.a22[0] + 2.0 * w[0] * w[1] * c.a12[0]);
        }
        GaussianBoundary { payoff, mean_rate, var_rate }
    }

    fn value(&self, s: f64, t: f64) -> f64 {
        let f = self.payoff.function();
        let (mean, sd) = (s + self.mean_rate * t, (self.var_rate * t).sqrt());
        f.gaussian_mean(mean, sd)
            .unwrap_or_else(|| gaussian_expectation(|z| f.eval(z), mean, sd, BOUNDARY_INTERVALS))
    }
}

fn boundary_nodes(grid: &GridSpec) -> Vec<usize> {
    let n = grid.nodes;
    if grid.dim == 1 {
        return vec![0, n - 1];
    }
    (0..n * n)
        .filter(|k| {
            let (i, j) = (k % n, k / n);
            i == 0 || j == 0 || i == n - 1 || j == n - 1
        })
        .collect()
}

/// Solve from `v(0, .) = f(<c, .>)` to the grid horizon.
pub fn solve_backward(model: &DiffusionModel, payoff: &PayoffSpec, grid: &GridSpec) -> Result<ValueField, PdeError> {
    grid.validate()?;
    if model.n() != grid.dim {
        return Err(PdeError::DimensionMismatch { expected: grid.dim, got: model.n() });
    }
    if payoff.dim() != grid.dim {
        return Err(PdeError::DimensionMismatch { expected: grid.dim, got: payoff.dim() });
    }
    let coeffs = node_coefficients(model, grid)?;
    let h = grid.spacing();
    let dt_max = stable_dt(&coeffs, h, grid.dim);
    let steps = grid.time_steps.max((grid.horizon / dt_max).ceil() as usize).max(1);
    let count = grid.node_count();
    if steps as f64 * count as f64 > MAX_WORK {
        return Err(PdeError::TooMuchWork { steps, nodes: count });
    }
    let dt = grid.horizon / steps as f64;
    let initial: Vec<f64> = (0..count).map(|k| payoff.eval(&grid.point(k))).collect();
    let boundary = if model.is_constant_coefficient() {
        BoundaryPolicy::ExactGaussian
    } else {
        BoundaryPolicy::FrozenData
    };
    let exact = GaussianBoundary::new(payoff, &coeffs);
    let edge = boundary_nodes(grid);
    let edge_s: Vec<f64> = edge.iter().map(|&k| payoff.argument(&grid.point(k))).collect();

    let mut v = initial.clone();
    let mut history = grid.keep_history.then(|| vec![initial.clone()]);
    for step in 1..=steps {
        let mut next = match grid.dim {
            1 => step_1d(&v, &coeffs, h, dt),
            _ => step_2d(&v, &coeffs, grid.nodes, h, dt),
        };
        match boundary {
            BoundaryPolicy::ExactGaussian => {
                let t = dt * step as f64;
                let mut cache: HashMap<u64, f64> = HashMap::new();
                for (&k, &s) in edge.iter().zip(&edge_s) {
                    next[k] = *cache.entry(s.to_bits()).or_insert_with(|| exact.value(s, t));
                }
            }
            BoundaryPolicy::FrozenData => {
                for &k in &edge {
                    next[k] = initial[k];
                }
            }
        }
        v = next;
        if let Some(hist) = history.as_mut() {
            hist.push(v.clone());
        }
    }
    Ok(ValueField {
        grid: grid.clone(),
        initial,
        values: v,
        history,
        time_steps: steps,
        dt,
        boundary,
        model_tag: model_tag(model),
    })
}

fn model_tag(model: &DiffusionModel) -> String {
    format!(
        "n{}-{:?}-{:?}",
        model.n(),
        model.drift().kind(),
        model.dispersion().kind()
    )
    .to_lowercase()
}

fn step_1d(v: &[f64], c: &Coefficients, h: f64, dt: f64) -> Vec<f64> {
    let n = v.len();
    let mut out = v.to_vec();
    let (ih2, i2h) = (1.0 / (h * h), 0.5 / h);
    for i in 1..n - 1 {
        let d2 = (v[i + 1] - 2.0 * v[i] + v[i - 1]) * ih2;
        let d1 = (v[i + 1] - v[i - 1]) * i2h;
        out[i] = v[i] + dt * (c.a11[i] * d2 + c.b1[i] * d1);
    }
    out
}

// Cross derivative: when `a_ii >= |a_12|` the term `2 a_12 v_12` is written
// with the diagonal second difference along (1, +-1), which keeps every
// stencil weight non-negative; otherwise the standard four-corner stencil.
fn step_2d(v: &[f64], c: &Coefficients, n: usize, h: f64, dt: f64) -> Vec<f64> {
    let ih2 = 1.0 / (h * h);
    let i2h = 0.5 / h;
    let rows = par::map_range(n, |j| {
        let mut row = v[j * n..(j + 1) * n].to_vec();
        if j == 0 || j == n - 1 {
            return row;
        }
        for i in 1..n - 1 {
            let k = j * n + i;
            let at = |di: isize, dj: isize| v[(j as isize + dj) as usize * n + (i as isize + di) as usize];
            let centre = v[k];
            let d11 = (at(1, 0) - 2.0 * centre + at(-1, 0)) * ih2;
            let d22 = (at(0, 1) - 2.0 * centre + at(0, -1)) * ih2;
            let (a11, a12, a22) = (c.a11[k], c.a12[k], c.a22[k]);
            let diff = if a12 == 0.0 {
                a11 * d11 + a22 * d22
            } else if a11 >= a12.abs() && a22 >= a12.abs() {
                let diag = if a12 > 0.0 {
                    (at(1, 1) - 2.0 * centre + at(-1, -1)) * ih2
                } else {
                    (at(1, -1) - 2.0 * centre + at(-1, 1)) * ih2
                };
                let m = a12.abs();
                (a11 - m) * d11 + (a22 - m) * d22 + m * diag
            } else {
                let d12 = (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) * 0.25 * ih2;
                a11 * d11 + 2.0 * a12 * d12 + a22 * d22
            };
            let drift = c.b1[k] * (at(1, 0) - at(-1, 0)) * i2h + c.b2[k] * (at(0, 1) - at(0, -1)) * i2h;
            row[i] = centre + dt * (diff + drift);
        }
        row
    });
    rows.concat()
}

/// Multilinear interpolation of the final slice.
pub fn probe_value(field: &ValueField, x: &[f64]) -> Result<f64, PdeError> {
    probe_slice(&field.grid, &field.values, x)
}

fn probe_slice(grid: &GridSpec, values: &[f64], x: &[f64]) -> Result<f64, PdeError> {
    if x.len() != grid.dim {
        return Err(PdeError::DimensionMismatch { expected: grid.dim, got: x.len() });
    }
    let h = grid.spacing();
    let mut base = [0usize; 2];
    let mut frac = [0.0f64; 2];
    for d in 0..grid.dim {
        let u = (x[d] + grid.radius) / h;
        if !(u >= -1e-9 && u <= (grid.nodes - 1) as f64 + 1e-9) {
            return Err(PdeError::OutOfDomain(x.to_vec()));
        }
        let i = (u.floor().max(0.0) as usize).min(grid.nodes - 2);
        base[d] = i;
        frac[d] = (u - i as f64).clamp(0.0, 1.0);
    }
    let n = grid.nodes;
    Ok(match grid.dim {
        1 => {
            let (i, t) = (base[0], frac[0]);
            if t == 0.0 {
                values[i]
            } else {
                (1.0 - t) * values[i] + t * values[i + 1]
            }
        }
        _ => {
            let (i, j) = (base[0], base[1]);
            let (s, t) = (frac[0], frac[1]);
            let v = |di: usize, dj: usize| values[(j + dj) * n + i + di];
            let mut acc = 0.0;
            for (di, wi) in [(0, 1.0 - s), (1, s)] {
                for (dj, wj) in [(0, 1.0 - t), (1, t)] {
                    if wi * wj != 0.0 {
                        acc += wi * wj * v(di, dj);
                    }
                }
            }
            acc
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationReport {
    /// Min over core nodes of `Tr(A D^2 v)`.
    pub min_trace: f64,
    /// 1D: min second difference quotient. 2D: min eigenvalue of the
    /// Richardson-extrapolated Hessian (steps h and 2h, fourth order).
    pub min_convexity: f64,
    /// 2D: min eigenvalue of the plain step-h central-difference Hessian.
    /// Carries an O(h^2) bias whose sign is not controlled when the exact
    /// Hessian is singular. Equal to `min_convexity` in 1D.
    pub min_convexity_plain: f64,
    /// Per-coordinate minima of the central-difference gradient.
    pub min_gradient: Vec<f64>,
    pub core_radius: f64,
}

/// Gradient, Hessian and trace diagnostics on the core sub-grid (nodes with
/// every coordinate within half the domain radius).
pub fn propagation_report(field: &ValueField, model: &DiffusionModel) -> Result<PropagationReport, PdeError> {
    let g = &field.grid;
    if model.n() != g.dim {
        return Err(PdeError::DimensionMismatch { expected: g.dim, got: model.n() });
    }
    let core_radius = 0.5 * g.radius;
    let n = g.nodes;
    let h = g.spacing();
    let v = &field.values;
    let in_core = |i: usize| g.coordinate(i).abs() <= core_radius + 1e-12 && i >= 2 && i + 2 < n;
    let mut min_trace = f64::INFINITY;
    let mut min_convexity = f64::INFINITY;
    let mut min_plain = f64::INFINITY;
    let mut min_gradient = vec![f64::INFINITY; g.dim];
    let a_at = |p: &[f64]| -> Result<DMatrix<f64>, PdeError> {
        Ok(model.diffusion_matrix(p).map_err(|e| PdeError::InvalidGrid(e.to_string()))? * 0.5)
    };
    if g.dim == 1 {
        for i in (0..n).filter(|&i| in_core(i)) {
            let d2 = (v[i + 1] - 2.0 * v[i] + v[i - 1]) / (h * h);
            let d1 = (v[i + 1] - v[i - 1]) / (2.0 * h);
            let a = a_at(&[g.coordinate(i)])?[(0, 0)];
            min_trace = min_trace.min(a * d2);
            min_convexity = min_convexity.min(d2);
            min_gradient[0] = min_gradient[0].min(d1);
        }
        min_plain = min_convexity;
    } else {
        let at = |i: usize, j: usize| v[j * n + i];
        // Hessian from central differences with step s*h.
        let hessian = |i: usize, j: usize, s: usize| {
            let hs = h * s as f64;
            let c = at(i, j);
            let d11 = (at(i + s, j) - 2.0 * c + at(i - s, j)) / (hs * hs);
            let d22 = (at(i, j + s) - 2.0 * c + at(i, j - s)) / (hs * hs);
            let d12 = (at(i + s, j + s) - at(i + s, j - s) - at(i - s, j + s) + at(i - s, j - s)) / (4.0 * hs * hs);
            DMatrix::from_row_slice(2, 2, &[d11, d12, d12, d22])
        };
        for j in (0..n).filter(|&j| in_core(j)) {
            for i in (0..n).filter(|&i| in_core(i)) {
                let plain = hessian(i, j, 1);
                let rich = (&plain * 4.0 - hessian(i, j, 2)) / 3.0;
                let a = a_at(&[g.coordinate(i), g.coordinate(j)])?;
                let trace = (&a * &rich).trace();
                min_trace = min_trace.min(trace);
                min_convexity = min_convexity.min(numerics::min_eigenvalue(&rich));
                min_plain = min_plain.min(numerics::min_eigenvalue(&plain));
                min_gradient[0] = min_gradient[0].min((at(i + 1, j) - at(i - 1, j)) / (2.0 * h));
                min_gradient[1] = min_gradient[1].min((at(i, j + 1) - at(i, j - 1)) / (2.0 * h));
            }
        }
    }
    Ok(PropagationReport { min_trace, min_convexity, min_convexity_plain: min_plain, min_gradient, core_radius })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaField {
    pub grid: GridSpec,
    /// `field2 - field1` on the final slice.
    pub values: Vec<f64>,
    /// Minimum over the core sub-grid.
    pub min_value: f64,
}

/// Pointwise `field2 - field1` (Y side minus X side) and its core minimum.
pub fn delta_field(field1: &ValueField, field2: &ValueField) -> Result<DeltaField, PdeError> {
    if field1.grid != field2.grid || field1.initial != field2.initial {
        return Err(PdeError::GridMismatch);
    }
    let g = &field1.grid;
    let values: Vec<f64> = field2.values.iter().zip(&field1.values).map(|(b, a)| b - a).collect();
    let core = 0.5 * g.radius + 1e-12;
    let min_value = (0..g.node_count())
        .filter(|&k| g.point(k).iter().all(|x| x.abs() <= core))
        .map(|k| values[k])
        .fold(f64::INFINITY, f64::min);
    Ok(DeltaField { grid: g.clone(), values, min_value })
}

/// Value at `x` on a grid, the same on the coarsened grid, and the tolerance
/// `10 * |fine - coarse| / 3` (plus a small floor).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RichardsonEstimate {
    pub fine: f64,
    pub coarse: f64,
    pub tol: f64,
}

pub fn tolerance_from_pair(fine: f64, coarse: f64) -> f64 {
    10.0 * (fine - coarse).abs() / 3.0 + 1e-8 * (1.0 + fine.abs())
}

/// Fine and coarse solutions of both models, with Richardson tolerances for
/// the X value, Y value and delta at `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSolution {
    pub fine_x: ValueField,
    pub fine_y: ValueField,
    pub value_x: RichardsonEstimate,
    pub value_y: RichardsonEstimate,
    pub delta: RichardsonEstimate,
    pub delta_field: DeltaField,
    /// `10 * max |delta_fine - delta_coarse| / 3` over core nodes shared by
    /// both grids.
    pub delta_field_tol: f64,
}

pub fn solve_pair(
    model_x: &DiffusionModel,
    model_y: &DiffusionModel,
    payoff: &PayoffSpec,
    grid: &GridSpec,
    x: &[f64],
) -> Result<PairSolution, PdeError> {
    let coarse_grid = grid.coarsened();
    let fx = solve_backward(model_x, payoff, grid)?;
    let fy = solve_backward(model_y, payoff, grid)?;
    let cx = solve_backward(model_x, payoff, &coarse_grid)?;
    let cy = solve_backward(model_y, payoff, &coarse_grid)?;
    let est = |fine: f64, coarse: f64| RichardsonEstimate { fine, coarse, tol: tolerance_from_pair(fine, coarse) };
    let (vfx, vfy) = (probe_value(&fx, x)?, probe_value(&fy, x)?);
    let (vcx, vcy) = (probe_value(&cx, x)?, probe_value(&cy, x)?);
    let delta_field_fine = delta_field(&fx, &fy)?;
    let delta_coarse = delta_field(&cx, &cy)?;
    let core = 0.5 * grid.radius + 1e-12;
    let mut worst = 0.0_f64;
    for k in 0..coarse_grid.node_count() {
        let p = coarse_grid.point(k);
        if p.iter().all(|v| v.abs() <= core) {
            let fine = probe_slice(grid, &delta_field_fine.values, &p)?;
            worst = worst.max((fine - delta_coarse.values[k]).abs());
        }
    }
    Ok(PairSolution {
        value_x: est(vfx, vcx),
        value_y: est(vfy, vcy),
        delta: est(vfy - vfx, vcy - vcx),
        delta_field: delta_field_fine,
        delta_field_tol: 10.0 * worst / 3.0 + 1e-8,
        fine_x: fx,
        fine_y: fy,
    })
}

/// CSV dump of the final slice with header `x[,y],value`.
pub fn field_csv(grid: &GridSpec, values: &[f64]) -> String {
    let mut out = String::from(if grid.dim == 1 { "x,value\n" } else { "x,y,value\n" });
    for (k, v) in values.iter().enumerate() {
        let p = grid.point(k);
        let coords: Vec<String> = p.iter().map(|c| format!("{c}")).collect();
        out.push_str(&format!("{},{v}\n", coords.join(",")));
    }
    out
}
