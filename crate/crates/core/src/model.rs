//! Diffusion models and sampled verification of the comparison hypotheses.
//!
//! A [`DiffusionModel`] is `dX = mu(X) dt + sigma(X) dW` started at `x0`.
//! Coefficients come from a closed set of declarative [`CoefficientField`]
//! families whose global bound and Lipschitz constant are computable, so the
//! hypothesis checks in this module are decidable by sampling.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics;
use crate::rng;
use crate::sampling;

/// Tolerance on the smallest eigenvalue in Loewner-order checks.
pub const TOL_ORDER: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid coefficient field: {0}")]
    InvalidField(String),
    #[error("matrix is not symmetric (asymmetry {0:e})")]
    NonSymmetric(f64),
    #[error(
        "Lipschitz bound violated: |F(x)-F(y)|/|x-y| = {ratio} exceeds declared {declared} at x={x:?}, y={y:?}"
    )]
    LipschitzViolation { x: Vec<f64>, y: Vec<f64>, ratio: f64, declared: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldKind {
    /// `params = values` (row-major for matrices).
    Constant,
    /// `F_k(x) = clamp(base_k + <slope_k, x>, lo_k, hi_k)`;
    /// `params = base[m] ++ slope[m*n] ++ lo[m] ++ hi[m]`.
    AffineClamped,
    /// `F_k(x) = base_k + amp_k * sin(<w, x> + phase)`;
    /// `params = base[m] ++ amp[m] ++ w[n] ++ [phase]`.
    TrigPerturbed,
    /// Piecewise-linear in one coordinate, constant beyond the end knots;
    /// `params = [axis, K] ++ knots[K] ++ values[K*m]`.
    TableInterpolated,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawField {
    kind: FieldKind,
    params: Vec<f64>,
    dim: usize,
}

/// A bounded, Lipschitz coefficient map `R^n -> R^m`.
///
/// `m` is `n` for a drift and `n*n` for a dispersion matrix; it is recovered
/// from the parameter layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawField", into = "RawField")]
pub struct CoefficientField {
    kind: FieldKind,
    params: Vec<f64>,
    dim: usize,
    out_len: usize,
}

impl From<CoefficientField> for RawField {
    fn from(f: CoefficientField) -> Self {
        RawField { kind: f.kind, params: f.params, dim: f.dim }
    }
}

impl TryFrom<RawField> for CoefficientField {
    type Error = ModelError;

    fn try_from(raw: RawField) -> Result<Self, Self::Error> {
        CoefficientField::new(raw.kind, raw.params, raw.dim)
    }
}

fn invalid(msg: impl Into<String>) -> ModelError {
    ModelError::InvalidField(msg.into())
}

impl CoefficientField {
    pub fn new(kind: FieldKind, params: Vec<f64>, dim: usize) -> Result<Self, ModelError> {
        if dim == 0 {
            return Err(invalid("input dimension must be positive"));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(invalid("parameters must be finite"));
        }
        let len = params.len();
        let out_len = match kind {
            FieldKind::Constant => len,
            FieldKind::AffineClamped => {
                if len % (dim + 3) != 0 {
                    return Err(invalid(format!("affine-clamped: {len} params is not a multiple of dim+3")));
                }
                len / (dim + 3)
            }
            FieldKind::TrigPerturbed => {
                if len < dim + 1 || (len - dim - 1) % 2 != 0 {
                    return Err(invalid(format!("trig-perturbed: bad parameter count {len}")));
                }
                (len - dim - 1) / 2
            }
            FieldKind::TableInterpolated => {
                if len < 2 {
                    return Err(invalid("table: missing header"));
                }
                let (axis, k) = (params[0], params[1]);
                if axis < 0.0 || axis.fract() != 0.0 || axis as usize >= dim {
                    return Err(invalid(format!("table: axis {axis} out of range")));
                }
                if k < 2.0 || k.fract() != 0.0 {
                    return Err(invalid("table: need at least two knots"));
                }
                let k = k as usize;
                if len < 2 + k || (len - 2 - k) % k != 0 {
                    return Err(invalid(format!("table: bad parameter count {len}")));
                }
                let knots = &params[2..2 + k];
                if knots.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(invalid("table: knots must be strictly increasing"));
                }
                (len - 2 - k) / k
            }
        };
        if out_len == 0 {
            return Err(invalid("field has no outputs"));
        }
        let field = Self { kind, params, dim, out_len };
        if kind == FieldKind::AffineClamped {
            let (_, _, lo, hi) = field.affine_parts();
            if lo.iter().zip(hi).any(|(l, h)| l > h) {
                return Err(invalid("affine-clamped: lo must not exceed hi"));
            }
        }
        Ok(field)
    }

    pub fn constant(dim: usize, values: Vec<f64>) -> Result<Self, ModelError> {
        Self::new(FieldKind::Constant, values, dim)
    }

    pub fn zero_drift(n: usize) -> Self {
        Self::constant(n, vec![0.0; n]).expect("valid zero drift")
    }

    pub fn constant_drift(values: &[f64]) -> Self {
        Self::constant(values.len(), values.to_vec()).expect("valid constant drift")
    }

    pub fn scaled_identity(n: usize, scale: f64) -> Self {
        let mut v = vec![0.0; n * n];
        for i in 0..n {
            v[i * n + i] = scale;
        }
        Self::constant(n, v).expect("valid identity")
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut v = vec![0.0; n * n];
        for (i, d) in diag.iter().enumerate() {
            v[i * n + i] = *d;
        }
        Self::constant(n, v).expect("valid diagonal")
    }

    pub fn affine_clamped(
        dim: usize,
        base: &[f64],
        slope: &[f64],
        lo: &[f64],
        hi: &[f64],
    ) -> Result<Self, ModelError> {
        let params = [base, slope, lo, hi].concat();
        Self::new(FieldKind::AffineClamped, params, dim)
    }

    pub fn trig_perturbed(
        dim: usize,
        base: &[f64],
        amp: &[f64],
        freq: &[f64],
        phase: f64,
    ) -> Result<Self, ModelError> {
        if base.len() != amp.len() || freq.len() != dim {
            return Err(invalid("trig-perturbed: inconsistent part lengths"));
        }
        let params = [base, amp, freq, &[phase]].concat();
        Self::new(FieldKind::TrigPerturbed, params, dim)
    }

    pub fn table(dim: usize, axis: usize, knots: &[f64], values: &[f64]) -> Result<Self, ModelError> {
        let params = [&[axis as f64, knots.len() as f64], knots, values].concat();
        Self::new(FieldKind::TableInterpolated, params, dim)
    }

    pub fn kind(&self) -> FieldKind {
        self.kind
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn out_len(&self) -> usize {
        self.out_len
    }

    fn affine_parts(&self) -> (&[f64], &[f64], &[f64], &[f64]) {
        let (m, n) = (self.out_len, self.dim);
        let p = &self.params;
        (&p[..m], &p[m..m + m * n], &p[m + m * n..2 * m + m * n], &p[2 * m + m * n..])
    }

    fn trig_parts(&self) -> (&[f64], &[f64], &[f64], f64) {
        let (m, n) = (self.out_len, self.dim);
        let p = &self.params;
        (&p[..m], &p[m..2 * m], &p[2 * m..2 * m + n], p[2 * m + n])
    }

    fn table_parts(&self) -> (usize, &[f64], &[f64]) {
        let axis = self.params[0] as usize;
        let k = self.params[1] as usize;
        (axis, &self.params[2..2 + k], &self.params[2 + k..])
    }

    /// Evaluate into `out` (length `out_len`). Hot-path entry point; `x` must
    /// have length `dim`.
    #[inline]
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        match self.kind {
            FieldKind::Constant => out.copy_from_slice(&self.params),
            FieldKind::AffineClamped => {
                let (base, slope, lo, hi) = self.affine_parts();
                let n = self.dim;
                for k in 0..self.out_len {
                    let lin = base[k] + numerics::dot(&slope[k * n..(k + 1) * n], x);
                    out[k] = lin.clamp(lo[k], hi[k]);
                }
            }
            FieldKind::TrigPerturbed => {
                let (base, amp, w, phase) = self.trig_parts();
                let s = (numerics::dot(w, x) + phase).sin();
                for k in 0..self.out_len {
                    out[k] = base[k] + amp[k] * s;
                }
            }
            FieldKind::TableInterpolated => {
                let (axis, knots, values) = self.table_parts();
                let m = self.out_len;
                let u = x[axis];
                let last = knots.len() - 1;
                if u <= knots[0] {
                    out.copy_from_slice(&values[..m]);
                } else if u >= knots[last] {
                    out.copy_from_slice(&values[last * m..]);
                } else {
                    let seg = knots.partition_point(|k| *k <= u) - 1;
                    let w = (u - knots[seg]) / (knots[seg + 1] - knots[seg]);
                    for k in 0..m {
                        let a = values[seg * m + k];
                        let b = values[(seg + 1) * m + k];
                        out[k] = a + w * (b - a);
                    }
                }
            }
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        if x.len() != self.dim {
            return Err(ModelError::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        let mut out = vec![0.0; self.out_len];
        self.eval_into(x, &mut out);
        Ok(out)
    }

    /// Global Lipschitz constant in the Euclidean (Frobenius for matrices)
    /// norm, exact for the declarative families.
    pub fn lipschitz_constant(&self) -> f64 {
        match self.kind {
            FieldKind::Constant => 0.0,
            FieldKind::AffineClamped => {
                let (_, slope, _, _) = self.affine_parts();
                slope.iter().map(|s| s * s).sum::<f64>().sqrt()
            }
            FieldKind::TrigPerturbed => {
                let (_, amp, w, _) = self.trig_parts();
                let a = amp.iter().map(|v| v * v).sum::<f64>().sqrt();
                let f = w.iter().map(|v| v * v).sum::<f64>().sqrt();
                a * f
            }
            FieldKind::TableInterpolated => {
                let (_, knots, values) = self.table_parts();
                let m = self.out_len;
                knots
                    .windows(2)
                    .enumerate()
                    .map(|(s, w)| {
                        let d: f64 = (0..m)
                            .map(|k| (values[(s + 1) * m + k] - values[s * m + k]).powi(2))
                            .sum::<f64>()
                            .sqrt();
                        d / (w[1] - w[0])
                    })
                    .fold(0.0, f64::max)
            }
        }
    }

    /// Global bound on `|F(x)|`.
    pub fn bound(&self) -> f64 {
        let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        match self.kind {
            FieldKind::Constant => norm(&self.params),
            FieldKind::AffineClamped => {
                let (_, _, lo, hi) = self.affine_parts();
                lo.iter().zip(hi).map(|(l, h)| l.abs().max(h.abs()).powi(2)).sum::<f64>().sqrt()
            }
            FieldKind::TrigPerturbed => {
                let (base, amp, _, _) = self.trig_parts();
                norm(base) + norm(amp)
            }
            FieldKind::TableInterpolated => {
                let (_, _, values) = self.table_parts();
                values.chunks(self.out_len).map(norm).fold(0.0, f64::max)
            }
        }
    }

    /// True when the field is structurally the zero map.
    pub fn is_identically_zero(&self) -> bool {
        match self.kind {
            FieldKind::Constant => self.params.iter().all(|v| *v == 0.0),
            FieldKind::AffineClamped => {
                let (base, slope, lo, hi) = self.affine_parts();
                base.iter().chain(slope).all(|v| *v == 0.0)
                    && lo.iter().zip(hi).all(|(l, h)| *l <= 0.0 && *h >= 0.0)
            }
            FieldKind::TrigPerturbed => {
                let (base, amp, _, _) = self.trig_parts();
                base.iter().chain(amp).all(|v| *v == 0.0)
            }
            FieldKind::TableInterpolated => self.table_parts().2.iter().all(|v| *v == 0.0),
        }
    }

    pub fn is_constant(&self) -> bool {
        self.kind == FieldKind::Constant
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawModel {
    n: usize,
    x0: Vec<f64>,
    drift: CoefficientField,
    dispersion: CoefficientField,
}

/// One side of a comparison pair: `dX = mu(X) dt + sigma(X) dW`, `X(0) = x0`.
///
/// The driving Brownian motion has the same dimension `n` as the state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModel", into = "RawModel")]
pub struct DiffusionModel {
    n: usize,
    x0: Vec<f64>,
    drift: CoefficientField,
    dispersion: CoefficientField,
}

impl From<DiffusionModel> for RawModel {
    fn from(m: DiffusionModel) -> Self {
        RawModel { n: m.n, x0: m.x0, drift: m.drift, dispersion: m.dispersion }
    }
}

impl TryFrom<RawModel> for DiffusionModel {
    type Error = ModelError;

    fn try_from(raw: RawModel) -> Result<Self, Self::Error> {
        DiffusionModel::new(raw.x0, raw.drift, raw.dispersion).and_then(|m| {
            if m.n != raw.n {
                Err(ModelError::DimensionMismatch { expected: raw.n, got: m.n })
            } else {
                Ok(m)
            }
        })
    }
}

impl DiffusionModel {
    pub fn new(x0: Vec<f64>, drift: CoefficientField, dispersion: CoefficientField) -> Result<Self, ModelError> {
        let n = x0.len();
        if n == 0 {
            return Err(invalid("model dimension must be positive"));
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(invalid("x0 must be finite"));
        }
        for (field, want) in [(&drift, n), (&dispersion, n * n)] {
            if field.dim() != n {
                return Err(ModelError::DimensionMismatch { expected: n, got: field.dim() });
            }
            if field.out_len() != want {
                return Err(ModelError::DimensionMismatch { expected: want, got: field.out_len() });
            }
        }
        Ok(Self { n, x0, drift, dispersion })
    }

    /// Driftless model with constant dispersion `scale * I`.
    pub fn brownian(x0: Vec<f64>, scale: f64) -> Self {
        let n = x0.len();
        Self::new(x0, CoefficientField::zero_drift(n), CoefficientField::scaled_identity(n, scale))
            .expect("valid Brownian model")
    }

    pub fn with_drift(mut self, drift: CoefficientField) -> Result<Self, ModelError> {
        self = Self::new(self.x0, drift, self.dispersion)?;
        Ok(self)
    }

    pub fn with_x0(self, x0: Vec<f64>) -> Result<Self, ModelError> {
        Self::new(x0, self.drift, self.dispersion)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn drift(&self) -> &CoefficientField {
        &self.drift
    }

    pub fn dispersion(&self) -> &CoefficientField {
        &self.dispersion
    }

    fn check_point(&self, x: &[f64]) -> Result<(), ModelError> {
        if x.len() != self.n {
            return Err(ModelError::DimensionMismatch { expected: self.n, got: x.len() });
        }
        Ok(())
    }

    pub fn eval_dispersion(&self, x: &[f64]) -> Result<DMatrix<f64>, ModelError> {
        self.check_point(x)?;
        let v = self.dispersion.eval(x)?;
        Ok(DMatrix::from_row_slice(self.n, self.n, &v))
    }

    pub fn eval_drift(&self, x: &[f64]) -> Result<DVector<f64>, ModelError> {
        self.check_point(x)?;
        Ok(DVector::from_vec(self.drift.eval(x)?))
    }

    /// `sigma sigma^T` at `x` (no factor 1/2).
    pub fn diffusion_matrix(&self, x: &[f64]) -> Result<DMatrix<f64>, ModelError> {
        let s = self.eval_dispersion(x)?;
        Ok(&s * s.transpose())
    }

    pub fn is_constant_coefficient(&self) -> bool {
        self.drift.is_constant() && self.dispersion.is_constant()
    }

    pub fn is_driftless(&self) -> bool {
        self.drift.is_identically_zero()
    }
}

/// `sigma(x)` for the model; errors on a dimension mismatch.
pub fn eval_dispersion(model: &DiffusionModel, x: &[f64]) -> Result<DMatrix<f64>, ModelError> {
    model.eval_dispersion(x)
}

/// `A <= B` in the Loewner order, up to `tol`: the smallest eigenvalue of
/// `B - A` is at least `-tol`.
pub fn loewner_leq(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> Result<bool, ModelError> {
    if a.shape() != b.shape() || a.nrows() != a.ncols() {
        return Err(ModelError::DimensionMismatch { expected: a.nrows(), got: b.nrows() });
    }
    for m in [a, b] {
        let scale = 1.0 + m.amax();
        let asym = numerics::asymmetry(m);
        if asym > 1e-12 * scale {
            return Err(ModelError::NonSymmetric(asym));
        }
    }
    Ok(numerics::min_eigenvalue(&(b - a)) >= -tol)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderReport {
    pub diffusion_order_ok: bool,
    pub drift_order_ok: bool,
    /// Most negative eigenvalue of `rho rho^T - sigma sigma^T` over the samples.
    pub worst_eigenvalue: f64,
    /// Most negative component of `nu - mu` over the samples.
    pub worst_drift_gap: f64,
    pub sample_points: Vec<Vec<f64>>,
}

/// Check `sigma sigma^T <= rho rho^T` and `mu <= nu` (componentwise) at
/// `samples` quasi-random points of the ball of `radius`, plus the origin
/// and the common start point.
pub fn order_scan(
    model_x: &DiffusionModel,
    model_y: &DiffusionModel,
    radius: f64,
    samples: usize,
    seed: u64,
) -> Result<OrderReport, ModelError> {
    if model_x.n() != model_y.n() {
        return Err(ModelError::DimensionMismatch { expected: model_x.n(), got: model_y.n() });
    }
    let n = model_x.n();
    let points = sampling::ball_points(n, radius, samples, seed, &[model_x.x0(), model_y.x0()]);
    let mut worst_eigenvalue = f64::INFINITY;
    let mut worst_drift_gap = f64::INFINITY;
    for p in &points {
        let gap = model_y.diffusion_matrix(p)? - model_x.diffusion_matrix(p)?;
        worst_eigenvalue = worst_eigenvalue.min(numerics::min_eigenvalue(&gap));
        let mu = model_x.drift.eval(p)?;
        let nu = model_y.drift.eval(p)?;
        for (a, b) in mu.iter().zip(&nu) {
            worst_drift_gap = worst_drift_gap.min(b - a);
        }
    }
    Ok(OrderReport {
        diffusion_order_ok: worst_eigenvalue >= -TOL_ORDER,
        drift_order_ok: worst_drift_gap >= -TOL_ORDER,
        worst_eigenvalue,
        worst_drift_gap,
        sample_points: points,
    })
}

/// Largest sampled difference quotient `|F(x)-F(y)|/|x-y|`.
///
/// Pairs are drawn at geometrically shrinking separations so that the local
/// slope is resolved. Errors if the ratio exceeds the field's declared
/// Lipschitz constant.
pub fn lipschitz_probe(field: &CoefficientField, radius: f64, pairs: usize, seed: u64) -> Result<f64, ModelError> {
    lipschitz_probe_against(field, field.lipschitz_constant(), radius, pairs, seed)
}

/// [`lipschitz_probe`] against an externally declared constant.
pub fn lipschitz_probe_against(
    field: &CoefficientField,
    declared: f64,
    radius: f64,
    pairs: usize,
    seed: u64,
) -> Result<f64, ModelError> {
    let n = field.dim();
    let seq = sampling::Halton::new(n, seed);
    let mut fx = vec![0.0; field.out_len()];
    let mut fy = vec![0.0; field.out_len()];
    let mut dir = vec![0.0; n];
    let mut worst = 0.0_f64;
    for i in 0..pairs as u64 {
        let x = sampling::cube_to_ball(&seq.point(i), radius);
        rng::fill_standard_normals(seed, 0xD1, i, &mut dir);
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        let sep = radius.max(1e-3) * 0.5_f64.powi((i % 24) as i32);
        let y: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + sep * d / norm).collect();
        let dist = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        if dist == 0.0 {
            continue;
        }
        field.eval_into(&x, &mut fx);
        field.eval_into(&y, &mut fy);
        let df = fx.iter().zip(&fy).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let ratio = df / dist;
        if ratio > declared * (1.0 + 1e-9) + 1e-12 {
            return Err(ModelError::LipschitzViolation { x, y, ratio, declared });
        }
        worst = worst.max(ratio);
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipticityReport {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub sample_count: usize,
    pub region_radius: f64,
    /// Set when `lambda_min <= 0`: Monte Carlo still runs, the PDE solver
    /// refuses.
    pub degenerate: bool,
}

/// Extreme eigenvalues of `a(x) = sigma sigma^T(x)` over sampled points.
pub fn ellipticity_scan(
    model: &DiffusionModel,
    radius: f64,
    samples: usize,
    seed: u64,
) -> Result<EllipticityReport, ModelError> {
    let points = sampling::ball_points(model.n(), radius, samples, seed, &[model.x0()]);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for p in &points {
        let ev = numerics::symmetric_eigenvalues(&model.diffusion_matrix(p)?);
        lo = lo.min(ev[0]);
        hi = hi.max(ev[ev.len() - 1]);
    }
    Ok(EllipticityReport {
        lambda_min: lo,
        lambda_max: hi,
        sample_count: points.len(),
        region_radius: radius,
        degenerate: lo <= 0.0,
    })
}
