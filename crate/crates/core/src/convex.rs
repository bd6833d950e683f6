//! Univariate payoff functions, composition with positive weights, shape
//! checks, and the strictly convex compactly supported smoothing
//! `f^{eps,R}` used by the analytic comparison argument.
//!
//! The smoothing is built in three layers:
//!
//! 1. `f` is written as `affine + q z^2 + sum_j s_j (z - k_j)_+` with
//!    `q, s_j >= 0` (exactly for the piecewise families, by convex
//!    piecewise-linear interpolation otherwise);
//! 2. that expansion is convolved in closed form with a Gaussian of width
//!    `h <= 1/4`, and a strictly convex bump `gamma (cosh(z/R) - 1)` is added;
//! 3. the result is multiplied by a C-infinity smoothstep that is one on
//!    `[-R, R]` and zero outside `[-R-band, R+band]`.
//!
//! Every layer has closed-form first and second derivatives, so
//! [`MollifiedFunction::second_derivative`] is analytic.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics;

/// Second-difference tolerance for convexity checks, relative to
/// `max(1, |f(z)|)`.
pub const TOL_CONV: f64 = 1e-10;

/// Width of the taper zone outside the core ball, in payoff units.
pub const TAPER_BAND: f64 = 1.0;

const MAX_INTERPOLATION_KNOTS: usize = 1 << 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConvexError {
    #[error("payoff dimension mismatch: {expected} weights, point has {got} coordinates")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("weights must be strictly positive and finite, got {0:?}")]
    NonPositiveWeights(Vec<f64>),
    #[error("invalid scalar function: {0}")]
    InvalidFunction(String),
    #[error("cannot mollify a function that is not convex on the working interval (worst second difference {0:e})")]
    NotConvex(f64),
    #[error("mollification failed: {0}; try a larger epsilon")]
    Tuning(String),
}

/// A univariate data function `f`.
#[derive(Debug, Clone, PartialEq)]
pub enum ScalarFunction {
    Abs,
    /// `|z|^p`, `p >= 1`.
    Power { p: f64 },
    Relu,
    /// `ln(1 + e^z)`.
    Softplus,
    /// `scale * z^2`.
    Quadratic { scale: f64 },
    /// `scale * e^{rate z}`.
    ExpScaled { scale: f64, rate: f64 },
    Linear { slope: f64, intercept: f64 },
    /// `-z`: convex but decreasing.
    NegLinear,
    /// `-z^2`: concave.
    NegQuadratic,
    /// Linear interpolation of `(z, f)` knots, extended linearly beyond the
    /// end knots.
    PiecewiseLinear { knots: Vec<(f64, f64)> },
    Mollified(Arc<MollifiedFunction>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScalarKind {
    Abs,
    PowerP,
    Relu,
    Softplus,
    Quadratic,
    ExpScaled,
    Linear,
    NegLinear,
    NegQuadratic,
    PiecewiseLinear,
    Mollified,
}

/// Serialized form of a [`ScalarFunction`]: `{kind, params[, base]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarRecord {
    pub kind: ScalarKind,
    #[serde(default)]
    pub params: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<Box<ScalarRecord>>,
}

fn bad(msg: impl Into<String>) -> ConvexError {
    ConvexError::InvalidFunction(msg.into())
}

impl TryFrom<ScalarRecord> for ScalarFunction {
    type Error = ConvexError;

    fn try_from(rec: ScalarRecord) -> Result<Self, ConvexError> {
        let p = &rec.params;
        let want = |n: usize| -> Result<(), ConvexError> {
            if p.len() == n {
                Ok(())
            } else {
                Err(bad(format!("{:?} takes {n} params, got {}", rec.kind, p.len())))
            }
        };
        let f = match rec.kind {
            ScalarKind::Abs => ScalarFunction::Abs,
            ScalarKind::Relu => ScalarFunction::Relu,
            ScalarKind::Softplus => ScalarFunction::Softplus,
            ScalarKind::NegLinear => ScalarFunction::NegLinear,
            ScalarKind::NegQuadratic => ScalarFunction::NegQuadratic,
            ScalarKind::PowerP => {
                want(1)?;
                if !(p[0] >= 1.0) {
                    return Err(bad("power-p needs p >= 1"));
                }
                ScalarFunction::Power { p: p[0] }
            }
            ScalarKind::Quadratic => match p.len() {
                0 => ScalarFunction::Quadratic { scale: 1.0 },
                _ => {
                    want(1)?;
                    ScalarFunction::Quadratic { scale: p[0] }
                }
            },
            ScalarKind::ExpScaled => {
                want(2)?;
                ScalarFunction::ExpScaled { scale: p[0], rate: p[1] }
            }
            ScalarKind::Linear => match p.len() {
                0 => ScalarFunction::Linear { slope: 1.0, intercept: 0.0 },
                _ => {
                    want(2)?;
                    ScalarFunction::Linear { slope: p[0], intercept: p[1] }
                }
            },
            ScalarKind::PiecewiseLinear => {
                if p.len() < 4 || p.len() % 2 != 0 {
                    return Err(bad("piecewise-linear needs at least two (z, f) pairs"));
                }
                let knots: Vec<(f64, f64)> = p.chunks(2).map(|c| (c[0], c[1])).collect();
                if knots.windows(2).any(|w| w[1].0 <= w[0].0) {
                    return Err(bad("piecewise-linear knots must be strictly increasing"));
                }
                ScalarFunction::PiecewiseLinear { knots }
            }
            ScalarKind::Mollified => {
                let base = rec.base.ok_or_else(|| bad("mollified needs a base function"))?;
                let base = ScalarFunction::try_from(*base)?;
                let m = match p.len() {
                    2 => mollify(&base, p[0], p[1])?,
                    4 => MollifiedFunction::with_parameters(base, p[0], p[1], p[2], p[3])?,
                    n => return Err(bad(format!("mollified takes 2 or 4 params, got {n}"))),
                };
                ScalarFunction::Mollified(Arc::new(m))
            }
        };
        if p.iter().any(|v| !v.is_finite()) {
            return Err(bad("parameters must be finite"));
        }
        Ok(f)
    }
}

impl From<&ScalarFunction> for ScalarRecord {
    fn from(f: &ScalarFunction) -> Self {
        let rec = |kind, params: Vec<f64>| ScalarRecord { kind, params, base: None };
        match f {
            ScalarFunction::Abs => rec(ScalarKind::Abs, vec![]),
            ScalarFunction::Power { p } => rec(ScalarKind::PowerP, vec![*p]),
            ScalarFunction::Relu => rec(ScalarKind::Relu, vec![]),
            ScalarFunction::Softplus => rec(ScalarKind::Softplus, vec![]),
            ScalarFunction::Quadratic { scale } => rec(ScalarKind::Quadratic, vec![*scale]),
            ScalarFunction::ExpScaled { scale, rate } => rec(ScalarKind::ExpScaled, vec![*scale, *rate]),
            ScalarFunction::Linear { slope, intercept } => rec(ScalarKind::Linear, vec![*slope, *intercept]),
            ScalarFunction::NegLinear => rec(ScalarKind::NegLinear, vec![]),
            ScalarFunction::NegQuadratic => rec(ScalarKind::NegQuadratic, vec![]),
            ScalarFunction::PiecewiseLinear { knots } => rec(
                ScalarKind::PiecewiseLinear,
                knots.iter().flat_map(|(z, v)| [*z, *v]).collect(),
            ),
            ScalarFunction::Mollified(m) => ScalarRecord {
                kind: ScalarKind::Mollified,
                params: vec![m.epsilon, m.radius, m.smoothing_width, m.bump_weight],
                base: Some(Box::new(ScalarRecord::from(&m.base))),
            },
        }
    }
}

impl Serialize for ScalarFunction {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        ScalarRecord::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for ScalarFunction {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rec = ScalarRecord::deserialize(d)?;
        ScalarFunction::try_from(rec).map_err(serde::de::Error::custom)
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl ScalarFunction {
    pub fn piecewise_linear(knots: Vec<(f64, f64)>) -> Result<Self, ConvexError> {
        let params = knots.iter().flat_map(|(z, v)| [*z, *v]).collect();
        ScalarFunction::try_from(ScalarRecord { kind: ScalarKind::PiecewiseLinear, params, base: None })
    }

    pub fn quadratic() -> Self {
        ScalarFunction::Quadratic { scale: 1.0 }
    }

    pub fn linear() -> Self {
        ScalarFunction::Linear { slope: 1.0, intercept: 0.0 }
    }

    pub fn eval(&self, z: f64) -> f64 {
        match self {
            ScalarFunction::Abs => z.abs(),
            ScalarFunction::Power { p } => z.abs().powf(*p),
            ScalarFunction::Relu => z.max(0.0),
            ScalarFunction::Softplus => softplus(z),
            ScalarFunction::Quadratic { scale } => scale * z * z,
            ScalarFunction::ExpScaled { scale, rate } => scale * (rate * z).exp(),
            ScalarFunction::Linear { slope, intercept } => slope * z + intercept,
            ScalarFunction::NegLinear => -z,
            ScalarFunction::NegQuadratic => -z * z,
            ScalarFunction::PiecewiseLinear { knots } => eval_piecewise(knots, z),
            ScalarFunction::Mollified(m) => m.eval(z),
        }
    }

    pub fn kind(&self) -> ScalarKind {
        ScalarRecord::from(self).kind
    }

    /// `E f(mean + sd Z)`, `Z ~ N(0,1)`, in closed form where one exists
    /// (the piecewise families, quadratics and exponentials).
    pub fn gaussian_mean(&self, mean: f64, sd: f64) -> Option<f64> {
        match self {
            ScalarFunction::NegQuadratic => Some(-(mean * mean + sd * sd)),
            ScalarFunction::ExpScaled { scale, rate } => Some(scale * (rate * mean + 0.5 * rate * rate * sd * sd).exp()),
            ScalarFunction::Softplus | ScalarFunction::Mollified(_) => None,
            ScalarFunction::Power { p } if *p != 1.0 && *p != 2.0 => None,
            ScalarFunction::Quadratic { scale } if *scale < 0.0 => Some(scale * (mean * mean + sd * sd)),
            _ => HingeExpansion::of(self, 0.0, 0.0, 0.0).ok().map(|e| e.smoothed(mean, sd.abs()).0),
        }
    }
}

fn eval_piecewise(knots: &[(f64, f64)], z: f64) -> f64 {
    let last = knots.len() - 1;
    let seg = if z <= knots[0].0 {
        0
    } else if z >= knots[last].0 {
        last - 1
    } else {
        knots.partition_point(|k| k.0 <= z) - 1
    };
    let (z0, f0) = knots[seg];
    let (z1, f1) = knots[seg + 1];
    f0 + (f1 - f0) * (z - z0) / (z1 - z0)
}

/// Outcome of a sampled shape check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeCheck {
    pub holds: bool,
    /// Smallest sampled second (convexity) or first (monotonicity) difference.
    pub worst: f64,
    /// Where the worst difference was seen.
    pub witness: f64,
}

fn difference_scan(
    f: &ScalarFunction,
    lo: f64,
    hi: f64,
    samples: usize,
    diff: impl Fn(f64, f64) -> f64,
) -> ShapeCheck {
    let samples = samples.max(3);
    let step = (hi - lo) / (samples - 1) as f64;
    let mut worst = f64::INFINITY;
    let mut witness = lo;
    let mut holds = true;
    for i in 0..samples {
        let z = lo + step * i as f64;
        let scale = f.eval(z).abs().max(1.0);
        for k in 0..4 {
            let h = step * 0.25_f64.powi(k);
            let d = diff(z, h);
            if d < worst {
                worst = d;
                witness = z;
            }
            if d < -TOL_CONV * scale {
                holds = false;
            }
        }
    }
    ShapeCheck { holds, worst, witness }
}

/// Midpoint second differences `f(z-h) - 2f(z) + f(z+h)` on a grid of
/// `samples` points and a ladder of `h`.
pub fn convexity_check(f: &ScalarFunction, lo: f64, hi: f64, samples: usize) -> ShapeCheck {
    difference_scan(f, lo, hi, samples, |z, h| f.eval(z - h) - 2.0 * f.eval(z) + f.eval(z + h))
}

/// Forward first differences `f(z+h) - f(z)`.
pub fn monotonicity_check(f: &ScalarFunction, lo: f64, hi: f64, samples: usize) -> ShapeCheck {
    difference_scan(f, lo, hi, samples, |z, h| f.eval(z + h) - f.eval(z))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthCheck {
    pub holds: bool,
    /// Largest `|f(z)| / (A e^{B|z|})` on the grid.
    pub worst_ratio: f64,
    /// Argmax of the ratio; reported when the bound fails.
    pub witness: Option<f64>,
}

/// Check `|f(z)| <= A e^{B|z|}` on a grid over `[-radius, radius]`.
pub fn growth_check(f: &ScalarFunction, a: f64, b: f64, radius: f64) -> GrowthCheck {
    const POINTS: usize = 20_001;
    let mut worst_ratio = 0.0_f64;
    let mut arg = 0.0;
    for i in 0..POINTS {
        let z = -radius + 2.0 * radius * i as f64 / (POINTS - 1) as f64;
        let ratio = f.eval(z).abs() / (a * (b * z.abs()).exp());
        if ratio > worst_ratio {
            worst_ratio = ratio;
            arg = z;
        }
    }
    let holds = worst_ratio <= 1.0 + 1e-12;
    GrowthCheck { holds, worst_ratio, witness: (!holds).then_some(arg) }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeFlags {
    #[serde(default)]
    pub convex: bool,
    #[serde(default)]
    pub nondecreasing: bool,
}

impl Default for ShapeFlags {
    fn default() -> Self {
        Self { convex: true, nondecreasing: false }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawPayoff {
    #[serde(flatten)]
    function: ScalarRecord,
    weights: Vec<f64>,
    #[serde(default)]
    flags: ShapeFlags,
    #[serde(default = "default_growth")]
    growth: [f64; 2],
}

fn default_growth() -> [f64; 2] {
    [1.0, 1.0]
}

/// `y -> f(<c, y>)` with strictly positive weights `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPayoff", into = "RawPayoff")]
pub struct PayoffSpec {
    weights: Vec<f64>,
    f: ScalarFunction,
    pub declared_convex: bool,
    pub declared_nondecreasing: bool,
    /// `(A, B)` in `|f(z)| <= A e^{B|z|}`.
    pub growth: (f64, f64),
}

impl TryFrom<RawPayoff> for PayoffSpec {
    type Error = ConvexError;

    fn try_from(raw: RawPayoff) -> Result<Self, ConvexError> {
        let mut p = PayoffSpec::new(raw.weights, ScalarFunction::try_from(raw.function)?)?;
        p.declared_convex = raw.flags.convex;
        p.declared_nondecreasing = raw.flags.nondecreasing;
        p.growth = (raw.growth[0], raw.growth[1]);
        Ok(p)
    }
}

impl From<PayoffSpec> for RawPayoff {
    fn from(p: PayoffSpec) -> Self {
        RawPayoff {
            function: ScalarRecord::from(&p.f),
            weights: p.weights,
            flags: ShapeFlags { convex: p.declared_convex, nondecreasing: p.declared_nondecreasing },
            growth: [p.growth.0, p.growth.1],
        }
    }
}

impl PayoffSpec {
    /// Payoff with flags `convex = true, nondecreasing = false` and growth
    /// `(1, 1)`; adjust the public fields as needed.
    pub fn new(weights: Vec<f64>, f: ScalarFunction) -> Result<Self, ConvexError> {
        if weights.is_empty() || weights.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(ConvexError::NonPositiveWeights(weights));
        }
        Ok(Self { weights, f, declared_convex: true, declared_nondecreasing: false, growth: (1.0, 1.0) })
    }

    pub fn with_flags(mut self, convex: bool, nondecreasing: bool) -> Self {
        self.declared_convex = convex;
        self.declared_nondecreasing = nondecreasing;
        self
    }

    pub fn with_growth(mut self, a: f64, b: f64) -> Self {
        self.growth = (a, b);
        self
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn function(&self) -> &ScalarFunction {
        &self.f
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// Same weights and flags, different data function.
    pub fn with_function(&self, f: ScalarFunction) -> Self {
        Self { f, ..self.clone() }
    }

    /// Same function and flags with weights scaled by `k > 0`.
    pub fn scaled(&self, k: f64) -> Result<Self, ConvexError> {
        let w = self.weights.iter().map(|c| c * k).collect();
        let mut p = Self::new(w, self.f.clone())?;
        p.declared_convex = self.declared_convex;
        p.declared_nondecreasing = self.declared_nondecreasing;
        p.growth = self.growth;
        Ok(p)
    }

    #[inline]
    pub fn argument(&self, y: &[f64]) -> f64 {
        numerics::dot(&self.weights, y)
    }

    /// `f(<c, y>)` without a dimension check.
    #[inline]
    pub fn eval(&self, y: &[f64]) -> f64 {
        self.f.eval(self.argument(y))
    }
}

/// `f(<c, y>)`.
pub fn eval_payoff(p: &PayoffSpec, y: &[f64]) -> Result<f64, ConvexError> {
    if y.len() != p.dim() {
        return Err(ConvexError::DimensionMismatch { expected: p.dim(), got: y.len() });
    }
    Ok(p.eval(y))
}

// Standard normal density, CDF, and the integral of the CDF
// `psi(u) = u Phi(u) + phi(u)`, so that `h psi((z-k)/h)` is the Gaussian
// smoothing of `(z - k)_+` at width `h`.
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline]
fn gauss_pdf(u: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * u * u).exp()
}

#[inline]
fn gauss_cdf(u: f64) -> f64 {
    0.5 * libm::erfc(-u * std::f64::consts::FRAC_1_SQRT_2)
}

#[inline]
fn gauss_icdf(u: f64) -> f64 {
    u * gauss_cdf(u) + gauss_pdf(u)
}

// Beyond this many widths a hinge is treated as exactly linear (below) or
// zero (above); the neglected tail is below 1e-19 of the jump.
const KERNEL_REACH: f64 = 9.0;

/// `intercept + slope z + quad z^2 + sum_j jump_j (z - knot_j)_+`.
#[derive(Debug, Clone, PartialEq)]
struct HingeExpansion {
    intercept: f64,
    slope: f64,
    quad: f64,
    knots: Vec<f64>,
    jumps: Vec<f64>,
    // Prefix sums over knots: sum of jumps, and of jump * knot.
    cum_jump: Vec<f64>,
    cum_moment: Vec<f64>,
}

impl HingeExpansion {
    fn new(intercept: f64, slope: f64, quad: f64, knots: Vec<f64>, jumps: Vec<f64>) -> Self {
        let mut cum_jump = Vec::with_capacity(knots.len() + 1);
        let mut cum_moment = Vec::with_capacity(knots.len() + 1);
        let (mut s, mut m) = (0.0, 0.0);
        cum_jump.push(0.0);
        cum_moment.push(0.0);
        for (k, j) in knots.iter().zip(&jumps) {
            s += j;
            m += j * k;
            cum_jump.push(s);
            cum_moment.push(m);
        }
        Self { intercept, slope, quad, knots, jumps, cum_jump, cum_moment }
    }

    fn from_knots(knots: &[(f64, f64)]) -> Self {
        let slopes: Vec<f64> = knots.windows(2).map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0)).collect();
        let (z0, f0) = knots[0];
        let inner: Vec<f64> = knots[1..knots.len() - 1].iter().map(|k| k.0).collect();
        let jumps: Vec<f64> = slopes.windows(2).map(|w| (w[1] - w[0]).max(0.0)).collect();
        Self::new(f0 - slopes[0] * z0, slopes[0], 0.0, inner, jumps)
    }

    /// Convex expansion of `f` on `[lo, hi]`, exact for the piecewise
    /// families, otherwise a piecewise-linear interpolant within `tol`.
    fn of(f: &ScalarFunction, lo: f64, hi: f64, tol: f64) -> Result<Self, ConvexError> {
        let exact = match f {
            ScalarFunction::Abs => Some(Self::new(0.0, -1.0, 0.0, vec![0.0], vec![2.0])),
            ScalarFunction::Power { p } if *p == 1.0 => Some(Self::new(0.0, -1.0, 0.0, vec![0.0], vec![2.0])),
            ScalarFunction::Power { p } if *p == 2.0 => Some(Self::new(0.0, 0.0, 1.0, vec![], vec![])),
            ScalarFunction::Relu => Some(Self::new(0.0, 0.0, 0.0, vec![0.0], vec![1.0])),
            ScalarFunction::Linear { slope, intercept } => Some(Self::new(*intercept, *slope, 0.0, vec![], vec![])),
            ScalarFunction::NegLinear => Some(Self::new(0.0, -1.0, 0.0, vec![], vec![])),
            ScalarFunction::Quadratic { scale } if *scale >= 0.0 => Some(Self::new(0.0, 0.0, *scale, vec![], vec![])),
            ScalarFunction::PiecewiseLinear { knots } => Some(Self::from_knots(knots)),
            ScalarFunction::Mollified(_) => {
                return Err(bad("a mollified function cannot be mollified again"));
            }
            _ => None,
        };
        if let Some(e) = exact {
            return Ok(e);
        }
        let mut segments = 64usize;
        while segments <= MAX_INTERPOLATION_KNOTS {
            let step = (hi - lo) / segments as f64;
            let pts: Vec<(f64, f64)> = (0..=segments)
                .map(|i| {
                    let z = lo + step * i as f64;
                    (z, f.eval(z))
                })
                .collect();
            let err = pts
                .windows(2)
                .flat_map(|w| {
                    [0.25, 0.5, 0.75].map(|t| {
                        let z = w[0].0 + t * step;
                        ((1.0 - t) * w[0].1 + t * w[1].1 - f.eval(z)).abs()
                    })
                })
                .fold(0.0, f64::max);
            if err <= tol {
                return Ok(Self::from_knots(&pts));
            }
            segments *= 2;
        }
        Err(ConvexError::Tuning(format!(
            "piecewise-linear interpolation needs more than {MAX_INTERPOLATION_KNOTS} knots"
        )))
    }

    /// Value and first two derivatives of the expansion convolved with a
    /// centred Gaussian of standard deviation `h`. `h = 0` returns the
    /// expansion.
    fn smoothed(&self, z: f64, h: f64) -> (f64, f64, f64) {
        let mut v = self.intercept + self.slope * z + self.quad * (z * z + h * h);
        let mut d1 = self.slope + 2.0 * self.quad * z;
        let mut d2 = 2.0 * self.quad;
        if self.knots.is_empty() {
            return (v, d1, d2);
        }
        let reach = KERNEL_REACH * h;
        let below = self.knots.partition_point(|k| *k <= z - reach);
        v += self.cum_jump[below] * z - self.cum_moment[below];
        d1 += self.cum_jump[below];
        if h > 0.0 {
            let above = self.knots.partition_point(|k| *k < z + reach);
            for j in below..above {
                let u = (z - self.knots[j]) / h;
                let s = self.jumps[j];
                v += s * h * gauss_icdf(u);
                d1 += s * gauss_cdf(u);
                d2 += s * gauss_pdf(u) / h;
            }
        }
        (v, d1, d2)
    }
}

// C-infinity smoothstep `e^{-1/t} / (e^{-1/t} + e^{-1/(1-t)})`: zero for
// t <= 0, one for t >= 1, all derivatives vanish at both ends.
#[inline]
fn smoothstep(t: f64) -> (f64, f64, f64) {
    if t <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    if t >= 1.0 {
        return (1.0, 0.0, 0.0);
    }
    let r = 1.0 - t;
    let a = (-1.0 / t).exp();
    let b = (-1.0 / r).exp();
    let a1 = a / (t * t);
    let b1 = -b / (r * r);
    let a2 = a * (1.0 - 2.0 * t) / (t * t * t * t);
    let b2 = b * (1.0 - 2.0 * r) / (r * r * r * r);
    let d = a + b;
    let num = a1 * b - a * b1;
    let num1 = a2 * b - a * b2;
    let d1 = a1 + b1;
    (a / d, num / (d * d), num1 / (d * d) - 2.0 * num * d1 / (d * d * d))
}

/// Smooth, compactly supported approximation `f^{eps,R}` of a convex `f`.
///
/// On `[-R, R]` it is within `epsilon` of `f` and strictly convex; it
/// vanishes identically outside `[-R-taper_band, R+taper_band]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MollifiedFunction {
    base: ScalarFunction,
    pub epsilon: f64,
    pub radius: f64,
    /// Standard deviation `h` of the Gaussian smoothing kernel.
    pub smoothing_width: f64,
    /// Weight `gamma` of the `cosh(z/R) - 1` bump.
    pub bump_weight: f64,
    pub taper_band: f64,
    /// Largest `|conv - f|` on the dense tuning grid over `[-R, R]`.
    pub core_error: f64,
    expansion: HingeExpansion,
}

const TUNING_POINTS: usize = 4001;

/// Largest admissible smoothing width.
pub const MAX_WIDTH: f64 = 0.25;

// Data is expanded on `[-R - band - REACH_MARGIN, R + band + REACH_MARGIN]`,
// which covers the kernel reach at the largest width.
const REACH_MARGIN: f64 = 2.5;

impl MollifiedFunction {
    /// Build with explicit smoothing width and bump weight, skipping the
    /// automatic tuning. The epsilon bound is not enforced.
    pub fn with_parameters(
        base: ScalarFunction,
        epsilon: f64,
        radius: f64,
        smoothing_width: f64,
        bump_weight: f64,
    ) -> Result<Self, ConvexError> {
        if !(epsilon > 0.0 && radius > 0.0 && smoothing_width >= 0.0 && smoothing_width <= MAX_WIDTH && bump_weight >= 0.0) {
            return Err(bad(format!(
                "need epsilon>0, radius>0, 0<=width<=1/4, bump>=0 (got {epsilon}, {radius}, {smoothing_width}, {bump_weight})"
            )));
        }
        let reach = radius + TAPER_BAND + REACH_MARGIN;
        let expansion = HingeExpansion::of(&base, -reach, reach, epsilon / 4.0)?;
        let mut m = Self {
            base,
            epsilon,
            radius,
            smoothing_width,
            bump_weight,
            taper_band: TAPER_BAND,
            core_error: 0.0,
            expansion,
        };
        m.core_error = m.convolution_error(smoothing_width);
        Ok(m)
    }

    fn tuning_grid(&self) -> Vec<f64> {
        let r = self.radius;
        let mut grid: Vec<f64> = (0..TUNING_POINTS)
            .map(|i| -r + 2.0 * r * i as f64 / (TUNING_POINTS - 1) as f64)
            .collect();
        grid.extend(self.expansion.knots.iter().filter(|k| k.abs() <= r));
        grid
    }

    fn convolution_error(&self, h: f64) -> f64 {
        self.tuning_grid()
            .into_iter()
            .map(|z| (self.expansion.smoothed(z, h).0 - self.base.eval(z)).abs())
            .fold(0.0, f64::max)
    }

    pub fn base(&self) -> &ScalarFunction {
        &self.base
    }

    /// The smoothed expansion alone, without bump or taper.
    pub fn convolution_part(&self, z: f64) -> f64 {
        self.expansion.smoothed(z, self.smoothing_width).0
    }

    /// Outer edge of the support.
    pub fn support_radius(&self) -> f64 {
        self.radius + self.taper_band
    }

    fn core(&self, z: f64) -> (f64, f64, f64) {
        let (c0, c1, c2) = self.expansion.smoothed(z, self.smoothing_width);
        let r = self.radius;
        let g = self.bump_weight;
        let (sh, ch) = ((z / r).sinh(), (z / r).cosh());
        (c0 + g * (ch - 1.0), c1 + g * sh / r, c2 + g * ch / (r * r))
    }

    /// Value, first and second derivative.
    pub fn eval_with_derivatives(&self, z: f64) -> (f64, f64, f64) {
        let a = z.abs();
        if a >= self.radius + self.taper_band {
            return (0.0, 0.0, 0.0);
        }
        let (g0, g1, g2) = self.core(z);
        if a <= self.radius {
            return (g0, g1, g2);
        }
        let band = self.taper_band;
        let (s0, s1, s2) = smoothstep((self.radius + band - a) / band);
        let sign = z.signum();
        let t1 = -sign * s1 / band;
        let t2 = s2 / (band * band);
        (s0 * g0, t1 * g0 + s0 * g1, t2 * g0 + 2.0 * t1 * g1 + s0 * g2)
    }

    pub fn eval(&self, z: f64) -> f64 {
        self.eval_with_derivatives(z).0
    }

    pub fn derivative(&self, z: f64) -> f64 {
        self.eval_with_derivatives(z).1
    }

    /// Analytic second derivative of the constructed function.
    pub fn second_derivative(&self, z: f64) -> f64 {
        self.eval_with_derivatives(z).2
    }

    /// Bump contribution to the second derivative at `z` (inside the core).
    pub fn bump_second_derivative(&self, z: f64) -> f64 {
        self.bump_weight * (z / self.radius).cosh() / (self.radius * self.radius)
    }
}

/// Second derivative of a mollified function.
pub fn second_derivative(m: &MollifiedFunction, z: f64) -> f64 {
    m.second_derivative(z)
}

/// Build `f^{eps,R}`.
///
/// The kernel width is the largest `h <= 1/4` (found by bisection) whose
/// convolution stays within `eps/2` of `f` on the core; the bump weight then
/// spends half of the remaining budget.
pub fn mollify(f: &ScalarFunction, epsilon: f64, radius: f64) -> Result<MollifiedFunction, ConvexError> {
    if !(epsilon > 0.0 && radius > 0.0) {
        return Err(bad("epsilon and radius must be positive"));
    }
    let reach = radius + TAPER_BAND + REACH_MARGIN;
    let conv = convexity_check(f, -reach, reach, 2001);
    if !conv.holds {
        return Err(ConvexError::NotConvex(conv.worst));
    }
    let mut m = MollifiedFunction::with_parameters(f.clone(), epsilon, radius, 0.0, 0.0)?;
    let target = epsilon / 2.0;
    let start = m.convolution_error(0.0);
    if start > target {
        return Err(ConvexError::Tuning(format!("interpolation error {start:e} exceeds eps/2")));
    }
    let h = if m.convolution_error(MAX_WIDTH) <= target {
        MAX_WIDTH
    } else {
        let (mut lo, mut hi) = (0.0, MAX_WIDTH);
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if m.convolution_error(mid) <= target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    if h <= 0.0 {
        return Err(ConvexError::Tuning("no positive smoothing width meets eps/2".into()));
    }
    m.smoothing_width = h;
    m.core_error = m.convolution_error(h);
    let gamma = 0.5 * (epsilon - m.core_error) / (1.0_f64.cosh() - 1.0);
    if !(gamma > 0.0) {
        return Err(ConvexError::Tuning("no room left for a strictly convex bump".into()));
    }
    m.bump_weight = gamma;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pwl_v() -> ScalarFunction {
        ScalarFunction::piecewise_linear(vec![(-1.0, 1.0), (0.0, 0.0), (1.0, 1.0)]).unwrap()
    }

    #[test]
    fn payoff_examples() {
        let p = PayoffSpec::new(vec![1.0, 1.0], ScalarFunction::Abs).unwrap();
        assert_eq!(eval_payoff(&p, &[2.0, -3.0]).unwrap(), 1.0);
        let p = PayoffSpec::new(vec![2.0, 1.0], ScalarFunction::quadratic()).unwrap();
        assert_eq!(eval_payoff(&p, &[1.0, 1.0]).unwrap(), 9.0);
        let p = PayoffSpec::new(vec![1.0], ScalarFunction::Softplus).unwrap();
        assert!((eval_payoff(&p, &[0.0]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(matches!(eval_payoff(&p, &[0.0, 1.0]), Err(ConvexError::DimensionMismatch { .. })));
    }

    #[test]
    fn weights_must_be_positive() {
        assert!(PayoffSpec::new(vec![1.0, 0.0], ScalarFunction::Abs).is_err());
        assert!(PayoffSpec::new(vec![-1.0], ScalarFunction::Abs).is_err());
        assert!(PayoffSpec::new(vec![], ScalarFunction::Abs).is_err());
    }

    #[test]
    fn softplus_is_stable_for_large_arguments() {
        assert_eq!(ScalarFunction::Softplus.eval(800.0), 800.0);
        assert!(ScalarFunction::Softplus.eval(-800.0) >= 0.0);
    }

    #[test]
    fn convexity_examples() {
        assert!(convexity_check(&ScalarFunction::Abs, -2.0, 2.0, 101).holds);
        let c = convexity_check(&ScalarFunction::NegQuadratic, -2.0, 2.0, 101);
        assert!(!c.holds && c.worst < 0.0);
        assert!(convexity_check(&pwl_v(), -2.0, 2.0, 101).holds);
    }

    #[test]
    fn monotonicity_examples() {
        assert!(monotonicity_check(&ScalarFunction::Relu, -2.0, 2.0, 101).holds);
        assert!(!monotonicity_check(&ScalarFunction::Abs, -1.0, 1.0, 101).holds);
        assert!(monotonicity_check(&ScalarFunction::linear(), -2.0, 2.0, 101).holds);
    }

    #[test]
    fn growth_examples() {
        assert!(growth_check(&ScalarFunction::Abs, 1.0, 1.0, 10.0).holds);
        assert!(growth_check(&ScalarFunction::quadratic(), 2.0, 1.0, 10.0).holds);
        let g = growth_check(&ScalarFunction::ExpScaled { scale: 1.0, rate: 2.0 }, 1.0, 1.0, 5.0);
        assert!(!g.holds);
        assert_eq!(g.witness, Some(5.0));
    }

    #[test]
    fn gaussian_antiderivatives_are_consistent() {
        assert!(gauss_icdf(-12.0).abs() < 1e-30 && (gauss_icdf(12.0) - 12.0).abs() < 1e-15);
        for &u in &[-2.5, -0.1, 0.0, 0.4, 3.0] {
            let h = 1e-5;
            assert!(((gauss_icdf(u + h) - gauss_icdf(u - h)) / (2.0 * h) - gauss_cdf(u)).abs() < 1e-9);
            assert!(((gauss_cdf(u + h) - gauss_cdf(u - h)) / (2.0 * h) - gauss_pdf(u)).abs() < 1e-9);
        }
    }

    #[test]
    fn smoothstep_matches_its_derivatives() {
        for &t in &[0.1, 0.35, 0.5, 0.8] {
            let h = 1e-5;
            let (_, d1, d2) = smoothstep(t);
            assert!(((smoothstep(t + h).0 - smoothstep(t - h).0) / (2.0 * h) - d1).abs() < 1e-8);
            assert!(((smoothstep(t + h).1 - smoothstep(t - h).1) / (2.0 * h) - d2).abs() < 1e-7);
        }
    }

    #[test]
    fn mollified_linear_only_has_bump_curvature() {
        let m = mollify(&ScalarFunction::linear(), 0.1, 2.0).unwrap();
        let d2 = second_derivative(&m, 0.0);
        assert!(d2 > 0.0);
        assert!((d2 - m.bump_second_derivative(0.0)).abs() < 1e-15);
        for i in 0..=400 {
            let z = -2.0 + 4.0 * i as f64 / 400.0;
            assert!(m.second_derivative(z) > 0.0);
            assert!((m.eval(z) - z).abs() <= 0.1);
        }
    }

    #[test]
    fn mollified_abs_meets_epsilon() {
        let m = mollify(&ScalarFunction::Abs, 0.01, 3.0).unwrap();
        let worst = (0..=60_000)
            .map(|i| -3.0 + 6.0 * i as f64 / 60_000.0)
            .map(|z| (m.eval(z) - z.abs()).abs())
            .fold(0.0, f64::max);
        assert!(worst <= 0.01, "{worst}");
        assert!(m.second_derivative(0.0) > 0.0);
    }

    #[test]
    fn mollified_quadratic_vanishes_outside_support() {
        let m = mollify(&ScalarFunction::quadratic(), 0.5, 1.0).unwrap();
        let z = m.radius + m.taper_band + 1.0;
        assert_eq!(m.eval(z), 0.0);
        assert_eq!(m.eval(-z), 0.0);
        assert_eq!(m.second_derivative(z), 0.0);
        let fd = {
            let h = 1e-4;
            (m.eval(h) - 2.0 * m.eval(0.0) + m.eval(-h)) / (h * h)
        };
        let an = second_derivative(&m, 0.0);
        assert!((an - (2.0 + m.bump_second_derivative(0.0))).abs() < 1e-12);
        assert!((fd - an).abs() < 1e-6, "{fd} vs {an}");
    }

    #[test]
    fn mollify_rejects_concave_data() {
        assert!(matches!(mollify(&ScalarFunction::NegQuadratic, 0.1, 1.0), Err(ConvexError::NotConvex(_))));
    }

    #[test]
    fn mollify_smooth_functions_by_interpolation() {
        let m = mollify(&ScalarFunction::Softplus, 0.05, 2.0).unwrap();
        for i in 0..=200 {
            let z = -2.0 + 4.0 * i as f64 / 200.0;
            assert!((m.eval(z) - ScalarFunction::Softplus.eval(z)).abs() <= 0.05);
            assert!(m.second_derivative(z) > 0.0);
        }
    }

    #[test]
    fn scalar_record_round_trip() {
        for f in [
            ScalarFunction::Abs,
            ScalarFunction::Power { p: 1.5 },
            ScalarFunction::ExpScaled { scale: 2.0, rate: 0.5 },
            pwl_v(),
            ScalarFunction::Mollified(Arc::new(mollify(&ScalarFunction::Relu, 0.1, 2.0).unwrap())),
        ] {
            let s = serde_json::to_string(&f).unwrap();
            let back: ScalarFunction = serde_json::from_str(&s).unwrap();
            assert_eq!(back, f);
        }
    }

    #[test]
    fn payoff_record_layout() {
        let src = r#"{"kind":"relu","params":[],"weights":[1.0,2.0],"flags":{"convex":true,"nondecreasing":true},"growth":[1.0,1.0]}"#;
        let p: PayoffSpec = serde_json::from_str(src).unwrap();
        assert!(p.declared_nondecreasing);
        assert_eq!(p.weights(), &[1.0, 2.0]);
        assert_eq!(serde_json::to_string(&p).unwrap(), src);
    }

    #[test]
    fn closed_form_gaussian_means() {
        let sqrt_2_pi = (2.0 / std::f64::consts::PI).sqrt();
        assert!((ScalarFunction::Abs.gaussian_mean(0.0, 1.0).unwrap() - sqrt_2_pi).abs() < 1e-15);
        assert!((ScalarFunction::quadratic().gaussian_mean(1.0, 2.0).unwrap() - 5.0).abs() < 1e-14);
        assert_eq!(ScalarFunction::Softplus.gaussian_mean(0.0, 1.0), None);
        let pwl = pwl_v();
        // V-shape with unit slopes through the origin is |z|: E|N(m, s^2)|.
        let (m, sd) = (0.3f64, 0.7f64);
        let u = m / sd;
        let phi = (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let exact = m * (1.0 - 2.0 * 0.5 * libm::erfc(u / std::f64::consts::SQRT_2)) + 2.0 * sd * phi;
        assert!((pwl.gaussian_mean(m, sd).unwrap() - exact).abs() < 1e-13);
    }
}
