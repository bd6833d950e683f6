//! Coupled Euler-Maruyama simulation of two diffusions driven by the same
//! Brownian increments, Monte Carlo estimates, and integrator probes.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::convex::PayoffSpec;
use crate::model::DiffusionModel;
use crate::{numerics, par, rng};

/// Largest fraction of paths that may be flagged non-finite.
pub const DIVERGENCE_BUDGET: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdeError {
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("models differ: {0}")]
    ModelMismatch(String),
    #[error("{flagged} of {paths} paths diverged, above the 0.01% budget")]
    Diverged { flagged: usize, paths: usize },
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    #[default]
    Euler,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimPlan {
    pub horizon: f64,
    pub steps: usize,
    pub paths: usize,
    pub seed: u64,
    #[serde(default)]
    pub scheme: Scheme,
}

impl SimPlan {
    pub fn new(horizon: f64, steps: usize, paths: usize, seed: u64) -> Result<Self, SdeError> {
        let p = Self { horizon, steps, paths, seed, scheme: Scheme::Euler };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), SdeError> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(SdeError::InvalidPlan(format!("horizon must be positive, got {}", self.horizon)));
        }
        if self.steps == 0 || self.paths == 0 {
            return Err(SdeError::InvalidPlan("steps and paths must be at least 1".into()));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }
}

/// Terminal payoff of one side of the comparison.
pub trait TerminalPayoff: Sync {
    fn dim(&self) -> usize;
    fn eval_terminal(&self, state: &[f64]) -> f64;
}

impl TerminalPayoff for PayoffSpec {
    fn dim(&self) -> usize {
        PayoffSpec::dim(self)
    }

    fn eval_terminal(&self, state: &[f64]) -> f64 {
        self.eval(state)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedSample {
    pub path: u64,
    pub payoff_x: f64,
    pub payoff_y: f64,
    /// `payoff_y - payoff_x`.
    pub diff: f64,
}

/// Samples in path order, with the indices of excluded paths.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRun {
    pub samples: Vec<PairedSample>,
    pub flagged: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MCEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub paths: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Which {
    X,
    Y,
    Diff,
}

/// Scratch space for one Euler path.
struct Stepper<'a> {
    model: &'a DiffusionModel,
    state: Vec<f64>,
    drift: Vec<f64>,
    sigma: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(model: &'a DiffusionModel) -> Self {
        let n = model.n();
        Self { model, state: model.x0().to_vec(), drift: vec![0.0; n], sigma: vec![0.0; n * n] }
    }

    #[inline]
    fn step(&mut self, dt: f64, dw: &[f64]) {
        let n = self.state.len();
        self.model.drift().eval_into(&self.state, &mut self.drift);
        self.model.dispersion().eval_into(&self.state, &mut self.sigma);
        for i in 0..n {
            let noise: f64 = (0..n).map(|j| self.sigma[i * n + j] * dw[j]).sum();
            self.state[i] += self.drift[i] * dt + noise;
        }
    }
}

/// Simulate both models on shared increments and evaluate the payoffs at the
/// horizon. Paths with a non-finite state or payoff are excluded and listed
/// in [`PairRun::flagged`].
pub fn simulate_pair(
    model_x: &DiffusionModel,
    model_y: &DiffusionModel,
    payoff_x: &dyn TerminalPayoff,
    payoff_y: &dyn TerminalPayoff,
    plan: &SimPlan,
) -> Result<PairRun, SdeError> {
    plan.validate()?;
    let n = model_x.n();
    if model_y.n() != n {
        return Err(SdeError::ModelMismatch(format!("dimensions {} and {}", n, model_y.n())));
    }
    if model_x.x0() != model_y.x0() {
        return Err(SdeError::ModelMismatch("start points differ".into()));
    }
    if payoff_x.dim() != n || payoff_y.dim() != n {
        return Err(SdeError::ModelMismatch("payoff dimension differs from model dimension".into()));
    }
    let dt = plan.dt();
    let sqrt_dt = dt.sqrt();
    let results = par::map_range(plan.paths, |p| {
        let path = p as u64;
        let mut x = Stepper::new(model_x);
        let mut y = Stepper::new(model_y);
        let mut dw = vec![0.0; n];
        for k in 0..plan.steps {
            rng::fill_standard_normals(plan.seed, path, k as u64, &mut dw);
            dw.iter_mut().for_each(|v| *v *= sqrt_dt);
            x.step(dt, &dw);
            y.step(dt, &dw);
        }
        let fx = payoff_x.eval_terminal(&x.state);
        let fy = payoff_y.eval_terminal(&y.state);
        let ok = fx.is_finite() && fy.is_finite();
        ok.then_some(PairedSample { path, payoff_x: fx, payoff_y: fy, diff: fy - fx })
    });
    let mut samples = Vec::with_capacity(results.len());
    let mut flagged = Vec::new();
    for (p, r) in results.into_iter().enumerate() {
        match r {
            Some(s) => samples.push(s),
            None => flagged.push(p as u64),
        }
    }
    if flagged.len() as f64 > DIVERGENCE_BUDGET * plan.paths as f64 {
        return Err(SdeError::Diverged { flagged: flagged.len(), paths: plan.paths });
    }
    Ok(PairRun { samples, flagged })
}

/// Mean and standard error `sample_std / sqrt(P)` of a value stream.
pub fn estimate_values(values: &[f64]) -> Result<MCEstimate, SdeError> {
    if values.len() < 2 {
        return Err(SdeError::TooFewSamples(values.len()));
    }
    let (mean, var) = numerics::mean_and_variance(values);
    Ok(MCEstimate { mean, std_error: (var / values.len() as f64).sqrt(), paths: values.len() })
}

pub fn estimate(samples: &[PairedSample], which: Which) -> Result<MCEstimate, SdeError> {
    let values: Vec<f64> = samples
        .iter()
        .map(|s| match which {
            Which::X => s.payoff_x,
            Which::Y => s.payoff_y,
            Which::Diff => s.diff,
        })
        .collect();
    estimate_values(&values)
}

/// Raw samples as little-endian `(path: u64, payoff_x: f64, payoff_y: f64)`.
pub fn write_sample_dump(samples: &[PairedSample], out: &mut impl Write) -> io::Result<()> {
    for s in samples {
        out.write_all(&s.path.to_le_bytes())?;
        out.write_all(&s.payoff_x.to_le_bytes())?;
        out.write_all(&s.payoff_y.to_le_bytes())?;
    }
    Ok(())
}

/// Inverse of [`write_sample_dump`]; `diff` is recomputed.
pub fn read_sample_dump(bytes: &[u8]) -> Option<Vec<PairedSample>> {
    if bytes.len() % 24 != 0 {
        return None;
    }
    let word = |c: &[u8]| <[u8; 8]>::try_from(c).ok();
    bytes
        .chunks_exact(24)
        .map(|r| {
            let path = u64::from_le_bytes(word(&r[..8])?);
            let payoff_x = f64::from_le_bytes(word(&r[8..16])?);
            let payoff_y = f64::from_le_bytes(word(&r[16..])?);
            Some(PairedSample { path, payoff_x, payoff_y, diff: payoff_y - payoff_x })
        })
        .collect()
}

/// One-dimensional SDEs with a closed-form solution on the driving path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProbeModel {
    /// `dX = mu dt + sigma dW`.
    ArithBm { x0: f64, mu: f64, sigma: f64 },
    /// `dX = mu X dt + sigma X dW`.
    Gbm { x0: f64, mu: f64, sigma: f64 },
}

impl ProbeModel {
    fn euler_step(&self, x: f64, dt: f64, dw: f64) -> f64 {
        match *self {
            ProbeModel::ArithBm { mu, sigma, .. } => x + mu * dt + sigma * dw,
            ProbeModel::Gbm { mu, sigma, .. } => x + mu * x * dt + sigma * x * dw,
        }
    }

    fn exact(&self, t: f64, w: f64) -> f64 {
        match *self {
            ProbeModel::ArithBm { x0, mu, sigma } => x0 + mu * t + sigma * w,
            ProbeModel::Gbm { x0, mu, sigma } => x0 * ((mu - 0.5 * sigma * sigma) * t + sigma * w).exp(),
        }
    }

    fn x0(&self) -> f64 {
        match *self {
            ProbeModel::ArithBm { x0, .. } | ProbeModel::Gbm { x0, .. } => x0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorLadder {
    pub steps: Vec<usize>,
    pub dt: Vec<f64>,
    pub errors: Vec<f64>,
    /// Regression slope of `log2(error)` on `log2(dt)`; `None` when every
    /// error is at rounding level.
    pub slope: Option<f64>,
    pub max_error: f64,
}

// Euler endpoint minus exact endpoint for each path at one ladder level.
fn endpoint_errors(model: ProbeModel, steps: usize, horizon: f64, paths: usize, seed: u64) -> Vec<f64> {
    let dt = horizon / steps as f64;
    let sqrt_dt = dt.sqrt();
    par::map_range(paths, |p| {
        let mut x = model.x0();
        let mut w = 0.0;
        for k in 0..steps {
            let dw = sqrt_dt * rng::normal_pair(seed, p as u64, k as u64, 0).0;
            x = model.euler_step(x, dt, dw);
            w += dw;
        }
        x - model.exact(horizon, w)
    })
}

fn ladder_report(steps: &[usize], horizon: f64, errors: Vec<f64>) -> ErrorLadder {
    let dt: Vec<f64> = steps.iter().map(|m| horizon / *m as f64).collect();
    let max_error = errors.iter().copied().fold(0.0, f64::max);
    let slope = (max_error > 1e-12 && errors.iter().all(|e| *e > 0.0)).then(|| {
        let lx: Vec<f64> = dt.iter().map(|v| v.log2()).collect();
        let ly: Vec<f64> = errors.iter().map(|v| v.log2()).collect();
        numerics::regression_slope(&lx, &ly)
    });
    ErrorLadder { steps: steps.to_vec(), dt, errors, slope, max_error }
}

/// Strong error `E|X_euler(T) - X(T)|` along a ladder of step counts.
pub fn strong_error_probe(model: ProbeModel, ladder: &[usize], horizon: f64, paths: usize, seed: u64) -> ErrorLadder {
    let errors = ladder
        .iter()
        .map(|&m| {
            let e: Vec<f64> = endpoint_errors(model, m, horizon, paths, seed).iter().map(|v| v.abs()).collect();
            numerics::pairwise_sum(&e) / paths as f64
        })
        .collect();
    ladder_report(ladder, horizon, errors)
}

/// Weak error `|E X_euler(T) - E X(T)|`, estimated on coupled paths as the
/// mean endpoint difference.
pub fn weak_error_probe(model: ProbeModel, ladder: &[usize], horizon: f64, paths: usize, seed: u64) -> ErrorLadder {
    let errors = ladder
        .iter()
        .map(|&m| (numerics::pairwise_sum(&endpoint_errors(model, m, horizon, paths, seed)) / paths as f64).abs())
        .collect();
    ladder_report(ladder, horizon, errors)
}
