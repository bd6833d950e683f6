//! Scenario orchestration: hypothesis checks, coupled Monte Carlo, the
//! optional finite-difference cross-check, verdicts, counterexamples and
//! suites.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::convex::{self, ConvexError, GrowthCheck, PayoffSpec, ScalarFunction, ShapeCheck};
use crate::model::{self, CoefficientField, DiffusionModel, EllipticityReport, ModelError, OrderReport};
use crate::pde::{self, GridSpec, PairSolution, PdeError, RichardsonEstimate};
use crate::sde::{self, SdeError, SimPlan, TerminalPayoff, Which};
use crate::{numerics, par, rng};

pub mod bundled;

/// Critical z-value for verdicts.
pub const Z_CRIT: f64 = 3.0;

/// z-value a multivariate candidate must reach at the confirmation stage.
pub const SEARCH_Z: f64 = 5.0;

pub const SEARCH_BUDGET: usize = 500;

const SCREEN_PATHS: usize = 10_000;
const CONFIRM_PATHS: usize = 100_000;
const SHAPE_SAMPLES: usize = 4001;
const LIPSCHITZ_PAIRS: usize = 512;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("cannot parse {what}: {msg}")]
    Parse { what: String, msg: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sde(#[from] SdeError),
    #[error(transparent)]
    Pde(#[from] PdeError),
    #[error(transparent)]
    Convex(#[from] ConvexError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Theorem {
    Driftless,
    Drifted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Holds,
    Indeterminate,
    Violated,
}

/// What the scenario author expects; counterexamples are marked `violation`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Expectation {
    #[default]
    Holds,
    Violation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MollifySpec {
    pub epsilon: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct GridConfig {
    pub radius: f64,
    pub nodes: usize,
    #[serde(default = "one")]
    pub time_steps: usize,
}

fn one() -> usize {
    1
}

/// Where the hypothesis scans sample: the ball of `radius` around the
/// origin, plus the start point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ScanConfig {
    pub radius: f64,
    pub samples: usize,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self { radius: 4.0, samples: 256 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub theorem: Theorem,
    #[serde(default)]
    pub pde_crosscheck: bool,
    #[serde(default)]
    pub expect: Expectation,
    pub model_x: DiffusionModel,
    pub model_y: DiffusionModel,
    pub payoff: PayoffSpec,
    pub plan: SimPlan,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mollify: Option<MollifySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub scan: ScanConfig,
}

impl Scenario {
    pub fn from_toml_str(src: &str) -> Result<Self, HarnessError> {
        let s: Scenario =
            toml::from_str(src).map_err(|e| HarnessError::Parse { what: "scenario".into(), msg: e.to_string() })?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes to TOML")
    }

    /// Structural checks, plus the theorem invariants for scenarios that
    /// expect the comparison to hold. Counterexamples break the invariants on
    /// purpose, so for them the breach is reported by the hypothesis scan
    /// instead.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let n = self.model_x.n();
        if self.model_y.n() != n {
            return Err(HarnessError::Invalid(format!("model dimensions {} and {}", n, self.model_y.n())));
        }
        if self.model_x.x0() != self.model_y.x0() {
            return Err(HarnessError::Invalid("models must share the start point".into()));
        }
        if self.payoff.dim() != n {
            return Err(HarnessError::Invalid(format!("payoff has {} weights for dimension {n}", self.payoff.dim())));
        }
        self.plan.validate()?;
        if self.pde_crosscheck && n > 2 {
            return Err(HarnessError::Invalid(format!("finite-difference cross-check needs dimension 1 or 2, got {n}")));
        }
        if let Some(m) = self.mollify {
            if !(m.epsilon > 0.0 && m.radius > 0.0) {
                return Err(HarnessError::Invalid("mollify needs positive epsilon and radius".into()));
            }
        }
        if !(self.scan.radius >= 0.0) || self.scan.samples == 0 {
            return Err(HarnessError::Invalid("scan needs a non-negative radius and at least one sample".into()));
        }
        if self.expect == Expectation::Holds {
            match self.theorem {
                Theorem::Driftless if !(self.model_x.is_driftless() && self.model_y.is_driftless()) => {
                    return Err(HarnessError::Invalid("driftless theorem with a nonzero drift".into()));
                }
                Theorem::Drifted if !self.payoff.declared_nondecreasing => {
                    return Err(HarnessError::Invalid("drifted theorem needs a payoff declared nondecreasing".into()));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.model_x.n()
    }

    /// The payoff actually simulated: the declared one, or its mollification.
    pub fn effective_payoff(&self) -> Result<PayoffSpec, HarnessError> {
        match self.mollify {
            None => Ok(self.payoff.clone()),
            Some(m) => {
                let f = convex::mollify(self.payoff.function(), m.epsilon, m.radius)?;
                Ok(self.payoff.with_function(ScalarFunction::Mollified(f.into())))
            }
        }
    }

    /// Grid for the cross-check; defaults to radius 8 with 257 (1D) or 129
    /// (2D) nodes per axis.
    pub fn grid_spec(&self) -> Result<GridSpec, HarnessError> {
        let n = self.dim();
        let cfg = self.grid.unwrap_or(GridConfig { radius: 8.0, nodes: if n == 1 { 257 } else { 129 }, time_steps: 1 });
        let mut g = GridSpec::new(n, cfg.radius, cfg.nodes, self.plan.horizon)?;
        g.time_steps = cfg.time_steps.max(1);
        Ok(g)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.plan.seed = seed;
        }
        if let Some(paths) = o.paths {
            self.plan.paths = paths;
        }
        if let Some(pde) = o.pde {
            self.pde_crosscheck = pde && self.dim() <= 2;
        }
    }
}

/// Command-line style overrides applied to a scenario before it runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub pde: Option<bool>,
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEntry {
    pub field: String,
    pub declared: f64,
    /// Largest sampled difference quotient; absent when it exceeded `declared`.
    pub observed: Option<f64>,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayoffChecks {
    /// Checks run on `[-range, range]` of the payoff argument.
    pub range: f64,
    pub convex: ShapeCheck,
    pub nondecreasing: ShapeCheck,
    pub growth: GrowthCheck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub order: OrderReport,
    pub ellipticity_x: EllipticityReport,
    pub ellipticity_y: EllipticityReport,
    pub lipschitz: Vec<LipschitzEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payoff: Option<PayoffChecks>,
    /// Hypotheses of the claimed theorem that failed.
    pub unmet: Vec<String>,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdeCrossCheck {
    pub grid: GridSpec,
    pub value_x: RichardsonEstimate,
    pub value_y: RichardsonEstimate,
    pub delta: RichardsonEstimate,
    pub delta_field_min: f64,
    pub delta_field_tol: f64,
    /// `|PDE - MC|` for each side.
    pub gap_x: f64,
    pub gap_y: f64,
    pub gap_delta: f64,
    /// Both means agree within `4 SE + tol`.
    pub consistent: bool,
    /// Core minimum of the delta field is at least `-delta_field_tol`.
    pub delta_field_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub name: String,
    pub theorem: Theorem,
    pub expect: Expectation,
    pub mean_x: f64,
    pub mean_y: f64,
    pub se_x: f64,
    pub se_y: f64,
    pub delta: f64,
    pub se_delta: f64,
    /// `delta / se_delta`; absent when `se_delta = 0`.
    pub z_score: Option<f64>,
    pub verdict: Verdict,
    /// The theorem's hypotheses were all verified.
    pub certified: bool,
    pub annotations: Vec<String>,
    pub hypotheses: HypothesisReport,
    pub pde_delta: Option<f64>,
    pub pde: Option<PdeCrossCheck>,
    pub paths: usize,
    pub flagged: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mollified: Option<MollifySpec>,
    /// Wall-clock seconds; not serialized so reports stay reproducible.
    #[serde(skip)]
    pub runtime: f64,
}

impl ComparisonReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(src: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(src).map_err(|e| HarnessError::Parse { what: "report".into(), msg: e.to_string() })
    }
}

/// `holds` iff `delta >= -Z_CRIT se` with hypotheses ok, `violated` iff
/// `delta < -Z_CRIT se`, otherwise `indeterminate`.
pub fn verdict(delta: f64, se: f64, hypotheses_ok: bool) -> Verdict {
    if delta < -Z_CRIT * se {
        Verdict::Violated
    } else if hypotheses_ok {
        Verdict::Holds
    } else {
        Verdict::Indeterminate
    }
}

pub fn z_score(delta: f64, se: f64) -> Option<f64> {
    (se > 0.0).then(|| delta / se)
}

struct Clock(#[cfg(not(target_arch = "wasm32"))] std::time::Instant);

impl Clock {
    fn start() -> Self {
        Clock(
            #[cfg(not(target_arch = "wasm32"))]
            std::time::Instant::now(),
        )
    }

    fn seconds(&self) -> f64 {
        #[cfg(not(target_arch = "wasm32"))]
        return self.0.elapsed().as_secs_f64();
        #[cfg(target_arch = "wasm32")]
        return 0.0;
    }
}

fn coefficient_scans(
    mx: &DiffusionModel,
    my: &DiffusionModel,
    theorem: Theorem,
    scan: ScanConfig,
    seed: u64,
) -> Result<HypothesisReport, HarnessError> {
    let order = model::order_scan(mx, my, scan.radius, scan.samples, rng::derive_seed(seed, 1))?;
    let ellipticity_x = model::ellipticity_scan(mx, scan.radius, scan.samples, rng::derive_seed(seed, 2))?;
    let ellipticity_y = model::ellipticity_scan(my, scan.radius, scan.samples, rng::derive_seed(seed, 2))?;
    let mut unmet = Vec::new();
    if !order.diffusion_order_ok {
        unmet.push("diffusion-order".to_string());
    }
    match theorem {
        Theorem::Driftless => {
            if !(mx.is_driftless() && my.is_driftless()) {
                unmet.push("nonzero-drift".into());
            }
        }
        Theorem::Drifted => {
            if !order.drift_order_ok {
                unmet.push("drift-order".into());
            }
        }
    }
    let fields = [
        ("x.drift", mx.drift()),
        ("x.dispersion", mx.dispersion()),
        ("y.drift", my.drift()),
        ("y.dispersion", my.dispersion()),
    ];
    let mut lipschitz = Vec::new();
    for (k, (name, field)) in fields.into_iter().enumerate() {
        let probe = model::lipschitz_probe(
            field,
            scan.radius.max(1.0),
            LIPSCHITZ_PAIRS,
            rng::derive_seed(seed, 16 + k as u64),
        );
        let bound = field.bound();
        if probe.is_err() {
            unmet.push(format!("lipschitz:{name}"));
        }
        if !bound.is_finite() {
            unmet.push(format!("unbounded:{name}"));
        }
        lipschitz.push(LipschitzEntry {
            field: name.into(),
            declared: field.lipschitz_constant(),
            observed: probe.ok(),
            bound,
        });
    }
    Ok(HypothesisReport { order, ellipticity_x, ellipticity_y, lipschitz, payoff: None, unmet, ok: false })
}

fn payoff_checks(payoff: &PayoffSpec, x0: &[f64], theorem: Theorem, scan: ScanConfig, unmet: &mut Vec<String>) -> PayoffChecks {
    let c = payoff.weights();
    let range = numerics::dot(c, x0).abs() + c.iter().sum::<f64>() * scan.radius.max(1.0);
    let f = payoff.function();
    let convex = convex::convexity_check(f, -range, range, SHAPE_SAMPLES);
    let nondecreasing = convex::monotonicity_check(f, -range, range, SHAPE_SAMPLES);
    let growth = convex::growth_check(f, payoff.growth.0, payoff.growth.1, range);
    if !payoff.declared_convex {
        unmet.push("payoff-not-declared-convex".into());
    } else if !convex.holds {
        unmet.push("payoff-not-convex".into());
    }
    if theorem == Theorem::Drifted {
        if !payoff.declared_nondecreasing {
            unmet.push("payoff-not-declared-nondecreasing".into());
        } else if !nondecreasing.holds {
            unmet.push("payoff-not-nondecreasing".into());
        }
    }
    if !growth.holds {
        unmet.push("payoff-growth".into());
    }
    PayoffChecks { range, convex, nondecreasing, growth }
}

struct McResult {
    mean_x: f64,
    mean_y: f64,
    se_x: f64,
    se_y: f64,
    delta: f64,
    se_delta: f64,
    paths: usize,
    flagged: usize,
}

fn coupled_mc(
    mx: &DiffusionModel,
    my: &DiffusionModel,
    payoff: &dyn TerminalPayoff,
    plan: &SimPlan,
) -> Result<McResult, HarnessError> {
    let run = sde::simulate_pair(mx, my, payoff, payoff, plan)?;
    let ex = sde::estimate(&run.samples, Which::X)?;
    let ey = sde::estimate(&run.samples, Which::Y)?;
    let ed = sde::estimate(&run.samples, Which::Diff)?;
    Ok(McResult {
        mean_x: ex.mean,
        mean_y: ey.mean,
        se_x: ex.std_error,
        se_y: ey.std_error,
        delta: ed.mean,
        se_delta: ed.std_error,
        paths: ed.paths,
        flagged: run.flagged.len(),
    })
}

fn assemble(
    name: &str,
    theorem: Theorem,
    expect: Expectation,
    mc: McResult,
    mut hypotheses: HypothesisReport,
    pde: Option<PdeCrossCheck>,
    mut annotations: Vec<String>,
) -> ComparisonReport {
    hypotheses.ok = hypotheses.unmet.is_empty();
    let verdict = verdict(mc.delta, mc.se_delta, hypotheses.ok);
    if !hypotheses.ok {
        annotations.insert(0, "hypotheses-unmet".into());
    }
    if let Some(p) = &pde {
        if !p.consistent {
            annotations.push("pde-mc-mismatch".into());
        }
        if !p.delta_field_ok {
            annotations.push("pde-delta-field-negative".into());
        }
    }
    ComparisonReport {
        name: name.into(),
        theorem,
        expect,
        mean_x: mc.mean_x,
        mean_y: mc.mean_y,
        se_x: mc.se_x,
        se_y: mc.se_y,
        delta: mc.delta,
        se_delta: mc.se_delta,
        z_score: z_score(mc.delta, mc.se_delta),
        verdict,
        certified: hypotheses.ok,
        annotations,
        hypotheses,
        pde_delta: pde.as_ref().map(|p| p.delta.fine),
        pde,
        paths: mc.paths,
        flagged: mc.flagged,
        mollified: None,
        runtime: 0.0,
    }
}

fn cross_check(s: &Scenario, payoff: &PayoffSpec, mc: &McResult) -> Result<(PdeCrossCheck, PairSolution), HarnessError> {
    let grid = s.grid_spec()?;
    let sol = pde::solve_pair(&s.model_x, &s.model_y, payoff, &grid, s.model_x.x0())?;
    let gap_x = (sol.value_x.fine - mc.mean_x).abs();
    let gap_y = (sol.value_y.fine - mc.mean_y).abs();
    let consistent = gap_x <= 4.0 * mc.se_x + sol.value_x.tol && gap_y <= 4.0 * mc.se_y + sol.value_y.tol;
    let check = PdeCrossCheck {
        grid,
        value_x: sol.value_x,
        value_y: sol.value_y,
        delta: sol.delta,
        delta_field_min: sol.delta_field.min_value,
        delta_field_tol: sol.delta_field_tol,
        gap_x,
        gap_y,
        gap_delta: (sol.delta.fine - mc.delta).abs(),
        consistent,
        delta_field_ok: sol.delta_field.min_value >= -sol.delta_field_tol,
    };
    Ok((check, sol))
}

pub fn run_scenario(s: &Scenario) -> Result<ComparisonReport, HarnessError> {
    run_scenario_with(s, &Overrides::default())
}

/// Runs the full pipeline. Hypothesis failures are recorded in the report
/// and suppress the `holds` verdict; they do not abort the run.
pub fn run_scenario_with(s: &Scenario, o: &Overrides) -> Result<ComparisonReport, HarnessError> {
    run_scenario_artifacts(s, o).map(|(r, _)| r)
}

/// [`run_scenario_with`], also returning the finite-difference solutions
/// when the cross-check ran.
pub fn run_scenario_artifacts(
    s: &Scenario,
    o: &Overrides,
) -> Result<(ComparisonReport, Option<PairSolution>), HarnessError> {
    let mut s = s.clone();
    s.apply(o);
    s.validate()?;
    par::with_threads(o.threads, || run_resolved(&s))
}

fn run_resolved(s: &Scenario) -> Result<(ComparisonReport, Option<PairSolution>), HarnessError> {
    let clock = Clock::start();
    let payoff = s.effective_payoff()?;
    let mut hyp = coefficient_scans(&s.model_x, &s.model_y, s.theorem, s.scan, s.plan.seed)?;
    let checks = payoff_checks(&payoff, s.model_x.x0(), s.theorem, s.scan, &mut hyp.unmet);
    hyp.payoff = Some(checks);
    let mc = coupled_mc(&s.model_x, &s.model_y, &payoff, &s.plan)?;
    let mut annotations = Vec::new();
    let (pde, solution) = if s.pde_crosscheck {
        match cross_check(s, &payoff, &mc) {
            Ok((p, sol)) => (Some(p), Some(sol)),
            Err(e) => {
                annotations.push(format!("pde-skipped: {e}"));
                (None, None)
            }
        }
    } else {
        (None, None)
    };
    let mut report = assemble(&s.name, s.theorem, s.expect, mc, hyp, pde, annotations);
    report.mollified = s.mollify;
    report.runtime = clock.seconds();
    Ok((report, solution))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CounterexampleKind {
    Nonconvex,
    NonmonotoneDrift,
    MultivariatePayoff,
}

impl CounterexampleKind {
    pub const ALL: [CounterexampleKind; 3] =
        [CounterexampleKind::Nonconvex, CounterexampleKind::NonmonotoneDrift, CounterexampleKind::MultivariatePayoff];

    pub fn name(self) -> &'static str {
        match self {
            CounterexampleKind::Nonconvex => "nonconvex",
            CounterexampleKind::NonmonotoneDrift => "nonmonotone-drift",
            CounterexampleKind::MultivariatePayoff => "multivariate-payoff",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

/// `y -> y^T Q y + max_k (<a_k, y> + b_k)` on `R^2`; convex for `Q >= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadMaxPayoff {
    /// `[q11, q12, q22]`.
    pub quad: [f64; 3],
    /// Rows `[a1, a2, b]`; empty means no max term.
    pub pieces: Vec<[f64; 3]>,
}

impl QuadMaxPayoff {
    pub fn eval(&self, y: &[f64]) -> f64 {
        let [q11, q12, q22] = self.quad;
        let q = q11 * y[0] * y[0] + 2.0 * q12 * y[0] * y[1] + q22 * y[1] * y[1];
        let m = self.pieces.iter().map(|p| p[0] * y[0] + p[1] * y[1] + p[2]).fold(f64::NEG_INFINITY, f64::max);
        if self.pieces.is_empty() {
            q
        } else {
            q + m
        }
    }

    pub fn is_convex(&self) -> bool {
        let [q11, q12, q22] = self.quad;
        q11 >= 0.0 && q22 >= 0.0 && q11 * q22 - q12 * q12 >= -1e-12
    }
}

impl TerminalPayoff for QuadMaxPayoff {
    fn dim(&self) -> usize {
        2
    }

    fn eval_terminal(&self, state: &[f64]) -> f64 {
        self.eval(state)
    }
}

/// One candidate of the multivariate search: diagonal dispersions
/// `diag(s1, base + amp sin(w x1 + phase))` for X and the same with `s1 +
/// extra` for Y, so `rho rho^T - sigma sigma^T = diag(extra^2 + 2 s1 extra,
/// 0)` everywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultivariateCandidate {
    pub index: usize,
    pub s1: f64,
    pub extra: f64,
    pub base: f64,
    pub amp: f64,
    pub w: f64,
    pub phase: f64,
    pub payoff: QuadMaxPayoff,
    pub plan: SimPlan,
    pub screen_z: Option<f64>,
}

impl MultivariateCandidate {
    pub fn models(&self) -> Result<(DiffusionModel, DiffusionModel), HarnessError> {
        let field = |s1: f64| {
            CoefficientField::trig_perturbed(
                2,
                &[s1, 0.0, 0.0, self.base],
                &[0.0, 0.0, 0.0, self.amp],
                &[self.w, 0.0],
                self.phase,
            )
        };
        let mx = DiffusionModel::new(vec![0.0, 0.0], CoefficientField::zero_drift(2), field(self.s1)?)?;
        let my = DiffusionModel::new(vec![0.0, 0.0], CoefficientField::zero_drift(2), field(self.s1 + self.extra)?)?;
        Ok((mx, my))
    }

    fn draw(index: usize, seed: u64, plan: SimPlan) -> Self {
        let u = |k: u64| rng::uniform(seed, 0x5EA2C4, index as u64 * 32 + k);
        let span = |k: u64, lo: f64, hi: f64| lo + (hi - lo) * u(k);
        let base = span(2, 0.6, 1.4);
        let (l11, l21, l22) = (span(6, -1.0, 1.0), span(7, -1.0, 1.0), span(8, 0.2, 1.2));
        let pieces = (0..(u(9) * 4.0) as u64)
            .map(|j| [span(10 + 3 * j, -1.0, 1.0), span(11 + 3 * j, -1.0, 1.0), span(12 + 3 * j, -0.5, 0.5)])
            .collect();
        MultivariateCandidate {
            index,
            s1: span(0, 0.0, 0.3),
            extra: span(1, 0.5, 1.5),
            base,
            amp: base * span(3, 0.2, 0.9),
            w: span(4, 0.5, 3.0),
            phase: span(5, 0.0, std::f64::consts::TAU),
            // Q = L L^T with L lower triangular.
            payoff: QuadMaxPayoff { quad: [l11 * l11, l11 * l21, l21 * l21 + l22 * l22], pieces },
            plan,
            screen_z: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleOutcome {
    pub kind: CounterexampleKind,
    pub found: bool,
    pub candidates_tried: usize,
    pub report: ComparisonReport,
    /// Scenario that produced the report, as data.
    pub scenario: serde_json::Value,
}

fn scalar_counterexample(kind: CounterexampleKind) -> Scenario {
    let plan = SimPlan::new(1.0, 1, CONFIRM_PATHS, 0xC0FFEE).expect("valid plan");
    let (theorem, model_y, payoff) = match kind {
        CounterexampleKind::Nonconvex => (
            Theorem::Driftless,
            DiffusionModel::brownian(vec![0.0], std::f64::consts::SQRT_2),
            PayoffSpec::new(vec![1.0], ScalarFunction::NegQuadratic).expect("payoff").with_flags(false, false),
        ),
        _ => (
            Theorem::Drifted,
            DiffusionModel::brownian(vec![0.0], 1.0)
                .with_drift(CoefficientField::constant_drift(&[1.0]))
                .expect("drift"),
            PayoffSpec::new(vec![1.0], ScalarFunction::NegLinear).expect("payoff").with_flags(true, false),
        ),
    };
    Scenario {
        name: kind.name().into(),
        description: String::new(),
        theorem,
        pde_crosscheck: false,
        expect: Expectation::Violation,
        model_x: DiffusionModel::brownian(vec![0.0], 1.0),
        model_y,
        payoff,
        plan,
        mollify: None,
        grid: None,
        scan: ScanConfig::default(),
    }
}

pub fn run_counterexample(kind: CounterexampleKind) -> Result<CounterexampleOutcome, HarnessError> {
    run_counterexample_with(kind, &Overrides::default(), SEARCH_BUDGET)
}

/// Counterexample demonstrations. The multivariate kind searches up to
/// `budget` random candidates: each is screened at 10^4 paths and, if
/// `z < -Z_CRIT`, re-run at 10^5 paths on fresh increments, where it must
/// reach `z <= -SEARCH_Z`.
pub fn run_counterexample_with(
    kind: CounterexampleKind,
    o: &Overrides,
    budget: usize,
) -> Result<CounterexampleOutcome, HarnessError> {
    if kind != CounterexampleKind::MultivariatePayoff {
        let mut s = scalar_counterexample(kind);
        s.apply(&Overrides { pde: None, ..*o });
        let (report, _) = par::with_threads(o.threads, || run_resolved(&s))?;
        return Ok(CounterexampleOutcome {
            kind,
            found: report.verdict == Verdict::Violated,
            candidates_tried: 1,
            report,
            scenario: serde_json::to_value(&s).expect("scenario serializes"),
        });
    }
    par::with_threads(o.threads, || search_multivariate(o.seed.unwrap_or(0x5EA2C4), budget))
}

fn search_multivariate(seed: u64, budget: usize) -> Result<CounterexampleOutcome, HarnessError> {
    let clock = Clock::start();
    let screen_plan = SimPlan::new(1.0, 32, SCREEN_PATHS, rng::derive_seed(seed, 1))?;
    let confirm_plan = SimPlan::new(1.0, 32, CONFIRM_PATHS, rng::derive_seed(seed, 2))?;
    let mut best: Option<(f64, MultivariateCandidate)> = None;
    let mut tried = 0;
    for index in 0..budget {
        tried = index + 1;
        let mut cand = MultivariateCandidate::draw(index, seed, screen_plan.clone());
        let (mx, my) = cand.models()?;
        let screen = coupled_mc(&mx, &my, &cand.payoff, &screen_plan)?;
        let z = z_score(screen.delta, screen.se_delta).unwrap_or(0.0);
        cand.screen_z = Some(z);
        if best.as_ref().map_or(true, |(bz, _)| z < *bz) {
            best = Some((z, cand.clone()));
        }
        if z < -Z_CRIT {
            cand.plan = confirm_plan.clone();
            let confirm = coupled_mc(&mx, &my, &cand.payoff, &confirm_plan)?;
            if z_score(confirm.delta, confirm.se_delta).is_some_and(|z| z <= -SEARCH_Z) {
                let report = multivariate_report(&cand, &mx, &my, confirm, &clock)?;
                return Ok(CounterexampleOutcome {
                    kind: CounterexampleKind::MultivariatePayoff,
                    found: true,
                    candidates_tried: tried,
                    report,
                    scenario: serde_json::to_value(&cand).expect("candidate serializes"),
                });
            }
        }
    }
    // Not found: report the most negative screened candidate.
    let (_, mut cand) = best.ok_or_else(|| HarnessError::Invalid("search budget must be positive".into()))?;
    let (mx, my) = cand.models()?;
    cand.plan = confirm_plan.clone();
    let confirm = coupled_mc(&mx, &my, &cand.payoff, &confirm_plan)?;
    let mut report = multivariate_report(&cand, &mx, &my, confirm, &clock)?;
    report.annotations.push("search-not-found".into());
    Ok(CounterexampleOutcome {
        kind: CounterexampleKind::MultivariatePayoff,
        found: false,
        candidates_tried: tried,
        report,
        scenario: serde_json::to_value(&cand).expect("candidate serializes"),
    })
}

fn multivariate_report(
    cand: &MultivariateCandidate,
    mx: &DiffusionModel,
    my: &DiffusionModel,
    mc: McResult,
    clock: &Clock,
) -> Result<ComparisonReport, HarnessError> {
    let mut hyp = coefficient_scans(mx, my, Theorem::Driftless, ScanConfig::default(), cand.plan.seed)?;
    // The theorem only covers payoffs of the form f(<c, y>).
    hyp.unmet.push("multivariate-payoff".into());
    if !cand.payoff.is_convex() {
        hyp.unmet.push("payoff-not-convex".into());
    }
    let mut report = assemble(
        CounterexampleKind::MultivariatePayoff.name(),
        Theorem::Driftless,
        Expectation::Violation,
        mc,
        hyp,
        None,
        Vec::new(),
    );
    report.runtime = clock.seconds();
    Ok(report)
}

/// Suite file: scenario names or paths, and counterexample kinds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct SuiteSpec {
    pub name: String,
    #[serde(default)]
    pub scenarios: Vec<String>,
    #[serde(default)]
    pub counterexamples: Vec<String>,
}

impl SuiteSpec {
    pub fn from_toml_str(src: &str) -> Result<Self, HarnessError> {
        toml::from_str(src).map_err(|e| HarnessError::Parse { what: "suite".into(), msg: e.to_string() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteRow {
    pub name: String,
    pub delta: f64,
    pub se: f64,
    pub z: Option<f64>,
    pub verdict: Verdict,
    pub certified: bool,
    pub expect: Expectation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub found: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub name: String,
    pub rows: Vec<SuiteRow>,
    pub holds: usize,
    pub indeterminate: usize,
    pub violated: usize,
    /// Violations among scenarios whose hypotheses were all verified.
    pub certified_violations: usize,
}

impl SuiteSummary {
    fn from_reports(name: &str, reports: &[ComparisonReport], found: &[Option<bool>]) -> Self {
        let rows: Vec<SuiteRow> = reports
            .iter()
            .zip(found)
            .map(|(r, f)| SuiteRow {
                name: r.name.clone(),
                delta: r.delta,
                se: r.se_delta,
                z: r.z_score,
                verdict: r.verdict,
                certified: r.certified,
                expect: r.expect,
                found: *f,
            })
            .collect();
        let count = |v: Verdict| rows.iter().filter(|r| r.verdict == v).count();
        SuiteSummary {
            name: name.into(),
            holds: count(Verdict::Holds),
            indeterminate: count(Verdict::Indeterminate),
            violated: count(Verdict::Violated),
            certified_violations: rows.iter().filter(|r| r.certified && r.verdict == Verdict::Violated).count(),
            rows,
        }
    }

    pub fn exit_code(&self) -> i32 {
        i32::from(self.certified_violations > 0)
    }

    /// `name,delta,se,z,verdict`; an absent z-score is an empty field.
    pub fn to_csv(&self) -> String {
        // Shortest round-trip representation, exponent form for extremes.
        let num = |x: f64| serde_json::to_string(&x).expect("finite number");
        let mut out = String::from("name,delta,se,z,verdict\n");
        for r in &self.rows {
            let z = r.z.map(num).unwrap_or_default();
            let v = serde_json::to_value(r.verdict).expect("verdict serializes");
            out.push_str(&format!("{},{},{},{},{}\n", r.name, num(r.delta), num(r.se), z, v.as_str().unwrap_or_default()));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteRun {
    pub summary: SuiteSummary,
    pub reports: Vec<ComparisonReport>,
    pub outcomes: Vec<CounterexampleOutcome>,
}

fn read_text(path: &Path) -> Option<String> {
    std::fs::read_to_string(path).ok()
}

fn stem(reference: &str) -> &str {
    let base = reference.rsplit(['/', '\\']).next().unwrap_or(reference);
    base.strip_suffix(".toml").unwrap_or(base)
}

/// Scenario from a file path (`.toml` optional), falling back to the
/// bundled scenario with the same base name.
pub fn load_scenario(reference: &str) -> Result<Scenario, HarnessError> {
    load_scenario_near(reference, None)
}

/// [`load_scenario`], also trying `dir` and `dir/../scenarios` (the layout
/// of suite files next to a scenarios directory).
pub fn load_scenario_near(reference: &str, dir: Option<&Path>) -> Result<Scenario, HarnessError> {
    let mut candidates: Vec<PathBuf> = vec![PathBuf::from(reference), PathBuf::from(format!("{reference}.toml"))];
    if let Some(d) = dir {
        for sub in [d.to_path_buf(), d.join("..").join("scenarios")] {
            candidates.push(sub.join(reference));
            candidates.push(sub.join(format!("{reference}.toml")));
        }
    }
    if let Some(src) = candidates.iter().filter(|p| p.is_file()).find_map(|p| read_text(p)) {
        return Scenario::from_toml_str(&src);
    }
    match bundled::scenario(stem(reference)) {
        Some(src) => Scenario::from_toml_str(src),
        None => Err(HarnessError::Io(format!("no scenario file or bundled scenario named {reference:?}"))),
    }
}

/// Suite from a file path (`.toml` optional), falling back to the bundled
/// suite with the same base name. Returns the spec and the directory used to
/// resolve relative scenario names.
pub fn load_suite(reference: &str) -> Result<(SuiteSpec, Option<PathBuf>), HarnessError> {
    for p in [PathBuf::from(reference), PathBuf::from(format!("{reference}.toml"))] {
        if p.is_file() {
            let src = read_text(&p).ok_or_else(|| HarnessError::Io(format!("cannot read {}", p.display())))?;
            return Ok((SuiteSpec::from_toml_str(&src)?, p.parent().map(Path::to_path_buf)));
        }
    }
    match bundled::suite(stem(reference)) {
        Some(src) => Ok((SuiteSpec::from_toml_str(src)?, None)),
        None => Err(HarnessError::Io(format!("no suite file or bundled suite named {reference:?}"))),
    }
}

pub fn run_suite(reference: &str, o: &Overrides) -> Result<SuiteRun, HarnessError> {
    let (spec, dir) = load_suite(reference)?;
    run_suite_spec(&spec, dir.as_deref(), o)
}

/// Runs scenarios in listed order (each one internally parallel), then the
/// counterexamples.
pub fn run_suite_spec(spec: &SuiteSpec, dir: Option<&Path>, o: &Overrides) -> Result<SuiteRun, HarnessError> {
    let scenarios: Vec<Scenario> =
        spec.scenarios.iter().map(|r| load_scenario_near(r, dir)).collect::<Result<_, _>>()?;
    let kinds: Vec<CounterexampleKind> = spec
        .counterexamples
        .iter()
        .map(|k| {
            CounterexampleKind::parse(k)
                .ok_or_else(|| HarnessError::Parse { what: "suite".into(), msg: format!("unknown counterexample {k:?}") })
        })
        .collect::<Result<_, _>>()?;
    let mut reports = Vec::new();
    let mut found = Vec::new();
    for s in &scenarios {
        reports.push(run_scenario_with(s, o)?);
        found.push(None);
    }
    let mut outcomes = Vec::new();
    for k in kinds {
        let out = run_counterexample_with(k, o, SEARCH_BUDGET)?;
        reports.push(out.report.clone());
        found.push(Some(out.found));
        outcomes.push(out);
    }
    Ok(SuiteRun { summary: SuiteSummary::from_reports(&spec.name, &reports, &found), reports, outcomes })
}
