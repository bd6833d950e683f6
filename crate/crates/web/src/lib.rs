//! wasm-bindgen entry points for the static demo page in `www/`.
//!
//! Every function returns a JSON string, or an error message the page shows
//! as-is.

use diffcomp::acceptance::mollifier_functions;
use diffcomp::convex::{mollify, ScalarFunction};
use diffcomp::harness::{self, bundled, Overrides, Scenario};
use diffcomp::pde::{probe_value, solve_backward};
use serde_json::json;
use wasm_bindgen::prelude::*;

/// Browser runs are single threaded; keep them short.
pub const MAX_PATHS: u32 = 200_000;
const CURVE_POINTS: usize = 400;
const SLICE_POINTS: usize = 161;

fn demo_function(name: &str) -> Result<ScalarFunction, String> {
    Ok(match name {
        "abs" => ScalarFunction::Abs,
        "relu" => ScalarFunction::Relu,
        "quadratic" => ScalarFunction::quadratic(),
        "softplus" => ScalarFunction::Softplus,
        "pwl" => mollifier_functions().remove(2),
        _ => return Err(format!("unknown function {name:?}")),
    })
}

/// Names of the bundled scenarios, as a JSON array.
#[wasm_bindgen]
pub fn scenario_names() -> String {
    json!(bundled::scenario_names().collect::<Vec<_>>()).to_string()
}

/// TOML source of a bundled scenario.
#[wasm_bindgen]
pub fn scenario_source(name: &str) -> Result<String, String> {
    bundled::scenario(name).map(str::to_owned).ok_or_else(|| format!("no bundled scenario {name:?}"))
}

/// Sampled curve of `f`, its mollification and the mollified second
/// derivative.
#[wasm_bindgen]
pub fn mollify_curve(function: &str, epsilon: f64, radius: f64) -> Result<String, String> {
    let f = demo_function(function)?;
    let m = mollify(&f, epsilon, radius).map_err(|e| e.to_string())?;
    let reach = m.support_radius() + 1.0;
    let (mut z, mut base, mut smooth, mut d2) = (vec![], vec![], vec![], vec![]);
    let mut worst = 0.0_f64;
    for i in 0..=CURVE_POINTS {
        let x = -reach + 2.0 * reach * i as f64 / CURVE_POINTS as f64;
        let (v, _, dd) = m.eval_with_derivatives(x);
        if x.abs() <= radius {
            worst = worst.max((v - f.eval(x)).abs());
        }
        z.push(x);
        base.push(f.eval(x));
        smooth.push(v);
        d2.push(dd);
    }
    Ok(json!({
        "z": z,
        "f": base,
        "mollified": smooth,
        "second_derivative": d2,
        "smoothing_width": m.smoothing_width,
        "sampled_error": worst,
    })
    .to_string())
}

fn parse(toml: &str) -> Result<Scenario, String> {
    let s = Scenario::from_toml_str(toml).map_err(|e| e.to_string())?;
    s.validate().map_err(|e| e.to_string())?;
    Ok(s)
}

/// Coupled Monte Carlo comparison of the scenario in `toml`, without the PDE
/// cross-check. Returns the report JSON.
#[wasm_bindgen]
pub fn run_comparison(toml: &str, paths: u32, seed: u32) -> Result<String, String> {
    if paths == 0 || paths > MAX_PATHS {
        return Err(format!("paths must be in 1..={MAX_PATHS}"));
    }
    let s = parse(toml)?;
    let o = Overrides { seed: Some(seed.into()), paths: Some(paths as usize), pde: Some(false), threads: None };
    harness::run_scenario_with(&s, &o).map(|r| r.to_json()).map_err(|e| e.to_string())
}

/// Backward-Kolmogorov values of both models at the horizon, sampled along
/// the first coordinate axis through the initial point.
#[wasm_bindgen]
pub fn pde_slice(toml: &str) -> Result<String, String> {
    let s = parse(toml)?;
    if s.dim() > 2 {
        return Err(format!("the PDE solver handles one or two dimensions, not {}", s.dim()));
    }
    let grid = s.grid_spec().map_err(|e| e.to_string())?;
    let payoff = s.effective_payoff().map_err(|e| e.to_string())?;
    let fx = solve_backward(&s.model_x, &payoff, &grid).map_err(|e| e.to_string())?;
    let fy = solve_backward(&s.model_y, &payoff, &grid).map_err(|e| e.to_string())?;
    let x0 = s.model_x.x0().to_vec();
    let half = 0.5 * grid.radius;
    let (mut xs, mut vx, mut vy, mut delta) = (vec![], vec![], vec![], vec![]);
    for i in 0..SLICE_POINTS {
        let mut p = x0.clone();
        p[0] = -half + 2.0 * half * i as f64 / (SLICE_POINTS - 1) as f64;
        let a = probe_value(&fx, &p).map_err(|e| e.to_string())?;
        let b = probe_value(&fy, &p).map_err(|e| e.to_string())?;
        xs.push(p[0]);
        vx.push(a);
        vy.push(b);
        delta.push(b - a);
    }
    let at = |f| probe_value(f, &x0).map_err(|e| e.to_string());
    Ok(json!({
        "x": xs,
        "value_x": vx,
        "value_y": vy,
        "delta": delta,
        "at_x0": { "value_x": at(&fx)?, "value_y": at(&fy)? },
        "min_delta": delta.iter().copied().fold(f64::INFINITY, f64::min),
    })
    .to_string())
}
