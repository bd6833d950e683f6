use std::f64::consts::SQRT_2;

use diffcomp::convex::{mollify, PayoffSpec, ScalarFunction};
use diffcomp::model::{CoefficientField, DiffusionModel};
use diffcomp::par;
use diffcomp::pde::*;
use statrs::distribution::{ContinuousCDF, Normal};

fn grid(dim: usize, radius: f64, nodes: usize, horizon: f64) -> GridSpec {
    GridSpec::new(dim, radius, nodes, horizon).unwrap()
}

#[test]
fn quadratic_heat_solution_1d() {
    let m = DiffusionModel::brownian(vec![0.0], 1.0);
    let p = PayoffSpec::new(vec![1.0], ScalarFunction::quadratic()).unwrap();
    let f = solve_backward(&m, &p, &grid(1, 8.0, 256, 1.0)).unwrap();
    assert!((probe_value(&f, &[0.0]).unwrap() - 1.0).abs() < 2e-3);
    assert_eq!(f.boundary, BoundaryPolicy::ExactGaussian);
}

#[test]
fn linear_data_is_preserved() {
    let m = DiffusionModel::brownian(vec![0.0], 1.7);
    let p = PayoffSpec::new(vec![1.0], ScalarFunction::linear()).unwrap();
    let f = solve_backward(&m, &p, &grid(1, 8.0, 256, 1.0)).unwrap();
    for k in 0..256 {
        assert!((f.values[k] - f.grid.coordinate(k)).abs() < 1e-6);
    }
    let r = propagation_report(&f, &m).unwrap();
    assert!((r.min_gradient[0] - 1.0).abs() < 1e-6);
}

#[test]
fn quadratic_ridge_2d() {
    let m = DiffusionModel::brownian(vec![0.0, 0.0], 1.0);
    let p = PayoffSpec::new(vec![1.0, 1.0], ScalarFunction::quadratic()).unwrap();
    let f = solve_backward(&m, &p, &grid(2, 8.0, 129, 1.0)).unwrap();
    assert!((probe_value(&f, &[0.0, 0.0]).unwrap() - 2.0).abs() < 5e-3);
    let r = propagation_report(&f, &m).unwrap();
    assert!(r.min_trace >= -1e-5, "{}", r.min_trace);
}

#[test]
fn quadratic_delta_is_uniform() {
    let mx = DiffusionModel::brownian(vec![0.0], 1.0);
    let my = DiffusionModel::brownian(vec![0.0], SQRT_2);
    let p = PayoffSpec::new(vec![1.0], ScalarFunction::quadratic()).unwrap();
    let g = grid(1, 8.0, 256, 1.0);
    let d = delta_field(&solve_backward(&mx, &p, &g).unwrap(), &solve_backward(&my, &p, &g).unwrap()).unwrap();
    assert!((d.min_value - 1.0).abs() < 5e-3);
}

#[test]
fn relu_drift_delta_matches_call_formula() {
    let n = Normal::new(0.0, 1.0).unwrap();
    let phi = |x: f64| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let oracle = (n.cdf(1.0) + phi(1.0)) - phi(0.0);
    let mx = DiffusionModel::brownian(vec![0.0], 1.0);
    let my = mx.clone().with_drift(CoefficientField::constant_drift(&[1.0])).unwrap();
    let p = PayoffSpec::new(vec![1.0], ScalarFunction::Relu).unwrap();
    let g = grid(1, 8.0, 257, 1.0);
    let fx = solve_backward(&mx, &p, &g).unwrap();
    let fy = solve_backward(&my, &p, &g).unwrap();
    let delta = probe_value(&fy, &[0.0]).unwrap() - probe_value(&fx, &[0.0]).unwrap();
    assert!((delta - oracle).abs() < 5e-3, "{delta} vs {oracle}");
}

#[test]
fn convexity_propagates_in_one_dimension() {
    let m = DiffusionModel::brownian(vec![0.0], 1.0);
    // Convex only on B_R: R must exceed the core by many diffusion widths.
    let moll = mollify(&ScalarFunction::Abs, 0.1, 16.0).unwrap();
    let p = PayoffSpec::new(vec![1.0], ScalarFunction::Mollified(moll.into())).unwrap();
    let f = solve_backward(&m, &p, &grid(1, 8.0, 256, 1.0)).unwrap();
    let r = propagation_report(&f, &m).unwrap();
    assert!(r.min_convexity >= -1e-6, "{}", r.min_convexity);
}

#[test]
fn convexity_and_trace_in_two_dimensions() {
    let a = CoefficientField::constant(2, vec![1.0, 0.0, 0.3, 0.9]).unwrap();
    let m = DiffusionModel::new(vec![0.0, 0.0], CoefficientField::zero_drift(2), a).unwrap();
    let moll = mollify(&ScalarFunction::Abs, 0.1, 12.0).unwrap();
    let p = PayoffSpec::new(vec![1.0, 1.0], ScalarFunction::Mollified(moll.into())).unwrap();
    let f = solve_backward(&m, &p, &grid(2, 4.0, 128, 1.0)).unwrap();
    let r = propagation_report(&f, &m).unwrap();
    assert!(r.min_trace >= -1e-5);
    assert!(r.min_convexity >= -1e-5, "{}", r.min_convexity);
}

#[test]
fn monotonicity_propagates_with_drift() {
    let m = DiffusionModel::brownian(vec![0.0, 0.0], 1.0)
        .with_drift(CoefficientField::constant_drift(&[0.5, -0.2]))
        .unwrap();
    let p = PayoffSpec::new(vec![1.0, 2.0], ScalarFunction::Softplus).unwrap();
    let f = solve_backward(&m, &p, &grid(2, 6.0, 97, 0.5)).unwrap();
    let r = propagation_report(&f, &m).unwrap();
    assert!(r.min_gradient.iter().all(|g| *g >= -1e-5), "{:?}", r.min_gradient);
}

#[test]
fn variable_coefficients_freeze_the_boundary() {
    let s = CoefficientField::trig_perturbed(1, &[1.0], &[0.2], &[1.0], 0.0).unwrap();
    let m = DiffusionModel::new(vec![0.0], CoefficientField::zero_drift(1), s).unwrap();
    let p = PayoffSpec::new(vec![1.0], ScalarFunction::quadratic()).unwrap();
    let f = solve_backward(&m, &p, &grid(1, 8.0, 129, 0.5)).unwrap();
    assert_eq!(f.boundary, BoundaryPolicy::FrozenData);
    assert_eq!(f.values[0], f.initial[0]);
}

#[test]
fn grid_convergence_is_second_order() {
    let m = DiffusionModel::brownian(vec![0.0], 1.0);
    let moll = mollify(&ScalarFunction::Abs, 0.1, 16.0).unwrap();
    let p = PayoffSpec::new(vec![1.0], ScalarFunction::Mollified(moll.into())).unwrap();
    let probe = |nodes| probe_value(&solve_backward(&m, &p, &grid(1, 8.0, nodes, 1.0)).unwrap(), &[0.0]).unwrap();
    let (a, b, c) = (probe(129), probe(257), probe(513));
    let order = ((a - b) / (b - c)).abs().log2();
    assert!(order >= 1.7, "{order}");
}

#[test]
fn degenerate_diffusion_is_refused() {
    let m = DiffusionModel::brownian(vec![0.0], 0.0);
    let p = PayoffSpec::new(vec![1.0], ScalarFunction::Abs).unwrap();
    assert!(matches!(solve_backward(&m, &p, &grid(1, 4.0, 33, 1.0)), Err(PdeError::Degenerate { .. })));
}

#[test]
fn solver_output_is_thread_independent() {
    let m = DiffusionModel::brownian(vec![0.0, 0.0], 1.0);
    let p = PayoffSpec::new(vec![1.0, 1.0], ScalarFunction::Abs).unwrap();
    let g = grid(2, 4.0, 49, 0.5);
    let a = par::with_threads(Some(1), || solve_backward(&m, &p, &g).unwrap());
    let b = par::with_threads(Some(4), || solve_backward(&m, &p, &g).unwrap());
    assert_eq!(a, b);
}
