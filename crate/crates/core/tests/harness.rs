use diffcomp::convex::ScalarFunction;
use diffcomp::harness::*;
use diffcomp::model::{CoefficientField, DiffusionModel};
use proptest::prelude::*;

fn small(name: &str, paths: usize) -> Scenario {
    let mut s = load_scenario(name).unwrap();
    s.plan.paths = paths;
    s
}

#[test]
fn identical_models_are_the_equality_case() {
    let mut s = small("thm1_softplus_1d_trig", 20_000);
    s.model_y = s.model_x.clone();
    s.pde_crosscheck = false;
    let r = run_scenario(&s).unwrap();
    assert_eq!(r.delta, 0.0);
    assert_eq!(r.se_delta, 0.0);
    assert_eq!(r.z_score, None);
    assert_eq!(r.verdict, Verdict::Holds);
}

#[test]
fn enlarging_the_y_diffusion_does_not_lower_delta() {
    for name in ["thm1_abs_2d", "thm1_relu_3d", "thm1_pwl_1d"] {
        let mut s = small(name, 50_000);
        s.pde_crosscheck = false;
        let base = run_scenario(&s).unwrap();
        // Diagonal rho: rho rho^T + 0.5 I has square root sqrt(rho_ii^2 + 0.5)
        // when rho is diagonal, which holds for these scenarios.
        let n = s.dim();
        let p = s.model_y.dispersion().params().to_vec();
        let diag: Vec<f64> = (0..n).map(|i| (p[i * n + i].powi(2) + 0.5).sqrt()).collect();
        s.model_y = DiffusionModel::new(s.model_y.x0().to_vec(), s.model_y.drift().clone(), CoefficientField::diagonal(&diag))
            .unwrap();
        let wider = run_scenario(&s).unwrap();
        assert!(
            wider.delta >= base.delta - 3.0 * (base.se_delta + wider.se_delta),
            "{name}: {} < {}",
            wider.delta,
            base.delta
        );
        assert!(wider.delta > base.delta);
    }
}

#[test]
fn scaling_the_weights_scales_abs_payoffs() {
    let mut s = small("thm1_abs_2d", 20_000);
    s.pde_crosscheck = false;
    let base = run_scenario(&s).unwrap();
    let k = 2.5;
    s.payoff = s.payoff.scaled(k).unwrap();
    let r = run_scenario(&s).unwrap();
    for (a, b, se) in [
        (r.mean_x, base.mean_x, base.se_x),
        (r.mean_y, base.mean_y, base.se_y),
        (r.delta, base.delta, base.se_delta),
    ] {
        assert!((a - k * b).abs() <= 3.0 * se * k, "{a} vs {k} * {b}");
        assert!((a - k * b).abs() <= 1e-12 * (1.0 + a.abs()));
    }
}

#[test]
fn reports_round_trip() {
    let r = run_scenario(&small("thm2_relu_1d", 10_000)).unwrap();
    assert!(r.pde.is_some());
    let json = r.to_json();
    let back = ComparisonReport::from_json(&json).unwrap();
    assert_eq!(back.to_json(), json);
    assert_eq!(back.runtime, 0.0);
    assert!(!json.contains("runtime"));
}

#[test]
fn scenarios_round_trip_through_toml() {
    for name in bundled::scenario_names() {
        let s = load_scenario(name).unwrap();
        let again = Scenario::from_toml_str(&s.to_toml_string()).unwrap();
        assert_eq!(again, s, "{name}");
    }
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    let s = small("thm1_quad_2d_trig", 20_000);
    let one = run_scenario_with(&s, &Overrides { threads: Some(1), ..Default::default() }).unwrap();
    let four = run_scenario_with(&s, &Overrides { threads: Some(4), ..Default::default() }).unwrap();
    assert_eq!(one.to_json(), four.to_json());
}

#[test]
fn theorem_invariants_are_enforced_for_expected_holds() {
    let mut s = load_scenario("thm1_relu_1d").unwrap();
    s.model_y = s.model_y.clone().with_drift(CoefficientField::constant_drift(&[0.1])).unwrap();
    assert!(matches!(s.validate(), Err(HarnessError::Invalid(_))));
    let mut s = load_scenario("thm2_relu_1d").unwrap();
    s.payoff.declared_nondecreasing = false;
    assert!(s.validate().is_err());
    s.expect = Expectation::Violation;
    assert!(s.validate().is_ok());
}

#[test]
fn unmet_hypotheses_suppress_holds() {
    // Swapping the models breaks the diffusion order; delta turns negative.
    let mut s = small("thm1_quad_1d", 20_000);
    s.pde_crosscheck = false;
    std::mem::swap(&mut s.model_x, &mut s.model_y);
    let r = run_scenario(&s).unwrap();
    assert!(!r.certified);
    assert!(r.hypotheses.unmet.contains(&"diffusion-order".to_string()));
    assert_eq!(r.verdict, Verdict::Violated);
    assert_eq!(r.annotations[0], "hypotheses-unmet");

    // Ordered models but a concave payoff: no claim, positive delta is indeterminate.
    let mut s = small("thm1_quad_1d", 20_000);
    s.pde_crosscheck = false;
    s.payoff = s.payoff.with_function(ScalarFunction::Softplus);
    s.payoff.declared_convex = false;
    let r = run_scenario(&s).unwrap();
    assert_eq!(r.verdict, Verdict::Indeterminate);
}

#[test]
fn pde_cross_check_needs_low_dimension() {
    let mut s = load_scenario("thm1_relu_3d").unwrap();
    s.pde_crosscheck = true;
    assert!(s.validate().is_err());
    let r = run_scenario_with(&small("thm1_relu_3d", 5_000), &Overrides { pde: Some(true), ..Default::default() })
        .unwrap();
    assert!(r.pde.is_none());
}

#[test]
fn closed_form_counterexamples() {
    let out = run_counterexample(CounterexampleKind::Nonconvex).unwrap();
    let r = &out.report;
    assert!(out.found);
    assert!((r.mean_x + 1.0).abs() < 4.0 * r.se_x);
    assert!((r.mean_y + 2.0).abs() < 4.0 * r.se_y);
    assert!(!r.certified);
    let out = run_counterexample(CounterexampleKind::NonmonotoneDrift).unwrap();
    assert_eq!(out.report.verdict, Verdict::Violated);
    assert!((out.report.delta + 1.0).abs() < 1e-12);
}

#[test]
fn multivariate_search_reports_its_scenario() {
    let out = run_counterexample(CounterexampleKind::MultivariatePayoff).unwrap();
    assert!(out.candidates_tried <= SEARCH_BUDGET);
    let cand: MultivariateCandidate = serde_json::from_value(out.scenario.clone()).unwrap();
    assert!(cand.payoff.is_convex());
    assert!(out.report.hypotheses.order.diffusion_order_ok);
    if out.found {
        assert_eq!(out.report.verdict, Verdict::Violated);
        assert!(out.report.z_score.unwrap() <= -SEARCH_Z);
        assert_eq!(out.report.paths, 100_000);
    }
    // A budget of one may or may not hit; either outcome is reported.
    let one = run_counterexample_with(CounterexampleKind::MultivariatePayoff, &Overrides::default(), 1).unwrap();
    assert_eq!(one.candidates_tried, 1);
    assert_eq!(one.found, one.report.verdict == Verdict::Violated);
}

#[test]
fn empty_and_negative_suites() {
    let empty = run_suite_spec(&SuiteSpec { name: "empty".into(), ..Default::default() }, None, &Overrides::default())
        .unwrap();
    assert!(empty.summary.rows.is_empty());
    assert_eq!(empty.summary.exit_code(), 0);
    assert_eq!(empty.summary.to_csv(), "name,delta,se,z,verdict\n");

    let neg = run_suite("negative_suite", &Overrides::default()).unwrap();
    assert!(neg.summary.violated >= 2);
    assert_eq!(neg.summary.certified_violations, 0);
    assert_eq!(neg.summary.exit_code(), 0);
    assert_eq!(neg.outcomes.len(), 3);
}

#[test]
fn suite_errors() {
    assert!(matches!(SuiteSpec::from_toml_str("name = 3"), Err(HarnessError::Parse { .. })));
    let bad = SuiteSpec { name: "x".into(), counterexamples: vec!["nope".into()], ..Default::default() };
    assert!(run_suite_spec(&bad, None, &Overrides::default()).is_err());
    assert!(load_scenario("no_such_scenario").is_err());
}

#[test]
fn suite_csv_rows() {
    let spec = SuiteSpec { name: "one".into(), scenarios: vec!["scenarios/thm1_quad_3d".into()], ..Default::default() };
    let run = run_suite_spec(&spec, None, &Overrides { paths: Some(5_000), ..Default::default() }).unwrap();
    let csv = run.summary.to_csv();
    let row = csv.lines().nth(1).unwrap();
    assert!(row.starts_with("thm1_quad_3d,"));
    assert!(row.ends_with(",holds"));
    assert_eq!(row.split(',').count(), 5);
    assert_eq!(run.reports[0].paths, 5_000);
}

#[test]
fn certified_violations_fail_the_suite() {
    let row = SuiteRow {
        name: "broken".into(),
        delta: -0.5,
        se: 0.01,
        z: Some(-50.0),
        verdict: Verdict::Violated,
        certified: true,
        expect: Expectation::Holds,
        found: None,
    };
    let summary = SuiteSummary {
        name: "s".into(),
        rows: vec![row],
        holds: 0,
        indeterminate: 0,
        violated: 1,
        certified_violations: 1,
    };
    assert_eq!(summary.exit_code(), 1);
    assert_eq!(summary.to_csv().lines().nth(1), Some("broken,-0.5,0.01,-50.0,violated"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn verdict_matches_its_definition(delta in -10.0f64..10.0, se in 0.0f64..2.0, ok: bool) {
        let v = verdict(delta, se, ok);
        prop_assert_eq!(v == Verdict::Violated, delta < -Z_CRIT * se);
        prop_assert_eq!(v == Verdict::Holds, delta >= -Z_CRIT * se && ok);
    }
}
