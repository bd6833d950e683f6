use diffcomp::convex::{PayoffSpec, ScalarFunction};
use diffcomp::model::{CoefficientField, DiffusionModel};
use diffcomp::par;
use diffcomp::rng;
use diffcomp::sde::*;

fn bm(n: usize, s: f64) -> DiffusionModel {
    DiffusionModel::brownian(vec![0.0; n], s)
}

#[test]
fn increment_moments_within_clt_bounds() {
    let draws = 1_000_000u64;
    let (mut s1, mut s2) = ([0.0f64; 3], [0.0f64; 3]);
    for i in 0..draws {
        let v = rng::brownian_increment(7, i / 100, i % 100, 3);
        for d in 0..3 {
            s1[d] += v[d];
            s2[d] += v[d] * v[d];
        }
    }
    for d in 0..3 {
        let mean = s1[d] / draws as f64;
        let var = s2[d] / draws as f64 - mean * mean;
        assert!(mean.abs() <= 4.0 / (draws as f64).sqrt(), "mean {mean}");
        assert!((var - 1.0).abs() <= 0.01, "var {var}");
    }
}

#[test]
fn distinct_paths_are_uncorrelated() {
    let pairs = 100_000u64;
    let a: Vec<f64> = (0..pairs).map(|i| rng::brownian_increment(1, 2 * i, 0, 1)[0]).collect();
    let b: Vec<f64> = (0..pairs).map(|i| rng::brownian_increment(1, 2 * i + 1, 0, 1)[0]).collect();
    let (ma, mb) = (a.iter().sum::<f64>() / pairs as f64, b.iter().sum::<f64>() / pairs as f64);
    let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    assert!((cov / (va * vb).sqrt()).abs() <= 0.01);
}

#[test]
fn identical_models_give_zero_diff_bitwise() {
    let m = DiffusionModel::new(
        vec![0.1, -0.2],
        CoefficientField::constant_drift(&[0.3, 0.0]),
        CoefficientField::trig_perturbed(2, &[1.0, 0.0, 0.0, 1.0], &[0.2, 0.0, 0.0, 0.1], &[1.0, 0.5], 0.3).unwrap(),
    )
    .unwrap();
    let p = PayoffSpec::new(vec![1.0, 2.0], ScalarFunction::Softplus).unwrap();
    let run = simulate_pair(&m, &m, &p, &p, &SimPlan::new(1.0, 20, 5000, 3).unwrap()).unwrap();
    assert!(run.samples.iter().all(|s| s.diff.to_bits() == 0.0f64.to_bits()));
    let e = estimate(&run.samples, Which::Diff).unwrap();
    assert_eq!((e.mean, e.std_error), (0.0, 0.0));
}

#[test]
fn quadratic_second_moments() {
    let p = PayoffSpec::new(vec![1.0], ScalarFunction::quadratic()).unwrap();
    let run = simulate_pair(&bm(1, 1.0), &bm(1, 2f64.sqrt()), &p, &p, &SimPlan::new(1.0, 1, 100_000, 11).unwrap()).unwrap();
    let ex = estimate(&run.samples, Which::X).unwrap();
    let ey = estimate(&run.samples, Which::Y).unwrap();
    assert!((ex.mean - 1.0).abs() <= 4.0 * ex.std_error);
    assert!((ey.mean - 2.0).abs() <= 4.0 * ey.std_error);
}

#[test]
fn absolute_value_means_in_two_dimensions() {
    let p = PayoffSpec::new(vec![1.0, 1.0], ScalarFunction::Abs).unwrap();
    let run = simulate_pair(&bm(2, 1.0), &bm(2, 2f64.sqrt()), &p, &p, &SimPlan::new(1.0, 4, 100_000, 5).unwrap()).unwrap();
    let ex = estimate(&run.samples, Which::X).unwrap();
    let ey = estimate(&run.samples, Which::Y).unwrap();
    let (mx, my) = ((4.0 / std::f64::consts::PI).sqrt(), (8.0 / std::f64::consts::PI).sqrt());
    assert!((ex.mean - mx).abs() <= 4.0 * ex.std_error);
    assert!((ey.mean - my).abs() <= 4.0 * ey.std_error);
}

#[test]
fn linear_payoff_is_a_martingale() {
    let x0 = vec![0.5, -1.0];
    let mx = DiffusionModel::new(
        x0.clone(),
        CoefficientField::zero_drift(2),
        CoefficientField::trig_perturbed(2, &[1.0, 0.0, 0.2, 1.0], &[0.3, 0.1, 0.0, 0.2], &[1.0, -1.0], 0.0).unwrap(),
    )
    .unwrap();
    let my = DiffusionModel::brownian(x0.clone(), 1.5);
    let p = PayoffSpec::new(vec![2.0, 1.0], ScalarFunction::linear()).unwrap();
    let run = simulate_pair(&mx, &my, &p, &p, &SimPlan::new(1.0, 16, 50_000, 9).unwrap()).unwrap();
    let target = 2.0 * 0.5 - 1.0;
    for w in [Which::X, Which::Y] {
        let e = estimate(&run.samples, w).unwrap();
        assert!((e.mean - target).abs() <= 4.0 * e.std_error, "{w:?}");
    }
}

#[test]
fn shift_equivariance_for_constant_coefficients() {
    let p = PayoffSpec::new(vec![1.0, 3.0], ScalarFunction::linear()).unwrap();
    let plan = SimPlan::new(1.0, 8, 2000, 4).unwrap();
    let a = simulate_pair(&bm(2, 1.0), &bm(2, 1.0), &p, &p, &plan).unwrap();
    let d = [0.25, -0.5];
    let shifted = DiffusionModel::brownian(d.to_vec(), 1.0);
    let b = simulate_pair(&shifted, &shifted, &p, &p, &plan).unwrap();
    for (s, t) in a.samples.iter().zip(&b.samples) {
        assert!((t.payoff_x - s.payoff_x - (0.25 - 1.5)).abs() < 1e-12);
    }
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let p = PayoffSpec::new(vec![1.0, 1.0], ScalarFunction::Relu).unwrap();
    let plan = SimPlan::new(1.0, 10, 20_000, 77).unwrap();
    let run = |t| par::with_threads(Some(t), || simulate_pair(&bm(2, 1.0), &bm(2, 1.3), &p, &p, &plan).unwrap());
    let (one, four) = (run(1), run(4));
    assert_eq!(one, four);
    let e1 = estimate(&one.samples, Which::Diff).unwrap();
    let e4 = estimate(&four.samples, Which::Diff).unwrap();
    assert_eq!(e1.mean.to_bits(), e4.mean.to_bits());
    assert_eq!(e1.std_error.to_bits(), e4.std_error.to_bits());
}

#[test]
fn diverging_paths_fail_the_run() {
    let p = PayoffSpec::new(vec![1.0], ScalarFunction::ExpScaled { scale: 1.0, rate: 800.0 }).unwrap();
    let err = simulate_pair(&bm(1, 1.0), &bm(1, 1.0), &p, &p, &SimPlan::new(1.0, 1, 1000, 1).unwrap());
    assert!(matches!(err, Err(SdeError::Diverged { .. })));
}

#[test]
fn mismatched_start_points_rejected() {
    let p = PayoffSpec::new(vec![1.0], ScalarFunction::Abs).unwrap();
    let y = DiffusionModel::brownian(vec![1.0], 1.0);
    assert!(simulate_pair(&bm(1, 1.0), &y, &p, &p, &SimPlan::new(1.0, 1, 10, 1).unwrap()).is_err());
}

#[test]
fn arithmetic_brownian_motion_is_exact() {
    let r = strong_error_probe(ProbeModel::ArithBm { x0: 1.0, mu: 0.3, sigma: 0.7 }, &[8, 16, 32, 64], 1.0, 2000, 3);
    assert!(r.max_error <= 1e-12, "{}", r.max_error);
    assert!(r.slope.is_none());
}

#[test]
fn gbm_strong_and_weak_orders() {
    let gbm = ProbeModel::Gbm { x0: 1.0, mu: 0.1, sigma: 0.2 };
    let strong = strong_error_probe(gbm, &[16, 32, 64, 128, 256], 1.0, 4000, 21);
    let s = strong.slope.unwrap();
    assert!((0.35..=0.65).contains(&s), "strong slope {s}");
    let weak = weak_error_probe(gbm, &[1, 2, 4, 8], 1.0, 1_000_000, 22);
    let w = weak.slope.unwrap();
    assert!((0.7..=1.3).contains(&w), "weak slope {w}");
}
