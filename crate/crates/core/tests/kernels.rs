use diffcomp::convex::{mollify, ScalarFunction};
use diffcomp::kernels::*;
use diffcomp::rng;
use nalgebra::DMatrix;

fn random_spd(seed: u64, n: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |i, j| 2.0 * rng::uniform(seed, 1, (i * n + j) as u64) - 1.0);
    &m * m.transpose() * 0.5 + DMatrix::identity(n, n) * 0.2
}

fn random_vec(seed: u64, stream: u64, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|i| scale * (2.0 * rng::uniform(seed, stream, i as u64) - 1.0)).collect()
}

#[test]
fn density_integrates_to_one() {
    let k = ConstKernel::scalar(0.5, 0.4).unwrap();
    let nodes = 4001;
    let h = 16.0 / (nodes - 1) as f64;
    let mean = 0.4;
    let mass: f64 = (0..nodes)
        .map(|i| {
            let y = mean - 8.0 + h * i as f64;
            let w = if i == 0 || i == nodes - 1 { 0.5 } else { 1.0 };
            w * kernel(&k, 1.0, &[0.0], 0.0, &[-y]).unwrap().value
        })
        .sum::<f64>()
        * h;
    assert!((mass - 1.0).abs() < 1e-8, "{mass}");
}

#[test]
fn derivatives_match_finite_differences() {
    for seed in 0..20u64 {
        let n = 1 + (seed % 3) as usize;
        let k = ConstKernel::forward(random_spd(seed, n), random_vec(seed, 2, n, 0.5)).unwrap();
        let x = random_vec(seed, 3, n, 1.0);
        let y = random_vec(seed, 4, n, 1.0);
        let e = kernel(&k, 0.7, &x, 0.0, &y).unwrap();
        let h = 1e-4;
        for i in 0..n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let ep = kernel(&k, 0.7, &xp, 0.0, &y).unwrap();
            let em = kernel(&k, 0.7, &xm, 0.0, &y).unwrap();
            let g = (ep.value - em.value) / (2.0 * h);
            let scale = e.grad.iter().fold(e.value, |m, v| m.max(v.abs()));
            assert!((g - e.grad[i]).abs() <= 1e-6 * scale, "grad {seed} {i}");
            for j in 0..n {
                let hs = (ep.grad[j] - em.grad[j]) / (2.0 * h);
                let scale = e.hess.amax().max(e.value);
                assert!((hs - e.hess[(i, j)]).abs() <= 1e-6 * scale, "hess {seed} {i}{j}");
            }
        }
    }
}

#[test]
fn duality_on_random_configurations() {
    for seed in 0..100u64 {
        let n = 1 + (seed % 3) as usize;
        let b = if seed % 2 == 0 { vec![0.0; n] } else { random_vec(seed, 5, n, 1.0) };
        let k = ConstKernel::forward(random_spd(seed, n), b).unwrap();
        let x = random_vec(seed, 6, n, 2.0);
        let y = random_vec(seed, 7, n, 2.0);
        let err = lemma1_check(&k, 1.3, &x, 0.2, &y).unwrap();
        assert!(err <= 1e-10, "seed {seed}: {err}");
    }
}

#[test]
fn duality_examples() {
    let k = ConstKernel::scalar(0.5, 0.3).unwrap();
    assert!(lemma1_check(&k, 1.0, &[0.4], 0.0, &[-0.2]).unwrap() <= 1e-12);
    let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.15, 0.15, 0.5]);
    let k = ConstKernel::forward(a, vec![0.0, 0.0]).unwrap();
    assert!(lemma1_check(&k, 1.0, &[0.3, -0.1], 0.0, &[1.0, 0.5]).unwrap() <= 1e-12);
    // Gradients enter with opposite signs once they are nonzero.
    let r = duality_report(&k, 1.0, &[0.3, -0.1], 0.0, &[1.0, 0.5]).unwrap();
    assert!(r.literal_grad_error > 0.5);
}

#[test]
fn chapman_kolmogorov_in_one_dimension() {
    let k = ConstKernel::scalar(0.7, 0.2).unwrap();
    let (t, u, s) = (1.5, 0.6, 0.0);
    let (x, y) = (0.3, -0.4);
    let direct = kernel(&k, t, &[x], s, &[y]).unwrap().value;
    let nodes = 4001;
    let half = 12.0;
    let h = 2.0 * half / (nodes - 1) as f64;
    let mut acc = 0.0;
    for i in 0..nodes {
        let z = -half + h * i as f64;
        let w = if i == 0 || i == nodes - 1 { 0.5 } else { 1.0 };
        acc += w * kernel(&k, t, &[x], u, &[z]).unwrap().value * kernel(&k, u, &[z], s, &[y]).unwrap().value;
    }
    assert!((acc * h - direct).abs() < 1e-6);
}

#[test]
fn gaussian_bound_examples() {
    let k = ConstKernel::scalar(0.5, 0.0).unwrap();
    assert!(gaussian_bound_check(&k, 1.0, 0.25, 2000, 1.0).holds);
    let wide = gaussian_bound_check(&k, 1.0, 1.0, 2000, 1.0);
    assert!(!wide.holds);
    assert!(wide.worst.offset[0].abs() > 1.0);
    let low = gaussian_bound_check(&k, 0.1, 0.25, 2000, 1.0);
    assert!(!low.holds);
    // Largest ratio for a too-small constant sits at the peak.
    assert_eq!(low.worst.offset, vec![0.0]);
}

#[test]
fn ver_identity_one_dimension() {
    let k = ConstKernel::scalar(0.5, 0.0).unwrap();
    let m = mollify(&ScalarFunction::quadratic(), 0.1, 2.0).unwrap();
    let r = ver_identity_check(&k, &m, &[1.0], 1.0, &[0.0]).unwrap();
    assert!(r.worst <= 1e-6, "{}", r.worst);
    assert!(r.rhs[0][0].abs() > 0.1);
}

#[test]
fn ver_identity_two_dimensions() {
    let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.4]);
    let k = ConstKernel::forward(a, vec![0.2, -0.1]).unwrap();
    let m = mollify(&ScalarFunction::Abs, 0.1, 2.0).unwrap();
    let r = ver_identity_check(&k, &m, &[1.0, 1.0], 1.0, &[0.2, -0.3]).unwrap();
    assert!(r.worst <= 1e-5, "{}", r.worst);
    assert!((r.rhs[0][1] - r.rhs[0][0]).abs() < 1e-12);
}

#[test]
fn ver_identity_zero_payoff_and_radius_guard() {
    let k = ConstKernel::scalar(0.5, 0.0).unwrap();
    let m = diffcomp::convex::MollifiedFunction::with_parameters(
        ScalarFunction::Linear { slope: 0.0, intercept: 0.0 },
        0.1,
        1.0,
        0.2,
        0.0,
    )
    .unwrap();
    let r = ver_identity_check(&k, &m, &[1.0], 1.0, &[0.0]).unwrap();
    assert_eq!(r.worst, 0.0);
    assert!(matches!(
        ver_identity_check_with(&k, &m, &[1.0], 1.0, &[0.0], 2.0, 512),
        Err(KernelError::QuadratureRadius { .. })
    ));
}

#[test]
fn adjoint_coefficients_for_polynomial_fields() {
    // a = [[1 + x^2, x y], [x y, 1 + y^2]] / 2, b = (x, y^2).
    let a = |p: &[f64]| {
        let (x, y) = (p[0], p[1]);
        DMatrix::from_row_slice(2, 2, &[1.0 + x * x, x * y, x * y, 1.0 + y * y]) * 0.5
    };
    let b = |p: &[f64]| vec![p[0], p[1] * p[1]];
    let p = [0.7, -0.4];
    let (_, bs, cs) = adjoint_coefficients(a, b, &p, 1e-4);
    // d_j a_1j = x + x/2, d_j a_2j = y/2 + y.
    let expect_b = [2.0 * 1.5 * p[0] - p[0], 2.0 * 1.5 * p[1] - p[1] * p[1]];
    // sum d_i d_j a_ij = 1 + 1 + 2 * 1/2, minus div b = 1 + 2y.
    let expect_c = 3.0 - (1.0 + 2.0 * p[1]);
    assert!((bs[0] - expect_b[0]).abs() < 1e-6 && (bs[1] - expect_b[1]).abs() < 1e-6);
    assert!((cs - expect_c).abs() < 1e-5, "{cs}");
    let (_, bs, cs) = adjoint_coefficients(
        |_| DMatrix::identity(2, 2) * 0.5,
        |_| vec![0.3, -0.2],
        &p,
        1e-4,
    );
    assert_eq!(bs, vec![-0.3, 0.2]);
    assert_eq!(cs, 0.0);
}
