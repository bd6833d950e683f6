//! Scenario and suite files shipped with the crate.

const SCENARIOS: &[(&str, &str)] = &[
    ("thm1_abs_2d", include_str!("../../../../scenarios/thm1_abs_2d.toml")),
    ("thm1_quad_1d", include_str!("../../../../scenarios/thm1_quad_1d.toml")),
    ("thm1_relu_1d", include_str!("../../../../scenarios/thm1_relu_1d.toml")),
    ("thm1_softplus_1d_trig", include_str!("../../../../scenarios/thm1_softplus_1d_trig.toml")),
    ("thm1_pwl_1d", include_str!("../../../../scenarios/thm1_pwl_1d.toml")),
    ("thm1_abs_2d_corr", include_str!("../../../../scenarios/thm1_abs_2d_corr.toml")),
    ("thm1_quad_2d_trig", include_str!("../../../../scenarios/thm1_quad_2d_trig.toml")),
    ("thm1_softplus_2d", include_str!("../../../../scenarios/thm1_softplus_2d.toml")),
    ("thm1_relu_3d", include_str!("../../../../scenarios/thm1_relu_3d.toml")),
    ("thm1_abs_3d_trig", include_str!("../../../../scenarios/thm1_abs_3d_trig.toml")),
    ("thm1_pwl_2d", include_str!("../../../../scenarios/thm1_pwl_2d.toml")),
    ("thm1_quad_3d", include_str!("../../../../scenarios/thm1_quad_3d.toml")),
    ("thm2_relu_1d", include_str!("../../../../scenarios/thm2_relu_1d.toml")),
    ("thm2_linear_2d", include_str!("../../../../scenarios/thm2_linear_2d.toml")),
    ("thm2_softplus_1d_trig", include_str!("../../../../scenarios/thm2_softplus_1d_trig.toml")),
    ("thm2_exp_1d", include_str!("../../../../scenarios/thm2_exp_1d.toml")),
    ("thm2_relu_2d", include_str!("../../../../scenarios/thm2_relu_2d.toml")),
    ("thm2_softplus_3d", include_str!("../../../../scenarios/thm2_softplus_3d.toml")),
];

const SUITES: &[(&str, &str)] = &[
    ("theorem1_suite", include_str!("../../../../suites/theorem1_suite.toml")),
    ("theorem2_suite", include_str!("../../../../suites/theorem2_suite.toml")),
    ("negative_suite", include_str!("../../../../suites/negative_suite.toml")),
];

pub fn scenario(name: &str) -> Option<&'static str> {
    SCENARIOS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn suite(name: &str) -> Option<&'static str> {
    SUITES.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn scenario_names() -> impl Iterator<Item = &'static str> {
    SCENARIOS.iter().map(|(n, _)| *n)
}

pub fn suite_names() -> impl Iterator<Item = &'static str> {
    SUITES.iter().map(|(n, _)| *n)
}
