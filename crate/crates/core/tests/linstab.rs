mod common;

use taylor_core::linstab::*;
use taylor_core::params::NondimParams;
use taylor_core::radial_ops::{build_grid, build_interval_grid, DiffOperators, Geometry, RadialGrid, Scheme};

fn gap(n: usize) -> (RadialGrid, DiffOperators) {
    let g = build_interval_grid(0.0, 1.0, n, Scheme::Collocation, Geometry::Planar).unwrap();
    let o = DiffOperators::new(&g);
    (g, o)
}

fn annulus(eta: f64, n: usize) -> (RadialGrid, DiffOperators) {
    let g = build_grid(eta, n, Scheme::Collocation).unwrap();
    let o = DiffOperators::new(&g);
    (g, o)
}

const SYMMETRIC: Coupling = Coupling::NarrowGap { mu: 0.0, variant: NarrowGapVariant::Symmetric };

#[test]
fn convection_anchor_against_finite_differences() {
    let (g, o) = gap(128);
    let c = find_critical_coupled(SYMMETRIC, &g, &o, &ScanOptions::default()).unwrap();
    assert!((c.t_c - 1707.762).abs() < 0.5, "{}", c.t_c);
    assert!((c.a_c - 3.117).abs() < 0.005, "{}", c.a_c);
    assert_eq!(c.t_c, c.lambda_c * c.lambda_c);

    let oracle = common::fd_convection_lambda_sq_extrapolated(c.a_c, 1000);
    assert!((c.t_c - oracle).abs() < 1e-5 * oracle, "{} vs {}", c.t_c, oracle);

    // vertex of the oracle parabola through a_c and a_c +- 0.05
    let d = 0.05;
    let f: Vec<f64> = [-d, 0.0, d].iter().map(|s| common::fd_convection_lambda_sq(c.a_c + s, 1000)).collect();
    let vertex = c.a_c + 0.5 * d * (f[0] - f[2]) / (f[0] - 2.0 * f[1] + f[2]);
    assert!((vertex - c.a_c).abs() < 0.005, "{vertex}");
}

#[test]
fn critical_point_is_minimal() {
    let (g, o) = gap(64);
    let c = find_critical_coupled(SYMMETRIC, &g, &o, &ScanOptions::default()).unwrap();
    for a in [c.a_c - 0.1, c.a_c + 0.1] {
        let m = solve_marginal_coupled(SYMMETRIC, a, &g, &o).unwrap();
        assert!(m.lambda0 >= c.lambda_c);
    }
    assert!(!c.multiple_minima);
}

#[test]
fn full_gap_variant_tends_to_symmetric() {
    let (g, o) = gap(64);
    let s = solve_marginal_narrowgap(0.999, 3.117, &g, &o, NarrowGapVariant::Symmetric).unwrap();
    let f = solve_marginal_narrowgap(0.999, 3.117, &g, &o, NarrowGapVariant::Full).unwrap();
    assert!((f.lambda0 - s.lambda0).abs() < 1e-3 * s.lambda0);
    assert!(f.lambda0 > s.lambda0);
}

#[test]
fn primal_and_adjoint_agree_with_positive_profiles() {
    for (eta, mu) in [(0.9, 0.0), (0.98, 0.95), (0.7, 0.3)] {
        let p = NondimParams::from_ratios(eta, mu).unwrap();
        let (g, o) = annulus(eta, 64);
        let c = find_critical(&p, &g, &o, DEFAULT_A_RANGE, 1e-6).unwrap();
        let m = solve_marginal(&p, c.a_c, &g, &o).unwrap();
        let ad = solve_adjoint(&p, c.a_c, m.lambda0, &g, &o).unwrap();
        assert!((ad.adjoint_lambda - m.lambda0).abs() < 1e-8 * m.lambda0);
        assert!(m.residuals.iter().chain(&ad.residuals).all(|r| *r < 1e-8), "{:?} {:?}", m.residuals, ad.residuals);
        let pes = pes_check(&m, &ad, &g, &o).unwrap();
        assert!(pes.positivity.all(), "({eta}, {mu}) {:?}", pes.positivity);
        assert!(!m.near_degenerate);
    }
}

#[test]
fn residuals_hold_under_refinement() {
    let p = NondimParams::from_ratios(0.9, 0.0).unwrap();
    let mut values = Vec::new();
    for n in [32, 64, 128] {
        let (g, o) = annulus(0.9, n);
        let m = solve_marginal(&p, 31.3, &g, &o).unwrap();
        assert!(m.residuals.iter().all(|r| *r < 1e-8));
        values.push(m.lambda0);
    }
    assert!((values[2] - values[1]).abs() <= (values[1] - values[0]).abs() + 1e-12 * values[2]);
}

#[test]
fn exchange_of_stabilities() {
    for (eta, mu) in [(0.9, 0.0), (0.98, 0.95), (0.7, 0.3)] {
        let p = NondimParams::from_ratios(eta, mu).unwrap();
        let (g, o) = annulus(eta, 64);
        let c = find_critical(&p, &g, &o, DEFAULT_A_RANGE, 1e-6).unwrap();
        let m = solve_marginal(&p, c.a_c, &g, &o).unwrap();
        let ad = solve_adjoint_for(&m, &g, &o).unwrap();
        let pes = pes_check(&m, &ad, &g, &o).unwrap();
        let b0 = growth_rate(&p, c.a_c, m.lambda0, &g, &o).unwrap();
        assert!(b0.beta.abs() < 1e-6, "{b0:?}");
        assert!(growth_rate(&p, c.a_c, 1.01 * m.lambda0, &g, &o).unwrap().beta > 0.0);
        assert!(pes.pairing > 0.0 && pes.b_pairing > 0.0 && pes.slope > 0.0);
        let curve = growth_curve(m.coupling, m.a, m.lambda0, &g, &o, 1e-4, 1).unwrap();
        assert!((curve.slope - pes.slope).abs() < 1e-4 * pes.slope, "{} vs {}", curve.slope, pes.slope);
        assert!(curve.samples.windows(2).all(|w| w[1][1] > w[0][1]));
    }
}

#[test]
fn pairing_is_bilinear() {
    let p = NondimParams::from_ratios(0.9, 0.0).unwrap();
    let (g, o) = annulus(0.9, 48);
    let m = solve_marginal(&p, 31.3, &g, &o).unwrap();
    let ad = solve_adjoint_for(&m, &g, &o).unwrap();
    let base = pes_check(&m, &ad, &g, &o).unwrap();
    let scaled = pes_check(&m, &ad.scaled(3.0), &g, &o).unwrap();
    assert!((scaled.pairing - 3.0 * base.pairing).abs() < 1e-12 * base.pairing.abs() * 3.0);
    assert!((scaled.slope - base.slope).abs() < 1e-12 * base.slope);
}

#[test]
fn no_marginal_value_beyond_rayleigh_line() {
    // mu > eta^2 makes kappa < 0: c_r c_theta < 0 and lambda^2 turns negative
    let p = NondimParams::from_ratios(0.9, 0.95).unwrap();
    let (g, o) = annulus(0.9, 32);
    let r = solve_marginal(&p, 31.3, &g, &o);
    assert!(matches!(r, Err(taylor_core::TaylorError::NoMarginalValue { .. })), "{r:?}");
}
