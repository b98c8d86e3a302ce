mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use taylor_core::centermanifold::*;
use taylor_core::linstab::*;
use taylor_core::radial_ops::{build_grid, build_interval_grid, DiffOperators, Geometry, Op, RadialGrid, Scheme};
use taylor_core::TaylorError;

fn annulus(eta: f64, n: usize) -> (RadialGrid, DiffOperators) {
    let g = build_grid(eta, n, Scheme::Collocation).unwrap();
    let o = DiffOperators::new(&g);
    (g, o)
}

fn gap(n: usize) -> (RadialGrid, DiffOperators) {
    let g = build_interval_grid(0.0, 1.0, n, Scheme::Collocation, Geometry::Planar).unwrap();
    let o = DiffOperators::new(&g);
    (g, o)
}

fn kappa(eta: f64, mu: f64) -> f64 {
    (1.0 - mu / (eta * eta)) / (1.0 - mu)
}

fn critical_pair(c: Coupling, g: &RadialGrid, o: &DiffOperators) -> (StabilityMode, AdjointMode) {
    let cp = find_critical_coupled(c, g, o, &ScanOptions::default()).unwrap();
    let mode = solve_marginal_coupled(c, cp.a_c, g, o).unwrap();
    let adj = solve_adjoint_for(&mode, g, o).unwrap();
    (mode, adj)
}

#[test]
fn trilinear_is_antisymmetric_on_random_fields() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for (g, o) in [annulus(0.6, 48), gap(48)] {
        for _ in 0..20 {
            let a = 3.0;
            let u = common::random_divfree_field(&mut rng, &g, &o, a, 2);
            let v = common::random_divfree_field(&mut rng, &g, &o, a, 2);
            let w = common::random_divfree_field(&mut rng, &g, &o, a, 2);
            let scale = u.norm(&g) * v.norm(&g) * w.norm(&g);
            let sum = trilinear(&u, &v, &w, &g, &o) + trilinear(&u, &w, &v, &g, &o);
            assert!(sum.abs() < 1e-8 * scale, "{sum} vs {scale}");
            assert!(trilinear(&u, &v, &v, &g, &o).abs() < 1e-8 * u.norm(&g) * v.norm(&g).powi(2));
            let sampled = trilinear_sampled(&u, &v, &w, &g, &o, 16);
            let exact = trilinear(&u, &v, &w, &g, &o);
            assert!((sampled - exact).abs() < 1e-10 * scale, "{sampled} vs {exact}");
        }
    }
}

#[test]
fn azimuthal_field_does_not_advect_meridional_fields() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (g, o) = annulus(0.5, 32);
    let mut u = common::random_divfree_field(&mut rng, &g, &o, 2.0, 2);
    u.z = u.z.scale(0.0);
    u.r = u.r.scale(0.0);
    let mut v = common::random_divfree_field(&mut rng, &g, &o, 2.0, 2);
    let mut w = common::random_divfree_field(&mut rng, &g, &o, 2.0, 2);
    v.theta = v.theta.scale(0.0);
    w.theta = w.theta.scale(0.0);
    assert_eq!(trilinear(&u, &v, &w, &g, &o), 0.0);
}

#[test]
fn forcings_match_symbolic_expansion() {
    let (g, o) = annulus(0.5, 48);
    let (mode, _) = critical_pair(Coupling::Cylindrical { kappa: 1.0 }, &g, &o);
    let mut mode = mode;
    let eta = 0.5;
    // h = (r - eta)^2 (1 - r)^2, phi = (r - eta)(1 - r), v = a phi
    mode.h = g.sample(|r| ((r - eta) * (1.0 - r)).powi(2));
    mode.phi = g.sample(|r| (r - eta) * (1.0 - r));
    let a = mode.a;
    let f = quadratic_forcings(&mode, &o);
    for (i, &r) in g.nodes.iter().enumerate() {
        let p = (r - eta) * (1.0 - r);
        let dp = 1.0 + eta - 2.0 * r;
        let h = p * p;
        let dh = 2.0 * p * dp;
        let d2h = 2.0 * dp * dp - 4.0 * p;
        let sh = dh + h / r;
        let dsh = d2h + dh / r - h / (r * r);
        let (v, dv) = (a * p, a * dp);
        let h1 = a * (sh * sh - h * dsh);
        let h2 = a * a * h * dh - a * a * h * sh - v * v / r;
        let h3 = a * (h * dv - v * sh + v * h / r);
        assert!((f.h1[i] - h1).abs() < 1e-10, "H1 at {r}");
        assert!((f.h2[i] - h2).abs() < 1e-10, "H2 at {r}");
        assert!((f.h3[i] - h3).abs() < 1e-10, "H3 at {r}");
    }
}

#[test]
fn closed_forms_match_generic_products() {
    let (g, o) = annulus(0.9, 48);
    let (mode, _) = critical_pair(Coupling::Cylindrical { kappa: 1.0 }, &g, &o);
    let psi = TrigField::from_mode(&mode, &o);
    let gpp = nonlinear(&psi, &psi, &o);
    let f = quadratic_forcings(&mode, &o);
    let f0 = phi0_forcing(&mode, &o);
    let scale = gpp.max_abs();
    let m = g.len();
    for i in 0..m {
        assert!((gpp.z.sin[2][i] + 0.5 * f.h1[i]).abs() < 1e-10 * scale);
        assert!((gpp.r.cos[2][i] + 0.5 * f.h2[i]).abs() < 1e-10 * scale);
        assert!((gpp.theta.cos[2][i] + 0.5 * f.h3[i]).abs() < 1e-10 * scale);
        assert!((gpp.theta.cos[0][i] - f0[i]).abs() < 1e-10 * scale);
        assert!(gpp.z.cos[0][i].abs() < 1e-10 * scale);
    }
    for k in [1, 3] {
        assert!(gpp.harmonic(k).max_abs() < 1e-12 * scale);
    }
}

/// Plugs Phi back into (A - lambda_0 B) Phi - G(psi_1, psi_1) built from vector Laplacians:
/// the azimuthal residual and the curl of the meridional residual must vanish.
#[test]
fn correction_satisfies_momentum_balance() {
    let (g, o) = annulus(0.5, 40);
    let (mode, _) = critical_pair(Coupling::Cylindrical { kappa: 1.0 }, &g, &o);
    let corr = cm_correction(&mode, &g, &o).unwrap();
    assert!(corr.residual < 1e-8, "{}", corr.residual);
    assert!(corr.divergence < 1e-8, "{}", corr.divergence);
    let phi = corr.field();
    let psi = TrigField::from_mode(&mode, &o);
    let gpp = nonlinear(&psi, &psi, &o);
    let (a, l0) = (mode.a, mode.lambda0);
    let c = mode.coupling;
    let cr = g.sample(|r| c.c_r(r));
    let ct = g.sample(|r| c.c_theta(r));
    let lap_z = phi.z.map(|f| o.apply(Op::DstarD, f)).add(&phi.z.dz(a).dz(a));
    let lap_r = phi.r.map(|f| o.apply(Op::DDstar, f)).add(&phi.r.dz(a).dz(a));
    let lap_t = phi.theta.map(|f| o.apply(Op::DDstar, f)).add(&phi.theta.dz(a).dz(a));
    let ez = lap_z.scale(-1.0).add(&gpp.z.scale(-1.0));
    let er = lap_r.scale(-1.0).add(&phi.theta.times_profile(&cr).scale(-l0)).add(&gpp.r.scale(-1.0));
    let et = lap_t.scale(-1.0).add(&phi.r.times_profile(&ct).scale(-l0)).add(&gpp.theta.scale(-1.0));
    let curl = er.dz(a).add(&ez.dr(&o).scale(-1.0));
    let interior = |s: &taylor_core::centermanifold::Series| -> f64 {
        s.cos.iter().chain(&s.sin).flat_map(|p| p[2..p.len() - 2].iter()).fold(0.0f64, |m, v| m.max(v.abs()))
    };
    let scale = interior(&lap_t).max(interior(&gpp.theta));
    assert!(interior(&et) < 1e-7 * scale, "{} vs {}", interior(&et), scale);
    let cscale = interior(&lap_r.dz(a)).max(interior(&gpp.r.dz(a)));
    assert!(interior(&curl) < 1e-6 * cscale, "{} vs {}", interior(&curl), cscale);
    // generic harmonic solve reproduces the closed-form correction
    let (generic, _) = solve_steady(&c, l0, &gpp, &g, &o).unwrap();
    let diff = generic.add(&phi.scale(-1.0)).max_abs();
    assert!(diff < 1e-9 * phi.max_abs(), "{diff}");
    for s in [&phi.z, &phi.r, &phi.theta] {
        for p in s.cos.iter().chain(&s.sin) {
            assert!(p[0] == 0.0 && p[p.len() - 1] == 0.0);
        }
    }
}

#[test]
fn phi0_follows_maximum_principle() {
    let (g, o) = annulus(0.8, 32);
    let (mode, _) = critical_pair(Coupling::Cylindrical { kappa: 1.0 }, &g, &o);
    let f = phi0_forcing(&mode, &o);
    let (phi0, res) = solve_phi0(&mode, &o).unwrap();
    assert!(res < 1e-10);
    let back = o.apply(Op::DDstar, &phi0);
    let scale = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for i in 1..g.len() - 1 {
        assert!((back[i] - f[i]).abs() < 1e-8 * scale);
    }
    let sign = f[1..g.len() - 1].iter().all(|v| *v >= 0.0) as i32 - f[1..g.len() - 1].iter().all(|v| *v <= 0.0) as i32;
    if sign != 0 {
        assert!(phi0.iter().all(|v| v * sign as f64 <= 0.0));
    }
}

#[test]
fn solvability_and_dual_path_agreement() {
    for (eta, mu) in [(0.9, 0.0), (0.98, 0.95), (0.7, 0.3)] {
        let (g, o) = annulus(eta, 64);
        let (mode, adj) = critical_pair(Coupling::Cylindrical { kappa: kappa(eta, mu) }, &g, &o);
        let s = solvability_check(&mode, &adj, &g, &o).unwrap();
        assert!(s[0].abs() < 1e-8 && s[1].abs() < 1e-8);
        let (corr, r) = transition_coefficient(&mode, &adj, &g, &o).unwrap();
        assert!(corr.residual < 1e-8);
        assert!(r.rel_diff < PATH_TOL, "{eta} {mu}: {}", r.rel_diff);
        assert!(r.r < 0.0, "{eta} {mu}: {}", r.r);
    }
}

#[test]
fn gauge_homogeneity() {
    let (g, o) = annulus(0.9, 48);
    let (mode, adj) = critical_pair(Coupling::Cylindrical { kappa: 1.0 }, &g, &o);
    let (_, r) = transition_coefficient(&mode, &adj, &g, &o).unwrap();
    let (_, r2) = transition_coefficient(&mode.scaled(2.0), &adj, &g, &o).unwrap();
    let (_, r3) = transition_coefficient(&mode, &adj.scaled(-3.0), &g, &o).unwrap();
    assert!((r2.r - 4.0 * r.r).abs() < 1e-10 * r2.r.abs(), "{} {}", r2.r, r.r);
    assert!((r3.r - r.r).abs() < 1e-10 * r.r.abs());
    assert!(r2.r.signum() == r.r.signum());
    assert_eq!(r2.mode_gauge, 2.0);
}

#[test]
fn narrow_gap_coefficient_is_negative_and_tends_to_symmetric() {
    let (g, o) = gap(64);
    let sym = Coupling::NarrowGap { mu: 0.0, variant: NarrowGapVariant::Symmetric };
    let (m0, a0) = critical_pair(sym, &g, &o);
    let (_, r0) = transition_coefficient(&m0, &a0, &g, &o).unwrap();
    assert!(r0.r < 0.0);
    let mut prev = f64::INFINITY;
    for mu in [0.5, 0.9, 0.99] {
        let c = Coupling::NarrowGap { mu, variant: NarrowGapVariant::Full };
        let (m, a) = critical_pair(c, &g, &o);
        let (_, r) = transition_coefficient(&m, &a, &g, &o).unwrap();
        assert!(r.r < 0.0 && r.rel_diff < PATH_TOL);
        let dist = (r.r - r0.r).abs();
        assert!(dist < prev, "mu = {mu}: {dist}");
        prev = dist;
    }
    assert!(prev < 1e-4 * r0.r.abs());
}

#[test]
fn refinement_is_stable() {
    let c = Coupling::Cylindrical { kappa: 1.0 };
    let (g1, o1) = annulus(0.9, 48);
    let (g2, o2) = annulus(0.9, 96);
    let a = 31.3;
    let r = |g: &RadialGrid, o: &DiffOperators| {
        let m = solve_marginal_coupled(c, a, g, o).unwrap();
        let ad = solve_adjoint_for(&m, g, o).unwrap();
        let s = solvability_check(&m, &ad, g, o).unwrap();
        assert!(s[0].abs() < 1e-8 && s[1].abs() < 1e-8);
        transition_coefficient(&m, &ad, g, o).unwrap().1.r
    };
    let (r1, r2) = (r(&g1, &o1), r(&g2, &o2));
    assert!((r1 - r2).abs() < 1e-8 * r2.abs(), "{r1} {r2}");
}

#[test]
fn degenerate_mode_short_circuits() {
    let (g, o) = annulus(0.7, 32);
    let (mut mode, adj) = critical_pair(Coupling::Cylindrical { kappa: 1.0 }, &g, &o);
    mode.phi.iter_mut().for_each(|v| *v = 0.0);
    let corr = cm_correction(&mode, &g, &o).unwrap();
    let r = compute_r(&mode, &adj, &corr, &g, &o).unwrap();
    assert!(r.degenerate);
    assert_eq!(r.r, 0.0);
}

#[test]
fn second_harmonic_resonance_is_reported() {
    let (g, o) = annulus(0.7, 32);
    let c = Coupling::Cylindrical { kappa: 1.0 };
    let at_2a = solve_marginal_coupled(c, 8.0, &g, &o).unwrap();
    let mut mode = solve_marginal_coupled(c, 4.0, &g, &o).unwrap();
    mode.lambda0 = at_2a.lambda0;
    let f = quadratic_forcings(&mode, &o);
    match solve_phi2(&mode, &f, &g, &o) {
        Err(TaylorError::HarmonicResonance { condition }) => assert!(condition > 1e10),
        other => panic!("expected resonance, got {other:?}"),
    }
}
