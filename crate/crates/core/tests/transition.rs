use taylor_core::centermanifold::transition_coefficient;
use taylor_core::linstab::*;
use taylor_core::radial_ops::{build_grid, DiffOperators, Scheme};
use taylor_core::transition::*;
use taylor_core::TaylorError;

/// r(t)^2 = beta r0^2 e^{2 beta t} / (beta + |R| r0^2 (e^{2 beta t} - 1)), R < 0.
fn closed_form_radius(r0: f64, beta: f64, r: f64, t: f64) -> f64 {
    let e = (2.0 * beta * t).exp();
    (beta * r0 * r0 * e / (beta + r.abs() * r0 * r0 * (e - 1.0))).sqrt()
}

#[test]
fn integrator_matches_closed_form() {
    let (beta, r) = (0.04, -1.0);
    for r0 in [0.01, 0.15, 0.5] {
        let tr = integrate_reduced(r0 * 0.6, r0 * 0.8, beta, r, 200.0, 1e-3).unwrap();
        assert!(!tr.escaped);
        for s in tr.states.iter().step_by(5000) {
            let exact = closed_form_radius(r0, beta, r, s.t);
            assert!((s.radius() - exact).abs() < 1e-6, "t = {}: {} vs {}", s.t, s.radius(), exact);
        }
    }
}

#[test]
fn trajectories_settle_on_the_circle() {
    for (x0, y0) in [(1e-3, 0.0), (0.0, -0.5), (0.3, 0.3)] {
        let tr = integrate_reduced(x0, y0, 0.04, -1.0, 500.0, 1e-3).unwrap();
        assert!((tr.last().radius() - 0.2).abs() < 1e-6);
        assert!((tr.last().radius() - bifurcated_amplitude(0.04, -1.0).unwrap()).abs() < 1e-6);
    }
}

#[test]
fn rotation_commutes_with_the_flow() {
    let (x0, y0) = (0.05, 0.02);
    let base = integrate_reduced(x0, y0, 0.03, -2.0, 50.0, 1e-2).unwrap();
    for theta in [0.3, 1.7, -2.5] {
        let (s, c) = f64::sin_cos(theta);
        let rot = integrate_reduced(c * x0 - s * y0, s * x0 + c * y0, 0.03, -2.0, 50.0, 1e-2).unwrap();
        for (p, q) in base.states.iter().zip(&rot.states) {
            assert!((c * p.x - s * p.y - q.x).abs() < 1e-10);
            assert!((s * p.x + c * p.y - q.y).abs() < 1e-10);
        }
    }
}

#[test]
fn report_for_outer_cylinder_at_rest() {
    let g = build_grid(0.9, 48, Scheme::Collocation).unwrap();
    let o = DiffOperators::new(&g);
    let c = Coupling::Cylindrical { kappa: 1.0 };
    let cp = find_critical_coupled(c, &g, &o, &ScanOptions::default()).unwrap();
    let mode = solve_marginal_coupled(c, cp.a_c, &g, &o).unwrap();
    let adj = solve_adjoint_for(&mode, &g, &o).unwrap();
    let pes = pes_check(&mode, &adj, &g, &o).unwrap();
    let growth = growth_curve(c, cp.a_c, cp.lambda_c, &g, &o, 0.01, 3).unwrap();
    let (_, coef) = transition_coefficient(&mode, &adj, &g, &o).unwrap();
    let rep = assemble_report(&cp, &coef, &pes, &growth).unwrap();
    assert_eq!(rep.transition_type, TransitionType::TypeIContinuous);
    let law = rep.amplitude_law.as_ref().unwrap();
    let table = law.table();
    assert!(table.len() == 4);
    assert!(table.windows(2).all(|w| w[1][2] > w[0][2]));
    // the secondary flow shrinks to the basic flow at onset
    let near: Vec<f64> = [1e-2, 1e-3, 1e-4].iter().map(|d| law.radius(cp.lambda_c * (1.0 + d))).collect();
    assert!(near[0] > near[1] && near[1] > near[2] && (near[2] / near[0] - 0.1).abs() < 0.01);
    assert_eq!(law.radius(cp.lambda_c), 0.0);
    assert_eq!(rep.gauge.mode_gauge, 1.0);

    let other = growth_curve(c, cp.a_c * 1.01, cp.lambda_c, &g, &o, 0.01, 1).unwrap();
    assert!(matches!(assemble_report(&cp, &coef, &pes, &other), Err(TaylorError::MixedProvenance(_))));
    let rescaled = transition_coefficient(&mode, &adj.scaled(2.0), &g, &o).unwrap().1;
    assert!(matches!(assemble_report(&cp, &rescaled, &pes, &growth), Err(TaylorError::MixedProvenance(_))));
}
