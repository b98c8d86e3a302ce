//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

/// Second-order finite-difference value of lambda^2 for (D^2 - a^2)^3 h = -a^2 lambda^2 h on
/// [0, 1] with h = Dh = (D^2 - a^2)^2 h = 0 at both walls, by power iteration on
/// -a^2 L4^-1 L2^-1 (L2 Dirichlet, L4 clamped through a mirrored ghost node).
pub fn fd_convection_lambda_sq(a: f64, n: usize) -> f64 {
    let m = n - 1;
    let dx = 1.0 / n as f64;
    let (dx2, dx4) = (dx * dx, dx.powi(4));
    let mut d2 = DMatrix::zeros(m, m);
    let mut d4 = DMatrix::zeros(m, m);
    for i in 0..m {
        d2[(i, i)] = -2.0 / dx2;
        // h_{-1} = h_1 next to each wall closes Dh = 0
        d4[(i, i)] = if i == 0 || i == m - 1 { 7.0 } else { 6.0 } / dx4;
        for (off, c2, c4) in [(1usize, 1.0, -4.0), (2, 0.0, 1.0)] {
            if i >= off {
                d2[(i, i - off)] = c2 / dx2;
                d4[(i, i - off)] = c4 / dx4;
            }
            if i + off < m {
                d2[(i, i + off)] = c2 / dx2;
                d4[(i, i + off)] = c4 / dx4;
            }
        }
    }
    let id = DMatrix::<f64>::identity(m, m);
    let l2 = &d2 - &id * (a * a);
    let l4 = d4 - d2 * (2.0 * a * a) + id * a.powi(4);
    let lu2 = l2.lu();
    let lu4 = l4.lu();
    let mut v = DVector::from_fn(m, |i, _| ((i + 1) as f64 * dx * std::f64::consts::PI).sin());
    let mut mu = 0.0;
    for _ in 0..500 {
        let w = lu4.solve(&lu2.solve(&v).unwrap()).unwrap() * (-a * a);
        let next = w.dot(&v) / v.dot(&v);
        v = &w / w.norm();
        let done = (next - mu).abs() < 1e-15 * next.abs();
        mu = next;
        if done {
            break;
        }
    }
    1.0 / mu
}

/// Richardson extrapolation of the second-order values at n/2 and n.
pub fn fd_convection_lambda_sq_extrapolated(a: f64, n: usize) -> f64 {
    let coarse = fd_convection_lambda_sq(a, n / 2);
    let fine = fd_convection_lambda_sq(a, n);
    (4.0 * fine - coarse) / 3.0
}

/// Random axisymmetric field with harmonics 0..=kmax of base wavenumber `a`, discretely
/// divergence free, vanishing at both walls. The meridional part comes from a stream
/// function g with g = Dg = 0 at the walls: u_r = q g, u_z = -+ D_*g.
pub fn random_divfree_field(
    rng: &mut impl rand::Rng,
    grid: &taylor_core::radial_ops::RadialGrid,
    ops: &taylor_core::radial_ops::DiffOperators,
    a: f64,
    kmax: usize,
) -> taylor_core::centermanifold::TrigField {
    use taylor_core::radial_ops::Op;
    let (l, r1) = (grid.left, grid.right);
    let w = r1 - l;
    let mut poly = |power: i32| -> Vec<f64> {
        let c: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        grid.sample(|r| {
            let x = (r - l) / w;
            let bump = (x * (1.0 - x)).powi(power);
            bump * (c[0] + c[1] * x + c[2] * x * x + c[3] * x * x * x)
        })
    };
    let mut f = taylor_core::centermanifold::TrigField::zeros(a, kmax, grid.len());
    f.z.cos[0] = poly(1);
    f.theta.cos[0] = poly(1);
    for k in 1..=kmax {
        let q = k as f64 * a;
        let gc = poly(2);
        let gs = poly(2);
        f.z.sin[k] = ops.apply(Op::Dstar, &gc).iter().map(|v| -v / q).collect();
        f.r.cos[k] = gc;
        f.z.cos[k] = ops.apply(Op::Dstar, &gs).iter().map(|v| v / q).collect();
        f.r.sin[k] = gs;
        f.theta.cos[k] = poly(1);
        f.theta.sin[k] = poly(1);
    }
    f
}
