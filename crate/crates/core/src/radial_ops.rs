//! Radial discretisation on [eta, 1] (or the unit gap for planar systems): nodes,
//! r-weighted quadrature, differentiation matrices and boundary-row BVP solves.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Result, TaylorError};

pub const MIN_RESOLUTION: usize = 16;

/// Condition estimates above this are reported as singular.
pub const SINGULAR_CONDITION: f64 = 1e13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Chebyshev-Gauss-Lobatto collocation, nodes clustered at both walls.
    Collocation,
    /// Uniform second-order finite differences.
    FiniteDifference,
}

/// Cylindrical problems carry the r weight and the 1/r terms of D_*; the planar
/// narrow-gap systems drop both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Geometry {
    Cylindrical,
    Planar,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RadialGrid {
    pub left: f64,
    pub right: f64,
    /// Number of intervals; there are n + 1 nodes including both walls.
    pub n: usize,
    pub nodes: Vec<f64>,
    /// Quadrature weights for the integral of f(r) r dr (cylindrical) or f dr (planar).
    pub quad_weights: Vec<f64>,
    pub scheme: Scheme,
    pub geometry: Geometry,
}

/// Identity of a discretisation, carried by results so mixed inputs can be rejected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridTag {
    pub left: f64,
    pub right: f64,
    pub n: usize,
    pub scheme: Scheme,
    pub geometry: Geometry,
}

impl RadialGrid {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn eta(&self) -> f64 {
        self.left
    }

    /// Measure weight at node i (r for cylindrical, 1 for planar).
    pub fn weight_fn(&self, i: usize) -> f64 {
        match self.geometry {
            Geometry::Cylindrical => self.nodes[i],
            Geometry::Planar => 1.0,
        }
    }

    /// Sample a function on the nodes.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.nodes.iter().map(|&r| f(r)).collect()
    }

    /// Integral of f without the measure weight.
    pub fn integrate_plain(&self, f: &[f64]) -> f64 {
        (0..self.len()).map(|i| self.quad_weights[i] * f[i] / self.weight_fn(i)).sum()
    }

    pub fn integrate(&self, f: &[f64]) -> f64 {
        self.quad_weights.iter().zip(f).map(|(w, v)| w * v).sum()
    }

    pub fn interior(&self) -> std::ops::Range<usize> {
        1..self.n
    }

    pub fn tag(&self) -> GridTag {
        GridTag { left: self.left, right: self.right, n: self.n, scheme: self.scheme, geometry: self.geometry }
    }

    pub fn same_discretization(&self, other: &RadialGrid) -> bool {
        self.n == other.n
            && self.scheme == other.scheme
            && self.geometry == other.geometry
            && self.left == other.left
            && self.right == other.right
    }
}

/// Grid on [eta, 1] with the r-weighted measure.
pub fn build_grid(eta: f64, n: usize, scheme: Scheme) -> Result<RadialGrid> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(TaylorError::InvalidGeometry(format!("need 0 < eta < 1, got {eta}")));
    }
    build_interval_grid(eta, 1.0, n, scheme, Geometry::Cylindrical)
}

/// Grid on an arbitrary interval; planar geometry uses the unweighted measure.
pub fn build_interval_grid(
    left: f64,
    right: f64,
    n: usize,
    scheme: Scheme,
    geometry: Geometry,
) -> Result<RadialGrid> {
    if n < MIN_RESOLUTION {
        return Err(TaylorError::ResolutionTooLow { n, min: MIN_RESOLUTION });
    }
    if !(right > left) {
        return Err(TaylorError::InvalidArgument(format!("empty interval [{left}, {right}]")));
    }
    if geometry == Geometry::Cylindrical && left <= 0.0 {
        return Err(TaylorError::InvalidArgument("cylindrical grid must exclude the axis".into()));
    }
    let span = right - left;
    let (nodes, base_weights) = match scheme {
        Scheme::Collocation => {
            let nodes: Vec<f64> = (0..=n)
                .map(|j| {
                    if j == n {
                        right
                    } else {
                        let s = (j as f64 * PI / (2.0 * n as f64)).sin();
                        left + span * s * s
                    }
                })
                .collect();
            let w: Vec<f64> = clenshaw_curtis(n).into_iter().map(|w| w * span / 2.0).collect();
            (nodes, w)
        }
        Scheme::FiniteDifference => {
            if n % 2 != 0 {
                return Err(TaylorError::InvalidArgument(
                    "finite-difference grid needs an even interval count (Simpson weights)".into(),
                ));
            }
            let h = span / n as f64;
            let nodes: Vec<f64> = (0..=n).map(|j| if j == n { right } else { left + h * j as f64 }).collect();
            let w: Vec<f64> = (0..=n)
                .map(|j| {
                    let c = if j == 0 || j == n {
                        1.0
                    } else if j % 2 == 1 {
                        4.0
                    } else {
                        2.0
                    };
                    c * h / 3.0
                })
                .collect();
            (nodes, w)
        }
    };
    let quad_weights = match geometry {
        Geometry::Cylindrical => base_weights.iter().zip(&nodes).map(|(w, r)| w * r).collect(),
        Geometry::Planar => base_weights,
    };
    Ok(RadialGrid { left, right, n, nodes, quad_weights, scheme, geometry })
}

/// Clenshaw-Curtis weights on [-1, 1] for the n + 1 Chebyshev extreme points.
fn clenshaw_curtis(n: usize) -> Vec<f64> {
    let nf = n as f64;
    let mut w = vec![0.0; n + 1];
    let mut v = vec![1.0; n.saturating_sub(1)];
    if n % 2 == 0 {
        w[0] = 1.0 / (nf * nf - 1.0);
        w[n] = w[0];
        for k in 1..n / 2 {
            for (idx, vi) in v.iter_mut().enumerate() {
                let theta = PI * (idx + 1) as f64 / nf;
                *vi -= 2.0 * (2.0 * k as f64 * theta).cos() / (4.0 * (k * k) as f64 - 1.0);
            }
        }
        for (idx, vi) in v.iter_mut().enumerate() {
            let theta = PI * (idx + 1) as f64 / nf;
            *vi -= (nf * theta).cos() / (nf * nf - 1.0);
        }
    } else {
        w[0] = 1.0 / (nf * nf);
        w[n] = w[0];
        for k in 1..=(n - 1) / 2 {
            for (idx, vi) in v.iter_mut().enumerate() {
                let theta = PI * (idx + 1) as f64 / nf;
                *vi -= 2.0 * (2.0 * k as f64 * theta).cos() / (4.0 * (k * k) as f64 - 1.0);
            }
        }
    }
    for (idx, vi) in v.iter().enumerate() {
        w[idx + 1] = 2.0 * vi / nf;
    }
    w
}

/// First and second Chebyshev differentiation matrices for increasing nodes -cos(j pi / n)
/// on [-1, 1]; the second is built entrywise rather than as a product.
fn chebyshev_diff(n: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let nf = n as f64;
    let c = |i: usize| if i == 0 || i == n { 2.0 } else { 1.0 };
    let mut d = DMatrix::zeros(n + 1, n + 1);
    for i in 0..=n {
        for j in 0..=n {
            if i == j {
                continue;
            }
            // x_i - x_j for x_k = cos(k pi / n), via the product form to avoid cancellation
            let diff = 2.0 * (((i + j) as f64) * PI / (2.0 * nf)).sin() * (((j as f64) - (i as f64)) * PI / (2.0 * nf)).sin();
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            // derivative with respect to -x
            d[(i, j)] = -(c(i) / c(j)) * sign / diff;
        }
    }
    for i in 0..=n {
        let s: f64 = (0..=n).filter(|&j| j != i).map(|j| d[(i, j)]).sum();
        d[(i, i)] = -s;
    }
    // centro-antisymmetry: copy the upper half so rounding is mirrored exactly
    for i in 0..(n + 1) / 2 {
        for j in 0..=n {
            d[(n - i, n - j)] = -d[(i, j)];
        }
    }
    let mut d2 = DMatrix::zeros(n + 1, n + 1);
    for i in 0..=n {
        for j in 0..=n {
            if i == j {
                continue;
            }
            let diff = -2.0 * (((i + j) as f64) * PI / (2.0 * nf)).sin() * (((j as f64) - (i as f64)) * PI / (2.0 * nf)).sin();
            d2[(i, j)] = 2.0 * d[(i, j)] * (d[(i, i)] - 1.0 / diff);
        }
        let s: f64 = (0..=n).filter(|&j| j != i).map(|j| d2[(i, j)]).sum();
        d2[(i, i)] = -s;
    }
    for i in 0..(n + 1) / 2 {
        for j in 0..=n {
            d2[(n - i, n - j)] = d2[(i, j)];
        }
    }
    (d, d2)
}

fn fd_diff(nodes: &[f64]) -> DMatrix<f64> {
    let m = nodes.len();
    let h = nodes[1] - nodes[0];
    let mut d = DMatrix::zeros(m, m);
    d[(0, 0)] = -1.5 / h;
    d[(0, 1)] = 2.0 / h;
    d[(0, 2)] = -0.5 / h;
    for i in 1..m - 1 {
        d[(i, i - 1)] = -0.5 / h;
        d[(i, i + 1)] = 0.5 / h;
    }
    d[(m - 1, m - 1)] = 1.5 / h;
    d[(m - 1, m - 2)] = -2.0 / h;
    d[(m - 1, m - 3)] = 0.5 / h;
    d
}

/// Selector for [`DiffOperators::apply`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Op {
    D,
    Dstar,
    DDstar,
    /// D_* D = d^2/dr^2 + (1/r) d/dr
    DstarD,
    /// DD_* - q^2
    Helmholtz(f64),
    /// (DD_* - q^2)^2
    HelmholtzSquared(f64),
}

/// Discrete D, D_* = D + 1/r and their compositions on one grid.
#[derive(Debug, Clone)]
pub struct DiffOperators {
    pub d: DMatrix<f64>,
    pub dstar: DMatrix<f64>,
    pub dd_star: DMatrix<f64>,
    pub dstar_d: DMatrix<f64>,
    /// 1/r on the nodes (zeros for planar geometry).
    pub inv_r: Vec<f64>,
    pub nodes: Vec<f64>,
}

impl DiffOperators {
    pub fn new(grid: &RadialGrid) -> Self {
        let (d, d2) = match grid.scheme {
            Scheme::Collocation => {
                let s = 2.0 / (grid.right - grid.left);
                let (d, d2) = chebyshev_diff(grid.n);
                (d * s, Some(d2 * (s * s)))
            }
            Scheme::FiniteDifference => (fd_diff(&grid.nodes), None),
        };
        let inv_r: Vec<f64> = match grid.geometry {
            Geometry::Cylindrical => grid.nodes.iter().map(|r| 1.0 / r).collect(),
            Geometry::Planar => vec![0.0; grid.len()],
        };
        let mut dstar = d.clone();
        for (i, ir) in inv_r.iter().enumerate() {
            dstar[(i, i)] += ir;
        }
        let dd_star = match d2 {
            Some(mut m) => {
                // f'' + f'/r - f/r^2
                for i in 0..m.nrows() {
                    for j in 0..m.ncols() {
                        m[(i, j)] += inv_r[i] * d[(i, j)];
                    }
                    m[(i, i)] -= inv_r[i] * inv_r[i];
                }
                m
            }
            None => fd_dd_star(&grid.nodes, &inv_r),
        };
        let mut dstar_d = dd_star.clone();
        // D_* D = D D_* + 1/r^2
        for (i, ir) in inv_r.iter().enumerate() {
            dstar_d[(i, i)] += ir * ir;
        }
        Self { d, dstar, dd_star, dstar_d, inv_r, nodes: grid.nodes.clone() }
    }

    pub fn size(&self) -> usize {
        self.d.nrows()
    }

    /// DD_* - q^2 as a matrix.
    pub fn helmholtz(&self, q: f64) -> DMatrix<f64> {
        let mut m = self.dd_star.clone();
        for i in 0..m.nrows() {
            m[(i, i)] -= q * q;
        }
        m
    }

    /// Applies `op` to nodal values. The affine part c + b r fixed by the end values is
    /// differentiated in closed form and only the remainder goes through the matrices,
    /// which keeps rounding from the large wall rows out of nearly affine data.
    pub fn apply(&self, op: Op, f: &[f64]) -> Vec<f64> {
        let m = f.len();
        let (r0, r1) = (self.nodes[0], self.nodes[m - 1]);
        let b = (f[m - 1] - f[0]) / (r1 - r0);
        let c = f[0] - b * r0;
        let rest = DVector::from_iterator(m, f.iter().zip(&self.nodes).map(|(v, r)| v - c - b * r));
        let ir = &self.inv_r;
        let (mut out, affine): (DVector<f64>, Box<dyn Fn(usize) -> f64>) = match op {
            Op::D => (&self.d * &rest, Box::new(|_| b)),
            Op::Dstar => (&self.dstar * &rest, Box::new(|i| b + f[i] * ir[i] - ir[i] * rest[i])),
            Op::DDstar => (&self.dd_star * &rest, Box::new(|i| -c * ir[i] * ir[i])),
            Op::DstarD => (&self.dstar_d * &rest, Box::new(|i| b * ir[i])),
            Op::Helmholtz(q) => {
                let mut w = &self.dd_star * &rest;
                w.axpy(-q * q, &rest, 1.0);
                (w, Box::new(move |i| -c * ir[i] * ir[i] - q * q * (f[i] - rest[i])))
            }
            Op::HelmholtzSquared(q) => {
                let l = self.helmholtz(q);
                let v = DVector::from_column_slice(f);
                return (&l * (&l * v)).as_slice().to_vec();
            }
        };
        for i in 0..m {
            out[i] += affine(i);
        }
        out.as_slice().to_vec()
    }
}

/// Compact three-point D D_* = f'' + f'/r - f/r^2 for the finite-difference path.
fn fd_dd_star(nodes: &[f64], inv_r: &[f64]) -> DMatrix<f64> {
    let m = nodes.len();
    let h = nodes[1] - nodes[0];
    let mut a = DMatrix::zeros(m, m);
    for i in 1..m - 1 {
        a[(i, i - 1)] = 1.0 / (h * h) - 0.5 * inv_r[i] / h;
        a[(i, i)] = -2.0 / (h * h) - inv_r[i] * inv_r[i];
        a[(i, i + 1)] = 1.0 / (h * h) + 0.5 * inv_r[i] / h;
    }
    // wall rows are always replaced by boundary conditions; give them a one-sided stencil anyway
    for &(i, s) in &[(0usize, 1.0f64), (m - 1, -1.0)] {
        let j = |k: usize| if s > 0.0 { i + k } else { i - k };
        a[(i, j(0))] = 2.0 / (h * h) - inv_r[i] * inv_r[i] - s * 1.5 * inv_r[i] / h;
        a[(i, j(1))] = -5.0 / (h * h) + s * 2.0 * inv_r[i] / h;
        a[(i, j(2))] = 4.0 / (h * h) - s * 0.5 * inv_r[i] / h;
        a[(i, j(3))] = -1.0 / (h * h);
    }
    a
}

/// Integral of f g r dr (f g dr in planar geometry).
pub fn weighted_inner(f: &[f64], g: &[f64], grid: &RadialGrid) -> f64 {
    debug_assert_eq!(f.len(), grid.len());
    debug_assert_eq!(g.len(), grid.len());
    grid.quad_weights.iter().zip(f.iter().zip(g)).map(|(w, (a, b))| w * a * b).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Wall {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConstraintKind {
    Value,
    Derivative,
}

/// One boundary row: constrains `unknown` and overwrites the wall row of `equation`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Constraint {
    pub equation: usize,
    pub unknown: usize,
    pub kind: ConstraintKind,
    pub wall: Wall,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryConditionSet {
    pub constraints: Vec<Constraint>,
}

impl BoundaryConditionSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Homogeneous Dirichlet on one unknown, closing its own equation.
    pub fn dirichlet(mut self, unknown: usize) -> Self {
        for wall in [Wall::Left, Wall::Right] {
            self.constraints.push(Constraint { equation: unknown, unknown, kind: ConstraintKind::Value, wall });
        }
        self
    }

    /// Clamped pair f = Df = 0: values close `value_eq`, derivatives close `deriv_eq`.
    pub fn clamped(mut self, unknown: usize, value_eq: usize, deriv_eq: usize) -> Self {
        for wall in [Wall::Left, Wall::Right] {
            self.constraints.push(Constraint { equation: value_eq, unknown, kind: ConstraintKind::Value, wall });
            self.constraints.push(Constraint { equation: deriv_eq, unknown, kind: ConstraintKind::Derivative, wall });
        }
        self
    }

    /// Each equation block of a second-order system needs one row per wall.
    pub fn check_closes(&self, blocks: usize) -> Result<()> {
        for eq in 0..blocks {
            for wall in [Wall::Left, Wall::Right] {
                let k = self.constraints.iter().filter(|c| c.equation == eq && c.wall == wall).count();
                if k != 1 {
                    return Err(TaylorError::InvalidArgument(format!(
                        "equation block {eq} has {k} boundary rows at {wall:?}, expected 1"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Overwrite the wall rows of a block operator (and zero the matching rhs entries).
    pub fn embed(&self, ops: &DiffOperators, matrix: &mut DMatrix<f64>, rhs: Option<&mut DVector<f64>>) {
        let m = ops.size();
        for c in &self.constraints {
            let node = match c.wall {
                Wall::Left => 0,
                Wall::Right => m - 1,
            };
            let row = c.equation * m + node;
            matrix.row_mut(row).fill(0.0);
            match c.kind {
                ConstraintKind::Value => matrix[(row, c.unknown * m + node)] = 1.0,
                ConstraintKind::Derivative => {
                    for j in 0..m {
                        matrix[(row, c.unknown * m + j)] = ops.d[(node, j)];
                    }
                }
            }
        }
        if let Some(rhs) = rhs {
            for c in &self.constraints {
                let node = match c.wall {
                    Wall::Left => 0,
                    Wall::Right => m - 1,
                };
                rhs[c.equation * m + node] = 0.0;
            }
        }
    }

    /// Zero the wall rows of a mass or coupling matrix.
    pub fn clear_rows(&self, m: usize, matrix: &mut DMatrix<f64>) {
        for c in &self.constraints {
            let node = match c.wall {
                Wall::Left => 0,
                Wall::Right => m - 1,
            };
            matrix.row_mut(c.equation * m + node).fill(0.0);
        }
    }

    pub fn is_boundary_row(&self, m: usize, row: usize) -> bool {
        self.constraints.iter().any(|c| {
            let node = match c.wall {
                Wall::Left => 0,
                Wall::Right => m - 1,
            };
            c.equation * m + node == row
        })
    }
}

#[derive(Debug, Clone)]
pub struct BvpSolution {
    pub x: Vec<f64>,
    /// Relative interior residual of the solve.
    pub residual: f64,
    pub condition: f64,
}

impl BvpSolution {
    /// Block `k` of a multi-unknown solution.
    pub fn block(&self, k: usize, m: usize) -> &[f64] {
        &self.x[k * m..(k + 1) * m]
    }
}

/// Cheap infinity-norm condition estimate from a few solves with the factorisation.
pub(crate) fn condition_estimate(a: &DMatrix<f64>, lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>) -> f64 {
    let n = a.nrows();
    let norm_a = (0..n).map(|i| a.row(i).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let mut worst: f64 = 0.0;
    let probes = [
        DVector::from_fn(n, |_, _| 1.0),
        DVector::from_fn(n, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 }),
        DVector::from_fn(n, |i, _| ((i as f64) * 0.7131).sin()),
    ];
    for b in probes.iter() {
        match lu.solve(b) {
            Some(x) => {
                let ratio = x.amax() / b.amax().max(f64::MIN_POSITIVE);
                if !ratio.is_finite() {
                    return f64::INFINITY;
                }
                worst = worst.max(ratio);
            }
            None => return f64::INFINITY,
        }
    }
    norm_a * worst
}

/// Solve a square block operator after boundary-row replacement.
///
/// `operator` is (blocks * m) square in node ordering per block; `rhs` has the same length.
pub fn solve_linear_bvp(
    ops: &DiffOperators,
    operator: &DMatrix<f64>,
    bcs: &BoundaryConditionSet,
    rhs: &[f64],
) -> Result<BvpSolution> {
    let m = ops.size();
    let size = operator.nrows();
    if operator.ncols() != size || size % m != 0 || rhs.len() != size {
        return Err(TaylorError::InvalidArgument("operator/rhs shape mismatch".into()));
    }
    bcs.check_closes(size / m)?;
    let mut a = operator.clone();
    let mut b = DVector::from_column_slice(rhs);
    bcs.embed(ops, &mut a, Some(&mut b));
    // equilibrate rows so the condition estimate is not dominated by the wall-clustered rows
    let mut scaled = a.clone();
    let mut sb = b.clone();
    for i in 0..size {
        let s = scaled.row(i).iter().map(|v| v.abs()).sum::<f64>();
        if s > 0.0 {
            scaled.row_mut(i).scale_mut(1.0 / s);
            sb[i] /= s;
        }
    }
    let lu = scaled.clone().lu();
    let condition = condition_estimate(&scaled, &lu);
    if !(condition < SINGULAR_CONDITION) {
        return Err(TaylorError::SingularOperator { condition });
    }
    let x = lu.solve(&sb).ok_or(TaylorError::SingularOperator { condition: f64::INFINITY })?;
    let r = &a * &x - &b;
    let mut rnorm: f64 = 0.0;
    let mut bnorm: f64 = 0.0;
    for i in 0..size {
        if bcs.is_boundary_row(m, i) {
            continue;
        }
        rnorm = rnorm.max(r[i].abs());
        bnorm = bnorm.max(b[i].abs());
    }
    let residual = if bnorm > 0.0 { rnorm / bnorm } else { rnorm };
    Ok(BvpSolution { x: x.as_slice().to_vec(), residual, condition })
}

/// Solve DD_* u = f with u = 0 at both walls.
pub fn solve_dirichlet_ddstar(ops: &DiffOperators, f: &[f64]) -> Result<BvpSolution> {
    solve_linear_bvp(ops, &ops.dd_star, &BoundaryConditionSet::new().dirichlet(0), f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cheb(eta: f64, n: usize) -> (RadialGrid, DiffOperators) {
        let g = build_grid(eta, n, Scheme::Collocation).unwrap();
        let o = DiffOperators::new(&g);
        (g, o)
    }

    #[test]
    fn quadrature_moments() {
        for scheme in [Scheme::Collocation, Scheme::FiniteDifference] {
            let g = build_grid(0.5, 64, scheme).unwrap();
            let ones = vec![1.0; g.len()];
            assert!((g.integrate(&ones) - 0.375).abs() < 1e-12, "{scheme:?}");
            let r = g.sample(|r| r);
            assert!((g.integrate(&r) - (1.0 - 0.125) / 3.0).abs() < 1e-12, "{scheme:?}");
            let inv = g.sample(|r| 1.0 / r);
            assert!((g.integrate(&inv) - 0.5).abs() < 1e-12, "{scheme:?}");
            assert!((weighted_inner(&ones, &inv, &g) - 0.5).abs() < 1e-12);
            assert!((weighted_inner(&ones, &ones, &g) - 0.375).abs() < 1e-12);
        }
    }

    #[test]
    fn nodes_strictly_increasing_and_span_interval() {
        for scheme in [Scheme::Collocation, Scheme::FiniteDifference] {
            let g = build_grid(0.3, 32, scheme).unwrap();
            assert_eq!(g.nodes[0], 0.3);
            assert_eq!(*g.nodes.last().unwrap(), 1.0);
            assert!(g.nodes.windows(2).all(|w| w[1] > w[0]));
        }
    }

    #[test]
    fn resolution_floor() {
        assert!(matches!(
            build_grid(0.5, 8, Scheme::Collocation),
            Err(TaylorError::ResolutionTooLow { n: 8, .. })
        ));
    }

    #[test]
    fn weighted_inner_against_fine_composite_rule() {
        let eta = 0.4;
        let f = |r: f64| (3.0 * r).sin() * (r - eta);
        let g = |r: f64| (1.0 - r) * r.exp();
        // oracle: 10000-panel composite Simpson on f g r
        let m = 10_000;
        let h = (1.0 - eta) / m as f64;
        let mut oracle = 0.0;
        for k in 0..=m {
            let r = eta + h * k as f64;
            let c = if k == 0 || k == m { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
            oracle += c * f(r) * g(r) * r;
        }
        oracle *= h / 3.0;
        let (grid, _) = cheb(eta, 32);
        let val = weighted_inner(&grid.sample(f), &grid.sample(g), &grid);
        assert!((val - oracle).abs() < 1e-12 * oracle.abs().max(1.0));
        let fd = build_grid(eta, 256, Scheme::FiniteDifference).unwrap();
        let val_fd = weighted_inner(&fd.sample(f), &fd.sample(g), &fd);
        assert!((val_fd - oracle).abs() < 1e-8);
    }

    #[test]
    fn operator_examples() {
        let (g, o) = cheb(0.5, 32);
        let r2 = g.sample(|r| r * r);
        let d = o.apply(Op::D, &r2);
        for (i, r) in g.nodes.iter().enumerate() {
            assert!((d[i] - 2.0 * r).abs() < 1e-11);
        }
        let r1 = g.sample(|r| r);
        let ds = o.apply(Op::Dstar, &r1);
        assert!(ds.iter().all(|v| (v - 2.0).abs() < 1e-11));
        let dd = o.apply(Op::DDstar, &r1);
        assert!(dd.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn ddstar_annihilates_r_at_n64() {
        for eta in [0.5, 0.9, 0.98] {
            let (g, o) = cheb(eta, 64);
            let dd = o.apply(Op::DDstar, &g.sample(|r| r));
            let sup = g.interior().map(|i| dd[i].abs()).fold(0.0, f64::max);
            assert!(sup < 1e-9, "eta = {eta}: {sup:e}");
        }
    }

    #[test]
    fn finite_difference_converges_at_second_order() {
        let f = |r: f64| (2.0 * r).sin();
        let exact = |r: f64| -4.0 * (2.0 * r).sin() + 2.0 * (2.0 * r).cos() / r - (2.0 * r).sin() / (r * r);
        let err = |n: usize| {
            let g = build_grid(0.5, n, Scheme::FiniteDifference).unwrap();
            let o = DiffOperators::new(&g);
            let v = o.apply(Op::DDstar, &g.sample(f));
            g.interior().map(|i| (v[i] - exact(g.nodes[i])).abs()).fold(0.0, f64::max)
        };
        let ratio = err(64) / err(128);
        assert!((ratio - 4.0).abs() < 0.4, "ratio {ratio}");
    }

    #[test]
    fn discrete_integration_by_parts() {
        let eta = 0.6;
        let (g, o) = cheb(eta, 48);
        let f = g.sample(|r| (r - eta) * (1.0 - r) * (5.0 * r).cos());
        let h = g.sample(|r| (r - eta) * (1.0 - r).powi(2) * r.exp());
        let dsf = o.apply(Op::Dstar, &f);
        let dh = o.apply(Op::D, &h);
        let s = weighted_inner(&dsf, &h, &g) + weighted_inner(&f, &dh, &g);
        assert!(s.abs() < 1e-8, "{s:e}");
    }

    #[test]
    fn manufactured_ddstar_solution() {
        let eta = 0.5;
        let (g, o) = cheb(eta, 128);
        // u = (r - eta)^2 (1 - r)^2; DD_* u = u'' + u'/r - u/r^2
        let u = |r: f64| (r - eta).powi(2) * (1.0 - r).powi(2);
        let du = |r: f64| 2.0 * (r - eta) * (1.0 - r).powi(2) - 2.0 * (r - eta).powi(2) * (1.0 - r);
        let d2u = |r: f64| {
            2.0 * (1.0 - r).powi(2) - 8.0 * (r - eta) * (1.0 - r) + 2.0 * (r - eta).powi(2)
        };
        let rhs = g.sample(|r| d2u(r) + du(r) / r - u(r) / (r * r));
        let sol = solve_dirichlet_ddstar(&o, &rhs).unwrap();
        let err = g.nodes.iter().zip(&sol.x).map(|(r, x)| (x - u(*r)).abs()).fold(0.0, f64::max);
        assert!(err < 1e-8, "{err:e}");
        assert!(sol.residual < 1e-10);
    }

    #[test]
    fn zero_forcing_gives_zero() {
        let (_, o) = cheb(0.7, 32);
        let sol = solve_dirichlet_ddstar(&o, &vec![0.0; 33]).unwrap();
        assert!(sol.x.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn singular_operator_detected() {
        // D_* D with Neumann rows on both walls has constants in its kernel
        let (g, o) = cheb(0.5, 32);
        let mut bcs = BoundaryConditionSet::new();
        for wall in [Wall::Left, Wall::Right] {
            bcs.constraints.push(Constraint { equation: 0, unknown: 0, kind: ConstraintKind::Derivative, wall });
        }
        let rhs = g.sample(|r| r);
        let err = solve_linear_bvp(&o, &o.dstar_d, &bcs, &rhs).unwrap_err();
        assert!(matches!(err, TaylorError::SingularOperator { .. }));
    }

    #[test]
    fn boundary_set_must_close_every_block() {
        let bcs = BoundaryConditionSet::new().dirichlet(0);
        assert!(bcs.check_closes(1).is_ok());
        assert!(bcs.check_closes(2).is_err());
        let clamped = BoundaryConditionSet::new().clamped(0, 0, 1);
        assert!(clamped.check_closes(2).is_ok());
    }
}
