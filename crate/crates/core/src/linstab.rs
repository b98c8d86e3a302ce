//! Marginal stability of the axisymmetric mode, its adjoint, the critical wavenumber
//! search, growth rates and the exchange-of-stability checks.
//!
//! Every problem is carried in the block unknowns [h, g, phi] with g = (DD_* - a^2) h,
//! wall rows h = 0 (first block), Dh = 0 (second block) and phi = 0 (third block).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Result, TaylorError};
use crate::params::NondimParams;
use crate::radial_ops::{
    build_interval_grid, weighted_inner, BoundaryConditionSet, DiffOperators, Geometry, GridTag, Op, RadialGrid,
};

/// Resolution of the dense solve that locates eigenvalues before refinement.
pub const COARSE_RESOLUTION: usize = 32;
pub const DEFAULT_A_RANGE: (f64, f64) = (1.0, 8.0);
pub const DEFAULT_SCAN_SAMPLES: usize = 29;
pub const DEFAULT_SEARCH_TOL: f64 = 1e-6;
/// Relative gap lambda_2/lambda_1 - 1 below which a mode is flagged near-degenerate.
pub const DEFAULT_GAP_MARGIN: f64 = 1e-3;
pub const ADJOINT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NarrowGapVariant {
    /// Weight 1 - (1 - mu) x on the buoyancy-like term.
    Full,
    /// Weight 1, the rigid-rigid convection problem.
    Symmetric,
}

/// Rotational coupling of the marginal problem:
/// (DD_* - a^2)^2 h = a^2 lambda c_r phi and (DD_* - a^2) phi = -lambda c_theta h.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "system", rename_all = "snake_case")]
pub enum Coupling {
    /// c_r = 1/r^2 - kappa, c_theta = kappa on [eta, 1].
    Cylindrical { kappa: f64 },
    /// Gap coordinate x in [0, 1], c_theta = 1.
    NarrowGap { mu: f64, variant: NarrowGapVariant },
}

impl Coupling {
    pub fn c_r(&self, r: f64) -> f64 {
        match *self {
            Coupling::Cylindrical { kappa } => 1.0 / (r * r) - kappa,
            Coupling::NarrowGap { variant: NarrowGapVariant::Symmetric, .. } => 1.0,
            Coupling::NarrowGap { mu, variant: NarrowGapVariant::Full } => 1.0 - (1.0 - mu) * r,
        }
    }

    pub fn c_theta(&self, _r: f64) -> f64 {
        match *self {
            Coupling::Cylindrical { kappa } => kappa,
            Coupling::NarrowGap { .. } => 1.0,
        }
    }

    pub fn geometry(&self) -> Geometry {
        match self {
            Coupling::Cylindrical { .. } => Geometry::Cylindrical,
            Coupling::NarrowGap { .. } => Geometry::Planar,
        }
    }

    fn check_grid(&self, grid: &RadialGrid) -> Result<()> {
        if grid.geometry != self.geometry() {
            return Err(TaylorError::InvalidArgument(format!(
                "{:?} coupling needs a {:?} grid",
                self,
                self.geometry()
            )));
        }
        if let Coupling::NarrowGap { .. } = self {
            if grid.left != 0.0 || grid.right != 1.0 {
                return Err(TaylorError::InvalidArgument("narrow-gap systems live on [0, 1]".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// max h = 1 with h positive at the mid-gap node.
    MaxH,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityMode {
    pub a: f64,
    pub lambda0: f64,
    pub h: Vec<f64>,
    pub phi: Vec<f64>,
    pub normalization: Normalization,
    /// Factor applied on top of the normalisation; 1 unless rescaled.
    pub gauge: f64,
    pub coupling: Coupling,
    pub grid: GridTag,
    /// Normwise backward errors of the fourth-order and second-order equations.
    pub residuals: [f64; 2],
    /// lambda_2 / lambda_1 - 1 on the coarse spectrum (infinite without a second value).
    pub spectral_gap: f64,
    pub near_degenerate: bool,
    /// Counter-rotation: positivity arguments do not apply.
    pub pes_unverified: bool,
}

impl StabilityMode {
    pub fn period(&self) -> f64 {
        2.0 * PI / self.a
    }

    pub fn scaled(&self, c: f64) -> Self {
        let mut m = self.clone();
        m.h.iter_mut().for_each(|v| *v *= c);
        m.phi.iter_mut().for_each(|v| *v *= c);
        m.gauge *= c;
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjointMode {
    pub a: f64,
    pub lambda0: f64,
    /// Marginal value found by the adjoint solve itself.
    pub adjoint_lambda: f64,
    pub hstar: Vec<f64>,
    pub phistar: Vec<f64>,
    pub normalization: Normalization,
    pub gauge: f64,
    pub coupling: Coupling,
    pub grid: GridTag,
    pub residuals: [f64; 2],
}

impl AdjointMode {
    pub fn scaled(&self, c: f64) -> Self {
        let mut m = self.clone();
        m.hstar.iter_mut().for_each(|v| *v *= c);
        m.phistar.iter_mut().for_each(|v| *v *= c);
        m.gauge *= c;
        m
    }
}

fn block_bcs() -> BoundaryConditionSet {
    BoundaryConditionSet::new().clamped(0, 0, 1).dirichlet(2)
}

/// (p, q) in L g = lambda p phi, L phi = -lambda q h. The adjoint swaps the roles.
fn coefficients(coupling: &Coupling, grid: &RadialGrid, a: f64, adjoint: bool) -> (Vec<f64>, Vec<f64>) {
    let cr: Vec<f64> = grid.nodes.iter().map(|&r| a * a * coupling.c_r(r)).collect();
    let ct: Vec<f64> = grid.nodes.iter().map(|&r| coupling.c_theta(r)).collect();
    if adjoint {
        (ct, cr)
    } else {
        (cr, ct)
    }
}

/// Pencil K0 x = lambda K1 x with the wall rows embedded in K0 and cleared in K1.
///
/// Rows are equilibrated (unit absolute row sum of K0) so value rows, derivative rows
/// and collocation rows carry comparable weight in backward-error tests. The row
/// scales are returned for the mass matrix of the growth problem.
fn marginal_pencil(ops: &DiffOperators, a: f64, p: &[f64], q: &[f64]) -> (DMatrix<f64>, DMatrix<f64>, Vec<f64>) {
    let m = ops.size();
    let l = ops.helmholtz(a);
    let mut k0 = DMatrix::zeros(3 * m, 3 * m);
    let mut k1 = DMatrix::zeros(3 * m, 3 * m);
    for b in 0..3 {
        k0.view_mut((b * m, b * m), (m, m)).copy_from(&l);
    }
    for i in 0..m {
        k0[(i, m + i)] = -1.0;
        k1[(m + i, 2 * m + i)] = p[i];
        k1[(2 * m + i, i)] = -q[i];
    }
    let bc = block_bcs();
    bc.embed(ops, &mut k0, None);
    bc.clear_rows(m, &mut k1);
    let scales: Vec<f64> = k0.row_iter().map(|r| 1.0 / r.iter().map(|v| v.abs()).sum::<f64>()).collect();
    for (i, s) in scales.iter().enumerate() {
        k0.row_mut(i).scale_mut(*s);
        k1.row_mut(i).scale_mut(*s);
    }
    (k0, k1, scales)
}

/// Unembedded block operator of the steady forced problem at axial wavenumber q:
/// L F - g = 0, L g - lambda q^2 c_r Theta = f_1, L Theta + lambda c_theta F = f_2,
/// with the wall rows of [`block_bcs`] still to be embedded by the solver.
pub(crate) fn forced_operator(
    coupling: &Coupling,
    q: f64,
    lambda: f64,
    grid: &RadialGrid,
    ops: &DiffOperators,
) -> (DMatrix<f64>, BoundaryConditionSet) {
    let m = ops.size();
    let l = ops.helmholtz(q);
    let mut k = DMatrix::zeros(3 * m, 3 * m);
    for b in 0..3 {
        k.view_mut((b * m, b * m), (m, m)).copy_from(&l);
    }
    for (i, &r) in grid.nodes.iter().enumerate() {
        k[(i, m + i)] = -1.0;
        k[(m + i, 2 * m + i)] = -lambda * q * q * coupling.c_r(r);
        k[(2 * m + i, i)] = lambda * coupling.c_theta(r);
    }
    (k, block_bcs())
}

/// Identity on the interior rows of the g and phi blocks, with the pencil's row scales.
fn growth_mass(m: usize, scales: &[f64]) -> DMatrix<f64> {
    let mut mass = DMatrix::zeros(3 * m, 3 * m);
    for i in m..3 * m {
        mass[(i, i)] = scales[i];
    }
    block_bcs().clear_rows(m, &mut mass);
    mass
}

fn inf_norm(a: &DMatrix<f64>) -> f64 {
    a.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Finite eigenvalues theta of A x = theta B x as (re, im), via the spectrum of (A - sigma B)^-1 B.
///
/// Values of (A - sigma B)^-1 B below `cut` times the largest are discarded: they belong to
/// the infinite eigenvalues of a singular B, which rounding turns into huge spurious ones.
fn dense_pencil_eigs(a: &DMatrix<f64>, b: &DMatrix<f64>, sigma: f64, cut: f64) -> Result<Vec<(f64, f64)>> {
    let shifted = a - b * sigma;
    let c = shifted
        .lu()
        .solve(b)
        .ok_or_else(|| TaylorError::EigenFailure("shifted pencil singular".into()))?;
    let schur = nalgebra::Schur::try_new(c, f64::EPSILON, 100_000)
        .ok_or_else(|| TaylorError::EigenFailure("Schur iteration did not converge".into()))?;
    let nus = schur.complex_eigenvalues();
    let big = nus.iter().map(|z| z.norm()).fold(0.0, f64::max);
    Ok(nus
        .iter()
        .filter(|z| z.norm() > cut * big)
        .map(|z| {
            let d = z.norm_sqr();
            (sigma + z.re / d, -z.im / d)
        })
        .collect())
}

fn backward_error(a: &DMatrix<f64>, b: &DMatrix<f64>, theta: f64, x: &DVector<f64>, na: f64, nb: f64) -> f64 {
    let r = a * x - (b * x) * theta;
    r.amax() / ((na + theta.abs() * nb) * x.amax())
}

/// Shift-invert iteration for the real eigenvalue of A x = theta B x nearest `sigma0`.
fn refine_real(a: &DMatrix<f64>, b: &DMatrix<f64>, sigma0: f64) -> Result<(f64, DVector<f64>)> {
    let n = a.nrows();
    let (na, nb) = (inf_norm(a), inf_norm(b));
    let mut x = DVector::from_fn(n, |i, _| 1.0 + 0.25 * ((i as f64) * 0.377).sin());
    let mut sigma = sigma0;
    let mut best = (f64::INFINITY, sigma0, x.clone());
    for _ in 0..12 {
        let lu = (a - b * sigma).lu();
        let mut theta = sigma;
        for _ in 0..4 {
            let y = match lu.solve(&(b * &x)) {
                Some(y) if y.iter().all(|v| v.is_finite()) => y,
                _ => break,
            };
            let nu = x.dot(&y) / x.dot(&x);
            if nu == 0.0 || !nu.is_finite() {
                break;
            }
            theta = sigma + 1.0 / nu;
            let k = y.iamax();
            x = &y / y[k];
            let err = backward_error(a, b, theta, &x, na, nb);
            if err < best.0 {
                best = (err, theta, x.clone());
            }
            if err < 1e-14 {
                return Ok((theta, x));
            }
        }
        sigma = if theta == sigma { sigma * (1.0 + 1e-12) + 1e-14 } else { theta };
    }
    if best.0 < 1e-11 {
        Ok((best.1, best.2))
    } else {
        Err(TaylorError::EigenFailure(format!(
            "shift-invert stalled near {sigma0} (backward error {:.2e})",
            best.0
        )))
    }
}

fn coarse_grid(grid: &RadialGrid) -> Result<RadialGrid> {
    let n = COARSE_RESOLUTION.min(grid.n);
    build_interval_grid(grid.left, grid.right, n, grid.scheme, grid.geometry)
}

struct MarginalSolution {
    lambda: f64,
    x: DVector<f64>,
    residuals: [f64; 2],
    gap: f64,
}

/// Positive real marginal values of the coarse problem, ascending.
fn coarse_marginal_values(coupling: &Coupling, a: f64, grid: &RadialGrid, adjoint: bool) -> Result<Vec<f64>> {
    let cg = coarse_grid(grid)?;
    let cops = DiffOperators::new(&cg);
    let (p, q) = coefficients(coupling, &cg, a, adjoint);
    let (k0, k1, _) = marginal_pencil(&cops, a, &p, &q);
    let eigs = dense_pencil_eigs(&k0, &k1, 0.0, 1e-7)?;
    let mut real: Vec<f64> =
        eigs.iter().filter(|(re, im)| *re > 0.0 && im.abs() <= 1e-6 * re.abs()).map(|(re, _)| *re).collect();
    real.sort_by(|x, y| x.partial_cmp(y).unwrap());
    // the leading pair is the one of smallest modulus; only it can signal a complex crossing
    let lead = eigs.iter().map(|(re, im)| re.hypot(*im)).fold(f64::INFINITY, f64::min);
    let complex = eigs.iter().find(|(re, im)| {
        re.hypot(*im) <= lead * (1.0 + 1e-6) && *re > 1e-6 * im.abs() && im.abs() > 1e-6 * re.abs()
    });
    if let Some(&(re, im)) = complex {
        return Err(TaylorError::ComplexMarginal { re, im });
    }
    if real.is_empty() {
        return Err(TaylorError::NoMarginalValue { a });
    }
    Ok(real)
}

fn marginal_core(
    coupling: &Coupling,
    a: f64,
    grid: &RadialGrid,
    ops: &DiffOperators,
    adjoint: bool,
) -> Result<MarginalSolution> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(TaylorError::InvalidArgument(format!("wavenumber must be positive, got {a}")));
    }
    coupling.check_grid(grid)?;
    let coarse = coarse_marginal_values(coupling, a, grid, adjoint)?;
    let gap = coarse.get(1).map_or(f64::INFINITY, |l2| l2 / coarse[0] - 1.0);
    let (p, q) = coefficients(coupling, grid, a, adjoint);
    let (k0, k1, _) = marginal_pencil(ops, a, &p, &q);
    let (lambda, x) = refine_real(&k0, &k1, coarse[0])?;
    if !(lambda > 0.0) {
        return Err(TaylorError::NoMarginalValue { a });
    }
    let m = ops.size();
    let r = &k0 * &x - (&k1 * &x) * lambda;
    let scale = (inf_norm(&k0) + lambda * inf_norm(&k1)) * x.amax();
    let fourth = r.rows(0, 2 * m).amax() / scale;
    let second = r.rows(2 * m, m).amax() / scale;
    Ok(MarginalSolution { lambda, x, residuals: [fourth, second], gap })
}

/// Scale so that max |f| = 1 and f is positive at the mid-gap node.
fn gauge_factor(f: &[f64], grid: &RadialGrid) -> f64 {
    let mid = 0.5 * (grid.left + grid.right);
    let k = (0..grid.len())
        .min_by(|&i, &j| (grid.nodes[i] - mid).abs().partial_cmp(&(grid.nodes[j] - mid).abs()).unwrap())
        .unwrap();
    let big = f.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let sign = if f[k] != 0.0 {
        f[k].signum()
    } else {
        f.iter().copied().max_by(|x, y| x.abs().partial_cmp(&y.abs()).unwrap()).unwrap_or(1.0).signum()
    };
    sign / big
}

/// Profiles as stored: gauge applied and the Dirichlet wall values pinned to zero.
fn profile(x: &DVector<f64>, block: usize, m: usize, s: f64) -> Vec<f64> {
    let mut f: Vec<f64> = x.rows(block * m, m).iter().map(|v| v * s).collect();
    f[0] = 0.0;
    f[m - 1] = 0.0;
    f
}

fn mu_of(coupling: &Coupling, mu: Option<f64>) -> bool {
    match coupling {
        Coupling::NarrowGap { mu, .. } => *mu < 0.0,
        Coupling::Cylindrical { .. } => mu.is_some_and(|m| m < 0.0),
    }
}

/// Marginal mode for an explicit coupling.
pub fn solve_marginal_coupled(
    coupling: Coupling,
    a: f64,
    grid: &RadialGrid,
    ops: &DiffOperators,
) -> Result<StabilityMode> {
    let sol = marginal_core(&coupling, a, grid, ops, false)?;
    let m = ops.size();
    let s = gauge_factor(&profile(&sol.x, 0, m, 1.0), grid);
    Ok(StabilityMode {
        a,
        lambda0: sol.lambda,
        h: profile(&sol.x, 0, m, s),
        phi: profile(&sol.x, 2, m, s),
        normalization: Normalization::MaxH,
        gauge: 1.0,
        coupling,
        grid: grid.tag(),
        residuals: sol.residuals,
        spectral_gap: sol.gap,
        near_degenerate: sol.gap < DEFAULT_GAP_MARGIN,
        pes_unverified: mu_of(&coupling, None),
    })
}

/// Smallest positive marginal value of the full problem at wavenumber `a`.
pub fn solve_marginal(params: &NondimParams, a: f64, grid: &RadialGrid, ops: &DiffOperators) -> Result<StabilityMode> {
    let mut mode = solve_marginal_coupled(Coupling::Cylindrical { kappa: params.kappa }, a, grid, ops)?;
    mode.pes_unverified = params.mu < 0.0;
    if mode.pes_unverified {
        log::warn!("mu = {} < 0: exchange of stabilities unverified", params.mu);
    }
    Ok(mode)
}

/// Narrow-gap marginal mode on the gap coordinate [0, 1].
pub fn solve_marginal_narrowgap(
    mu: f64,
    a: f64,
    grid: &RadialGrid,
    ops: &DiffOperators,
    variant: NarrowGapVariant,
) -> Result<StabilityMode> {
    solve_marginal_coupled(Coupling::NarrowGap { mu, variant }, a, grid, ops)
}

/// Adjoint mode at the marginal value `lambda0`, found by an independent eigensolve.
pub fn solve_adjoint_coupled(
    coupling: Coupling,
    a: f64,
    lambda0: f64,
    grid: &RadialGrid,
    ops: &DiffOperators,
) -> Result<AdjointMode> {
    let sol = marginal_core(&coupling, a, grid, ops, true)?;
    let rel = (sol.lambda - lambda0).abs() / lambda0.abs();
    if !(rel <= ADJOINT_TOL) {
        return Err(TaylorError::AdjointMismatch { rel });
    }
    let m = ops.size();
    let s = gauge_factor(&profile(&sol.x, 0, m, 1.0), grid);
    Ok(AdjointMode {
        a,
        lambda0,
        adjoint_lambda: sol.lambda,
        hstar: profile(&sol.x, 0, m, s),
        phistar: profile(&sol.x, 2, m, s),
        normalization: Normalization::MaxH,
        gauge: 1.0,
        coupling,
        grid: grid.tag(),
        residuals: sol.residuals,
    })
}

pub fn solve_adjoint(
    params: &NondimParams,
    a: f64,
    lambda0: f64,
    grid: &RadialGrid,
    ops: &DiffOperators,
) -> Result<AdjointMode> {
    solve_adjoint_coupled(Coupling::Cylindrical { kappa: params.kappa }, a, lambda0, grid, ops)
}

/// Adjoint partner of an already computed mode.
pub fn solve_adjoint_for(mode: &StabilityMode, grid: &RadialGrid, ops: &DiffOperators) -> Result<AdjointMode> {
    solve_adjoint_coupled(mode.coupling, mode.a, mode.lambda0, grid, ops)
}

/// Wavenumber scan. `a_min`/`a_max` are in units of the inverse gap width, so the same
/// range serves every radius ratio; results are reported in the grid's own units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanOptions {
    pub a_min: f64,
    pub a_max: f64,
    pub samples: usize,
    pub search_tol: f64,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self { a_min: DEFAULT_A_RANGE.0, a_max: DEFAULT_A_RANGE.1, samples: DEFAULT_SCAN_SAMPLES, search_tol: DEFAULT_SEARCH_TOL }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub a_c: f64,
    /// a_c times the gap width.
    pub a_c_gap: f64,
    pub l_c: f64,
    pub lambda_c: f64,
    pub t_c: f64,
    pub multiple_minima: bool,
    pub evaluations: usize,
    pub search_tol: f64,
    /// Coarse scan as (a, lambda0) pairs.
    pub scan: Vec<[f64; 2]>,
    pub coupling: Coupling,
    pub grid: GridTag,
}

fn marginal_value(coupling: &Coupling, a: f64, grid: &RadialGrid, ops: &DiffOperators) -> Result<f64> {
    marginal_core(coupling, a, grid, ops, false).map(|s| s.lambda)
}

/// Minimise lambda0 over the wavenumber: coarse scan, then golden-section refinement.
pub fn find_critical_coupled(
    coupling: Coupling,
    grid: &RadialGrid,
    ops: &DiffOperators,
    opts: &ScanOptions,
) -> Result<CriticalPoint> {
    if !(opts.a_min > 0.0 && opts.a_max > opts.a_min && opts.samples >= 3 && opts.search_tol > 0.0) {
        return Err(TaylorError::InvalidArgument(format!("bad wavenumber scan {opts:?}")));
    }
    let width = grid.right - grid.left;
    let step = (opts.a_max - opts.a_min) / (opts.samples - 1) as f64 / width;
    let mut scan = Vec::with_capacity(opts.samples);
    for k in 0..opts.samples {
        let a = opts.a_min / width + step * k as f64;
        scan.push([a, marginal_value(&coupling, a, grid, ops)?]);
    }
    let mut evaluations = scan.len();
    let kmin = (0..scan.len()).min_by(|&i, &j| scan[i][1].partial_cmp(&scan[j][1]).unwrap()).unwrap();
    if kmin == 0 || kmin == scan.len() - 1 {
        return Err(TaylorError::CriticalOutsideRange { a: scan[kmin][0] });
    }
    let local_minima = (1..scan.len() - 1).filter(|&k| scan[k][1] < scan[k - 1][1] && scan[k][1] < scan[k + 1][1]).count();
    let multiple_minima = local_minima > 1;
    if multiple_minima {
        log::warn!("multiple local minima in the wavenumber scan; using the global one");
    }

    let invphi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (scan[kmin - 1][0], scan[kmin + 1][0]);
    let mut x1 = hi - invphi * (hi - lo);
    let mut x2 = lo + invphi * (hi - lo);
    let mut f1 = marginal_value(&coupling, x1, grid, ops)?;
    let mut f2 = marginal_value(&coupling, x2, grid, ops)?;
    evaluations += 2;
    while hi - lo > opts.search_tol / width {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - invphi * (hi - lo);
            f1 = marginal_value(&coupling, x1, grid, ops)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + invphi * (hi - lo);
            f2 = marginal_value(&coupling, x2, grid, ops)?;
        }
        evaluations += 1;
    }
    let a_c = 0.5 * (lo + hi);
    let lambda_c = marginal_value(&coupling, a_c, grid, ops)?;
    evaluations += 1;
    Ok(CriticalPoint {
        a_c,
        a_c_gap: a_c * width,
        l_c: 2.0 * PI / a_c,
        lambda_c,
        t_c: lambda_c * lambda_c,
        multiple_minima,
        evaluations,
        search_tol: opts.search_tol,
        scan,
        coupling,
        grid: grid.tag(),
    })
}

pub fn find_critical(
    params: &NondimParams,
    grid: &RadialGrid,
    ops: &DiffOperators,
    a_range: (f64, f64),
    search_tol: f64,
) -> Result<CriticalPoint> {
    let opts = ScanOptions { a_min: a_range.0, a_max: a_range.1, samples: DEFAULT_SCAN_SAMPLES, search_tol };
    find_critical_coupled(Coupling::Cylindrical { kappa: params.kappa }, grid, ops, &opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthRate {
    pub beta: f64,
    pub imag: f64,
    /// The leading eigenvalue is a complex pair; `beta` is its real part.
    pub complex: bool,
}

/// Leading eigenvalue beta of beta (DD_* - a^2) h = (DD_* - a^2)^2 h - a^2 lambda c_r phi,
/// beta phi = (DD_* - a^2) phi + lambda c_theta h.
pub fn growth_rate_coupled(
    coupling: Coupling,
    a: f64,
    lambda: f64,
    grid: &RadialGrid,
    ops: &DiffOperators,
) -> Result<GrowthRate> {
    if !(a > 0.0) {
        return Err(TaylorError::InvalidArgument(format!("wavenumber must be positive, got {a}")));
    }
    coupling.check_grid(grid)?;
    let cg = coarse_grid(grid)?;
    let cops = DiffOperators::new(&cg);
    let (p, q) = coefficients(&coupling, &cg, a, false);
    let (k0, k1, sc) = marginal_pencil(&cops, a, &p, &q);
    let eigs = dense_pencil_eigs(&(k0 - k1 * lambda), &growth_mass(cg.len(), &sc), 1.0, 1e-7)?;
    let &(re, im) = eigs
        .iter()
        .max_by(|x, y| x.0.partial_cmp(&y.0).unwrap())
        .ok_or_else(|| TaylorError::EigenFailure("empty spectrum".into()))?;
    if im.abs() > 1e-8 * (1.0 + re.abs()) {
        log::warn!("leading growth rate is complex ({re} + {im}i); returning the real part");
        return Ok(GrowthRate { beta: re, imag: im, complex: true });
    }
    let (p, q) = coefficients(&coupling, grid, a, false);
    let (k0, k1, sc) = marginal_pencil(ops, a, &p, &q);
    let (beta, _) = refine_real(&(k0 - k1 * lambda), &growth_mass(grid.len(), &sc), re)?;
    Ok(GrowthRate { beta, imag: 0.0, complex: false })
}

pub fn growth_rate(
    params: &NondimParams,
    a: f64,
    lambda: f64,
    grid: &RadialGrid,
    ops: &DiffOperators,
) -> Result<GrowthRate> {
    growth_rate_coupled(Coupling::Cylindrical { kappa: params.kappa }, a, lambda, grid, ops)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthCurve {
    pub a: f64,
    pub lambda_c: f64,
    /// (lambda, beta_1) pairs in increasing lambda.
    pub samples: Vec<[f64; 2]>,
    /// Central difference of beta_1 across lambda_c.
    pub slope: f64,
    pub coupling: Coupling,
    pub grid: GridTag,
}

impl GrowthCurve {
    /// Piecewise-linear interpolation, extended linearly past the sampled range.
    pub fn beta_at(&self, lambda: f64) -> f64 {
        let s = &self.samples;
        let k = match s.iter().position(|p| p[0] >= lambda) {
            Some(0) => 1,
            Some(k) => k,
            None => s.len() - 1,
        };
        let (p, q) = (s[k - 1], s[k]);
        p[1] + (q[1] - p[1]) * (lambda - p[0]) / (q[0] - p[0])
    }
}

/// Samples beta_1 at lambda_c (1 + k rel_step) for k = -count..=count.
pub fn growth_curve(
    coupling: Coupling,
    a: f64,
    lambda_c: f64,
    grid: &RadialGrid,
    ops: &DiffOperators,
    rel_step: f64,
    count: usize,
) -> Result<GrowthCurve> {
    if count == 0 || !(rel_step > 0.0) {
        return Err(TaylorError::InvalidArgument("growth curve needs count >= 1 and a positive step".into()));
    }
    let mut samples = Vec::with_capacity(2 * count + 1);
    for k in -(count as i64)..=(count as i64) {
        let lambda = lambda_c * (1.0 + rel_step * k as f64);
        samples.push([lambda, growth_rate_coupled(coupling, a, lambda, grid, ops)?.beta]);
    }
    let (lo, hi) = (samples[count - 1], samples[count + 1]);
    let slope = (hi[1] - lo[1]) / (hi[0] - lo[0]);
    Ok(GrowthCurve { a, lambda_c, samples, slope, coupling, grid: grid.tag() })
}

/// rho = (psi_1, psi_1*)_H over one period: (L/2) int r [D_*h D_*h* + a^2 h h* + phi phi*] dr.
pub fn rho(mode: &StabilityMode, adjoint: &AdjointMode, grid: &RadialGrid, ops: &DiffOperators) -> f64 {
    let a = mode.a;
    let dh = ops.apply(Op::Dstar, &mode.h);
    let dhs = ops.apply(Op::Dstar, &adjoint.hstar);
    0.5 * mode.period()
        * (weighted_inner(&dh, &dhs, grid)
            + a * a * weighted_inner(&mode.h, &adjoint.hstar, grid)
            + weighted_inner(&mode.phi, &adjoint.phistar, grid))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Positivity {
    pub h: bool,
    pub phi: bool,
    pub hstar: bool,
    pub phistar: bool,
}

impl Positivity {
    pub fn all(&self) -> bool {
        self.h && self.phi && self.hstar && self.phistar
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PesReport {
    /// (L a / 2) int r [c_r h phi* + c_theta phi h*] dr.
    pub pairing: f64,
    /// (B psi_1, psi_1*)_H = (L/2) int r [a^2 c_r phi h* + c_theta h phi*] dr.
    pub b_pairing: f64,
    pub rho: f64,
    /// d beta_1 / d lambda at lambda_0 from first-order perturbation, b_pairing / rho.
    pub slope: f64,
    pub positivity: Positivity,
    /// Pointwise sign of the `pairing` integrand on interior nodes.
    pub integrand_nonnegative: bool,
    pub pes_unverified: bool,
}

fn interior_positive(f: &[f64]) -> bool {
    f[1..f.len() - 1].iter().all(|v| *v > 0.0)
}

fn norm(f: &[f64], grid: &RadialGrid) -> f64 {
    weighted_inner(f, f, grid).sqrt()
}

pub fn pes_check(
    mode: &StabilityMode,
    adjoint: &AdjointMode,
    grid: &RadialGrid,
    ops: &DiffOperators,
) -> Result<PesReport> {
    if mode.grid != grid.tag() || adjoint.grid != grid.tag() || mode.coupling != adjoint.coupling || mode.a != adjoint.a {
        return Err(TaylorError::MixedProvenance("mode and adjoint come from different problems".into()));
    }
    let a = mode.a;
    let c = &mode.coupling;
    let cr: Vec<f64> = grid.nodes.iter().map(|&r| c.c_r(r)).collect();
    let ct: Vec<f64> = grid.nodes.iter().map(|&r| c.c_theta(r)).collect();
    let integrand: Vec<f64> = (0..grid.len())
        .map(|i| cr[i] * mode.h[i] * adjoint.phistar[i] + ct[i] * mode.phi[i] * adjoint.hstar[i])
        .collect();
    let ones = vec![1.0; grid.len()];
    let pairing = 0.5 * mode.period() * a * weighted_inner(&integrand, &ones, grid);
    let b_integrand: Vec<f64> = (0..grid.len())
        .map(|i| a * a * cr[i] * mode.phi[i] * adjoint.hstar[i] + ct[i] * mode.h[i] * adjoint.phistar[i])
        .collect();
    let b_pairing = 0.5 * mode.period() * weighted_inner(&b_integrand, &ones, grid);
    let scale = 0.5
        * mode.period()
        * a
        * (norm(&mode.h, grid) * norm(&adjoint.phistar, grid) + norm(&mode.phi, grid) * norm(&adjoint.hstar, grid));
    if !(pairing.abs() >= 1e-10 * scale) {
        return Err(TaylorError::DegeneratePairing { value: pairing });
    }
    let rho = rho(mode, adjoint, grid, ops);
    if !(rho.abs() > 0.0) {
        return Err(TaylorError::DegenerateNormalization { rho });
    }
    Ok(PesReport {
        pairing,
        b_pairing,
        rho,
        slope: b_pairing / rho,
        positivity: Positivity {
            h: interior_positive(&mode.h),
            phi: interior_positive(&mode.phi),
            hstar: interior_positive(&adjoint.hstar),
            phistar: interior_positive(&adjoint.phistar),
        },
        integrand_nonnegative: integrand[1..grid.len() - 1].iter().all(|v| *v >= 0.0),
        pes_unverified: mode.pes_unverified,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radial_ops::{build_grid, Scheme};

    fn setup(eta: f64, mu: f64, n: usize) -> (NondimParams, RadialGrid, DiffOperators) {
        let p = NondimParams::from_ratios(eta, mu).unwrap();
        let g = build_grid(eta, n, Scheme::Collocation).unwrap();
        let o = DiffOperators::new(&g);
        (p, g, o)
    }

    fn gap_grid(n: usize) -> (RadialGrid, DiffOperators) {
        let g = build_interval_grid(0.0, 1.0, n, Scheme::Collocation, Geometry::Planar).unwrap();
        let o = DiffOperators::new(&g);
        (g, o)
    }

    #[test]
    fn symmetric_gap_matches_convection_value() {
        let (g, o) = gap_grid(64);
        let m = solve_marginal_narrowgap(0.5, 3.117, &g, &o, NarrowGapVariant::Symmetric).unwrap();
        assert!((m.lambda0 * m.lambda0 - 1707.762).abs() < 0.05, "{}", m.lambda0.powi(2));
        assert!(m.residuals[0] < 1e-12 && m.residuals[1] < 1e-12);
    }

    #[test]
    fn mode_satisfies_walls_and_gauge() {
        let (p, g, o) = setup(0.9, 0.0, 48);
        let m = solve_marginal(&p, 3.13, &g, &o).unwrap();
        let last = g.len() - 1;
        assert_eq!(m.h[0], 0.0);
        assert_eq!(m.h[last], 0.0);
        assert_eq!(m.phi[0], 0.0);
        let dh = o.apply(Op::D, &m.h);
        let dmax = dh.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(dh[0].abs() < 1e-10 * dmax && dh[last].abs() < 1e-10 * dmax, "{} {}", dh[0], dh[last]);
        let hmax = m.h.iter().cloned().fold(f64::MIN, f64::max);
        assert!((hmax - 1.0).abs() < 1e-14);
    }

    #[test]
    fn sign_flip_leaves_marginal_value() {
        let (p, g, o) = setup(0.9, 0.0, 40);
        let m = solve_marginal(&p, 3.0, &g, &o).unwrap();
        let flipped = m.scaled(-1.0);
        let (pp, q) = coefficients(&m.coupling, &g, m.a, false);
        let (k0, k1, _) = marginal_pencil(&o, m.a, &pp, &q);
        let mm = g.len();
        let mut x = DVector::zeros(3 * mm);
        let gfun = o.apply(Op::Helmholtz(m.a), &flipped.h);
        for i in 0..mm {
            x[i] = flipped.h[i];
            x[mm + i] = gfun[i];
            x[2 * mm + i] = flipped.phi[i];
        }
        let r = &k0 * &x - (&k1 * &x) * m.lambda0;
        assert!(r.amax() / (inf_norm(&k0) * x.amax()) < 1e-10);
    }

    #[test]
    fn adjoint_shares_marginal_value() {
        let (p, g, o) = setup(0.9, 0.0, 64);
        let m = solve_marginal(&p, 3.13, &g, &o).unwrap();
        let ad = solve_adjoint(&p, 3.13, m.lambda0, &g, &o).unwrap();
        assert!((ad.adjoint_lambda - m.lambda0).abs() < 1e-8 * m.lambda0);
        assert!(matches!(
            solve_adjoint(&p, 3.13, m.lambda0 * 1.01, &g, &o),
            Err(TaylorError::AdjointMismatch { .. })
        ));
    }

    #[test]
    fn growth_rate_vanishes_at_marginal_value() {
        let (p, g, o) = setup(0.9, 0.0, 48);
        let m = solve_marginal(&p, 3.13, &g, &o).unwrap();
        let b0 = growth_rate(&p, 3.13, m.lambda0, &g, &o).unwrap();
        assert!(b0.beta.abs() < 1e-6, "{b0:?}");
        let b1 = growth_rate(&p, 3.13, 1.01 * m.lambda0, &g, &o).unwrap();
        assert!(b1.beta > 0.0);
        let bm = growth_rate(&p, 3.13, 0.99 * m.lambda0, &g, &o).unwrap();
        assert!(bm.beta < 0.0);
    }

    #[test]
    fn critical_search_rejects_edge_minimum() {
        let (g, o) = gap_grid(32);
        let c = Coupling::NarrowGap { mu: 0.0, variant: NarrowGapVariant::Symmetric };
        let opts = ScanOptions { a_min: 4.0, a_max: 8.0, samples: 9, search_tol: 1e-4 };
        assert!(matches!(find_critical_coupled(c, &g, &o, &opts), Err(TaylorError::CriticalOutsideRange { .. })));
    }

    #[test]
    fn wrong_grid_rejected() {
        let (p, g, o) = setup(0.9, 0.0, 32);
        assert!(solve_marginal_narrowgap(0.5, 3.0, &g, &o, NarrowGapVariant::Full).is_err());
        let (gg, go) = gap_grid(32);
        assert!(solve_marginal(&p, 3.0, &gg, &go).is_err());
        assert!(solve_marginal(&p, -1.0, &g, &o).is_err());
    }

    #[test]
    fn counter_rotation_is_stamped() {
        let (p, g, o) = setup(0.8, -0.2, 40);
        let m = solve_marginal(&p, 3.2, &g, &o).unwrap();
        assert!(m.pes_unverified);
    }

    #[test]
    fn growth_curve_interpolates() {
        let (g, _) = gap_grid(16);
        let c = GrowthCurve {
            a: 1.0,
            lambda_c: 1.0,
            samples: vec![[0.9, -1.0], [1.0, 0.0], [1.1, 1.0]],
            slope: 10.0,
            coupling: Coupling::Cylindrical { kappa: 1.0 },
            grid: g.tag(),
        };
        assert!((c.beta_at(1.05) - 0.5).abs() < 1e-12);
        assert!((c.beta_at(1.2) - 2.0).abs() < 1e-12);
        assert!((c.beta_at(0.8) + 2.0).abs() < 1e-12);
    }
}
