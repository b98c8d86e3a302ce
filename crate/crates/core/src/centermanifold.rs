//! Quadratic center-manifold correction and the cubic transition coefficient R.
//!
//! Fields are axisymmetric and carried as finite axial Fourier series in the harmonics
//! k a of the critical wavenumber, so products and z-integrals are exact. The evolution is
//! du/dt = L_lambda u + G(u, u) with L_lambda = -A + lambda B, and the correction Phi solves
//! (A - lambda_0 B) Phi = G(psi_1, psi_1).
//!
//! R is assembled along two routes that share only the block operator matrices:
//! the generic route forms G(psi_1, psi_1) through [`TrigField`] products, solves each
//! harmonic and pairs analytically in z; the explicit route builds the corrections from the
//! closed-form forcings H_1, H_2, H_3 and integrates the expanded integrand on an (r, z) grid.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Result, TaylorError};
use crate::linstab::{forced_operator, rho, AdjointMode, Coupling, StabilityMode};
use crate::radial_ops::{
    solve_linear_bvp, weighted_inner, BoundaryConditionSet, DiffOperators, GridTag, Op, RadialGrid,
};

/// Relative agreement required between the two assembly routes.
pub const PATH_TOL: f64 = 1e-6;
/// Normalised solvability residual above which the harmonic bookkeeping is suspect.
pub const SOLVABILITY_TOL: f64 = 1e-8;
/// Relative band, against the cancellation scale of R, inside which R is treated as zero.
pub const DEFAULT_R_TOL: f64 = 1e-8;
/// Relative divergence (against a max|u|) tolerated for advecting fields.
pub const DIVERGENCE_TOL: f64 = 1e-8;
/// Axial samples per period for the explicit route; exact for the degree-4 products involved.
const EXPLICIT_NZ: usize = 16;

/// f(r, z) = sum_k cos_k(r) cos(k a z) + sin_k(r) sin(k a z); `sin[0]` stays zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub cos: Vec<Vec<f64>>,
    pub sin: Vec<Vec<f64>>,
}

impl Series {
    pub fn zeros(kmax: usize, m: usize) -> Self {
        Self { cos: vec![vec![0.0; m]; kmax + 1], sin: vec![vec![0.0; m]; kmax + 1] }
    }

    pub fn kmax(&self) -> usize {
        self.cos.len() - 1
    }

    fn len_r(&self) -> usize {
        self.cos[0].len()
    }

    fn grow(&mut self, kmax: usize) {
        let m = self.len_r();
        while self.kmax() < kmax {
            self.cos.push(vec![0.0; m]);
            self.sin.push(vec![0.0; m]);
        }
    }

    pub fn add(&self, other: &Series) -> Series {
        let mut out = self.clone();
        out.grow(other.kmax());
        for k in 0..=other.kmax() {
            axpy(&mut out.cos[k], 1.0, &other.cos[k]);
            axpy(&mut out.sin[k], 1.0, &other.sin[k]);
        }
        out
    }

    pub fn scale(&self, c: f64) -> Series {
        self.map(|f| f.iter().map(|v| c * v).collect())
    }

    /// Applies a radial map to every coefficient profile.
    pub fn map(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> Series {
        Series { cos: self.cos.iter().map(|p| f(p)).collect(), sin: self.sin.iter().map(|p| f(p)).collect() }
    }

    /// Pointwise multiplication by a radial profile.
    pub fn times_profile(&self, w: &[f64]) -> Series {
        self.map(|f| f.iter().zip(w).map(|(a, b)| a * b).collect())
    }

    /// Axial derivative for base wavenumber `a`.
    pub fn dz(&self, a: f64) -> Series {
        let mut out = Series::zeros(self.kmax(), self.len_r());
        for k in 1..=self.kmax() {
            let q = k as f64 * a;
            out.cos[k] = self.sin[k].iter().map(|v| q * v).collect();
            out.sin[k] = self.cos[k].iter().map(|v| -q * v).collect();
        }
        out
    }

    pub fn dr(&self, ops: &DiffOperators) -> Series {
        self.map(|f| ops.apply(Op::D, f))
    }

    /// Product, expanded back into harmonics.
    pub fn mul(&self, other: &Series) -> Series {
        let m = self.len_r();
        let mut out = Series::zeros(self.kmax() + other.kmax(), m);
        let prod = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(a, b)| 0.5 * a * b).collect() };
        for k1 in 0..=self.kmax() {
            for k2 in 0..=other.kmax() {
                let (sum, diff) = (k1 + k2, k1.abs_diff(k2));
                let sign = if k1 >= k2 { 1.0 } else { -1.0 };
                let cc = prod(&self.cos[k1], &other.cos[k2]);
                axpy(&mut out.cos[sum], 1.0, &cc);
                axpy(&mut out.cos[diff], 1.0, &cc);
                let ss = prod(&self.sin[k1], &other.sin[k2]);
                axpy(&mut out.cos[diff], 1.0, &ss);
                axpy(&mut out.cos[sum], -1.0, &ss);
                let sc = prod(&self.sin[k1], &other.cos[k2]);
                axpy(&mut out.sin[sum], 1.0, &sc);
                axpy(&mut out.sin[diff], sign, &sc);
                let cs = prod(&self.cos[k1], &other.sin[k2]);
                axpy(&mut out.sin[sum], 1.0, &cs);
                axpy(&mut out.sin[diff], -sign, &cs);
            }
        }
        for v in out.sin[0].iter_mut() {
            *v = 0.0;
        }
        out
    }

    /// Integral of r f g over the gap and one period of length `period`.
    pub fn inner(&self, other: &Series, grid: &RadialGrid, period: f64) -> f64 {
        let mut s = period * weighted_inner(&self.cos[0], &other.cos[0], grid);
        for k in 1..=self.kmax().min(other.kmax()) {
            s += 0.5
                * period
                * (weighted_inner(&self.cos[k], &other.cos[k], grid) + weighted_inner(&self.sin[k], &other.sin[k], grid));
        }
        s
    }

    /// Radial profile at height z.
    pub fn eval(&self, a: f64, z: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.len_r()];
        for k in 0..=self.kmax() {
            let (s, c) = (k as f64 * a * z).sin_cos();
            for (i, o) in out.iter_mut().enumerate() {
                *o += c * self.cos[k][i] + s * self.sin[k][i];
            }
        }
        out
    }

    /// f(r, z + dz0).
    pub fn shifted(&self, a: f64, dz0: f64) -> Series {
        let mut out = self.clone();
        for k in 1..=self.kmax() {
            let (s, c) = (k as f64 * a * dz0).sin_cos();
            for i in 0..self.len_r() {
                let (fc, fs) = (self.cos[k][i], self.sin[k][i]);
                out.cos[k][i] = c * fc + s * fs;
                out.sin[k][i] = c * fs - s * fc;
            }
        }
        out
    }

    /// Keeps only harmonic k.
    pub fn harmonic(&self, k: usize) -> Series {
        let mut out = Series::zeros(self.kmax(), self.len_r());
        if k <= self.kmax() {
            out.cos[k] = self.cos[k].clone();
            out.sin[k] = self.sin[k].clone();
        }
        out
    }

    fn max_abs(&self) -> f64 {
        self.cos.iter().chain(&self.sin).flatten().fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn axpy(y: &mut [f64], c: f64, x: &[f64]) {
    for (a, b) in y.iter_mut().zip(x) {
        *a += c * b;
    }
}

/// Axisymmetric velocity field (u_z, u_r, u_theta) periodic in z with period 2 pi / a.
#[derive(Debug, Clone, PartialEq)]
pub struct TrigField {
    pub a: f64,
    pub z: Series,
    pub r: Series,
    pub theta: Series,
}

impl TrigField {
    pub fn zeros(a: f64, kmax: usize, m: usize) -> Self {
        Self { a, z: Series::zeros(kmax, m), r: Series::zeros(kmax, m), theta: Series::zeros(kmax, m) }
    }

    pub fn period(&self) -> f64 {
        2.0 * PI / self.a
    }

    /// psi_1 = (-sin(az) D_*h, a cos(az) h, a cos(az) phi); a phi is the azimuthal velocity.
    pub fn from_mode(mode: &StabilityMode, ops: &DiffOperators) -> Self {
        let a = mode.a;
        let mut f = Self::zeros(a, 1, mode.h.len());
        f.z.sin[1] = ops.apply(Op::Dstar, &mode.h).iter().map(|v| -v).collect();
        f.r.cos[1] = mode.h.iter().map(|v| a * v).collect();
        f.theta.cos[1] = mode.phi.iter().map(|v| a * v).collect();
        f
    }

    /// psi_1* = (-sin(az) D_*h*, a cos(az) h*, (1/a) cos(az) phi*).
    pub fn from_adjoint(adj: &AdjointMode, ops: &DiffOperators) -> Self {
        let a = adj.a;
        let mut f = Self::zeros(a, 1, adj.hstar.len());
        f.z.sin[1] = ops.apply(Op::Dstar, &adj.hstar).iter().map(|v| -v).collect();
        f.r.cos[1] = adj.hstar.iter().map(|v| a * v).collect();
        f.theta.cos[1] = adj.phistar.iter().map(|v| v / a).collect();
        f
    }

    fn comps(&self) -> [&Series; 3] {
        [&self.z, &self.r, &self.theta]
    }

    fn from_comps(a: f64, [z, r, theta]: [Series; 3]) -> Self {
        Self { a, z, r, theta }
    }

    pub fn add(&self, other: &TrigField) -> TrigField {
        Self::from_comps(self.a, [self.z.add(&other.z), self.r.add(&other.r), self.theta.add(&other.theta)])
    }

    pub fn scale(&self, c: f64) -> TrigField {
        Self::from_comps(self.a, self.comps().map(|s| s.scale(c)))
    }

    /// Translate by `dz0` in z; a quarter period maps psi_1 onto its companion kernel vector.
    pub fn shifted(&self, dz0: f64) -> TrigField {
        Self::from_comps(self.a, self.comps().map(|s| s.shifted(self.a, dz0)))
    }

    pub fn harmonic(&self, k: usize) -> TrigField {
        Self::from_comps(self.a, self.comps().map(|s| s.harmonic(k)))
    }

    pub fn kmax(&self) -> usize {
        self.z.kmax().max(self.r.kmax()).max(self.theta.kmax())
    }

    /// (u, v)_H = int int r u . v dr dz over one period.
    pub fn inner(&self, other: &TrigField, grid: &RadialGrid) -> f64 {
        let p = self.period();
        self.z.inner(&other.z, grid, p) + self.r.inner(&other.r, grid, p) + self.theta.inner(&other.theta, grid, p)
    }

    pub fn norm(&self, grid: &RadialGrid) -> f64 {
        self.inner(self, grid).max(0.0).sqrt()
    }

    /// Largest |D_* u_r + d u_z / dz|.
    pub fn divergence(&self, ops: &DiffOperators) -> f64 {
        self.r.map(|f| ops.apply(Op::Dstar, f)).add(&self.z.dz(self.a)).max_abs()
    }

    pub fn max_abs(&self) -> f64 {
        self.comps().iter().map(|s| s.max_abs()).fold(0.0, f64::max)
    }

    /// Components sampled at height z.
    pub fn eval(&self, z: f64) -> [Vec<f64>; 3] {
        self.comps().map(|s| s.eval(self.a, z))
    }
}

/// (u~ . grad) v with u~ = (u_z, u_r).
fn advect(u: &TrigField, v: &Series, ops: &DiffOperators) -> Series {
    u.r.mul(&v.dr(ops)).add(&u.z.mul(&v.dz(u.a)))
}

/// G(u, v) = -((u~.grad) v_z, (u~.grad) v_r - u_theta v_theta / r, (u~.grad) v_theta + u_theta v_r / r).
/// The curvature terms vanish on planar grids, where 1/r is stored as zero.
pub fn nonlinear(u: &TrigField, v: &TrigField, ops: &DiffOperators) -> TrigField {
    let ir = &ops.inv_r;
    let gz = advect(u, &v.z, ops).scale(-1.0);
    let gr = advect(u, &v.r, ops).add(&u.theta.mul(&v.theta).times_profile(ir).scale(-1.0)).scale(-1.0);
    let gt = advect(u, &v.theta, ops).add(&u.theta.mul(&v.r).times_profile(ir)).scale(-1.0);
    TrigField { a: u.a, z: gz, r: gr, theta: gt }
}

/// (G(u, v), w)_H with exact axial integration.
/// Warns when u is not discretely divergence free, since antisymmetry relies on it.
pub fn trilinear(u: &TrigField, v: &TrigField, w: &TrigField, grid: &RadialGrid, ops: &DiffOperators) -> f64 {
    let div = u.divergence(ops);
    if div > DIVERGENCE_TOL * u.a * u.max_abs().max(f64::MIN_POSITIVE) {
        log::warn!("advecting field has divergence {div:.3e}; antisymmetry of the trilinear form not guaranteed");
    }
    nonlinear(u, v, ops).inner(w, grid)
}

/// (G(u, v), w)_H by sampling `nz` equispaced heights; a cross-check on [`trilinear`].
pub fn trilinear_sampled(
    u: &TrigField,
    v: &TrigField,
    w: &TrigField,
    grid: &RadialGrid,
    ops: &DiffOperators,
    nz: usize,
) -> f64 {
    let a = u.a;
    let period = u.period();
    let dv_r = [v.z.dr(ops), v.r.dr(ops), v.theta.dr(ops)];
    let dv_z = [v.z.dz(a), v.r.dz(a), v.theta.dz(a)];
    let vs = [&v.z, &v.r, &v.theta];
    let mut total = 0.0;
    for j in 0..nz {
        let z = period * j as f64 / nz as f64;
        let [uz, ur, ut] = u.eval(z);
        let ws = w.eval(z);
        let vv: Vec<Vec<f64>> = vs.iter().map(|s| s.eval(a, z)).collect();
        let mut integrand = vec![0.0; grid.len()];
        for c in 0..3 {
            let dr = dv_r[c].eval(a, z);
            let dz = dv_z[c].eval(a, z);
            for i in 0..grid.len() {
                let mut g = ur[i] * dr[i] + uz[i] * dz[i];
                match c {
                    1 => g -= ut[i] * vv[2][i] * ops.inv_r[i],
                    2 => g += ut[i] * vv[1][i] * ops.inv_r[i],
                    _ => {}
                }
                integrand[i] -= g * ws[c][i];
            }
        }
        total += grid.integrate(&integrand);
    }
    total * period / nz as f64
}

/// c D_*F for a stream profile with F = DF = 0 at the walls, wall values pinned to zero.
fn axial_profile(ops: &DiffOperators, f: &[f64], c: f64) -> Vec<f64> {
    let mut out: Vec<f64> = ops.apply(Op::Dstar, f).iter().map(|v| c * v).collect();
    let m = out.len();
    out[0] = 0.0;
    out[m - 1] = 0.0;
    out
}

fn dirichlet_solve(ops: &DiffOperators, op: &nalgebra::DMatrix<f64>, f: &[f64]) -> Result<(Vec<f64>, f64)> {
    if f.iter().all(|v| *v == 0.0) {
        return Ok((vec![0.0; f.len()], 0.0));
    }
    let sol = solve_linear_bvp(ops, op, &BoundaryConditionSet::new().dirichlet(0), f)?;
    Ok((sol.x, sol.residual))
}

/// Solves L F - lambda q^2 c_r Theta = f1, L Theta + lambda c_theta F = f2 with L = DD_* - q^2,
/// F = DF = 0 and Theta = 0 at the walls.
fn coupled_solve(
    coupling: &Coupling,
    q: f64,
    lambda0: f64,
    f1: &[f64],
    f2: &[f64],
    grid: &RadialGrid,
    ops: &DiffOperators,
) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let m = ops.size();
    if f1.iter().chain(f2).all(|v| *v == 0.0) {
        return Ok((vec![0.0; m], vec![0.0; m], 0.0));
    }
    let (k, bcs) = forced_operator(coupling, q, lambda0, grid, ops);
    let mut rhs = vec![0.0; 3 * m];
    rhs[m..2 * m].copy_from_slice(f1);
    rhs[2 * m..].copy_from_slice(f2);
    let sol = solve_linear_bvp(ops, &k, &bcs, &rhs).map_err(|e| match e {
        TaylorError::SingularOperator { condition } => TaylorError::HarmonicResonance { condition },
        other => other,
    })?;
    Ok((sol.block(0, m).to_vec(), sol.block(2, m).to_vec(), sol.residual))
}

/// Steady response Phi of (A - lambda_0 B) Phi = F for a forcing given harmonic by harmonic.
/// The pressure is eliminated by taking the azimuthal curl of the meridional equations.
/// Returns the field and the largest relative BVP residual.
pub fn solve_steady(
    coupling: &Coupling,
    lambda0: f64,
    forcing: &TrigField,
    grid: &RadialGrid,
    ops: &DiffOperators,
) -> Result<(TrigField, f64)> {
    let a = forcing.a;
    let m = ops.size();
    let kmax = forcing.kmax();
    let mut out = TrigField::zeros(a, kmax, m);
    let mut worst: f64 = 0.0;
    let mut fz = forcing.z.clone();
    let mut fr = forcing.r.clone();
    let mut ft = forcing.theta.clone();
    fz.grow(kmax);
    fr.grow(kmax);
    ft.grow(kmax);

    // mean flow: the radial mean vanishes by continuity, the radial equation sets the pressure
    let neg = |mat: &nalgebra::DMatrix<f64>| -mat.clone();
    let (uz0, r0) = dirichlet_solve(ops, &neg(&ops.dstar_d), &fz.cos[0])?;
    let (ut0, r1) = dirichlet_solve(ops, &neg(&ops.dd_star), &ft.cos[0])?;
    out.z.cos[0] = uz0;
    out.theta.cos[0] = ut0;
    worst = worst.max(r0).max(r1);

    for k in 1..=kmax {
        let q = k as f64 * a;
        let dgz_s = ops.apply(Op::D, &fz.sin[k]);
        let dgz_c = ops.apply(Op::D, &fz.cos[k]);
        // cos group: Phi = (-sin(qz) D_*F / q, cos(qz) F, cos(qz) Theta)
        let f1: Vec<f64> = (0..m).map(|i| q * q * fr.cos[k][i] + q * dgz_s[i]).collect();
        let f2: Vec<f64> = ft.cos[k].iter().map(|v| -v).collect();
        let (fc, tc, res) = coupled_solve(coupling, q, lambda0, &f1, &f2, grid, ops)?;
        worst = worst.max(res);
        out.z.sin[k] = axial_profile(ops, &fc, -1.0 / q);
        out.r.cos[k] = fc;
        out.theta.cos[k] = tc;
        // sin group: Phi = (cos(qz) D_*F / q, sin(qz) F, sin(qz) Theta)
        let f1: Vec<f64> = (0..m).map(|i| q * q * fr.sin[k][i] - q * dgz_c[i]).collect();
        let f2: Vec<f64> = ft.sin[k].iter().map(|v| -v).collect();
        let (fs, ts, res) = coupled_solve(coupling, q, lambda0, &f1, &f2, grid, ops)?;
        worst = worst.max(res);
        out.z.cos[k] = axial_profile(ops, &fs, 1.0 / q);
        out.r.sin[k] = fs;
        out.theta.sin[k] = ts;
    }
    Ok((out, worst))
}

/// Closed-form 2a forcings of the quadratic self-interaction, written with v = a phi:
/// H_1 = a((D_*h)^2 - h DD_*h), H_2 = a^2 h Dh - a^2 h D_*h - v^2/r, H_3 = a(h Dv - v D_*h + v h/r).
/// G(psi_1, psi_1) restricted to 2a equals -(1/2)(sin(2az) H_1, cos(2az) H_2, cos(2az) H_3).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticForcings {
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
    pub h3: Vec<f64>,
}

pub fn quadratic_forcings(mode: &StabilityMode, ops: &DiffOperators) -> QuadraticForcings {
    let a = mode.a;
    let h = &mode.h;
    let v: Vec<f64> = mode.phi.iter().map(|p| a * p).collect();
    let sh = ops.apply(Op::Dstar, h);
    let dsh = ops.apply(Op::DDstar, h);
    let dh = ops.apply(Op::D, h);
    let dv = ops.apply(Op::D, &v);
    let ir = &ops.inv_r;
    let m = h.len();
    QuadraticForcings {
        h1: (0..m).map(|i| a * (sh[i] * sh[i] - h[i] * dsh[i])).collect(),
        h2: (0..m).map(|i| a * a * h[i] * (dh[i] - sh[i]) - v[i] * v[i] * ir[i]).collect(),
        h3: (0..m).map(|i| a * (h[i] * dv[i] - v[i] * sh[i] + v[i] * h[i] * ir[i])).collect(),
    }
}

/// Right-hand side of DD_* phi_0 = -(a/2)(v D_*h + h Dv + v h / r).
pub fn phi0_forcing(mode: &StabilityMode, ops: &DiffOperators) -> Vec<f64> {
    let a = mode.a;
    let v: Vec<f64> = mode.phi.iter().map(|p| a * p).collect();
    let sh = ops.apply(Op::Dstar, &mode.h);
    let dv = ops.apply(Op::D, &v);
    (0..v.len())
        .map(|i| -0.5 * a * (v[i] * sh[i] + mode.h[i] * dv[i] + v[i] * mode.h[i] * ops.inv_r[i]))
        .collect()
}

/// Azimuthal mean correction phi_0 (phi_0 = 0 at the walls).
pub fn solve_phi0(mode: &StabilityMode, ops: &DiffOperators) -> Result<(Vec<f64>, f64)> {
    dirichlet_solve(ops, &ops.dd_star, &phi0_forcing(mode, ops))
}

/// Radial profiles of phi_2 = (-sin(2az) z, cos(2az) r, cos(2az) theta).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phi2 {
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub theta: Vec<f64>,
}

/// (DD_* - 4a^2)^2 phi_r - 4a^2 lambda_0 c_r phi_theta = 2a^2 H_2 + a D H_1,
/// (DD_* - 4a^2) phi_theta + lambda_0 c_theta phi_r = -H_3 / 2,
/// phi_r = D phi_r = 0, phi_theta = 0 at the walls, phi_z = D_* phi_r / (2a).
pub fn solve_phi2(
    mode: &StabilityMode,
    forcings: &QuadraticForcings,
    grid: &RadialGrid,
    ops: &DiffOperators,
) -> Result<(Phi2, f64)> {
    let a = mode.a;
    let dh1 = ops.apply(Op::D, &forcings.h1);
    let f1: Vec<f64> = (0..dh1.len()).map(|i| 2.0 * a * a * forcings.h2[i] + a * dh1[i]).collect();
    let f2: Vec<f64> = forcings.h3.iter().map(|v| -0.5 * v).collect();
    let (r, theta, res) = coupled_solve(&mode.coupling, 2.0 * a, mode.lambda0, &f1, &f2, grid, ops)?;
    let z = axial_profile(ops, &r, 1.0 / (2.0 * a));
    Ok((Phi2 { z, r, theta }, res))
}

/// Quadratic correction Phi = -(phi_0 + phi_2), phi_0 = (0, 0, phi0(r)).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CMCorrection {
    pub a: f64,
    pub phi0: Vec<f64>,
    pub phi2: Phi2,
    pub forcings: QuadraticForcings,
    pub residual: f64,
    /// max |div| of the reconstructed 2a field relative to a max|phi_r|.
    pub divergence: f64,
}

impl CMCorrection {
    pub fn field(&self) -> TrigField {
        let m = self.phi0.len();
        let mut f = TrigField::zeros(self.a, 2, m);
        f.theta.cos[0] = self.phi0.iter().map(|v| -v).collect();
        f.z.sin[2] = self.phi2.z.clone();
        f.r.cos[2] = self.phi2.r.iter().map(|v| -v).collect();
        f.theta.cos[2] = self.phi2.theta.iter().map(|v| -v).collect();
        f
    }
}

pub fn cm_correction(mode: &StabilityMode, grid: &RadialGrid, ops: &DiffOperators) -> Result<CMCorrection> {
    let forcings = quadratic_forcings(mode, ops);
    let (phi0, r0) = solve_phi0(mode, ops)?;
    let (phi2, r2) = solve_phi2(mode, &forcings, grid, ops)?;
    let mut corr = CMCorrection { a: mode.a, phi0, phi2, forcings, residual: r0.max(r2), divergence: 0.0 };
    let scale = corr.phi2.r.iter().fold(0.0f64, |m, v| m.max(v.abs())) * 2.0 * mode.a;
    corr.divergence = corr.field().harmonic(2).divergence(ops) / scale.max(f64::MIN_POSITIVE);
    Ok(corr)
}

/// Normalised pairings of G(psi_1, psi_1) with psi_1* and its quarter-period translate.
pub fn solvability_check(
    mode: &StabilityMode,
    adjoint: &AdjointMode,
    grid: &RadialGrid,
    ops: &DiffOperators,
) -> Result<[f64; 2]> {
    let psi = TrigField::from_mode(mode, ops);
    let star = TrigField::from_adjoint(adjoint, ops);
    let g = nonlinear(&psi, &psi, ops);
    let scale = g.norm(grid) * star.norm(grid);
    if scale == 0.0 {
        return Ok([0.0, 0.0]);
    }
    let quarter = 0.25 * psi.period();
    let out = [g.inner(&star, grid) / scale, g.inner(&star.shifted(quarter), grid) / scale];
    let worst = out[0].abs().max(out[1].abs());
    if worst > SOLVABILITY_TOL {
        return Err(TaylorError::SolvabilityViolation { residual: worst });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssemblyPath {
    /// Generic products and analytic axial pairing.
    InnerProduct,
    /// Closed-form corrections and a sampled (r, z) integrand.
    Explicit,
}

/// Cubic coefficient of the reduced equation dx/dt = beta x + R x^3 + o(x^3).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionCoefficient {
    pub r: f64,
    pub r_inner: f64,
    pub r_explicit: f64,
    pub rel_diff: f64,
    /// Integral of the absolute integrand over rho: the magnitude R is cancelled down from.
    pub r_scale: f64,
    pub rho: f64,
    pub path: AssemblyPath,
    pub mode_gauge: f64,
    pub adjoint_gauge: f64,
    /// h or phi vanishes identically, R set to zero.
    pub degenerate: bool,
    pub bvp_residual: f64,
    pub a: f64,
    pub lambda0: f64,
    pub coupling: Coupling,
    pub grid: GridTag,
}

impl TransitionCoefficient {
    /// Zero band for classification, proportional to the cancellation scale.
    pub fn zero_tol(&self) -> f64 {
        DEFAULT_R_TOL * self.r_scale
    }
}

/// R from the generic route: (G(Phi, psi_1) + G(psi_1, Phi), psi_1*)_H / rho.
pub fn r_inner_product(
    mode: &StabilityMode,
    adjoint: &AdjointMode,
    grid: &RadialGrid,
    ops: &DiffOperators,
) -> Result<(f64, f64)> {
    let psi = TrigField::from_mode(mode, ops);
    let star = TrigField::from_adjoint(adjoint, ops);
    let forcing = nonlinear(&psi, &psi, ops);
    let (phi, res) = solve_steady(&mode.coupling, mode.lambda0, &forcing, grid, ops)?;
    let num = trilinear(&phi, &psi, &star, grid, ops) + trilinear(&psi, &phi, &star, grid, ops);
    Ok((num / rho(mode, adjoint, grid, ops), res))
}

/// Numerator of R from the closed-form corrections, with its absolute-value scale.
fn explicit_numerator(
    mode: &StabilityMode,
    adjoint: &AdjointMode,
    corr: &CMCorrection,
    grid: &RadialGrid,
    ops: &DiffOperators,
) -> (f64, f64) {
    let a = mode.a;
    let m = grid.len();
    let period = mode.period();
    let ir = &ops.inv_r;
    let h = &mode.h;
    let v: Vec<f64> = mode.phi.iter().map(|p| a * p).collect();
    let dh = ops.apply(Op::D, h);
    let sh = ops.apply(Op::Dstar, h);
    let dsh = ops.apply(Op::D, &sh);
    let dv = ops.apply(Op::D, &v);
    let hs = &adjoint.hstar;
    let shs = ops.apply(Op::Dstar, hs);
    let ps = &adjoint.phistar;

    // mean part, Phi_theta0 = -phi0 paired over the period
    let t0: Vec<f64> = corr.phi0.iter().map(|p| -p).collect();
    let dt0 = ops.apply(Op::D, &t0);
    let mean: Vec<f64> = (0..m)
        .map(|i| {
            -0.5 * period
                * (-2.0 * t0[i] * a * v[i] * hs[i] * ir[i] + t0[i] * h[i] * ps[i] * ir[i] + h[i] * dt0[i] * ps[i])
        })
        .collect();
    let mean_abs: Vec<f64> = mean.iter().map(|x| x.abs()).collect();

    // 2a part, Phi_2 = -phi_2
    let p2 = &corr.phi2;
    let dpz = ops.apply(Op::D, &p2.z);
    let dpr = ops.apply(Op::D, &p2.r);
    let dpt = ops.apply(Op::D, &p2.theta);
    let q = 2.0 * a;
    let mut num = grid.integrate(&mean);
    let mut abs = grid.integrate(&mean_abs);
    for j in 0..EXPLICIT_NZ {
        let z = period * j as f64 / EXPLICIT_NZ as f64;
        let (s1, c1) = (a * z).sin_cos();
        let (s2, c2) = (q * z).sin_cos();
        let mut integrand = vec![0.0; m];
        let mut magnitude = vec![0.0; m];
        for i in 0..m {
            let (pz, dz_pz, dr_pz) = (-s1 * sh[i], -a * c1 * sh[i], -s1 * dsh[i]);
            let (pr, dz_pr, dr_pr) = (a * c1 * h[i], -a * a * s1 * h[i], a * c1 * dh[i]);
            let (pt, dz_pt, dr_pt) = (c1 * v[i], -a * s1 * v[i], c1 * dv[i]);
            let (fz, dz_fz, dr_fz) = (s2 * p2.z[i], q * c2 * p2.z[i], s2 * dpz[i]);
            let (fr, dz_fr, dr_fr) = (-c2 * p2.r[i], q * s2 * p2.r[i], -c2 * dpr[i]);
            let (ft, dz_ft, dr_ft) = (-c2 * p2.theta[i], q * s2 * p2.theta[i], -c2 * dpt[i]);
            let (sz, sr, st) = (-s1 * shs[i], a * c1 * hs[i], c1 * ps[i] / a);
            let terms = [
                (fr * dr_pz + fz * dz_pz) * sz,
                (pr * dr_fz + pz * dz_fz) * sz,
                (fr * dr_pr + fz * dz_pr) * sr,
                (pr * dr_fr + pz * dz_fr) * sr,
                (fr * dr_pt + fz * dz_pt) * st,
                (pr * dr_ft + pz * dz_ft) * st,
                ft * pr * st * ir[i],
                pt * fr * st * ir[i],
                -2.0 * pt * ft * sr * ir[i],
            ];
            integrand[i] = -terms.iter().sum::<f64>();
            magnitude[i] = terms.iter().map(|t| t.abs()).sum::<f64>();
        }
        let w = period / EXPLICIT_NZ as f64;
        num += w * grid.integrate(&integrand);
        abs += w * grid.integrate(&magnitude);
    }
    (num, abs)
}

/// R from both routes; fails with [`TaylorError::PathDisagreement`] beyond [`PATH_TOL`].
pub fn compute_r(
    mode: &StabilityMode,
    adjoint: &AdjointMode,
    corr: &CMCorrection,
    grid: &RadialGrid,
    ops: &DiffOperators,
) -> Result<TransitionCoefficient> {
    if mode.grid != adjoint.grid || mode.grid != grid.tag() || (mode.a - adjoint.a).abs() > 0.0 {
        return Err(TaylorError::MixedProvenance("mode, adjoint and grid differ".into()));
    }
    let rho_val = rho(mode, adjoint, grid, ops);
    let norms = TrigField::from_mode(mode, ops).norm(grid) * TrigField::from_adjoint(adjoint, ops).norm(grid);
    let degenerate = mode.h.iter().all(|v| *v == 0.0) || mode.phi.iter().all(|v| *v == 0.0);
    if !degenerate && !(rho_val.abs() > 1e-10 * norms) {
        return Err(TaylorError::DegenerateNormalization { rho: rho_val });
    }
    let base = TransitionCoefficient {
        r: 0.0,
        r_inner: 0.0,
        r_explicit: 0.0,
        rel_diff: 0.0,
        r_scale: 0.0,
        rho: rho_val,
        path: AssemblyPath::InnerProduct,
        mode_gauge: mode.gauge,
        adjoint_gauge: adjoint.gauge,
        degenerate: false,
        bvp_residual: corr.residual,
        a: mode.a,
        lambda0: mode.lambda0,
        coupling: mode.coupling,
        grid: mode.grid,
    };
    if degenerate {
        log::warn!("degenerate eigenmode, R set to zero");
        return Ok(TransitionCoefficient { degenerate: true, ..base });
    }
    let (num, abs) = explicit_numerator(mode, adjoint, corr, grid, ops);
    let r_explicit = num / rho_val;
    let (r_inner, res) = r_inner_product(mode, adjoint, grid, ops)?;
    let r_scale = abs / rho_val.abs();
    let rel_diff = (r_inner - r_explicit).abs() / r_inner.abs().max(r_explicit.abs()).max(f64::MIN_POSITIVE);
    if rel_diff > PATH_TOL && (r_inner - r_explicit).abs() > DEFAULT_R_TOL * r_scale {
        return Err(TaylorError::PathDisagreement { explicit: r_explicit, inner: r_inner });
    }
    Ok(TransitionCoefficient {
        r: r_inner,
        r_inner,
        r_explicit,
        rel_diff,
        r_scale,
        bvp_residual: corr.residual.max(res),
        ..base
    })
}

/// Corrections and R for a mode and its adjoint.
pub fn transition_coefficient(
    mode: &StabilityMode,
    adjoint: &AdjointMode,
    grid: &RadialGrid,
    ops: &DiffOperators,
) -> Result<(CMCorrection, TransitionCoefficient)> {
    solvability_check(mode, adjoint, grid, ops)?;
    let corr = cm_correction(mode, grid, ops)?;
    let r = compute_r(mode, adjoint, &corr, grid, ops)?;
    Ok((corr, r))
}
