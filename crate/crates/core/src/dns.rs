//! Axisymmetric time stepper for du/dt = -A u + lambda B u + G(u, u), z-periodic with
//! no-slip walls. Chebyshev collocation in r, Galerkin-truncated Fourier series in z.
//!
//! Each harmonic k >= 1 carries the radial velocity F and its vorticity-like companion
//! g = L_q F with F = DF = 0 at the walls; u_z follows from continuity, so the state is
//! divergence free by construction. Diffusion (with every 1/r^2 term) is implicit, advection
//! and the lambda coupling are explicit (SBDF2, started with one SBDF1 step).

use nalgebra::{DMatrix, DVector, LU};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::{num_complex::Complex, Fft, FftPlanner};
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::centermanifold::{Series, TrigField};
use crate::error::{Result, TaylorError};
use crate::fields::{mu_of, read_snapshot, write_snapshot, FieldSnapshot, SnapshotMeta};
use crate::linstab::{AdjointMode, Coupling, StabilityMode};
use crate::radial_ops::{build_grid, build_interval_grid, BoundaryConditionSet, DiffOperators, Geometry, RadialGrid, Scheme};

/// Largest advective Courant number (and coupling number dt lambda sqrt|c_r c_theta|) accepted.
pub const CFL_MAX: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub enum DnsInit {
    /// eps psi_1 from the projection mode.
    EigenSeed { eps: f64 },
    /// Random divergence-free field with max |u| = eps and no mean axial flow.
    Random { eps: f64, seed: u64 },
    Snapshot(PathBuf),
    /// Continue from a state of a previous run.
    Field(TrigField),
}

/// psi_1 and its adjoint, for the amplitudes A = (u, psi_1*)_H / rho and the companion
/// amplitude from the quarter-period translates.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub mode: StabilityMode,
    pub psi: TrigField,
    pub psi_star: TrigField,
    pub rho: f64,
}

impl Projection {
    pub fn new(mode: &StabilityMode, adjoint: &AdjointMode, grid: &RadialGrid, ops: &DiffOperators) -> Result<Self> {
        if mode.grid != grid.tag() || adjoint.grid != grid.tag() {
            return Err(TaylorError::MixedProvenance("projection mode and DNS grid differ".into()));
        }
        if mode.a != adjoint.a {
            return Err(TaylorError::MixedProvenance("mode and adjoint wavenumbers differ".into()));
        }
        let psi = TrigField::from_mode(mode, ops);
        let psi_star = TrigField::from_adjoint(adjoint, ops);
        let rho = psi.inner(&psi_star, grid);
        if !(rho.abs() > 0.0) {
            return Err(TaylorError::DegenerateNormalization { rho });
        }
        Ok(Self { mode: mode.clone(), psi, psi_star, rho })
    }

    /// (A, A~) for a state whose base wavenumber matches the mode.
    pub fn amplitudes(&self, u: &TrigField, grid: &RadialGrid) -> (f64, f64) {
        let quarter = self.psi.period() / 4.0;
        let a = u.inner(&self.psi_star, grid) / self.rho;
        let at = u.inner(&self.psi_star.shifted(quarter), grid) / self.rho;
        (a, at)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DnsConfig {
    pub coupling: Coupling,
    /// Inner radius; ignored for narrow-gap couplings, which live on [0, 1].
    pub eta: f64,
    pub lambda: f64,
    /// Base axial wavenumber; the period is 2 pi / a.
    pub a: f64,
    pub nr: usize,
    /// Axial samples per period; harmonics up to (nz - 1) / 3 are carried.
    pub nz: usize,
    pub dt: f64,
    pub t_end: f64,
    pub sample_every: usize,
    pub init: DnsInit,
    pub scheme: Scheme,
    pub projection: Option<Projection>,
    /// Where to write the last finite state when a run aborts.
    pub dump_on_failure: Option<PathBuf>,
}

impl DnsConfig {
    /// Desk-scale defaults: nr = nz = 64, dt = 2e-4 in units of the gap diffusion time.
    pub fn new(coupling: Coupling, eta: f64, lambda: f64, a: f64) -> Self {
        let width = match coupling {
            Coupling::Cylindrical { .. } => 1.0 - eta,
            Coupling::NarrowGap { .. } => 1.0,
        };
        Self {
            coupling,
            eta,
            lambda,
            a,
            nr: 64,
            nz: 64,
            dt: 2e-4 * width * width,
            t_end: 1.0 * width * width,
            sample_every: 10,
            init: DnsInit::EigenSeed { eps: 1e-3 },
            scheme: Scheme::Collocation,
            projection: None,
            dump_on_failure: None,
        }
    }

    pub fn with_taylor(mut self, taylor: f64) -> Self {
        self.lambda = taylor.max(0.0).sqrt();
        self
    }

    pub fn period(&self) -> f64 {
        2.0 * PI / self.a
    }

    pub fn kmax(&self) -> usize {
        (self.nz - 1) / 3
    }

    pub fn grid(&self) -> Result<RadialGrid> {
        match self.coupling {
            Coupling::Cylindrical { .. } => build_grid(self.eta, self.nr, self.scheme),
            Coupling::NarrowGap { .. } => build_interval_grid(0.0, 1.0, self.nr, self.scheme, Geometry::Planar),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TaylorError::InvalidArgument(m));
        if self.nz < 8 || self.nz % 2 != 0 {
            return bad(format!("nz must be even and at least 8, got {}", self.nz));
        }
        if !(self.dt > 0.0 && self.t_end >= 0.0 && self.a > 0.0) {
            return bad("dt, a must be positive and t_end non-negative".into());
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad(format!("lambda must be finite and non-negative, got {}", self.lambda));
        }
        if self.sample_every == 0 {
            return bad("sample_every must be at least 1".into());
        }
        Ok(())
    }
}

/// Prefactored implicit operators for one value of the SBDF coefficient c.
struct Implicit {
    /// Per harmonic k >= 1: [L_q F - g = 0; c g - L_q g = rhs], F = DF = 0.
    merid: Vec<LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
    /// Per harmonic k >= 0: c - L_q with Dirichlet walls (k = 0 is the mean u_theta).
    theta: Vec<LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
    /// c - D_*D for the mean axial velocity.
    mean_z: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl Implicit {
    fn new(c: f64, a: f64, kmax: usize, ops: &DiffOperators) -> Self {
        let m = ops.size();
        let id = DMatrix::<f64>::identity(m, m);
        let dirichlet = BoundaryConditionSet::new().dirichlet(0);
        let second = |op: DMatrix<f64>| {
            let mut s = &id * c - op;
            dirichlet.embed(ops, &mut s, None);
            s.lu()
        };
        let clamped = BoundaryConditionSet::new().clamped(0, 0, 1);
        let mut merid = Vec::with_capacity(kmax);
        let mut theta = vec![second(ops.dd_star.clone())];
        for k in 1..=kmax {
            let l = ops.helmholtz(k as f64 * a);
            let mut big = DMatrix::zeros(2 * m, 2 * m);
            big.view_mut((0, 0), (m, m)).copy_from(&l);
            big.view_mut((0, m), (m, m)).copy_from(&(-&id));
            big.view_mut((m, m), (m, m)).copy_from(&(&id * c - &l));
            clamped.embed(ops, &mut big, None);
            merid.push(big.lu());
            theta.push(second(l));
        }
        Self { merid, theta, mean_z: second(ops.dstar_d.clone()) }
    }
}

/// Physical-space evaluation of G(u, u) on nz equispaced heights.
struct Transform {
    nz: usize,
    inverse: Arc<dyn Fft<f64>>,
    forward: Arc<dyn Fft<f64>>,
}

impl Transform {
    fn new(nz: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self { nz, inverse: planner.plan_fft_inverse(nz), forward: planner.plan_fft_forward(nz) }
    }

    /// Samples with r fastest in the output: out[j * m + i].
    fn to_physical(&self, s: &Series) -> Vec<f64> {
        let (m, nz) = (s.cos[0].len(), self.nz);
        let mut buf = vec![Complex::new(0.0, 0.0); m * nz];
        for i in 0..m {
            let row = &mut buf[i * nz..(i + 1) * nz];
            row[0] = Complex::new(s.cos[0][i], 0.0);
            for k in 1..=s.kmax().min((nz - 1) / 2) {
                let x = Complex::new(0.5 * s.cos[k][i], -0.5 * s.sin[k][i]);
                row[k] = x;
                row[nz - k] = x.conj();
            }
        }
        self.inverse.process(&mut buf);
        let mut out = vec![0.0; m * nz];
        for i in 0..m {
            for j in 0..nz {
                out[j * m + i] = buf[i * nz + j].re;
            }
        }
        out
    }

    fn to_series(&self, f: &[f64], m: usize, kmax: usize) -> Series {
        let nz = self.nz;
        let mut buf: Vec<Complex<f64>> = (0..m * nz).map(|p| Complex::new(f[(p % nz) * m + p / nz], 0.0)).collect();
        self.forward.process(&mut buf);
        let mut s = Series::zeros(kmax, m);
        let scale = 1.0 / nz as f64;
        for i in 0..m {
            s.cos[0][i] = buf[i * nz].re * scale;
            for k in 1..=kmax {
                let x = buf[i * nz + k] * scale;
                s.cos[k][i] = 2.0 * x.re;
                s.sin[k][i] = -2.0 * x.im;
            }
        }
        s
    }
}

/// Applies the radial derivative matrix to every coefficient profile with one product.
fn dr_series(s: &Series, ops: &DiffOperators) -> Series {
    let m = s.cos[0].len();
    let kk = s.kmax() + 1;
    let mut packed = DMatrix::zeros(m, 2 * kk);
    for k in 0..kk {
        packed.set_column(k, &DVector::from_column_slice(&s.cos[k]));
        packed.set_column(kk + k, &DVector::from_column_slice(&s.sin[k]));
    }
    let d = &ops.d * packed;
    Series {
        cos: (0..kk).map(|k| d.column(k).iter().copied().collect()).collect(),
        sin: (0..kk).map(|k| d.column(kk + k).iter().copied().collect()).collect(),
    }
}

/// G(u, u) truncated to the harmonics of u, plus the largest advective Courant number per unit dt.
fn nonlinear_pseudo(u: &TrigField, ops: &DiffOperators, tr: &Transform, spacing: &[f64]) -> (TrigField, f64) {
    let (m, nz, kmax) = (ops.size(), tr.nz, u.kmax());
    let comps = [&u.z, &u.r, &u.theta];
    let vals: Vec<Vec<f64>> = comps.iter().map(|s| tr.to_physical(s)).collect();
    let drs: Vec<Vec<f64>> = comps.iter().map(|s| tr.to_physical(&dr_series(s, ops))).collect();
    let dzs: Vec<Vec<f64>> = comps.iter().map(|s| tr.to_physical(&s.dz(u.a))).collect();
    let (uz, ur, ut) = (&vals[0], &vals[1], &vals[2]);
    let dz_axial = PI / (u.a * kmax.max(1) as f64);
    let mut out = [vec![0.0; m * nz], vec![0.0; m * nz], vec![0.0; m * nz]];
    let mut courant: f64 = 0.0;
    for p in 0..m * nz {
        let i = p % m;
        let ir = ops.inv_r[i];
        let adv = |c: usize| ur[p] * drs[c][p] + uz[p] * dzs[c][p];
        out[0][p] = -adv(0);
        out[1][p] = -(adv(1) - ut[p] * ut[p] * ir);
        out[2][p] = -(adv(2) + ut[p] * ur[p] * ir);
        courant = courant.max(ur[p].abs() / spacing[i] + uz[p].abs() / dz_axial);
    }
    let [gz, gr, gt] = out;
    let g = TrigField {
        a: u.a,
        z: tr.to_series(&gz, m, kmax),
        r: tr.to_series(&gr, m, kmax),
        theta: tr.to_series(&gt, m, kmax),
    };
    (g, courant)
}

/// Local node spacing, the smaller of the two neighbouring gaps.
fn node_spacing(grid: &RadialGrid) -> Vec<f64> {
    let x = &grid.nodes;
    let n = x.len();
    (0..n)
        .map(|i| {
            let left = if i > 0 { x[i] - x[i - 1] } else { f64::INFINITY };
            let right = if i + 1 < n { x[i + 1] - x[i] } else { f64::INFINITY };
            left.min(right)
        })
        .collect()
}

/// Resets u_z of every harmonic k >= 1 from continuity D_*u_r + d_z u_z = 0 and pins the
/// walls of the mean profiles.
fn rebuild_axial(u: &mut TrigField, ops: &DiffOperators) {
    use crate::radial_ops::Op;
    let m = ops.size();
    for k in 1..=u.kmax() {
        let q = k as f64 * u.a;
        u.z.sin[k] = ops.apply(Op::Dstar, &u.r.cos[k]).iter().map(|v| -v / q).collect();
        u.z.cos[k] = ops.apply(Op::Dstar, &u.r.sin[k]).iter().map(|v| v / q).collect();
    }
    u.r.cos[0].iter_mut().for_each(|v| *v = 0.0);
    for s in [&mut u.z, &mut u.theta] {
        s.cos[0][0] = 0.0;
        s.cos[0][m - 1] = 0.0;
    }
}

struct Solver {
    kmax: usize,
    a: f64,
    dt: f64,
    lambda: f64,
    c_r: Vec<f64>,
    c_theta: Vec<f64>,
    helm: Vec<DMatrix<f64>>,
    first: Implicit,
    second: Implicit,
    transform: Transform,
    spacing: Vec<f64>,
}

impl Solver {
    fn new(config: &DnsConfig, grid: &RadialGrid, ops: &DiffOperators) -> Self {
        let kmax = config.kmax();
        Self {
            kmax,
            a: config.a,
            dt: config.dt,
            lambda: config.lambda,
            c_r: grid.nodes.iter().map(|&r| config.coupling.c_r(r)).collect(),
            c_theta: grid.nodes.iter().map(|&r| config.coupling.c_theta(r)).collect(),
            helm: (0..=kmax).map(|k| ops.helmholtz(k as f64 * config.a)).collect(),
            first: Implicit::new(1.0 / config.dt, config.a, kmax, ops),
            second: Implicit::new(1.5 / config.dt, config.a, kmax, ops),
            transform: Transform::new(config.nz),
            spacing: node_spacing(grid),
        }
    }

    /// lambda B u + G(u, u) and the Courant number of u.
    fn forcing(&self, u: &TrigField, ops: &DiffOperators) -> (TrigField, f64) {
        let (mut f, courant) = nonlinear_pseudo(u, ops, &self.transform, &self.spacing);
        f.r = f.r.add(&u.theta.times_profile(&self.c_r).scale(self.lambda));
        f.theta = f.theta.add(&u.r.times_profile(&self.c_theta).scale(self.lambda));
        (f, courant * self.dt)
    }

    /// One implicit solve: c u_new - L u_new = c hist + f_star, harmonic by harmonic.
    fn solve(&self, imp: &Implicit, hist: &TrigField, f: &TrigField, ops: &DiffOperators) -> TrigField {
        let m = ops.size();
        let mut u = TrigField::zeros(self.a, self.kmax, m);
        let dirichlet = |lu: &LU<f64, nalgebra::Dyn, nalgebra::Dyn>, rhs: Vec<f64>| -> Vec<f64> {
            let mut b = DVector::from_vec(rhs);
            b[0] = 0.0;
            b[m - 1] = 0.0;
            lu.solve(&b).expect("factorised operator").as_slice().to_vec()
        };
        let sum = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| p + q).collect() };
        u.theta.cos[0] = dirichlet(&imp.theta[0], sum(&hist.theta.cos[0], &f.theta.cos[0]));
        u.z.cos[0] = dirichlet(&imp.mean_z, sum(&hist.z.cos[0], &f.z.cos[0]));
        for k in 1..=self.kmax {
            let q = k as f64 * self.a;
            let l = &self.helm[k];
            for (sin_group, fr, fz, sign) in [(false, &f.r.cos[k], &f.z.sin[k], -1.0), (true, &f.r.sin[k], &f.z.cos[k], 1.0)] {
                let h = if sin_group { &hist.r.sin[k] } else { &hist.r.cos[k] };
                let lh = l * DVector::from_column_slice(h);
                let dfz = &ops.d * DVector::from_column_slice(fz);
                let mut b = DVector::zeros(2 * m);
                for i in 0..m {
                    b[m + i] = lh[i] - q * q * fr[i] + sign * q * dfz[i];
                }
                for row in [0, m - 1, m, 2 * m - 1] {
                    b[row] = 0.0;
                }
                let x = imp.merid[k - 1].solve(&b).expect("factorised operator");
                let fnew: Vec<f64> = x.rows(0, m).iter().copied().collect();
                let (ht, ft) = if sin_group { (&hist.theta.sin[k], &f.theta.sin[k]) } else { (&hist.theta.cos[k], &f.theta.cos[k]) };
                let tnew = dirichlet(&imp.theta[k], sum(ht, ft));
                if sin_group {
                    u.r.sin[k] = fnew;
                    u.theta.sin[k] = tnew;
                } else {
                    u.r.cos[k] = fnew;
                    u.theta.cos[k] = tnew;
                }
            }
        }
        rebuild_axial(&mut u, ops);
        u
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DnsSample {
    pub t: f64,
    /// (1/2) (u, u)_H over one period.
    pub energy: f64,
    /// Projection amplitudes; NaN without a projection mode.
    pub a: f64,
    pub a_tilde: f64,
    /// int int r u_z dr dz.
    pub flux: f64,
    /// ||u||_H, the scale for the flux tolerance.
    pub norm: f64,
}

impl DnsSample {
    pub fn amplitude(&self) -> f64 {
        self.a.hypot(self.a_tilde)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DnsTimeSeries {
    pub samples: Vec<DnsSample>,
    pub dt: f64,
    /// Time between samples.
    pub interval: f64,
}

impl DnsTimeSeries {
    /// Least-squares slope of ln sqrt(A^2 + A~^2) over samples with t in [t_from, t_to].
    pub fn growth_rate(&self, t_from: f64, t_to: f64) -> Result<f64> {
        let pts: Vec<(f64, f64)> = self
            .samples
            .iter()
            .filter(|s| s.t >= t_from && s.t <= t_to && s.amplitude() > 0.0)
            .map(|s| (s.t, s.amplitude().ln()))
            .collect();
        if pts.len() < 3 {
            return Err(TaylorError::InsufficientData(format!("{} samples in the fit window", pts.len())));
        }
        Ok(least_squares(&pts).0)
    }

    /// Mean amplitude over the last `tail` fraction of the run when it varies by less than
    /// `rel_tol` there.
    pub fn saturated_amplitude(&self, tail: f64, rel_tol: f64) -> Option<f64> {
        let t_end = self.samples.last()?.t;
        let t0 = t_end * (1.0 - tail);
        let amps: Vec<f64> = self.samples.iter().filter(|s| s.t >= t0).map(|s| s.amplitude()).collect();
        if amps.len() < 2 || amps.iter().any(|a| !a.is_finite()) {
            return None;
        }
        let mean = amps.iter().sum::<f64>() / amps.len() as f64;
        let (lo, hi) = amps.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &a| (l.min(a), h.max(a)));
        (mean > 0.0 && (hi - lo) <= rel_tol * mean).then_some(mean)
    }

    /// Largest |flux| / ||u|| over the run.
    pub fn max_relative_flux(&self) -> f64 {
        self.samples.iter().map(|s| if s.norm > 0.0 { s.flux.abs() / s.norm } else { 0.0 }).fold(0.0, f64::max)
    }

    /// CSV text with columns t, energy, A, Atilde, flux.
    pub fn csv(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::from("t,energy,A,Atilde,flux\n");
        for s in &self.samples {
            let _ = writeln!(out, "{:?},{:?},{:?},{:?},{:?}", s.t, s.energy, s.a, s.a_tilde, s.flux);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.csv())?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DnsRun {
    pub series: DnsTimeSeries,
    pub state: TrigField,
    pub snapshot: FieldSnapshot,
    pub steps: usize,
}

/// (slope, intercept) of the least-squares line through the points.
fn least_squares(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), p| (a + p.0, b + p.1));
    let (mx, my) = (sx / n, sy / n);
    let (sxy, sxx) = pts.iter().fold((0.0, 0.0), |(a, b), p| (a + (p.0 - mx) * (p.1 - my), b + (p.0 - mx).powi(2)));
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

fn snapshot_meta(config: &DnsConfig, grid: &RadialGrid) -> SnapshotMeta {
    SnapshotMeta {
        eta: grid.left,
        right: grid.right,
        mu: mu_of(&config.coupling, grid.left),
        lambda: config.lambda,
        a: config.a,
        gauge: 1.0,
        phase: 0.0,
        order: 0,
        scheme: grid.scheme,
        geometry: grid.geometry,
    }
}

/// Axial Fourier coefficients of a snapshot, up to `kmax`, projected onto divergence-free fields.
pub fn trig_from_snapshot(s: &FieldSnapshot, grid: &RadialGrid, ops: &DiffOperators, kmax: usize) -> Result<TrigField> {
    if !s.grid()?.same_discretization(grid) {
        return Err(TaylorError::InvalidArgument("snapshot grid differs from the run grid".into()));
    }
    let m = grid.len();
    let tr = Transform::new(s.nz());
    let keep = kmax.min((s.nz() - 1) / 2);
    let mut u = TrigField::zeros(s.meta.a, kmax, m);
    for (dst, src) in [(&mut u.z, &s.u_z), (&mut u.r, &s.u_r), (&mut u.theta, &s.u_theta)] {
        let series = tr.to_series(src, m, keep);
        for k in 0..=keep {
            dst.cos[k] = series.cos[k].clone();
            dst.sin[k] = series.sin[k].clone();
        }
    }
    rebuild_axial(&mut u, ops);
    Ok(u)
}

fn random_state(eps: f64, seed: u64, a: f64, kmax: usize, grid: &RadialGrid, ops: &DiffOperators) -> TrigField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (l, w) = (grid.left, grid.right - grid.left);
    let mut poly = |power: i32| -> Vec<f64> {
        let c: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        grid.sample(|r| {
            let x = (r - l) / w;
            (x * (1.0 - x)).powi(power) * (c[0] + c[1] * x + c[2] * x * x + c[3] * x * x * x)
        })
    };
    let mut u = TrigField::zeros(a, kmax, grid.len());
    u.theta.cos[0] = poly(1);
    for k in 1..=kmax.min(4) {
        u.r.cos[k] = poly(2);
        u.r.sin[k] = poly(2);
        u.theta.cos[k] = poly(1);
        u.theta.sin[k] = poly(1);
    }
    rebuild_axial(&mut u, ops);
    let peak = u.max_abs();
    u.scale(eps / peak)
}

fn initial_state(config: &DnsConfig, grid: &RadialGrid, ops: &DiffOperators) -> Result<TrigField> {
    let kmax = config.kmax();
    let mut u = match &config.init {
        DnsInit::EigenSeed { eps } => {
            let p = config.projection.as_ref().ok_or_else(|| {
                TaylorError::InvalidArgument("an eigen seed needs a projection mode".into())
            })?;
            let mut u = TrigField::zeros(config.a, kmax, grid.len());
            let psi = p.psi.scale(*eps);
            u.z.sin[1] = psi.z.sin[1].clone();
            u.r.cos[1] = psi.r.cos[1].clone();
            u.theta.cos[1] = psi.theta.cos[1].clone();
            u
        }
        DnsInit::Random { eps, seed } => random_state(*eps, *seed, config.a, kmax, grid, ops),
        DnsInit::Snapshot(path) => trig_from_snapshot(&read_snapshot(path)?, grid, ops, kmax)?,
        DnsInit::Field(f) => {
            let mut u = TrigField::zeros(config.a, kmax, grid.len());
            for (dst, src) in [(&mut u.z, &f.z), (&mut u.r, &f.r), (&mut u.theta, &f.theta)] {
                for k in 0..=kmax.min(src.kmax()) {
                    dst.cos[k] = src.cos[k].clone();
                    dst.sin[k] = src.sin[k].clone();
                }
            }
            u
        }
    };
    let a0 = match &config.init {
        DnsInit::Snapshot(_) | DnsInit::Field(_) => u.a,
        _ => config.a,
    };
    if (a0 - config.a).abs() > 1e-12 * config.a {
        return Err(TaylorError::InvalidArgument(format!("initial state has wavenumber {a0}, run uses {}", config.a)));
    }
    u.a = config.a;
    rebuild_axial(&mut u, ops);
    Ok(u)
}

fn sample(t: f64, u: &TrigField, config: &DnsConfig, grid: &RadialGrid) -> DnsSample {
    let uu = u.inner(u, grid);
    let (a, a_tilde) = match &config.projection {
        Some(p) => p.amplitudes(u, grid),
        None => (f64::NAN, f64::NAN),
    };
    DnsSample { t, energy: 0.5 * uu, a, a_tilde, flux: config.period() * grid.integrate(&u.z.cos[0]), norm: uu.sqrt() }
}

fn fail(config: &DnsConfig, grid: &RadialGrid, u: &TrigField, err: TaylorError) -> TaylorError {
    if let Some(path) = &config.dump_on_failure {
        let snap = FieldSnapshot::from_trig(u, grid, config.nz, snapshot_meta(config, grid));
        if let Err(e) = write_snapshot(&snap, path) {
            log::error!("state dump to {} failed: {e}", path.display());
        }
    }
    err
}

/// Time-marches the configured run and returns the sampled series and the final state.
pub fn run(config: &DnsConfig) -> Result<DnsRun> {
    config.validate()?;
    let grid = config.grid()?;
    let ops = DiffOperators::new(&grid);
    if let Some(p) = &config.projection {
        if p.mode.grid != grid.tag() || p.mode.coupling != config.coupling {
            return Err(TaylorError::MixedProvenance("projection mode comes from a different grid or coupling".into()));
        }
        if (p.mode.a - config.a).abs() > 1e-12 * config.a {
            return Err(TaylorError::MixedProvenance(format!("projection wavenumber {} vs run {}", p.mode.a, config.a)));
        }
    }
    let coupling_number = config.dt
        * config.lambda
        * grid.nodes.iter().map(|&r| (config.coupling.c_r(r) * config.coupling.c_theta(r)).abs().sqrt()).fold(0.0, f64::max);
    if coupling_number > CFL_MAX {
        return Err(TaylorError::CflViolation { t: 0.0, detail: format!("coupling number {coupling_number:.3} > {CFL_MAX}") });
    }
    let solver = Solver::new(config, &grid, &ops);
    let mut u = initial_state(config, &grid, &ops)?;
    let steps = (config.t_end / config.dt).round() as usize;
    let mut samples = vec![sample(0.0, &u, config, &grid)];
    let mut prev: Option<(TrigField, TrigField)> = None;
    for n in 0..steps {
        let t = n as f64 * config.dt;
        let (f, courant) = solver.forcing(&u, &ops);
        if !(courant <= CFL_MAX) {
            let detail = format!("advective Courant number {courant:.3} > {CFL_MAX}");
            return Err(fail(config, &grid, &u, TaylorError::CflViolation { t, detail }));
        }
        let next = match &prev {
            None => solver.solve(&solver.first, &u.scale(1.0 / config.dt), &f, &ops),
            Some((u_old, f_old)) => {
                let hist = u.scale(2.0 / config.dt).add(&u_old.scale(-0.5 / config.dt));
                let fstar = f.scale(2.0).add(&f_old.scale(-1.0));
                solver.solve(&solver.second, &hist, &fstar, &ops)
            }
        };
        if !next.max_abs().is_finite() {
            return Err(fail(config, &grid, &u, TaylorError::NonFinite { t: t + config.dt }));
        }
        prev = Some((std::mem::replace(&mut u, next), f));
        if (n + 1) % config.sample_every == 0 || n + 1 == steps {
            samples.push(sample((n + 1) as f64 * config.dt, &u, config, &grid));
        }
    }
    let snapshot = FieldSnapshot::from_trig(&u, &grid, config.nz, snapshot_meta(config, &grid));
    let series = DnsTimeSeries { samples, dt: config.dt, interval: config.dt * config.sample_every as f64 };
    Ok(DnsRun { series, state: u, snapshot, steps })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExponentFit {
    pub beta: f64,
    /// c in |A| = c (T - T_c)^beta.
    pub prefactor: f64,
    pub used: usize,
    pub excluded: usize,
}

/// Least-squares slope of ln|A| against ln(T - T_c). Runs without a saturated amplitude,
/// or at T <= T_c, are excluded.
pub fn measure_exponent(runs: &[(f64, Option<f64>)], t_c: f64) -> Result<ExponentFit> {
    let pts: Vec<(f64, f64)> = runs
        .iter()
        .filter_map(|&(t, amp)| match amp {
            Some(a) if t > t_c && a > 0.0 => Some(((t - t_c).ln(), a.ln())),
            _ => None,
        })
        .collect();
    if pts.len() < 3 {
        return Err(TaylorError::InsufficientData(format!("{} usable saturated runs, need 3", pts.len())));
    }
    let (beta, c) = least_squares(&pts);
    Ok(ExponentFit { beta, prefactor: c.exp(), used: pts.len(), excluded: runs.len() - pts.len() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TStarBracket {
    /// Lowest T at which the continued state survived.
    pub survived: f64,
    /// First T at which it collapsed; T* lies in [collapsed, survived].
    pub collapsed: f64,
    pub stages: usize,
    /// A small seed decays at `survived` while the continued state persists there.
    pub bistable: Option<bool>,
}

/// Descends from `start` (saturated at `t_high`) in steps of `step`, continuing the state,
/// until its amplitude drops below `collapse_frac` of the amplitude at `t_high`.
/// `stage(T, state)` advances a state at T and returns it with its amplitude.
/// Returns (last surviving T, first collapsing T, stages, surviving state).
pub fn hysteresis_scan<S>(
    start: S,
    t_high: f64,
    t_low: f64,
    step: f64,
    collapse_frac: f64,
    mut stage: impl FnMut(f64, &S) -> Result<(S, f64)>,
) -> Result<(f64, f64, usize, S)> {
    if !(t_low < t_high && step > 0.0 && collapse_frac > 0.0 && collapse_frac < 1.0) {
        return Err(TaylorError::InvalidArgument("need t_low < t_high, step > 0 and 0 < collapse_frac < 1".into()));
    }
    let (mut state, reference) = stage(t_high, &start)?;
    let mut survived = t_high;
    let mut stages = 1;
    loop {
        let t = survived - step;
        if t < t_low {
            return Err(TaylorError::TStarBelowRange { t_low });
        }
        let (next, amp) = stage(t, &state)?;
        stages += 1;
        if !(amp >= collapse_frac * reference) {
            return Ok((survived, t, stages, state));
        }
        state = next;
        survived = t;
    }
}

/// Hysteresis bracket of T* for a Type-II case (R > 0). The template supplies resolution,
/// stage length t_end, the initial state at t_high, and the projection mode.
pub fn bracket_tstar(template: &DnsConfig, r: f64, t_high: f64, t_low: f64, step: f64) -> Result<TStarBracket> {
    if !(r > 0.0) {
        return Err(TaylorError::InvalidArgument(format!("T* bracketing needs a Type-II case (R > 0), got R = {r}")));
    }
    let amplitude = |run: &DnsRun| -> f64 {
        let last = run.series.samples.last().expect("runs record at least one sample");
        if template.projection.is_some() { last.amplitude() } else { last.norm }
    };
    let stage = |t: f64, init: &DnsInit| -> Result<(DnsInit, f64)> {
        let mut c = template.clone().with_taylor(t);
        c.init = init.clone();
        let out = run(&c)?;
        let amp = amplitude(&out);
        Ok((DnsInit::Field(out.state), amp))
    };
    let (survived, collapsed, stages, _) = hysteresis_scan(template.init.clone(), t_high, t_low, step, 0.5, stage)?;
    let seed = if template.projection.is_some() {
        DnsInit::EigenSeed { eps: 1e-3 }
    } else {
        DnsInit::Random { eps: 1e-3, seed: 1 }
    };
    let mut c = template.clone().with_taylor(survived);
    c.init = seed;
    let out = run(&c)?;
    let first = out.series.samples.first().map(|s| if template.projection.is_some() { s.amplitude() } else { s.norm });
    let bistable = first.map(|a0| amplitude(&out) < a0);
    Ok(TStarBracket { survived, collapsed, stages, bistable })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::centermanifold::nonlinear;

    fn annulus(n: usize) -> (RadialGrid, DiffOperators) {
        let g = build_grid(0.7, n, Scheme::Collocation).unwrap();
        let o = DiffOperators::new(&g);
        (g, o)
    }

    #[test]
    fn pseudo_spectral_product_is_exact() {
        let (g, o) = annulus(24);
        let u = random_state(1.0, 7, 3.0, 4, &g, &o);
        let nz = 32;
        let kmax = (nz - 1) / 3;
        let mut wide = TrigField::zeros(3.0, kmax, g.len());
        for (dst, src) in [(&mut wide.z, &u.z), (&mut wide.r, &u.r), (&mut wide.theta, &u.theta)] {
            for k in 0..=4 {
                dst.cos[k] = src.cos[k].clone();
                dst.sin[k] = src.sin[k].clone();
            }
        }
        let (fast, _) = nonlinear_pseudo(&wide, &o, &Transform::new(nz), &node_spacing(&g));
        let exact = nonlinear(&u, &u, &o);
        let scale = exact.max_abs();
        for (p, q) in [(&fast.z, &exact.z), (&fast.r, &exact.r), (&fast.theta, &exact.theta)] {
            for k in 0..=8 {
                for i in 0..g.len() {
                    assert!((p.cos[k][i] - q.cos[k][i]).abs() < 1e-12 * scale);
                    assert!((p.sin[k][i] - q.sin[k][i]).abs() < 1e-12 * scale);
                }
            }
        }
    }

    #[test]
    fn transform_round_trip() {
        let (g, o) = annulus(16);
        let u = random_state(1.0, 3, 2.0, 5, &g, &o);
        let tr = Transform::new(16);
        let back = tr.to_series(&tr.to_physical(&u.theta), g.len(), 5);
        for k in 0..=5 {
            for i in 0..g.len() {
                assert!((back.cos[k][i] - u.theta.cos[k][i]).abs() < 1e-14);
                assert!((back.sin[k][i] - u.theta.sin[k][i]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn random_state_is_divergence_free_without_mean_flow() {
        let (g, o) = annulus(24);
        let u = random_state(0.3, 11, 4.0, 6, &g, &o);
        assert!((u.max_abs() - 0.3).abs() < 1e-15);
        assert!(u.divergence(&o) < 1e-10);
        assert!(u.z.cos[0].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn exponent_fit_on_synthetic_data() {
        let tc: f64 = 1000.0;
        let runs: Vec<(f64, Option<f64>)> =
            [1.02f64, 1.05, 1.1, 1.2].iter().map(|r| (r * tc, Some(0.7 * (r * tc - tc).sqrt()))).collect();
        let fit = measure_exponent(&runs, tc).unwrap();
        assert!((fit.beta - 0.5).abs() < 1e-12 && (fit.prefactor - 0.7).abs() < 1e-10);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let noisy: Vec<(f64, Option<f64>)> =
                runs.iter().map(|&(t, a)| (t, a.map(|a| a * (1.0 + 0.01 * rng.gen_range(-1.0..1.0))))).collect();
            assert!((measure_exponent(&noisy, tc).unwrap().beta - 0.5).abs() < 0.02);
        }

        let sparse = [(1.1 * tc, Some(1.0)), (1.2 * tc, None), (0.9 * tc, Some(1.0)), (1.3 * tc, Some(2.0))];
        assert!(matches!(measure_exponent(&sparse, tc), Err(TaylorError::InsufficientData(_))));
    }

    /// dx/dt = (T - 1) x + r x^3 - x^5 has a nonzero branch down to T* = 1 - r^2 / 4.
    fn toy_stage(r: f64) -> impl FnMut(f64, &f64) -> Result<(f64, f64)> {
        move |t: f64, x0: &f64| {
            let mut x = *x0;
            let h = 1e-3;
            for _ in 0..40_000 {
                let f = |x: f64| (t - 1.0) * x + r * x.powi(3) - x.powi(5);
                let k1 = f(x);
                let k2 = f(x + 0.5 * h * k1);
                let k3 = f(x + 0.5 * h * k2);
                let k4 = f(x + h * k3);
                x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            }
            Ok((x, x.abs()))
        }
    }

    #[test]
    fn hysteresis_scan_brackets_the_fold() {
        let r = 1.0;
        let tstar = 1.0 - r * r / 4.0;
        let mut widths = Vec::new();
        for step in [0.04, 0.02, 0.01] {
            let (hi, lo, _, _) = hysteresis_scan(1.0f64, 1.1, 0.5, step, 0.5, toy_stage(r)).unwrap();
            assert!(lo < tstar && tstar <= hi + 1e-9, "[{lo}, {hi}] misses {tstar}");
            widths.push(hi - lo);
            // bistability at the surviving value: a small seed decays
            let (x, _) = toy_stage(r)(hi, &1e-3).unwrap();
            assert!(x.abs() < 1e-3);
        }
        assert!(widths[1] < widths[0] && widths[2] < widths[1]);
        assert!(matches!(
            hysteresis_scan(1.0f64, 1.1, 0.9, 0.05, 0.5, toy_stage(r)),
            Err(TaylorError::TStarBelowRange { .. })
        ));
    }
}
