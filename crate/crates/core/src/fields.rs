//! Physical-space snapshots of eigenmodes and bifurcated flows, topology diagnostics of
//! the meridional pattern and the expansion of axial mean profiles in the e_k basis.

use nalgebra::{DMatrix, DVector};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::centermanifold::{CMCorrection, TrigField};
use crate::error::{Result, TaylorError};
use crate::linstab::{Coupling, StabilityMode};
use crate::radial_ops::{build_interval_grid, DiffOperators, Geometry, Op, RadialGrid, Scheme};

/// Relative flux below which a field counts as carrying no net axial flow.
pub const FLUX_TOL: f64 = 1e-8;
const SNAPSHOT_MAGIC: &str = "taylor-snapshot v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMeta {
    /// Inner radius (left end of the grid).
    pub eta: f64,
    pub right: f64,
    pub mu: f64,
    pub lambda: f64,
    pub a: f64,
    pub gauge: f64,
    pub phase: f64,
    /// 1 for gamma psi_1, 2 when gamma^2 Phi is included, 0 for a time-stepped state.
    pub order: u8,
    pub scheme: Scheme,
    pub geometry: Geometry,
}

/// Velocity on the tensor grid, column-major with r fastest: u[i + nr * j].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSnapshot {
    pub r_nodes: Vec<f64>,
    pub z_nodes: Vec<f64>,
    pub u_z: Vec<f64>,
    pub u_r: Vec<f64>,
    pub u_theta: Vec<f64>,
    pub meta: SnapshotMeta,
}

/// Rotation ratio recovered from the coupling; mu = (1 - kappa)/(1/eta^2 - kappa).
pub fn mu_of(coupling: &Coupling, eta: f64) -> f64 {
    match *coupling {
        Coupling::Cylindrical { kappa } => (1.0 - kappa) / (1.0 / (eta * eta) - kappa),
        Coupling::NarrowGap { mu, .. } => mu,
    }
}

impl FieldSnapshot {
    pub fn nr(&self) -> usize {
        self.r_nodes.len()
    }

    pub fn nz(&self) -> usize {
        self.z_nodes.len()
    }

    pub fn period(&self) -> f64 {
        2.0 * PI / self.meta.a
    }

    pub fn at(&self, field: &[f64], i: usize, j: usize) -> f64 {
        field[i + self.nr() * j]
    }

    /// Sample a field given as axial Fourier series.
    pub fn from_trig(field: &TrigField, grid: &RadialGrid, nz: usize, meta: SnapshotMeta) -> Self {
        let nr = grid.len();
        let period = field.period();
        let z_nodes: Vec<f64> = (0..nz).map(|j| period * j as f64 / nz as f64).collect();
        let mut out = Self {
            r_nodes: grid.nodes.clone(),
            z_nodes,
            u_z: Vec::with_capacity(nr * nz),
            u_r: Vec::with_capacity(nr * nz),
            u_theta: Vec::with_capacity(nr * nz),
            meta,
        };
        for j in 0..nz {
            let [uz, ur, ut] = field.eval(out.z_nodes[j]);
            out.u_z.extend(uz);
            out.u_r.extend(ur);
            out.u_theta.extend(ut);
        }
        out
    }

    /// Radial grid the snapshot was sampled on.
    pub fn grid(&self) -> Result<RadialGrid> {
        let g = build_interval_grid(self.meta.eta, self.meta.right, self.nr() - 1, self.meta.scheme, self.meta.geometry)?;
        if g.nodes != self.r_nodes {
            return Err(TaylorError::Format("radial nodes do not match the recorded grid".into()));
        }
        Ok(g)
    }

    /// (int int r |u|^2 dr dz)^(1/2) with trapezoidal z-quadrature over the period.
    pub fn norm(&self, grid: &RadialGrid) -> f64 {
        let dz = self.period() / self.nz() as f64;
        let mut s = 0.0;
        for j in 0..self.nz() {
            let col = |f: &[f64]| -> Vec<f64> { f[j * self.nr()..(j + 1) * self.nr()].iter().map(|v| v * v).collect() };
            s += grid.integrate(&col(&self.u_z)) + grid.integrate(&col(&self.u_r)) + grid.integrate(&col(&self.u_theta));
        }
        (s * dz).sqrt()
    }

    /// Net axial flux int int r u_z dr dz.
    pub fn axial_flux(&self, grid: &RadialGrid) -> f64 {
        let dz = self.period() / self.nz() as f64;
        (0..self.nz()).map(|j| grid.integrate(&self.u_z[j * self.nr()..(j + 1) * self.nr()])).sum::<f64>() * dz
    }

    /// Axial mean of u_z at each radius.
    pub fn mean_axial_profile(&self) -> Vec<f64> {
        let nr = self.nr();
        let mut m = vec![0.0; nr];
        for j in 0..self.nz() {
            for i in 0..nr {
                m[i] += self.u_z[i + nr * j];
            }
        }
        m.iter().map(|v| v / self.nz() as f64).collect()
    }

    /// max |D_* u_r + d u_z / dz| with the axial derivative taken spectrally.
    pub fn divergence(&self, ops: &DiffOperators) -> f64 {
        let (nr, nz) = (self.nr(), self.nz());
        let mut dz = vec![0.0; nr * nz];
        let mut planner = FftPlanner::<f64>::new();
        let fwd = planner.plan_fft_forward(nz);
        let inv = planner.plan_fft_inverse(nz);
        let k0 = 2.0 * PI / self.period();
        for i in 0..nr {
            let mut buf: Vec<Complex<f64>> = (0..nz).map(|j| Complex::new(self.u_z[i + nr * j], 0.0)).collect();
            fwd.process(&mut buf);
            for (k, c) in buf.iter_mut().enumerate() {
                let kk = if k < nz / 2 { k as f64 } else if k == nz / 2 && nz % 2 == 0 { 0.0 } else { k as f64 - nz as f64 };
                *c *= Complex::new(0.0, kk * k0 / nz as f64);
            }
            inv.process(&mut buf);
            for j in 0..nz {
                dz[i + nr * j] = buf[j].re;
            }
        }
        let mut worst: f64 = 0.0;
        for j in 0..nz {
            let dr = ops.apply(Op::Dstar, &self.u_r[j * nr..(j + 1) * nr]);
            for i in 0..nr {
                worst = worst.max((dr[i] + dz[i + nr * j]).abs());
            }
        }
        worst
    }

    /// Largest velocity magnitude on either wall.
    pub fn wall_max(&self) -> f64 {
        let nr = self.nr();
        let mut w: f64 = 0.0;
        for j in 0..self.nz() {
            for i in [0, nr - 1] {
                let k = i + nr * j;
                w = w.max(self.u_z[k].abs()).max(self.u_r[k].abs()).max(self.u_theta[k].abs());
            }
        }
        w
    }

    /// Adds a z-independent axial profile (a mean flow through the channel).
    pub fn with_axial_profile(mut self, profile: &[f64]) -> Self {
        let nr = self.nr();
        for j in 0..self.nz() {
            for i in 0..nr {
                self.u_z[i + nr * j] += profile[i];
            }
        }
        self
    }
}

fn meta_for(mode: &StabilityMode, grid: &RadialGrid, phase: f64, gauge: f64, order: u8) -> SnapshotMeta {
    SnapshotMeta {
        eta: grid.left,
        right: grid.right,
        mu: mu_of(&mode.coupling, grid.left),
        lambda: mode.lambda0,
        a: mode.a,
        gauge,
        phase,
        order,
        scheme: grid.scheme,
        geometry: grid.geometry,
    }
}

/// amplitude * psi_1(r, z + z0); a quarter-period phase gives the companion mode.
pub fn reconstruct_eigenfield(
    mode: &StabilityMode,
    z0: f64,
    amplitude: f64,
    nz: usize,
    grid: &RadialGrid,
    ops: &DiffOperators,
) -> Result<FieldSnapshot> {
    if nz < 4 {
        return Err(TaylorError::InvalidArgument(format!("need at least 4 axial samples, got {nz}")));
    }
    let f = TrigField::from_mode(mode, ops).shifted(z0).scale(amplitude);
    Ok(FieldSnapshot::from_trig(&f, grid, nz, meta_for(mode, grid, z0, mode.gauge * amplitude, 1)))
}

/// gamma psi_1(z + z0) with gamma = sqrt(beta_1 / |R|), plus gamma^2 Phi(z + z0) when
/// `with_correction` is set. The c and c^2 gauge factors of psi_1 and R cancel.
#[allow(clippy::too_many_arguments)]
pub fn secondary_flow(
    mode: &StabilityMode,
    corrections: &CMCorrection,
    beta1: f64,
    r: f64,
    phase: f64,
    with_correction: bool,
    nz: usize,
    grid: &RadialGrid,
    ops: &DiffOperators,
) -> Result<FieldSnapshot> {
    let gamma = crate::transition::bifurcated_amplitude(beta1, r)?;
    if nz < 4 {
        return Err(TaylorError::InvalidArgument(format!("need at least 4 axial samples, got {nz}")));
    }
    let mut f = TrigField::from_mode(mode, ops).scale(gamma);
    if with_correction {
        f = f.add(&corrections.field().scale(gamma * gamma));
    }
    let f = f.shifted(phase);
    let order = if with_correction { 2 } else { 1 };
    Ok(FieldSnapshot::from_trig(&f, grid, nz, meta_for(mode, grid, phase, mode.gauge * gamma, order)))
}

/// Dirichlet eigenfunctions of D_*D, D_*D e_k = -rho_k e_k, orthonormal under int r f g dr.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EkMode {
    pub rho: f64,
    /// Oriented with positive slope at the inner wall.
    pub profile: Vec<f64>,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EkDecomposition {
    pub modes: Vec<EkMode>,
    /// 1-based index of the first coefficient above the noise floor.
    pub k0: Option<usize>,
    pub leading_sign: i8,
    /// Relative r-weighted residual of the truncated expansion.
    pub residual: f64,
    /// Profile carries no resolved component.
    pub in_htilde: bool,
}

impl EkDecomposition {
    /// Coefficients after decay for time t under d_t f = D_*D f.
    pub fn decayed(&self, t: f64) -> Vec<f64> {
        self.modes.iter().map(|m| m.alpha * (-m.rho * t).exp()).collect()
    }
}

/// The `count` smallest Dirichlet eigenpairs of D_*D on the grid, by a dense spectrum of the
/// interior block followed by inverse iteration.
pub fn ek_basis(count: usize, grid: &RadialGrid, ops: &DiffOperators) -> Result<Vec<(f64, Vec<f64>)>> {
    let m = grid.len();
    let ni = m - 2;
    if count == 0 || count > ni / 2 {
        return Err(TaylorError::InvalidArgument(format!("need 1 <= n_modes <= {} on this grid", ni / 2)));
    }
    let a = DMatrix::from_fn(ni, ni, |i, j| -ops.dstar_d[(i + 1, j + 1)]);
    let schur = nalgebra::Schur::try_new(a.clone(), 1e-14, 10_000)
        .ok_or_else(|| TaylorError::EigenFailure("Schur iteration for the e_k spectrum".into()))?;
    let mut rhos: Vec<f64> = schur
        .complex_eigenvalues()
        .iter()
        .filter(|z| z.re > 0.0 && z.im.abs() <= 1e-8 * z.re)
        .map(|z| z.re)
        .collect();
    rhos.sort_by(f64::total_cmp);
    if rhos.len() < count {
        return Err(TaylorError::EigenFailure("too few real positive e_k eigenvalues".into()));
    }
    let mut out = Vec::with_capacity(count);
    for &rho0 in rhos.iter().take(count) {
        let shifted = &a - DMatrix::identity(ni, ni) * (rho0 * (1.0 + 1e-10));
        let lu = shifted.lu();
        let mut x = DVector::from_fn(ni, |i, _| 1.0 + 0.1 * (i as f64).sin());
        let mut rho = rho0;
        for _ in 0..4 {
            x = lu.solve(&x).ok_or_else(|| TaylorError::EigenFailure("inverse iteration".into()))?;
            x /= x.amax();
            let ax = &a * &x;
            rho = ax.dot(&x) / x.dot(&x);
        }
        let mut e = vec![0.0; m];
        e[1..m - 1].copy_from_slice(x.as_slice());
        let norm = crate::radial_ops::weighted_inner(&e, &e, grid).sqrt();
        let slope = ops.apply(Op::D, &e)[0];
        let s = if slope < 0.0 { -1.0 } else { 1.0 } / norm;
        e.iter_mut().for_each(|v| *v *= s);
        out.push((rho, e));
    }
    Ok(out)
}

pub fn ek_decompose(profile: &[f64], n_modes: usize, grid: &RadialGrid, ops: &DiffOperators) -> Result<EkDecomposition> {
    let m = grid.len();
    if profile.len() != m {
        return Err(TaylorError::InvalidArgument("profile length differs from the grid".into()));
    }
    let scale = profile.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    if profile[0].abs().max(profile[m - 1].abs()) > 1e-10 * scale {
        log::warn!("mean axial profile does not vanish at the walls; projecting anyway");
    }
    let basis = ek_basis(n_modes, grid, ops)?;
    let pnorm = crate::radial_ops::weighted_inner(profile, profile, grid).sqrt();
    let mut rest = profile.to_vec();
    let modes: Vec<EkMode> = basis
        .into_iter()
        .map(|(rho, e)| {
            let alpha = crate::radial_ops::weighted_inner(profile, &e, grid);
            for (r, v) in rest.iter_mut().zip(&e) {
                *r -= alpha * v;
            }
            EkMode { rho, profile: e, alpha }
        })
        .collect();
    let floor = 1e-8 * pnorm;
    let k0 = modes.iter().position(|md| md.alpha.abs() > floor).map(|k| k + 1);
    let leading_sign = k0.map_or(0, |k| if modes[k - 1].alpha > 0.0 { 1 } else { -1 });
    let rnorm = crate::radial_ops::weighted_inner(&rest, &rest, grid).sqrt();
    let residual = if pnorm > 0.0 { rnorm / pnorm } else { 0.0 };
    Ok(EkDecomposition { modes, k0, leading_sign, residual, in_htilde: k0.is_none() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternClass {
    /// Single radial stack plus net axial flow along +z.
    #[serde(rename = "fig_9_12_a")]
    Fig912A,
    /// Single radial stack plus net axial flow along -z.
    #[serde(rename = "fig_9_12_b")]
    Fig912B,
    /// Closed counter-rotating vortex pairs, no net flux.
    #[serde(rename = "fig_9_13")]
    Fig913,
    KCellStack,
    Unresolved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyDiagnostics {
    pub vortex_cells_radial: usize,
    pub vortex_cells_axial: usize,
    pub cross_channel_flux: f64,
    pub in_htilde: bool,
    /// None when the second derivatives are not resolved.
    pub d_regular: Option<bool>,
    /// h'' at r_0, the inner wall and the outer wall.
    pub d_values: [f64; 3],
    pub r0: f64,
    pub pattern_class: PatternClass,
    /// Sign of the leading e_k coefficient of the axial mean flow (0 when absent).
    pub leading_sign: i8,
}

/// Second derivative at x from a least-squares quintic through `width` nodes starting at `start`.
fn quintic_second_derivative(nodes: &[f64], f: &[f64], start: usize, width: usize, x: f64) -> f64 {
    let span = (nodes[start + width - 1] - nodes[start]).abs().max(f64::MIN_POSITIVE);
    let v = DMatrix::from_fn(width, 6, |i, p| ((nodes[start + i] - x) / span).powi(p as i32));
    let rhs = DVector::from_iterator(width, (0..width).map(|i| f[start + i]));
    let c = v.svd(true, true).solve(&rhs, 1e-14).expect("svd with both factors");
    2.0 * c[2] / (span * span)
}

/// Quintic estimate near x and its disagreement with the window shifted by one node.
fn robust_second_derivative(nodes: &[f64], f: &[f64], x: f64) -> (f64, f64) {
    const W: usize = 8;
    let m = nodes.len();
    let nearest = (0..m).min_by(|&i, &j| (nodes[i] - x).abs().total_cmp(&(nodes[j] - x).abs())).unwrap_or(0);
    let start = nearest.saturating_sub(W / 2).min(m - W);
    let alt = if start + W < m { start + 1 } else { start - 1 };
    let d1 = quintic_second_derivative(nodes, f, start, W, x);
    let d2 = quintic_second_derivative(nodes, f, alt, W, x);
    (d1, (d1 - d2).abs() / d1.abs().max(f64::MIN_POSITIVE))
}

fn periodic_sign_changes(values: &[f64], floor: f64) -> usize {
    let signs: Vec<f64> = values.iter().filter(|v| v.abs() > floor).map(|v| v.signum()).collect();
    if signs.is_empty() {
        return 0;
    }
    (0..signs.len()).filter(|&k| signs[k] != signs[(k + 1) % signs.len()]).count()
}

pub fn diagnose_topology(
    snapshot: &FieldSnapshot,
    mode: &StabilityMode,
    grid: &RadialGrid,
    ops: &DiffOperators,
) -> Result<TopologyDiagnostics> {
    if snapshot.r_nodes != grid.nodes || mode.h.len() != grid.len() {
        return Err(TaylorError::MixedProvenance("snapshot, mode and grid differ".into()));
    }
    let h = &mode.h;
    let m = h.len();
    let hmax = h.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    let radial_changes = {
        let s: Vec<f64> = h[1..m - 1].iter().filter(|v| v.abs() > 1e-8 * hmax).map(|v| v.signum()).collect();
        s.windows(2).filter(|w| w[0] != w[1]).count()
    };
    let vortex_cells_radial = 1 + radial_changes;

    // r_0: parabolic refinement of the discrete argmax of |h|
    let k = (1..m - 1).max_by(|&i, &j| h[i].abs().total_cmp(&h[j].abs())).unwrap_or(1);
    let (x0, x1, x2) = (grid.nodes[k - 1], grid.nodes[k], grid.nodes[k + 1]);
    let (f0, f1, f2) = (h[k - 1], h[k], h[k + 1]);
    let den = (x1 - x0) * (f1 - f2) - (x1 - x2) * (f1 - f0);
    let r0 = if den != 0.0 {
        x1 - 0.5 * ((x1 - x0).powi(2) * (f1 - f2) - (x1 - x2).powi(2) * (f1 - f0)) / den
    } else {
        x1
    };
    let mut d_values = [0.0; 3];
    let mut spread: f64 = 0.0;
    for (slot, x) in [r0, grid.left, grid.right].into_iter().enumerate() {
        let (d, s) = robust_second_derivative(&grid.nodes, h, x);
        d_values[slot] = d;
        spread = spread.max(s);
    }
    let width = grid.right - grid.left;
    let d_tol = 1e-6 * hmax / (width * width);
    let d_regular = if spread > 1e-2 { None } else { Some(d_values.iter().all(|d| d.abs() > d_tol)) };

    // axial cells: sign changes of u_r along z on the radius nearest r_0
    let ir0 = (0..m).min_by(|&i, &j| (grid.nodes[i] - r0).abs().total_cmp(&(grid.nodes[j] - r0).abs())).unwrap_or(k);
    let line: Vec<f64> = (0..snapshot.nz()).map(|j| snapshot.at(&snapshot.u_r, ir0, j)).collect();
    let lmax = line.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    let vortex_cells_axial = periodic_sign_changes(&line, 1e-10 * lmax);

    let flux = snapshot.axial_flux(grid);
    let measure = snapshot.period() * grid.integrate(&vec![1.0; m]);
    let in_htilde = flux.abs() <= FLUX_TOL * snapshot.norm(grid) * measure.sqrt();
    let mean = snapshot.mean_axial_profile();
    let n_modes = 6.min((m - 2) / 2);
    let ek = ek_decompose(&mean, n_modes, grid, ops)?;
    let pattern_class = if vortex_cells_radial >= 2 {
        PatternClass::KCellStack
    } else if vortex_cells_axial == 0 {
        PatternClass::Unresolved
    } else if in_htilde {
        PatternClass::Fig913
    } else if ek.leading_sign > 0 || (ek.leading_sign == 0 && flux > 0.0) {
        PatternClass::Fig912A
    } else {
        PatternClass::Fig912B
    };
    Ok(TopologyDiagnostics {
        vortex_cells_radial,
        vortex_cells_axial,
        cross_channel_flux: flux,
        in_htilde,
        d_regular,
        d_values,
        r0,
        pattern_class,
        leading_sign: ek.leading_sign,
    })
}

fn scheme_name(s: Scheme) -> &'static str {
    match s {
        Scheme::Collocation => "collocation",
        Scheme::FiniteDifference => "finite_difference",
    }
}

fn geometry_name(g: Geometry) -> &'static str {
    match g {
        Geometry::Cylindrical => "cylindrical",
        Geometry::Planar => "planar",
    }
}

/// Text header, then u_z, u_r, u_theta as little-endian float64 blocks (r fastest).
pub fn write_snapshot(snapshot: &FieldSnapshot, path: &Path) -> Result<()> {
    let m = &snapshot.meta;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{SNAPSHOT_MAGIC}")?;
    writeln!(out, "nr = {}", snapshot.nr())?;
    writeln!(out, "nz = {}", snapshot.nz())?;
    for (k, v) in [("eta", m.eta), ("right", m.right), ("mu", m.mu), ("lambda", m.lambda), ("a", m.a), ("gauge", m.gauge), ("phase", m.phase)] {
        writeln!(out, "{k} = {v:?}")?;
    }
    writeln!(out, "order = {}", m.order)?;
    writeln!(out, "scheme = {}", scheme_name(m.scheme))?;
    writeln!(out, "geometry = {}", geometry_name(m.geometry))?;
    writeln!(out, "end_header")?;
    for block in [&snapshot.u_z, &snapshot.u_r, &snapshot.u_theta] {
        for v in block.iter() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_snapshot(path: &Path) -> Result<FieldSnapshot> {
    let mut rd = BufReader::new(std::fs::File::open(path)?);
    let mut line = String::new();
    rd.read_line(&mut line)?;
    if line.trim_end() != SNAPSHOT_MAGIC {
        return Err(TaylorError::Format(format!("not a snapshot file: {}", path.display())));
    }
    let mut kv = std::collections::BTreeMap::new();
    loop {
        line.clear();
        if rd.read_line(&mut line)? == 0 {
            return Err(TaylorError::Format("header not terminated".into()));
        }
        let t = line.trim_end();
        if t == "end_header" {
            break;
        }
        let (k, v) = t.split_once(" = ").ok_or_else(|| TaylorError::Format(format!("bad header line '{t}'")))?;
        kv.insert(k.to_string(), v.to_string());
    }
    let get = |k: &str| kv.get(k).ok_or_else(|| TaylorError::Format(format!("missing header key '{k}'")));
    let num = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| TaylorError::Format(format!("bad value for '{k}'"))) };
    let int = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| TaylorError::Format(format!("bad value for '{k}'"))) };
    let (nr, nz) = (int("nr")?, int("nz")?);
    let scheme = match get("scheme")?.as_str() {
        "collocation" => Scheme::Collocation,
        "finite_difference" => Scheme::FiniteDifference,
        s => return Err(TaylorError::Format(format!("unknown scheme '{s}'"))),
    };
    let geometry = match get("geometry")?.as_str() {
        "cylindrical" => Geometry::Cylindrical,
        "planar" => Geometry::Planar,
        s => return Err(TaylorError::Format(format!("unknown geometry '{s}'"))),
    };
    let meta = SnapshotMeta {
        eta: num("eta")?,
        right: num("right")?,
        mu: num("mu")?,
        lambda: num("lambda")?,
        a: num("a")?,
        gauge: num("gauge")?,
        phase: num("phase")?,
        order: int("order")? as u8,
        scheme,
        geometry,
    };
    let mut bytes = Vec::new();
    rd.read_to_end(&mut bytes)?;
    if bytes.len() != 3 * nr * nz * 8 {
        return Err(TaylorError::Format(format!("expected {} data bytes, found {}", 3 * nr * nz * 8, bytes.len())));
    }
    let vals: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
    let grid = build_interval_grid(meta.eta, meta.right, nr - 1, scheme, geometry)?;
    let period = 2.0 * PI / meta.a;
    Ok(FieldSnapshot {
        r_nodes: grid.nodes,
        z_nodes: (0..nz).map(|j| period * j as f64 / nz as f64).collect(),
        u_z: vals[..nr * nz].to_vec(),
        u_r: vals[nr * nz..2 * nr * nz].to_vec(),
        u_theta: vals[2 * nr * nz..].to_vec(),
        meta,
    })
}

/// CSV with columns r, z, u_z, u_r, u_theta.
/// CSV text with columns r, z, u_z, u_r, u_theta.
pub fn snapshot_csv(snapshot: &FieldSnapshot) -> String {
    use std::fmt::Write as _;
    let mut out = String::from("r,z,u_z,u_r,u_theta\n");
    let nr = snapshot.nr();
    for j in 0..snapshot.nz() {
        for i in 0..nr {
            let k = i + nr * j;
            let _ = writeln!(
                out,
                "{:?},{:?},{:?},{:?},{:?}",
                snapshot.r_nodes[i], snapshot.z_nodes[j], snapshot.u_z[k], snapshot.u_r[k], snapshot.u_theta[k]
            );
        }
    }
    out
}

pub fn write_snapshot_csv(snapshot: &FieldSnapshot, path: &Path) -> Result<()> {
    std::fs::write(path, snapshot_csv(snapshot))?;
    Ok(())
}
