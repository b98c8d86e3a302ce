use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use taylor_core::dns::{self, DnsConfig, DnsInit, Projection};
use taylor_core::fields::{
    diagnose_topology, ek_basis, reconstruct_eigenfield, secondary_flow, snapshot_csv, write_snapshot,
};
use taylor_core::linstab::{
    find_critical_coupled, growth_curve, growth_rate_coupled, solve_marginal_coupled, Coupling, NarrowGapVariant,
    ScanOptions, DEFAULT_A_RANGE, DEFAULT_SCAN_SAMPLES, DEFAULT_SEARCH_TOL,
};
use taylor_core::params::{require_unstable_candidate, NondimParams};
use taylor_core::radial_ops::{build_grid, build_interval_grid, DiffOperators, Geometry, RadialGrid, Scheme};
use taylor_core::transition::{analyze, integrate_reduced};
use taylor_core::TaylorError;

use crate::args::{CaseArgs, Cli, Command};
use crate::config::Settings;
use crate::error::CliError;
use crate::report::{emit, ReportDocument, TOOLKIT};
use crate::sweep::{parse_range, rows_to_csv, run_sweep};

/// Environment default for the sweep worker count.
pub const JOBS_ENV: &str = "TAYLOR_TRANSIT_JOBS";

pub struct Case {
    pub coupling: Coupling,
    pub eta: f64,
    pub grid: RadialGrid,
    pub ops: DiffOperators,
    pub scan: ScanOptions,
}

pub fn resolve_case(s: &mut Settings, a: &CaseArgs) -> Result<Case, CliError> {
    let narrow = s.get("narrow-gap", a.narrow_gap.clone(), "none".to_string())?;
    let nr = s.get("nr", a.nr, 64usize)?;
    let scheme = match s.get("scheme", a.scheme.clone(), "collocation".to_string())?.as_str() {
        "collocation" => Scheme::Collocation,
        "finite_difference" => Scheme::FiniteDifference,
        other => return Err(CliError::Config(format!("unknown scheme {other:?}"))),
    };
    let scan = ScanOptions {
        a_min: s.get("a-min", a.a_min, DEFAULT_A_RANGE.0)?,
        a_max: s.get("a-max", a.a_max, DEFAULT_A_RANGE.1)?,
        samples: s.get("samples", a.samples, DEFAULT_SCAN_SAMPLES)?,
        search_tol: s.get("search-tol", a.search_tol, DEFAULT_SEARCH_TOL)?,
    };
    let mu = s.get("mu", a.mu, 0.0)?;
    let (coupling, eta, grid) = match narrow.as_str() {
        "none" => {
            let eta = s.get_opt("eta", a.eta)?.ok_or_else(|| CliError::Config("--eta is required".into()))?;
            let p = NondimParams::from_ratios(eta, mu)?;
            require_unstable_candidate(&p)?;
            (Coupling::Cylindrical { kappa: p.kappa }, eta, build_grid(eta, nr, scheme)?)
        }
        "symmetric" | "full" => {
            if !(mu.is_finite() && mu < 1.0) {
                return Err(TaylorError::InvalidArgument(format!("narrow-gap systems need mu < 1, got {mu}")).into());
            }
            let variant = if narrow == "full" { NarrowGapVariant::Full } else { NarrowGapVariant::Symmetric };
            (Coupling::NarrowGap { mu, variant }, 0.0, build_interval_grid(0.0, 1.0, nr, scheme, Geometry::Planar)?)
        }
        other => return Err(CliError::Config(format!("unknown narrow-gap variant {other:?}"))),
    };
    let ops = DiffOperators::new(&grid);
    Ok(Case { coupling, eta, grid, ops, scan })
}

enum Output {
    Json(Value),
    Csv(String),
}

fn provenance_line(command: &str, seed: u64, s: &Settings) -> String {
    let mut line = format!("# {} {} command={command} seed={seed}", TOOLKIT.name, TOOLKIT.version);
    for (k, v) in s.effective() {
        line.push_str(&format!(" {k}={v}"));
    }
    line.push('\n');
    line
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn to_value<T: serde::Serialize>(v: &T) -> Result<Value, CliError> {
    Ok(serde_json::to_value(v)?)
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let started = Instant::now();
    let mut s = Settings::load(cli.config.as_deref())?;
    let seed = s.get("seed", cli.seed, 0u64)?;
    let (name, out) = match &cli.command {
        Command::Critical(case) => ("critical", critical(&mut s, case)?),
        Command::Growth { case, rel_step, count } => ("growth", growth(&mut s, case, *rel_step, *count)?),
        Command::Classify(case) => ("classify", classify(&mut s, case)?),
        Command::Sweep { eta_range, mu_range, nr, jobs } => {
            ("sweep", sweep(&mut s, seed, eta_range.clone(), mu_range.clone(), *nr, *jobs)?)
        }
        Command::Field { .. } => ("field", field(&mut s, seed, &cli.command)?),
        Command::Amplitude { .. } => ("amplitude", amplitude(&mut s, seed, &cli.command)?),
        Command::Dns { .. } => ("dns", run_dns(&mut s, seed, &cli.command)?),
        Command::Ek { eta, nr, count } => ("ek", ek(&mut s, *eta, *nr, *count)?),
    };
    for key in s.unused() {
        log::warn!("config key {key} is not used by {name}");
    }
    let text = match out {
        Output::Csv(body) => body,
        Output::Json(result) => ReportDocument {
            toolkit: TOOLKIT,
            command: name.to_string(),
            seed,
            config: s.effective().clone(),
            result,
            timings: cli.timings.then(|| BTreeMap::from([("total_s".to_string(), started.elapsed().as_secs_f64())])),
        }
        .to_json()?,
    };
    emit(&text, cli.out.as_deref())
}

fn critical(s: &mut Settings, a: &CaseArgs) -> Result<Output, CliError> {
    let c = resolve_case(s, a)?;
    let cp = find_critical_coupled(c.coupling, &c.grid, &c.ops, &c.scan)?;
    Ok(Output::Json(to_value(&cp)?))
}

fn growth(s: &mut Settings, a: &CaseArgs, rel_step: Option<f64>, count: Option<usize>) -> Result<Output, CliError> {
    let c = resolve_case(s, a)?;
    let rel_step = s.get("rel-step", rel_step, 0.01)?;
    let count = s.get("count", count, 3usize)?;
    let cp = find_critical_coupled(c.coupling, &c.grid, &c.ops, &c.scan)?;
    let curve = growth_curve(c.coupling, cp.a_c, cp.lambda_c, &c.grid, &c.ops, rel_step, count)?;
    Ok(Output::Json(json!({ "a_c": cp.a_c, "lambda_c": cp.lambda_c, "t_c": cp.t_c, "growth": to_value(&curve)? })))
}

fn classify(s: &mut Settings, a: &CaseArgs) -> Result<Output, CliError> {
    let c = resolve_case(s, a)?;
    let an = analyze(c.coupling, &c.grid, &c.ops, &c.scan)?;
    Ok(Output::Json(to_value(&an.report)?))
}

fn sweep(
    s: &mut Settings,
    seed: u64,
    eta_range: Option<String>,
    mu_range: Option<String>,
    nr: Option<usize>,
    jobs: Option<usize>,
) -> Result<Output, CliError> {
    let etas = parse_range(&s.get_opt("eta-range", eta_range)?.ok_or_else(|| CliError::Config("--eta-range is required".into()))?)?;
    let mus = parse_range(&s.get_opt("mu-range", mu_range)?.ok_or_else(|| CliError::Config("--mu-range is required".into()))?)?;
    let nr = s.get("nr", nr, 64usize)?;
    let env_jobs = match std::env::var(JOBS_ENV) {
        Ok(v) => Some(v.parse::<usize>().map_err(|_| CliError::Config(format!("{JOBS_ENV} = {v:?} is not a count")))?),
        Err(_) => None,
    };
    let default_jobs = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    // the worker count does not change the output, so it is kept out of the effective config
    let jobs = jobs.or(env_jobs).unwrap_or(default_jobs);
    let rows = run_sweep(&etas, &mus, nr, jobs)?;
    Ok(Output::Csv(rows_to_csv(&rows, &provenance_line("sweep", seed, s))?))
}

fn field(s: &mut Settings, seed: u64, cmd: &Command) -> Result<Output, CliError> {
    let Command::Field { case, kind, amplitude, phase, taylor_ratio, with_correction, nz, snapshot, csv } = cmd else {
        unreachable!()
    };
    let c = resolve_case(s, case)?;
    let kind = s.get("kind", kind.clone(), "eigen".to_string())?;
    let phase = s.get("phase", *phase, 0.0)?;
    let nz = s.get("nz", *nz, 64usize)?;
    let snapshot_path = s.get_opt("snapshot", snapshot.as_ref().map(|p| p.display().to_string()))?;
    let csv_path = s.get_opt("csv", csv.as_ref().map(|p| p.display().to_string()))?;
    let (snap, mode, extra) = match kind.as_str() {
        "eigen" => {
            let amp = s.get("amplitude", *amplitude, 1.0)?;
            let cp = find_critical_coupled(c.coupling, &c.grid, &c.ops, &c.scan)?;
            let mode = solve_marginal_coupled(c.coupling, cp.a_c, &c.grid, &c.ops)?;
            let snap = reconstruct_eigenfield(&mode, phase, amp, nz, &c.grid, &c.ops)?;
            (snap, mode, json!({ "amplitude": amp }))
        }
        "secondary" => {
            let ratio = s.get("taylor-ratio", *taylor_ratio, 1.1)?;
            let with_corr = s.get("with-correction", *with_correction, true)?;
            let an = analyze(c.coupling, &c.grid, &c.ops, &c.scan)?;
            let lambda = an.critical.lambda_c * ratio.max(0.0).sqrt();
            let beta1 = growth_rate_coupled(c.coupling, an.critical.a_c, lambda, &c.grid, &c.ops)?.beta;
            let snap = secondary_flow(&an.mode, &an.corrections, beta1, an.coefficient.r, phase, with_corr, nz, &c.grid, &c.ops)?;
            let extra = json!({ "taylor_ratio": ratio, "beta1": beta1, "R": an.coefficient.r, "with_correction": with_corr });
            (snap, an.mode, extra)
        }
        other => return Err(CliError::Config(format!("unknown field kind {other:?}"))),
    };
    let topo = diagnose_topology(&snap, &mode, &c.grid, &c.ops)?;
    if let Some(p) = &snapshot_path {
        write_snapshot(&snap, Path::new(p))?;
    }
    if let Some(p) = &csv_path {
        write_text(Path::new(p), &(provenance_line("field", seed, s) + &snapshot_csv(&snap)))?;
    }
    Ok(Output::Json(json!({
        "kind": kind,
        "parameters": extra,
        "a": mode.a,
        "lambda": snap.meta.lambda,
        "nr": snap.nr(),
        "nz": snap.nz(),
        "norm": snap.norm(&c.grid),
        "axial_flux": snap.axial_flux(&c.grid),
        "wall_max": snap.wall_max(),
        "divergence": snap.divergence(&c.ops),
        "topology": to_value(&topo)?,
        "snapshot": snapshot_path,
        "csv": csv_path,
    })))
}

fn amplitude(s: &mut Settings, seed: u64, cmd: &Command) -> Result<Output, CliError> {
    let Command::Amplitude { case, beta1, r, taylor_ratio, x0, y0, t_span, dt, csv } = cmd else { unreachable!() };
    let given = (s.get_opt("beta1", *beta1)?, s.get_opt("r", *r)?);
    let (beta1, r) = match given {
        (Some(b), Some(r)) => (b, r),
        _ => {
            let c = resolve_case(s, case)?;
            let ratio = s.get("taylor-ratio", *taylor_ratio, 1.1)?;
            let an = analyze(c.coupling, &c.grid, &c.ops, &c.scan)?;
            let lambda = an.critical.lambda_c * ratio.max(0.0).sqrt();
            let b = growth_rate_coupled(c.coupling, an.critical.a_c, lambda, &c.grid, &c.ops)?.beta;
            (given.0.unwrap_or(b), given.1.unwrap_or(an.coefficient.r))
        }
    };
    let x0 = s.get("x0", *x0, 0.01)?;
    let y0 = s.get("y0", *y0, 0.0)?;
    let t_span = s.get("t-span", *t_span, if beta1 != 0.0 { 10.0 / beta1.abs() } else { 1.0 })?;
    let dt = s.get("dt", *dt, t_span / 1e4)?;
    let csv_path = s.get_opt("csv", csv.as_ref().map(|p| p.display().to_string()))?;
    let traj = integrate_reduced(x0, y0, beta1, r, t_span, dt)?;
    if let Some(p) = &csv_path {
        let mut text = provenance_line("amplitude", seed, s) + "t,x,y,radius\n";
        for st in &traj.states {
            text.push_str(&format!("{:?},{:?},{:?},{:?}\n", st.t, st.x, st.y, st.radius()));
        }
        write_text(Path::new(p), &text)?;
    }
    let last = traj.last();
    let law = (beta1 > 0.0 && r < 0.0).then(|| (beta1 / r.abs()).sqrt());
    Ok(Output::Json(json!({
        "beta1": beta1,
        "R": r,
        "final": { "t": last.t, "x": last.x, "y": last.y, "radius": last.radius() },
        "amplitude_law_radius": law,
        "escaped": traj.escaped,
        "escape_radius": traj.escape_radius,
        "samples": traj.states.len(),
        "csv": csv_path,
    })))
}

fn run_dns(s: &mut Settings, seed: u64, cmd: &Command) -> Result<Output, CliError> {
    let Command::Dns {
        case,
        taylor_ratio,
        nz,
        dt,
        t_end,
        steps,
        sample_every,
        init,
        eps,
        snapshot_in,
        snapshot_out,
        series,
    } = cmd
    else {
        unreachable!()
    };
    let c = resolve_case(s, case)?;
    let ratio = s.get("taylor-ratio", *taylor_ratio, 1.1)?;
    let an = analyze(c.coupling, &c.grid, &c.ops, &c.scan)?;
    let lambda = an.critical.lambda_c * ratio.max(0.0).sqrt();
    let mut cfg = DnsConfig::new(c.coupling, c.eta, lambda, an.critical.a_c);
    cfg.nr = c.grid.n;
    cfg.scheme = c.grid.scheme;
    cfg.nz = s.get("nz", *nz, cfg.nz)?;
    cfg.dt = s.get("dt", *dt, cfg.dt)?;
    cfg.t_end = match s.get_opt("steps", *steps)? {
        Some(n) => n as f64 * cfg.dt,
        None => s.get("t-end", *t_end, cfg.t_end)?,
    };
    cfg.sample_every = s.get("sample-every", *sample_every, cfg.sample_every)?;
    let eps = s.get("eps", *eps, 1e-3)?;
    cfg.init = match s.get("init", init.clone(), "eigen".to_string())?.as_str() {
        "eigen" => DnsInit::EigenSeed { eps },
        "random" => DnsInit::Random { eps, seed },
        "snapshot" => {
            let p = s.get_opt("snapshot-in", snapshot_in.as_ref().map(|p| p.display().to_string()))?;
            DnsInit::Snapshot(p.ok_or_else(|| CliError::Config("--init snapshot needs --snapshot-in".into()))?.into())
        }
        other => return Err(CliError::Config(format!("unknown init {other:?}"))),
    };
    let snapshot_out = s.get_opt("snapshot-out", snapshot_out.as_ref().map(|p| p.display().to_string()))?;
    let series_path = s.get_opt("series", series.as_ref().map(|p| p.display().to_string()))?;
    cfg.projection = Some(Projection::new(&an.mode, &an.adjoint, &c.grid, &c.ops)?);
    let out = dns::run(&cfg)?;
    if let Some(p) = &series_path {
        write_text(Path::new(p), &(provenance_line("dns", seed, s) + &out.series.csv()))?;
    }
    if let Some(p) = &snapshot_out {
        write_snapshot(&out.snapshot, Path::new(p))?;
    }
    let last = out.series.samples.last().expect("runs record at least one sample");
    let beta1 = growth_rate_coupled(c.coupling, an.critical.a_c, lambda, &c.grid, &c.ops)?.beta;
    let r = an.coefficient.r;
    Ok(Output::Json(json!({
        "taylor_ratio": ratio,
        "lambda": lambda,
        "a": cfg.a,
        "nr": cfg.nr,
        "nz": cfg.nz,
        "dt": cfg.dt,
        "steps": out.steps,
        "final": {
            "t": last.t,
            "energy": last.energy,
            "A": last.a,
            "Atilde": last.a_tilde,
            "amplitude": last.amplitude(),
            "flux": last.flux,
        },
        "energy_finite": out.series.samples.iter().all(|x| x.energy.is_finite()),
        "max_relative_flux": out.series.max_relative_flux(),
        "saturated_amplitude": out.series.saturated_amplitude(0.2, 1e-3),
        "beta1": beta1,
        "R": r,
        "predicted_amplitude": (beta1 > 0.0 && r < 0.0).then(|| (beta1 / r.abs()).sqrt()),
        "series": series_path,
        "snapshot": snapshot_out,
    })))
}

fn ek(s: &mut Settings, eta: Option<f64>, nr: Option<usize>, count: Option<usize>) -> Result<Output, CliError> {
    let eta = s.get_opt("eta", eta)?.ok_or_else(|| CliError::Config("--eta is required".into()))?;
    let nr = s.get("nr", nr, 64usize)?;
    let count = s.get("count", count, 5usize)?;
    if !(eta > 0.0 && eta < 1.0) {
        return Err(TaylorError::InvalidGeometry(format!("need 0 < eta < 1, got {eta}")).into());
    }
    let grid = build_grid(eta, nr, Scheme::Collocation)?;
    let ops = DiffOperators::new(&grid);
    let basis = ek_basis(count, &grid, &ops)?;
    Ok(Output::Json(json!({
        "rho": basis.iter().map(|b| b.0).collect::<Vec<_>>(),
        "nodes": grid.nodes,
        "profiles": basis.iter().map(|b| b.1.clone()).collect::<Vec<_>>(),
    })))
}
