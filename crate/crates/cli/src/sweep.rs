//! Regime map over (eta, mu): one CSV row per pair, failures recorded per row.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use taylor_core::linstab::{Coupling, ScanOptions};
use taylor_core::params::NondimParams;
use taylor_core::radial_ops::{build_grid, DiffOperators, Scheme};
use taylor_core::transition::analyze;

use crate::error::CliError;

pub const STATUS_OK: &str = "ok";
pub const STATUS_EXCLUDED: &str = "excluded: Rayleigh-stable (mu >= eta^2)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub eta: f64,
    pub mu: f64,
    pub t_c: Option<f64>,
    pub a_c: Option<f64>,
    #[serde(rename = "R")]
    pub r: Option<f64>,
    #[serde(rename = "R_sign")]
    pub r_sign: Option<String>,
    #[serde(rename = "type")]
    pub transition_type: Option<String>,
    pub status: String,
}

/// `lo:hi:count` as `count` equispaced values (a single value when count is 1).
pub fn parse_range(text: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::Config(format!("range {text:?}: expected lo:hi:count"));
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if n == 0 || !(lo <= hi) {
        return Err(bad());
    }
    if n == 1 {
        return Ok(vec![lo]);
    }
    // round to 12 significant digits so that 0.85:0.95:3 yields 0.9 and not 0.8999999999999999
    let tidy = |x: f64| format!("{x:.11e}").parse::<f64>().unwrap_or(x);
    Ok((0..n).map(|k| tidy(lo + (hi - lo) * k as f64 / (n - 1) as f64)).collect())
}

pub fn sweep_row(eta: f64, mu: f64, nr: usize) -> SweepRow {
    let mut row = SweepRow {
        eta,
        mu,
        t_c: None,
        a_c: None,
        r: None,
        r_sign: None,
        transition_type: None,
        status: STATUS_OK.to_string(),
    };
    if mu >= eta * eta {
        row.status = STATUS_EXCLUDED.to_string();
        return row;
    }
    let result = NondimParams::from_ratios(eta, mu).and_then(|p| {
        let grid = build_grid(eta, nr, Scheme::Collocation)?;
        let ops = DiffOperators::new(&grid);
        analyze(Coupling::Cylindrical { kappa: p.kappa }, &grid, &ops, &ScanOptions::default())
    });
    match result {
        Ok(an) => {
            let rep = an.report;
            row.t_c = Some(rep.t_c);
            row.a_c = Some(rep.a_c);
            row.r = Some(rep.r);
            let sign = if rep.r.abs() <= rep.r_tol { "0" } else if rep.r < 0.0 { "-" } else { "+" };
            row.r_sign = Some(sign.to_string());
            row.transition_type = Some(rep.transition_type.label().to_string());
        }
        Err(e) => row.status = format!("error: {e}"),
    }
    row
}

/// Rows in (eta outer, mu inner) order regardless of the worker count.
pub fn run_sweep(etas: &[f64], mus: &[f64], nr: usize, jobs: usize) -> Result<Vec<SweepRow>, CliError> {
    let pairs: Vec<(f64, f64)> = etas.iter().flat_map(|&e| mus.iter().map(move |&m| (e, m))).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Config(format!("worker pool: {e}")))?;
    Ok(pool.install(|| pairs.par_iter().map(|&(e, m)| sweep_row(e, m, nr)).collect()))
}

pub fn rows_to_csv(rows: &[SweepRow], header: &str) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Io(e.to_string()))?;
    }
    let body = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    Ok(format!("{header}{}", String::from_utf8(body).expect("csv output is UTF-8")))
}

/// Reads a sweep table back; `#` lines are provenance comments.
pub fn rows_from_csv(text: &str) -> Result<Vec<SweepRow>, CliError> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
    r.deserialize().map(|row| row.map_err(|e| CliError::Io(e.to_string()))).collect()
}
