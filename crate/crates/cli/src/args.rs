use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(name = "taylor-transit", version, about = "Taylor-Couette onset, transition type and secondary flows")]
pub struct Cli {
    /// Plain key = value file; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Where to write the JSON report (or the CSV table for sweep); stdout otherwise.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for randomised initial data; recorded in every output.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Attach wall-clock timings to the report (breaks byte-identical output).
    #[arg(long, global = true)]
    pub timings: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CaseArgs {
    /// Radius ratio r1 / r2.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Rotation ratio Omega2 / Omega1.
    #[arg(long)]
    pub mu: Option<f64>,
    /// Use a narrow-gap system instead of the full annulus: symmetric or full.
    #[arg(long)]
    pub narrow_gap: Option<String>,
    /// Radial resolution.
    #[arg(long)]
    pub nr: Option<usize>,
    /// collocation or finite_difference.
    #[arg(long)]
    pub scheme: Option<String>,
    /// Wavenumber scan range in units of the gap width.
    #[arg(long)]
    pub a_min: Option<f64>,
    #[arg(long)]
    pub a_max: Option<f64>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub search_tol: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Critical Taylor number and wavenumber.
    #[command(allow_negative_numbers = true)]
    Critical(CaseArgs),
    /// Growth rate beta_1 of the critical wavenumber around lambda_c.
    #[command(allow_negative_numbers = true)]
    Growth {
        #[command(flatten)]
        case: CaseArgs,
        /// Relative lambda step between samples.
        #[arg(long)]
        rel_step: Option<f64>,
        /// Samples on each side of lambda_c.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Full pipeline: R by both assembly routes and the transition type.
    #[command(allow_negative_numbers = true)]
    Classify(CaseArgs),
    /// Regime map over eta and mu ranges (lo:hi:count), written as CSV.
    #[command(allow_negative_numbers = true)]
    Sweep {
        #[arg(long)]
        eta_range: Option<String>,
        #[arg(long)]
        mu_range: Option<String>,
        #[arg(long)]
        nr: Option<usize>,
        /// Worker threads; defaults to TAYLOR_TRANSIT_JOBS, then the core count.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Eigenfield or bifurcated secondary flow on a tensor grid, with topology diagnostics.
    #[command(allow_negative_numbers = true)]
    Field {
        #[command(flatten)]
        case: CaseArgs,
        /// eigen or secondary.
        #[arg(long)]
        kind: Option<String>,
        /// Multiplier of psi_1 for the eigenfield.
        #[arg(long)]
        amplitude: Option<f64>,
        /// Axial phase z0.
        #[arg(long)]
        phase: Option<f64>,
        /// T / T_c for the secondary flow.
        #[arg(long)]
        taylor_ratio: Option<f64>,
        /// Include the second-order correction in the secondary flow.
        #[arg(long)]
        with_correction: Option<bool>,
        #[arg(long)]
        nz: Option<usize>,
        /// Binary snapshot output.
        #[arg(long)]
        snapshot: Option<PathBuf>,
        /// CSV snapshot output.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Integrate the reduced amplitude equations dx/dt = beta_1 x + R x (x^2 + y^2).
    #[command(allow_negative_numbers = true)]
    Amplitude {
        #[command(flatten)]
        case: CaseArgs,
        /// beta_1; computed from the case at --taylor-ratio when absent.
        #[arg(long)]
        beta1: Option<f64>,
        /// R; computed from the case when absent.
        #[arg(long)]
        r: Option<f64>,
        #[arg(long)]
        taylor_ratio: Option<f64>,
        #[arg(long)]
        x0: Option<f64>,
        #[arg(long)]
        y0: Option<f64>,
        #[arg(long)]
        t_span: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
        /// Trajectory CSV (t, x, y, radius).
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Time-step the axisymmetric equations from a seed, random data or a snapshot.
    #[command(allow_negative_numbers = true)]
    Dns {
        #[command(flatten)]
        case: CaseArgs,
        #[arg(long)]
        taylor_ratio: Option<f64>,
        #[arg(long)]
        nz: Option<usize>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        t_end: Option<f64>,
        /// Steps instead of t_end.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        sample_every: Option<usize>,
        /// eigen, random or snapshot.
        #[arg(long)]
        init: Option<String>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        snapshot_in: Option<PathBuf>,
        #[arg(long)]
        snapshot_out: Option<PathBuf>,
        /// Time series CSV (t, energy, A, Atilde, flux).
        #[arg(long)]
        series: Option<PathBuf>,
    },
    /// Eigenpairs of D_*D with Dirichlet walls, the basis of mean axial profiles.
    #[command(allow_negative_numbers = true)]
    Ek {
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        nr: Option<usize>,
        #[arg(long)]
        count: Option<usize>,
    },
}
