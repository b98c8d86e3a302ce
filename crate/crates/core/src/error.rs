use thiserror::Error;

/// Failure modes of the toolkit, grouped so front ends can map them to exit codes.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TaylorError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("degenerate rotation ratio: mu = 1 leaves kappa undefined")]
    DegenerateRotationRatio,
    #[error("Rayleigh-stable regime: mu = {mu} > eta^2 = {eta_sq}")]
    RayleighStable { mu: f64, eta_sq: f64 },
    #[error("resolution below minimum: n = {n} < {min}")]
    ResolutionTooLow { n: usize, min: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("BVP operator singular; check lambda not at eigenvalue (condition estimate {condition:.3e})")]
    SingularOperator { condition: f64 },
    #[error("no marginal value at this wavenumber (a = {a})")]
    NoMarginalValue { a: f64 },
    #[error("complex marginal eigenvalue - PES assumption violated ({re} + {im}i)")]
    ComplexMarginal { re: f64, im: f64 },
    #[error("primal/adjoint spectrum inconsistency - raise resolution (relative gap {rel:.3e})")]
    AdjointMismatch { rel: f64 },
    #[error("critical wavenumber outside scan range (minimum at a = {a})")]
    CriticalOutsideRange { a: f64 },
    #[error("PES pairing degenerate ({value:.3e})")]
    DegeneratePairing { value: f64 },
    #[error("harmonic resonance: 2a eigenvalue collision (condition estimate {condition:.3e})")]
    HarmonicResonance { condition: f64 },
    #[error("R assembly paths disagree: explicit {explicit:.12e} vs inner product {inner:.12e}")]
    PathDisagreement { explicit: f64, inner: f64 },
    #[error("degenerate normalization (rho = {rho:.3e})")]
    DegenerateNormalization { rho: f64 },
    #[error("solvability fails numerically - inspect z-harmonic bookkeeping ({residual:.3e})")]
    SolvabilityViolation { residual: f64 },
    #[error("no supercritical circle for Type-II (R = {r})")]
    NoSupercriticalCircle { r: f64 },
    #[error("mixed provenance: {0}")]
    MixedProvenance(String),
    #[error("eigensolver did not converge: {0}")]
    EigenFailure(String),
    #[error("CFL violation at t = {t}: {detail}")]
    CflViolation { t: f64, detail: String },
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("T* below scan range (no collapse above T = {t_low})")]
    TStarBelowRange { t_low: f64 },

    #[error("I/O error: {0}")]
    Io(String),
    #[error("malformed file: {0}")]
    Format(String),
}

/// Coarse category of a [`TaylorError`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Solver,
    Io,
}

impl TaylorError {
    pub fn kind(&self) -> ErrorKind {
        use TaylorError::*;
        match self {
            InvalidGeometry(_)
            | DegenerateRotationRatio
            | RayleighStable { .. }
            | ResolutionTooLow { .. }
            | InvalidArgument(_)
            | NoSupercriticalCircle { .. }
            | MixedProvenance(_) => ErrorKind::Validation,
            Io(_) | Format(_) => ErrorKind::Io,
            _ => ErrorKind::Solver,
        }
    }
}

impl From<std::io::Error> for TaylorError {
    fn from(e: std::io::Error) -> Self {
        TaylorError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, TaylorError>;
