//! Transition type from the sign of R, the truncated amplitude equations and the
//! consolidated transition report.

use serde::{Deserialize, Serialize};

use crate::centermanifold::{transition_coefficient, CMCorrection, TransitionCoefficient};
use crate::error::{Result, TaylorError};
use crate::linstab::{
    find_critical_coupled, growth_curve, pes_check, solve_adjoint_for, solve_marginal_coupled, AdjointMode, Coupling,
    CriticalPoint, GrowthCurve, Normalization, PesReport, ScanOptions, StabilityMode,
};
use crate::radial_ops::{DiffOperators, GridTag, RadialGrid};

/// Escape radius of the truncated system in units of sqrt|beta_1 / R|.
pub const ESCAPE_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransitionType {
    #[serde(rename = "TypeI_continuous")]
    TypeIContinuous,
    #[serde(rename = "TypeII_jump")]
    TypeIIJump,
    #[serde(rename = "indeterminate")]
    Indeterminate,
}

impl TransitionType {
    pub fn label(&self) -> &'static str {
        match self {
            TransitionType::TypeIContinuous => "TypeI_continuous",
            TransitionType::TypeIIJump => "TypeII_jump",
            TransitionType::Indeterminate => "indeterminate",
        }
    }
}

pub fn classify(r: f64, tol: f64) -> TransitionType {
    if r < -tol {
        TransitionType::TypeIContinuous
    } else if r > tol {
        TransitionType::TypeIIJump
    } else {
        TransitionType::Indeterminate
    }
}

/// Radius sqrt(beta_1 / |R|) of the attracting circle for R < 0.
pub fn bifurcated_amplitude(beta1: f64, r: f64) -> Result<f64> {
    if !(r < 0.0) {
        return Err(TaylorError::NoSupercriticalCircle { r });
    }
    if !(beta1 >= 0.0) {
        return Err(TaylorError::InvalidArgument(format!("beta_1 = {beta1} is below onset")));
    }
    Ok((beta1 / r.abs()).sqrt())
}

/// Radius sqrt(-beta_1 / R) of the unstable circle when beta_1 < 0 < R.
pub fn subcritical_radius(beta1: f64, r: f64) -> Option<f64> {
    (beta1 < 0.0 && r > 0.0).then(|| (-beta1 / r).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeState {
    pub x: f64,
    pub y: f64,
    pub t: f64,
}

impl AmplitudeState {
    pub fn radius(&self) -> f64 {
        self.x.hypot(self.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<AmplitudeState>,
    /// Left the region where the cubic truncation is trusted.
    pub escaped: bool,
    pub escape_radius: f64,
}

impl Trajectory {
    pub fn last(&self) -> &AmplitudeState {
        self.states.last().expect("trajectory holds the initial state")
    }
}

/// Classical RK4 for dx/dt = beta_1 x + R x (x^2 + y^2), dy/dt = beta_1 y + R y (x^2 + y^2).
///
/// The escape radius is ESCAPE_FACTOR * max(sqrt|beta_1 / R|, |(x0, y0)|), infinite when R = 0;
/// the start radius enters so that onset (beta_1 = 0) does not flag every trajectory.
pub fn integrate_reduced(x0: f64, y0: f64, beta1: f64, r: f64, t_span: f64, dt: f64) -> Result<Trajectory> {
    if !(dt > 0.0 && t_span >= 0.0 && t_span.is_finite()) {
        return Err(TaylorError::InvalidArgument(format!("need dt > 0 and a finite t_span >= 0 (dt = {dt}, t_span = {t_span})")));
    }
    if ![x0, y0, beta1, r].iter().all(|v| v.is_finite()) {
        return Err(TaylorError::InvalidArgument("non-finite amplitude-equation input".into()));
    }
    let escape_radius = if r == 0.0 {
        f64::INFINITY
    } else {
        ESCAPE_FACTOR * (beta1 / r).abs().sqrt().max(x0.hypot(y0))
    };
    let f = |x: f64, y: f64| {
        let g = beta1 + r * (x * x + y * y);
        (g * x, g * y)
    };
    let steps = (t_span / dt).round() as usize;
    let mut states = Vec::with_capacity(steps + 1);
    let (mut x, mut y) = (x0, y0);
    states.push(AmplitudeState { x, y, t: 0.0 });
    let mut escaped = false;
    for k in 1..=steps {
        let (k1x, k1y) = f(x, y);
        let (k2x, k2y) = f(x + 0.5 * dt * k1x, y + 0.5 * dt * k1y);
        let (k3x, k3y) = f(x + 0.5 * dt * k2x, y + 0.5 * dt * k2y);
        let (k4x, k4y) = f(x + dt * k3x, y + dt * k3y);
        x += dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
        y += dt / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y);
        let t = k as f64 * dt;
        if !(x.is_finite() && y.is_finite()) {
            return Err(TaylorError::NonFinite { t });
        }
        states.push(AmplitudeState { x, y, t });
        if x.hypot(y) > escape_radius {
            log::warn!("escaped normal-form validity region at t = {t}");
            escaped = true;
            break;
        }
    }
    Ok(Trajectory { states, escaped, escape_radius })
}

/// radius(lambda) = sqrt(beta_1(lambda) / |R|) with beta_1 interpolated on the growth curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmplitudeLaw {
    pub r_abs: f64,
    pub growth: GrowthCurve,
}

impl AmplitudeLaw {
    /// Zero at and below lambda_c.
    pub fn radius(&self, lambda: f64) -> f64 {
        if lambda <= self.growth.lambda_c {
            return 0.0;
        }
        (self.growth.beta_at(lambda).max(0.0) / self.r_abs).sqrt()
    }

    /// (lambda, beta_1, radius) on the sampled lambda >= lambda_c.
    pub fn table(&self) -> Vec<[f64; 3]> {
        self.growth
            .samples
            .iter()
            .filter(|p| p[0] >= self.growth.lambda_c)
            .map(|p| [p[0], p[1], self.radius(p[0])])
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PesSummary {
    pub pairing: f64,
    pub slope: f64,
    pub positivity: bool,
    pub pes_unverified: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaugeRecord {
    pub normalization: Normalization,
    pub mode_gauge: f64,
    pub adjoint_gauge: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransitionReport {
    pub coupling: Coupling,
    pub t_c: f64,
    pub lambda_c: f64,
    pub a_c: f64,
    pub a_c_gap: f64,
    pub l_c: f64,
    #[serde(rename = "R")]
    pub r: f64,
    pub r_inner: f64,
    pub r_explicit: f64,
    /// |r_inner - r_explicit| / max(|r_inner|, |r_explicit|).
    pub r_rel_diff: f64,
    pub r_tol: f64,
    pub rho: f64,
    #[serde(rename = "type")]
    pub transition_type: TransitionType,
    pub amplitude_law: Option<AmplitudeLaw>,
    pub pes: PesSummary,
    pub gauge: GaugeRecord,
    pub grid: GridTag,
    pub notes: Vec<String>,
}

fn close(x: f64, y: f64) -> bool {
    (x - y).abs() <= 1e-10 * x.abs().max(y.abs())
}

pub fn assemble_report(
    critical: &CriticalPoint,
    coef: &TransitionCoefficient,
    pes: &PesReport,
    growth: &GrowthCurve,
) -> Result<TransitionReport> {
    let grids = [critical.grid, coef.grid, growth.grid];
    if grids.iter().any(|g| *g != critical.grid) {
        return Err(TaylorError::MixedProvenance("inputs were computed on different grids".into()));
    }
    if coef.coupling != critical.coupling || growth.coupling != critical.coupling {
        return Err(TaylorError::MixedProvenance("inputs belong to different parameter sets".into()));
    }
    if !close(coef.a, critical.a_c) || !close(growth.a, critical.a_c) {
        return Err(TaylorError::MixedProvenance("inputs use different wavenumbers".into()));
    }
    if !close(coef.lambda0, critical.lambda_c) || !close(growth.lambda_c, critical.lambda_c) {
        return Err(TaylorError::MixedProvenance("inputs use different critical values".into()));
    }
    if !close(coef.rho, pes.rho) {
        return Err(TaylorError::MixedProvenance("R and the PES report use different gauges".into()));
    }
    let r_tol = coef.zero_tol();
    let transition_type = classify(coef.r, r_tol);
    let mut notes = Vec::new();
    if pes.pes_unverified {
        notes.push("counter-rotating cylinders: positivity arguments do not apply".to_string());
    }
    if critical.multiple_minima {
        notes.push("marginal curve has several local minima over the scanned wavenumbers".to_string());
    }
    let amplitude_law = match transition_type {
        TransitionType::TypeIContinuous => Some(AmplitudeLaw { r_abs: coef.r.abs(), growth: growth.clone() }),
        TransitionType::TypeIIJump => {
            notes.push(
                "jump transition: expect hysteresis; bracket the collapse Taylor number with the time stepper".to_string(),
            );
            None
        }
        TransitionType::Indeterminate => {
            notes.push("R inside the zero band: recompute at higher radial resolution".to_string());
            None
        }
    };
    Ok(TransitionReport {
        coupling: critical.coupling,
        t_c: critical.t_c,
        lambda_c: critical.lambda_c,
        a_c: critical.a_c,
        a_c_gap: critical.a_c_gap,
        l_c: critical.l_c,
        r: coef.r,
        r_inner: coef.r_inner,
        r_explicit: coef.r_explicit,
        r_rel_diff: coef.rel_diff,
        r_tol,
        rho: coef.rho,
        transition_type,
        amplitude_law,
        pes: PesSummary {
            pairing: pes.pairing,
            slope: pes.slope,
            positivity: pes.positivity.all(),
            pes_unverified: pes.pes_unverified,
        },
        gauge: GaugeRecord { normalization: Normalization::MaxH, mode_gauge: coef.mode_gauge, adjoint_gauge: coef.adjoint_gauge },
        grid: critical.grid,
        notes,
    })
}

/// Every intermediate of one classification, all on the same grid.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub critical: CriticalPoint,
    pub mode: StabilityMode,
    pub adjoint: AdjointMode,
    pub pes: PesReport,
    pub growth: GrowthCurve,
    pub corrections: CMCorrection,
    pub coefficient: TransitionCoefficient,
    pub report: TransitionReport,
}

/// Critical point, eigenpair, PES checks, beta_1 near onset (steps of 1% in lambda), R
/// and the consolidated report.
pub fn analyze(coupling: Coupling, grid: &RadialGrid, ops: &DiffOperators, scan: &ScanOptions) -> Result<Analysis> {
    let critical = find_critical_coupled(coupling, grid, ops, scan)?;
    let mode = solve_marginal_coupled(coupling, critical.a_c, grid, ops)?;
    let adjoint = solve_adjoint_for(&mode, grid, ops)?;
    let pes = pes_check(&mode, &adjoint, grid, ops)?;
    let growth = growth_curve(coupling, critical.a_c, critical.lambda_c, grid, ops, 0.01, 3)?;
    let (corrections, coefficient) = transition_coefficient(&mode, &adjoint, grid, ops)?;
    let report = assemble_report(&critical, &coefficient, &pes, &growth)?;
    Ok(Analysis { critical, mode, adjoint, pes, growth, corrections, coefficient, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn classification_examples() {
        assert_eq!(classify(-0.5, 1e-8), TransitionType::TypeIContinuous);
        assert_eq!(classify(0.5, 1e-8), TransitionType::TypeIIJump);
        assert_eq!(classify(0.0, 1e-8), TransitionType::Indeterminate);
    }

    #[test]
    fn amplitude_examples() {
        assert!((bifurcated_amplitude(0.01, -1.0).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(bifurcated_amplitude(0.0, -1.0).unwrap(), 0.0);
        assert!(matches!(bifurcated_amplitude(0.01, 0.5), Err(TaylorError::NoSupercriticalCircle { .. })));
        let ratio = bifurcated_amplitude(0.02, -3.0).unwrap() / bifurcated_amplitude(0.01, -3.0).unwrap();
        assert!((ratio - 2f64.sqrt()).abs() < 1e-14);
        assert_eq!(subcritical_radius(-0.04, 1.0), Some(0.2));
        assert_eq!(subcritical_radius(0.04, 1.0), None);
    }

    #[test]
    fn origin_is_fixed() {
        let t = integrate_reduced(0.0, 0.0, 0.04, -1.0, 10.0, 1e-2).unwrap();
        assert!(t.states.iter().all(|s| s.x == 0.0 && s.y == 0.0));
    }

    #[test]
    fn jump_transition_escapes() {
        let t = integrate_reduced(0.1, 0.0, 0.04, 1.0, 100.0, 1e-3).unwrap();
        assert!(t.escaped);
        assert!(t.last().radius() > t.escape_radius);
        assert!(t.last().t < 100.0);
    }

    proptest! {
        #[test]
        fn classification_is_gauge_invariant(r in -10.0f64..10.0, c in 0.01f64..100.0) {
            let tol = 1e-8;
            prop_assert_eq!(classify(c * c * r, tol * c * c), classify(r, tol));
        }
    }
}
