//! Nondimensional parameters, the Couette base profile and the Rayleigh pre-screen.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TaylorError};

/// Dimensional description of the apparatus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CylinderGeometry {
    pub r1: f64,
    pub r2: f64,
    pub omega1: f64,
    pub omega2: f64,
    pub nu: f64,
}

impl CylinderGeometry {
    pub fn validate(&self) -> Result<()> {
        if !(self.r1 > 0.0 && self.r2 > self.r1) {
            return Err(TaylorError::InvalidGeometry(format!(
                "need r2 > r1 > 0, got r1 = {}, r2 = {}",
                self.r1, self.r2
            )));
        }
        if !(self.nu > 0.0) {
            return Err(TaylorError::InvalidGeometry(format!("need nu > 0, got {}", self.nu)));
        }
        if self.omega1 == 0.0 {
            return Err(TaylorError::InvalidGeometry("inner angular velocity must be nonzero".into()));
        }
        Ok(())
    }
}

/// Which length scale a Taylor number was built on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthScale {
    /// h = r2, used by the full axisymmetric problem.
    OuterRadius,
    /// h = r2 - r1, used by the narrow-gap systems.
    Gap,
}

/// Dimensionless ratios of the full problem (length scale r2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NondimParams {
    pub eta: f64,
    pub mu: f64,
    pub kappa: f64,
    pub alpha: f64,
    pub taylor: f64,
    pub lambda: f64,
    pub length_scale: LengthScale,
}

impl NondimParams {
    /// Ratios only; the Taylor number is left at zero until set.
    pub fn from_ratios(eta: f64, mu: f64) -> Result<Self> {
        if !(eta > 0.0 && eta < 1.0) {
            return Err(TaylorError::InvalidGeometry(format!("need 0 < eta < 1, got {eta}")));
        }
        if !mu.is_finite() {
            return Err(TaylorError::InvalidArgument(format!("mu must be finite, got {mu}")));
        }
        if mu == 1.0 {
            return Err(TaylorError::DegenerateRotationRatio);
        }
        let eta2 = eta * eta;
        Ok(Self {
            eta,
            mu,
            kappa: (1.0 - mu / eta2) / (1.0 - mu),
            alpha: (eta2 - mu) / (1.0 - eta2),
            taylor: 0.0,
            lambda: 0.0,
            length_scale: LengthScale::OuterRadius,
        })
    }

    pub fn with_taylor(mut self, taylor: f64) -> Self {
        self.taylor = taylor;
        self.lambda = taylor.max(0.0).sqrt();
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self.taylor = lambda * lambda;
        self
    }

    pub fn rayleigh_stable(&self) -> bool {
        rayleigh_stable(self)
    }

    /// 1/r^2 - kappa, the coupling of u_theta into the radial equation.
    pub fn radial_coupling(&self, r: f64) -> f64 {
        1.0 / (r * r) - self.kappa
    }
}

/// Derive the ratios and the Taylor number T = 4 r2^4 Omega1^2 (1-mu)^2 eta^4 / (nu^2 (1-eta^2)^2).
pub fn nondimensionalize(geom: &CylinderGeometry) -> Result<NondimParams> {
    geom.validate()?;
    let eta = geom.r1 / geom.r2;
    let mu = geom.omega2 / geom.omega1;
    let p = NondimParams::from_ratios(eta, mu)?;
    let eta2 = eta * eta;
    let t = 4.0 * geom.r2.powi(4) * geom.omega1.powi(2) * (1.0 - mu).powi(2) * eta2 * eta2
        / (geom.nu.powi(2) * (1.0 - eta2).powi(2));
    if p.rayleigh_stable() {
        log::warn!("Rayleigh-stable regime (mu = {mu} > eta^2 = {eta2}); PES assumptions not guaranteed");
    }
    Ok(p.with_taylor(t))
}

/// Rayleigh criterion: strictly mu > eta^2 is stable; the tie counts as a candidate for instability.
pub fn rayleigh_stable(params: &NondimParams) -> bool {
    params.mu > params.eta * params.eta
}

/// Fails with [`TaylorError::RayleighStable`] when the base flow cannot destabilise.
pub fn require_unstable_candidate(params: &NondimParams) -> Result<()> {
    if rayleigh_stable(params) {
        return Err(TaylorError::RayleighStable { mu: params.mu, eta_sq: params.eta * params.eta });
    }
    Ok(())
}

/// Azimuthal base velocity V(r) = a r + b / r in dimensional units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouetteProfile {
    pub a_coef: f64,
    pub b_coef: f64,
}

impl CouetteProfile {
    pub fn velocity(&self, r: f64) -> f64 {
        self.a_coef * r + self.b_coef / r
    }

    pub fn angular_velocity(&self, r: f64) -> f64 {
        self.a_coef + self.b_coef / (r * r)
    }
}

pub fn couette_profile(geom: &CylinderGeometry) -> Result<CouetteProfile> {
    geom.validate()?;
    let eta = geom.r1 / geom.r2;
    let mu = geom.omega2 / geom.omega1;
    let eta2 = eta * eta;
    // a = -Omega1 eta^2 (1 - mu/eta^2)/(1 - eta^2) written without the division by eta^2
    let a_coef = -geom.omega1 * (eta2 - mu) / (1.0 - eta2);
    let b_coef = geom.omega1 * geom.r1 * geom.r1 * (1.0 - mu) / (1.0 - eta2);
    Ok(CouetteProfile { a_coef, b_coef })
}

/// Narrow-gap ratios (length scale r2 - r1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NarrowGapParams {
    pub mu: f64,
    /// (eta^2 - mu)/(1 - eta^2) when an eta is attached; the reduced systems do not need it.
    pub alpha: Option<f64>,
    pub length_scale: LengthScale,
}

impl NarrowGapParams {
    pub fn new(mu: f64) -> Self {
        Self { mu, alpha: None, length_scale: LengthScale::Gap }
    }

    pub fn with_eta(mu: f64, eta: f64) -> Self {
        let eta2 = eta * eta;
        Self { mu, alpha: Some((eta2 - mu) / (1.0 - eta2)), length_scale: LengthScale::Gap }
    }

    /// T_c = lambda_1^2 / alpha.
    pub fn critical_taylor(&self, lambda1: f64) -> Option<f64> {
        self.alpha.filter(|a| *a > 0.0).map(|a| lambda1 * lambda1 / a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn geom(r1: f64, r2: f64, o1: f64, o2: f64, nu: f64) -> CylinderGeometry {
        CylinderGeometry { r1, r2, omega1: o1, omega2: o2, nu }
    }

    #[test]
    fn kappa_is_one_without_outer_rotation() {
        let p = NondimParams::from_ratios(0.9, 0.0).unwrap();
        assert_eq!(p.kappa, 1.0);
    }

    #[test]
    fn alpha_arithmetic() {
        let p = NondimParams::from_ratios(0.95, 0.9).unwrap();
        assert!((p.alpha - 0.0025 / 0.0975).abs() < 1e-14);
    }

    #[test]
    fn taylor_number_arithmetic() {
        let p = nondimensionalize(&geom(1.0, 2.0, 10.0, 0.0, 1.0)).unwrap();
        let expected = 4.0 * 16.0 * 100.0 * 0.0625 / 0.5625;
        assert!((p.taylor - expected).abs() < 1e-10 * expected);
        assert!((p.taylor - 711.111_111).abs() < 1e-3);
        assert!((p.lambda * p.lambda - p.taylor).abs() < 1e-12 * p.taylor);
    }

    #[test]
    fn degenerate_mu_rejected() {
        assert_eq!(
            nondimensionalize(&geom(1.0, 2.0, 3.0, 3.0, 1.0)),
            Err(TaylorError::DegenerateRotationRatio)
        );
    }

    #[test]
    fn invalid_geometry_rejected() {
        assert!(matches!(
            nondimensionalize(&geom(2.0, 1.0, 1.0, 0.0, 1.0)),
            Err(TaylorError::InvalidGeometry(_))
        ));
        assert!(matches!(
            nondimensionalize(&geom(1.0, 2.0, 1.0, 0.0, 0.0)),
            Err(TaylorError::InvalidGeometry(_))
        ));
    }

    #[test]
    fn couette_coefficients() {
        let c = couette_profile(&geom(1.0, 2.0, 1.0, 0.0, 1.0)).unwrap();
        assert!((c.a_coef + 1.0 / 3.0).abs() < 1e-15);
        assert!((c.b_coef - 4.0 / 3.0).abs() < 1e-15);
        assert!((c.velocity(1.0) - 1.0).abs() < 1e-15);
        assert!(c.velocity(2.0).abs() < 1e-15);
    }

    #[test]
    fn rayleigh_screen() {
        assert!(NondimParams::from_ratios(0.9, 0.9).unwrap().rayleigh_stable());
        assert!(!NondimParams::from_ratios(0.9, 0.0).unwrap().rayleigh_stable());
        assert!(!NondimParams::from_ratios(0.9, 0.81).unwrap().rayleigh_stable());
        assert!(require_unstable_candidate(&NondimParams::from_ratios(0.9, 0.9).unwrap()).is_err());
    }

    #[test]
    fn narrow_gap_critical_taylor() {
        let ng = NarrowGapParams::with_eta(0.9, 0.95);
        let tc = ng.critical_taylor(2.0).unwrap();
        assert!((tc - 4.0 / ng.alpha.unwrap()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn kappa_identity(eta in 0.05f64..0.995, mu in -2.0f64..0.99) {
            let p = NondimParams::from_ratios(eta, mu).unwrap();
            let lhs = p.kappa * (1.0 - p.mu) + p.mu / (eta * eta);
            prop_assert!((lhs - 1.0).abs() < 1e-14 * (1.0 + (p.mu / (eta * eta)).abs()));
        }

        #[test]
        fn couette_boundary_values(r1 in 0.1f64..5.0, gap in 0.01f64..5.0, o1 in -10.0f64..10.0, o2 in -10.0f64..10.0) {
            prop_assume!(o1.abs() > 1e-3 && (o2 - o1).abs() > 1e-6);
            let g = geom(r1, r1 + gap, o1, o2, 1.0);
            let c = couette_profile(&g).unwrap();
            let v1 = o1 * r1;
            let v2 = o2 * (r1 + gap);
            let scale = v1.abs().max(v2.abs()).max(c.a_coef.abs() * (r1 + gap)).max(c.b_coef.abs() / r1);
            prop_assert!((c.velocity(r1) - v1).abs() <= 1e-12 * scale);
            prop_assert!((c.velocity(r1 + gap) - v2).abs() <= 1e-12 * scale);
        }

        #[test]
        fn scale_invariance(r1 in 0.1f64..3.0, gap in 0.05f64..3.0, o1 in 0.1f64..10.0, mu in -1.0f64..0.9, c in 0.1f64..10.0) {
            let g = geom(r1, r1 + gap, o1, mu * o1, 0.7);
            let gs = geom(c * r1, c * (r1 + gap), o1, mu * o1, 0.7 * c * c);
            let p = nondimensionalize(&g).unwrap();
            let q = nondimensionalize(&gs).unwrap();
            prop_assert!((p.eta - q.eta).abs() < 1e-14);
            prop_assert!((p.mu - q.mu).abs() < 1e-14);
            prop_assert!((p.taylor - q.taylor).abs() < 1e-11 * p.taylor);
        }
    }
}
