//! Generalized Extreme Value distribution in the `(μ, φ = log σ, ξ)`
//! parameterization, plus the link functions that map cycle covariates onto
//! per-cycle parameters.
//!
//! ```text
//! G(z) = exp(-[1 + ξ (z - μ) / σ]^(-1/ξ))     ξ ≠ 0
//! G(z) = exp(-exp(-(z - μ) / σ))              ξ = 0
//! ```
//!
//! Outside the support the bracket is clamped: the CDF is exactly 0 or 1 and
//! the log-density is `-inf`, so samplers can evaluate proposals that leave
//! the support without special casing.

mod link;

pub use link::{link_eval, GevModel, LinkError, LinkKind, LinkSpec};

use rand::distributions::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Below this |ξ| the Gumbel limit is used.
pub const XI_EPS: f64 = 1e-8;

/// Open support of the shape parameter.
pub const XI_BOUND: f64 = 5.0;

#[derive(Debug, Error, PartialEq)]
pub enum GevError {
    #[error("probability {0} outside (0, 1)")]
    Probability(f64),
    #[error("invalid GEV parameters: {0}")]
    Params(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GevParams {
    /// Location.
    pub mu: f64,
    /// Log scale.
    pub phi: f64,
    /// Shape.
    pub xi: f64,
}

impl GevParams {
    pub fn new(mu: f64, phi: f64, xi: f64) -> Result<Self, GevError> {
        let p = GevParams { mu, phi, xi };
        p.validate()?;
        Ok(p)
    }

    pub fn from_sigma(mu: f64, sigma: f64, xi: f64) -> Result<Self, GevError> {
        if !(sigma > 0.0) {
            return Err(GevError::Params(format!("scale must be positive, got {sigma}")));
        }
        GevParams::new(mu, sigma.ln(), xi)
    }

    pub fn validate(&self) -> Result<(), GevError> {
        if !(self.mu.is_finite() && self.phi.is_finite() && self.xi.is_finite()) {
            return Err(GevError::Params(format!("non-finite value in {self:?}")));
        }
        if self.xi <= -XI_BOUND || self.xi >= XI_BOUND {
            return Err(GevError::Params(format!(
                "shape {} outside (-{XI_BOUND}, {XI_BOUND})",
                self.xi
            )));
        }
        if !self.sigma().is_finite() || self.sigma() <= 0.0 {
            return Err(GevError::Params(format!("log-scale {} overflows", self.phi)));
        }
        Ok(())
    }

    pub fn sigma(&self) -> f64 {
        self.phi.exp()
    }

    fn is_gumbel(&self) -> bool {
        self.xi.abs() < XI_EPS
    }

    /// Finite endpoint of the support: upper for ξ < 0, lower for ξ > 0.
    pub fn endpoint(&self) -> Option<f64> {
        if self.is_gumbel() {
            None
        } else {
            Some(self.mu - self.sigma() / self.xi)
        }
    }

    /// `log t` for the reduced bracket `t = 1 + ξ (z - μ)/σ`, or `None` off support.
    fn log_bracket(&self, z: f64) -> Option<f64> {
        let u = (z - self.mu) / self.sigma();
        let a = self.xi * u;
        if a <= -1.0 {
            None
        } else {
            Some(a.ln_1p())
        }
    }
}

pub fn gev_cdf(z: f64, p: &GevParams) -> f64 {
    if p.is_gumbel() {
        let u = (z - p.mu) / p.sigma();
        return (-(-u).exp()).exp();
    }
    match p.log_bracket(z) {
        Some(lt) => (-(-lt / p.xi).exp()).exp(),
        // below the lower endpoint (ξ > 0) or above the upper one (ξ < 0)
        None if p.xi > 0.0 => 0.0,
        None => 1.0,
    }
}

/// Survival function `1 - G(z)`, accurate in the upper tail.
pub fn gev_sf(z: f64, p: &GevParams) -> f64 {
    if p.is_gumbel() {
        let u = (z - p.mu) / p.sigma();
        return -(-(-u).exp()).exp_m1();
    }
    match p.log_bracket(z) {
        Some(lt) => -(-(-lt / p.xi).exp()).exp_m1(),
        None if p.xi > 0.0 => 1.0,
        None => 0.0,
    }
}

pub fn gev_logpdf(z: f64, p: &GevParams) -> f64 {
    if p.is_gumbel() {
        let u = (z - p.mu) / p.sigma();
        return -p.phi - u - (-u).exp();
    }
    match p.log_bracket(z) {
        Some(lt) => -p.phi - (1.0 + 1.0 / p.xi) * lt - (-lt / p.xi).exp(),
        None => f64::NEG_INFINITY,
    }
}

pub fn gev_quantile(prob: f64, p: &GevParams) -> Result<f64, GevError> {
    if !(prob > 0.0 && prob < 1.0) {
        return Err(GevError::Probability(prob));
    }
    let y = -prob.ln();
    if p.is_gumbel() {
        return Ok(p.mu - p.sigma() * y.ln());
    }
    Ok(p.mu + p.sigma() * (-p.xi * y.ln()).exp_m1() / p.xi)
}

/// Inverse-CDF draw using a caller-owned generator.
pub fn gev_draw<R: Rng + ?Sized>(p: &GevParams, rng: &mut R) -> f64 {
    let u: f64 = rng.sample(Open01);
    gev_quantile(u, p).expect("Open01 yields values inside (0, 1)")
}

/// One draw determined entirely by `seed`.
pub fn gev_sample(p: &GevParams, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    gev_draw(p, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gumbel_cdf(z: f64, mu: f64, sigma: f64) -> f64 {
        (-(-(z - mu) / sigma).exp()).exp()
    }

    #[test]
    fn cdf_at_location_is_inv_e() {
        for &xi in &[-0.41, -1e-9, 0.0, 0.3, 2.0] {
            let p = GevParams::new(1.5, 0.2, xi).unwrap();
            assert!((gev_cdf(1.5, &p) - (-1.0f64).exp()).abs() < 1e-15);
        }
    }

    #[test]
    fn bounded_support_for_negative_shape() {
        let p = GevParams::from_sigma(-2.0, 1.36, -0.41).unwrap();
        let upper = -2.0 + 1.36 / 0.41;
        assert_eq!(p.endpoint().unwrap(), upper);
        assert_eq!(gev_cdf(upper, &p), 1.0);
        assert_eq!(gev_cdf(upper + 3.0, &p), 1.0);
        assert_eq!(gev_logpdf(upper + 0.01, &p), f64::NEG_INFINITY);
        let q = GevParams::new(0.0, 0.0, -0.5).unwrap();
        assert_eq!(gev_logpdf(2.5, &q), f64::NEG_INFINITY);
    }

    #[test]
    fn lower_endpoint_for_positive_shape() {
        let p = GevParams::new(0.0, 0.0, 0.5).unwrap();
        assert_eq!(gev_cdf(-2.5, &p), 0.0);
        assert_eq!(gev_sf(-2.5, &p), 1.0);
    }

    #[test]
    fn gumbel_limit_grid() {
        for &xi in &[1e-9, -1e-9, 1e-6, -1e-6] {
            let p = GevParams::new(0.7, 0.3, xi).unwrap();
            let sigma = p.sigma();
            for i in 0..20 {
                let z = 0.7 + sigma * (-3.0 + 0.5 * i as f64);
                let d = (gev_cdf(z, &p) - gumbel_cdf(z, 0.7, sigma)).abs();
                assert!(d < 1e-5, "xi={xi} z={z} diff={d}");
            }
        }
    }

    #[test]
    fn quantile_closed_forms() {
        let p = GevParams::new(-1.0, 0.4, 0.25).unwrap();
        let q = gev_quantile((-1.0f64).exp(), &p).unwrap();
        assert!((q - -1.0).abs() < 1e-12);

        let g = GevParams::new(2.0, 0.5f64.ln(), 0.0).unwrap();
        let q = gev_quantile(0.5, &g).unwrap();
        assert!((q - (2.0 - 0.5 * 2f64.ln().ln())).abs() < 1e-14);

        assert!(gev_quantile(0.0, &p).is_err());
        assert!(gev_quantile(1.0, &p).is_err());
        assert!(gev_quantile(f64::NAN, &p).is_err());
    }

    #[test]
    fn sample_is_deterministic_and_bounded() {
        let p = GevParams::from_sigma(-2.3, 1.36, -0.41).unwrap();
        assert_eq!(gev_sample(&p, 42).to_bits(), gev_sample(&p, 42).to_bits());
        let upper = p.endpoint().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            assert!(gev_draw(&p, &mut rng) <= upper);
        }
    }

    #[test]
    fn rejects_bad_params() {
        assert!(GevParams::new(0.0, 0.0, 5.0).is_err());
        assert!(GevParams::new(0.0, 0.0, -5.0).is_err());
        assert!(GevParams::new(f64::NAN, 0.0, 0.0).is_err());
        assert!(GevParams::from_sigma(0.0, 0.0, 0.0).is_err());
    }
}
