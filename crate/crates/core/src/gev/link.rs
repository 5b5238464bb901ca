use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{GevError, GevParams};
use crate::blocks::{Covariate, CovariateVector};

/// Open support of the non-linear exponents.
pub const EXPONENT_BOUND: f64 = 2.0;

#[derive(Debug, Error, PartialEq)]
pub enum LinkError {
    #[error("covariate {covariate} must be positive under a non-linear link, got {value}")]
    NonPositiveBase { covariate: Covariate, value: f64 },
    #[error("invalid link: {0}")]
    Invalid(String),
    #[error("site index {0} has no site effect")]
    UnknownSite(usize),
    #[error(transparent)]
    Gev(#[from] GevError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LinkKind {
    /// Intercept only.
    Stationary,
    /// `α0 + Σ α_k x_k`.
    Linear,
    /// `α0 + Σ α_k x_k^θ_k`.
    NonLinear,
}

/// Maps a covariate vector onto one GEV parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub kind: LinkKind,
    pub intercept: f64,
    #[serde(default)]
    pub covariates: Vec<Covariate>,
    #[serde(default)]
    pub coeffs: Vec<f64>,
    /// Per-covariate exponents; empty unless `kind` is `NonLinear`.
    #[serde(default)]
    pub exponents: Vec<f64>,
    /// Additive intercept offset per site index; empty means no site effects.
    #[serde(default)]
    pub site_effects: Vec<f64>,
}

impl LinkSpec {
    pub fn stationary(intercept: f64) -> Self {
        LinkSpec {
            kind: LinkKind::Stationary,
            intercept,
            covariates: Vec::new(),
            coeffs: Vec::new(),
            exponents: Vec::new(),
            site_effects: Vec::new(),
        }
    }

    pub fn linear(intercept: f64, terms: &[(Covariate, f64)]) -> Self {
        LinkSpec {
            kind: LinkKind::Linear,
            intercept,
            covariates: terms.iter().map(|t| t.0).collect(),
            coeffs: terms.iter().map(|t| t.1).collect(),
            exponents: Vec::new(),
            site_effects: Vec::new(),
        }
    }

    /// Terms are `(covariate, coefficient, exponent)`.
    pub fn non_linear(intercept: f64, terms: &[(Covariate, f64, f64)]) -> Self {
        LinkSpec {
            kind: LinkKind::NonLinear,
            intercept,
            covariates: terms.iter().map(|t| t.0).collect(),
            coeffs: terms.iter().map(|t| t.1).collect(),
            exponents: terms.iter().map(|t| t.2).collect(),
            site_effects: Vec::new(),
        }
    }

    pub fn with_site_effects(mut self, effects: Vec<f64>) -> Self {
        self.site_effects = effects;
        self
    }

    pub fn validate(&self) -> Result<(), LinkError> {
        let fail = |m: String| Err(LinkError::Invalid(m));
        if self.coeffs.len() != self.covariates.len() {
            return fail(format!(
                "{} coefficients for {} covariates",
                self.coeffs.len(),
                self.covariates.len()
            ));
        }
        match self.kind {
            LinkKind::Stationary if !self.coeffs.is_empty() => {
                return fail("stationary link carries covariate terms".into())
            }
            LinkKind::Stationary | LinkKind::Linear => {
                if self.exponents.iter().any(|&e| e != 1.0) {
                    return fail("linear link exponents must all equal 1".into());
                }
            }
            LinkKind::NonLinear => {
                if self.exponents.len() != self.coeffs.len() {
                    return fail(format!(
                        "{} exponents for {} coefficients",
                        self.exponents.len(),
                        self.coeffs.len()
                    ));
                }
                if let Some(e) = self
                    .exponents
                    .iter()
                    .find(|e| !(e.abs() < EXPONENT_BOUND))
                {
                    return fail(format!("exponent {e} outside (-2, 2)"));
                }
            }
        }
        Ok(())
    }

    fn exponent(&self, k: usize) -> f64 {
        match self.kind {
            LinkKind::NonLinear => self.exponents[k],
            _ => 1.0,
        }
    }

    fn site_offset(&self, site: Option<usize>) -> Result<f64, LinkError> {
        match site {
            Some(j) if !self.site_effects.is_empty() => self
                .site_effects
                .get(j)
                .copied()
                .ok_or(LinkError::UnknownSite(j)),
            _ => Ok(0.0),
        }
    }
}

/// `intercept + Σ coeff_k · cov_k^exponent_k + site_effect`.
pub fn link_eval(
    spec: &LinkSpec,
    covariates: &CovariateVector,
    site: Option<usize>,
) -> Result<f64, LinkError> {
    let mut value = spec.intercept;
    for (k, (&cov, &coeff)) in spec.covariates.iter().zip(&spec.coeffs).enumerate() {
        let x = covariates.get(cov);
        value += match spec.kind {
            LinkKind::Stationary => 0.0,
            LinkKind::Linear => coeff * x,
            LinkKind::NonLinear => {
                if !(x > 0.0) {
                    return Err(LinkError::NonPositiveBase {
                        covariate: cov,
                        value: x,
                    });
                }
                coeff * x.powf(spec.exponent(k))
            }
        };
    }
    Ok(value + spec.site_offset(site)?)
}

/// Location, log-scale and shape links of one fitted or generating model.
/// The shape link is always intercept-only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GevModel {
    pub mu: LinkSpec,
    pub phi: LinkSpec,
    pub xi: LinkSpec,
}

impl GevModel {
    pub fn stationary(params: GevParams) -> Self {
        GevModel {
            mu: LinkSpec::stationary(params.mu),
            phi: LinkSpec::stationary(params.phi),
            xi: LinkSpec::stationary(params.xi),
        }
    }

    pub fn validate(&self) -> Result<(), LinkError> {
        self.mu.validate()?;
        self.phi.validate()?;
        self.xi.validate()?;
        if self.xi.kind != LinkKind::Stationary {
            return Err(LinkError::Invalid("shape link must be stationary".into()));
        }
        Ok(())
    }

    /// Per-cycle parameters from (already rescaled) covariates and a site index.
    pub fn params_for_cycle(
        &self,
        covariates: &CovariateVector,
        site: Option<usize>,
    ) -> Result<GevParams, LinkError> {
        let mu = link_eval(&self.mu, covariates, site)?;
        let phi = link_eval(&self.phi, covariates, site)?;
        let xi = link_eval(&self.xi, covariates, site)?;
        Ok(GevParams::new(mu, phi, xi)?)
    }
}
