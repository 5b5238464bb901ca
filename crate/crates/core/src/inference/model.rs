use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::InferenceError;
use crate::blocks::Covariate;
use crate::gev::{GevModel, LinkKind, LinkSpec};

/// The seven model variants compared during model selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelName {
    M1,
    M2a,
    M2b,
    M2c,
    M3a,
    M3b,
    M4,
}

impl ModelName {
    pub const ALL: [ModelName; 7] = [
        ModelName::M1,
        ModelName::M2a,
        ModelName::M2b,
        ModelName::M2c,
        ModelName::M3a,
        ModelName::M3b,
        ModelName::M4,
    ];

    /// `(location link, log-scale link)`.
    pub fn links(self) -> (LinkKind, LinkKind) {
        use LinkKind::*;
        match self {
            ModelName::M1 => (Stationary, Stationary),
            ModelName::M2a => (Linear, Stationary),
            ModelName::M2b => (Stationary, Linear),
            ModelName::M2c => (Linear, Linear),
            ModelName::M3a => (NonLinear, Stationary),
            ModelName::M3b => (NonLinear, Linear),
            ModelName::M4 => (NonLinear, NonLinear),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ModelName::M1 => "M1",
            ModelName::M2a => "M2a",
            ModelName::M2b => "M2b",
            ModelName::M2c => "M2c",
            ModelName::M3a => "M3a",
            ModelName::M3b => "M3b",
            ModelName::M4 => "M4",
        }
    }

    pub fn spec(self, covariates: &[Covariate], sites: &[String]) -> ModelSpec {
        let (mu_link, phi_link) = self.links();
        ModelSpec {
            name: self,
            mu_link,
            phi_link,
            covariates: covariates.to_vec(),
            sites: sites.to_vec(),
            random_effects: true,
        }
    }
}

impl fmt::Display for ModelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelName {
    type Err = InferenceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelName::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| InferenceError::UnknownModel(s.to_string()))
    }
}

/// Declarative description of one model: link kinds, covariates and sites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: ModelName,
    pub mu_link: LinkKind,
    pub phi_link: LinkKind,
    pub covariates: Vec<Covariate>,
    /// Sites whose blocks enter the fit; empty means every site present.
    pub sites: Vec<String>,
    /// Site random effects on all three intercepts when more than one site is fitted.
    pub random_effects: bool,
}

impl ModelSpec {
    pub fn has_site_effects(&self) -> bool {
        self.random_effects && self.sites.len() > 1
    }

    /// Covariates that enter some link.
    pub fn used_covariates(&self) -> &[Covariate] {
        if self.mu_link == LinkKind::Stationary && self.phi_link == LinkKind::Stationary {
            &[]
        } else {
            &self.covariates
        }
    }

    pub fn is_non_linear(&self) -> bool {
        self.mu_link == LinkKind::NonLinear || self.phi_link == LinkKind::NonLinear
    }
}

/// Prior family attached to one coordinate of the parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Prior {
    /// Normal(0, variance).
    Normal { variance: f64 },
    /// Uniform on the open interval.
    Uniform { lo: f64, hi: f64 },
    /// Normal(0, τ²) with τ read from another coordinate.
    SiteEffect { tau_index: usize },
    /// Half-normal with the given scale.
    HalfNormal { scale: f64 },
}

/// Prior settings; defaults are the vague priors of the method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub regression_variance: f64,
    pub exponent_bound: f64,
    pub shape_bound: f64,
    pub site_effect_sd_scale: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec {
            regression_variance: 1e6,
            exponent_bound: 2.0,
            shape_bound: 5.0,
            site_effect_sd_scale: 1.0,
        }
    }
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

impl Prior {
    /// Log density at `v`; `theta` supplies hyperparameters.
    pub fn log_density(&self, v: f64, theta: &[f64]) -> f64 {
        match *self {
            Prior::Normal { variance } => -0.5 * (LN_2PI + variance.ln()) - v * v / (2.0 * variance),
            Prior::Uniform { lo, hi } => {
                if v > lo && v < hi {
                    -(hi - lo).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            Prior::SiteEffect { tau_index } => {
                let tau = theta[tau_index];
                if !(tau > 0.0) {
                    return f64::NEG_INFINITY;
                }
                -0.5 * LN_2PI - tau.ln() - v * v / (2.0 * tau * tau)
            }
            Prior::HalfNormal { scale } => {
                if v > 0.0 {
                    std::f64::consts::LN_2 - 0.5 * LN_2PI - scale.ln() - v * v / (2.0 * scale * scale)
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LinkSlots {
    pub(crate) intercept: usize,
    pub(crate) coeffs: std::ops::Range<usize>,
    pub(crate) exponents: std::ops::Range<usize>,
    pub(crate) effects: std::ops::Range<usize>,
}

/// Positions of every model quantity inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub names: Vec<String>,
    pub priors: Vec<Prior>,
    spec: ModelSpec,
    mu: LinkSlots,
    phi: LinkSlots,
    xi: LinkSlots,
}

impl ParamLayout {
    pub fn new(spec: &ModelSpec, priors: &PriorSpec) -> Self {
        let mut names = Vec::new();
        let mut kinds = Vec::new();
        let normal = Prior::Normal {
            variance: priors.regression_variance,
        };
        let exponent = Prior::Uniform {
            lo: -priors.exponent_bound,
            hi: priors.exponent_bound,
        };
        let n_sites = if spec.has_site_effects() { spec.sites.len() } else { 0 };

        let mut push = |name: String, prior: Prior, names: &mut Vec<String>| {
            names.push(name);
            kinds.push(prior);
            names.len() - 1
        };

        let mut link = |tag: &str, kind: LinkKind, intercept_prior: Prior, names: &mut Vec<String>| {
            let intercept = push(format!("{tag}_0"), intercept_prior, names);
            let start = names.len();
            if kind != LinkKind::Stationary {
                for c in &spec.covariates {
                    push(format!("{tag}_{c}"), normal, names);
                }
            }
            let coeffs = start..names.len();
            let start = names.len();
            if kind == LinkKind::NonLinear {
                for c in &spec.covariates {
                    push(format!("theta_{tag}_{c}"), exponent, names);
                }
            }
            let exponents = start..names.len();
            LinkSlots {
                intercept,
                coeffs,
                exponents,
                effects: 0..0,
            }
        };

        let mut mu = link("mu", spec.mu_link, normal, &mut names);
        let mut phi = link("phi", spec.phi_link, normal, &mut names);
        let shape = Prior::Uniform {
            lo: -priors.shape_bound,
            hi: priors.shape_bound,
        };
        let mut xi = link("xi", LinkKind::Stationary, shape, &mut names);

        if n_sites > 0 {
            let base = names.len();
            let tau_base = base + 3 * n_sites;
            for (k, (tag, slots)) in [("mu", &mut mu), ("phi", &mut phi), ("xi", &mut xi)]
                .into_iter()
                .enumerate()
            {
                let start = names.len();
                for s in &spec.sites {
                    push(
                        format!("eps_{tag}[{s}]"),
                        Prior::SiteEffect {
                            tau_index: tau_base + k,
                        },
                        &mut names,
                    );
                }
                slots.effects = start..names.len();
            }
            for tag in ["mu", "phi", "xi"] {
                push(
                    format!("tau_{tag}"),
                    Prior::HalfNormal {
                        scale: priors.site_effect_sd_scale,
                    },
                    &mut names,
                );
            }
        }

        ParamLayout {
            names,
            priors: kinds,
            spec: spec.clone(),
            mu,
            phi,
            xi,
        }
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn mu_intercept(&self) -> usize {
        self.mu.intercept
    }

    pub fn phi_intercept(&self) -> usize {
        self.phi.intercept
    }

    pub fn xi_intercept(&self) -> usize {
        self.xi.intercept
    }

    /// Link kind and parameter slots for location, log-scale and shape.
    pub(crate) fn links(&self) -> [(LinkKind, &LinkSlots); 3] {
        [
            (self.spec.mu_link, &self.mu),
            (self.spec.phi_link, &self.phi),
            (LinkKind::Stationary, &self.xi),
        ]
    }

    pub fn exponent_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.mu.exponents.clone().chain(self.phi.exponents.clone())
    }

    pub fn tau_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.priors
            .iter()
            .enumerate()
            .filter(|(_, p)| matches!(p, Prior::HalfNormal { .. }))
            .map(|(i, _)| i)
    }

    pub fn log_prior(&self, theta: &[f64]) -> f64 {
        let mut lp = 0.0;
        for (v, prior) in theta.iter().zip(&self.priors) {
            lp += prior.log_density(*v, theta);
            if lp == f64::NEG_INFINITY {
                break;
            }
        }
        lp
    }

    fn link_spec(&self, kind: LinkKind, slots: &LinkSlots, theta: &[f64]) -> LinkSpec {
        let covariates = if kind == LinkKind::Stationary {
            Vec::new()
        } else {
            self.spec.covariates.clone()
        };
        LinkSpec {
            kind,
            intercept: theta[slots.intercept],
            covariates,
            coeffs: theta[slots.coeffs.clone()].to_vec(),
            exponents: theta[slots.exponents.clone()].to_vec(),
            site_effects: theta[slots.effects.clone()].to_vec(),
        }
    }

    /// Link functions at parameter vector `theta`.
    pub fn model(&self, theta: &[f64]) -> GevModel {
        GevModel {
            mu: self.link_spec(self.spec.mu_link, &self.mu, theta),
            phi: self.link_spec(self.spec.phi_link, &self.phi, theta),
            xi: self.link_spec(LinkKind::Stationary, &self.xi, theta),
        }
    }

    /// Starting point: intercepts from the given location / log-scale guesses,
    /// coefficients at 0, exponents at 1, shape at `xi`, site effects at 0.
    pub fn initial(&self, mu0: f64, phi0: f64, xi: f64) -> Vec<f64> {
        let mut theta = vec![0.0; self.dim()];
        theta[self.mu.intercept] = mu0;
        theta[self.phi.intercept] = phi0;
        theta[self.xi.intercept] = xi;
        for i in self.exponent_indices() {
            theta[i] = 1.0;
        }
        for i in self.tau_indices().collect::<Vec<_>>() {
            theta[i] = 0.5;
        }
        theta
    }
}
