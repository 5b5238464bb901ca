use super::model::{LinkSlots, ModelSpec, ParamLayout, PriorSpec};
use super::sampler::Target;
use super::InferenceError;
use crate::blocks::{CovariateVector, CycleBlock};
use crate::gev::{gev_logpdf, GevParams, LinkError, LinkKind};

/// Log posterior of a GEV regression over cycle blocks whose covariates are
/// already rescaled.
#[derive(Debug, Clone)]
pub struct GevPosterior {
    layout: ParamLayout,
    z: Vec<f64>,
    covariates: Vec<CovariateVector>,
    /// Per block, the model's covariates in layout order and their logs.
    values: Vec<Vec<f64>>,
    logs: Vec<Vec<f64>>,
    sites: Vec<Option<usize>>,
    n_sites: usize,
}

fn link_value(
    kind: LinkKind,
    slots: &LinkSlots,
    theta: &[f64],
    x: &[f64],
    ln_x: &[f64],
    site: Option<usize>,
) -> f64 {
    let mut v = theta[slots.intercept];
    match kind {
        LinkKind::Stationary => {}
        LinkKind::Linear => {
            for (c, xk) in theta[slots.coeffs.clone()].iter().zip(x) {
                v += c * xk;
            }
        }
        LinkKind::NonLinear => {
            let coeffs = &theta[slots.coeffs.clone()];
            let exps = &theta[slots.exponents.clone()];
            for ((c, e), l) in coeffs.iter().zip(exps).zip(ln_x) {
                v += c * (e * l).exp();
            }
        }
    }
    match site {
        Some(j) if !slots.effects.is_empty() => v + theta[slots.effects.start + j],
        _ => v,
    }
}

impl GevPosterior {
    /// Blocks whose site is not listed in `spec.sites` are rejected; an empty
    /// site list accepts everything.
    pub fn new(
        spec: &ModelSpec,
        priors: &PriorSpec,
        blocks: &[CycleBlock],
    ) -> Result<Self, InferenceError> {
        let effects = spec.has_site_effects();
        let mut sites = Vec::with_capacity(blocks.len());
        for b in blocks {
            let idx = if spec.sites.is_empty() {
                None
            } else {
                let j = spec
                    .sites
                    .iter()
                    .position(|s| *s == b.site_id)
                    .ok_or_else(|| InferenceError::UnknownSite(b.site_id.clone()))?;
                effects.then_some(j)
            };
            sites.push(idx);
        }
        if let Some(z) = blocks.iter().map(|b| b.z).find(|z| !z.is_finite()) {
            return Err(InferenceError::Data(format!("non-finite block extreme {z}")));
        }
        let non_linear = spec.is_non_linear();
        let values: Vec<Vec<f64>> = blocks
            .iter()
            .map(|b| spec.covariates.iter().map(|&c| b.covariates.get(c)).collect())
            .collect();
        if non_linear {
            if let Some((c, x)) = blocks
                .iter()
                .flat_map(|b| spec.covariates.iter().map(move |&c| (c, b.covariates.get(c))))
                .find(|(_, x)| !(*x > 0.0))
            {
                return Err(InferenceError::Link(LinkError::NonPositiveBase {
                    covariate: c,
                    value: x,
                }));
            }
        }
        let logs = if non_linear {
            values.iter().map(|v| v.iter().map(|x| x.ln()).collect()).collect()
        } else {
            vec![Vec::new(); values.len()]
        };
        Ok(GevPosterior {
            layout: ParamLayout::new(spec, priors),
            values,
            logs,
            z: blocks.iter().map(|b| b.z).collect(),
            covariates: blocks.iter().map(|b| b.covariates).collect(),
            sites,
            n_sites: if effects { spec.sites.len() } else { 0 },
        })
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn n_blocks(&self) -> usize {
        self.z.len()
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    /// Per block, the model's covariates in layout order.
    pub fn covariate_values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn log_prior(&self, theta: &[f64]) -> f64 {
        self.layout.log_prior(theta)
    }

    /// Sum of GEV log densities; `-inf` when any block leaves the support or
    /// the links produce invalid parameters.
    pub fn log_likelihood(&self, theta: &[f64]) -> f64 {
        if self.z.is_empty() {
            return 0.0;
        }
        let [(mu_kind, mu), (phi_kind, phi), (_, xi)] = self.layout.links();
        let stationary = mu_kind == LinkKind::Stationary && phi_kind == LinkKind::Stationary;

        if stationary {
            // one parameter set per site
            let per_site: Vec<Option<GevParams>> = (0..self.n_sites.max(1))
                .map(|j| {
                    let site = (self.n_sites > 0).then_some(j);
                    GevParams::new(
                        link_value(LinkKind::Stationary, mu, theta, &[], &[], site),
                        link_value(LinkKind::Stationary, phi, theta, &[], &[], site),
                        link_value(LinkKind::Stationary, xi, theta, &[], &[], site),
                    )
                    .ok()
                })
                .collect();
            let mut ll = 0.0;
            for (z, site) in self.z.iter().zip(&self.sites) {
                match per_site[site.unwrap_or(0)] {
                    Some(p) => ll += gev_logpdf(*z, &p),
                    None => return f64::NEG_INFINITY,
                }
                if ll == f64::NEG_INFINITY {
                    return ll;
                }
            }
            return ll;
        }

        let mut ll = 0.0;
        for (i, (z, site)) in self.z.iter().zip(&self.sites).enumerate() {
            let (x, ln_x) = (&self.values[i], &self.logs[i]);
            let p = GevParams::new(
                link_value(mu_kind, mu, theta, x, ln_x, *site),
                link_value(phi_kind, phi, theta, x, ln_x, *site),
                link_value(LinkKind::Stationary, xi, theta, x, ln_x, *site),
            );
            match p {
                Ok(p) => ll += gev_logpdf(*z, &p),
                Err(_) => return f64::NEG_INFINITY,
            }
            if ll == f64::NEG_INFINITY {
                return ll;
            }
        }
        ll
    }

    /// Same value as [`GevPosterior::log_likelihood`], evaluated through the
    /// general link code; kept as a cross-check.
    pub fn log_likelihood_reference(&self, theta: &[f64]) -> f64 {
        let model = self.layout.model(theta);
        let mut ll = 0.0;
        for ((z, cov), site) in self.z.iter().zip(&self.covariates).zip(&self.sites) {
            match model.params_for_cycle(cov, *site) {
                Ok(p) => ll += gev_logpdf(*z, &p),
                Err(_) => return f64::NEG_INFINITY,
            }
        }
        ll
    }

    /// `-2 · log-likelihood`.
    pub fn deviance(&self, theta: &[f64]) -> f64 {
        -2.0 * self.log_likelihood(theta)
    }
}

impl Target for GevPosterior {
    fn dim(&self) -> usize {
        self.layout.dim()
    }

    fn log_density(&self, theta: &[f64]) -> f64 {
        let lp = self.log_prior(theta);
        if lp == f64::NEG_INFINITY {
            return lp;
        }
        lp + self.log_likelihood(theta)
    }
}
