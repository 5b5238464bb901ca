use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::diagnostics::{dic_from_deviances, gelman_rubin, posterior_mean, DicResult, ParamSummary};
use super::model::{ModelName, ModelSpec, ParamLayout, PriorSpec};
use super::posterior::GevPosterior;
use super::sampler::{run_sampler, Chain, SamplerSettings, Target};
use super::InferenceError;
use crate::blocks::{Covariate, CovariateScaling, CycleBlock};
use crate::gev::{GevModel, GevParams, LinkError, LinkKind};

/// Convergence requires every R-hat below this value.
pub const RHAT_LIMIT: f64 = 1.1;
/// Convergence requires every post-burn-in acceptance rate at or above this value.
pub const MIN_ACCEPTANCE: f64 = 0.05;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    pub sampler: SamplerSettings,
    pub n_chains: usize,
    /// Chain `c` uses seed `seed + c`.
    pub seed: u64,
    pub priors: PriorSpec,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings {
            sampler: SamplerSettings::default(),
            n_chains: 2,
            seed: 1,
            priors: PriorSpec::default(),
        }
    }
}

impl FitSettings {
    pub fn chain_seeds(&self) -> Vec<u64> {
        (0..self.n_chains as u64).map(|c| self.seed.wrapping_add(c)).collect()
    }
}

/// Location and log-scale from the Gumbel method of moments.
fn gumbel_moments(z: &[f64]) -> (f64, f64) {
    let n = z.len() as f64;
    let mean = z.iter().sum::<f64>() / n;
    let sd = if z.len() > 1 {
        (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let sigma = (sd * 6f64.sqrt() / std::f64::consts::PI).max(1e-3);
    (mean - EULER_GAMMA * sigma, sigma.ln())
}

fn jitter(c: usize) -> f64 {
    let sign = if c.is_multiple_of(2) { 1.0 } else { -1.0 };
    1.0 + sign * 0.2 / (1 + c / 2) as f64
}

/// Moment-based starting values before jitter: intercepts from the Gumbel
/// moment fit, everything else from [`ParamLayout::initial`].
///
/// With a non-linear location link, the exponent and coefficients must start
/// on the right side of zero: moving the exponent through zero at a fixed
/// fitted slope needs an unbounded coefficient, so a chain started at the
/// wrong sign stays there. For those models a shared exponent is picked from
/// a grid by least squares of the extremes on the transformed covariates.
fn base_point(post: &GevPosterior, xi: f64) -> Vec<f64> {
    let z = post.z();
    let (mu0, phi0) = gumbel_moments(z);
    let layout = post.layout();
    let base = layout.initial(mu0, phi0, xi);
    let [(mu_kind, slots), _, _] = layout.links();
    if mu_kind != LinkKind::NonLinear || z.len() <= slots.coeffs.len() + 1 {
        return base;
    }
    let mean_z = z.iter().sum::<f64>() / z.len() as f64;
    let values = post.covariate_values();
    let k = slots.coeffs.len();

    let mut best: Option<(f64, Vec<f64>)> = None;
    for step in 0..20 {
        let exponent = -1.9 + 0.2 * step as f64;
        let design = DMatrix::from_fn(z.len(), k + 1, |i, j| {
            if j == 0 {
                1.0
            } else {
                values[i][j - 1].powf(exponent)
            }
        });
        let rhs = DVector::from_column_slice(z);
        let Ok(beta) = design.clone().svd(true, true).solve(&rhs, 1e-12) else {
            continue;
        };
        let resid: Vec<f64> = (&rhs - &design * &beta).iter().copied().collect();
        let (_, phi_r) = gumbel_moments(&resid);
        let mut theta = base.clone();
        // shift the fitted mean to a Gumbel location
        theta[slots.intercept] = beta[0] + (mu0 - mean_z);
        theta[layout.phi_intercept()] = phi_r;
        for (j, idx) in slots.coeffs.clone().enumerate() {
            theta[idx] = beta[j + 1];
        }
        for idx in slots.exponents.clone() {
            theta[idx] = exponent;
        }
        let lp = post.log_density(&theta);
        if lp.is_finite() && best.as_ref().is_none_or(|(b, _)| lp > *b) {
            best = Some((lp, theta));
        }
    }
    best.map_or(base, |(_, theta)| theta)
}

/// Initial point of chain `c`: the moment-based start scaled by the chain's
/// jitter factor, with ξ = -0.1 or ξ = 0 if the former leaves the support.
/// A jittered point outside the prior or the support falls back to the
/// unjittered one.
fn initial_point(post: &GevPosterior, c: usize) -> Result<Vec<f64>, InferenceError> {
    let f = jitter(c);
    for xi in [-0.1, 0.0] {
        let start = base_point(post, xi);
        if post.log_prior(&start) == f64::NEG_INFINITY {
            return Err(InferenceError::Init(format!(
                "chain {c} starts outside the prior support"
            )));
        }
        let theta: Vec<f64> = start.iter().map(|v| v * f).collect();
        if post.log_density(&theta).is_finite() {
            return Ok(theta);
        }
        if post.log_likelihood(&start).is_finite() {
            return Ok(start);
        }
    }
    Err(InferenceError::Init(format!(
        "no finite likelihood at the moment-based starting point of chain {c}"
    )))
}

/// In-memory result of one model fit.
#[derive(Debug, Clone)]
pub struct Posterior {
    pub spec: ModelSpec,
    pub layout: ParamLayout,
    pub scaling: CovariateScaling,
    pub chains: Vec<Chain>,
    pub rhat: Vec<Option<f64>>,
    pub dic: DicResult,
    pub summaries: Vec<ParamSummary>,
    pub mean: Vec<f64>,
    pub converged: bool,
    pub warnings: Vec<String>,
    pub n_blocks: usize,
    pub priors: PriorSpec,
    pub settings: FitSettings,
}

impl Posterior {
    /// Every retained draw of every chain.
    pub fn draws(&self) -> Vec<&[f64]> {
        self.chains
            .iter()
            .flat_map(|c| c.draws.iter().map(|d| d.as_slice()))
            .collect()
    }

    pub fn summary(&self, name: &str) -> Option<&ParamSummary> {
        self.summaries.iter().find(|s| s.name == name)
    }

    pub fn report(&self) -> ModelReport {
        let phi = self.layout.phi_intercept();
        let sigma: Vec<f64> = self.draws().iter().map(|d| d[phi].exp()).collect();
        ModelReport {
            name: self.spec.name,
            spec: self.spec.clone(),
            n_blocks: self.n_blocks,
            converged: self.converged,
            failure: None,
            warnings: self.warnings.clone(),
            parameters: self.summaries.clone(),
            sigma_0: Some(ParamSummary::from_values("sigma_0", &sigma, None)),
            acceptance: self.chains.iter().map(|c| c.acceptance.clone()).collect(),
            dic: Some(self.dic),
            posterior_mean: self.mean.clone(),
            scaling: Some(self.scaling.clone()),
            priors: self.priors,
            seeds: self.settings.chain_seeds(),
            n_iter: self.settings.sampler.n_iter,
            burn_in: self.settings.sampler.burn_in,
        }
    }
}

/// Fits one model by adaptive Metropolis with `settings.n_chains` parallel chains.
///
/// Covariates are divided by their sample means over the fitted blocks before
/// sampling; the scaling is kept in the result.
pub fn fit_model(
    spec: &ModelSpec,
    blocks: &[CycleBlock],
    settings: &FitSettings,
) -> Result<Posterior, InferenceError> {
    settings.sampler.validate()?;
    if settings.n_chains == 0 {
        return Err(InferenceError::Settings("at least one chain is required".into()));
    }
    let selected: Vec<CycleBlock> = blocks
        .iter()
        .filter(|b| spec.sites.is_empty() || spec.sites.contains(&b.site_id))
        .cloned()
        .collect();
    if selected.len() < 2 {
        return Err(InferenceError::NoBlocks(spec.name.to_string()));
    }
    let scaling = CovariateScaling::fit(&selected);
    scaling.check(spec.used_covariates())?;
    let scaled = scaling.apply_blocks(&selected);
    if spec.is_non_linear() {
        for b in &scaled {
            if let Some(&c) = spec.covariates.iter().find(|&&c| !(b.covariates.get(c) > 0.0)) {
                return Err(InferenceError::Link(LinkError::NonPositiveBase {
                    covariate: c,
                    value: b.covariates.get(c),
                }));
            }
        }
    }

    let post = GevPosterior::new(spec, &settings.priors, &scaled)?;
    let inits = (0..settings.n_chains)
        .map(|c| initial_point(&post, c))
        .collect::<Result<Vec<_>, _>>()?;
    let seeds = settings.chain_seeds();
    let chains = inits
        .par_iter()
        .zip(seeds.par_iter())
        .map(|(init, &seed)| run_sampler(&post, init, &settings.sampler, seed))
        .collect::<Result<Vec<_>, _>>()?;

    let layout = post.layout().clone();
    let mut warnings = Vec::new();
    let rhat: Vec<Option<f64>> = (0..layout.dim())
        .map(|k| {
            if chains.len() < 2 {
                return None;
            }
            match gelman_rubin(&chains, k) {
                Ok(r) => Some(r),
                Err(e) => {
                    warnings.push(format!("{}: {e}", layout.names[k]));
                    None
                }
            }
        })
        .collect();
    if chains.len() < 2 {
        warnings.push("single chain: R-hat not computed".into());
    }

    let draws: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| c.draws.iter().map(|d| d.as_slice()))
        .collect();
    let deviances: Vec<f64> = draws.par_iter().map(|d| post.deviance(d)).collect();
    let mean = posterior_mean(&draws);
    let dic = dic_from_deviances(&deviances, post.deviance(&mean));
    if dic.p_d.is_none() {
        warnings.push("deviance at the posterior mean is not finite; DIC undefined".into());
    }

    let summaries: Vec<ParamSummary> = layout
        .names
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let values: Vec<f64> = draws.iter().map(|d| d[k]).collect();
            ParamSummary::from_values(name, &values, rhat[k])
        })
        .collect();

    let mut converged = true;
    for (k, r) in rhat.iter().enumerate() {
        match r {
            Some(r) if *r < RHAT_LIMIT => {}
            Some(r) => {
                converged = false;
                warnings.push(format!("{}: R-hat {r:.3}", layout.names[k]));
            }
            None if chains.len() >= 2 => converged = false,
            None => {}
        }
    }
    for (c, chain) in chains.iter().enumerate() {
        for (k, a) in chain.acceptance.iter().enumerate() {
            if *a < MIN_ACCEPTANCE {
                converged = false;
                warnings.push(format!(
                    "chain {c} {}: acceptance {a:.3}",
                    layout.names[k]
                ));
            }
        }
    }
    if !converged {
        log::warn!("{} did not converge: {}", spec.name, warnings.join("; "));
    }

    Ok(Posterior {
        spec: spec.clone(),
        layout,
        scaling,
        chains,
        rhat,
        dic,
        summaries,
        mean,
        converged,
        warnings,
        n_blocks: scaled.len(),
        priors: settings.priors,
        settings: settings.clone(),
    })
}

/// Serializable summary of one fitted (or failed) model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub name: ModelName,
    pub spec: ModelSpec,
    pub n_blocks: usize,
    pub converged: bool,
    pub failure: Option<String>,
    pub warnings: Vec<String>,
    pub parameters: Vec<ParamSummary>,
    pub sigma_0: Option<ParamSummary>,
    /// Per chain, per parameter.
    pub acceptance: Vec<Vec<f64>>,
    pub dic: Option<DicResult>,
    pub posterior_mean: Vec<f64>,
    pub scaling: Option<CovariateScaling>,
    pub priors: PriorSpec,
    pub seeds: Vec<u64>,
    pub n_iter: usize,
    pub burn_in: usize,
}

impl ModelReport {
    fn failed(spec: &ModelSpec, settings: &FitSettings, err: &InferenceError) -> Self {
        ModelReport {
            name: spec.name,
            spec: spec.clone(),
            n_blocks: 0,
            converged: false,
            failure: Some(err.to_string()),
            warnings: Vec::new(),
            parameters: Vec::new(),
            sigma_0: None,
            acceptance: Vec::new(),
            dic: None,
            posterior_mean: Vec::new(),
            scaling: None,
            priors: settings.priors,
            seeds: settings.chain_seeds(),
            n_iter: settings.sampler.n_iter,
            burn_in: settings.sampler.burn_in,
        }
    }

    pub fn dic_value(&self) -> Option<f64> {
        self.dic.and_then(|d| d.dic)
    }

    /// Links evaluated at the posterior mean.
    pub fn point_model(&self) -> Result<GevModel, InferenceError> {
        if self.posterior_mean.is_empty() {
            return Err(InferenceError::Unfitted(self.name.to_string()));
        }
        let layout = ParamLayout::new(&self.spec, &self.priors);
        Ok(layout.model(&self.posterior_mean))
    }

    /// GEV parameters of one cycle under the posterior-mean model, with the
    /// stored scaling applied to the raw covariates.
    pub fn cycle_params(
        &self,
        model: &GevModel,
        block: &CycleBlock,
    ) -> Result<GevParams, InferenceError> {
        let scaling = self
            .scaling
            .as_ref()
            .ok_or_else(|| InferenceError::Unfitted(self.name.to_string()))?;
        let site = if self.spec.has_site_effects() {
            Some(
                self.spec
                    .sites
                    .iter()
                    .position(|s| *s == block.site_id)
                    .ok_or_else(|| InferenceError::UnknownSite(block.site_id.clone()))?,
            )
        } else {
            None
        };
        Ok(model.params_for_cycle(&scaling.apply(&block.covariates), site)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub models: Vec<ModelReport>,
    /// Converged model with the smallest DIC.
    pub selected: Option<ModelName>,
}

impl FitReport {
    pub fn get(&self, name: ModelName) -> Option<&ModelReport> {
        self.models.iter().find(|m| m.name == name)
    }
}

/// Argmin of DIC over converged models with a defined DIC; ties keep the earlier model.
pub fn select_model(models: &[ModelReport]) -> Option<ModelName> {
    let mut best: Option<(ModelName, f64)> = None;
    for m in models.iter().filter(|m| m.converged) {
        if let Some(d) = m.dic_value() {
            if best.is_none_or(|(_, b)| d < b) {
                best = Some((m.name, d));
            }
        }
    }
    best.map(|b| b.0)
}

/// Fits every requested model on the same blocks. A model that cannot be fitted
/// is reported with its failure instead of aborting the others.
pub fn fit_all(
    models: &[ModelName],
    covariates: &[Covariate],
    blocks: &[CycleBlock],
    settings: &FitSettings,
    random_effects: bool,
) -> (FitReport, Vec<Option<Posterior>>) {
    let (sites, _) = crate::blocks::site_index(blocks);
    let results: Vec<(ModelReport, Option<Posterior>)> = models
        .par_iter()
        .map(|&name| {
            let mut spec = name.spec(covariates, &sites);
            spec.random_effects = random_effects;
            match fit_model(&spec, blocks, settings) {
                Ok(post) => (post.report(), Some(post)),
                Err(e) => {
                    log::warn!("{name} failed: {e}");
                    (ModelReport::failed(&spec, settings, &e), None)
                }
            }
        })
        .collect();
    let (reports, posts): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let selected = select_model(&reports);
    (
        FitReport {
            models: reports,
            selected,
        },
        posts,
    )
}

/// Writes one chain's retained draws as CSV: iteration, log posterior, parameters.
pub fn write_trace_csv<W: Write>(
    writer: W,
    chain: &Chain,
    names: &[String],
) -> Result<(), InferenceError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["iteration".to_string(), "log_posterior".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for (i, (draw, lp)) in chain.draws.iter().zip(&chain.log_posterior).enumerate() {
        let mut row = vec![(chain.burn_in + i + 1).to_string(), lp.to_string()];
        row.extend(draw.iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> InferenceError {
    InferenceError::Io(std::io::Error::other(e))
}
