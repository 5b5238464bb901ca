use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::blocks::{default_pcu_factors, Covariate, SiteConfig};
use crate::conflict::DEFAULT_PET_THRESHOLD;
use crate::inference::{FitSettings, ModelName, PriorSpec, SamplerSettings};
use crate::risk::{RiskSettings, DEFAULT_BASELINE_EPS, DEFAULT_Z_CR, HOURS_PER_YEAR};
use crate::trajectory::PerspectiveModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SiteInput {
    pub site_id: String,
    /// Seconds.
    pub cycle_length: f64,
    #[serde(default)]
    pub observation_start: f64,
    /// Seconds.
    pub observation_duration: f64,
    /// Trajectory CSV; relative paths resolve against the config file.
    pub trajectories: PathBuf,
    /// Overrides the run-wide PCU table for this site.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pcu_factors: Option<BTreeMap<String, f64>>,
}

/// Coordinate system of the trajectory samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Coordinates {
    /// Metres on the ground plane.
    #[default]
    Field,
    /// Image units corrected by a perspective model around a camera position.
    Image {
        perspective: PerspectiveModel,
        camera: [f64; 2],
    },
}

fn default_pet_threshold() -> f64 {
    DEFAULT_PET_THRESHOLD
}
fn default_correlation_threshold() -> f64 {
    0.7
}
fn default_models() -> Vec<ModelName> {
    ModelName::ALL.to_vec()
}
fn default_covariates() -> Vec<Covariate> {
    Covariate::ALL.to_vec()
}
fn default_chains() -> usize {
    2
}
fn default_iterations() -> usize {
    76_000
}
fn default_burn_in() -> usize {
    26_000
}
fn default_seed() -> u64 {
    1
}
fn default_z_cr() -> f64 {
    DEFAULT_Z_CR
}
fn default_baseline_eps() -> f64 {
    DEFAULT_BASELINE_EPS
}
fn default_horizon() -> f64 {
    HOURS_PER_YEAR
}
fn default_true() -> bool {
    true
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// Whole-run configuration. Every field except `sites` has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub sites: Vec<SiteInput>,
    #[serde(default)]
    pub coordinates: Coordinates,
    /// Seconds; conflicts need PET strictly below this.
    #[serde(default = "default_pet_threshold")]
    pub pet_threshold: f64,
    #[serde(default = "default_pcu_factors")]
    pub pcu_factors: BTreeMap<String, f64>,
    #[serde(default = "default_correlation_threshold")]
    pub correlation_threshold: f64,
    #[serde(default = "default_models")]
    pub models: Vec<ModelName>,
    /// Candidate model covariates before the correlation screen.
    #[serde(default = "default_covariates")]
    pub covariates: Vec<Covariate>,
    #[serde(default = "default_chains")]
    pub chains: usize,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub random_effects: bool,
    #[serde(default = "default_z_cr")]
    pub z_cr: f64,
    #[serde(default = "default_baseline_eps")]
    pub baseline_eps: f64,
    /// Extrapolation horizon in hours.
    #[serde(default = "default_horizon")]
    pub horizon_hours: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observed_crashes: Option<f64>,
    /// Write per-chain trace CSVs.
    #[serde(default)]
    pub export_traces: bool,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
}

impl RunConfig {
    /// A config with defaults for everything but the sites.
    pub fn with_sites(sites: Vec<SiteInput>) -> Self {
        RunConfig {
            sites,
            coordinates: Coordinates::Field,
            pet_threshold: default_pet_threshold(),
            pcu_factors: default_pcu_factors(),
            correlation_threshold: default_correlation_threshold(),
            models: default_models(),
            covariates: default_covariates(),
            chains: default_chains(),
            iterations: default_iterations(),
            burn_in: default_burn_in(),
            seed: default_seed(),
            random_effects: true,
            z_cr: default_z_cr(),
            baseline_eps: default_baseline_eps(),
            horizon_hours: default_horizon(),
            observed_crashes: None,
            export_traces: false,
            out_dir: default_out(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))
    }

    /// Reads a config file and resolves relative trajectory paths against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = RunConfig::from_json(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for s in &mut cfg.sites {
            if s.trajectories.is_relative() {
                s.trajectories = base.join(&s.trajectories);
            }
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.sites.is_empty() {
            return bad("at least one site is required".into());
        }
        let mut seen = BTreeSet::new();
        for s in &self.sites {
            if !seen.insert(s.site_id.as_str()) {
                return bad(format!("duplicate site id {:?}", s.site_id));
            }
            if s.site_id.is_empty() || s.site_id.contains(['/', '\\']) {
                return bad(format!("site id {:?} is not a valid file name", s.site_id));
            }
            self.site_config(s)
                .validate()
                .map_err(|e| CliError::Config(e.to_string()))?;
        }
        if let Coordinates::Image { perspective, .. } = &self.coordinates {
            perspective
                .validate()
                .map_err(|e| CliError::Config(e.to_string()))?;
        }
        if !(self.pet_threshold > 0.0 && self.pet_threshold.is_finite()) {
            return bad(format!("pet_threshold must be positive, got {}", self.pet_threshold));
        }
        if !(self.correlation_threshold > 0.0 && self.correlation_threshold < 1.0) {
            return bad(format!(
                "correlation_threshold must lie in (0, 1), got {}",
                self.correlation_threshold
            ));
        }
        if self.models.is_empty() {
            return bad("model list is empty".into());
        }
        if self.chains < 2 {
            return bad(format!("at least 2 chains are required, got {}", self.chains));
        }
        if self.burn_in >= self.iterations {
            return bad(format!(
                "burn_in {} must be smaller than iterations {}",
                self.burn_in, self.iterations
            ));
        }
        if self.iterations - self.burn_in < 10 {
            return bad("at least 10 post-burn-in iterations are required".into());
        }
        if !(self.z_cr >= 0.0 && self.z_cr.is_finite()) {
            return bad(format!("z_cr must be non-negative, got {}", self.z_cr));
        }
        if !(self.baseline_eps >= 0.0 && self.baseline_eps.is_finite()) {
            return bad(format!("baseline_eps must be non-negative, got {}", self.baseline_eps));
        }
        if !(self.horizon_hours > 0.0 && self.horizon_hours.is_finite()) {
            return bad(format!("horizon_hours must be positive, got {}", self.horizon_hours));
        }
        if let Some(n) = self.observed_crashes {
            if !(n >= 0.0) {
                return bad(format!("observed_crashes must be non-negative, got {n}"));
            }
        }
        Ok(())
    }

    pub fn site_config(&self, s: &SiteInput) -> SiteConfig {
        SiteConfig {
            site_id: s.site_id.clone(),
            cycle_length: s.cycle_length,
            observation_start: s.observation_start,
            observation_duration: s.observation_duration,
            pcu_factors: s.pcu_factors.clone().unwrap_or_else(|| self.pcu_factors.clone()),
        }
    }

    pub fn site_configs(&self) -> Vec<SiteConfig> {
        self.sites.iter().map(|s| self.site_config(s)).collect()
    }

    pub fn fit_settings(&self) -> FitSettings {
        FitSettings {
            sampler: SamplerSettings {
                n_iter: self.iterations,
                burn_in: self.burn_in,
                ..SamplerSettings::default()
            },
            n_chains: self.chains,
            seed: self.seed,
            priors: PriorSpec::default(),
        }
    }

    pub fn risk_settings(&self) -> RiskSettings {
        RiskSettings {
            z_cr: self.z_cr,
            baseline_eps: self.baseline_eps,
            horizon_hours: self.horizon_hours,
        }
    }
}
