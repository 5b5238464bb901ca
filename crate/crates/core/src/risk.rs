//! Crash risk from fitted per-cycle GEV parameters.
//!
//! With `z = -PET`, a crash corresponds to `z >= 0`, so the per-cycle crash
//! risk is the upper-tail mass `RC = 1 - G(0)`. The modified crash risk
//! subtracts a behavioural baseline (mean plus `z_cr` standard deviations of
//! the site's RC series) and the expected crash count extrapolates the summed
//! modified risk from the observed window `t` to a horizon `T`.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blocks::{CycleBlock, SiteConfig};
use crate::gev::{gev_logpdf, gev_quantile, gev_sf, GevParams};
use crate::inference::{sample_variance, stable_mean, InferenceError, ModelName, ModelReport};

pub const DEFAULT_Z_CR: f64 = 1.45;
pub const DEFAULT_BASELINE_EPS: f64 = 0.05;
/// 365.25 days.
pub const HOURS_PER_YEAR: f64 = 8766.0;

#[derive(Debug, Error)]
pub enum RiskError {
    #[error("invalid risk setting: {0}")]
    Settings(String),
    #[error("crash risk {0} outside [0, 1]")]
    Probability(f64),
    #[error("no site configuration for {0:?}")]
    UnknownSite(String),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Probability that the block extreme of negated PET reaches 0.
pub fn crash_risk(params: &GevParams) -> f64 {
    gev_sf(0.0, params)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MrcBranch {
    /// Mean RC above the baseline threshold: baseline subtracted.
    Baseline,
    /// Mean RC at or below the threshold: RC passed through.
    Passthrough,
    /// Baseline branch selected but fewer than 2 cycles: RC passed through.
    TooFewCycles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MrcOutcome {
    pub values: Vec<f64>,
    pub branch: MrcBranch,
    pub rc_mean: f64,
    pub rc_sd: Option<f64>,
    pub cutoff: Option<f64>,
}

/// Per-cycle modified crash risk.
///
/// When `mean(rc) > baseline_eps` each value becomes
/// `max(0, rc - mean - z_cr * sd)` with the sample standard deviation;
/// otherwise RC is returned unchanged.
pub fn modified_crash_risk(
    rcs: &[f64],
    z_cr: f64,
    baseline_eps: f64,
) -> Result<MrcOutcome, RiskError> {
    if !(z_cr >= 0.0 && z_cr.is_finite()) {
        return Err(RiskError::Settings(format!("z_cr must be non-negative, got {z_cr}")));
    }
    if !(baseline_eps >= 0.0 && baseline_eps.is_finite()) {
        return Err(RiskError::Settings(format!(
            "baseline_eps must be non-negative, got {baseline_eps}"
        )));
    }
    if let Some(&bad) = rcs.iter().find(|r| !(**r >= 0.0 && **r <= 1.0)) {
        return Err(RiskError::Probability(bad));
    }
    let n = rcs.len();
    // shifted mean: identical values give back exactly that value
    let mean = if n == 0 { 0.0 } else { stable_mean(rcs) };
    let passthrough = |branch| MrcOutcome {
        values: rcs.to_vec(),
        branch,
        rc_mean: mean,
        rc_sd: None,
        cutoff: None,
    };
    if !(mean > baseline_eps) {
        return Ok(passthrough(MrcBranch::Passthrough));
    }
    if n < 2 {
        log::warn!("baseline needs at least 2 cycles, got {n}; using raw crash risk");
        return Ok(passthrough(MrcBranch::TooFewCycles));
    }
    let sd = sample_variance(rcs).sqrt();
    let cutoff = mean + z_cr * sd;
    Ok(MrcOutcome {
        values: rcs.iter().map(|r| (r - cutoff).max(0.0)).collect(),
        branch: MrcBranch::Baseline,
        rc_mean: mean,
        rc_sd: Some(sd),
        cutoff: Some(cutoff),
    })
}

/// `N = (T / t) · Σ max(mrc, 0)`, both durations in hours.
pub fn expected_crashes(mrcs: &[f64], horizon_hours: f64, observed_hours: f64) -> Result<f64, RiskError> {
    if !(horizon_hours > 0.0 && horizon_hours.is_finite()) {
        return Err(RiskError::Settings(format!("horizon must be positive, got {horizon_hours}")));
    }
    if !(observed_hours > 0.0 && observed_hours.is_finite()) {
        return Err(RiskError::Settings(format!(
            "observed duration must be positive, got {observed_hours}"
        )));
    }
    let total: f64 = mrcs.iter().filter(|m| **m > 0.0).sum();
    Ok(horizon_hours / observed_hours * total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskSettings {
    pub z_cr: f64,
    pub baseline_eps: f64,
    /// Extrapolation horizon `T` in hours.
    pub horizon_hours: f64,
}

impl Default for RiskSettings {
    fn default() -> Self {
        RiskSettings {
            z_cr: DEFAULT_Z_CR,
            baseline_eps: DEFAULT_BASELINE_EPS,
            horizon_hours: HOURS_PER_YEAR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskRow {
    pub site_id: String,
    pub cycle: usize,
    pub mu: f64,
    pub sigma: f64,
    pub xi: f64,
    pub rc: f64,
    pub mrc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteRisk {
    pub site_id: String,
    pub n_cycles: usize,
    pub rc_mean: f64,
    pub rc_sd: Option<f64>,
    pub cutoff: Option<f64>,
    pub branch: MrcBranch,
    pub z_cr: f64,
    pub horizon_hours: f64,
    pub observed_hours: f64,
    /// Expected crashes from the modified risk.
    pub n_expected: f64,
    /// Expected crashes with the raw per-cycle risk in place of the modified one.
    pub n_raw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub model: ModelName,
    pub rows: Vec<RiskRow>,
    pub sites: Vec<SiteRisk>,
    pub n_expected: f64,
    pub n_raw: f64,
}

/// Risk of one site's cycles given their GEV parameters.
pub fn assess_site(
    site_id: &str,
    cycles: &[(usize, GevParams)],
    observed_hours: f64,
    settings: &RiskSettings,
) -> Result<(Vec<RiskRow>, SiteRisk), RiskError> {
    let rcs: Vec<f64> = cycles.iter().map(|(_, p)| crash_risk(p)).collect();
    let mrc = modified_crash_risk(&rcs, settings.z_cr, settings.baseline_eps)?;
    let n_expected = expected_crashes(&mrc.values, settings.horizon_hours, observed_hours)?;
    let n_raw = expected_crashes(&rcs, settings.horizon_hours, observed_hours)?;
    let rows = cycles
        .iter()
        .zip(rcs.iter().zip(&mrc.values))
        .map(|((cycle, p), (&rc, &m))| RiskRow {
            site_id: site_id.to_string(),
            cycle: *cycle,
            mu: p.mu,
            sigma: p.sigma(),
            xi: p.xi,
            rc,
            mrc: m,
        })
        .collect();
    Ok((
        rows,
        SiteRisk {
            site_id: site_id.to_string(),
            n_cycles: cycles.len(),
            rc_mean: mrc.rc_mean,
            rc_sd: mrc.rc_sd,
            cutoff: mrc.cutoff,
            branch: mrc.branch,
            z_cr: settings.z_cr,
            horizon_hours: settings.horizon_hours,
            observed_hours,
            n_expected,
            n_raw,
        },
    ))
}

/// A site id with the GEV parameters of each of its cycles.
pub type SiteCycles = (String, Vec<(usize, GevParams)>);

/// Per-cycle GEV parameters of a fitted model, grouped by site in first-seen order.
pub fn cycle_params(
    report: &ModelReport,
    blocks: &[CycleBlock],
) -> Result<Vec<SiteCycles>, RiskError> {
    let model = report.point_model()?;
    let mut out: Vec<SiteCycles> = Vec::new();
    for b in blocks {
        if !report.spec.sites.is_empty() && !report.spec.sites.contains(&b.site_id) {
            continue;
        }
        let p = report.cycle_params(&model, b)?;
        match out.iter_mut().find(|(s, _)| *s == b.site_id) {
            Some((_, v)) => v.push((b.cycle_index, p)),
            None => out.push((b.site_id.clone(), vec![(b.cycle_index, p)])),
        }
    }
    Ok(out)
}

/// Risk report of one fitted model over the blocks it was fitted on.
/// The observed duration `t` of each site is its configured observation window.
pub fn assess_model(
    report: &ModelReport,
    blocks: &[CycleBlock],
    sites: &[SiteConfig],
    settings: &RiskSettings,
) -> Result<RiskReport, RiskError> {
    let mut rows = Vec::new();
    let mut site_risks = Vec::new();
    for (site_id, cycles) in cycle_params(report, blocks)? {
        let site = sites
            .iter()
            .find(|s| s.site_id == site_id)
            .ok_or_else(|| RiskError::UnknownSite(site_id.clone()))?;
        let (r, s) = assess_site(&site_id, &cycles, site.observed_hours(), settings)?;
        rows.extend(r);
        site_risks.push(s);
    }
    Ok(RiskReport {
        model: report.name,
        n_expected: site_risks.iter().map(|s| s.n_expected).sum(),
        n_raw: site_risks.iter().map(|s| s.n_raw).sum(),
        rows,
        sites: site_risks,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub model: ModelName,
    pub n_expected: f64,
    pub n_raw: f64,
    pub observed: Option<f64>,
}

/// Expected crash totals per model alongside the observed count.
pub fn benchmark_against_observed(reports: &[RiskReport], observed: Option<f64>) -> Vec<BenchmarkRow> {
    reports
        .iter()
        .map(|r| BenchmarkRow {
            model: r.model,
            n_expected: r.n_expected,
            n_raw: r.n_raw,
            observed,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskSummary {
    pub settings: RiskSettings,
    pub selected: Option<ModelName>,
    pub models: BTreeMap<ModelName, Vec<SiteRisk>>,
    pub comparison: Vec<BenchmarkRow>,
    /// Models without a usable fit, with the reason.
    pub skipped: BTreeMap<ModelName, String>,
}

pub const RISK_HEADER: [&str; 7] = ["site_id", "cycle", "mu", "sigma", "xi", "rc", "mrc"];

pub fn write_risk_csv<W: Write>(writer: W, rows: &[RiskRow]) -> Result<(), RiskError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(RISK_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.site_id.clone(),
            r.cycle.to_string(),
            r.mu.to_string(),
            r.sigma.to_string(),
            r.xi.to_string(),
            r.rc.to_string(),
            r.mrc.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// GEV density curves of up to `per_site` evenly spaced cycles per site,
/// evaluated on `points` grid points between the 0.1% and 99.9% quantiles.
pub fn write_density_csv<W: Write>(
    writer: W,
    cycles: &[SiteCycles],
    per_site: usize,
    points: usize,
) -> Result<(), RiskError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["site_id", "cycle", "z", "density"]).map_err(csv_err)?;
    for (site, list) in cycles {
        if list.is_empty() || per_site == 0 {
            continue;
        }
        let step = (list.len() as f64 / per_site as f64).max(1.0);
        let mut picked = Vec::new();
        let mut k = 0.0;
        while (k as usize) < list.len() && picked.len() < per_site {
            picked.push(&list[k as usize]);
            k += step;
        }
        for (cycle, p) in picked {
            let lo = gev_quantile(1e-3, p).expect("probability in range");
            let hi = gev_quantile(1.0 - 1e-3, p).expect("probability in range");
            for i in 0..points {
                let z = lo + (hi - lo) * i as f64 / (points.max(2) - 1) as f64;
                w.write_record([
                    site.clone(),
                    cycle.to_string(),
                    z.to_string(),
                    gev_logpdf(z, p).exp().to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> RiskError {
    RiskError::Io(std::io::Error::other(e))
}
