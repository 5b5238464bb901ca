//! Signal-cycle blocking: assigns conflicts and trajectories to cycles,
//! extracts the per-cycle extreme of negated PET and builds the covariate
//! vector of each cycle.
//!
//! Sign convention: the block extreme is `z = -min(PET)`, so the most
//! dangerous conflict of a cycle is its block maximum and `z >= 0` means a
//! collision.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conflict::ConflictEvent;
use crate::trajectory::{space_mean_speed_with, DistanceMetric, RoadUserClass, Track};

#[derive(Debug, Error)]
pub enum BlocksError {
    #[error("invalid site config: {0}")]
    Config(String),
    #[error("no PCU factor for vehicle subtype '{subtype}' (track {track})")]
    UnknownSubtype { track: String, subtype: String },
    #[error("correlation analysis needs at least 3 cycles, got {0}")]
    TooFewCycles(usize),
    #[error("correlation threshold {0} outside (0, 1)")]
    Threshold(f64),
    #[error("covariate {0} has non-positive mean; cannot rescale")]
    Rescale(Covariate),
    #[error("unknown covariate '{0}'")]
    UnknownCovariate(String),
    #[error("line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, BlocksError>;

pub fn default_pcu_factors() -> BTreeMap<String, f64> {
    // non-normative placeholders; supply the local PCU table in the site config
    [
        ("car", 1.0),
        ("bus", 2.5),
        ("truck", 2.5),
        ("motorcycle", 0.5),
        ("rickshaw", 0.8),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteConfig {
    pub site_id: String,
    /// Seconds.
    pub cycle_length: f64,
    #[serde(default)]
    pub observation_start: f64,
    /// Seconds; a partial trailing cycle is dropped.
    pub observation_duration: f64,
    #[serde(default = "default_pcu_factors")]
    pub pcu_factors: BTreeMap<String, f64>,
}

impl SiteConfig {
    pub fn new(site_id: impl Into<String>, cycle_length: f64, observation_duration: f64) -> Self {
        SiteConfig {
            site_id: site_id.into(),
            cycle_length,
            observation_start: 0.0,
            observation_duration,
            pcu_factors: default_pcu_factors(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cycle_length.is_finite() && self.cycle_length > 0.0) {
            return Err(BlocksError::Config(format!(
                "site {}: cycle_length must be positive",
                self.site_id
            )));
        }
        if !(self.observation_duration.is_finite() && self.observation_duration > 0.0)
            || !self.observation_start.is_finite()
        {
            return Err(BlocksError::Config(format!(
                "site {}: observation window must be finite and positive",
                self.site_id
            )));
        }
        if let Some((k, v)) = self.pcu_factors.iter().find(|(_, v)| !(**v > 0.0)) {
            return Err(BlocksError::Config(format!(
                "site {}: PCU factor for '{k}' must be positive, got {v}",
                self.site_id
            )));
        }
        Ok(())
    }

    /// Number of complete cycles in the observation window.
    pub fn n_cycles(&self) -> usize {
        // tolerate representation error, e.g. 7200 / 400 computed inexactly
        (self.observation_duration / self.cycle_length + 1e-9).floor() as usize
    }

    pub fn cycle_window(&self, cycle: usize) -> (f64, f64) {
        let start = self.observation_start + cycle as f64 * self.cycle_length;
        (start, start + self.cycle_length)
    }

    /// Cycle index of time `t`, or `None` before the start or past the last full cycle.
    pub fn cycle_of(&self, t: f64) -> Option<usize> {
        let rel = (t - self.observation_start) / self.cycle_length;
        if !(rel >= 0.0) {
            return None;
        }
        let c = rel.floor() as usize;
        (c < self.n_cycles()).then_some(c)
    }

    /// Observation duration in hours.
    pub fn observed_hours(&self) -> f64 {
        self.n_cycles() as f64 * self.cycle_length / 3600.0
    }
}

/// The seven retained cycle covariates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Covariate {
    #[serde(rename = "F_MV")]
    FMv,
    #[serde(rename = "F_P")]
    FP,
    #[serde(rename = "S_MV")]
    SMv,
    #[serde(rename = "S_P")]
    SP,
    #[serde(rename = "CF_MV")]
    CfMv,
    #[serde(rename = "CS_MV")]
    CsMv,
    #[serde(rename = "CS_NMV")]
    CsNmv,
}

impl Covariate {
    pub const ALL: [Covariate; 7] = [
        Covariate::FMv,
        Covariate::FP,
        Covariate::SMv,
        Covariate::SP,
        Covariate::CfMv,
        Covariate::CsMv,
        Covariate::CsNmv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Covariate::FMv => "F_MV",
            Covariate::FP => "F_P",
            Covariate::SMv => "S_MV",
            Covariate::SP => "S_P",
            Covariate::CfMv => "CF_MV",
            Covariate::CsMv => "CS_MV",
            Covariate::CsNmv => "CS_NMV",
        }
    }
}

impl fmt::Display for Covariate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Covariate {
    type Err = BlocksError;

    fn from_str(s: &str) -> Result<Self> {
        Covariate::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| BlocksError::UnknownCovariate(s.to_string()))
    }
}

/// Per-cycle covariates: flows in PCU (pedestrians as counts), speeds in m/s.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CovariateVector {
    pub f_mv: f64,
    pub f_p: f64,
    pub s_mv: f64,
    pub s_p: f64,
    pub cf_mv: f64,
    pub cs_mv: f64,
    pub cs_nmv: f64,
}

impl CovariateVector {
    pub fn get(&self, c: Covariate) -> f64 {
        match c {
            Covariate::FMv => self.f_mv,
            Covariate::FP => self.f_p,
            Covariate::SMv => self.s_mv,
            Covariate::SP => self.s_p,
            Covariate::CfMv => self.cf_mv,
            Covariate::CsMv => self.cs_mv,
            Covariate::CsNmv => self.cs_nmv,
        }
    }

    pub fn set(&mut self, c: Covariate, v: f64) {
        match c {
            Covariate::FMv => self.f_mv = v,
            Covariate::FP => self.f_p = v,
            Covariate::SMv => self.s_mv = v,
            Covariate::SP => self.s_p = v,
            Covariate::CfMv => self.cf_mv = v,
            Covariate::CsMv => self.cs_mv = v,
            Covariate::CsNmv => self.cs_nmv = v,
        }
    }

    pub fn from_fn(f: impl Fn(Covariate) -> f64) -> Self {
        let mut v = CovariateVector::default();
        for c in Covariate::ALL {
            v.set(c, f(c));
        }
        v
    }

    pub fn add(&self, o: &CovariateVector) -> CovariateVector {
        CovariateVector::from_fn(|c| self.get(c) + o.get(c))
    }

    pub fn is_valid(&self) -> bool {
        Covariate::ALL
            .iter()
            .all(|&c| self.get(c).is_finite() && self.get(c) >= 0.0)
    }
}

/// Candidate covariates screened by the correlation analysis: the seven
/// retained ones followed by five that are typically collinear with them.
pub const CANDIDATE_NAMES: [&str; 12] = [
    "F_MV", "F_P", "S_MV", "S_P", "CF_MV", "CS_MV", "CS_NMV", "F_NMV", "S_NMV", "CF_NMV", "CF_P",
    "CS_P",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleBlock {
    pub site_id: String,
    pub cycle_index: usize,
    /// Block maximum of negated PET (seconds).
    pub z: f64,
    pub n_conflicts: usize,
    pub covariates: CovariateVector,
}

/// Everything that falls into one signal cycle.
#[derive(Debug, Clone)]
pub struct CycleBucket<'a> {
    pub cycle_index: usize,
    pub window: (f64, f64),
    pub events: Vec<ConflictEvent>,
    pub tracks: Vec<&'a Track>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RejectedEvent {
    pub event: ConflictEvent,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct CycleAssignment<'a> {
    pub buckets: Vec<CycleBucket<'a>>,
    pub rejected: Vec<RejectedEvent>,
}

/// Half-open cycle assignment. An event belongs to the cycle of its first
/// arrival; a track belongs to every cycle it overlaps for a positive duration.
pub fn assign_cycles<'a>(
    events: &[ConflictEvent],
    tracks: &'a [Track],
    site: &SiteConfig,
) -> Result<CycleAssignment<'a>> {
    site.validate()?;
    let n = site.n_cycles();
    let mut buckets: Vec<CycleBucket<'a>> = (0..n)
        .map(|c| CycleBucket {
            cycle_index: c,
            window: site.cycle_window(c),
            events: Vec::new(),
            tracks: Vec::new(),
        })
        .collect();
    let mut rejected = Vec::new();
    for e in events {
        let t = e.first_arrival();
        match site.cycle_of(t) {
            Some(c) => buckets[c].events.push(e.clone()),
            None => {
                let reason = if t < site.observation_start {
                    format!("t={t} before observation start {}", site.observation_start)
                } else {
                    format!("t={t} after the last complete cycle")
                };
                warn!("site {}: conflict {}/{} rejected: {reason}", site.site_id, e.ped_id, e.veh_id);
                rejected.push(RejectedEvent {
                    event: e.clone(),
                    reason,
                });
            }
        }
    }
    for tr in tracks {
        for b in buckets.iter_mut() {
            if tr.start_time() < b.window.1 && tr.end_time() > b.window.0 {
                b.tracks.push(tr);
            }
        }
    }
    Ok(CycleAssignment { buckets, rejected })
}

/// `-min(PET)` over the cycle's conflicts; `None` for a conflict-free cycle.
pub fn block_extreme(pets: impl IntoIterator<Item = f64>) -> Option<f64> {
    pets.into_iter().map(|p| -p).reduce(f64::max)
}

/// Sum of PCU weights of the given vehicles; pedestrians contribute nothing.
pub fn pcu_count<'a>(
    tracks: impl IntoIterator<Item = &'a Track>,
    factors: &BTreeMap<String, f64>,
) -> Result<f64> {
    let mut total = 0.0;
    for t in tracks {
        if !t.class().is_vehicle() {
            continue;
        }
        let subtype = t.subtype().unwrap_or_default();
        let w = factors
            .get(subtype)
            .ok_or_else(|| BlocksError::UnknownSubtype {
                track: t.id().to_string(),
                subtype: subtype.to_string(),
            })?;
        total += w;
    }
    Ok(total)
}

/// Covariates of one cycle: the seven retained ones, the full candidate row
/// for correlation screening, and the speeds that had no road users to average.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleCovariates {
    pub vector: CovariateVector,
    pub candidates: [f64; 12],
    pub missing: Vec<&'static str>,
}

pub fn build_covariates(
    bucket: &CycleBucket<'_>,
    site: &SiteConfig,
    metric: &impl DistanceMetric,
) -> Result<CycleCovariates> {
    let of_class = |c: RoadUserClass| bucket.tracks.iter().copied().filter(move |t| t.class() == c);

    let mut involved: HashSet<&str> = HashSet::new();
    for e in &bucket.events {
        involved.insert(e.ped_id.as_str());
        involved.insert(e.veh_id.as_str());
    }
    let conflicting =
        |c: RoadUserClass| of_class(c).filter(|t| involved.contains(t.id()));

    let mut missing = Vec::new();
    let mut speed = |name: &'static str, tracks: Vec<&Track>| -> f64 {
        match space_mean_speed_with(tracks, bucket.window, metric) {
            Ok(v) => v,
            Err(_) => {
                missing.push(name);
                0.0
            }
        }
    };

    let f_mv = pcu_count(of_class(RoadUserClass::Mv), &site.pcu_factors)?;
    let f_nmv = pcu_count(of_class(RoadUserClass::Nmv), &site.pcu_factors)?;
    let f_p = of_class(RoadUserClass::Pedestrian).count() as f64;
    let cf_mv = pcu_count(conflicting(RoadUserClass::Mv), &site.pcu_factors)?;
    let cf_nmv = pcu_count(conflicting(RoadUserClass::Nmv), &site.pcu_factors)?;
    let cf_p = conflicting(RoadUserClass::Pedestrian).count() as f64;

    let s_mv = speed("S_MV", of_class(RoadUserClass::Mv).collect());
    let s_p = speed("S_P", of_class(RoadUserClass::Pedestrian).collect());
    let s_nmv = speed("S_NMV", of_class(RoadUserClass::Nmv).collect());
    let cs_mv = speed("CS_MV", conflicting(RoadUserClass::Mv).collect());
    let cs_nmv = speed("CS_NMV", conflicting(RoadUserClass::Nmv).collect());
    let cs_p = speed("CS_P", conflicting(RoadUserClass::Pedestrian).collect());

    let vector = CovariateVector {
        f_mv,
        f_p,
        s_mv,
        s_p,
        cf_mv,
        cs_mv,
        cs_nmv,
    };
    Ok(CycleCovariates {
        vector,
        candidates: [
            f_mv, f_p, s_mv, s_p, cf_mv, cs_mv, cs_nmv, f_nmv, s_nmv, cf_nmv, cf_p, cs_p,
        ],
        missing,
    })
}

/// Per-cycle PET aggregates, reported for every complete cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PetSummary {
    pub site_id: String,
    pub cycle: usize,
    pub n_conflicts: usize,
    pub pet_mean: Option<f64>,
    pub pet_sd: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SiteBlocks {
    /// Cycles with at least one conflict, ready for fitting.
    pub blocks: Vec<CycleBlock>,
    pub summaries: Vec<PetSummary>,
    /// Candidate covariate rows of every complete cycle that saw any road user.
    pub candidate_rows: Vec<[f64; 12]>,
    pub rejected: Vec<RejectedEvent>,
}

pub fn build_site_blocks(
    site: &SiteConfig,
    tracks: &[Track],
    events: &[ConflictEvent],
    metric: &impl DistanceMetric,
) -> Result<SiteBlocks> {
    let assignment = assign_cycles(events, tracks, site)?;
    let mut blocks = Vec::new();
    let mut summaries = Vec::new();
    let mut candidate_rows = Vec::new();
    for bucket in &assignment.buckets {
        let pets: Vec<f64> = bucket.events.iter().map(|e| e.pet).collect();
        let (mean, sd) = mean_sd(&pets);
        summaries.push(PetSummary {
            site_id: site.site_id.clone(),
            cycle: bucket.cycle_index,
            n_conflicts: pets.len(),
            pet_mean: mean,
            pet_sd: sd,
        });
        if bucket.tracks.is_empty() {
            continue;
        }
        let covs = build_covariates(bucket, site, metric)?;
        candidate_rows.push(covs.candidates);
        if let Some(z) = block_extreme(pets.iter().copied()) {
            blocks.push(CycleBlock {
                site_id: site.site_id.clone(),
                cycle_index: bucket.cycle_index,
                z,
                n_conflicts: pets.len(),
                covariates: covs.vector,
            });
        }
    }
    Ok(SiteBlocks {
        blocks,
        summaries,
        candidate_rows,
        rejected: assignment.rejected,
    })
}

fn mean_sd(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (Some(m), None);
    }
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (Some(m), Some(v.sqrt()))
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationReport {
    pub names: Vec<String>,
    /// Pearson matrix over all candidate columns; `None` where undefined.
    pub matrix: Vec<Vec<Option<f64>>>,
    pub retained: Vec<String>,
    pub dropped: Vec<(String, String)>,
}

/// Greedy multicollinearity screen. Constant columns are dropped first; then,
/// while any pair has `|r| >= threshold`, the column involved in the most such
/// pairs is dropped (ties drop the later column).
pub fn correlation_filter(
    names: &[&str],
    columns: &[Vec<f64>],
    threshold: f64,
) -> Result<CorrelationReport> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(BlocksError::Threshold(threshold));
    }
    let n_rows = columns.first().map_or(0, |c| c.len());
    if n_rows < 3 {
        return Err(BlocksError::TooFewCycles(n_rows));
    }
    let k = columns.len();
    let matrix: Vec<Vec<Option<f64>>> = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| pearson(&columns[i], &columns[j]))
                .collect()
        })
        .collect();

    let mut alive: Vec<bool> = vec![true; k];
    let mut dropped = Vec::new();
    for i in 0..k {
        if matrix[i][i].is_none() {
            warn!("covariate {} is constant; correlation undefined, dropped", names[i]);
            alive[i] = false;
            dropped.push((names[i].to_string(), "constant column".to_string()));
        }
    }
    loop {
        let counts: Vec<usize> = (0..k)
            .map(|i| {
                if !alive[i] {
                    return 0;
                }
                (0..k)
                    .filter(|&j| j != i && alive[j])
                    .filter(|&j| matrix[i][j].is_some_and(|r| r.abs() >= threshold))
                    .count()
            })
            .collect();
        let worst = (0..k).filter(|&i| counts[i] > 0).max_by_key(|&i| (counts[i], i));
        match worst {
            Some(i) => {
                alive[i] = false;
                dropped.push((
                    names[i].to_string(),
                    format!("|r| >= {threshold} with {} remaining covariates", counts[i]),
                ));
            }
            None => break,
        }
    }
    Ok(CorrelationReport {
        names: names.iter().map(|s| s.to_string()).collect(),
        matrix,
        retained: (0..k).filter(|&i| alive[i]).map(|i| names[i].to_string()).collect(),
        dropped,
    })
}

/// Divides each covariate by its sample mean so every used covariate has mean 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateScaling {
    pub means: CovariateVector,
}

impl CovariateScaling {
    pub fn fit(blocks: &[CycleBlock]) -> Self {
        let n = blocks.len().max(1) as f64;
        CovariateScaling {
            means: CovariateVector::from_fn(|c| {
                blocks.iter().map(|b| b.covariates.get(c)).sum::<f64>() / n
            }),
        }
    }

    pub fn identity() -> Self {
        CovariateScaling {
            means: CovariateVector::from_fn(|_| 1.0),
        }
    }

    pub fn check(&self, used: &[Covariate]) -> Result<()> {
        match used.iter().find(|&&c| !(self.means.get(c) > 0.0)) {
            Some(&c) => Err(BlocksError::Rescale(c)),
            None => Ok(()),
        }
    }

    /// Columns with a non-positive mean are passed through unchanged.
    pub fn apply(&self, v: &CovariateVector) -> CovariateVector {
        CovariateVector::from_fn(|c| {
            let m = self.means.get(c);
            if m > 0.0 {
                v.get(c) / m
            } else {
                v.get(c)
            }
        })
    }

    pub fn apply_blocks(&self, blocks: &[CycleBlock]) -> Vec<CycleBlock> {
        blocks
            .iter()
            .map(|b| CycleBlock {
                covariates: self.apply(&b.covariates),
                ..b.clone()
            })
            .collect()
    }
}

pub const BLOCK_HEADER: [&str; 11] = [
    "site_id", "cycle", "z", "n_conflicts", "f_mv", "f_p", "s_mv", "s_p", "cf_mv", "cs_mv", "cs_nmv",
];

#[derive(Debug, Serialize, Deserialize)]
struct BlockRow {
    site_id: String,
    cycle: usize,
    z: f64,
    n_conflicts: usize,
    f_mv: f64,
    f_p: f64,
    s_mv: f64,
    s_p: f64,
    cf_mv: f64,
    cs_mv: f64,
    cs_nmv: f64,
}

pub fn write_blocks_csv<W: Write>(writer: W, blocks: &[CycleBlock]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for b in blocks {
        let c = &b.covariates;
        w.serialize(BlockRow {
            site_id: b.site_id.clone(),
            cycle: b.cycle_index,
            z: b.z,
            n_conflicts: b.n_conflicts,
            f_mv: c.f_mv,
            f_p: c.f_p,
            s_mv: c.s_mv,
            s_p: c.s_p,
            cf_mv: c.cf_mv,
            cs_mv: c.cs_mv,
            cs_nmv: c.cs_nmv,
        })
        .map_err(csv_err)?;
    }
    if blocks.is_empty() {
        w.write_record(BLOCK_HEADER).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_blocks_csv<R: Read>(reader: R) -> Result<Vec<CycleBlock>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for rec in rdr.deserialize::<BlockRow>() {
        let r = rec.map_err(|e| BlocksError::Csv {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let covariates = CovariateVector {
            f_mv: r.f_mv,
            f_p: r.f_p,
            s_mv: r.s_mv,
            s_p: r.s_p,
            cf_mv: r.cf_mv,
            cs_mv: r.cs_mv,
            cs_nmv: r.cs_nmv,
        };
        if !covariates.is_valid() || !r.z.is_finite() {
            return Err(BlocksError::Csv {
                line: out.len() as u64 + 2,
                message: "covariates must be finite and non-negative, z finite".into(),
            });
        }
        out.push(CycleBlock {
            site_id: r.site_id,
            cycle_index: r.cycle,
            z: r.z,
            n_conflicts: r.n_conflicts,
            covariates,
        });
    }
    Ok(out)
}

pub fn write_correlation_csv<W: Write>(writer: W, report: &CorrelationReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![String::new()];
    header.extend(report.names.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for (name, row) in report.names.iter().zip(&report.matrix) {
        let mut rec = vec![name.clone()];
        rec.extend(row.iter().map(|r| r.map(|v| v.to_string()).unwrap_or_default()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_pet_summary_csv<W: Write>(writer: W, rows: &[PetSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["site_id", "cycle", "n_conflicts", "pet_mean", "pet_sd"])
        .map_err(csv_err)?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.site_id.clone(),
            r.cycle.to_string(),
            r.n_conflicts.to_string(),
            opt(r.pet_mean),
            opt(r.pet_sd),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> BlocksError {
    BlocksError::Io(std::io::Error::other(e))
}

/// Groups blocks by site id, preserving first-seen site order.
pub fn site_index(blocks: &[CycleBlock]) -> (Vec<String>, Vec<usize>) {
    let mut order: Vec<String> = Vec::new();
    let mut map: HashMap<&str, usize> = HashMap::new();
    let idx = blocks
        .iter()
        .map(|b| {
            *map.entry(b.site_id.as_str()).or_insert_with(|| {
                order.push(b.site_id.clone());
                order.len() - 1
            })
        })
        .collect();
    (order, idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{Euclidean, Sample};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ev(ped: &str, veh: &str, t: f64, pet: f64) -> ConflictEvent {
        ConflictEvent {
            ped_id: ped.into(),
            veh_id: veh.into(),
            veh_class: RoadUserClass::Mv,
            x: 0.0,
            y: 0.0,
            t_p: t,
            t_v: t + pet,
            pet,
        }
    }

    fn line(id: &str, class: RoadUserClass, t0: f64, t1: f64, speed: f64) -> Track {
        Track::new(
            id,
            class,
            vec![Sample::new(t0, 0.0, 0.0), Sample::new(t1, speed * (t1 - t0), 0.0)],
        )
        .unwrap()
    }

    #[test]
    fn cycle_boundaries_are_half_open() {
        let site = SiteConfig::new("s", 300.0, 900.0);
        let events = vec![ev("a", "b", 299.9, 1.0), ev("a", "b", 300.0, 1.0)];
        let asg = assign_cycles(&events, &[], &site).unwrap();
        assert_eq!(asg.buckets[0].events.len(), 1);
        assert_eq!(asg.buckets[1].events.len(), 1);
    }

    #[test]
    fn rejects_events_outside_window() {
        let mut site = SiteConfig::new("s", 300.0, 900.0);
        site.observation_start = 100.0;
        let events = vec![ev("a", "b", 50.0, 1.0), ev("a", "b", 1000.5, 1.0), ev("a", "b", 150.0, 1.0)];
        let asg = assign_cycles(&events, &[], &site).unwrap();
        assert_eq!(asg.rejected.len(), 2);
        assert_eq!(asg.buckets[0].events.len(), 1);
    }

    #[test]
    fn table_cycle_counts() {
        // 6.67 min is 400 s rounded; two hours of observation
        assert_eq!(SiteConfig::new("abul", 400.0, 7200.0).n_cycles(), 18);
        assert_eq!(SiteConfig::new("bonolota", 200.0, 7200.0).n_cycles(), 36);
        assert_eq!(SiteConfig::new("bangla", 225.0, 7200.0).n_cycles(), 32);
        // partial trailing cycle dropped
        assert_eq!(SiteConfig::new("x", 300.0, 1000.0).n_cycles(), 3);
    }

    #[test]
    fn bucket_counts_match_histogram() {
        let site = SiteConfig::new("s", 97.0, 5000.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let events: Vec<_> = (0..1000)
            .map(|_| ev("p", "v", rng.gen_range(0.0..5000.0), 1.0))
            .collect();
        let asg = assign_cycles(&events, &[], &site).unwrap();
        let mut hist = vec![0usize; site.n_cycles()];
        let mut dropped = 0;
        for e in &events {
            let k = (e.t_p / 97.0).floor() as usize;
            if k < hist.len() {
                hist[k] += 1;
            } else {
                dropped += 1;
            }
        }
        let got: Vec<usize> = asg.buckets.iter().map(|b| b.events.len()).collect();
        assert_eq!(got, hist);
        assert_eq!(asg.rejected.len(), dropped);
    }

    #[test]
    fn block_extremes() {
        assert_eq!(block_extreme([2.4, 1.1, 3.0]), Some(-1.1));
        assert_eq!(block_extreme([0.5]), Some(-0.5));
        assert_eq!(block_extreme(std::iter::empty()), None);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let pets: Vec<f64> = (0..rng.gen_range(1..40)).map(|_| rng.gen_range(0.0..5.0)).collect();
            let mut min = f64::INFINITY;
            for &p in &pets {
                if p < min {
                    min = p;
                }
            }
            assert_eq!(block_extreme(pets.iter().copied()), Some(-min));
        }
    }

    #[test]
    fn block_extreme_monotone() {
        let s = [2.0, 3.5, 1.7];
        let base = block_extreme(s).unwrap();
        for p in [0.5, 1.7, 2.0, 4.0] {
            let with = block_extreme(s.iter().copied().chain([p])).unwrap();
            assert_eq!(with > base, -p > base);
            assert!(with >= base);
        }
    }

    #[test]
    fn pcu_examples() {
        let f = default_pcu_factors();
        let cars: Vec<Track> = (0..3)
            .map(|i| line(&format!("c{i}"), RoadUserClass::Mv, 0.0, 1.0, 1.0))
            .collect();
        assert_eq!(pcu_count(&cars, &f).unwrap(), 3.0);

        let mut factors = BTreeMap::new();
        factors.insert("car".to_string(), 1.0);
        factors.insert("bus".to_string(), 2.5);
        let mut mix = vec![cars[0].clone(), cars[1].clone()];
        mix.push(line("b1", RoadUserClass::Mv, 0.0, 1.0, 1.0).with_subtype("bus"));
        mix.push(line("b2", RoadUserClass::Mv, 0.0, 1.0, 1.0).with_subtype("bus"));
        assert_eq!(pcu_count(&mix, &factors).unwrap(), 7.0);
        // linear over disjoint sets
        let (a, b) = mix.split_at(1);
        assert_eq!(
            pcu_count(a, &factors).unwrap() + pcu_count(b, &factors).unwrap(),
            7.0
        );
        assert_eq!(pcu_count(&[], &factors).unwrap(), 0.0);

        let odd = vec![line("x", RoadUserClass::Mv, 0.0, 1.0, 1.0).with_subtype("tram")];
        assert!(matches!(
            pcu_count(&odd, &factors),
            Err(BlocksError::UnknownSubtype { .. })
        ));
    }

    #[test]
    fn covariate_fixture() {
        let site = SiteConfig::new("s", 100.0, 100.0);
        let mut tracks = vec![
            line("m1", RoadUserClass::Mv, 10.0, 20.0, 3.0),
            line("m2", RoadUserClass::Mv, 30.0, 40.0, 5.0),
        ];
        for i in 0..4 {
            tracks.push(line(&format!("p{i}"), RoadUserClass::Pedestrian, 5.0 + i as f64, 50.0, 1.0));
        }
        let events = vec![ev("p0", "m2", 35.0, 1.2)];
        let asg = assign_cycles(&events, &tracks, &site).unwrap();
        let c = build_covariates(&asg.buckets[0], &site, &Euclidean).unwrap();
        let v = c.vector;
        assert_eq!(v.f_mv, 2.0);
        assert!((v.s_mv - 4.0).abs() < 1e-12);
        assert_eq!(v.f_p, 4.0);
        assert!((v.s_p - 1.0).abs() < 1e-12);
        assert_eq!(v.cf_mv, 1.0);
        assert!((v.cs_mv - 5.0).abs() < 1e-12);
        assert_eq!(v.cs_nmv, 0.0);
        assert!(c.missing.contains(&"CS_NMV"));

        let asg = assign_cycles(&[], &tracks, &site).unwrap();
        let c = build_covariates(&asg.buckets[0], &site, &Euclidean).unwrap();
        assert_eq!((c.vector.cf_mv, c.vector.cs_mv, c.vector.cs_nmv), (0.0, 0.0, 0.0));
    }

    #[test]
    fn pedestrian_counts_conserved() {
        let site = SiteConfig::new("s", 60.0, 600.0);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let tracks: Vec<Track> = (0..40)
            .map(|i| {
                let t0 = rng.gen_range(0.0..550.0);
                let d = rng.gen_range(1.0..150.0);
                line(&format!("p{i}"), RoadUserClass::Pedestrian, t0, t0 + d, 1.3)
            })
            .collect();
        let asg = assign_cycles(&[], &tracks, &site).unwrap();
        let per_cycle: usize = asg
            .buckets
            .iter()
            .map(|b| build_covariates(b, &site, &Euclidean).unwrap().vector.f_p as usize)
            .sum();
        let weighted: usize = tracks
            .iter()
            .map(|t| {
                (0..site.n_cycles())
                    .filter(|&c| {
                        let (a, b) = site.cycle_window(c);
                        t.start_time() < b && t.end_time() > a
                    })
                    .count()
            })
            .sum();
        assert_eq!(per_cycle, weighted);
    }

    fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
        // textbook computational formula
        let n = x.len() as f64;
        let sx: f64 = x.iter().sum();
        let sy: f64 = y.iter().sum();
        let sxx: f64 = x.iter().map(|a| a * a).sum();
        let syy: f64 = y.iter().map(|a| a * a).sum();
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
        (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt())
    }

    #[test]
    fn correlation_identical_columns() {
        let a = vec![1.0, 2.0, 4.0, 3.0, 7.0];
        let r = correlation_filter(&["a", "b"], &[a.clone(), a], 0.99).unwrap();
        assert_eq!(r.retained, vec!["a"]);
        assert_eq!(r.dropped[0].0, "b");
    }

    #[test]
    fn correlation_independent_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let cols: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..200).map(|_| rng.gen::<f64>()).collect())
            .collect();
        let names = ["a", "b", "c", "d", "e"];
        let r = correlation_filter(&names, &cols, 0.7).unwrap();
        assert_eq!(r.retained.len(), 5);
        for i in 0..5 {
            for j in 0..5 {
                let o = pearson_oracle(&cols[i], &cols[j]);
                assert!((r.matrix[i][j].unwrap() - o).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn correlation_constant_and_errors() {
        let r = correlation_filter(&["a", "k"], &[vec![1.0, 2.0, 3.0], vec![4.0; 3]], 0.7).unwrap();
        assert_eq!(r.retained, vec!["a"]);
        assert_eq!(r.dropped[0].1, "constant column");
        assert!(correlation_filter(&["a"], &[vec![1.0, 2.0]], 0.7).is_err());
        assert!(correlation_filter(&["a"], &[vec![1.0, 2.0, 3.0]], 1.0).is_err());
    }

    #[test]
    fn correlation_reproduces_collinear_drop_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 120;
        let base: Vec<Vec<f64>> = (0..7)
            .map(|_| (0..n).map(|_| rng.gen_range(1.0..10.0)).collect())
            .collect();
        let noisy = |src: &Vec<f64>, rng: &mut ChaCha8Rng| -> Vec<f64> {
            src.iter().map(|v| 0.8 * v + 0.5 + rng.gen_range(-0.2..0.2)).collect()
        };
        let mut cols = base.clone();
        // NMV flow ~ MV flow, NMV speed ~ MV speed, NMV conflicting flow ~ MV
        // conflicting flow, pedestrian conflicting flow ~ pedestrian flow,
        // pedestrian conflicting speed ~ pedestrian speed
        for src in [0usize, 2, 4, 1, 3] {
            let c = noisy(&base[src], &mut rng);
            cols.push(c);
        }
        let r = correlation_filter(&CANDIDATE_NAMES, &cols, 0.7).unwrap();
        assert_eq!(r.retained, CANDIDATE_NAMES[..7].to_vec());
        let mut dropped: Vec<&str> = r.dropped.iter().map(|d| d.0.as_str()).collect();
        dropped.sort();
        assert_eq!(dropped, vec!["CF_NMV", "CF_P", "CS_P", "F_NMV", "S_NMV"]);
    }

    #[test]
    fn correlation_affine_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cols: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..50).map(|_| rng.gen::<f64>()).collect())
            .collect();
        let mut scaled = cols.clone();
        scaled[2] = scaled[2].iter().map(|v| 3.5 * v - 11.0).collect();
        let a = correlation_filter(&["a", "b", "c", "d"], &cols, 0.5).unwrap();
        let b = correlation_filter(&["a", "b", "c", "d"], &scaled, 0.5).unwrap();
        assert_eq!(a.retained, b.retained);
        for i in 0..4 {
            for j in 0..4 {
                assert!((a.matrix[i][j].unwrap() - b.matrix[i][j].unwrap()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn scaling_to_unit_mean() {
        let mk = |x: f64| CycleBlock {
            site_id: "s".into(),
            cycle_index: 0,
            z: -1.0,
            n_conflicts: 1,
            covariates: CovariateVector::from_fn(|c| if c == Covariate::CsNmv { 0.0 } else { x }),
        };
        let blocks = vec![mk(1.0), mk(3.0)];
        let s = CovariateScaling::fit(&blocks);
        let scaled = s.apply_blocks(&blocks);
        assert_eq!(scaled[0].covariates.f_mv, 0.5);
        assert_eq!(scaled[1].covariates.s_p, 1.5);
        assert!(s.check(&[Covariate::FMv]).is_ok());
        assert!(matches!(s.check(&[Covariate::CsNmv]), Err(BlocksError::Rescale(_))));
    }

    #[test]
    fn blocks_csv_round_trip() {
        let b = CycleBlock {
            site_id: "paltan".into(),
            cycle_index: 3,
            z: -1.25,
            n_conflicts: 7,
            covariates: CovariateVector {
                f_mv: 915.84,
                f_p: 198.0,
                s_mv: 6.61,
                s_p: 1.96,
                cf_mv: 107.39,
                cs_mv: 8.56,
                cs_nmv: 3.26,
            },
        };
        let mut buf = Vec::new();
        write_blocks_csv(&mut buf, std::slice::from_ref(&b)).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("site_id,cycle,z,n_conflicts,f_mv,f_p,s_mv,s_p,cf_mv,cs_mv,cs_nmv\n"));
        assert_eq!(read_blocks_csv(buf.as_slice()).unwrap(), vec![b]);
        let mut empty = Vec::new();
        write_blocks_csv(&mut empty, &[]).unwrap();
        assert_eq!(String::from_utf8(empty).unwrap().lines().count(), 1);
    }
}
