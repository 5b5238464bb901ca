use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{Coordinates, RunConfig};
use super::manifest::{Fingerprint, Manifest};
use super::CliError;
use crate::blocks::{
    build_site_blocks, correlation_filter, read_blocks_csv, write_blocks_csv,
    write_correlation_csv, write_pet_summary_csv, CorrelationReport, Covariate, CycleBlock,
    PetSummary, SiteBlocks, CANDIDATE_NAMES,
};
use crate::conflict::{conflict_sweep, read_conflicts_csv, write_conflicts_csv, ConflictEvent};
use crate::inference::{fit_all, write_trace_csv, FitReport, ModelName};
use crate::risk::{
    assess_model, benchmark_against_observed, cycle_params, write_density_csv, write_risk_csv,
    RiskSummary,
};
use crate::synth::{
    generate_blocks, generate_crossing_scenario, generate_cycle_scenario, write_expected_csv,
    GeneratedScenario, Scenario,
};
use crate::trajectory::{read_tracks_csv, write_tracks_csv, Euclidean, PerspectiveMetric, Track};

pub const BLOCKS_FILE: &str = "blocks.csv";
pub const COVARIATES_FILE: &str = "covariates.json";
pub const FIT_FILE: &str = "fit_report.json";
pub const RISK_SUMMARY_FILE: &str = "risk_summary.json";

/// Pipeline stages in execution order.
pub const STAGES: [&str; 4] = ["conflicts", "blocks", "fit", "risk"];

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn open_input(path: &Path, hint: &str) -> Result<File, CliError> {
    File::open(path).map_err(|e| CliError::Data(format!("{}: {e}{hint}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Internal(format!("serializing {}: {e}", path.display())))?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, hint: &str) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("{}: {e}{hint}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_tracks(path: &Path) -> Result<Vec<Track>, CliError> {
    read_tracks_csv(open_input(path, "")?)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn conflicts_path(out: &Path, site: &str) -> PathBuf {
    out.join("conflicts").join(format!("{site}.csv"))
}

fn blocks_path(out: &Path) -> PathBuf {
    out.join(BLOCKS_FILE)
}

/// Stage input fingerprint; changes whenever anything the stage reads changes.
/// Files enter by name and content only, so a moved output tree stays fresh.
pub fn stage_fingerprint(stage: &str, cfg: &RunConfig, out: &Path) -> Result<String, CliError> {
    let mut f = Fingerprint::new(stage);
    match stage {
        "conflicts" => {
            f.add_json("sites", &cfg.site_configs()).add_json("pet", &cfg.pet_threshold);
            for s in &cfg.sites {
                f.add_file(&s.trajectories)?;
            }
        }
        "blocks" => {
            f.add_json("sites", &cfg.site_configs())
                .add_json("coordinates", &cfg.coordinates)
                .add_json("covariates", &cfg.covariates)
                .add_json("corr", &cfg.correlation_threshold);
            for s in &cfg.sites {
                f.add_file(&s.trajectories)?;
                f.add_file(&conflicts_path(out, &s.site_id))?;
            }
        }
        "fit" => {
            f.add_json("settings", &cfg.fit_settings())
                .add_json("models", &cfg.models)
                .add_json("covariates", &cfg.covariates)
                .add_json("re", &cfg.random_effects)
                .add_json("traces", &cfg.export_traces);
            f.add_file(&blocks_path(out))?;
            let cov = out.join(COVARIATES_FILE);
            if cov.exists() {
                f.add_file(&cov)?;
            }
        }
        "risk" => {
            f.add_json("settings", &cfg.risk_settings())
                .add_json("sites", &cfg.site_configs())
                .add_json("observed", &cfg.observed_crashes);
            f.add_file(&out.join(FIT_FILE))?;
            f.add_file(&blocks_path(out))?;
        }
        other => return Err(CliError::Internal(format!("unknown stage {other}"))),
    }
    Ok(f.finish())
}

/// Detects conflicts per site and writes `conflicts/<site>.csv`.
pub fn cmd_conflicts(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut outputs = Vec::new();
    for s in &cfg.sites {
        let tracks = load_tracks(&s.trajectories)?;
        let events = conflict_sweep(&tracks, cfg.pet_threshold);
        log::info!("site {}: {} tracks, {} conflicts", s.site_id, tracks.len(), events.len());
        let path = conflicts_path(out, &s.site_id);
        write_conflicts_csv(create(&path)?, &events)
            .map_err(|e| CliError::Internal(format!("{}: {e}", path.display())))?;
        outputs.push(path);
    }
    Ok(outputs)
}

/// Covariate selection written by the blocks stage and read by the fit stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSelection {
    pub configured: Vec<Covariate>,
    /// Configured covariates that survived the correlation screen.
    pub used: Vec<Covariate>,
    pub dropped: Vec<(String, String)>,
    pub note: Option<String>,
}

fn site_blocks(cfg: &RunConfig, out: &Path) -> Result<Vec<SiteBlocks>, CliError> {
    let mut all = Vec::new();
    for s in &cfg.sites {
        let site = cfg.site_config(s);
        let tracks = load_tracks(&s.trajectories)?;
        let cpath = conflicts_path(out, &s.site_id);
        let events: Vec<ConflictEvent> =
            read_conflicts_csv(open_input(&cpath, " (run the conflicts stage first)")?)
                .map_err(|e| CliError::Data(format!("{}: {e}", cpath.display())))?;
        let built = match &cfg.coordinates {
            Coordinates::Field => build_site_blocks(&site, &tracks, &events, &Euclidean),
            Coordinates::Image {
                perspective,
                camera,
            } => {
                let metric = PerspectiveMetric {
                    model: perspective.clone(),
                    camera: (camera[0], camera[1]),
                };
                build_site_blocks(&site, &tracks, &events, &metric)
            }
        }
        .map_err(|e| CliError::Data(format!("site {}: {e}", s.site_id)))?;
        if !built.rejected.is_empty() {
            log::warn!(
                "site {}: {} conflicts outside the observation window",
                s.site_id,
                built.rejected.len()
            );
        }
        all.push(built);
    }
    Ok(all)
}

/// Builds cycle blocks, PET summaries and the covariate correlation screen.
pub fn cmd_blocks(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let built = site_blocks(cfg, out)?;
    let blocks: Vec<CycleBlock> = built.iter().flat_map(|b| b.blocks.clone()).collect();
    let summaries: Vec<PetSummary> = built.iter().flat_map(|b| b.summaries.clone()).collect();
    let rows: Vec<[f64; 12]> = built.iter().flat_map(|b| b.candidate_rows.clone()).collect();
    let columns: Vec<Vec<f64>> = (0..12).map(|k| rows.iter().map(|r| r[k]).collect()).collect();

    let mut outputs = Vec::new();
    let path = blocks_path(out);
    write_blocks_csv(create(&path)?, &blocks).map_err(|e| CliError::Internal(e.to_string()))?;
    outputs.push(path);
    let path = out.join("pet_summary.csv");
    write_pet_summary_csv(create(&path)?, &summaries)
        .map_err(|e| CliError::Internal(e.to_string()))?;
    outputs.push(path);

    let selection = match correlation_filter(&CANDIDATE_NAMES, &columns, cfg.correlation_threshold)
    {
        Ok(report) => {
            let path = out.join("correlation.csv");
            write_correlation_csv(create(&path)?, &report)
                .map_err(|e| CliError::Internal(e.to_string()))?;
            outputs.push(path);
            select_covariates(&cfg.covariates, &report)
        }
        Err(e) => {
            log::warn!("correlation screen skipped: {e}");
            CovariateSelection {
                configured: cfg.covariates.clone(),
                used: cfg.covariates.clone(),
                dropped: Vec::new(),
                note: Some(format!("correlation screen skipped: {e}")),
            }
        }
    };
    let path = out.join(COVARIATES_FILE);
    write_json(&path, &selection)?;
    outputs.push(path);
    log::info!("{} blocks, covariates {:?}", blocks.len(), selection.used);
    Ok(outputs)
}

fn select_covariates(configured: &[Covariate], report: &CorrelationReport) -> CovariateSelection {
    CovariateSelection {
        configured: configured.to_vec(),
        used: configured
            .iter()
            .copied()
            .filter(|c| report.retained.iter().any(|r| r == c.name()))
            .collect(),
        dropped: report.dropped.clone(),
        note: None,
    }
}

fn load_blocks(out: &Path) -> Result<Vec<CycleBlock>, CliError> {
    let path = blocks_path(out);
    read_blocks_csv(open_input(&path, " (run the blocks stage first)")?)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Fits every configured model and writes `fit_report.json` (and traces when enabled).
pub fn cmd_fit(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let blocks = load_blocks(out)?;
    if blocks.len() < 2 {
        return Err(CliError::Data(format!(
            "{} blocks available; at least 2 are needed to fit",
            blocks.len()
        )));
    }
    let cov_path = out.join(COVARIATES_FILE);
    let covariates = if cov_path.exists() {
        read_json::<CovariateSelection>(&cov_path, "")?.used
    } else {
        cfg.covariates.clone()
    };
    let (report, posts) = fit_all(
        &cfg.models,
        &covariates,
        &blocks,
        &cfg.fit_settings(),
        cfg.random_effects,
    );
    let mut outputs = Vec::new();
    if cfg.export_traces {
        for post in posts.iter().flatten() {
            for (c, chain) in post.chains.iter().enumerate() {
                let path = out.join("traces").join(format!("{}_chain{c}.csv", post.spec.name));
                write_trace_csv(create(&path)?, chain, &post.layout.names)
                    .map_err(|e| CliError::Internal(e.to_string()))?;
                outputs.push(path);
            }
        }
    }
    for m in &report.models {
        match (&m.failure, m.dic_value()) {
            (Some(f), _) => log::warn!("{}: failed: {f}", m.name),
            (None, d) => log::info!("{}: converged={} DIC={d:?}", m.name, m.converged),
        }
    }
    let path = out.join(FIT_FILE);
    write_json(&path, &report)?;
    outputs.push(path);
    Ok(outputs)
}

/// Per-cycle risk, expected crash counts and the observed-crash comparison.
pub fn cmd_risk(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let report: FitReport = read_json(&out.join(FIT_FILE), " (run the fit stage first)")?;
    let blocks = load_blocks(out)?;
    let sites = cfg.site_configs();
    let settings = cfg.risk_settings();
    let mut outputs = Vec::new();
    let mut reports = Vec::new();
    let mut by_model = BTreeMap::new();
    let mut skipped = BTreeMap::new();
    for m in &report.models {
        if let Some(f) = &m.failure {
            skipped.insert(m.name, f.clone());
            continue;
        }
        let risk = match assess_model(m, &blocks, &sites, &settings) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("{}: risk not computed: {e}", m.name);
                skipped.insert(m.name, e.to_string());
                continue;
            }
        };
        let path = out.join(format!("risk_{}.csv", m.name));
        write_risk_csv(create(&path)?, &risk.rows).map_err(|e| CliError::Internal(e.to_string()))?;
        outputs.push(path);
        let params = cycle_params(m, &blocks).map_err(|e| CliError::Internal(e.to_string()))?;
        let path = out.join(format!("density_{}.csv", m.name));
        write_density_csv(create(&path)?, &params, 5, 200)
            .map_err(|e| CliError::Internal(e.to_string()))?;
        outputs.push(path);
        log::info!("{}: N = {} (raw {})", m.name, risk.n_expected, risk.n_raw);
        by_model.insert(m.name, risk.sites.clone());
        reports.push(risk);
    }
    let summary = RiskSummary {
        settings,
        selected: report.selected,
        models: by_model,
        comparison: benchmark_against_observed(&reports, cfg.observed_crashes),
        skipped,
    };
    let path = out.join(RISK_SUMMARY_FILE);
    write_json(&path, &summary)?;
    outputs.push(path);
    Ok(outputs)
}

pub fn run_stage(stage: &str, cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    match stage {
        "conflicts" => cmd_conflicts(cfg, out),
        "blocks" => cmd_blocks(cfg, out),
        "fit" => cmd_fit(cfg, out),
        "risk" => cmd_risk(cfg, out),
        other => Err(CliError::Internal(format!("unknown stage {other}"))),
    }
}

/// Runs one stage and records it in the manifest. With `resume`, a stage
/// whose inputs and outputs match the manifest is skipped.
pub fn execute_stage(
    stage: &str,
    cfg: &RunConfig,
    out: &Path,
    resume: bool,
) -> Result<bool, CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let mut manifest = Manifest::load(out);
    let inputs = stage_fingerprint(stage, cfg, out)?;
    if resume && manifest.is_fresh(stage, &inputs, out) {
        log::info!("{stage}: up to date");
        return Ok(false);
    }
    let outputs = run_stage(stage, cfg, out)?;
    manifest.record(stage, inputs, out, &outputs)?;
    manifest.save(out)?;
    Ok(true)
}

/// Every stage in order, skipping those already up to date.
pub fn cmd_pipeline(cfg: &RunConfig, out: &Path) -> Result<Vec<&'static str>, CliError> {
    let mut ran = Vec::new();
    for stage in STAGES {
        if execute_stage(stage, cfg, out, true)? {
            ran.push(stage);
        }
    }
    Ok(ran)
}

/// Writes the scenario's synthetic data into `out`.
pub fn cmd_simulate(scenario: &Scenario, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let data_err = |e: crate::synth::SynthError| CliError::Config(format!("scenario: {e}"));
    let write_generated = |g: GeneratedScenario| -> Result<Vec<PathBuf>, CliError> {
        let tpath = out.join("trajectories.csv");
        write_tracks_csv(create(&tpath)?, &g.tracks).map_err(|e| CliError::io(&tpath, e))?;
        let epath = out.join("expected_pet.csv");
        write_expected_csv(create(&epath)?, &g.expected).map_err(|e| CliError::io(&epath, e))?;
        Ok(vec![tpath, epath])
    };
    match scenario {
        Scenario::Blocks(s) => {
            let blocks = generate_blocks(s).map_err(data_err)?;
            let path = blocks_path(out);
            write_blocks_csv(create(&path)?, &blocks)
                .map_err(|e| CliError::Internal(e.to_string()))?;
            Ok(vec![path])
        }
        Scenario::Crossing(s) => write_generated(generate_crossing_scenario(s).map_err(data_err)?),
        Scenario::Cycles(s) => {
            let mut paths = write_generated(generate_cycle_scenario(s).map_err(data_err)?)?;
            let mut cfg = RunConfig::with_sites(vec![super::config::SiteInput {
                site_id: s.site.site_id.clone(),
                cycle_length: s.site.cycle_length,
                observation_start: s.site.observation_start,
                observation_duration: s.site.observation_duration,
                trajectories: PathBuf::from("trajectories.csv"),
                pcu_factors: None,
            }]);
            cfg.pcu_factors = s.site.pcu_factors.clone();
            cfg.models = vec![ModelName::M1];
            let path = out.join("config.json");
            std::fs::write(&path, cfg.to_json() + "\n").map_err(|e| CliError::io(&path, e))?;
            paths.push(path);
            Ok(paths)
        }
    }
}
