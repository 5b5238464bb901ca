use std::path::{Path, PathBuf};

use pedrisk::cli::{cmd_pipeline, run, RunConfig, FIT_FILE, RISK_SUMMARY_FILE};
use pedrisk::conflict::CONFLICT_HEADER;
use pedrisk::inference::FitReport;

fn pedrisk(args: &[&str]) -> i32 {
    let mut full = vec!["pedrisk"];
    full.extend_from_slice(args);
    run(full)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Simulates a 120-cycle site and returns its directory with a fast config.
fn scenario(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    let scen = dir.join("scenario.json");
    std::fs::write(
        &scen,
        r#"{
  "kind": "cycles",
  "site": {"site_id": "s1", "cycle_length": 60, "observation_duration": 7200},
  "truth": {
    "mu": {"kind": "Stationary", "intercept": -2.3},
    "phi": {"kind": "Stationary", "intercept": -0.69},
    "xi": {"kind": "Stationary", "intercept": -0.41}
  },
  "seed": 5
}"#,
    )
    .unwrap();
    assert_eq!(pedrisk(&["simulate", "--config", s(&scen), "--out", s(&data)]), 0);
    let cfg_path = data.join("config.json");
    let mut cfg: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&cfg_path).unwrap()).unwrap();
    cfg["iterations"] = 3000.into();
    cfg["burn_in"] = 1000.into();
    std::fs::write(&cfg_path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    cfg_path
}

fn write_site(dir: &Path, csv: &str) -> PathBuf {
    std::fs::write(dir.join("tracks.csv"), csv).unwrap();
    let cfg = dir.join("config.json");
    std::fs::write(
        &cfg,
        r#"{"sites": [{"site_id": "s1", "cycle_length": 60, "observation_duration": 600, "trajectories": "tracks.csv"}]}"#,
    )
    .unwrap();
    cfg
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(pedrisk(&[]), 1);
    assert_eq!(pedrisk(&["--help"]), 0);
    assert_eq!(pedrisk(&["frobnicate"]), 1);
    assert_eq!(pedrisk(&["fit"]), 1);
    assert_eq!(pedrisk(&["fit", "--config", "/nonexistent/config.json"]), 1);
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_site(dir.path(), "track_id,class,t,x,y\n");
    assert_eq!(pedrisk(&["fit", "--config", s(&cfg), "--models", "M9"]), 1);
    assert_eq!(pedrisk(&["fit", "--config", s(&cfg), "--jobs", "0"]), 1);
}

#[test]
fn empty_trajectories_give_header_only_conflicts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_site(dir.path(), "track_id,class,t,x,y\n");
    let out = dir.path().join("out");
    assert_eq!(pedrisk(&["conflicts", "--config", s(&cfg), "--out", s(&out)]), 0);
    let text = std::fs::read_to_string(out.join("conflicts").join("s1.csv")).unwrap();
    assert_eq!(text, CONFLICT_HEADER.join(",") + "\n");
}

#[test]
fn duplicate_track_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_site(
        dir.path(),
        "track_id,class,t,x,y\np1,PED,0,0,0\np1,PED,1,0,1\nv1,MV,0,1,1\nv1,MV,1,2,1\np1,PED,2,0,2\n",
    );
    let out = dir.path().join("out");
    assert_eq!(pedrisk(&["conflicts", "--config", s(&cfg), "--out", s(&out)]), 2);
}

#[test]
fn missing_trajectory_file_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_site(dir.path(), "");
    std::fs::remove_file(dir.path().join("tracks.csv")).unwrap();
    let out = dir.path().join("out");
    assert_eq!(pedrisk(&["conflicts", "--config", s(&cfg), "--out", s(&out)]), 2);
}

#[test]
fn risk_without_fit_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(dir.path());
    let out = dir.path().join("out");
    assert_eq!(pedrisk(&["risk", "--config", s(&cfg), "--out", s(&out)]), 2);
    assert!(!out.join(RISK_SUMMARY_FILE).exists());
}

#[test]
fn dry_run_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(dir.path());
    let out = dir.path().join("out");
    assert_eq!(pedrisk(&["pipeline", "--config", s(&cfg), "--out", s(&out), "--dry-run"]), 0);
    assert!(!out.exists());
}

#[test]
fn pipeline_is_reproducible_and_respects_model_list() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = scenario(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        assert_eq!(
            pedrisk(&["pipeline", "--config", s(&cfg), "--out", s(out), "--models", "M1,M2a", "--traces"]),
            0
        );
    }
    for f in [FIT_FILE, RISK_SUMMARY_FILE, "blocks.csv", "risk_M1.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let report: FitReport = serde_json::from_str(&std::fs::read_to_string(a.join(FIT_FILE)).unwrap()).unwrap();
    let names: Vec<String> = report.models.iter().map(|m| m.name.to_string()).collect();
    assert_eq!(names, ["M1", "M2a"]);
    assert!(a.join("traces").join("M1_chain0.csv").exists());

    let single = dir.path().join("single");
    assert_eq!(pedrisk(&["pipeline", "--config", s(&cfg), "--out", s(&single), "--models", "M1"]), 0);
    let report: FitReport =
        serde_json::from_str(&std::fs::read_to_string(single.join(FIT_FILE)).unwrap()).unwrap();
    assert_eq!(report.models.len(), 1);

    // another seed changes the fit
    let other = dir.path().join("other");
    assert_eq!(
        pedrisk(&["pipeline", "--config", s(&cfg), "--out", s(&other), "--models", "M1", "--seed", "99"]),
        0
    );
    assert_ne!(
        std::fs::read(single.join(FIT_FILE)).unwrap(),
        std::fs::read(other.join(FIT_FILE)).unwrap()
    );
}

#[test]
fn zero_z_cr_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = scenario(dir.path());
    let mut cfg: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&cfg_path).unwrap()).unwrap();
    cfg["z_cr"] = 0.0.into();
    std::fs::write(&cfg_path, cfg.to_string()).unwrap();
    let out = dir.path().join("out");
    assert_eq!(pedrisk(&["pipeline", "--config", s(&cfg_path), "--out", s(&out)]), 0);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join(RISK_SUMMARY_FILE)).unwrap()).unwrap();
    assert_eq!(summary["settings"]["z_cr"], 0.0);
}

#[test]
fn resume_skips_fresh_stages() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = scenario(dir.path());
    let mut cfg = RunConfig::load(&cfg_path).unwrap();
    let out = dir.path().join("out");
    assert_eq!(cmd_pipeline(&cfg, &out).unwrap(), ["conflicts", "blocks", "fit", "risk"]);
    assert!(cmd_pipeline(&cfg, &out).unwrap().is_empty());

    // a new horizon only touches risk
    cfg.horizon_hours *= 2.0;
    assert_eq!(cmd_pipeline(&cfg, &out).unwrap(), ["risk"]);

    // a damaged output is rebuilt along with what depends on it
    std::fs::write(out.join("blocks.csv"), "garbage").unwrap();
    assert_eq!(cmd_pipeline(&cfg, &out).unwrap(), ["blocks"]);
    cfg.seed += 1;
    assert_eq!(cmd_pipeline(&cfg, &out).unwrap(), ["fit", "risk"]);
}

#[test]
fn config_round_trips_through_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = scenario(dir.path());
    let cfg = RunConfig::load(&cfg_path).unwrap();
    let back = RunConfig::from_json(&cfg.to_json()).unwrap();
    assert_eq!(back, cfg);
    assert!(RunConfig::from_json(r#"{"sites": [], "bogus": 1}"#).is_err());
}
