//! Synthetic ground truth: GEV block extremes with known link parameters and
//! straight-line crossing scenarios with closed-form PET tables.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::blocks::{Covariate, CovariateScaling, CovariateVector, CycleBlock, SiteConfig};
use crate::gev::{gev_draw, GevModel, LinkError};
use crate::trajectory::{RoadUserClass, Sample, Track, TrajectoryError};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Link(#[from] LinkError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

/// Observed per-cycle ranges of the model covariates at the study sites.
pub fn field_ranges() -> Vec<CovariateRange> {
    use Covariate::*;
    [
        (FMv, 221.5, 1818.25),
        (FP, 104.0, 1737.0),
        (SMv, 1.66, 8.57),
        (SP, 0.62, 2.48),
        (CfMv, 43.0, 397.75),
        (CsMv, 1.89, 10.60),
        (CsNmv, 0.59, 4.31),
    ]
    .into_iter()
    .map(|(covariate, lo, hi)| CovariateRange { covariate, lo, hi })
    .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovariateRange {
    pub covariate: Covariate,
    pub lo: f64,
    pub hi: f64,
}

/// Block-extreme scenario. The true model acts on covariates divided by their
/// sample means, matching what the fitting code sees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockScenario {
    pub sites: Vec<String>,
    pub cycles_per_site: usize,
    pub truth: GevModel,
    #[serde(default = "field_ranges")]
    pub ranges: Vec<CovariateRange>,
    pub seed: u64,
}

impl BlockScenario {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.sites.is_empty() || self.cycles_per_site == 0 {
            return Err(SynthError::Invalid("need at least one site and one cycle".into()));
        }
        self.truth.validate()?;
        for r in &self.ranges {
            if !(r.lo > 0.0 && r.hi >= r.lo && r.hi.is_finite()) {
                return Err(SynthError::Invalid(format!(
                    "range of {} must be positive and ordered",
                    r.covariate
                )));
            }
        }
        for c in Covariate::ALL {
            if !self.ranges.iter().any(|r| r.covariate == c) {
                return Err(SynthError::Invalid(format!("no range for {c}")));
            }
        }
        Ok(())
    }
}

/// Draws covariates uniformly within their ranges, rescales them by the
/// sample means, evaluates the true links and draws one block extreme per
/// cycle. Returned blocks carry the unscaled covariates.
pub fn generate_blocks(scenario: &BlockScenario) -> Result<Vec<CycleBlock>, SynthError> {
    scenario.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    let mut blocks = Vec::with_capacity(scenario.sites.len() * scenario.cycles_per_site);
    for site in &scenario.sites {
        for cycle in 0..scenario.cycles_per_site {
            let mut cov = CovariateVector::from_fn(|_| 0.0);
            for r in &scenario.ranges {
                let v = if r.hi > r.lo { rng.gen_range(r.lo..=r.hi) } else { r.lo };
                cov.set(r.covariate, v);
            }
            blocks.push(CycleBlock {
                site_id: site.clone(),
                cycle_index: cycle,
                z: 0.0,
                n_conflicts: 1,
                covariates: cov,
            });
        }
    }
    let scaling = CovariateScaling::fit(&blocks);
    let site_effects = !scenario.truth.mu.site_effects.is_empty()
        || !scenario.truth.phi.site_effects.is_empty()
        || !scenario.truth.xi.site_effects.is_empty();
    for (i, b) in blocks.iter_mut().enumerate() {
        let site = site_effects.then_some(i / scenario.cycles_per_site);
        let params = scenario.truth.params_for_cycle(&scaling.apply(&b.covariates), site)?;
        b.z = gev_draw(&params, &mut rng);
    }
    Ok(blocks)
}

/// A conflict the scenario guarantees, with its closed-form timing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpectedConflict {
    pub ped_id: String,
    pub veh_id: String,
    pub x: f64,
    pub y: f64,
    pub t_p: f64,
    pub t_v: f64,
    pub pet: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedScenario {
    pub tracks: Vec<Track>,
    pub expected: Vec<ExpectedConflict>,
}

/// Grid of vehicles moving along +x (one lane per vehicle) and pedestrians
/// moving along +y (one crossing line per pedestrian).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossingScenario {
    pub n_pedestrians: usize,
    pub n_vehicles: usize,
    pub ped_speed: f64,
    pub veh_speed: f64,
    /// Distance between neighbouring lanes and crossing lines.
    #[serde(default = "default_spacing")]
    pub spacing: f64,
    /// Start times are drawn uniformly from `[0, max_start)`.
    #[serde(default = "default_max_start")]
    pub max_start: f64,
    pub seed: u64,
}

fn default_spacing() -> f64 {
    3.0
}

fn default_max_start() -> f64 {
    4.0
}

struct Line {
    id: String,
    offset: f64,
    start: f64,
}

fn crossing_tracks(
    peds: &[Line],
    vehs: &[Line],
    ped_speed: f64,
    veh_speed: f64,
    extent: f64,
) -> Result<GeneratedScenario, SynthError> {
    if !(ped_speed > 0.0 && veh_speed > 0.0) {
        return Err(SynthError::Invalid("speeds must be positive".into()));
    }
    let mut tracks = Vec::new();
    for p in peds {
        let dur = 2.0 * extent / ped_speed;
        tracks.push(Track::new(
            p.id.clone(),
            RoadUserClass::Pedestrian,
            vec![
                Sample::new(p.start, p.offset, -extent),
                Sample::new(p.start + dur, p.offset, extent),
            ],
        )?);
    }
    for v in vehs {
        let dur = 2.0 * extent / veh_speed;
        tracks.push(Track::new(
            v.id.clone(),
            RoadUserClass::Mv,
            vec![
                Sample::new(v.start, -extent, v.offset),
                Sample::new(v.start + dur, extent, v.offset),
            ],
        )?);
    }
    let mut expected = Vec::new();
    for p in peds {
        for v in vehs {
            let t_p = p.start + (v.offset + extent) / ped_speed;
            let t_v = v.start + (p.offset + extent) / veh_speed;
            expected.push(ExpectedConflict {
                ped_id: p.id.clone(),
                veh_id: v.id.clone(),
                x: p.offset,
                y: v.offset,
                t_p,
                t_v,
                pet: (t_p - t_v).abs(),
            });
        }
    }
    Ok(GeneratedScenario { tracks, expected })
}

/// Every pedestrian crosses every vehicle lane exactly once.
pub fn generate_crossing_scenario(s: &CrossingScenario) -> Result<GeneratedScenario, SynthError> {
    if s.n_pedestrians == 0 || s.n_vehicles == 0 {
        return Err(SynthError::Invalid("counts must be positive".into()));
    }
    if !(s.spacing > 0.0 && s.max_start >= 0.0) {
        return Err(SynthError::Invalid("spacing must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let start = |rng: &mut ChaCha8Rng| {
        if s.max_start > 0.0 {
            rng.gen_range(0.0..s.max_start)
        } else {
            0.0
        }
    };
    let peds: Vec<Line> = (0..s.n_pedestrians)
        .map(|i| Line {
            id: format!("p{i}"),
            offset: i as f64 * s.spacing,
            start: start(&mut rng),
        })
        .collect();
    let vehs: Vec<Line> = (0..s.n_vehicles)
        .map(|j| Line {
            id: format!("v{j}"),
            offset: j as f64 * s.spacing,
            start: start(&mut rng),
        })
        .collect();
    let extent = s.spacing * (s.n_pedestrians.max(s.n_vehicles) as f64) + 10.0;
    crossing_tracks(&peds, &vehs, s.ped_speed, s.veh_speed, extent)
}

/// One pedestrian and one vehicle whose arrivals at the crossing point differ
/// by `gap` seconds (vehicle later when positive).
pub fn single_crossing(gap: f64, ped_speed: f64, veh_speed: f64) -> Result<GeneratedScenario, SynthError> {
    let extent = 10.0;
    // pedestrian reaches (0, 0) at 10 / ped_speed; vehicle at start + 10 / veh_speed
    let veh_start = extent / ped_speed + gap - extent / veh_speed;
    crossing_tracks(
        &[Line {
            id: "p0".into(),
            offset: 0.0,
            start: 0.0,
        }],
        &[Line {
            id: "v0".into(),
            offset: 0.0,
            start: veh_start,
        }],
        ped_speed,
        veh_speed,
        extent,
    )
}

/// One pedestrian–vehicle encounter per signal cycle at a single crossing
/// point, with PET drawn as the negated block extreme of a stationary GEV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleScenario {
    pub site: SiteConfig,
    pub truth: GevModel,
    #[serde(default = "default_ped_speed_range")]
    pub ped_speed: [f64; 2],
    #[serde(default = "default_veh_speed_range")]
    pub veh_speed: [f64; 2],
    pub seed: u64,
}

fn default_ped_speed_range() -> [f64; 2] {
    [1.0, 1.8]
}

fn default_veh_speed_range() -> [f64; 2] {
    [6.0, 10.0]
}

/// The encounter of cycle `k` is centred in the cycle window; pedestrian
/// lines are 7 m long and vehicle lanes 40 m, so paths from different cycles
/// meet only with PETs of about one cycle length.
pub fn generate_cycle_scenario(s: &CycleScenario) -> Result<GeneratedScenario, SynthError> {
    s.site
        .validate()
        .map_err(|e| SynthError::Invalid(e.to_string()))?;
    let zero = CovariateVector::from_fn(|_| 1.0);
    let params = s.truth.params_for_cycle(&zero, None)?;
    if s.truth.mu.kind != crate::gev::LinkKind::Stationary
        || s.truth.phi.kind != crate::gev::LinkKind::Stationary
    {
        return Err(SynthError::Invalid("cycle scenario needs a stationary truth".into()));
    }
    for r in [s.ped_speed, s.veh_speed] {
        if !(r[0] > 0.0 && r[1] >= r[0]) {
            return Err(SynthError::Invalid("speed ranges must be positive and ordered".into()));
        }
    }
    let half_ped = 3.5;
    let half_veh = 20.0;
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let mut tracks = Vec::new();
    let mut expected = Vec::new();
    let draw_speed = |rng: &mut ChaCha8Rng, r: [f64; 2]| {
        if r[1] > r[0] {
            rng.gen_range(r[0]..r[1])
        } else {
            r[0]
        }
    };
    for k in 0..s.site.n_cycles() {
        let (w0, w1) = s.site.cycle_window(k);
        let z = gev_draw(&params, &mut rng);
        let pet = -z;
        if !(pet >= 0.0) {
            return Err(SynthError::Invalid(format!(
                "truth produced negative PET {pet}; its upper endpoint must be below 0"
            )));
        }
        let vp = draw_speed(&mut rng, s.ped_speed);
        let vv = draw_speed(&mut rng, s.veh_speed);
        let vehicle_first = rng.gen_bool(0.5);
        let centre = 0.5 * (w0 + w1);
        let (t_p, t_v) = if vehicle_first {
            (centre + pet, centre)
        } else {
            (centre, centre + pet)
        };
        let ped_id = format!("p{k}");
        let veh_id = format!("v{k}");
        tracks.push(Track::new(
            ped_id.clone(),
            RoadUserClass::Pedestrian,
            vec![
                Sample::new(t_p - half_ped / vp, 0.0, -half_ped),
                Sample::new(t_p + half_ped / vp, 0.0, half_ped),
            ],
        )?);
        tracks.push(
            Track::new(
                veh_id.clone(),
                RoadUserClass::Mv,
                vec![
                    Sample::new(t_v - half_veh / vv, -half_veh, 0.0),
                    Sample::new(t_v + half_veh / vv, half_veh, 0.0),
                ],
            )?
            .with_subtype("car"),
        );
        expected.push(ExpectedConflict {
            ped_id,
            veh_id,
            x: 0.0,
            y: 0.0,
            t_p,
            t_v,
            pet,
        });
    }
    Ok(GeneratedScenario { tracks, expected })
}

/// Scenario document accepted by the `simulate` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scenario {
    Blocks(BlockScenario),
    Crossing(CrossingScenario),
    Cycles(CycleScenario),
}

pub const EXPECTED_HEADER: [&str; 7] = ["ped_id", "veh_id", "x", "y", "t_p", "t_v", "pet"];

pub fn write_expected_csv<W: std::io::Write>(writer: W, rows: &[ExpectedConflict]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(EXPECTED_HEADER)?;
    for r in rows {
        w.write_record([
            r.ped_id.clone(),
            r.veh_id.clone(),
            r.x.to_string(),
            r.y.to_string(),
            r.t_p.to_string(),
            r.t_v.to_string(),
            r.pet.to_string(),
        ])?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conflict::{conflict_sweep, find_conflict_points};
    use crate::gev::{gev_cdf, GevParams, LinkSpec};

    fn stationary_truth() -> GevModel {
        GevModel::stationary(GevParams::from_sigma(-2.3, 1.36, -0.41).unwrap())
    }

    #[test]
    fn blocks_are_deterministic_and_in_range() {
        let s = BlockScenario {
            sites: vec!["a".into(), "b".into()],
            cycles_per_site: 200,
            truth: stationary_truth(),
            ranges: field_ranges(),
            seed: 5,
        };
        let a = generate_blocks(&s).unwrap();
        assert_eq!(a, generate_blocks(&s).unwrap());
        assert_eq!(a.len(), 400);
        for b in &a {
            for r in field_ranges() {
                let v = b.covariates.get(r.covariate);
                assert!(v >= r.lo && v <= r.hi, "{} = {v}", r.covariate);
            }
            assert!(b.z <= -2.3 + 1.36 / 0.41);
        }
        assert!(a[..200].iter().all(|b| b.site_id == "a"));
    }

    #[test]
    fn stationary_blocks_follow_the_truth() {
        let s = BlockScenario {
            sites: vec!["a".into()],
            cycles_per_site: 100_000,
            truth: stationary_truth(),
            ranges: field_ranges(),
            seed: 11,
        };
        let mut z: Vec<f64> = generate_blocks(&s).unwrap().iter().map(|b| b.z).collect();
        z.sort_by(|a, b| a.total_cmp(b));
        let p = GevParams::from_sigma(-2.3, 1.36, -0.41).unwrap();
        let n = z.len() as f64;
        let ks = z
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let f = gev_cdf(*v, &p);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 1.36 / n.sqrt() * 1.5, "KS {ks}");
    }

    #[test]
    fn non_linear_truth_uses_rescaled_covariates() {
        let truth = GevModel {
            mu: LinkSpec::non_linear(-2.0, &[(Covariate::SP, -0.12, -1.027)]),
            phi: LinkSpec::stationary(0.2f64.ln()),
            xi: LinkSpec::stationary(-0.41),
        };
        let s = BlockScenario {
            sites: vec!["a".into()],
            cycles_per_site: 500,
            truth: truth.clone(),
            ranges: field_ranges(),
            seed: 3,
        };
        let blocks = generate_blocks(&s).unwrap();
        let scaling = CovariateScaling::fit(&blocks);
        let mean_sp: f64 = blocks.iter().map(|b| b.covariates.s_p).sum::<f64>() / 500.0;
        assert!((scaling.means.s_p - mean_sp).abs() < 1e-12);
        for b in &blocks {
            let p = truth.params_for_cycle(&scaling.apply(&b.covariates), None).unwrap();
            assert!(b.z <= p.endpoint().unwrap() + 1e-12);
        }
    }

    #[test]
    fn single_crossing_gap() {
        let g = single_crossing(1.5, 1.4, 8.0).unwrap();
        let ev = find_conflict_points(&g.tracks[0], &g.tracks[1]);
        assert_eq!(ev.len(), 1);
        assert!((ev[0].pet - 1.5).abs() < 1e-9);
        assert!((g.expected[0].pet - 1.5).abs() < 1e-12);

        let g = single_crossing(0.0, 1.4, 8.0).unwrap();
        let ev = find_conflict_points(&g.tracks[0], &g.tracks[1]);
        assert!(ev[0].pet.abs() < 1e-9);
    }

    #[test]
    fn grid_has_one_conflict_per_pair() {
        let s = CrossingScenario {
            n_pedestrians: 20,
            n_vehicles: 20,
            ped_speed: 1.4,
            veh_speed: 8.0,
            spacing: 3.0,
            max_start: 4.0,
            seed: 2,
        };
        let g = generate_crossing_scenario(&s).unwrap();
        let events = conflict_sweep(&g.tracks, f64::INFINITY);
        assert_eq!(events.len(), 400);
        for e in &events {
            let x = g
                .expected
                .iter()
                .find(|x| x.ped_id == e.ped_id && x.veh_id == e.veh_id)
                .unwrap();
            assert!((e.pet - x.pet).abs() < 1e-9);
            assert!((e.t_p - x.t_p).abs() < 1e-9 && (e.t_v - x.t_v).abs() < 1e-9);
        }
    }

    #[test]
    fn cycle_scenario_closure() {
        let s = CycleScenario {
            site: SiteConfig::new("x", 60.0, 1800.0),
            truth: GevModel::stationary(GevParams::from_sigma(-2.3, 0.5, -0.41).unwrap()),
            ped_speed: default_ped_speed_range(),
            veh_speed: default_veh_speed_range(),
            seed: 8,
        };
        let g = generate_cycle_scenario(&s).unwrap();
        assert_eq!(g.expected.len(), 30);
        let events = conflict_sweep(&g.tracks, 5.0);
        assert_eq!(events.len(), 30);
        for (e, x) in events.iter().zip(
            {
                let mut v = g.expected.clone();
                v.sort_by(|a, b| (&a.ped_id, &a.veh_id).cmp(&(&b.ped_id, &b.veh_id)));
                v
            }
            .iter(),
        ) {
            assert_eq!((&e.ped_id, &e.veh_id), (&x.ped_id, &x.veh_id));
            assert!((e.pet - x.pet).abs() < 1e-9);
        }
    }

    #[test]
    fn scenario_json_round_trip() {
        let s = Scenario::Crossing(CrossingScenario {
            n_pedestrians: 2,
            n_vehicles: 3,
            ped_speed: 1.2,
            veh_speed: 9.0,
            spacing: 3.0,
            max_start: 4.0,
            seed: 1,
        });
        let text = serde_json::to_string(&s).unwrap();
        assert!(text.contains("\"kind\":\"crossing\""));
        assert_eq!(serde_json::from_str::<Scenario>(&text).unwrap(), s);
    }
}
