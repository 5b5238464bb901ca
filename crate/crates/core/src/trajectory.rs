//! Road-user trajectories, camera-perspective distance correction and
//! interpolation / space-mean-speed primitives.
//!
//! Trajectories arrive already extracted from video (detection and tracking
//! happen upstream). A [`Track`] is a strictly time-ordered polyline with a
//! road-user class attached.

use std::collections::HashSet;
use std::fmt;
use std::io::Read;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TrajectoryError {
    #[error("track {id}: needs at least two samples, got {got}")]
    TooFewSamples { id: String, got: usize },
    #[error("track {id}: timestamps must be strictly increasing (sample {index} at t={t})")]
    NonIncreasingTime { id: String, index: usize, t: f64 },
    #[error("track {id}: non-finite sample at index {index}")]
    NonFinite { id: String, index: usize },
    #[error("track {id}: t={t} outside track span [{start}, {end}]")]
    OutOfRange {
        id: String,
        t: f64,
        start: f64,
        end: f64,
    },
    #[error("image distance {x} outside perspective domain [{min}, {max}]")]
    OutsideDomain { x: f64, min: f64, max: f64 },
    #[error("perspective polynomial is non-positive ({value}) at x={x}")]
    InvalidModel { x: f64, value: f64 },
    #[error("invalid perspective model: {0}")]
    BadModel(String),
    #[error("negative distance {0}")]
    NegativeDistance(f64),
    #[error("no track overlaps window [{start}, {end}]")]
    EmptyWindow { start: f64, end: f64 },
    #[error("unknown road-user class '{0}' (expected PED, MV or NMV)")]
    UnknownClass(String),
    #[error("line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error("duplicate track id '{0}'")]
    DuplicateTrack(String),
}

pub type Result<T> = std::result::Result<T, TrajectoryError>;

/// Road-user category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RoadUserClass {
    #[serde(rename = "PED")]
    Pedestrian,
    /// Motorized vehicle.
    #[serde(rename = "MV")]
    Mv,
    /// Non-motorized vehicle (rickshaw, bicycle, van).
    #[serde(rename = "NMV")]
    Nmv,
}

impl RoadUserClass {
    pub fn code(self) -> &'static str {
        match self {
            RoadUserClass::Pedestrian => "PED",
            RoadUserClass::Mv => "MV",
            RoadUserClass::Nmv => "NMV",
        }
    }

    pub fn is_vehicle(self) -> bool {
        !matches!(self, RoadUserClass::Pedestrian)
    }

    /// Subtype assumed when the input carries none.
    pub fn default_subtype(self) -> Option<&'static str> {
        match self {
            RoadUserClass::Pedestrian => None,
            RoadUserClass::Mv => Some("car"),
            RoadUserClass::Nmv => Some("rickshaw"),
        }
    }
}

impl fmt::Display for RoadUserClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for RoadUserClass {
    type Err = TrajectoryError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "PED" => Ok(RoadUserClass::Pedestrian),
            "MV" => Ok(RoadUserClass::Mv),
            "NMV" => Ok(RoadUserClass::Nmv),
            other => Err(TrajectoryError::UnknownClass(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

impl Sample {
    pub fn new(t: f64, x: f64, y: f64) -> Self {
        Sample { t, x, y }
    }

    pub fn point(&self) -> (f64, f64) {
        (self.x, self.y)
    }
}

/// Time-stamped planar trajectory of one road user.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    id: String,
    class: RoadUserClass,
    subtype: Option<String>,
    samples: Vec<Sample>,
}

impl Track {
    /// Validates ordering and length. Duplicate timestamps are rejected.
    pub fn new(id: impl Into<String>, class: RoadUserClass, samples: Vec<Sample>) -> Result<Self> {
        let id = id.into();
        if samples.len() < 2 {
            return Err(TrajectoryError::TooFewSamples {
                id,
                got: samples.len(),
            });
        }
        for (index, s) in samples.iter().enumerate() {
            if !(s.t.is_finite() && s.x.is_finite() && s.y.is_finite()) {
                return Err(TrajectoryError::NonFinite { id, index });
            }
            if index > 0 && s.t <= samples[index - 1].t {
                return Err(TrajectoryError::NonIncreasingTime { id, index, t: s.t });
            }
        }
        Ok(Track {
            id,
            class,
            subtype: None,
            samples,
        })
    }

    pub fn with_subtype(mut self, subtype: impl Into<String>) -> Self {
        self.subtype = Some(subtype.into());
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn class(&self) -> RoadUserClass {
        self.class
    }

    /// Vehicle subtype used for PCU conversion; falls back to the class default.
    pub fn subtype(&self) -> Option<&str> {
        self.subtype
            .as_deref()
            .or_else(|| self.class.default_subtype())
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn start_time(&self) -> f64 {
        self.samples[0].t
    }

    pub fn end_time(&self) -> f64 {
        self.samples[self.samples.len() - 1].t
    }

    /// Same track with every sample mapped through `f`.
    pub fn map_samples(&self, f: impl Fn(Sample) -> Sample) -> Result<Track> {
        let samples = self.samples.iter().copied().map(f).collect();
        let mut t = Track::new(self.id.clone(), self.class, samples)?;
        t.subtype = self.subtype.clone();
        Ok(t)
    }
}

/// Second-degree perspective polynomial plus a field scale.
///
/// A distance `r` measured in the image at image-distance `x` from the camera
/// maps to the field distance `field_scale * r * (a0 + a1 x + a2 x^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerspectiveModel {
    pub poly: [f64; 3],
    pub field_scale: f64,
    pub domain: [f64; 2],
}

impl PerspectiveModel {
    /// Checks scale and domain, and that the polynomial stays positive over
    /// the domain (endpoints plus the vertex when it falls inside).
    pub fn new(poly: [f64; 3], field_scale: f64, domain: [f64; 2]) -> Result<Self> {
        let m = PerspectiveModel {
            poly,
            field_scale,
            domain,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.field_scale.is_finite() && self.field_scale > 0.0) {
            return Err(TrajectoryError::BadModel(format!(
                "field_scale must be positive, got {}",
                self.field_scale
            )));
        }
        let [lo, hi] = self.domain;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(TrajectoryError::BadModel(format!(
                "domain [{lo}, {hi}] is not a finite interval"
            )));
        }
        if self.poly.iter().any(|c| !c.is_finite()) {
            return Err(TrajectoryError::BadModel("non-finite coefficient".into()));
        }
        let mut probes = vec![lo, hi];
        let [_, a1, a2] = self.poly;
        if a2 != 0.0 {
            let vertex = -a1 / (2.0 * a2);
            if vertex > lo && vertex < hi {
                probes.push(vertex);
            }
        }
        for x in probes {
            let v = self.rho(x);
            if v <= 0.0 {
                return Err(TrajectoryError::InvalidModel { x, value: v });
            }
        }
        Ok(())
    }

    pub fn rho(&self, x: f64) -> f64 {
        let [a0, a1, a2] = self.poly;
        a0 + x * (a1 + x * a2)
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        let m: PerspectiveModel = serde_json::from_str(text).map_err(|e| e.to_string())?;
        m.validate().map_err(|e| e.to_string())?;
        Ok(m)
    }
}

/// Corrects an image distance `r` observed at image-distance `x` from the camera.
pub fn correct_distance(r: f64, x: f64, model: &PerspectiveModel) -> Result<f64> {
    let [lo, hi] = model.domain;
    if !(x >= lo && x <= hi) {
        return Err(TrajectoryError::OutsideDomain {
            x,
            min: lo,
            max: hi,
        });
    }
    if r < 0.0 {
        return Err(TrajectoryError::NegativeDistance(r));
    }
    let rho = model.rho(x);
    if rho <= 0.0 {
        return Err(TrajectoryError::InvalidModel { x, value: rho });
    }
    Ok(model.field_scale * r * rho)
}

/// Linear interpolation of the track position at time `t`.
pub fn position_at(track: &Track, t: f64) -> Result<(f64, f64)> {
    let s = track.samples();
    let (start, end) = (track.start_time(), track.end_time());
    if !(t >= start && t <= end) {
        return Err(TrajectoryError::OutOfRange {
            id: track.id.clone(),
            t,
            start,
            end,
        });
    }
    // first sample with time >= t
    let i = s.partition_point(|p| p.t < t);
    if s[i].t == t {
        return Ok(s[i].point());
    }
    let (a, b) = (s[i - 1], s[i]);
    let w = (t - a.t) / (b.t - a.t);
    Ok((a.x + w * (b.x - a.x), a.y + w * (b.y - a.y)))
}

/// Measures the length of a straight piece of trajectory.
pub trait DistanceMetric {
    fn segment_length(&self, a: (f64, f64), b: (f64, f64)) -> f64;
}

/// Plain Euclidean length; coordinates are already in meters.
#[derive(Debug, Clone, Copy, Default)]
pub struct Euclidean;

impl DistanceMetric for Euclidean {
    fn segment_length(&self, a: (f64, f64), b: (f64, f64)) -> f64 {
        (b.0 - a.0).hypot(b.1 - a.1)
    }
}

/// Image-unit coordinates: each segment's image length is corrected at the
/// image-distance of its midpoint from the camera. Midpoints outside the model
/// domain are clamped to the nearest domain edge.
#[derive(Debug, Clone)]
pub struct PerspectiveMetric {
    pub model: PerspectiveModel,
    pub camera: (f64, f64),
}

impl DistanceMetric for PerspectiveMetric {
    fn segment_length(&self, a: (f64, f64), b: (f64, f64)) -> f64 {
        let r = (b.0 - a.0).hypot(b.1 - a.1);
        let mid = (0.5 * (a.0 + b.0), 0.5 * (a.1 + b.1));
        let x = (mid.0 - self.camera.0)
            .hypot(mid.1 - self.camera.1)
            .clamp(self.model.domain[0], self.model.domain[1]);
        // the model was validated on construction, so only a NaN can fail here
        correct_distance(r, x, &self.model).unwrap_or(f64::NAN)
    }
}

/// Path length and time a track spends inside `[start, end]`, or `None` when
/// the overlap is empty or a single instant.
pub fn path_in_window(
    track: &Track,
    start: f64,
    end: f64,
    metric: &impl DistanceMetric,
) -> Option<(f64, f64)> {
    let lo = start.max(track.start_time());
    let hi = end.min(track.end_time());
    if !(hi > lo) {
        return None;
    }
    let s = track.samples();
    let mut length = 0.0;
    let mut prev = position_at(track, lo).ok()?;
    for p in s.iter().filter(|p| p.t > lo && p.t < hi) {
        length += metric.segment_length(prev, p.point());
        prev = p.point();
    }
    let last = position_at(track, hi).ok()?;
    length += metric.segment_length(prev, last);
    Some((length, hi - lo))
}

/// Mean over overlapping tracks of (path length inside window / time inside window).
pub fn space_mean_speed(tracks: &[Track], window: (f64, f64)) -> Result<f64> {
    space_mean_speed_with(tracks.iter(), window, &Euclidean)
}

pub fn space_mean_speed_with<'a>(
    tracks: impl IntoIterator<Item = &'a Track>,
    window: (f64, f64),
    metric: &impl DistanceMetric,
) -> Result<f64> {
    let (start, end) = window;
    let mut sum = 0.0;
    let mut n = 0usize;
    if end > start {
        for t in tracks {
            if let Some((len, dur)) = path_in_window(t, start, end, metric) {
                sum += len / dur;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(TrajectoryError::EmptyWindow { start, end });
    }
    Ok(sum / n as f64)
}

#[derive(Debug, Deserialize)]
struct TrackRow {
    track_id: String,
    class: String,
    t: f64,
    x: f64,
    y: f64,
    #[serde(default)]
    subtype: Option<String>,
}

/// Reads the `track_id,class,t,x,y[,subtype]` CSV. Rows of one track must be
/// contiguous; a track id reappearing after another track is a duplicate.
pub fn read_tracks_csv<R: Read>(reader: R) -> Result<Vec<Track>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut tracks = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    // id, class, subtype, samples, first line
    type Pending = (String, RoadUserClass, Option<String>, Vec<Sample>, u64);
    let mut current: Option<Pending> = None;

    let finish = |cur: Pending| -> Result<Track> {
        let (id, class, subtype, samples, line) = cur;
        let t = Track::new(id, class, samples).map_err(|e| TrajectoryError::Csv {
            line,
            message: e.to_string(),
        })?;
        Ok(match subtype {
            Some(s) if !s.is_empty() => t.with_subtype(s),
            _ => t,
        })
    };

    let headers = rdr
        .headers()
        .map_err(|e| TrajectoryError::Csv {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let mut record = csv::StringRecord::new();
    loop {
        let more = rdr.read_record(&mut record).map_err(|e| TrajectoryError::Csv {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        if !more {
            break;
        }
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row: TrackRow = record
            .deserialize(Some(&headers))
            .map_err(|e| TrajectoryError::Csv {
                line,
                message: e.to_string(),
            })?;
        let class: RoadUserClass = row.class.parse().map_err(|e: TrajectoryError| TrajectoryError::Csv {
            line,
            message: e.to_string(),
        })?;
        let same = matches!(&current, Some((id, ..)) if *id == row.track_id);
        if !same {
            if let Some(cur) = current.take() {
                tracks.push(finish(cur)?);
            }
            if !seen.insert(row.track_id.clone()) {
                return Err(TrajectoryError::DuplicateTrack(row.track_id));
            }
            current = Some((row.track_id.clone(), class, row.subtype.clone(), Vec::new(), line));
        }
        let cur = current.as_mut().expect("current track set above");
        if cur.1 != class {
            return Err(TrajectoryError::Csv {
                line,
                message: format!("track {} changes class", cur.0),
            });
        }
        cur.3.push(Sample::new(row.t, row.x, row.y));
    }
    if let Some(cur) = current.take() {
        tracks.push(finish(cur)?);
    }
    Ok(tracks)
}

pub fn write_tracks_csv<W: std::io::Write>(writer: W, tracks: &[Track]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let with_subtype = tracks.iter().any(|t| t.subtype.is_some());
    if with_subtype {
        w.write_record(["track_id", "class", "t", "x", "y", "subtype"])?;
    } else {
        w.write_record(["track_id", "class", "t", "x", "y"])?;
    }
    for t in tracks {
        for s in t.samples() {
            let mut rec = vec![
                t.id.clone(),
                t.class.code().to_string(),
                s.t.to_string(),
                s.x.to_string(),
                s.y.to_string(),
            ];
            if with_subtype {
                rec.push(t.subtype.clone().unwrap_or_default());
            }
            w.write_record(&rec)?;
        }
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn track(id: &str, pts: &[(f64, f64, f64)]) -> Track {
        Track::new(
            id,
            RoadUserClass::Pedestrian,
            pts.iter().map(|&(t, x, y)| Sample::new(t, x, y)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn correct_distance_cases() {
        let id = PerspectiveModel::new([1.0, 0.0, 0.0], 0.5, [0.0, 100.0]).unwrap();
        assert_eq!(correct_distance(10.0, 37.0, &id).unwrap(), 5.0);
        assert_eq!(correct_distance(0.0, 12.0, &id).unwrap(), 0.0);

        let m = PerspectiveModel::new([1.0, 0.05, 0.001], 1.0, [0.0, 50.0]).unwrap();
        let r = correct_distance(10.0, 20.0, &m).unwrap();
        assert!((r - 24.0).abs() < 1e-12);
    }

    #[test]
    fn correct_distance_errors() {
        let m = PerspectiveModel::new([1.0, 0.05, 0.001], 1.0, [0.0, 50.0]).unwrap();
        assert!(matches!(
            correct_distance(1.0, 60.0, &m),
            Err(TrajectoryError::OutsideDomain { .. })
        ));
        assert!(matches!(
            PerspectiveModel::new([1.0, -1.0, 0.0], 1.0, [0.0, 2.0]),
            Err(TrajectoryError::InvalidModel { .. })
        ));
        // vertex dips below zero inside the domain
        assert!(PerspectiveModel::new([0.1, -1.0, 1.0], 1.0, [0.0, 1.0]).is_err());
        assert!(PerspectiveModel::new([1.0, 0.0, 0.0], 0.0, [0.0, 1.0]).is_err());
    }

    #[test]
    fn homogeneous_in_r() {
        let m = PerspectiveModel::new([0.8, 0.02, 0.0005], 0.3, [0.0, 80.0]).unwrap();
        for &k in &[0.0, 0.5, 2.0, 7.25] {
            let a = correct_distance(k * 3.3, 41.0, &m).unwrap();
            let b = k * correct_distance(3.3, 41.0, &m).unwrap();
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn position_midpoint_and_knots() {
        let t = track("a", &[(0.0, 0.0, 0.0), (2.0, 4.0, 0.0), (3.0, 4.0, 5.0)]);
        assert_eq!(position_at(&t, 1.0).unwrap(), (2.0, 0.0));
        assert_eq!(position_at(&t, 2.0).unwrap(), (4.0, 0.0));
        assert_eq!(position_at(&t, 3.0).unwrap(), (4.0, 5.0));
        assert!(position_at(&t, 3.5).is_err());
        assert!(position_at(&t, -0.1).is_err());
    }

    #[test]
    fn position_matches_segment_search_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut pts = Vec::new();
        let mut t = 0.0;
        for _ in 0..30 {
            t += rng.gen_range(0.05..2.0);
            pts.push((t, rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0)));
        }
        let tr = track("r", &pts);
        for _ in 0..100 {
            let q = rng.gen_range(pts[0].0..=pts[pts.len() - 1].0);
            // brute-force: scan every segment for the bracket
            let mut expect = None;
            for w in pts.windows(2) {
                if q >= w[0].0 && q <= w[1].0 {
                    let u = (q - w[0].0) / (w[1].0 - w[0].0);
                    expect = Some((w[0].1 + u * (w[1].1 - w[0].1), w[0].2 + u * (w[1].2 - w[0].2)));
                    break;
                }
            }
            let (ex, ey) = expect.unwrap();
            let (x, y) = position_at(&tr, q).unwrap();
            assert!((x - ex).abs() < 1e-12 && (y - ey).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_tracks() {
        assert!(matches!(
            Track::new("a", RoadUserClass::Mv, vec![Sample::new(0.0, 0.0, 0.0)]),
            Err(TrajectoryError::TooFewSamples { .. })
        ));
        assert!(matches!(
            Track::new(
                "a",
                RoadUserClass::Mv,
                vec![Sample::new(1.0, 0.0, 0.0), Sample::new(1.0, 1.0, 0.0)]
            ),
            Err(TrajectoryError::NonIncreasingTime { .. })
        ));
    }

    #[test]
    fn speed_examples() {
        let moving = track("m", &[(0.0, 0.0, 0.0), (5.0, 10.0, 0.0)]);
        assert_eq!(space_mean_speed(&[moving], (0.0, 5.0)).unwrap(), 2.0);
        let still = track("s", &[(0.0, 3.0, 3.0), (5.0, 3.0, 3.0)]);
        assert_eq!(space_mean_speed(&[still], (0.0, 5.0)).unwrap(), 0.0);

        // per-track speeds 1, 2, 3 m/s, all fully inside [0, 20]
        let tracks: Vec<Track> = (1..=3)
            .map(|v| {
                let v = v as f64;
                track(&format!("t{v}"), &[(2.0, 0.0, 0.0), (6.0, 0.0, 4.0 * v), (10.0, 4.0 * v, 4.0 * v)])
            })
            .collect();
        let oracle = tracks
            .iter()
            .map(|t| {
                let s = t.samples();
                let len: f64 = s.windows(2).map(|w| (w[1].x - w[0].x).hypot(w[1].y - w[0].y)).sum();
                len / (t.end_time() - t.start_time())
            })
            .sum::<f64>()
            / 3.0;
        let got = space_mean_speed(&tracks, (0.0, 20.0)).unwrap();
        assert!((got - oracle).abs() < 1e-12);
        assert!((got - 2.0).abs() < 1e-12);
    }

    #[test]
    fn speed_clips_to_window() {
        let t = track("m", &[(0.0, 0.0, 0.0), (10.0, 20.0, 0.0)]);
        assert!((space_mean_speed(std::slice::from_ref(&t), (5.0, 7.0)).unwrap() - 2.0).abs() < 1e-12);
        assert!(matches!(
            space_mean_speed(&[t], (11.0, 12.0)),
            Err(TrajectoryError::EmptyWindow { .. })
        ));
    }

    #[test]
    fn speed_translation_and_reversal() {
        let pts = [(0.0, 0.0, 0.0), (1.5, 3.0, 1.0), (4.0, 3.5, 6.0), (7.0, -1.0, 2.0)];
        let a = track("a", &pts);
        let shifted = a.map_samples(|s| Sample::new(s.t + 100.0, s.x, s.y)).unwrap();
        let v0 = space_mean_speed(std::slice::from_ref(&a), (1.0, 6.0)).unwrap();
        let v1 = space_mean_speed(&[shifted], (101.0, 106.0)).unwrap();
        assert!((v0 - v1).abs() < 1e-9);

        // reversed direction: same positions visited in reverse order
        let end = a.end_time();
        let mut rev: Vec<_> = pts.iter().map(|&(t, x, y)| (end - t, x, y)).collect();
        rev.reverse();
        let r = track("r", &rev);
        let full_a = space_mean_speed(&[a], (0.0, 7.0)).unwrap();
        let full_r = space_mean_speed(&[r], (0.0, 7.0)).unwrap();
        assert!((full_a - full_r).abs() < 1e-12);
    }

    #[test]
    fn perspective_metric_scales_segments() {
        let m = PerspectiveModel::new([2.0, 0.0, 0.0], 0.5, [0.0, 100.0]).unwrap();
        let metric = PerspectiveMetric { model: m, camera: (0.0, 0.0) };
        assert!((metric.segment_length((0.0, 0.0), (3.0, 4.0)) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip_and_duplicates() {
        let text = "track_id,class,t,x,y\np1,PED,0,0,0\np1,PED,1,1,0\nv1,MV,0,5,5\nv1,MV,2,6,6\n";
        let tracks = read_tracks_csv(text.as_bytes()).unwrap();
        assert_eq!(tracks.len(), 2);
        assert_eq!(tracks[1].class(), RoadUserClass::Mv);
        assert_eq!(tracks[1].subtype(), Some("car"));

        let dup = "track_id,class,t,x,y\np1,PED,0,0,0\np1,PED,1,1,0\nv1,MV,0,5,5\nv1,MV,2,6,6\np1,PED,3,0,0\n";
        assert!(matches!(
            read_tracks_csv(dup.as_bytes()),
            Err(TrajectoryError::DuplicateTrack(_))
        ));
        let bad = "track_id,class,t,x,y\np1,XYZ,0,0,0\n";
        assert!(read_tracks_csv(bad.as_bytes()).is_err());

        let mut buf = Vec::new();
        write_tracks_csv(&mut buf, &tracks).unwrap();
        assert_eq!(read_tracks_csv(buf.as_slice()).unwrap(), tracks);
    }

    #[test]
    fn csv_subtype_column() {
        let text = "track_id,class,t,x,y,subtype\nb,MV,0,0,0,bus\nb,MV,1,1,0,bus\n";
        let tracks = read_tracks_csv(text.as_bytes()).unwrap();
        assert_eq!(tracks[0].subtype(), Some("bus"));
    }
}
