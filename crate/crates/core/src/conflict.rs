//! Pedestrian–vehicle conflict points and Post-Encroachment Time.
//!
//! A conflict point is a geometric intersection of the two polylines. The
//! arrival time of each road user at the point is interpolated along the
//! segment that contains it, and PET is the absolute gap between arrivals.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trajectory::{RoadUserClass, Sample, Track};

/// Intersection tolerance in squared-coordinate units.
pub const GEOM_TOL: f64 = 1e-9;

/// Default conflict threshold in seconds (strict `<`).
pub const DEFAULT_PET_THRESHOLD: f64 = 5.0;

#[derive(Debug, Error)]
pub enum ConflictError {
    #[error("line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictEvent {
    pub ped_id: String,
    pub veh_id: String,
    pub veh_class: RoadUserClass,
    pub x: f64,
    pub y: f64,
    /// Pedestrian arrival at the conflict point.
    pub t_p: f64,
    /// Vehicle arrival at the conflict point.
    pub t_v: f64,
    pub pet: f64,
}

impl ConflictEvent {
    pub fn point(&self) -> (f64, f64) {
        (self.x, self.y)
    }

    /// Time at which the conflict point is first occupied.
    pub fn first_arrival(&self) -> f64 {
        self.t_p.min(self.t_v)
    }
}

pub fn compute_pet(t_p: f64, t_v: f64) -> f64 {
    if t_p < t_v {
        t_v - t_p
    } else if t_v < t_p {
        t_p - t_v
    } else {
        0.0
    }
}

pub fn filter_conflicts(events: Vec<ConflictEvent>, threshold: f64) -> Vec<ConflictEvent> {
    events.into_iter().filter(|e| e.pet < threshold).collect()
}

fn cross(a: (f64, f64), b: (f64, f64)) -> f64 {
    a.0 * b.1 - a.1 * b.0
}

fn dot(a: (f64, f64), b: (f64, f64)) -> f64 {
    a.0 * b.0 + a.1 * b.1
}

fn sub(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    (a.0 - b.0, a.1 - b.1)
}

/// Segment parameters `(s_a, s_b)` in `[0, 1]` of the intersection of
/// `a0→a1` and `b0→b1`. Collinear overlaps collapse to the overlap midpoint.
fn segment_hit(a0: (f64, f64), a1: (f64, f64), b0: (f64, f64), b1: (f64, f64)) -> Option<(f64, f64)> {
    const SLACK: f64 = 1e-12;
    let r = sub(a1, a0);
    let s = sub(b1, b0);
    let qp = sub(b0, a0);
    let rr = dot(r, r);
    let ss = dot(s, s);

    // degenerate (stationary) segments are points
    if rr == 0.0 && ss == 0.0 {
        return (dot(qp, qp) <= GEOM_TOL).then_some((0.0, 0.0));
    }
    if rr == 0.0 {
        let u = (dot(sub(a0, b0), s) / ss).clamp(0.0, 1.0);
        let d = sub(a0, (b0.0 + u * s.0, b0.1 + u * s.1));
        return (dot(d, d) <= GEOM_TOL).then_some((0.0, u));
    }
    if ss == 0.0 {
        let t = (dot(qp, r) / rr).clamp(0.0, 1.0);
        let d = sub(b0, (a0.0 + t * r.0, a0.1 + t * r.1));
        return (dot(d, d) <= GEOM_TOL).then_some((t, 0.0));
    }

    let denom = cross(r, s);
    if denom.abs() > GEOM_TOL {
        let t = cross(qp, s) / denom;
        let u = cross(qp, r) / denom;
        if (-SLACK..=1.0 + SLACK).contains(&t) && (-SLACK..=1.0 + SLACK).contains(&u) {
            return Some((t.clamp(0.0, 1.0), u.clamp(0.0, 1.0)));
        }
        return None;
    }
    if cross(qp, r).abs() > GEOM_TOL {
        return None; // parallel, distinct lines
    }
    // collinear: overlap of b projected onto a's parameterization
    let t0 = dot(qp, r) / rr;
    let t1 = t0 + dot(s, r) / rr;
    let lo = t0.min(t1).max(0.0);
    let hi = t0.max(t1).min(1.0);
    if lo > hi + SLACK {
        return None;
    }
    let t = 0.5 * (lo + hi.max(lo));
    let p = (a0.0 + t * r.0, a0.1 + t * r.1);
    let u = (dot(sub(p, b0), s) / ss).clamp(0.0, 1.0);
    Some((t, u))
}

fn lerp(a: &Sample, b: &Sample, w: f64) -> (f64, f64, f64) {
    (
        a.t + w * (b.t - a.t),
        a.x + w * (b.x - a.x),
        a.y + w * (b.y - a.y),
    )
}

struct Bbox {
    min: (f64, f64),
    max: (f64, f64),
}

impl Bbox {
    fn of(a: &Sample, b: &Sample) -> Self {
        Bbox {
            min: (a.x.min(b.x), a.y.min(b.y)),
            max: (a.x.max(b.x), a.y.max(b.y)),
        }
    }

    fn of_track(t: &Track) -> Self {
        let s = t.samples();
        let mut bb = Bbox::of(&s[0], &s[0]);
        for p in s {
            bb.min = (bb.min.0.min(p.x), bb.min.1.min(p.y));
            bb.max = (bb.max.0.max(p.x), bb.max.1.max(p.y));
        }
        bb
    }

    fn overlaps(&self, o: &Bbox) -> bool {
        let pad = GEOM_TOL.sqrt();
        self.min.0 <= o.max.0 + pad
            && o.min.0 <= self.max.0 + pad
            && self.min.1 <= o.max.1 + pad
            && o.min.1 <= self.max.1 + pad
    }
}

/// All conflict points between a pedestrian and a vehicle track.
///
/// Intersections closer than the geometric tolerance are merged and keep the
/// earliest passage time of each road user. Events are ordered by first arrival.
pub fn find_conflict_points(ped: &Track, veh: &Track) -> Vec<ConflictEvent> {
    let ps = ped.samples();
    let vs = veh.samples();
    if !Bbox::of_track(ped).overlaps(&Bbox::of_track(veh)) {
        return Vec::new();
    }
    let vboxes: Vec<Bbox> = vs.windows(2).map(|w| Bbox::of(&w[0], &w[1])).collect();

    // (x, y, t_p, t_v)
    let mut hits: Vec<(f64, f64, f64, f64)> = Vec::new();
    for pw in ps.windows(2) {
        let pb = Bbox::of(&pw[0], &pw[1]);
        for (j, vb) in vboxes.iter().enumerate() {
            if !pb.overlaps(vb) {
                continue;
            }
            let (v0, v1) = (&vs[j], &vs[j + 1]);
            if let Some((sp, sv)) = segment_hit(pw[0].point(), pw[1].point(), v0.point(), v1.point()) {
                let (t_p, x, y) = lerp(&pw[0], &pw[1], sp);
                let (t_v, ..) = lerp(v0, v1, sv);
                merge_hit(&mut hits, (x, y, t_p, t_v));
            }
        }
    }

    let mut events: Vec<ConflictEvent> = hits
        .into_iter()
        .map(|(x, y, t_p, t_v)| ConflictEvent {
            ped_id: ped.id().to_string(),
            veh_id: veh.id().to_string(),
            veh_class: veh.class(),
            x,
            y,
            t_p,
            t_v,
            pet: compute_pet(t_p, t_v),
        })
        .collect();
    events.sort_by(|a, b| {
        a.first_arrival()
            .total_cmp(&b.first_arrival())
            .then(a.t_p.total_cmp(&b.t_p))
    });
    events
}

fn merge_hit(hits: &mut Vec<(f64, f64, f64, f64)>, h: (f64, f64, f64, f64)) {
    for e in hits.iter_mut() {
        let d = sub((e.0, e.1), (h.0, h.1));
        if dot(d, d) <= GEOM_TOL {
            if h.2 < e.2 {
                e.0 = h.0;
                e.1 = h.1;
            }
            e.2 = e.2.min(h.2);
            e.3 = e.3.min(h.3);
            return;
        }
    }
    hits.push(h);
}

/// Conflicts between every pedestrian and every vehicle in `tracks`, keeping
/// only PET strictly below `threshold`. Pairs whose time spans are at least
/// `threshold` apart are skipped since their PET cannot qualify.
///
/// Output is sorted by `(ped_id, veh_id, t_p)` regardless of scheduling.
pub fn conflict_sweep(tracks: &[Track], threshold: f64) -> Vec<ConflictEvent> {
    let peds: Vec<&Track> = tracks
        .iter()
        .filter(|t| t.class() == RoadUserClass::Pedestrian)
        .collect();
    let vehs: Vec<&Track> = tracks.iter().filter(|t| t.class().is_vehicle()).collect();

    let mut events: Vec<ConflictEvent> = peds
        .par_iter()
        .flat_map_iter(|p| {
            vehs.iter()
                .filter(|v| {
                    let gap = (v.start_time() - p.end_time()).max(p.start_time() - v.end_time());
                    gap < threshold
                })
                .flat_map(|v| find_conflict_points(p, v))
                .filter(|e| e.pet < threshold)
                .collect::<Vec<_>>()
        })
        .collect();
    events.sort_by(|a, b| {
        a.ped_id
            .cmp(&b.ped_id)
            .then_with(|| a.veh_id.cmp(&b.veh_id))
            .then(a.t_p.total_cmp(&b.t_p))
    });
    events
}

pub const CONFLICT_HEADER: [&str; 8] = ["ped_id", "veh_id", "veh_class", "x", "y", "t_p", "t_v", "pet"];

pub fn write_conflicts_csv<W: Write>(writer: W, events: &[ConflictEvent]) -> Result<(), ConflictError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CONFLICT_HEADER).map_err(csv_io)?;
    for e in events {
        w.write_record([
            e.ped_id.clone(),
            e.veh_id.clone(),
            e.veh_class.code().to_string(),
            e.x.to_string(),
            e.y.to_string(),
            e.t_p.to_string(),
            e.t_v.to_string(),
            e.pet.to_string(),
        ])
        .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_conflicts_csv<R: Read>(reader: R) -> Result<Vec<ConflictEvent>, ConflictError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for rec in rdr.deserialize::<ConflictEvent>() {
        out.push(rec.map_err(|e| ConflictError::Csv {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

fn csv_io(e: csv::Error) -> ConflictError {
    ConflictError::Io(std::io::Error::other(e))
}
