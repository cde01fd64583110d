//! Ground-plane geometry for a moving satellite constellation.
//!
//! Satellites are modeled as sub-satellite points moving linearly over a flat
//! 2-D ground plane, each with a circular coverage footprint. This module
//! provides the coverage and handover-trigger predicates used by the
//! simulator, plus the closed-form handover-load formulas behind the
//! `analyze` CLI subcommand: sweeping a circular cell of radius `R` by a
//! distance `d` uncovers an area
//!
//! ```text
//! A_handoff = pi R^2 - 2 R^2 acos(d / 2R) + d sqrt(R^2 - d^2/4)
//! ```
//!
//! and a uniform population of `n` terminals inside the cell yields
//! `n * A_handoff / (pi R^2)` expected handovers.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::RanId;

/// A point on the flat ground plane, in kilometres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundPoint {
    pub x: f64,
    pub y: f64,
}

impl GroundPoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &GroundPoint) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// Linear motion of one satellite's sub-satellite point.
///
/// All satellites in a scenario share one velocity vector (rigid
/// constellation).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SatelliteTrack {
    pub id: RanId,
    pub initial_position: GroundPoint,
    /// km/s, shared by the whole constellation.
    pub velocity: (f64, f64),
    /// Footprint (cell) radius in km. Must be > 0.
    pub footprint_radius: f64,
}

impl SatelliteTrack {
    pub fn new(
        id: RanId,
        initial_position: GroundPoint,
        velocity: (f64, f64),
        footprint_radius: f64,
    ) -> Self {
        assert!(footprint_radius > 0.0, "footprint radius must be positive");
        Self { id, initial_position, velocity, footprint_radius }
    }
}

/// Inputs for the closed-form handover-load estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandoffLoadQuery {
    /// Terminals connected to the cell.
    pub ue_count: f64,
    /// Cell radius in km.
    pub cell_radius: f64,
    /// Satellite ground speed in km/s.
    pub satellite_speed: f64,
    /// Observation window in seconds.
    pub window: f64,
}

/// Full breakdown printed by the `analyze` subcommand.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct HandoffLoad {
    pub cell_area_km2: f64,
    pub intersect_area_km2: f64,
    pub handoff_area_km2: f64,
    pub density_per_km2: f64,
    pub expected_handoffs: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("displacement {moved} km outside [0, {max}] km for cell radius {radius} km")]
    DisplacementOutOfRange { moved: f64, radius: f64, max: f64 },
    #[error("{name} must be strictly positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
}

/// Sub-satellite point at simulated time `t` seconds.
pub fn position_at(track: &SatelliteTrack, t: f64) -> GroundPoint {
    debug_assert!(t >= 0.0);
    GroundPoint::new(
        track.initial_position.x + track.velocity.0 * t,
        track.initial_position.y + track.velocity.1 * t,
    )
}

/// Coverage predicate. The footprint boundary is inclusive.
pub fn in_footprint(ue: &GroundPoint, track: &SatelliteTrack, t: f64) -> bool {
    ue.distance(&position_at(track, t)) <= track.footprint_radius
}

/// Location-based handover trigger: the id of the strictly nearest
/// non-serving satellite, or `None` while the serving satellite is nearest.
/// An exact tie keeps the UE with its serving satellite.
pub fn needs_handover(
    ue: &GroundPoint,
    serving: &SatelliteTrack,
    others: &[SatelliteTrack],
    t: f64,
) -> Option<RanId> {
    let serving_dist = ue.distance(&position_at(serving, t));
    let nearest = others
        .iter()
        .map(|track| (ue.distance(&position_at(track, t)), track.id))
        .min_by(|a, b| a.partial_cmp(b).expect("finite distances"))?;
    (nearest.0 < serving_dist).then_some(nearest.1)
}

/// Overlap area of two equal circles of radius `cell_radius` whose centers
/// are `moved` km apart.
pub fn intersect_area(cell_radius: f64, moved: f64) -> Result<f64, GeometryError> {
    if cell_radius <= 0.0 {
        return Err(GeometryError::NonPositive { name: "cell_radius", value: cell_radius });
    }
    if moved < 0.0 || moved > 2.0 * cell_radius {
        return Err(GeometryError::DisplacementOutOfRange {
            moved,
            radius: cell_radius,
            max: 2.0 * cell_radius,
        });
    }
    let r = cell_radius;
    Ok(2.0 * r * r * (moved / (2.0 * r)).acos() - moved * (r * r - moved * moved / 4.0).sqrt())
}

/// Area uncovered by the sweep: `pi R^2 - intersect_area`.
pub fn handoff_area(cell_radius: f64, moved: f64) -> Result<f64, GeometryError> {
    Ok(PI * cell_radius * cell_radius - intersect_area(cell_radius, moved)?)
}

/// Expected number of handovers in the query window, assuming uniform UE
/// density. Clamps to the full population once the displacement exceeds the
/// cell diameter (physically, every terminal has been swept past).
pub fn expected_handoffs(q: &HandoffLoadQuery) -> f64 {
    let moved = q.satellite_speed * q.window;
    if moved >= 2.0 * q.cell_radius {
        return q.ue_count;
    }
    let cell = PI * q.cell_radius * q.cell_radius;
    let handoff = handoff_area(q.cell_radius, moved).expect("displacement within range");
    q.ue_count * handoff / cell
}

/// Breakdown of all load quantities for reporting.
pub fn handoff_load(q: &HandoffLoadQuery) -> Result<HandoffLoad, GeometryError> {
    for (name, value) in [
        ("ue_count", q.ue_count),
        ("cell_radius", q.cell_radius),
        ("satellite_speed", q.satellite_speed),
    ] {
        if value <= 0.0 {
            return Err(GeometryError::NonPositive { name, value });
        }
    }
    if q.window < 0.0 {
        return Err(GeometryError::NonPositive { name: "window", value: q.window });
    }
    let moved = (q.satellite_speed * q.window).min(2.0 * q.cell_radius);
    let cell_area = PI * q.cell_radius * q.cell_radius;
    let intersect = intersect_area(q.cell_radius, moved)?;
    Ok(HandoffLoad {
        cell_area_km2: cell_area,
        intersect_area_km2: intersect,
        handoff_area_km2: cell_area - intersect,
        density_per_km2: q.ue_count / cell_area,
        expected_handoffs: expected_handoffs(q),
    })
}

/// Monte-Carlo two-circle-overlap estimate, independent of the closed form.
///
/// Samples the lens bounding box rather than the whole circle so the
/// relative error stays small even for nearly-tangent circles. Used as the
/// verification oracle by the test and acceptance suites.
pub fn mc_overlap(radius: f64, moved: f64, samples: u64, seed: u64) -> f64 {
    use rand::{Rng, SeedableRng};
    assert!(moved >= 0.0 && moved <= 2.0 * radius);
    let half_height = (radius * radius - moved * moved / 4.0).sqrt();
    let x_lo = moved - radius;
    let x_hi = radius;
    let box_area = (x_hi - x_lo) * 2.0 * half_height;
    if box_area <= 0.0 {
        return 0.0;
    }
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    let mut hits = 0u64;
    for _ in 0..samples {
        let x = rng.gen_range(x_lo..x_hi);
        let y = rng.gen_range(-half_height..half_height);
        let in_first = x * x + y * y <= radius * radius;
        let in_second = (x - moved) * (x - moved) + y * y <= radius * radius;
        if in_first && in_second {
            hits += 1;
        }
    }
    box_area * hits as f64 / samples as f64
}
