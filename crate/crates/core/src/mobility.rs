//! Client/ES geometry, per-round random-direction mobility and UMa pathloss.

use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const KMH_TO_MS: f64 = 1000.0 / 3600.0;
pub const MAX_SPEED_KMH: f64 = 100.0;
/// Distances below this are clamped before entering the pathloss formula.
pub const MIN_DISTANCE_M: f64 = 1.0;

#[derive(Debug, Error)]
pub enum PlacementError {
    #[error("invalid placement: {0}")]
    Config(String),
    #[error("could not place client {0} inside ES coverage after {1} attempts")]
    Uncovered(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Rectangular area `[0, width] x [0, height]`, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arena {
    pub width: f64,
    pub height: f64,
}

impl Arena {
    pub fn contains(&self, p: &Position) -> bool {
        (0.0..=self.width).contains(&p.x) && (0.0..=self.height).contains(&p.y)
    }

    /// Mirror a coordinate back into `[0, len]`, folding as many times as needed.
    fn reflect(v: f64, len: f64) -> f64 {
        let period = 2.0 * len;
        let m = v.rem_euclid(period);
        if m > len {
            period - m
        } else {
            m
        }
    }

    pub fn reflect_into(&self, p: Position) -> Position {
        Position::new(Self::reflect(p.x, self.width), Self::reflect(p.y, self.height))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MobilityState {
    pub position: Position,
    /// m/s
    pub speed: f64,
    /// radians, in `[0, 2π)`
    pub direction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeServerSite {
    pub id: usize,
    pub position: Position,
    /// `B_0`, Hz
    pub bandwidth: f64,
    pub coverage_radius: f64,
}

impl EdgeServerSite {
    pub fn covers(&self, p: &Position) -> bool {
        self.position.distance(p) <= self.coverage_radius
    }
}

/// Advance one global round: move along the current heading for `dt` seconds,
/// reflect at the arena boundary, then draw a fresh heading for the next round.
/// Speed is kept.
pub fn step_mobility<R: Rng + ?Sized>(
    state: &MobilityState,
    dt: f64,
    arena: &Arena,
    rng: &mut R,
) -> MobilityState {
    let travel = state.speed * dt;
    let moved = Position::new(
        state.position.x + travel * state.direction.cos(),
        state.position.y + travel * state.direction.sin(),
    );
    MobilityState {
        position: arena.reflect_into(moved),
        speed: state.speed,
        direction: rng.random_range(0.0..TAU),
    }
}

/// UMa pathloss in dB, carrier in GHz and distance in meters.
pub fn pathloss_db(distance_m: f64, carrier_ghz: f64) -> f64 {
    32.4 + 20.0 * carrier_ghz.log10() + 30.0 * distance_m.max(MIN_DISTANCE_M).log10()
}

/// Linear channel gain `h = 10^(-PL/10)`.
pub fn channel_gain(client: &Position, es: &EdgeServerSite, carrier_ghz: f64) -> f64 {
    10f64.powf(-pathloss_db(client.distance(&es.position), carrier_ghz) / 10.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacementParams {
    pub arena: Arena,
    pub n_es: usize,
    pub n_clients: usize,
    pub es_bandwidth: f64,
    pub coverage_radius: f64,
}

/// ESs on a uniform grid of cell centres (column-major ids), clients uniform over
/// the part of the arena covered by at least one ES, speeds uniform in
/// `[0, 100] km/h` and headings uniform in `[0, 2π)`.
pub fn place_scenario<R: Rng + ?Sized>(
    params: &PlacementParams,
    rng: &mut R,
) -> Result<(Vec<EdgeServerSite>, Vec<MobilityState>), PlacementError> {
    let Arena { width, height } = params.arena;
    if params.n_es == 0 || params.n_clients == 0 {
        return Err(PlacementError::Config("ES and client counts must be at least 1".into()));
    }
    if !(width.is_finite() && height.is_finite() && width > 0.0 && height > 0.0) {
        return Err(PlacementError::Config(format!("arena {width}x{height} must be positive")));
    }
    if !(params.es_bandwidth > 0.0 && params.coverage_radius > 0.0) {
        return Err(PlacementError::Config(
            "ES bandwidth and coverage radius must be positive".into(),
        ));
    }
    let cols = (params.n_es as f64).sqrt().ceil() as usize;
    let rows = params.n_es.div_ceil(cols);
    let (cell_w, cell_h) = (width / cols as f64, height / rows as f64);
    if cell_w < MIN_DISTANCE_M || cell_h < MIN_DISTANCE_M {
        return Err(PlacementError::Config(format!(
            "arena {width}x{height} too small for a {cols}x{rows} ES grid"
        )));
    }
    let sites: Vec<EdgeServerSite> = (0..params.n_es)
        .map(|id| {
            let (c, r) = (id / rows, id % rows);
            EdgeServerSite {
                id,
                position: Position::new((c as f64 + 0.5) * cell_w, (r as f64 + 0.5) * cell_h),
                bandwidth: params.es_bandwidth,
                coverage_radius: params.coverage_radius,
            }
        })
        .collect();

    const ATTEMPTS: usize = 10_000;
    let mut clients = Vec::with_capacity(params.n_clients);
    for n in 0..params.n_clients {
        let position = (0..ATTEMPTS)
            .map(|_| Position::new(rng.random_range(0.0..=width), rng.random_range(0.0..=height)))
            .find(|p| sites.iter().any(|s| s.covers(p)))
            .ok_or(PlacementError::Uncovered(n, ATTEMPTS))?;
        clients.push(MobilityState {
            position,
            speed: rng.random_range(0.0..=MAX_SPEED_KMH) * KMH_TO_MS,
            direction: rng.random_range(0.0..TAU),
        });
    }
    Ok((sites, clients))
}
