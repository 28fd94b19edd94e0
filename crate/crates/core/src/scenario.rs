//! Highway topology, vehicle mobility, channel assignment and message
//! generation.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::phy::{ChannelId, Position};
use crate::sim::{RngStream, SimTime};

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("vehicle count must be even to split across both sides, got {0}")]
    OddVehicleCount(u32),
    #[error("invalid highway configuration: {0}")]
    InvalidHighway(&'static str),
    #[error("invalid traffic profile: {0}")]
    InvalidTraffic(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StationId(pub u32);

impl StationId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for StationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StationKind {
    Vehicle,
    Rsu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

/// Which PHY generation a station implements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Standard {
    /// 802.11p roadside unit.
    P11,
    /// 802.11bd vehicle.
    Bd11,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MsgType {
    Bsm,
    Cpm,
    SpatMap,
    Wsa,
}

impl MsgType {
    pub const ALL: [MsgType; 4] = [MsgType::Bsm, MsgType::Cpm, MsgType::SpatMap, MsgType::Wsa];

    pub fn index(self) -> usize {
        match self {
            MsgType::Bsm => 0,
            MsgType::Cpm => 1,
            MsgType::SpatMap => 2,
            MsgType::Wsa => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MsgType::Bsm => "BSM",
            MsgType::Cpm => "CPM",
            MsgType::SpatMap => "SPAT_MAP",
            MsgType::Wsa => "WSA",
        }
    }
}

/// Whether vehicles on both sides share a primary channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseAssignment {
    Symmetric,
    Asymmetric,
}

impl CaseAssignment {
    pub fn primary_for(self, side: Side) -> ChannelId {
        match (self, side) {
            (CaseAssignment::Asymmetric, _) => ChannelId::Ch180,
            (CaseAssignment::Symmetric, Side::A) => ChannelId::Ch182,
            (CaseAssignment::Symmetric, Side::B) => ChannelId::Ch180,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CaseAssignment::Symmetric => "symmetric",
            CaseAssignment::Asymmetric => "asymmetric",
        }
    }
}

impl fmt::Display for CaseAssignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for CaseAssignment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "symmetric" | "sym" => Ok(CaseAssignment::Symmetric),
            "asymmetric" | "asym" => Ok(CaseAssignment::Asymmetric),
            other => Err(format!("unknown case `{other}` (expected symmetric or asymmetric)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HighwayConfig {
    pub length_m: f64,
    pub lanes_per_side: u32,
    pub lane_width_m: f64,
    pub median_width_m: f64,
    pub rsu_period_m: f64,
    /// Range within which neighbours add to the CPM size.
    pub sensor_range_m: f64,
    /// Range of intended receivers for loss accounting.
    pub satisfaction_range_m: f64,
    pub speed_min_mps: f64,
    pub speed_max_mps: f64,
}

impl Default for HighwayConfig {
    fn default() -> Self {
        Self {
            length_m: 1000.0,
            lanes_per_side: 4,
            lane_width_m: 4.0,
            median_width_m: 25.0,
            rsu_period_m: 300.0,
            sensor_range_m: 150.0,
            satisfaction_range_m: 150.0,
            speed_min_mps: 10.0,
            speed_max_mps: 30.0,
        }
    }
}

impl HighwayConfig {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let positive = [
            self.length_m,
            self.lane_width_m,
            self.rsu_period_m,
            self.sensor_range_m,
            self.satisfaction_range_m,
            self.speed_min_mps,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) || self.lanes_per_side == 0 || self.median_width_m < 0.0 {
            return Err(ScenarioError::InvalidHighway("dimensions, ranges and speeds must be positive"));
        }
        if self.speed_max_mps < self.speed_min_mps {
            return Err(ScenarioError::InvalidHighway("speed_max below speed_min"));
        }
        Ok(())
    }

    fn side_width(&self) -> f64 {
        f64::from(self.lanes_per_side) * self.lane_width_m
    }

    /// Total road width including the median.
    pub fn road_width(&self) -> f64 {
        2.0 * self.side_width() + self.median_width_m
    }

    /// Lateral coordinate of a lane centre.
    pub fn lane_y(&self, side: Side, lane: u32) -> f64 {
        let offset = self.lane_width_m * (f64::from(lane) + 0.5);
        match side {
            Side::A => offset,
            Side::B => self.side_width() + self.median_width_m + offset,
        }
    }

    /// RSUs sit on the outer road edge.
    pub fn rsu_y(&self, side: Side) -> f64 {
        match side {
            Side::A => 0.0,
            Side::B => self.road_width(),
        }
    }

    pub fn rsu_positions_x(&self) -> Vec<f64> {
        let mut xs = Vec::new();
        let mut x = 0.0;
        while x < self.length_m {
            xs.push(x);
            x += self.rsu_period_m;
        }
        xs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationState {
    pub id: StationId,
    pub kind: StationKind,
    pub side: Side,
    pub lane: u32,
    pub position: Position,
    /// Signed along-road velocity; side B drives towards decreasing x.
    pub velocity_mps: f64,
    pub primary: ChannelId,
    pub standard: Standard,
}

impl StationState {
    pub fn speed(&self) -> f64 {
        self.velocity_mps.abs()
    }

    pub fn is_vehicle(&self) -> bool {
        self.kind == StationKind::Vehicle
    }
}

/// RSUs first (ids are stable across vehicle counts), then vehicles, half per
/// side. Vehicle placement draws come from `rng` only.
pub fn build_topology(
    n_vehicles: u32,
    cfg: &HighwayConfig,
    case: CaseAssignment,
    rng: &mut RngStream,
) -> Result<Vec<StationState>, ScenarioError> {
    if n_vehicles % 2 != 0 {
        return Err(ScenarioError::OddVehicleCount(n_vehicles));
    }
    cfg.validate()?;
    let mut stations = Vec::new();
    for side in [Side::A, Side::B] {
        for x in cfg.rsu_positions_x() {
            stations.push(StationState {
                id: StationId(stations.len() as u32),
                kind: StationKind::Rsu,
                side,
                lane: 0,
                position: Position::new(x, cfg.rsu_y(side)),
                velocity_mps: 0.0,
                primary: case.primary_for(side),
                standard: Standard::P11,
            });
        }
    }
    for i in 0..n_vehicles {
        let side = if i < n_vehicles / 2 { Side::A } else { Side::B };
        let lane = rng.uniform_below(u64::from(cfg.lanes_per_side)) as u32;
        let x = rng.uniform_f64(0.0, cfg.length_m);
        let speed = if cfg.speed_max_mps > cfg.speed_min_mps {
            rng.uniform_f64(cfg.speed_min_mps, cfg.speed_max_mps)
        } else {
            cfg.speed_min_mps
        };
        stations.push(StationState {
            id: StationId(stations.len() as u32),
            kind: StationKind::Vehicle,
            side,
            lane,
            position: Position::new(x, cfg.lane_y(side, lane)),
            velocity_mps: match side {
                Side::A => speed,
                Side::B => -speed,
            },
            primary: case.primary_for(side),
            standard: Standard::Bd11,
        });
    }
    Ok(stations)
}

/// Moves every vehicle along its lane, re-entering at the start of its side
/// when it runs off the end.
pub fn advance_mobility(stations: &mut [StationState], dt: SimTime, cfg: &HighwayConfig) {
    let secs = dt.as_secs_f64();
    for s in stations.iter_mut().filter(|s| s.is_vehicle()) {
        s.position.x = (s.position.x + s.velocity_mps * secs).rem_euclid(cfg.length_m);
    }
}

/// CPM size: base plus a per-object increment for every other vehicle within
/// `range_m` (inclusive).
pub fn cpm_size(tx: &StationState, all: &[StationState], range_m: f64, cpm: &CpmProfile) -> u32 {
    let neighbours = all
        .iter()
        .filter(|o| o.is_vehicle() && o.id != tx.id && tx.position.distance(&o.position) <= range_m)
        .count() as u32;
    cpm.base_bytes + cpm.per_object_bytes * neighbours
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodicProfile {
    pub enabled: bool,
    pub rate_hz: f64,
    pub bytes: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CpmProfile {
    pub enabled: bool,
    pub rate_hz: f64,
    pub base_bytes: u32,
    pub per_object_bytes: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatProfile {
    pub enabled: bool,
    pub rate_hz: f64,
    pub spat_bytes: u32,
    /// Rate of the combined SPaT+MAP frame, which replaces a SPaT-only frame.
    pub map_rate_hz: f64,
    pub combined_bytes: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrafficProfile {
    pub bsm: PeriodicProfile,
    pub cpm: CpmProfile,
    pub spat: SpatProfile,
    /// Sent only in the symmetric case.
    pub wsa: PeriodicProfile,
}

impl Default for TrafficProfile {
    fn default() -> Self {
        Self {
            bsm: PeriodicProfile { enabled: true, rate_hz: 10.0, bytes: 250 },
            cpm: CpmProfile { enabled: true, rate_hz: 10.0, base_bytes: 250, per_object_bytes: 30 },
            spat: SpatProfile {
                enabled: true,
                rate_hz: 10.0,
                spat_bytes: 120,
                map_rate_hz: 1.0,
                combined_bytes: 1200,
            },
            wsa: PeriodicProfile { enabled: true, rate_hz: 1.0, bytes: 100 },
        }
    }
}

impl TrafficProfile {
    /// Only BSMs; used for degenerate-load checks.
    pub fn bsm_only() -> Self {
        let mut p = Self::default();
        p.cpm.enabled = false;
        p.spat.enabled = false;
        p.wsa.enabled = false;
        p
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let rates = [self.bsm.rate_hz, self.cpm.rate_hz, self.spat.rate_hz, self.spat.map_rate_hz, self.wsa.rate_hz];
        if rates.iter().any(|r| !(*r > 0.0)) {
            return Err(ScenarioError::InvalidTraffic("rates must be positive"));
        }
        let sizes = [self.bsm.bytes, self.cpm.base_bytes, self.spat.spat_bytes, self.spat.combined_bytes, self.wsa.bytes];
        if sizes.contains(&0) {
            return Err(ScenarioError::InvalidTraffic("message sizes must be positive"));
        }
        if self.spat.map_rate_hz > self.spat.rate_hz {
            return Err(ScenarioError::InvalidTraffic("MAP rate cannot exceed the SPaT rate"));
        }
        Ok(())
    }
}

/// Which access automaton of a station carries a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum QueueKind {
    /// Single-channel EDCA queue (vehicle BSMs, all RSU traffic).
    Edca,
    /// Queue served by the access method under study (vehicle CPMs).
    Bonding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SizeRule {
    Fixed(u32),
    /// Computed from the neighbourhood at generation time.
    Cpm,
    /// `combined` every `every`-th instance starting with the first, `spat` otherwise.
    SpatMap { spat: u32, combined: u32, every: u64 },
}

/// A periodic message source of one station.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrafficStream {
    pub station: StationId,
    pub msg_type: MsgType,
    pub queue: QueueKind,
    pub period: SimTime,
    pub phase: SimTime,
    pub size: SizeRule,
}

impl TrafficStream {
    /// Generation instant of instance `k`.
    pub fn instant(&self, k: u64) -> SimTime {
        self.phase + SimTime(k * self.period.as_micros())
    }

    /// Instances with generation time strictly before `end`.
    pub fn count_before(&self, end: SimTime) -> u64 {
        if end <= self.phase {
            0
        } else {
            (end - self.phase).as_micros().div_ceil(self.period.as_micros())
        }
    }

    pub fn fixed_size(&self, k: u64) -> Option<u32> {
        match self.size {
            SizeRule::Fixed(b) => Some(b),
            SizeRule::Cpm => None,
            SizeRule::SpatMap { spat, combined, every } => Some(if k % every == 0 { combined } else { spat }),
        }
    }
}

fn period_of(rate_hz: f64) -> SimTime {
    SimTime::from_secs_f64(1.0 / rate_hz)
}

/// Message sources of one station, each with a uniform random phase in `[0, period)`.
pub fn traffic_streams(
    station: &StationState,
    profile: &TrafficProfile,
    case: CaseAssignment,
    rng: &mut RngStream,
) -> Vec<TrafficStream> {
    let mut streams = Vec::new();
    let mut push = |msg_type, queue, rate_hz: f64, size, rng: &mut RngStream| {
        let period = period_of(rate_hz);
        let phase = SimTime(rng.uniform_below(period.as_micros()));
        streams.push(TrafficStream { station: station.id, msg_type, queue, period, phase, size });
    };
    match station.kind {
        StationKind::Vehicle => {
            if profile.bsm.enabled {
                push(MsgType::Bsm, QueueKind::Edca, profile.bsm.rate_hz, SizeRule::Fixed(profile.bsm.bytes), rng);
            }
            if profile.cpm.enabled {
                push(MsgType::Cpm, QueueKind::Bonding, profile.cpm.rate_hz, SizeRule::Cpm, rng);
            }
        }
        StationKind::Rsu => {
            if profile.spat.enabled {
                let every = (profile.spat.rate_hz / profile.spat.map_rate_hz).round().max(1.0) as u64;
                let size = SizeRule::SpatMap {
                    spat: profile.spat.spat_bytes,
                    combined: profile.spat.combined_bytes,
                    every,
                };
                push(MsgType::SpatMap, QueueKind::Edca, profile.spat.rate_hz, size, rng);
            }
            if profile.wsa.enabled && case == CaseAssignment::Symmetric {
                push(MsgType::Wsa, QueueKind::Edca, profile.wsa.rate_hz, SizeRule::Fixed(profile.wsa.bytes), rng);
            }
        }
    }
    streams
}
