//! Radio propagation, airtime and the two 10 MHz DSRC channels.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::SimTime;

#[derive(Debug, Error, PartialEq)]
pub enum PhyError {
    #[error("distance must be positive, got {0} m")]
    NonPositiveDistance(f64),
    #[error("transmitter and receiver are co-located")]
    CoincidentPositions,
    #[error("payload must be at least one byte")]
    EmptyPayload,
    #[error("invalid radio parameter: {0}")]
    InvalidParameter(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
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

/// Log-distance path-loss model parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathLossParams {
    /// Path-loss exponent.
    pub gamma: f64,
    /// Loss at the reference distance, dB.
    pub pl0_db: f64,
    /// Reference distance, m.
    pub l0_m: f64,
}

impl Default for PathLossParams {
    fn default() -> Self {
        Self { gamma: 2.83, pl0_db: 44.0, l0_m: 1.0 }
    }
}

impl PathLossParams {
    pub fn validate(&self) -> Result<(), PhyError> {
        if !(self.gamma > 0.0) {
            return Err(PhyError::InvalidParameter("gamma must be positive"));
        }
        if !(self.l0_m > 0.0) {
            return Err(PhyError::InvalidParameter("reference distance must be positive"));
        }
        Ok(())
    }
}

/// `pl0 + 10 * gamma * log10(l / l0)` in dB.
pub fn path_loss(distance_m: f64, p: &PathLossParams) -> Result<f64, PhyError> {
    if !(distance_m > 0.0) {
        return Err(PhyError::NonPositiveDistance(distance_m));
    }
    Ok(p.pl0_db + 10.0 * p.gamma * (distance_m / p.l0_m).log10())
}

/// Received power in dBm for a transmitter at `tx` and receiver at `rx`.
pub fn rx_power(
    tx: &Position,
    rx: &Position,
    cfg: &RadioConfig,
    p: &PathLossParams,
) -> Result<f64, PhyError> {
    let d = tx.distance(rx);
    if d == 0.0 {
        return Err(PhyError::CoincidentPositions);
    }
    Ok(cfg.tx_power_dbm - path_loss(d, p)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ChannelId {
    #[serde(rename = "ch180")]
    Ch180,
    #[serde(rename = "ch182")]
    Ch182,
}

impl ChannelId {
    pub const ALL: [ChannelId; 2] = [ChannelId::Ch180, ChannelId::Ch182];

    pub fn index(self) -> usize {
        match self {
            ChannelId::Ch180 => 0,
            ChannelId::Ch182 => 1,
        }
    }

    /// The adjacent channel of the pair.
    pub fn other(self) -> ChannelId {
        match self {
            ChannelId::Ch180 => ChannelId::Ch182,
            ChannelId::Ch182 => ChannelId::Ch180,
        }
    }

    pub fn number(self) -> u16 {
        match self {
            ChannelId::Ch180 => 180,
            ChannelId::Ch182 => 182,
        }
    }

    pub fn center_mhz(self) -> u32 {
        match self {
            ChannelId::Ch180 => 5900,
            ChannelId::Ch182 => 5910,
        }
    }

    pub const fn width_mhz(self) -> u32 {
        10
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Width {
    Mhz10,
    Mhz20,
}

impl Width {
    pub fn mhz(self) -> u32 {
        match self {
            Width::Mhz10 => 10,
            Width::Mhz20 => 20,
        }
    }
}

/// The channels a frame occupies: one 10 MHz channel or the bonded pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChannelSet {
    Single(ChannelId),
    Bonded,
}

impl ChannelSet {
    pub fn for_width(primary: ChannelId, width: Width) -> Self {
        match width {
            Width::Mhz10 => ChannelSet::Single(primary),
            Width::Mhz20 => ChannelSet::Bonded,
        }
    }

    pub fn width(self) -> Width {
        match self {
            ChannelSet::Single(_) => Width::Mhz10,
            ChannelSet::Bonded => Width::Mhz20,
        }
    }

    pub fn contains(self, ch: ChannelId) -> bool {
        match self {
            ChannelSet::Single(c) => c == ch,
            ChannelSet::Bonded => true,
        }
    }

    pub fn channels(self) -> impl Iterator<Item = ChannelId> {
        ChannelId::ALL.into_iter().filter(move |c| self.contains(*c))
    }
}

/// OFDM rate parameters at 10 MHz clocking. Defaults are BPSK 3/4 (4.5 Mb/s).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McsConfig {
    pub data_bits_per_symbol: u32,
    pub symbol_us: u64,
    pub preamble_us: u64,
}

impl Default for McsConfig {
    fn default() -> Self {
        Self { data_bits_per_symbol: 36, symbol_us: 8, preamble_us: 40 }
    }
}

const SERVICE_BITS: u64 = 16;
const TAIL_BITS: u64 = 6;

/// Frame airtime: preamble plus whole OFDM symbols carrying SERVICE, payload
/// and tail bits. A 20 MHz frame carries twice the bits per symbol.
pub fn frame_duration(payload_bytes: u32, width: Width, mcs: &McsConfig) -> Result<SimTime, PhyError> {
    if payload_bytes == 0 {
        return Err(PhyError::EmptyPayload);
    }
    let bits = SERVICE_BITS + 8 * u64::from(payload_bytes) + TAIL_BITS;
    let per_symbol = u64::from(mcs.data_bits_per_symbol)
        * match width {
            Width::Mhz10 => 1,
            Width::Mhz20 => 2,
        };
    let symbols = bits.div_ceil(per_symbol);
    Ok(SimTime(mcs.preamble_us + symbols * mcs.symbol_us))
}

/// Link-level radio parameters, per 10 MHz channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RadioConfig {
    pub tx_power_dbm: f64,
    /// Energy-detection threshold.
    pub ed_threshold_dbm: f64,
    /// Minimum received power for preamble detection on the primary.
    pub pd_threshold_dbm: f64,
    /// SINR needed to decode a frame.
    pub decode_snr_db: f64,
    pub noise_floor_dbm: f64,
    /// Per-channel power reduction of a bonded frame.
    pub bonded_split_db: f64,
}

impl Default for RadioConfig {
    fn default() -> Self {
        Self {
            tx_power_dbm: 23.0,
            ed_threshold_dbm: -65.0,
            pd_threshold_dbm: -85.0,
            decode_snr_db: 8.0,
            noise_floor_dbm: -95.0,
            bonded_split_db: 3.0,
        }
    }
}

impl RadioConfig {
    pub fn validate(&self) -> Result<(), PhyError> {
        if self.pd_threshold_dbm > self.ed_threshold_dbm {
            return Err(PhyError::InvalidParameter(
                "preamble-detection threshold must not exceed the energy-detection threshold",
            ));
        }
        if self.bonded_split_db < 0.0 {
            return Err(PhyError::InvalidParameter("bonded power split must be non-negative"));
        }
        Ok(())
    }

    /// Transmit power per occupied 10 MHz channel.
    pub fn channel_power_dbm(&self, width: Width) -> f64 {
        match width {
            Width::Mhz10 => self.tx_power_dbm,
            Width::Mhz20 => self.tx_power_dbm - self.bonded_split_db,
        }
    }
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn path_loss_reference_points() {
        let p = PathLossParams::default();
        assert!(close(path_loss(1.0, &p).unwrap(), 44.0, 1e-9));
        assert!(close(path_loss(10.0, &p).unwrap(), 72.3, 1e-9));
        assert!(close(path_loss(100.0, &p).unwrap(), 100.6, 1e-9));
    }

    #[test]
    fn path_loss_rejects_degenerate_distance() {
        let p = PathLossParams::default();
        assert!(matches!(path_loss(0.0, &p), Err(PhyError::NonPositiveDistance(_))));
        assert!(path_loss(-3.0, &p).is_err());
        assert!(path_loss(f64::NAN, &p).is_err());
    }

    #[test]
    fn rx_power_link_budget() {
        let p = PathLossParams::default();
        let cfg = RadioConfig::default();
        let o = Position::new(0.0, 0.0);
        let rx = |d: f64| rx_power(&o, &Position::new(d, 0.0), &cfg, &p).unwrap();
        assert!(close(rx(1.0), -21.0, 1e-9));
        assert!(close(rx(100.0), -77.6, 1e-9));
        assert!(close(rx(1000.0), -105.9, 1e-9));
        assert_eq!(rx_power(&o, &o, &cfg, &p), Err(PhyError::CoincidentPositions));
    }

    #[test]
    fn rx_power_is_reciprocal() {
        let p = PathLossParams::default();
        let cfg = RadioConfig::default();
        let a = Position::new(12.5, 4.0);
        let b = Position::new(-310.0, 47.0);
        assert_eq!(rx_power(&a, &b, &cfg, &p), rx_power(&b, &a, &cfg, &p));
    }

    #[test]
    fn airtime_of_a_bsm() {
        let mcs = McsConfig::default();
        // 40 us preamble + ceil(2022 / 36) = 57 symbols of 8 us
        assert_eq!(frame_duration(250, Width::Mhz10, &mcs).unwrap(), SimTime(496));
        // ceil(2022 / 72) = 29 symbols
        assert_eq!(frame_duration(250, Width::Mhz20, &mcs).unwrap(), SimTime(272));
        assert_eq!(frame_duration(0, Width::Mhz10, &mcs), Err(PhyError::EmptyPayload));
    }

    #[test]
    fn airtime_monotone_in_size_and_width() {
        let mcs = McsConfig::default();
        for bytes in [1u32, 36, 100, 250, 1200, 4000] {
            let narrow = frame_duration(bytes, Width::Mhz10, &mcs).unwrap();
            let wide = frame_duration(bytes, Width::Mhz20, &mcs).unwrap();
            assert!(wide <= narrow);
            assert!(frame_duration(2 * bytes, Width::Mhz10, &mcs).unwrap() >= narrow);
        }
        assert!(
            frame_duration(250, Width::Mhz20, &mcs).unwrap()
                < frame_duration(250, Width::Mhz10, &mcs).unwrap()
        );
    }

    #[test]
    fn channel_pair() {
        assert_eq!(ChannelId::Ch180.other(), ChannelId::Ch182);
        assert_eq!(ChannelId::Ch182.center_mhz() - ChannelId::Ch180.center_mhz(), 10);
        assert_eq!(ChannelSet::Bonded.channels().count(), 2);
        assert!(!ChannelSet::Single(ChannelId::Ch180).contains(ChannelId::Ch182));
    }

    #[test]
    fn radio_validation() {
        let mut cfg = RadioConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.pd_threshold_dbm = -60.0;
        assert!(cfg.validate().is_err());
    }
}
