//! Channel-access state machines: single-channel EDCA, legacy (802.11n-style)
//! bonding, and the two 802.11bd bonding variants.
//!
//! An automaton never polls. It is fed the sensed state of its primary and
//! secondary channel whenever either changes, and exposes the instant at which
//! it will transmit if nothing else changes ([`AccessAutomaton::deadline`]).
//!
//! Countdown timing: once the sensed medium has been idle for the resume wait
//! (AIFS or EIFS), slot boundaries occur every slot time. At each boundary the
//! automaton either transmits (counter already zero) or decrements the
//! counter, so a counter `c` on a continuously idle medium transmits at
//! `idle_start + wait + c * slot`. A busy edge at time `t` keeps every
//! boundary `<= t`; a boundary only needs the medium idle strictly before it.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::phy::Width;
use crate::sim::{RngStream, SimTime};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessMethod {
    /// Single-channel access on the primary only.
    Edca,
    /// Countdown on the primary; bond if the secondary was idle for PIFS.
    BondN,
    /// Countdown on both channels; always transmit bonded.
    BondBd,
    /// As `BondBd`, but retreat to the primary when the secondary turns busy.
    BondBdFallback,
}

impl AccessMethod {
    pub const ALL: [AccessMethod; 4] = [
        AccessMethod::Edca,
        AccessMethod::BondN,
        AccessMethod::BondBd,
        AccessMethod::BondBdFallback,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AccessMethod::Edca => "edca",
            AccessMethod::BondN => "bond_n",
            AccessMethod::BondBd => "bond_bd",
            AccessMethod::BondBdFallback => "bond_bd_fallback",
        }
    }
}

impl fmt::Display for AccessMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AccessMethod {
    type Err = MacError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "edca" => Ok(AccessMethod::Edca),
            "bond_n" | "n" => Ok(AccessMethod::BondN),
            "bond_bd" | "bd" => Ok(AccessMethod::BondBd),
            "bond_bd_fallback" | "bd_fallback" => Ok(AccessMethod::BondBdFallback),
            other => Err(MacError::UnknownMethod(other.to_string())),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MacError {
    #[error("unknown access method `{0}`")]
    UnknownMethod(String),
    #[error("contention window {0} is not one of 15, 31, 63, 127, 255, 511, 1023")]
    NonStandardCw(u32),
    #[error("invalid MAC timings: {0}")]
    InvalidTimings(&'static str),
}

/// Interframe timings in microseconds (10 MHz OFDM defaults).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MacTimings {
    pub slot_us: u64,
    pub sifs_us: u64,
    pub aifs_us: u64,
    pub pifs_us: u64,
    pub eifs_us: u64,
}

impl Default for MacTimings {
    fn default() -> Self {
        Self { slot_us: 13, sifs_us: 32, aifs_us: 58, pifs_us: 45, eifs_us: 188 }
    }
}

impl MacTimings {
    pub fn validate(&self) -> Result<(), MacError> {
        if self.slot_us == 0 {
            return Err(MacError::InvalidTimings("slot must be positive"));
        }
        if self.pifs_us != self.sifs_us + self.slot_us {
            return Err(MacError::InvalidTimings("pifs must equal sifs + slot"));
        }
        if self.aifs_us < self.sifs_us + 2 * self.slot_us
            || !(self.aifs_us - self.sifs_us).is_multiple_of(self.slot_us)
        {
            return Err(MacError::InvalidTimings("aifs must be sifs + n * slot with n >= 2"));
        }
        if self.eifs_us <= self.aifs_us {
            return Err(MacError::InvalidTimings("eifs must exceed aifs"));
        }
        Ok(())
    }

    fn slot(&self) -> SimTime {
        SimTime(self.slot_us)
    }

    fn wait(&self, decoded: bool) -> SimTime {
        SimTime(if decoded { self.aifs_us } else { self.eifs_us })
    }
}

/// Contention window; constant for broadcast traffic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ContentionWindow(u32);

impl ContentionWindow {
    pub const STANDARD: [u32; 7] = [15, 31, 63, 127, 255, 511, 1023];

    /// A window from the set permitted for 802.11bd.
    pub fn standard(cw: u32) -> Result<Self, MacError> {
        if Self::STANDARD.contains(&cw) {
            Ok(Self(cw))
        } else {
            Err(MacError::NonStandardCw(cw))
        }
    }

    /// Any non-negative window, for exploratory sweeps.
    pub fn research(cw: u32) -> Self {
        Self(cw)
    }

    pub fn value(self) -> u32 {
        self.0
    }
}

/// Uniform backoff draw over `[0, cw]`.
pub fn draw_backoff(cw: ContentionWindow, rng: &mut RngStream) -> u32 {
    rng.uniform_inclusive(cw.0)
}

/// Sensed state of one channel as delivered to an automaton.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sense {
    pub busy: bool,
    /// Meaningful on busy-to-idle transitions: whether the busy period ended
    /// with a successfully decoded frame.
    pub decoded: bool,
}

impl Sense {
    pub const IDLE: Sense = Sense { busy: false, decoded: true };

    pub fn busy() -> Self {
        Sense { busy: true, decoded: false }
    }

    pub fn idle(decoded: bool) -> Self {
        Sense { busy: false, decoded }
    }
}

/// Externally visible automaton state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AccessState {
    Idle,
    Defer,
    Countdown,
    Suspended,
    Tx,
    FallbackCountdown,
}

impl AccessState {
    pub fn as_str(self) -> &'static str {
        match self {
            AccessState::Idle => "IDLE",
            AccessState::Defer => "DEFER",
            AccessState::Countdown => "COUNTDOWN",
            AccessState::Suspended => "SUSPENDED",
            AccessState::Tx => "TX",
            AccessState::FallbackCountdown => "FALLBACK_COUNTDOWN",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ChannelTrack {
    busy: bool,
    /// Time of the last transition.
    since: SimTime,
    /// Start of the idle period that preceded the current busy period.
    idle_before: SimTime,
    last_decoded: bool,
}

impl ChannelTrack {
    fn new() -> Self {
        Self { busy: false, since: SimTime::ZERO, idle_before: SimTime::ZERO, last_decoded: true }
    }

    /// Returns `Some(decoded)` on a busy-to-idle transition.
    fn apply(&mut self, now: SimTime, sense: Sense) -> Option<bool> {
        match (self.busy, sense.busy) {
            (false, true) => {
                self.idle_before = self.since;
                self.since = now;
                self.busy = true;
                None
            }
            (true, false) => {
                self.since = now;
                self.busy = false;
                self.last_decoded = sense.decoded;
                Some(sense.decoded)
            }
            _ => None,
        }
    }

    /// Length of the idle period ending at `now`, ignoring a busy period that
    /// starts exactly at `now`.
    fn idle_before(&self, now: SimTime) -> SimTime {
        if !self.busy {
            now - self.since
        } else if self.since == now {
            now - self.idle_before
        } else {
            SimTime::ZERO
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    NoFrame,
    /// Medium idle; slot boundaries at `grid + k * slot`, transmission at
    /// `grid + counter * slot`.
    Active { grid: SimTime, counter: u32 },
    Suspended { counter: u32 },
    Transmitting,
}

/// Snapshot of everything that drives transmission timing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccessSnapshot {
    pub state: AccessState,
    pub counter: Option<u32>,
    pub deadline: Option<SimTime>,
    pub fallen_back: bool,
}

#[derive(Debug, Clone)]
pub struct AccessAutomaton {
    method: AccessMethod,
    timings: MacTimings,
    primary: ChannelTrack,
    secondary: ChannelTrack,
    /// Either channel busy.
    combined_busy: bool,
    combined_idle_since: SimTime,
    /// A channel episode ended undecoded during the current combined episode.
    combined_undecoded: bool,
    combined_last_decoded: bool,
    phase: Phase,
    head_since: SimTime,
    fallen_back: bool,
}

impl AccessAutomaton {
    pub fn new(method: AccessMethod, timings: MacTimings) -> Self {
        Self {
            method,
            timings,
            primary: ChannelTrack::new(),
            secondary: ChannelTrack::new(),
            combined_busy: false,
            combined_idle_since: SimTime::ZERO,
            combined_undecoded: false,
            combined_last_decoded: true,
            phase: Phase::NoFrame,
            head_since: SimTime::ZERO,
            fallen_back: false,
        }
    }

    pub fn method(&self) -> AccessMethod {
        self.method
    }

    pub fn has_frame(&self) -> bool {
        !matches!(self.phase, Phase::NoFrame)
    }

    pub fn is_transmitting(&self) -> bool {
        matches!(self.phase, Phase::Transmitting)
    }

    pub fn fallen_back(&self) -> bool {
        self.fallen_back
    }

    /// Counter as of `now` (boundaries up to `now` applied).
    pub fn counter_at(&self, now: SimTime) -> Option<u32> {
        match self.phase {
            Phase::Active { grid, counter } => Some(counter - self.boundaries_through(grid, counter, now)),
            Phase::Suspended { counter } => Some(counter),
            _ => None,
        }
    }

    pub fn state_at(&self, now: SimTime) -> AccessState {
        match self.phase {
            Phase::NoFrame => AccessState::Idle,
            Phase::Transmitting => AccessState::Tx,
            Phase::Suspended { .. } => AccessState::Suspended,
            Phase::Active { .. } if self.fallen_back => AccessState::FallbackCountdown,
            Phase::Active { grid, .. } if now < grid => AccessState::Defer,
            Phase::Active { .. } => AccessState::Countdown,
        }
    }

    pub fn snapshot(&self, now: SimTime) -> AccessSnapshot {
        AccessSnapshot {
            state: self.state_at(now),
            counter: self.counter_at(now),
            deadline: self.deadline(),
            fallen_back: self.fallen_back,
        }
    }

    /// Instant of the next transmission if the sensed medium stays as it is.
    pub fn deadline(&self) -> Option<SimTime> {
        match self.phase {
            Phase::Active { grid, counter } => {
                Some(grid + SimTime(u64::from(counter) * self.timings.slot_us))
            }
            _ => None,
        }
    }

    fn boundaries_through(&self, grid: SimTime, counter: u32, now: SimTime) -> u32 {
        if now < grid {
            return 0;
        }
        let n = (now - grid).as_micros() / self.timings.slot_us + 1;
        n.min(u64::from(counter)) as u32
    }

    fn uses_secondary(&self) -> bool {
        match self.method {
            AccessMethod::Edca | AccessMethod::BondN => false,
            AccessMethod::BondBd => true,
            AccessMethod::BondBdFallback => !self.fallen_back,
        }
    }

    fn view_busy(&self) -> bool {
        if self.uses_secondary() {
            self.combined_busy
        } else {
            self.primary.busy
        }
    }

    /// First slot boundary after the view turned idle.
    fn resume_grid(&self) -> SimTime {
        let (idle_since, decoded) = if self.uses_secondary() {
            (self.combined_idle_since, self.combined_last_decoded)
        } else {
            (self.primary.since, self.primary.last_decoded)
        };
        (idle_since + self.timings.wait(decoded)).max(self.head_since + SimTime(self.timings.aifs_us))
    }

    /// A new frame reaches the head of the queue with a fresh backoff draw.
    pub fn start_access(&mut self, now: SimTime, backoff: u32) {
        debug_assert!(!self.has_frame(), "start_access while a frame is pending");
        self.head_since = now;
        self.fallen_back = false;
        self.phase = Phase::Suspended { counter: backoff };
        self.reevaluate(now);
    }

    /// Delivers the sensed state of both channels at `now`.
    pub fn on_channels(&mut self, now: SimTime, primary: Sense, secondary: Sense) {
        let p_end = self.primary.apply(now, primary);
        let s_end = self.secondary.apply(now, secondary);
        if !self.combined_busy {
            if self.primary.busy || self.secondary.busy {
                self.combined_busy = true;
                self.combined_undecoded = false;
            }
        } else {
            if p_end == Some(false) || s_end == Some(false) {
                self.combined_undecoded = true;
            }
            if !self.primary.busy && !self.secondary.busy {
                self.combined_busy = false;
                self.combined_idle_since = now;
                self.combined_last_decoded = !self.combined_undecoded;
            }
        }
        if self.deadline() == Some(now) {
            // transmission at this boundary was decided on the medium before `now`
            return;
        }
        self.reevaluate(now);
    }

    fn reevaluate(&mut self, now: SimTime) {
        if matches!(self.phase, Phase::NoFrame | Phase::Transmitting) {
            return;
        }
        if self.method == AccessMethod::BondBdFallback
            && !self.fallen_back
            && !self.primary.busy
            && self.secondary.busy
        {
            self.fallen_back = true;
            let counting = matches!(self.phase, Phase::Active { grid, .. } if grid <= now);
            if !counting {
                let counter = self.counter_at(now).expect("frame pending");
                let grid = self.resume_grid().max(now + SimTime(1));
                self.phase = Phase::Active { grid, counter };
            }
            return;
        }
        match (self.phase, self.view_busy()) {
            (Phase::Active { grid, counter }, true) => {
                let left = counter - self.boundaries_through(grid, counter, now);
                self.phase = Phase::Suspended { counter: left };
            }
            (Phase::Suspended { counter }, false) => {
                self.phase = Phase::Active { grid: self.resume_grid(), counter };
            }
            _ => {}
        }
    }

    /// Transmission width for a deadline reached at `now`.
    pub fn width_at(&self, now: SimTime) -> Width {
        match self.method {
            AccessMethod::Edca => Width::Mhz10,
            AccessMethod::BondN => {
                if self.secondary.idle_before(now) >= SimTime(self.timings.pifs_us) {
                    Width::Mhz20
                } else {
                    Width::Mhz10
                }
            }
            AccessMethod::BondBd => Width::Mhz20,
            AccessMethod::BondBdFallback => {
                if self.fallen_back {
                    Width::Mhz10
                } else {
                    Width::Mhz20
                }
            }
        }
    }

    /// The deadline has been reached: start transmitting.
    pub fn fire(&mut self, now: SimTime) -> Width {
        assert_eq!(self.deadline(), Some(now), "fire outside the transmission boundary");
        let width = self.width_at(now);
        self.phase = Phase::Transmitting;
        width
    }

    /// Own transmission finished; the frame leaves the automaton.
    pub fn finish_tx(&mut self) {
        debug_assert!(self.is_transmitting());
        self.phase = Phase::NoFrame;
        self.fallen_back = false;
    }

    /// Lost an internal tie against a sibling automaton on the same radio:
    /// draw a new counter and keep contending from the next slot boundary.
    pub fn redraw(&mut self, now: SimTime, backoff: u32) {
        assert_eq!(self.deadline(), Some(now), "redraw outside the transmission boundary");
        self.phase = Phase::Active { grid: now + self.timings.slot(), counter: backoff };
    }
}
