//! Shared wireless medium: per-receiver energy bookkeeping on both channels,
//! carrier sensing, preamble locking and SINR-threshold decoding.
//!
//! Received powers are kept as integer quanta of 1e-18 mW so that adding and
//! removing a frame's contribution is exact; energy returns to the noise
//! floor once every frame has ended.

use crate::phy::{
    db_to_linear, dbm_to_mw, path_loss, ChannelId, ChannelSet, PathLossParams, Position,
    RadioConfig, Width,
};
use crate::scenario::{MsgType, StationId};
use crate::sim::SimTime;
use serde::Serialize;

const QUANTA_PER_MW: f64 = 1e18;

fn dbm_to_quanta(dbm: f64) -> u64 {
    (dbm_to_mw(dbm) * QUANTA_PER_MW).round() as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct MsgId(pub u64);

/// A frame on the air.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTransmission {
    pub msg_id: MsgId,
    pub sender: StationId,
    pub channels: ChannelSet,
    pub start: SimTime,
    pub duration: SimTime,
    pub payload_bytes: u32,
    pub msg_type: MsgType,
}

impl FrameTransmission {
    pub fn end(&self) -> SimTime {
        self.start + self.duration
    }

    pub fn width(&self) -> Width {
        self.channels.width()
    }
}

/// What a receiver is able to decode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReceiverProfile {
    pub primary: ChannelId,
    /// 802.11p stations detect the duplicated legacy preamble of a bonded
    /// frame but cannot decode its payload.
    pub decodes_bonded: bool,
}

#[derive(Debug, Clone)]
struct Lock {
    msg: MsgId,
    channels: ChannelSet,
    preamble_end: SimTime,
    signal: u64,
    max_interference: [u64; 2],
}

#[derive(Debug, Clone, Default)]
struct RxState {
    energy: [u64; 2],
    transmitting: Option<ChannelSet>,
    lock: Option<Lock>,
    busy: [bool; 2],
    episode_ok: [bool; 2],
}

#[derive(Debug, Clone)]
struct ActiveFrame {
    frame: FrameTransmission,
    /// Per-receiver, per-channel contribution in quanta.
    contribution: Vec<u64>,
}

/// Outcome of a frame once it has left the air.
#[derive(Debug, Clone)]
pub struct Reception {
    pub frame: FrameTransmission,
    pub decoded_by: Vec<StationId>,
}

pub struct Medium {
    profiles: Vec<ReceiverProfile>,
    path: PathLossParams,
    radio: RadioConfig,
    /// Row-major `[sender * n + receiver]` per-channel received power.
    gain_narrow: Vec<u64>,
    gain_wide: Vec<u64>,
    rx: Vec<RxState>,
    active: Vec<ActiveFrame>,
    dirty: Vec<StationId>,
    is_dirty: Vec<bool>,
    ed_quanta: u64,
    pd_quanta: u64,
    noise_quanta: f64,
    snr_linear: f64,
    preamble: SimTime,
}

impl Medium {
    pub fn new(
        profiles: Vec<ReceiverProfile>,
        positions: &[Position],
        radio: RadioConfig,
        path: PathLossParams,
        preamble: SimTime,
    ) -> Self {
        assert_eq!(profiles.len(), positions.len());
        let n = profiles.len();
        let mut medium = Self {
            profiles,
            path,
            radio,
            gain_narrow: vec![0; n * n],
            gain_wide: vec![0; n * n],
            rx: vec![RxState::default(); n],
            active: Vec::new(),
            dirty: Vec::new(),
            is_dirty: vec![false; n],
            ed_quanta: dbm_to_quanta(radio.ed_threshold_dbm),
            pd_quanta: dbm_to_quanta(radio.pd_threshold_dbm),
            noise_quanta: dbm_to_mw(radio.noise_floor_dbm) * QUANTA_PER_MW,
            snr_linear: db_to_linear(radio.decode_snr_db),
            preamble,
        };
        medium.update_positions(positions);
        medium
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    /// Recomputes the link gains. Frames already on the air keep the
    /// contribution they started with.
    pub fn update_positions(&mut self, positions: &[Position]) {
        let n = self.len();
        let p_narrow = self.radio.channel_power_dbm(Width::Mhz10);
        let p_wide = self.radio.channel_power_dbm(Width::Mhz20);
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                // below the reference distance the model saturates at pl0
                let d = positions[i].distance(&positions[j]).max(self.path.l0_m);
                let pl = path_loss(d, &self.path).expect("distance clamped to reference");
                self.gain_narrow[i * n + j] = dbm_to_quanta(p_narrow - pl);
                self.gain_wide[i * n + j] = dbm_to_quanta(p_wide - pl);
            }
        }
    }

    /// Per-channel received power at `rx` of a frame of `width` sent by `tx`, dBm.
    pub fn link_power_dbm(&self, tx: StationId, rx: StationId, width: Width) -> f64 {
        let n = self.len();
        let q = match width {
            Width::Mhz10 => self.gain_narrow[tx.index() * n + rx.index()],
            Width::Mhz20 => self.gain_wide[tx.index() * n + rx.index()],
        };
        10.0 * (q as f64 / QUANTA_PER_MW).log10()
    }

    pub fn busy(&self, station: StationId, ch: ChannelId) -> bool {
        self.rx[station.index()].busy[ch.index()]
    }

    /// Whether the most recent busy episode on `ch` ended with a decoded frame
    /// (or this station's own transmission).
    pub fn episode_decoded(&self, station: StationId, ch: ChannelId) -> bool {
        self.rx[station.index()].episode_ok[ch.index()]
    }

    pub fn energy_dbm(&self, station: StationId, ch: ChannelId) -> f64 {
        let q = self.rx[station.index()].energy[ch.index()] as f64 + self.noise_quanta;
        10.0 * (q / QUANTA_PER_MW).log10()
    }

    /// Energy above the noise floor, in quanta.
    pub fn excess_energy_quanta(&self, station: StationId, ch: ChannelId) -> u64 {
        self.rx[station.index()].energy[ch.index()]
    }

    pub fn is_transmitting(&self, station: StationId) -> bool {
        self.rx[station.index()].transmitting.is_some()
    }

    pub fn locked_on(&self, station: StationId) -> Option<MsgId> {
        self.rx[station.index()].lock.as_ref().map(|l| l.msg)
    }

    pub fn active_frames(&self) -> impl Iterator<Item = &FrameTransmission> {
        self.active.iter().map(|a| &a.frame)
    }

    /// Stations whose sensed channel state may have changed since the last call.
    pub fn take_dirty(&mut self) -> Vec<StationId> {
        for s in &self.dirty {
            self.is_dirty[s.index()] = false;
        }
        std::mem::take(&mut self.dirty)
    }

    fn sinr_ok(&self, signal: u64, interference: u64) -> bool {
        signal as f64 >= self.snr_linear * (self.noise_quanta + interference as f64)
    }

    fn refresh_busy(&mut self, r: usize) {
        let primary = self.profiles[r].primary;
        let st = &mut self.rx[r];
        let mut changed = false;
        for ch in ChannelId::ALL {
            let c = ch.index();
            let own = st.transmitting.is_some_and(|set| set.contains(ch));
            let locked = ch == primary && st.lock.is_some();
            let busy = own || st.energy[c] > self.ed_quanta || locked;
            if busy != st.busy[c] {
                if busy {
                    st.episode_ok[c] = false;
                }
                st.busy[c] = busy;
                changed = true;
            }
        }
        if changed && !self.is_dirty[r] {
            self.is_dirty[r] = true;
            self.dirty.push(StationId(r as u32));
        }
    }

    fn try_lock(&mut self, r: usize, frame: &FrameTransmission, signal: u64) {
        let primary = self.profiles[r].primary;
        if !frame.channels.contains(primary) || signal < self.pd_quanta {
            return;
        }
        let st = &self.rx[r];
        let interference = st.energy[primary.index()] - signal;
        if !self.sinr_ok(signal, interference) {
            return;
        }
        let mut max_interference = [0; 2];
        for ch in frame.channels.channels() {
            max_interference[ch.index()] = st.energy[ch.index()] - signal;
        }
        self.rx[r].lock = Some(Lock {
            msg: frame.msg_id,
            channels: frame.channels,
            preamble_end: frame.start + self.preamble,
            signal,
            max_interference,
        });
    }

    /// Puts a frame on the air.
    pub fn start_tx(&mut self, frame: FrameTransmission) {
        let n = self.len();
        let s = frame.sender.index();
        let now = frame.start;
        let gains = match frame.width() {
            Width::Mhz10 => &self.gain_narrow,
            Width::Mhz20 => &self.gain_wide,
        };
        let contribution: Vec<u64> = (0..n).map(|r| if r == s { 0 } else { gains[s * n + r] }).collect();

        {
            let st = &mut self.rx[s];
            debug_assert!(st.transmitting.is_none(), "station already transmitting");
            st.transmitting = Some(frame.channels);
            // half-duplex: an ongoing reception is lost
            st.lock = None;
        }
        self.refresh_busy(s);

        for r in 0..n {
            if r == s {
                continue;
            }
            let q = contribution[r];
            for ch in frame.channels.channels() {
                self.rx[r].energy[ch.index()] += q;
            }
            if self.rx[r].transmitting.is_some() {
                self.refresh_busy(r);
                continue;
            }
            let primary = self.profiles[r].primary;
            let energy = self.rx[r].energy;
            let (snr, noise) = (self.snr_linear, self.noise_quanta);
            let mut lost = false;
            if let Some(lock) = self.rx[r].lock.as_mut() {
                for ch in lock.channels.channels() {
                    if frame.channels.contains(ch) {
                        let c = ch.index();
                        lock.max_interference[c] = lock.max_interference[c].max(energy[c] - lock.signal);
                    }
                }
                let in_preamble = now < lock.preamble_end;
                let p = primary.index();
                let (signal, interference) = (lock.signal, energy[p] - lock.signal);
                lost = in_preamble && frame.channels.contains(primary) && (signal as f64) < snr * (noise + interference as f64);
            }
            if lost {
                self.rx[r].lock = None;
            }
            if self.rx[r].lock.is_none() {
                self.try_lock(r, &frame, q);
            }
            self.refresh_busy(r);
        }
        self.active.push(ActiveFrame { frame, contribution });
    }

    /// Takes a frame off the air and reports which stations decoded it.
    pub fn end_tx(&mut self, msg: MsgId) -> Reception {
        let pos = self
            .active
            .iter()
            .position(|a| a.frame.msg_id == msg)
            .expect("ending a frame that is not on the air");
        let ActiveFrame { frame, contribution } = self.active.swap_remove(pos);
        let n = self.len();
        let s = frame.sender.index();
        let mut decoded_by = Vec::new();

        {
            let st = &mut self.rx[s];
            st.transmitting = None;
            for ch in frame.channels.channels() {
                st.episode_ok[ch.index()] = true;
            }
        }
        self.refresh_busy(s);

        for r in 0..n {
            if r == s {
                continue;
            }
            for ch in frame.channels.channels() {
                self.rx[r].energy[ch.index()] -= contribution[r];
            }
            if self.rx[r].lock.as_ref().is_some_and(|l| l.msg == msg) {
                let lock = self.rx[r].lock.take().expect("checked above");
                let capable = frame.width() == Width::Mhz10 || self.profiles[r].decodes_bonded;
                let ok = capable
                    && frame
                        .channels
                        .channels()
                        .all(|ch| self.sinr_ok(lock.signal, lock.max_interference[ch.index()]));
                for ch in frame.channels.channels() {
                    self.rx[r].episode_ok[ch.index()] = ok;
                }
                if ok {
                    decoded_by.push(StationId(r as u32));
                }
            }
            self.refresh_busy(r);
        }
        Reception { frame, decoded_by }
    }
}
