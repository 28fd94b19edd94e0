//! One simulation run: stations on the highway contending for the two
//! channels, driven by the event engine.
//!
//! Sensed channel changes are delivered to the access automata once per
//! tick, after every event at that instant has executed. Transmissions that
//! start in the same microsecond therefore cannot sense each other.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mac::{draw_backoff, AccessAutomaton, AccessMethod, AccessState, ContentionWindow, MacError, MacTimings, Sense};
use crate::medium::{FrameTransmission, Medium, MsgId, ReceiverProfile};
use crate::metrics::{
    max_ratio, percentile, plr, service_summary, DropRecord, MetricLedger, SatisfactionThresholds, Service,
    ServiceSummary, TxRecord,
};
use crate::phy::{frame_duration, ChannelSet, McsConfig, PathLossParams, PhyError, RadioConfig, Width};
use crate::scenario::{
    advance_mobility, build_topology, cpm_size, traffic_streams, CaseAssignment, HighwayConfig, MsgType, QueueKind,
    ScenarioError, SizeRule, StationId, StationKind, StationState, TrafficProfile, TrafficStream,
};
use crate::sim::{EventHandle, RngStream, Scheduler, SimTime};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Phy(#[from] PhyError),
    #[error(transparent)]
    Mac(#[from] MacError),
    #[error("invalid run parameters: {0}")]
    InvalidParams(&'static str),
}

/// Every physical, protocol and scenario parameter of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimParams {
    pub duration_s: f64,
    /// Messages generated before this instant are not accounted.
    pub warmup_s: f64,
    pub mobility_step_ms: u64,
    /// Queued messages older than this are discarded when they reach the head.
    pub queue_lifetime_ms: u64,
    pub radio: RadioConfig,
    pub path_loss: PathLossParams,
    pub mcs: McsConfig,
    pub mac: MacTimings,
    pub highway: HighwayConfig,
    pub traffic: TrafficProfile,
    pub thresholds: SatisfactionThresholds,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            duration_s: 60.0,
            warmup_s: 2.0,
            mobility_step_ms: 100,
            queue_lifetime_ms: 500,
            radio: RadioConfig::default(),
            path_loss: PathLossParams::default(),
            mcs: McsConfig::default(),
            mac: MacTimings::default(),
            highway: HighwayConfig::default(),
            traffic: TrafficProfile::default(),
            thresholds: SatisfactionThresholds::default(),
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.duration_s > 0.0) {
            return Err(SimError::InvalidParams("duration must be positive"));
        }
        if !(self.warmup_s >= 0.0) || self.warmup_s >= self.duration_s {
            return Err(SimError::InvalidParams("warm-up must be non-negative and shorter than the run"));
        }
        if self.mobility_step_ms == 0 || self.queue_lifetime_ms == 0 {
            return Err(SimError::InvalidParams("mobility step and queue lifetime must be positive"));
        }
        self.radio.validate()?;
        self.path_loss.validate()?;
        self.mac.validate()?;
        self.highway.validate()?;
        self.traffic.validate()?;
        Ok(())
    }
}

/// Coordinates of one run within a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RunPoint {
    pub method: AccessMethod,
    pub case: CaseAssignment,
    pub cw: ContentionWindow,
    pub n_vehicles: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub trace: bool,
    /// Keep one record per intended reception (needed to recount loss ratios).
    pub keep_rx_log: bool,
}

/// An automaton state change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TraceRecord {
    pub time_us: u64,
    pub station: u32,
    pub queue: &'static str,
    pub from: AccessState,
    pub to: AccessState,
    pub counter: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct TypeStats {
    pub messages: u64,
    pub intended: u64,
    pub decoded: u64,
    pub dropped: u64,
    pub plr: Option<f64>,
    pub delay_p50_ms: Option<f64>,
    pub delay_p95_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    /// Indexed by [`MsgType::index`].
    pub types: [TypeStats; 4],
    /// Indexed by [`Service::index`].
    pub services: [ServiceSummary; 3],
    pub max_unsatisfied_ratio: f64,
}

impl RunSummary {
    pub fn from_ledger(ledger: &MetricLedger, thresholds: &SatisfactionThresholds) -> Self {
        let types = MsgType::ALL.map(|m| {
            let delays = ledger.delays(m);
            let ms = |p: f64| percentile(&delays, p).map(|d| d.as_millis_f64());
            TypeStats {
                messages: ledger.messages(m),
                intended: ledger.intended(m),
                decoded: ledger.decoded(m),
                dropped: ledger.drops().iter().filter(|d| d.msg_type == m).count() as u64,
                plr: plr(m, ledger),
                delay_p50_ms: ms(50.0),
                delay_p95_ms: ms(95.0),
            }
        });
        let services = Service::ALL.map(|s| service_summary(s, ledger, thresholds));
        let max_unsatisfied_ratio = max_ratio(services.iter().map(ServiceSummary::ratio));
        Self { types, services, max_unsatisfied_ratio }
    }

    pub fn of_type(&self, m: MsgType) -> &TypeStats {
        &self.types[m.index()]
    }

    pub fn of_service(&self, s: Service) -> &ServiceSummary {
        &self.services[s.index()]
    }
}

pub struct RunOutput {
    pub point: RunPoint,
    pub ledger: MetricLedger,
    pub summary: RunSummary,
    pub trace: Vec<TraceRecord>,
    pub stations: Vec<StationState>,
    pub events: u64,
}

#[derive(Debug, Clone, Copy)]
enum Event {
    Generate(u32),
    Deadline { station: u32, unit: u8 },
    TxEnd { station: u32 },
    Mobility,
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    msg_id: MsgId,
    msg_type: MsgType,
    bytes: u32,
    enqueue: SimTime,
}

struct MacUnit {
    kind: QueueKind,
    automaton: AccessAutomaton,
    rng: RngStream,
    queue: VecDeque<Pending>,
    head_time: SimTime,
    deadline: Option<(SimTime, EventHandle)>,
}

struct InFlight {
    unit: usize,
    msg: Pending,
    head_time: SimTime,
    send_time: SimTime,
    airtime: SimTime,
    width: Width,
    intended: Vec<StationId>,
}

struct Node {
    units: Vec<MacUnit>,
    in_flight: Option<InFlight>,
}

/// RNG stream layout: 0 topology, then four per station.
fn station_stream(station: StationId, slot: u64) -> u64 {
    1 + 4 * u64::from(station.0) + slot
}

struct Simulation<'a> {
    params: &'a SimParams,
    cw: ContentionWindow,
    stations: Vec<StationState>,
    nodes: Vec<Node>,
    streams: Vec<(TrafficStream, u64)>,
    medium: Medium,
    ledger: MetricLedger,
    sched: Scheduler<Event>,
    next_msg: u64,
    warmup: SimTime,
    end: SimTime,
    trace: Option<Vec<TraceRecord>>,
}

/// Runs one sweep point to completion.
pub fn run(params: &SimParams, point: RunPoint, options: RunOptions) -> Result<RunOutput, SimError> {
    params.validate()?;
    let mut sim = Simulation::new(params, point, options)?;
    let events = sim.run()?;
    let summary = RunSummary::from_ledger(&sim.ledger, &params.thresholds);
    Ok(RunOutput {
        point,
        summary,
        ledger: sim.ledger,
        trace: sim.trace.unwrap_or_default(),
        stations: sim.stations,
        events,
    })
}

/// Station layout of a sweep point, as the run would build it.
pub fn topology(params: &SimParams, point: &RunPoint) -> Result<Vec<StationState>, SimError> {
    let mut rng = RngStream::new(point.seed, 0);
    Ok(build_topology(point.n_vehicles, &params.highway, point.case, &mut rng)?)
}

impl<'a> Simulation<'a> {
    fn new(params: &'a SimParams, point: RunPoint, options: RunOptions) -> Result<Self, SimError> {
        let stations = topology(params, &point)?;
        let mut nodes = Vec::with_capacity(stations.len());
        let mut streams = Vec::new();
        for s in &stations {
            let mut phase_rng = RngStream::new(point.seed, station_stream(s.id, 0));
            for stream in traffic_streams(s, &params.traffic, point.case, &mut phase_rng) {
                streams.push((stream, 0));
            }
            let unit = |kind, method, slot| MacUnit {
                kind,
                automaton: AccessAutomaton::new(method, params.mac),
                rng: RngStream::new(point.seed, station_stream(s.id, slot)),
                queue: VecDeque::new(),
                head_time: SimTime::ZERO,
                deadline: None,
            };
            let mut units = vec![unit(QueueKind::Edca, AccessMethod::Edca, 1)];
            if s.kind == StationKind::Vehicle {
                units.push(unit(QueueKind::Bonding, point.method, 2));
            }
            nodes.push(Node { units, in_flight: None });
        }
        let profiles = stations
            .iter()
            .map(|s| ReceiverProfile { primary: s.primary, decodes_bonded: s.kind == StationKind::Vehicle })
            .collect();
        let positions: Vec<_> = stations.iter().map(|s| s.position).collect();
        let medium = Medium::new(
            profiles,
            &positions,
            params.radio,
            params.path_loss,
            SimTime(params.mcs.preamble_us),
        );
        let ledger = MetricLedger::new(stations.len(), options.keep_rx_log);
        Ok(Self {
            params,
            cw: point.cw,
            stations,
            nodes,
            streams,
            medium,
            ledger,
            sched: Scheduler::new(),
            next_msg: 0,
            warmup: SimTime::from_secs_f64(params.warmup_s),
            end: SimTime::from_secs_f64(params.duration_s),
            trace: options.trace.then(Vec::new),
        })
    }

    fn run(&mut self) -> Result<u64, SimError> {
        for (i, (stream, _)) in self.streams.iter().enumerate() {
            self.sched.schedule(stream.phase, Event::Generate(i as u32)).expect("phase is in the future");
        }
        self.sched
            .schedule(SimTime::from_millis(self.params.mobility_step_ms), Event::Mobility)
            .expect("future event");
        let mut events = 0u64;
        while let Some((now, event)) = self.sched.pop_until(self.end) {
            events += 1;
            self.handle(now, event)?;
            if self.sched.peek_time().is_none_or(|t| t > now) {
                self.flush(now);
            }
        }
        Ok(events)
    }

    fn handle(&mut self, now: SimTime, event: Event) -> Result<(), SimError> {
        match event {
            Event::Generate(i) => self.generate(now, i as usize),
            Event::Deadline { station, unit } => self.deadline(now, station as usize, unit as usize)?,
            Event::TxEnd { station } => self.tx_end(now, station as usize),
            Event::Mobility => {
                let step = SimTime::from_millis(self.params.mobility_step_ms);
                advance_mobility(&mut self.stations, step, &self.params.highway);
                let positions: Vec<_> = self.stations.iter().map(|s| s.position).collect();
                self.medium.update_positions(&positions);
                self.sched.schedule(now + step, Event::Mobility).expect("future event");
            }
        }
        Ok(())
    }

    fn unit_index(&self, station: usize, kind: QueueKind) -> usize {
        self.nodes[station]
            .units
            .iter()
            .position(|u| u.kind == kind)
            .expect("station has a queue for this stream")
    }

    fn generate(&mut self, now: SimTime, i: usize) {
        let (stream, k) = self.streams[i];
        self.streams[i].1 += 1;
        let st = stream.station.index();
        let bytes = match stream.size {
            SizeRule::Cpm => cpm_size(
                &self.stations[st],
                &self.stations,
                self.params.highway.sensor_range_m,
                &self.params.traffic.cpm,
            ),
            _ => stream.fixed_size(k).expect("fixed-size stream"),
        };
        let msg = Pending { msg_id: MsgId(self.next_msg), msg_type: stream.msg_type, bytes, enqueue: now };
        self.next_msg += 1;
        let u = self.unit_index(st, stream.queue);
        self.nodes[st].units[u].queue.push_back(msg);
        if !self.nodes[st].units[u].automaton.has_frame() {
            self.begin_head(now, st, u);
        }
        let next = stream.instant(k + 1);
        if next <= self.end {
            self.sched.schedule(next, Event::Generate(i as u32)).expect("future event");
        }
    }

    /// Discards expired messages and starts access for the next head of line.
    fn begin_head(&mut self, now: SimTime, st: usize, u: usize) {
        let lifetime = SimTime::from_millis(self.params.queue_lifetime_ms);
        let warmup = self.warmup;
        let unit = &mut self.nodes[st].units[u];
        while let Some(head) = unit.queue.front() {
            if now - head.enqueue <= lifetime {
                break;
            }
            if head.enqueue >= warmup {
                self.ledger.record_drop(DropRecord {
                    msg_type: head.msg_type,
                    sender: StationId(st as u32),
                    enqueue_time: head.enqueue,
                    drop_time: now,
                });
            }
            unit.queue.pop_front();
        }
        if unit.queue.is_empty() {
            return;
        }
        let before = unit.automaton.state_at(now);
        let backoff = draw_backoff(self.cw, &mut unit.rng);
        unit.automaton.start_access(now, backoff);
        unit.head_time = now;
        self.after_change(now, st, u, before);
    }

    /// Re-arms the deadline event and records a trace entry if the state moved.
    fn after_change(&mut self, now: SimTime, st: usize, u: usize, before: AccessState) {
        let unit = &mut self.nodes[st].units[u];
        let want = unit.automaton.deadline();
        if unit.deadline.map(|(t, _)| t) != want {
            if let Some((_, h)) = unit.deadline.take() {
                self.sched.cancel(h);
            }
            if let Some(t) = want {
                let h = self
                    .sched
                    .schedule(t, Event::Deadline { station: st as u32, unit: u as u8 })
                    .expect("deadlines are never in the past");
                unit.deadline = Some((t, h));
            }
        }
        if let Some(trace) = self.trace.as_mut() {
            let after = unit.automaton.state_at(now);
            if after != before {
                trace.push(TraceRecord {
                    time_us: now.as_micros(),
                    station: st as u32,
                    queue: match unit.kind {
                        QueueKind::Edca => "edca",
                        QueueKind::Bonding => "bonding",
                    },
                    from: before,
                    to: after,
                    counter: unit.automaton.counter_at(now),
                });
            }
        }
    }

    fn redraw(&mut self, now: SimTime, st: usize, u: usize) {
        let unit = &mut self.nodes[st].units[u];
        let before = unit.automaton.state_at(now);
        let backoff = draw_backoff(self.cw, &mut unit.rng);
        unit.automaton.redraw(now, backoff);
        self.after_change(now, st, u, before);
    }

    fn deadline(&mut self, now: SimTime, st: usize, u: usize) -> Result<(), SimError> {
        self.nodes[st].units[u].deadline = None;
        let sibling = (self.nodes[st].units.len() == 2).then_some(1 - u);
        let sibling_due = sibling.filter(|&o| self.nodes[st].units[o].deadline.is_some_and(|(t, _)| t == now));
        if let Some(o) = sibling_due {
            // internal tie: the bonding queue wins, the EDCA queue redraws
            let (winner, loser) = if self.nodes[st].units[u].kind == QueueKind::Bonding { (u, o) } else { (o, u) };
            if let Some((_, h)) = self.nodes[st].units[o].deadline.take() {
                self.sched.cancel(h);
            }
            self.redraw(now, st, loser);
            return self.transmit(now, st, winner);
        }
        if self.medium.is_transmitting(StationId(st as u32)) {
            self.redraw(now, st, u);
            return Ok(());
        }
        self.transmit(now, st, u)
    }

    fn intended_receivers(&self, sender: usize, msg_type: MsgType) -> Vec<StationId> {
        let tx = &self.stations[sender];
        let range = self.params.highway.satisfaction_range_m;
        self.stations
            .iter()
            .filter(|r| {
                r.id != tx.id
                    && r.side == tx.side
                    && (msg_type == MsgType::Bsm || r.kind == StationKind::Vehicle)
                    && tx.position.distance(&r.position) <= range
            })
            .map(|r| r.id)
            .collect()
    }

    fn transmit(&mut self, now: SimTime, st: usize, u: usize) -> Result<(), SimError> {
        let primary = self.stations[st].primary;
        let unit = &mut self.nodes[st].units[u];
        let before = unit.automaton.state_at(now);
        let width = unit.automaton.fire(now);
        let msg = unit.queue.pop_front().expect("head of line present while contending");
        let head_time = unit.head_time;
        let airtime = frame_duration(msg.bytes, width, &self.params.mcs)?;
        self.after_change(now, st, u, before);

        let intended = self.intended_receivers(st, msg.msg_type);
        self.medium.start_tx(FrameTransmission {
            msg_id: msg.msg_id,
            sender: StationId(st as u32),
            channels: ChannelSet::for_width(primary, width),
            start: now,
            duration: airtime,
            payload_bytes: msg.bytes,
            msg_type: msg.msg_type,
        });
        self.nodes[st].in_flight = Some(InFlight { unit: u, msg, head_time, send_time: now, airtime, width, intended });
        self.sched.schedule(now + airtime, Event::TxEnd { station: st as u32 }).expect("future event");
        Ok(())
    }

    fn tx_end(&mut self, now: SimTime, st: usize) {
        let f = self.nodes[st].in_flight.take().expect("transmission in flight");
        let reception = self.medium.end_tx(f.msg.msg_id);
        if f.msg.enqueue >= self.warmup {
            let decoded = &reception.decoded_by;
            let record = TxRecord {
                msg_id: f.msg.msg_id,
                msg_type: f.msg.msg_type,
                sender: StationId(st as u32),
                enqueue_time: f.msg.enqueue,
                head_time: f.head_time,
                send_time: f.send_time,
                airtime: f.airtime,
                width: f.width,
                payload_bytes: f.msg.bytes,
                intended: 0,
                decoded: 0,
            };
            self.ledger.record(record, f.intended.iter().map(|r| (*r, decoded.binary_search(r).is_ok())));
        }
        let unit = &mut self.nodes[st].units[f.unit];
        let before = unit.automaton.state_at(now);
        unit.automaton.finish_tx();
        self.after_change(now, st, f.unit, before);
        self.begin_head(now, st, f.unit);
    }

    fn flush(&mut self, now: SimTime) {
        for station in self.medium.take_dirty() {
            let st = station.index();
            let primary = self.stations[st].primary;
            let sense = |ch| Sense { busy: self.medium.busy(station, ch), decoded: self.medium.episode_decoded(station, ch) };
            let (p, s) = (sense(primary), sense(primary.other()));
            for u in 0..self.nodes[st].units.len() {
                let unit = &mut self.nodes[st].units[u];
                let before = unit.automaton.state_at(now);
                unit.automaton.on_channels(now, p, s);
                self.after_change(now, st, u, before);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(method: AccessMethod, n: u32, case: CaseAssignment) -> RunPoint {
        RunPoint { method, case, cw: ContentionWindow::standard(15).unwrap(), n_vehicles: n, seed: 1 }
    }

    fn short() -> SimParams {
        SimParams { duration_s: 3.0, warmup_s: 0.5, ..SimParams::default() }
    }

    #[test]
    fn small_run_delivers_traffic() {
        let out = run(&short(), point(AccessMethod::BondN, 10, CaseAssignment::Symmetric), RunOptions::default()).unwrap();
        let bsm = out.summary.of_type(MsgType::Bsm);
        assert!(bsm.messages > 200, "{bsm:?}");
        assert!(bsm.plr.unwrap() < 0.5);
        assert!(out.summary.of_type(MsgType::Cpm).messages > 200);
        assert!(out.summary.of_type(MsgType::SpatMap).messages > 100);
        assert!(out.summary.of_type(MsgType::Wsa).messages > 0);
        assert!(out.events > 1000);
    }

    #[test]
    fn runs_are_deterministic() {
        let p = point(AccessMethod::BondBdFallback, 20, CaseAssignment::Asymmetric);
        let a = run(&short(), p, RunOptions::default()).unwrap();
        let b = run(&short(), p, RunOptions::default()).unwrap();
        assert_eq!(a.summary, b.summary);
        assert_eq!(a.ledger.tx_records(), b.ledger.tx_records());
        assert_eq!(a.events, b.events);
    }

    #[test]
    fn bd_only_sends_bonded_cpms() {
        let out = run(&short(), point(AccessMethod::BondBd, 20, CaseAssignment::Symmetric), RunOptions::default()).unwrap();
        for r in out.ledger.tx_records() {
            match r.msg_type {
                MsgType::Cpm => assert_eq!(r.width, Width::Mhz20),
                _ => assert_eq!(r.width, Width::Mhz10),
            }
        }
    }

    #[test]
    fn edca_never_bonds() {
        let out = run(&short(), point(AccessMethod::Edca, 20, CaseAssignment::Symmetric), RunOptions::default()).unwrap();
        assert!(out.ledger.tx_records().iter().all(|r| r.width == Width::Mhz10));
    }

    #[test]
    fn trace_records_transitions() {
        let out = run(
            &SimParams { duration_s: 0.5, warmup_s: 0.0, ..SimParams::default() },
            point(AccessMethod::BondBdFallback, 10, CaseAssignment::Symmetric),
            RunOptions { trace: true, keep_rx_log: false },
        )
        .unwrap();
        assert!(!out.trace.is_empty());
        assert!(out.trace.windows(2).all(|w| w[0].time_us <= w[1].time_us));
        assert!(out.trace.iter().any(|t| t.to == AccessState::Tx));
    }

    #[test]
    fn odd_vehicle_count_is_rejected() {
        let err = run(&short(), point(AccessMethod::Edca, 3, CaseAssignment::Symmetric), RunOptions::default());
        assert!(matches!(err, Err(SimError::Scenario(ScenarioError::OddVehicleCount(3)))));
    }
}
