//! Loss ratio, transmission delay and per-station satisfaction.
//!
//! The packet loss ratio of a message type is aggregated over all its
//! transmitted messages: one minus the decoded receptions divided by the
//! intended receptions, where the intended receivers of a message are the
//! eligible stations on the sender's side within the satisfaction range when
//! the frame goes on air.

use serde::{Deserialize, Serialize};

use crate::medium::MsgId;
use crate::phy::Width;
use crate::scenario::{MsgType, StationId};
use crate::sim::SimTime;

/// A delivery service whose satisfaction is evaluated. WSA is load only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Service {
    SpatMap,
    Bsm,
    Cpm,
}

impl Service {
    pub const ALL: [Service; 3] = [Service::SpatMap, Service::Bsm, Service::Cpm];

    pub fn of(msg_type: MsgType) -> Option<Service> {
        match msg_type {
            MsgType::Bsm => Some(Service::Bsm),
            MsgType::Cpm => Some(Service::Cpm),
            MsgType::SpatMap => Some(Service::SpatMap),
            MsgType::Wsa => None,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Service::SpatMap => 0,
            Service::Bsm => 1,
            Service::Cpm => 2,
        }
    }

    pub fn msg_type(self) -> MsgType {
        match self {
            Service::SpatMap => MsgType::SpatMap,
            Service::Bsm => MsgType::Bsm,
            Service::Cpm => MsgType::Cpm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SatisfactionThresholds {
    pub spat_map_delay_ms: f64,
    pub bsm_delay_ms: f64,
    pub cpm_delay_ms: f64,
    pub plr: f64,
    /// Percentile of a station's own delays compared with the delay threshold.
    pub delay_percentile: f64,
}

impl Default for SatisfactionThresholds {
    fn default() -> Self {
        Self {
            spat_map_delay_ms: 100.0,
            bsm_delay_ms: 100.0,
            cpm_delay_ms: 10.0,
            plr: 0.10,
            delay_percentile: 95.0,
        }
    }
}

impl SatisfactionThresholds {
    pub fn delay_limit(&self, service: Service) -> SimTime {
        let ms = match service {
            Service::SpatMap => self.spat_map_delay_ms,
            Service::Bsm => self.bsm_delay_ms,
            Service::Cpm => self.cpm_delay_ms,
        };
        SimTime::from_secs_f64(ms * 1e-3)
    }
}

/// One transmitted message.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TxRecord {
    pub msg_id: MsgId,
    pub msg_type: MsgType,
    pub sender: StationId,
    pub enqueue_time: SimTime,
    /// When the message reached the head of its queue and backoff began.
    pub head_time: SimTime,
    pub send_time: SimTime,
    pub airtime: SimTime,
    pub width: Width,
    pub payload_bytes: u32,
    /// Intended receivers (F).
    pub intended: u32,
    /// Intended receivers that decoded the frame (S).
    pub decoded: u32,
}

impl TxRecord {
    pub fn queue_wait(&self) -> SimTime {
        self.head_time - self.enqueue_time
    }

    pub fn backoff(&self) -> SimTime {
        self.send_time - self.head_time
    }
}

/// Queue wait, backoff and airtime of a completed frame.
pub fn tx_delay(record: &TxRecord) -> SimTime {
    (record.send_time - record.enqueue_time) + record.airtime
}

/// One intended reception.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RxRecord {
    pub msg_id: MsgId,
    pub msg_type: MsgType,
    pub receiver: StationId,
    pub success: bool,
}

/// A message discarded from a queue after exceeding its lifetime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DropRecord {
    pub msg_type: MsgType,
    pub sender: StationId,
    pub enqueue_time: SimTime,
    pub drop_time: SimTime,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct TypeSums {
    messages: u64,
    intended: u64,
    decoded: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct ReceiverCounts {
    expected: [u32; 4],
    received: [u32; 4],
}

/// Accumulates transmissions and receptions of one run.
#[derive(Debug, Clone)]
pub struct MetricLedger {
    sums: [TypeSums; 4],
    tx: Vec<TxRecord>,
    drops: Vec<DropRecord>,
    receivers: Vec<ReceiverCounts>,
    rx_log: Option<Vec<RxRecord>>,
}

impl MetricLedger {
    pub fn new(n_stations: usize, keep_rx_log: bool) -> Self {
        Self {
            sums: [TypeSums::default(); 4],
            tx: Vec::new(),
            drops: Vec::new(),
            receivers: vec![ReceiverCounts::default(); n_stations],
            rx_log: keep_rx_log.then(Vec::new),
        }
    }

    /// Records a completed frame together with the outcome at each intended receiver.
    pub fn record(&mut self, mut record: TxRecord, outcomes: impl IntoIterator<Item = (StationId, bool)>) {
        let t = record.msg_type.index();
        let mut intended = 0;
        let mut decoded = 0;
        for (receiver, success) in outcomes {
            intended += 1;
            let counts = &mut self.receivers[receiver.index()];
            counts.expected[t] += 1;
            if success {
                decoded += 1;
                counts.received[t] += 1;
            }
            if let Some(log) = self.rx_log.as_mut() {
                log.push(RxRecord { msg_id: record.msg_id, msg_type: record.msg_type, receiver, success });
            }
        }
        record.intended = intended;
        record.decoded = decoded;
        let sums = &mut self.sums[t];
        sums.messages += 1;
        sums.intended += u64::from(intended);
        sums.decoded += u64::from(decoded);
        self.tx.push(record);
    }

    pub fn record_drop(&mut self, drop: DropRecord) {
        self.drops.push(drop);
    }

    pub fn tx_records(&self) -> &[TxRecord] {
        &self.tx
    }

    pub fn drops(&self) -> &[DropRecord] {
        &self.drops
    }

    pub fn rx_log(&self) -> Option<&[RxRecord]> {
        self.rx_log.as_deref()
    }

    pub fn messages(&self, m: MsgType) -> u64 {
        self.sums[m.index()].messages
    }

    /// Sum of intended receptions (ΣF).
    pub fn intended(&self, m: MsgType) -> u64 {
        self.sums[m.index()].intended
    }

    /// Sum of decoded intended receptions (ΣS).
    pub fn decoded(&self, m: MsgType) -> u64 {
        self.sums[m.index()].decoded
    }

    pub fn station_count(&self) -> usize {
        self.receivers.len()
    }

    /// Intended and decoded receptions of `m` at `station`.
    pub fn receptions(&self, station: StationId, m: MsgType) -> (u32, u32) {
        let c = &self.receivers[station.index()];
        (c.expected[m.index()], c.received[m.index()])
    }

    /// Delays of `station`'s own `m` messages, including the age at drop of
    /// discarded ones.
    pub fn station_delays(&self, station: StationId, m: MsgType) -> Vec<SimTime> {
        self.tx
            .iter()
            .filter(|r| r.sender == station && r.msg_type == m)
            .map(tx_delay)
            .chain(
                self.drops
                    .iter()
                    .filter(|d| d.sender == station && d.msg_type == m)
                    .map(|d| d.drop_time - d.enqueue_time),
            )
            .collect()
    }

    pub fn delays(&self, m: MsgType) -> Vec<SimTime> {
        self.tx
            .iter()
            .filter(|r| r.msg_type == m)
            .map(tx_delay)
            .chain(self.drops.iter().filter(|d| d.msg_type == m).map(|d| d.drop_time - d.enqueue_time))
            .collect()
    }
}

/// `1 - ΣS / ΣF` over per-message (F, S) pairs; `None` when ΣF is zero.
pub fn plr_from_counts(pairs: impl IntoIterator<Item = (u64, u64)>) -> Option<f64> {
    let (f, s) = pairs.into_iter().fold((0u64, 0u64), |(f, s), (fj, sj)| (f + fj, s + sj));
    (f > 0).then(|| 1.0 - s as f64 / f as f64)
}

/// Aggregate loss ratio of message type `m`; `None` if nothing was intended.
pub fn plr(m: MsgType, ledger: &MetricLedger) -> Option<f64> {
    plr_from_counts([(ledger.intended(m), ledger.decoded(m))])
}

/// Nearest-rank percentile of unsorted samples.
pub fn percentile(samples: &[SimTime], pct: f64) -> Option<SimTime> {
    if samples.is_empty() {
        return None;
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    let rank = ((pct / 100.0) * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Satisfaction {
    Satisfied,
    Unsatisfied,
}

/// A station is unsatisfied with a service when the chosen percentile of its
/// own message delays exceeds the delay threshold, or when it missed more than
/// the loss threshold of the messages it should have received. Stations with
/// neither sent nor expected messages of the service are not rated.
pub fn station_satisfaction(
    station: StationId,
    service: Service,
    ledger: &MetricLedger,
    thresholds: &SatisfactionThresholds,
) -> Option<Satisfaction> {
    let m = service.msg_type();
    let (expected, received) = ledger.receptions(station, m);
    rate(&ledger.station_delays(station, m), expected, received, service, thresholds)
}

fn rate(
    delays: &[SimTime],
    expected: u32,
    received: u32,
    service: Service,
    thresholds: &SatisfactionThresholds,
) -> Option<Satisfaction> {
    if delays.is_empty() && expected == 0 {
        return None;
    }
    let late = percentile(delays, thresholds.delay_percentile)
        .is_some_and(|d| d > thresholds.delay_limit(service));
    let lossy = expected > 0 && 1.0 - f64::from(received) / f64::from(expected) > thresholds.plr;
    Some(if late || lossy { Satisfaction::Unsatisfied } else { Satisfaction::Satisfied })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct ServiceSummary {
    pub participants: u32,
    pub unsatisfied: u32,
}

impl ServiceSummary {
    pub fn ratio(&self) -> Option<f64> {
        (self.participants > 0).then(|| f64::from(self.unsatisfied) / f64::from(self.participants))
    }
}

pub fn service_summary(
    service: Service,
    ledger: &MetricLedger,
    thresholds: &SatisfactionThresholds,
) -> ServiceSummary {
    let m = service.msg_type();
    let mut delays = vec![Vec::new(); ledger.station_count()];
    for r in ledger.tx.iter().filter(|r| r.msg_type == m) {
        delays[r.sender.index()].push(tx_delay(r));
    }
    for d in ledger.drops.iter().filter(|d| d.msg_type == m) {
        delays[d.sender.index()].push(d.drop_time - d.enqueue_time);
    }
    let mut summary = ServiceSummary::default();
    for (s, own) in delays.iter().enumerate() {
        let (expected, received) = ledger.receptions(StationId(s as u32), m);
        match rate(own, expected, received, service, thresholds) {
            Some(Satisfaction::Satisfied) => summary.participants += 1,
            Some(Satisfaction::Unsatisfied) => {
                summary.participants += 1;
                summary.unsatisfied += 1;
            }
            None => {}
        }
    }
    summary
}

/// Largest unsatisfied-station ratio over the given per-service ratios.
pub fn max_ratio(ratios: impl IntoIterator<Item = Option<f64>>) -> f64 {
    ratios.into_iter().flatten().fold(0.0, f64::max)
}

/// Worst service's share of unsatisfied stations (SPaT+MAP, BSM, CPM).
pub fn max_unsatisfied_ratio(ledger: &MetricLedger, thresholds: &SatisfactionThresholds) -> f64 {
    max_ratio(Service::ALL.iter().map(|&s| service_summary(s, ledger, thresholds).ratio()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: u64, m: MsgType, sender: u32, enqueue: u64, head: u64, send: u64, air: u64) -> TxRecord {
        TxRecord {
            msg_id: MsgId(id),
            msg_type: m,
            sender: StationId(sender),
            enqueue_time: SimTime(enqueue),
            head_time: SimTime(head),
            send_time: SimTime(send),
            airtime: SimTime(air),
            width: Width::Mhz10,
            payload_bytes: 250,
            intended: 0,
            decoded: 0,
        }
    }

    #[test]
    fn plr_hand_case() {
        let plr = plr_from_counts([(3, 3), (2, 0)]).unwrap();
        assert!((plr - 0.4).abs() < 1e-15);
        assert_eq!(plr_from_counts([(0, 0)]), None);
    }

    #[test]
    fn ledger_plr_extremes_and_hand_case() {
        let mut l = MetricLedger::new(6, true);
        let ok = |r: u32| (StationId(r), true);
        l.record(rec(1, MsgType::Bsm, 0, 0, 0, 100, 496), [ok(1), ok(2), ok(3)]);
        assert_eq!(plr(MsgType::Bsm, &l), Some(0.0));
        l.record(rec(2, MsgType::Bsm, 0, 0, 0, 100, 496), [(StationId(4), false), (StationId(5), false)]);
        assert!((plr(MsgType::Bsm, &l).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(plr(MsgType::Cpm, &l), None);

        let mut none = MetricLedger::new(3, false);
        none.record(rec(3, MsgType::Cpm, 0, 0, 0, 1, 1), [(StationId(1), false), (StationId(2), false)]);
        assert_eq!(plr(MsgType::Cpm, &none), Some(1.0));
        assert_eq!(l.rx_log().unwrap().len(), 5);
        assert!(none.rx_log().is_none());
    }

    #[test]
    fn delay_is_queue_plus_backoff_plus_airtime() {
        let r = rec(1, MsgType::Bsm, 0, 1_000, 1_700, 1_900, 496);
        assert_eq!(r.queue_wait() + r.backoff() + r.airtime, tx_delay(&r));
        assert_eq!(tx_delay(&r), SimTime(1_396));
        // idle channel, zero draw: AIFS then airtime
        let idle = rec(2, MsgType::Bsm, 0, 0, 0, 58, 496);
        assert_eq!(tx_delay(&idle), SimTime(58 + 496));
        assert!(tx_delay(&idle) >= idle.airtime);
    }

    #[test]
    fn nearest_rank_percentile() {
        let s: Vec<SimTime> = (1..=100).map(SimTime).collect();
        assert_eq!(percentile(&s, 95.0), Some(SimTime(95)));
        assert_eq!(percentile(&s, 100.0), Some(SimTime(100)));
        assert_eq!(percentile(&[SimTime(7)], 95.0), Some(SimTime(7)));
        assert_eq!(percentile(&[], 50.0), None);
    }

    #[test]
    fn satisfaction_by_delay_and_loss() {
        let th = SatisfactionThresholds::default();
        let mut l = MetricLedger::new(3, false);
        for i in 0..20 {
            // station 0: CPM p95 of 12 ms
            let delay = if i < 18 { 1_000 } else { 12_000 };
            l.record(rec(i, MsgType::Cpm, 0, 0, 0, delay - 500, 500), [(StationId(1), true)]);
        }
        assert_eq!(station_satisfaction(StationId(0), Service::Cpm, &l, &th), Some(Satisfaction::Unsatisfied));
        assert_eq!(station_satisfaction(StationId(1), Service::Cpm, &l, &th), Some(Satisfaction::Satisfied));
        assert_eq!(station_satisfaction(StationId(2), Service::Cpm, &l, &th), None);

        let mut b = MetricLedger::new(3, false);
        for i in 0..20 {
            // station 2 misses 3 of 20 BSMs: 15 % loss
            b.record(rec(i, MsgType::Bsm, 0, 0, 0, 100, 496), [(StationId(1), true), (StationId(2), i >= 3)]);
        }
        assert_eq!(station_satisfaction(StationId(2), Service::Bsm, &b, &th), Some(Satisfaction::Unsatisfied));
        assert_eq!(station_satisfaction(StationId(0), Service::Bsm, &b, &th), Some(Satisfaction::Satisfied));
        let summary = service_summary(Service::Bsm, &b, &th);
        assert_eq!(summary, ServiceSummary { participants: 3, unsatisfied: 1 });
    }

    #[test]
    fn max_over_services() {
        assert_eq!(max_ratio([Some(0.1), Some(0.3), Some(0.2)]), 0.3);
        assert_eq!(max_ratio([Some(0.0), Some(0.0), Some(0.0)]), 0.0);
        assert_eq!(max_ratio([None, Some(0.25), None]), 0.25);
        assert_eq!(max_ratio([None, None, None]), 0.0);
    }

    #[test]
    fn drops_count_as_late() {
        let th = SatisfactionThresholds::default();
        let mut l = MetricLedger::new(2, false);
        l.record_drop(DropRecord {
            msg_type: MsgType::Bsm,
            sender: StationId(0),
            enqueue_time: SimTime(0),
            drop_time: SimTime::from_millis(500),
        });
        assert_eq!(station_satisfaction(StationId(0), Service::Bsm, &l, &th), Some(Satisfaction::Unsatisfied));
    }
}
