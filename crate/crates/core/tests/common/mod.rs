//! Shared test fixtures: a microsecond-stepped reference of the channel
//! access rules and a driver feeding the same script to the real automaton.

#![allow(dead_code)]

use std::collections::{BTreeSet, VecDeque};

use bondsim::mac::{AccessAutomaton, AccessMethod, MacTimings, Sense};
use bondsim::phy::Width;
use bondsim::sim::SimTime;
use proptest::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interval {
    pub start: u64,
    pub end: u64,
    /// Whether the busy period ends with a decoded frame.
    pub decoded: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameSpec {
    pub arrival: u64,
    pub backoff: u32,
    pub airtime: u64,
}

/// Busy periods of both channels plus the frames offered to the station.
/// Periods on one channel never overlap or touch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Script {
    pub primary: Vec<Interval>,
    pub secondary: Vec<Interval>,
    pub frames: Vec<FrameSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tx {
    pub at: u64,
    pub width: Width,
}

pub const TIMINGS: MacTimings = MacTimings { slot_us: 13, sifs_us: 32, aifs_us: 58, pifs_us: 45, eifs_us: 188 };

/// Long enough for every scripted frame to go out once the script ends.
pub const HORIZON: u64 = 20_000;

fn busy_at(iv: &[Interval], t: u64) -> bool {
    iv.iter().any(|i| i.start <= t && t < i.end)
}

fn ended_at(iv: &[Interval], t: u64) -> Option<bool> {
    iv.iter().find(|i| i.end == t).map(|i| i.decoded)
}

#[derive(Debug, Clone, Copy)]
struct Chan {
    busy: bool,
    idle_start: u64,
    last_decoded: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum St {
    NoFrame,
    Waiting { counter: u32 },
    Counting { grid: u64, next: u64, counter: u32 },
    Sending { until: u64 },
}

/// Steps the access rules one microsecond at a time.
///
/// At every instant, in order: a slot boundary (send when the counter is
/// zero, otherwise decrement), the end of an own transmission, a new head of
/// line, and finally the channel states of that instant.
pub fn reference(method: AccessMethod, t: MacTimings, script: &Script, horizon: u64) -> Vec<Tx> {
    let wait = |decoded: bool| if decoded { t.aifs_us } else { t.eifs_us };
    let mut p = Chan { busy: false, idle_start: 0, last_decoded: true };
    let mut s = p;
    let (mut c_busy, mut c_idle_start, mut c_undecoded, mut c_last_decoded) = (false, 0u64, false, true);
    let mut frames: VecDeque<FrameSpec> = script.frames.iter().copied().collect();
    let mut airtime = 0;
    let mut st = St::NoFrame;
    let mut fallen = false;
    let mut head = 0u64;
    let mut out = Vec::new();

    let evaluate = |now: u64,
                    st: &mut St,
                    fallen: &mut bool,
                    head: u64,
                    p: &Chan,
                    s: &Chan,
                    c_busy: bool,
                    c_idle_start: u64,
                    c_last_decoded: bool| {
        let counter = match *st {
            St::Waiting { counter } | St::Counting { counter, .. } => counter,
            _ => return,
        };
        if method == AccessMethod::BondBdFallback && !*fallen && !p.busy && s.busy {
            *fallen = true;
            let counting = matches!(*st, St::Counting { grid, .. } if grid <= now);
            if !counting {
                let grid = (p.idle_start + wait(p.last_decoded)).max(head + t.aifs_us).max(now + 1);
                *st = St::Counting { grid, next: grid, counter };
            }
            return;
        }
        let both = match method {
            AccessMethod::Edca | AccessMethod::BondN => false,
            AccessMethod::BondBd => true,
            AccessMethod::BondBdFallback => !*fallen,
        };
        let (busy, idle_start, decoded) =
            if both { (c_busy, c_idle_start, c_last_decoded) } else { (p.busy, p.idle_start, p.last_decoded) };
        match *st {
            St::Counting { .. } if busy => *st = St::Waiting { counter },
            St::Waiting { .. } if !busy => {
                let grid = (idle_start + wait(decoded)).max(head + t.aifs_us);
                *st = St::Counting { grid, next: grid, counter };
            }
            _ => {}
        }
    };

    for now in 0..=horizon {
        if let St::Counting { grid, next, counter } = st {
            if next == now {
                if counter == 0 {
                    let width = match method {
                        AccessMethod::Edca => Width::Mhz10,
                        AccessMethod::BondBd => Width::Mhz20,
                        AccessMethod::BondBdFallback if fallen => Width::Mhz10,
                        AccessMethod::BondBdFallback => Width::Mhz20,
                        AccessMethod::BondN => {
                            let idle = now >= t.pifs_us
                                && (now - t.pifs_us..now).all(|u| !busy_at(&script.secondary, u));
                            if idle {
                                Width::Mhz20
                            } else {
                                Width::Mhz10
                            }
                        }
                    };
                    out.push(Tx { at: now, width });
                    st = St::Sending { until: now + airtime };
                } else {
                    st = St::Counting { grid, next: now + t.slot_us, counter: counter - 1 };
                }
            }
        }
        if st == (St::Sending { until: now }) {
            st = St::NoFrame;
            fallen = false;
        }
        if st == St::NoFrame && frames.front().is_some_and(|f| f.arrival <= now) {
            let f = frames.pop_front().unwrap();
            head = now;
            airtime = f.airtime;
            fallen = false;
            st = St::Waiting { counter: f.backoff };
            evaluate(now, &mut st, &mut fallen, head, &p, &s, c_busy, c_idle_start, c_last_decoded);
        }

        let mut ended_undecoded = false;
        for (chan, iv) in [(&mut p, &script.primary), (&mut s, &script.secondary)] {
            let busy = busy_at(iv, now);
            if busy && !chan.busy {
                chan.busy = true;
            } else if !busy && chan.busy {
                chan.busy = false;
                chan.idle_start = now;
                chan.last_decoded = ended_at(iv, now).expect("busy period ends here");
                ended_undecoded |= !chan.last_decoded;
            }
        }
        let any = p.busy || s.busy;
        if !c_busy && any {
            c_busy = true;
            c_undecoded = false;
        } else if c_busy {
            c_undecoded |= ended_undecoded;
            if !any {
                c_busy = false;
                c_idle_start = now;
                c_last_decoded = !c_undecoded;
            }
        }
        evaluate(now, &mut st, &mut fallen, head, &p, &s, c_busy, c_idle_start, c_last_decoded);
        if frames.is_empty() && st == St::NoFrame {
            break;
        }
    }
    out
}

fn sense(iv: &[Interval], now: u64) -> Sense {
    if busy_at(iv, now) {
        Sense::busy()
    } else {
        Sense::idle(ended_at(iv, now).unwrap_or(true))
    }
}

/// Feeds the script to the automaton the way the network does: at each
/// instant a due transmission starts first, then own transmissions end,
/// then the head of line advances, then channel changes arrive.
pub fn drive(method: AccessMethod, timings: MacTimings, script: &Script, horizon: u64) -> Vec<Tx> {
    let mut a = AccessAutomaton::new(method, timings);
    let edges: BTreeSet<u64> =
        script.primary.iter().chain(&script.secondary).flat_map(|i| [i.start, i.end]).collect();
    let mut frames: VecDeque<FrameSpec> = script.frames.iter().copied().collect();
    let mut sending: Option<u64> = None;
    let mut airtime = 0;
    let mut out = Vec::new();
    let mut now = 0u64;
    loop {
        if a.deadline() == Some(SimTime(now)) {
            let width = a.fire(SimTime(now));
            out.push(Tx { at: now, width });
            sending = Some(now + airtime);
        }
        if sending == Some(now) {
            a.finish_tx();
            sending = None;
        }
        if !a.has_frame() && frames.front().is_some_and(|f| f.arrival <= now) {
            let f = frames.pop_front().unwrap();
            airtime = f.airtime;
            a.start_access(SimTime(now), f.backoff);
        }
        if edges.contains(&now) {
            a.on_channels(SimTime(now), sense(&script.primary, now), sense(&script.secondary, now));
        }
        if let Some(d) = a.deadline() {
            assert!(d.as_micros() > now, "deadline {d} not after {now}");
        }
        let arrival = (!a.has_frame()).then(|| frames.front().map(|f| f.arrival)).flatten();
        let next = [
            a.deadline().map(|d| d.as_micros()),
            sending,
            arrival,
            edges.range(now + 1..).next().copied(),
        ]
        .into_iter()
        .flatten()
        .min();
        match next {
            Some(n) if n <= horizon => now = n,
            _ => break,
        }
    }
    out
}

fn intervals(span: u64) -> impl Strategy<Value = Vec<Interval>> {
    prop::collection::vec((1u64..250, 1u64..300, any::<bool>()), 0..8).prop_map(move |parts| {
        let mut out = Vec::new();
        let mut t = 0;
        for (gap, len, decoded) in parts {
            let start = t + gap;
            if start >= span {
                break;
            }
            let end = (start + len).min(span);
            out.push(Interval { start, end, decoded });
            t = end;
        }
        out
    })
}

/// Random scripts within a 2000 µs window; the first busy period may start
/// at zero.
pub fn scripts(max_backoff: u32) -> impl Strategy<Value = Script> {
    let frames = prop::collection::vec((0u64..1500, 0..=max_backoff, 1u64..300), 1..4).prop_map(|mut v| {
        v.sort_by_key(|f| f.0);
        v.into_iter().map(|(arrival, backoff, airtime)| FrameSpec { arrival, backoff, airtime }).collect()
    });
    (intervals(2000), intervals(2000), frames, any::<bool>(), any::<bool>()).prop_map(
        |(mut primary, mut secondary, frames, p0, s0)| {
            for (iv, at_zero) in [(&mut primary, p0), (&mut secondary, s0)] {
                if at_zero {
                    if let Some(first) = iv.first_mut() {
                        first.start = 0;
                    }
                }
            }
            Script { primary, secondary, frames }
        },
    )
}
