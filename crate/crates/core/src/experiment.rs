//! Sweep configuration, execution and CSV output.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mac::{AccessMethod, AccessState, ContentionWindow, MacError};
use crate::metrics::Service;
use crate::network::{self, RunOptions, RunOutput, RunPoint, RunSummary, SimError, SimParams, TraceRecord};
use crate::phy::ChannelId;
use crate::scenario::{CaseAssignment, MsgType, Side, StationKind, StationState};

/// Environment variable holding the number of sweep workers.
pub const WORKERS_ENV: &str = "BONDSIM_WORKERS";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Mac(#[from] MacError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("cannot parse configuration: {0}")]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed results file: {0}")]
    Results(String),
    #[error("missing sweep points for {figure}: {}", missing.join("; "))]
    Coverage { figure: String, missing: Vec<String> },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io { path: path.to_path_buf(), source }
}

/// A sweep: the cartesian product of cases, methods, windows and vehicle
/// counts, each replicated over consecutive seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub methods: Vec<AccessMethod>,
    pub cases: Vec<CaseAssignment>,
    pub cw: Vec<u32>,
    pub vehicles: Vec<u32>,
    pub replications: u32,
    pub base_seed: u64,
    /// Allow windows outside the 802.11bd set.
    pub research_cw: bool,
    pub sim: SimParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            methods: AccessMethod::ALL.to_vec(),
            cases: vec![CaseAssignment::Symmetric],
            cw: vec![15],
            vehicles: vec![20, 40, 60, 80, 100],
            replications: 10,
            base_seed: 1,
            research_cw: false,
            sim: SimParams::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration is always serializable")
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let empty = |what: &str| ExperimentError::Config(format!("no {what} selected"));
        if self.methods.is_empty() {
            return Err(empty("methods"));
        }
        if self.cases.is_empty() {
            return Err(empty("cases"));
        }
        if self.cw.is_empty() {
            return Err(empty("contention windows"));
        }
        if self.vehicles.is_empty() {
            return Err(empty("vehicle counts"));
        }
        if self.replications == 0 {
            return Err(ExperimentError::Config("at least one replication is required".into()));
        }
        for &cw in &self.cw {
            self.window(cw)?;
        }
        if let Some(n) = self.vehicles.iter().find(|&&n| n % 2 == 1) {
            return Err(ExperimentError::Config(format!("vehicle count {n} cannot be split evenly between the sides")));
        }
        self.sim.validate()?;
        Ok(())
    }

    fn window(&self, cw: u32) -> Result<ContentionWindow, ExperimentError> {
        if self.research_cw {
            Ok(ContentionWindow::research(cw))
        } else {
            Ok(ContentionWindow::standard(cw)?)
        }
    }

    /// Sweep points in output order: case, method, window, vehicles, seed.
    pub fn points(&self) -> Result<Vec<RunPoint>, ExperimentError> {
        self.validate()?;
        let mut points = Vec::new();
        for &case in &self.cases {
            for &method in &self.methods {
                for &cw in &self.cw {
                    let cw = self.window(cw)?;
                    for &n_vehicles in &self.vehicles {
                        for r in 0..u64::from(self.replications) {
                            points.push(RunPoint { method, case, cw, n_vehicles, seed: self.base_seed + r });
                        }
                    }
                }
            }
        }
        Ok(points)
    }
}

/// One CSV row per sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub point: RunPoint,
    pub satisfaction_range_m: f64,
    pub summary: RunSummary,
}

impl ResultRow {
    pub fn header() -> Vec<String> {
        let mut h: Vec<String> = ["method", "case", "cw", "n_vehicles", "seed", "r_s_m", "max_unsatisfied_ratio"]
            .map(String::from)
            .to_vec();
        for s in Service::ALL {
            h.push(format!("unsatisfied_{}", service_label(s)));
        }
        for m in MsgType::ALL {
            let t = type_label(m);
            for col in ["plr", "delay_p50_ms", "delay_p95_ms", "sent", "intended", "received", "dropped"] {
                h.push(format!("{col}_{t}"));
            }
        }
        h
    }

    pub fn record(&self) -> Vec<String> {
        let p = &self.point;
        let mut r = vec![
            p.method.to_string(),
            p.case.to_string(),
            p.cw.value().to_string(),
            p.n_vehicles.to_string(),
            p.seed.to_string(),
            self.satisfaction_range_m.to_string(),
            self.summary.max_unsatisfied_ratio.to_string(),
        ];
        for s in Service::ALL {
            r.push(opt(self.summary.of_service(s).ratio()));
        }
        for m in MsgType::ALL {
            let t = self.summary.of_type(m);
            r.extend([
                opt(t.plr),
                millis(t.delay_p50_ms),
                millis(t.delay_p95_ms),
                t.messages.to_string(),
                t.intended.to_string(),
                t.decoded.to_string(),
                t.dropped.to_string(),
            ]);
        }
        r
    }
}

/// Marker for undefined ratios and percentiles.
pub const NOT_APPLICABLE: &str = "NA";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| NOT_APPLICABLE.to_string(), |x| x.to_string())
}

/// Delays are whole microseconds, so three decimals are exact.
fn millis(v: Option<f64>) -> String {
    v.map_or_else(|| NOT_APPLICABLE.to_string(), |x| format!("{x:.3}"))
}

fn service_label(s: Service) -> &'static str {
    match s {
        Service::SpatMap => "spat_map",
        Service::Bsm => "bsm",
        Service::Cpm => "cpm",
    }
}

fn type_label(m: MsgType) -> &'static str {
    match m {
        MsgType::Bsm => "bsm",
        MsgType::Cpm => "cpm",
        MsgType::SpatMap => "spat_map",
        MsgType::Wsa => "wsa",
    }
}

/// Per-message log entry.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MessageRow {
    pub method: AccessMethod,
    pub case: CaseAssignment,
    pub cw: u32,
    pub n_vehicles: u32,
    pub seed: u64,
    pub msg_id: u64,
    pub msg_type: MsgType,
    pub sender: u32,
    pub enqueue_us: u64,
    pub head_us: u64,
    pub send_us: u64,
    pub airtime_us: u64,
    pub width_mhz: u32,
    pub intended: u32,
    pub decoded: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub method: AccessMethod,
    pub case: CaseAssignment,
    pub cw: u32,
    pub n_vehicles: u32,
    pub seed: u64,
    pub time_us: u64,
    pub station: u32,
    pub queue: &'static str,
    pub from: AccessState,
    pub to: AccessState,
    pub counter: Option<u32>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SweepOptions {
    pub trace: bool,
    pub log_messages: bool,
}

/// Everything a sweep point contributes to the output files.
#[derive(Debug, Clone)]
pub struct PointResult {
    pub row: ResultRow,
    pub trace: Vec<TraceRow>,
    pub messages: Vec<MessageRow>,
}

fn run_point(params: &SimParams, point: RunPoint, options: SweepOptions) -> Result<PointResult, SimError> {
    let out: RunOutput = network::run(params, point, RunOptions { trace: options.trace, keep_rx_log: false })?;
    let p = point;
    let messages = if options.log_messages {
        out.ledger
            .tx_records()
            .iter()
            .map(|r| MessageRow {
                method: p.method,
                case: p.case,
                cw: p.cw.value(),
                n_vehicles: p.n_vehicles,
                seed: p.seed,
                msg_id: r.msg_id.0,
                msg_type: r.msg_type,
                sender: r.sender.0,
                enqueue_us: r.enqueue_time.as_micros(),
                head_us: r.head_time.as_micros(),
                send_us: r.send_time.as_micros(),
                airtime_us: r.airtime.as_micros(),
                width_mhz: r.width.mhz(),
                intended: r.intended,
                decoded: r.decoded,
            })
            .collect()
    } else {
        Vec::new()
    };
    let trace = out
        .trace
        .into_iter()
        .map(|t: TraceRecord| TraceRow {
            method: p.method,
            case: p.case,
            cw: p.cw.value(),
            n_vehicles: p.n_vehicles,
            seed: p.seed,
            time_us: t.time_us,
            station: t.station,
            queue: t.queue,
            from: t.from,
            to: t.to,
            counter: t.counter,
        })
        .collect();
    Ok(PointResult {
        row: ResultRow {
            point,
            satisfaction_range_m: params.highway.satisfaction_range_m,
            summary: out.summary,
        },
        trace,
        messages,
    })
}

/// Runs the points one after another.
pub fn run_sequential(
    params: &SimParams,
    points: &[RunPoint],
    options: SweepOptions,
) -> Result<Vec<PointResult>, ExperimentError> {
    params.validate()?;
    points.iter().map(|&p| run_point(params, p, options).map_err(Into::into)).collect()
}

/// Runs the points on a worker pool; results keep the order of `points`.
///
/// `workers == 0` uses one worker per available core.
#[cfg(feature = "parallel")]
pub fn run_parallel(
    params: &SimParams,
    points: &[RunPoint],
    options: SweepOptions,
    workers: usize,
) -> Result<Vec<PointResult>, ExperimentError> {
    use rayon::prelude::*;

    params.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| ExperimentError::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| points.par_iter().map(|&p| run_point(params, p, options).map_err(Into::into)).collect())
}

/// Runs a sweep, in parallel when the feature is enabled and more than one
/// worker is available.
pub fn run_sweep(
    config: &ExperimentConfig,
    options: SweepOptions,
    workers: Option<usize>,
) -> Result<Vec<PointResult>, ExperimentError> {
    let points = config.points()?;
    #[cfg(feature = "parallel")]
    if workers != Some(1) {
        return run_parallel(&config.sim, &points, options, workers.unwrap_or(0));
    }
    let _ = workers;
    run_sequential(&config.sim, &points, options)
}

/// Writes to a sibling temporary file and renames it into place, so a
/// failed run never leaves a partial file behind.
pub fn write_atomically(
    path: &Path,
    write: impl FnOnce(&mut BufWriter<File>) -> Result<(), ExperimentError>,
) -> Result<(), ExperimentError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let result = (|| {
        let file = File::create(&tmp).map_err(io_err(&tmp))?;
        let mut w = BufWriter::new(file);
        write(&mut w)?;
        w.flush().map_err(io_err(&tmp))?;
        w.get_ref().sync_all().map_err(io_err(&tmp))?;
        Ok(())
    })();
    match result {
        Ok(()) => fs::rename(&tmp, path).map_err(io_err(path)),
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            Err(e)
        }
    }
}

pub fn write_results<W: Write>(out: W, rows: impl IntoIterator<Item = ResultRow>) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ResultRow::header())?;
    for row in rows {
        w.write_record(row.record())?;
    }
    w.flush().map_err(|e| ExperimentError::Io { path: PathBuf::new(), source: e })?;
    Ok(())
}

pub fn write_serialized<W: Write, T: Serialize>(out: W, rows: impl IntoIterator<Item = T>) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| ExperimentError::Io { path: PathBuf::new(), source: e })?;
    Ok(())
}

/// Path of the configuration echo written next to a results file.
pub fn config_echo_path(results: &Path) -> PathBuf {
    let mut p = results.as_os_str().to_owned();
    p.push(".config.toml");
    PathBuf::from(p)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopologyRow {
    pub id: u32,
    pub kind: &'static str,
    pub side: &'static str,
    pub lane: u32,
    pub x_m: f64,
    pub y_m: f64,
    pub speed_mps: f64,
    pub primary: u16,
}

impl From<&StationState> for TopologyRow {
    fn from(s: &StationState) -> Self {
        Self {
            id: s.id.0,
            kind: match s.kind {
                StationKind::Vehicle => "vehicle",
                StationKind::Rsu => "rsu",
            },
            side: match s.side {
                Side::A => "A",
                Side::B => "B",
            },
            lane: s.lane,
            x_m: s.position.x,
            y_m: s.position.y,
            speed_mps: s.velocity_mps.abs(),
            primary: ChannelId::number(s.primary),
        }
    }
}
