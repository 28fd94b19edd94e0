use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bondsim::experiment::{
    self, config_echo_path, write_atomically, write_results, write_serialized, ExperimentConfig, ExperimentError,
    SweepOptions, TopologyRow, WORKERS_ENV,
};
use bondsim::mac::AccessMethod;
use bondsim::network::{self, RunPoint};
use bondsim::plotdata::{self, Figure};
use bondsim::scenario::CaseAssignment;
use clap::{Args, Parser, Subcommand};

/// Broadcast channel access and channel bonding on two 10 MHz V2X channels.
#[derive(Parser)]
#[command(name = "bondsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a sweep and write one CSV row per point and seed.
    Run(RunArgs),
    /// Aggregate a results CSV into a figure table.
    Plotdata(PlotArgs),
    /// Write the initial station layout of one scenario.
    DumpTopology(TopologyArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML file with sweep axes and model parameters; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Access methods, comma separated, or `all`.
    #[arg(long, value_delimiter = ',')]
    method: Vec<String>,
    /// Contention windows, comma separated.
    #[arg(long, value_delimiter = ',')]
    cw: Vec<u32>,
    /// Vehicle counts, comma separated (even).
    #[arg(long, value_delimiter = ',')]
    vehicles: Vec<u32>,
    /// `symmetric`, `asymmetric`, comma separated, or `both`.
    #[arg(long, value_delimiter = ',')]
    case: Vec<String>,
    /// Simulated seconds per run.
    #[arg(long)]
    duration: Option<f64>,
    /// Replications per point.
    #[arg(long)]
    seeds: Option<u32>,
    /// Seed of the first replication.
    #[arg(long)]
    base_seed: Option<u64>,
    /// Results CSV, or `-` for stdout.
    #[arg(long, default_value = "results.csv")]
    out: PathBuf,
    /// Also write every access state change to this CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Also write one row per transmitted message to this CSV.
    #[arg(long)]
    log_messages: Option<PathBuf>,
    /// Accept windows outside {15, 31, ..., 1023}.
    #[arg(long)]
    research_cw: bool,
    /// Parallel workers (0 = one per core).
    #[arg(long, env = WORKERS_ENV)]
    workers: Option<usize>,
}

#[derive(Args)]
struct PlotArgs {
    /// Results CSV written by `run`.
    #[arg(long)]
    input: PathBuf,
    /// fig2, fig3, fig4 or fig5.
    #[arg(long)]
    figure: Figure,
    /// Output CSV, or `-` for stdout.
    #[arg(long, default_value = "-")]
    out: PathBuf,
}

#[derive(Args)]
struct TopologyArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    vehicles: u32,
    #[arg(long, default_value = "symmetric")]
    case: CaseAssignment,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "-")]
    out: PathBuf,
}

fn parse_methods(values: &[String]) -> Result<Vec<AccessMethod>> {
    if values.iter().any(|v| v.eq_ignore_ascii_case("all")) {
        return Ok(AccessMethod::ALL.to_vec());
    }
    values.iter().map(|v| v.parse().map_err(Into::into)).collect()
}

fn parse_cases(values: &[String]) -> Result<Vec<CaseAssignment>> {
    if values.iter().any(|v| v.eq_ignore_ascii_case("both")) {
        return Ok(vec![CaseAssignment::Symmetric, CaseAssignment::Asymmetric]);
    }
    values.iter().map(|v| v.parse().map_err(anyhow::Error::msg)).collect()
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => Ok(ExperimentConfig::load(p)?),
        None => Ok(ExperimentConfig::default()),
    }
}

fn build_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut c = load_config(args.config.as_deref())?;
    if !args.method.is_empty() {
        c.methods = parse_methods(&args.method)?;
    }
    if !args.case.is_empty() {
        c.cases = parse_cases(&args.case)?;
    }
    if !args.cw.is_empty() {
        c.cw = args.cw.clone();
    }
    if !args.vehicles.is_empty() {
        c.vehicles = args.vehicles.clone();
    }
    if let Some(d) = args.duration {
        c.sim.duration_s = d;
    }
    if let Some(s) = args.seeds {
        c.replications = s;
    }
    if let Some(s) = args.base_seed {
        c.base_seed = s;
    }
    c.research_cw |= args.research_cw;
    c.validate()?;
    Ok(c)
}

fn is_stdout(p: &Path) -> bool {
    p.as_os_str() == "-"
}

/// Writes atomically to a file, or straight to stdout for `-`.
fn emit(path: &Path, write: impl FnOnce(&mut dyn Write) -> Result<(), ExperimentError>) -> Result<()> {
    if is_stdout(path) {
        let stdout = io::stdout();
        let mut lock = stdout.lock();
        write(&mut lock)?;
        lock.flush()?;
    } else {
        write_atomically(path, |w| write(w)).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    let config = build_config(&args)?;
    let options = SweepOptions { trace: args.trace.is_some(), log_messages: args.log_messages.is_some() };
    let n_points = config.points()?.len();
    eprintln!("running {n_points} simulations");
    let results = experiment::run_sweep(&config, options, args.workers)?;

    emit(&args.out, |w| write_results(w, results.iter().map(|r| r.row.clone())))?;
    if !is_stdout(&args.out) {
        let echo = config_echo_path(&args.out);
        write_atomically(&echo, |w| {
            w.write_all(config.to_toml().as_bytes()).map_err(|e| ExperimentError::Io { path: echo.clone(), source: e })
        })?;
        eprintln!("wrote {} rows to {} (configuration in {})", results.len(), args.out.display(), echo.display());
    }
    if let Some(path) = &args.trace {
        emit(path, |w| write_serialized(w, results.iter().flat_map(|r| r.trace.iter())))?;
    }
    if let Some(path) = &args.log_messages {
        emit(path, |w| write_serialized(w, results.iter().flat_map(|r| r.messages.iter())))?;
    }
    Ok(())
}

fn plot(args: PlotArgs) -> Result<()> {
    let file = std::fs::File::open(&args.input).with_context(|| format!("opening {}", args.input.display()))?;
    let rows = plotdata::read_results(io::BufReader::new(file))?;
    let table = plotdata::plot_data(&rows, args.figure)?;
    emit(&args.out, |w| write_serialized(w, table.iter()))
}

fn dump_topology(args: TopologyArgs) -> Result<()> {
    let config = load_config(args.config.as_deref())?;
    if args.vehicles % 2 == 1 {
        bail!("vehicle count {} cannot be split evenly between the sides", args.vehicles);
    }
    let point = RunPoint {
        method: AccessMethod::Edca,
        case: args.case,
        cw: bondsim::mac::ContentionWindow::research(15),
        n_vehicles: args.vehicles,
        seed: args.seed,
    };
    let stations = network::topology(&config.sim, &point)?;
    emit(&args.out, |w| write_serialized(w, stations.iter().map(TopologyRow::from)))
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Plotdata(a) => plot(a),
        Command::DumpTopology(a) => dump_topology(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
