//! Command-line front end: `space`, `client`, `host`, `sim` and `analyze`.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on runtime errors.
//! Diagnostics go to stderr; data goes to files or stdout.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::time::Duration;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use crate::analysis::{self, DEFAULT_GAP_THRESHOLD};
use crate::client::{self, ClientSettings, DEFAULT_TIMEOUT_S};
use crate::configspace::ConfigSpace;
use crate::host::{self, ExplorationPlan, RunOptions};
use crate::measurement::MeterSet;
use crate::protocol::{DeviceKind, WorkloadSpec};
use crate::search::{AlgorithmOptions, Objectives, Registry};
use crate::simdevice::{DeviceModel, ModelFile, Timing};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "jexplore", version, about = "Design space exploration harness for Jetson boards")]
pub struct Cli {
    /// Log level for diagnostics on stderr (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: log::LevelFilter,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Inspect the configuration space.
    #[command(subcommand)]
    Space(SpaceCommand),
    /// Run a client daemon that executes configurations sent by a host.
    Client(ClientArgs),
    /// Drive an exploration over one or more client daemons.
    Host(HostArgs),
    /// Run the whole exploration loop in-process against a simulated board.
    Sim(SimArgs),
    /// Analyze a results CSV.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Subcommand)]
pub enum SpaceCommand {
    /// Print the parameter table and cardinality.
    Info {
        /// JSON space definition to use instead of the built-in Orin space.
        #[arg(long)]
        space: Option<PathBuf>,
    },
    /// Print seeded random configurations as CSV.
    Sample {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, short = 'n', default_value_t = 10)]
        count: usize,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DeviceArg {
    Sim,
    JetsonOrin,
}

impl From<DeviceArg> for DeviceKind {
    fn from(d: DeviceArg) -> Self {
        match d {
            DeviceArg::Sim => DeviceKind::Sim,
            DeviceArg::JetsonOrin => DeviceKind::JetsonOrin,
        }
    }
}

#[derive(Debug, Args)]
pub struct ClientArgs {
    /// Address to listen on, HOST:PORT.
    #[arg(long)]
    pub listen: String,
    #[arg(long)]
    pub id: String,
    #[arg(long, value_enum, default_value = "sim")]
    pub device: DeviceArg,
    /// Workload preset used when a CONFIG names no workload.
    #[arg(long, default_value = "llama")]
    pub preset: String,
    /// Comma-separated meters: time, power, memory.
    #[arg(long, default_value = "time,power,memory")]
    pub meters: String,
    #[arg(long, default_value_t = 100)]
    pub power_interval_ms: u64,
    #[arg(long, default_value_t = DEFAULT_TIMEOUT_S)]
    pub timeout_s: f64,
    /// JSON file overriding simulator constants and presets.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Virtual clock and no simulator noise.
    #[arg(long, conflicts_with = "realtime")]
    pub deterministic: bool,
    /// Sleep for the simulated latency and time runs with the wall clock.
    #[arg(long)]
    pub realtime: bool,
    /// Return to listening after a host says BYE.
    #[arg(long)]
    pub keep_alive: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AlgoArg {
    Random,
    Evolutionary,
}

impl AlgoArg {
    fn name(self) -> &'static str {
        match self {
            AlgoArg::Random => "random",
            AlgoArg::Evolutionary => "evolutionary",
        }
    }
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[arg(long, value_enum, default_value = "random")]
    pub algo: AlgoArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Configurations requested from the algorithm at a time.
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
    /// Population size of the evolutionary algorithm.
    #[arg(long, default_value_t = 20)]
    pub population: usize,
    /// Add peak memory as a third minimized objective.
    #[arg(long)]
    pub memory_objective: bool,
    /// Comma-separated meters: time, power, memory.
    #[arg(long, default_value = "time,power,memory")]
    pub meters: String,
    /// Logical timestamps for reproducible output.
    #[arg(long)]
    pub deterministic: bool,
}

impl SearchArgs {
    fn options(&self) -> AlgorithmOptions {
        AlgorithmOptions {
            seed: self.seed,
            population_size: self.population,
            objectives: if self.memory_objective { Objectives::PowerTimeMemory } else { Objectives::PowerTime },
        }
    }
}

#[derive(Debug, Args)]
pub struct HostArgs {
    /// Client daemon address, HOST:PORT (repeatable).
    #[arg(long = "client", required = true)]
    pub clients: Vec<String>,
    #[command(flatten)]
    pub search: SearchArgs,
    /// Number of samples to record.
    #[arg(long)]
    pub budget: usize,
    /// Workload preset each client should run.
    #[arg(long, default_value = "llama")]
    pub workload: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Seconds to keep retrying each client connection.
    #[arg(long, default_value_t = 10.0)]
    pub connect_timeout_s: f64,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    #[arg(long, default_value = "llama")]
    pub preset: String,
    /// Number of samples to record.
    #[arg(long)]
    pub samples: usize,
    #[command(flatten)]
    pub search: SearchArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Client id recorded for the in-process client.
    #[arg(long, default_value = "sim-0")]
    pub client_id: String,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Sleep for the simulated latency.
    #[arg(long, conflicts_with = "deterministic")]
    pub realtime: bool,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Report path; stdout when omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub svg: Option<PathBuf>,
    /// Largest-gap to median-gap ratio that counts as a separate cluster.
    #[arg(long, default_value_t = DEFAULT_GAP_THRESHOLD)]
    pub gap_threshold: f64,
}

fn init_logging(level: log::LevelFilter) {
    let _ = env_logger::Builder::new().filter_level(level).target(env_logger::Target::Stderr).try_init();
}

type CliResult = Result<(), Box<dyn std::error::Error>>;

/// Parses `args` and runs the selected command, returning the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    init_logging(cli.log_level);
    let outcome = match cli.command {
        Command::Space(cmd) => run_space(cmd),
        Command::Client(args) => run_client(args),
        Command::Host(args) => run_host(args),
        Command::Sim(args) => run_sim(args),
        Command::Analyze(args) => run_analyze(args),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

fn run_space(cmd: SpaceCommand) -> CliResult {
    let mut out = std::io::stdout().lock();
    match cmd {
        SpaceCommand::Info { space } => {
            let space = match space {
                Some(path) => ConfigSpace::from_file(&path)?,
                None => ConfigSpace::orin(),
            };
            writeln!(out, "{:<14} {:<11} {:>6}  range", "parameter", "kind", "count")?;
            for p in space.params() {
                let kind = serde_json::to_value(p.kind)?;
                writeln!(
                    out,
                    "{:<14} {:<11} {:>6}  {} - {}",
                    p.name,
                    kind.as_str().unwrap_or(""),
                    p.values.len(),
                    p.min(),
                    p.max()
                )?;
            }
            writeln!(out, "cardinality {}", space.cardinality())?;
        }
        SpaceCommand::Sample { seed, count } => {
            let space = ConfigSpace::orin();
            writeln!(out, "{}", crate::configspace::FIELD_NAMES.join(","))?;
            for c in space.random_sample(seed, count) {
                let row: Vec<String> = c.values().iter().map(u64::to_string).collect();
                writeln!(out, "{}", row.join(","))?;
            }
        }
    }
    Ok(())
}

fn load_model(path: Option<&PathBuf>, deterministic: bool) -> Result<Option<ModelFile>, Box<dyn std::error::Error>> {
    let mut file = match path {
        Some(p) => Some(DeviceModel::from_file(p)?),
        None => None,
    };
    if deterministic {
        if let Some(f) = file.as_mut() {
            f.model.noise_std = 0.0;
        }
    }
    Ok(file)
}

fn meters_of(text: &str, interval_ms: u64) -> Result<MeterSet, Box<dyn std::error::Error>> {
    let meters = text.parse::<MeterSet>()?.with_interval_ms(interval_ms);
    meters.validate()?;
    Ok(meters)
}

fn run_client(args: ClientArgs) -> CliResult {
    let settings = ClientSettings {
        listen_address: args.listen,
        client_id: args.id,
        device: args.device.into(),
        preset: args.preset,
        meters: meters_of(&args.meters, args.power_interval_ms)?,
        timeout_s: args.timeout_s,
        timing: if args.realtime { Timing::Realtime } else { Timing::Virtual },
        model: load_model(args.model.as_ref(), args.deterministic)?,
        keep_alive: args.keep_alive,
        crash_after: None,
    };
    let daemon = client::ClientDaemon::bind(&settings)?;
    info!("client {} listening on {}", settings.client_id, daemon.local_addr()?);
    let summary = daemon.serve()?;
    eprintln!(
        "client {}: {} samples in final session, {} total over {} sessions",
        settings.client_id, summary.samples, summary.total_samples, summary.sessions
    );
    Ok(())
}

fn run_host(args: HostArgs) -> CliResult {
    let plan = ExplorationPlan {
        clients: args.clients,
        algorithm: args.search.algo.name().to_string(),
        options: args.search.options(),
        budget: args.budget,
        batch: args.search.batch,
        workload: WorkloadSpec::named(args.workload),
        meters: meters_of(&args.search.meters, 100)?,
        output: args.out,
        deterministic: args.search.deterministic,
        connect_timeout: Duration::from_secs_f64(args.connect_timeout_s.max(0.0)),
    };
    let records = host::explore(&plan, &Registry::default())?;
    eprintln!("recorded {} samples to {}", records.len(), plan.output.display());
    Ok(())
}

fn run_sim(args: SimArgs) -> CliResult {
    if args.samples < 1 {
        return Err("--samples must be at least 1".into());
    }
    let meters = meters_of(&args.search.meters, 100)?;
    let mut client = ClientSettings::sim(&args.client_id, "127.0.0.1:0");
    client.preset = args.preset.clone();
    client.meters = meters;
    client.timing = if args.realtime { Timing::Realtime } else { Timing::Virtual };
    client.model = load_model(args.model.as_ref(), args.search.deterministic)?;

    let space = ConfigSpace::orin();
    let mut algorithm = Registry::default().create(args.search.algo.name(), &space, &args.search.options())?;
    let options = RunOptions {
        budget: args.samples,
        batch: args.search.batch,
        workload: WorkloadSpec::named(args.preset),
        meters,
        output: Some(args.out.clone()),
        clock: RunOptions::clock_for(args.search.deterministic),
    };
    let records = host::explore_local(&client, algorithm.as_mut(), options)?;
    eprintln!("recorded {} samples to {}", records.len(), args.out.display());
    Ok(())
}

fn run_analyze(args: AnalyzeArgs) -> CliResult {
    let (report, records) = analysis::analyze(&args.input, args.gap_threshold)?;
    let json = report.to_json();
    match &args.report {
        Some(path) => fs::write(path, format!("{json}\n"))?,
        None => println!("{json}"),
    }
    if let Some(svg) = &args.svg {
        let ok: Vec<_> = records.into_iter().filter(|r| r.is_ok()).collect();
        analysis::write_svg(svg, &ok, &report.pareto_ids)?;
    }
    Ok(())
}
