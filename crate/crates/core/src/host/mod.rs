//! The exploration host.
//!
//! A single coordinator owns the search algorithm and the CSV sink. Each
//! client link runs on its own thread and holds at most one outstanding
//! sample. Configurations go to the first idle client in link order; a
//! sample whose client disappears is handed to the next idle client, and
//! results are recorded at most once per `sample_id`.

mod csv;
mod link;
mod record;

use std::collections::{HashSet, VecDeque};
use std::path::PathBuf;
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use chrono::{SecondsFormat, Utc};
use log::{info, warn};
use thiserror::Error;

pub use self::csv::{read_csv, read_csv_from, write_csv, CsvError, CsvSink, COLUMNS};
pub use link::{ClientLink, LocalLink, TcpLink};
pub use record::{format_metric, quantize, SampleRecord};

use crate::client::{ClientError, ClientSettings, SampleExecutor};
use crate::configspace::{ConfigSpace, Configuration};
use crate::measurement::MeterSet;
use crate::protocol::{ConfigPayload, Metrics, ResultPayload, WorkloadSpec};
use crate::search::{AlgorithmOptions, Registry, SearchAlgorithm, SearchError};

#[derive(Debug, Error)]
pub enum HostError {
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error("cannot connect to {address}: {reason}")]
    Connect { address: String, reason: String },
    #[error("handshake with {address} failed: {reason}")]
    Handshake { address: String, reason: String },
    #[error("no client could be reached")]
    NoClients,
    #[error("client {client} lost: {reason}")]
    Link { client: String, reason: String },
    #[error("all clients lost after {recorded} of {budget} samples")]
    AllClientsLost { recorded: usize, budget: usize },
    #[error("search algorithm proposed nothing with no sample outstanding")]
    AlgorithmStalled,
    #[error("search algorithm proposed an invalid configuration: {0}")]
    InvalidProposal(String),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Csv(#[from] CsvError),
    #[error(transparent)]
    Client(#[from] ClientError),
}

/// Source of record timestamps.
pub trait Clock: Send {
    fn timestamp(&mut self) -> String;
}

/// Counts 0, 1, 2, ... for reproducible output.
#[derive(Debug, Default)]
pub struct LogicalClock(u64);

impl Clock for LogicalClock {
    fn timestamp(&mut self) -> String {
        let t = self.0;
        self.0 += 1;
        t.to_string()
    }
}

/// ISO-8601 UTC wall-clock time.
#[derive(Debug, Default)]
pub struct UtcClock;

impl Clock for UtcClock {
    fn timestamp(&mut self) -> String {
        Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
    }
}

#[derive(Debug, Clone)]
pub struct ExplorationPlan {
    pub clients: Vec<String>,
    pub algorithm: String,
    pub options: AlgorithmOptions,
    pub budget: usize,
    pub batch: usize,
    pub workload: WorkloadSpec,
    pub meters: MeterSet,
    pub output: PathBuf,
    pub deterministic: bool,
    pub connect_timeout: Duration,
}

impl ExplorationPlan {
    pub fn validate(&self) -> Result<(), HostError> {
        if self.budget < 1 {
            return Err(HostError::Plan("budget must be at least 1".into()));
        }
        if self.batch < 1 {
            return Err(HostError::Plan("batch must be at least 1".into()));
        }
        if self.clients.is_empty() {
            return Err(HostError::Plan("at least one client address is required".into()));
        }
        self.meters.validate().map_err(|e| HostError::Plan(e.to_string()))?;
        Ok(())
    }
}

/// Everything the coordinator needs besides the links and the algorithm.
pub struct RunOptions {
    pub budget: usize,
    pub batch: usize,
    pub workload: WorkloadSpec,
    pub meters: MeterSet,
    pub output: Option<PathBuf>,
    pub clock: Box<dyn Clock>,
}

impl RunOptions {
    pub fn clock_for(deterministic: bool) -> Box<dyn Clock> {
        if deterministic {
            Box::new(LogicalClock::default())
        } else {
            Box::new(UtcClock)
        }
    }
}

/// Connects to every client in the plan and runs the exploration.
pub fn explore(plan: &ExplorationPlan, registry: &Registry) -> Result<Vec<SampleRecord>, HostError> {
    plan.validate()?;
    let space = ConfigSpace::orin();
    let mut algorithm = registry.create(&plan.algorithm, &space, &plan.options)?;

    let mut links: Vec<Box<dyn ClientLink>> = Vec::new();
    for address in &plan.clients {
        match TcpLink::connect(address, &plan.meters, plan.connect_timeout) {
            Ok(link) => {
                info!("connected to {} at {address}", link.client_id());
                links.push(Box::new(link));
            }
            Err(e @ HostError::Handshake { .. }) => return Err(e),
            Err(e) => warn!("{e}"),
        }
    }
    if links.is_empty() {
        return Err(HostError::NoClients);
    }

    let options = RunOptions {
        budget: plan.budget,
        batch: plan.batch,
        workload: plan.workload.clone(),
        meters: plan.meters,
        output: Some(plan.output.clone()),
        clock: RunOptions::clock_for(plan.deterministic),
    };
    run_exploration(links, algorithm.as_mut(), &space, options)
}

/// Runs the exploration against one in-process client built from
/// `client`; no sockets are involved.
pub fn explore_local(
    client: &ClientSettings,
    algorithm: &mut dyn SearchAlgorithm,
    options: RunOptions,
) -> Result<Vec<SampleRecord>, HostError> {
    let link = LocalLink::new(SampleExecutor::new(client)?);
    run_exploration(vec![Box::new(link)], algorithm, &ConfigSpace::orin(), options)
}

enum Job {
    Execute(ConfigPayload),
    Close,
}

struct Done {
    worker: usize,
    outcome: Result<ResultPayload, HostError>,
}

fn worker_loop(worker: usize, mut link: Box<dyn ClientLink>, jobs: mpsc::Receiver<Job>, events: mpsc::Sender<Done>) {
    while let Ok(job) = jobs.recv() {
        match job {
            Job::Execute(cfg) => {
                let outcome = link.execute(&cfg);
                let failed = outcome.is_err();
                if events.send(Done { worker, outcome }).is_err() || failed {
                    return;
                }
            }
            Job::Close => {
                link.close();
                return;
            }
        }
    }
}

struct Worker {
    client_id: String,
    jobs: mpsc::Sender<Job>,
    alive: bool,
    outstanding: Option<(String, Configuration)>,
}

/// Drives `algorithm` over `links` until `options.budget` samples are
/// recorded. Records are returned in completion order and, when an output
/// path is given, appended to CSV as they complete.
pub fn run_exploration(
    links: Vec<Box<dyn ClientLink>>,
    algorithm: &mut dyn SearchAlgorithm,
    space: &ConfigSpace,
    mut options: RunOptions,
) -> Result<Vec<SampleRecord>, HostError> {
    if options.budget < 1 || options.batch < 1 {
        return Err(HostError::Plan("budget and batch must be at least 1".into()));
    }
    if links.is_empty() {
        return Err(HostError::NoClients);
    }
    let mut sink = options.output.as_deref().map(CsvSink::create).transpose()?;

    let (event_tx, event_rx) = mpsc::channel();
    let mut workers = Vec::with_capacity(links.len());
    let mut handles = Vec::with_capacity(links.len());
    for (i, link) in links.into_iter().enumerate() {
        let (job_tx, job_rx) = mpsc::channel();
        workers.push(Worker { client_id: link.client_id().to_string(), jobs: job_tx, alive: true, outstanding: None });
        let events = event_tx.clone();
        handles.push(thread::spawn(move || worker_loop(i, link, job_rx, events)));
    }
    drop(event_tx);

    let budget = options.budget;
    let mut queue: VecDeque<(String, Configuration)> = VecDeque::new();
    let mut recorded_ids = HashSet::new();
    let mut records = Vec::with_capacity(budget);
    let mut proposed = 0usize;

    let outcome = loop {
        if records.len() >= budget {
            break Ok(());
        }
        // Keep every idle client busy while the algorithm has proposals.
        loop {
            for w in workers.iter_mut().filter(|w| w.alive && w.outstanding.is_none()) {
                let Some((id, config)) = queue.pop_front() else { break };
                let payload = ConfigPayload { sample_id: id.clone(), config, workload: options.workload.clone() };
                if w.jobs.send(Job::Execute(payload)).is_err() {
                    w.alive = false;
                    queue.push_front((id, config));
                    continue;
                }
                w.outstanding = Some((id, config));
            }
            let in_flight = queue.len() + workers.iter().filter(|w| w.outstanding.is_some()).count();
            let any_idle = workers.iter().any(|w| w.alive && w.outstanding.is_none());
            if !queue.is_empty() || !any_idle || records.len() + in_flight >= budget {
                break;
            }
            let want = options.batch.min(budget - records.len() - in_flight);
            let proposals = algorithm.propose(want);
            if proposals.is_empty() {
                break;
            }
            for config in proposals.into_iter().take(want) {
                if let Err(e) = space.validate(&config) {
                    warn!("aborting: algorithm proposed an invalid configuration ({e})");
                    return finish(workers, handles, Err(HostError::InvalidProposal(e.to_string())), sink)
                        .map(|()| records);
                }
                queue.push_back((format!("{proposed:06}"), config));
                proposed += 1;
            }
        }

        if workers.iter().all(|w| w.outstanding.is_none()) {
            if workers.iter().all(|w| !w.alive) {
                break Err(HostError::AllClientsLost { recorded: records.len(), budget });
            }
            if queue.is_empty() {
                break Err(HostError::AlgorithmStalled);
            }
            continue;
        }

        let Ok(Done { worker, outcome }) = event_rx.recv() else {
            break Err(HostError::AllClientsLost { recorded: records.len(), budget });
        };
        let w = &mut workers[worker];
        let Some((id, config)) = w.outstanding.take() else { continue };
        match outcome {
            Ok(result) => {
                if !recorded_ids.insert(id.clone()) {
                    continue;
                }
                let result = restrict_metrics(result, &options.meters);
                let record = SampleRecord::from_result(&result, &w.client_id, config, options.clock.timestamp());
                if let Some(sink) = sink.as_mut() {
                    if let Err(e) = sink.append(&record) {
                        break Err(e.into());
                    }
                }
                algorithm.notify(std::slice::from_ref(&record));
                records.push(record);
            }
            Err(e) => {
                warn!("{e}; requeueing sample {id}");
                w.alive = false;
                queue.push_front((id, config));
            }
        }
    };

    finish(workers, handles, outcome, sink).map(|()| records)
}

fn finish(
    workers: Vec<Worker>,
    handles: Vec<thread::JoinHandle<()>>,
    outcome: Result<(), HostError>,
    sink: Option<CsvSink>,
) -> Result<(), HostError> {
    for w in &workers {
        if w.alive {
            let _ = w.jobs.send(Job::Close);
        }
    }
    drop(workers);
    for h in handles {
        let _ = h.join();
    }
    if let Some(mut sink) = sink {
        sink.flush()?;
    }
    outcome
}

/// Drops metrics the plan did not ask for so every record has one shape.
fn restrict_metrics(mut result: ResultPayload, meters: &MeterSet) -> ResultPayload {
    if let Some(m) = result.metrics {
        result.metrics = Some(Metrics {
            time_s: m.time_s.filter(|_| meters.time_enabled),
            power_w: m.power_w.filter(|_| meters.power_enabled),
            memory_mb: m.memory_mb.filter(|_| meters.memory_enabled),
        });
    }
    result
}
