#![allow(dead_code)]

use std::collections::BTreeMap;
use std::thread::JoinHandle;

use jexplore::client::{ClientDaemon, ClientError, ClientSettings, RunSummary};
use jexplore::host::{self, LogicalClock, RunOptions};
use jexplore::measurement::MeterSet;
use jexplore::protocol::{
    ConfigPayload, DeviceKind, ErrPayload, HelloPayload, Message, MessageEnvelope, Meter, Metrics, ResultPayload,
    SampleStatus, WorkloadSpec, PROTOCOL_VERSION,
};
use jexplore::rng::SplitMix64;
use jexplore::search::{AlgorithmOptions, Registry};
use jexplore::{ConfigSpace, SampleRecord};

/// In-process simulated llama run with logical timestamps.
pub fn sim_run(algo: &str, seed: u64, budget: usize, population: usize) -> Vec<SampleRecord> {
    let space = ConfigSpace::orin();
    let options = AlgorithmOptions { seed, population_size: population, ..AlgorithmOptions::default() };
    let mut algorithm = Registry::default().create(algo, &space, &options).unwrap();
    let run = RunOptions {
        budget,
        batch: 1,
        workload: WorkloadSpec::named("llama"),
        meters: MeterSet::all(),
        output: None,
        clock: Box::new(LogicalClock::default()),
    };
    host::explore_local(&ClientSettings::sim("sim-0", "127.0.0.1:0"), algorithm.as_mut(), run).unwrap()
}

/// O(n^2) dominance check, minimizing every coordinate.
pub fn brute_nondominated(points: &[Vec<f64>]) -> Vec<usize> {
    (0..points.len())
        .filter(|&i| {
            !points.iter().any(|q| {
                let p = &points[i];
                q.iter().zip(p).all(|(a, b)| a <= b) && q.iter().zip(p).any(|(a, b)| a < b)
            })
        })
        .collect()
}

/// Exact 2-D hypervolume by summing the strips under a sorted staircase.
pub fn brute_hypervolume(points: &[(f64, f64)], reference: (f64, f64)) -> f64 {
    let mut inside: Vec<(f64, f64)> =
        points.iter().copied().filter(|&(x, y)| x < reference.0 && y < reference.1).collect();
    inside.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut xs: Vec<f64> = inside.iter().map(|p| p.0).collect();
    xs.push(reference.0);
    let mut area = 0.0;
    for w in 0..inside.len() {
        let best_y = inside[..=w].iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        area += (xs[w + 1] - xs[w]) * (reference.1 - best_y);
    }
    area
}

const ALPHABET: &[char] = &['a', 'Z', '0', '-', '_', ' ', '"', '\\', '\n', '\u{e9}', '\u{1F600}', '\u{0}', '/'];

fn text(rng: &mut SplitMix64, min_len: u64) -> String {
    let len = min_len + rng.below(12);
    (0..len).map(|_| ALPHABET[rng.below(ALPHABET.len() as u64) as usize]).collect()
}

fn metric(rng: &mut SplitMix64) -> Option<f64> {
    (rng.below(4) != 0).then(|| rng.next_f64() * 10f64.powi(rng.below(8) as i32))
}

/// A valid envelope of a random type with random field contents.
pub fn random_envelope(rng: &mut SplitMix64, space: &ConfigSpace) -> MessageEnvelope {
    let seq = rng.next_u64() >> rng.below(64);
    let message = match rng.below(5) {
        0 => {
            let all = [Meter::Time, Meter::Power, Meter::Memory];
            Message::Hello(HelloPayload {
                client_id: text(rng, 1),
                protocol_version: PROTOCOL_VERSION,
                device: if rng.below(2) == 0 { DeviceKind::Sim } else { DeviceKind::JetsonOrin },
                meters: all.into_iter().filter(|_| rng.below(2) == 0).collect(),
            })
        }
        1 => {
            let mut params = BTreeMap::new();
            for _ in 0..rng.below(3) {
                params.insert(text(rng, 0), text(rng, 0));
            }
            Message::Config(ConfigPayload {
                sample_id: text(rng, 1),
                config: space.draw(rng),
                workload: WorkloadSpec { name: text(rng, 0), params },
            })
        }
        2 => {
            let id = text(rng, 1);
            Message::Result(match rng.below(3) {
                0 => {
                    ResultPayload::ok(id, Metrics { time_s: metric(rng), power_w: metric(rng), memory_mb: metric(rng) })
                }
                1 => ResultPayload::failed(id, SampleStatus::Error, text(rng, 1)),
                _ => ResultPayload::failed(id, SampleStatus::Timeout, text(rng, 1)),
            })
        }
        3 => Message::Bye,
        _ => Message::Err(ErrPayload { message: text(rng, 0) }),
    };
    MessageEnvelope::new(seq, message)
}

/// Starts `n` simulated client daemons on ephemeral ports. `crash` makes
/// client `idx` drop its connection after `after` samples.
pub fn spawn_clients(
    n: usize,
    crash: Option<(usize, usize)>,
) -> (Vec<String>, Vec<JoinHandle<Result<RunSummary, ClientError>>>) {
    let mut addresses = Vec::new();
    let mut handles = Vec::new();
    for i in 0..n {
        let mut settings = ClientSettings::sim(&format!("sim-{i}"), "127.0.0.1:0");
        settings.crash_after = crash.filter(|&(idx, _)| idx == i).map(|(_, after)| after);
        let daemon = ClientDaemon::bind(&settings).unwrap();
        addresses.push(daemon.local_addr().unwrap().to_string());
        handles.push(std::thread::spawn(move || daemon.serve()));
    }
    (addresses, handles)
}
