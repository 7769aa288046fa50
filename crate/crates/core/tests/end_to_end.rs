mod common;

use std::collections::HashSet;
use std::net::TcpListener;
use std::time::Duration;

use jexplore::client::{ClientDaemon, ClientSettings};
use jexplore::host::{self, read_csv, ExplorationPlan, HostError};
use jexplore::measurement::MeterSet;
use jexplore::protocol::WorkloadSpec;
use jexplore::search::{AlgorithmOptions, Registry};
use jexplore::ConfigSpace;

fn plan(clients: Vec<String>, budget: usize, out: std::path::PathBuf) -> ExplorationPlan {
    ExplorationPlan {
        clients,
        algorithm: "random".into(),
        options: AlgorithmOptions { seed: 42, ..AlgorithmOptions::default() },
        budget,
        batch: 1,
        workload: WorkloadSpec::named("llama"),
        meters: MeterSet::all(),
        output: out,
        deterministic: true,
        connect_timeout: Duration::from_secs(5),
    }
}

/// An address nothing listens on.
fn dead_address() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    drop(listener);
    addr
}

#[test]
fn single_client_records_proposals_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("one.csv");
    let (addresses, handles) = common::spawn_clients(1, None);
    let records = host::explore(&plan(addresses, 25, out.clone()), &Registry::default()).unwrap();
    handles.into_iter().for_each(|h| {
        h.join().unwrap().unwrap();
    });

    let expected = ConfigSpace::orin().random_sample(42, 25);
    let from_csv = read_csv(&out).unwrap();
    assert_eq!(from_csv, records);
    for (i, r) in records.iter().enumerate() {
        assert_eq!(r.sample_id, format!("{i:06}"));
        assert_eq!(r.config, expected[i]);
        assert_eq!(r.timestamp, i.to_string());
    }
}

#[test]
fn tcp_run_matches_in_process_run() {
    let dir = tempfile::tempdir().unwrap();
    let (addresses, handles) = common::spawn_clients(1, None);
    let tcp = host::explore(&plan(addresses, 30, dir.path().join("tcp.csv")), &Registry::default()).unwrap();
    handles.into_iter().for_each(|h| {
        h.join().unwrap().unwrap();
    });
    let local = common::sim_run("random", 42, 30, 20);
    assert_eq!(tcp, local);
}

#[test]
fn zero_budget_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let err = host::explore(&plan(vec!["127.0.0.1:1".into()], 0, dir.path().join("x.csv")), &Registry::default());
    assert!(matches!(err, Err(HostError::Plan(_))));
}

#[test]
fn unreachable_clients_are_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let (mut addresses, handles) = common::spawn_clients(1, None);
    addresses.insert(0, dead_address());
    let mut p = plan(addresses, 10, dir.path().join("skip.csv"));
    p.connect_timeout = Duration::from_millis(200);
    let records = host::explore(&p, &Registry::default()).unwrap();
    handles.into_iter().for_each(|h| {
        h.join().unwrap().unwrap();
    });
    assert_eq!(records.len(), 10);
    assert!(records.iter().all(|r| r.client_id == "sim-0"));
}

#[test]
fn no_reachable_client_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = plan(vec![dead_address()], 10, dir.path().join("none.csv"));
    p.connect_timeout = Duration::from_millis(100);
    assert!(matches!(host::explore(&p, &Registry::default()), Err(HostError::NoClients)));
}

#[test]
fn missing_meter_fails_handshake() {
    let dir = tempfile::tempdir().unwrap();
    let mut settings = ClientSettings::sim("time-only", "127.0.0.1:0");
    settings.meters = "time".parse().unwrap();
    let daemon = ClientDaemon::bind(&settings).unwrap();
    let addr = daemon.local_addr().unwrap().to_string();
    let handle = std::thread::spawn(move || daemon.serve());
    let err = host::explore(&plan(vec![addr.clone()], 5, dir.path().join("m.csv")), &Registry::default());
    assert!(matches!(err, Err(HostError::Handshake { .. })), "{err:?}");
    // The daemon goes back to listening; a compatible host still works.
    let mut ok = plan(vec![addr], 3, dir.path().join("t.csv"));
    ok.meters = "time".parse().unwrap();
    let records = host::explore(&ok, &Registry::default()).unwrap();
    assert!(records.iter().all(|r| r.power_w.is_none() && r.time_s.is_some()));
    handle.join().unwrap().unwrap();
}

#[test]
fn all_clients_lost_reports_progress() {
    let dir = tempfile::tempdir().unwrap();
    let (addresses, handles) = common::spawn_clients(1, Some((0, 4)));
    let err = host::explore(&plan(addresses, 20, dir.path().join("lost.csv")), &Registry::default());
    handles.into_iter().for_each(|h| {
        h.join().unwrap().unwrap();
    });
    match err {
        Err(HostError::AllClientsLost { recorded, budget }) => assert_eq!((recorded, budget), (4, 20)),
        other => panic!("{other:?}"),
    }
    assert_eq!(read_csv(&dir.path().join("lost.csv")).unwrap().len(), 4);
}

#[test]
fn evolutionary_over_tcp_with_many_clients() {
    let dir = tempfile::tempdir().unwrap();
    let (addresses, handles) = common::spawn_clients(4, Some((2, 7)));
    let mut p = plan(addresses, 80, dir.path().join("evo.csv"));
    p.algorithm = "evolutionary".into();
    p.batch = 4;
    let records = host::explore(&p, &Registry::default()).unwrap();
    handles.into_iter().for_each(|h| {
        h.join().unwrap().unwrap();
    });
    let ids: HashSet<_> = records.iter().map(|r| r.sample_id.clone()).collect();
    assert_eq!((records.len(), ids.len()), (80, 80));
}
