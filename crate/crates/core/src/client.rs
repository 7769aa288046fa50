//! The client daemon that runs on (or stands in for) a board.
//!
//! The client listens, greets each host connection with `HELLO`, then handles
//! `CONFIG` messages strictly one at a time: apply the configuration, run the
//! workload under the enabled meters and answer with a `RESULT` carrying the
//! same `sample_id`. A failing sample produces a failed `RESULT`; it never
//! ends the session.

use std::net::{SocketAddr, TcpListener, TcpStream};

use log::{debug, info, warn};
use thiserror::Error;

use crate::configspace::ConfigSpace;
use crate::measurement::{measure_run, MeasureError, MeterSet, WorkloadError};
use crate::protocol::{
    ConfigPayload, Connection, DeviceKind, ErrPayload, HelloPayload, Message, ProtocolError, ResultPayload,
    SampleStatus, PROTOCOL_VERSION,
};
use crate::simdevice::{ConfigApplier, DeviceError, JetsonOrinStub, ModelFile, SimApplier, Simulator, Timing};

pub const DEFAULT_TIMEOUT_S: f64 = 3600.0;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("invalid client settings: {0}")]
    Settings(String),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Meters(#[from] MeasureError),
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("accept failed: {0}")]
    Accept(std::io::Error),
}

#[derive(Debug, Clone)]
pub struct ClientSettings {
    pub listen_address: String,
    pub client_id: String,
    pub device: DeviceKind,
    /// Preset used when a CONFIG names no workload.
    pub preset: String,
    pub meters: MeterSet,
    pub timeout_s: f64,
    pub timing: Timing,
    pub model: Option<ModelFile>,
    /// Keep listening after a host says BYE instead of returning.
    pub keep_alive: bool,
    /// Fault injection: after this many completed samples, drop the
    /// connection on the next CONFIG without answering and stop serving.
    pub crash_after: Option<usize>,
}

impl ClientSettings {
    pub fn sim(client_id: &str, listen_address: &str) -> Self {
        Self {
            listen_address: listen_address.to_string(),
            client_id: client_id.to_string(),
            device: DeviceKind::Sim,
            preset: "llama".to_string(),
            meters: MeterSet::all(),
            timeout_s: DEFAULT_TIMEOUT_S,
            timing: Timing::Virtual,
            model: None,
            keep_alive: false,
            crash_after: None,
        }
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        if self.client_id.is_empty() {
            return Err(ClientError::Settings("client id must not be empty".into()));
        }
        if self.timeout_s.is_nan() || self.timeout_s <= 0.0 {
            return Err(ClientError::Settings("timeout must be positive".into()));
        }
        self.meters.validate()?;
        Ok(())
    }
}

enum Backend {
    Sim(Box<SimApplier>),
    Orin(JetsonOrinStub),
}

/// Executes CONFIG payloads against a device backend. Shared by the TCP
/// daemon and the in-process virtual client.
pub struct SampleExecutor {
    client_id: String,
    device: DeviceKind,
    backend: Backend,
    default_preset: String,
    meters: MeterSet,
    timeout_s: f64,
    timing: Timing,
}

impl SampleExecutor {
    pub fn new(settings: &ClientSettings) -> Result<Self, ClientError> {
        settings.validate()?;
        let space = ConfigSpace::orin();
        let sim = match &settings.model {
            Some(file) => Simulator::with_model_file(file.clone(), space.clone())?,
            None => Simulator::orin(),
        };
        sim.preset(&settings.preset)?;
        let backend = match settings.device {
            DeviceKind::Sim => Backend::Sim(Box::new(SimApplier::new(sim))),
            DeviceKind::JetsonOrin => Backend::Orin(JetsonOrinStub::new(space)),
        };
        Ok(Self {
            client_id: settings.client_id.clone(),
            device: settings.device,
            backend,
            default_preset: settings.preset.clone(),
            meters: settings.meters,
            timeout_s: settings.timeout_s,
            timing: settings.timing,
        })
    }

    pub fn client_id(&self) -> &str {
        &self.client_id
    }

    pub fn meters(&self) -> &MeterSet {
        &self.meters
    }

    pub fn hello(&self) -> HelloPayload {
        HelloPayload {
            client_id: self.client_id.clone(),
            protocol_version: PROTOCOL_VERSION,
            device: self.device,
            meters: self.meters.meters(),
        }
    }

    pub fn execute(&mut self, cfg: &ConfigPayload) -> ResultPayload {
        let id = cfg.sample_id.as_str();
        let fail = |status, msg: String| ResultPayload::failed(id, status, msg);
        let applier = match &mut self.backend {
            Backend::Sim(a) => a,
            Backend::Orin(stub) => {
                let err = stub.apply(&cfg.config).err().map(|e| e.to_string()).unwrap_or_default();
                return fail(SampleStatus::Error, err);
            }
        };
        if let Err(e) = applier.apply(&cfg.config) {
            return fail(SampleStatus::Error, e.to_string());
        }
        let preset_name = if cfg.workload.name.is_empty() { &self.default_preset } else { &cfg.workload.name };
        let preset = match applier.simulator().preset(preset_name) {
            Ok(p) => p.clone(),
            Err(e) => return fail(SampleStatus::Error, e.to_string()),
        };
        let workload = match applier.workload(&preset, &cfg.workload.params, self.timing, self.timeout_s) {
            Ok(w) => w,
            Err(e) => return fail(SampleStatus::Error, e.to_string()),
        };
        match measure_run(&workload, &self.meters) {
            Ok(m) => ResultPayload::ok(id, m.metrics()),
            Err(MeasureError::Workload(e @ WorkloadError::Timeout(_))) => fail(SampleStatus::Timeout, e.to_string()),
            Err(e) => fail(SampleStatus::Error, e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionEnd {
    /// Host said BYE.
    Bye,
    /// Connection dropped without BYE.
    Lost,
    /// Protocol error; ERR was sent (if possible) and the connection closed.
    ProtocolError,
    /// The injected crash fired.
    Crashed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SessionSummary {
    pub end: SessionEnd,
    pub samples: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunSummary {
    pub sessions: usize,
    /// Samples completed in the session that ended the run.
    pub samples: usize,
    pub total_samples: usize,
}

pub struct ClientDaemon {
    listener: TcpListener,
    executor: SampleExecutor,
    keep_alive: bool,
    crash_after: Option<usize>,
    completed_total: usize,
}

impl ClientDaemon {
    pub fn bind(settings: &ClientSettings) -> Result<Self, ClientError> {
        let executor = SampleExecutor::new(settings)?;
        let listener = TcpListener::bind(&settings.listen_address)
            .map_err(|source| ClientError::Bind { addr: settings.listen_address.clone(), source })?;
        Ok(Self {
            listener,
            executor,
            keep_alive: settings.keep_alive,
            crash_after: settings.crash_after,
            completed_total: 0,
        })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Serves host connections one after another. Returns after a session
    /// ends with BYE (unless keep-alive is set) or after an injected crash;
    /// lost connections go back to listening.
    pub fn serve(mut self) -> Result<RunSummary, ClientError> {
        let mut summary = RunSummary::default();
        loop {
            let (stream, peer) = self.listener.accept().map_err(ClientError::Accept)?;
            info!("client {}: host connected from {peer}", self.executor.client_id());
            let session = self.serve_connection(stream);
            summary.sessions += 1;
            summary.samples = session.samples;
            summary.total_samples = self.completed_total;
            info!(
                "client {}: session ended ({:?}) after {} samples",
                self.executor.client_id(),
                session.end,
                session.samples
            );
            match session.end {
                SessionEnd::Bye if !self.keep_alive => return Ok(summary),
                SessionEnd::Crashed => return Ok(summary),
                _ => {}
            }
        }
    }

    pub fn serve_connection(&mut self, stream: TcpStream) -> SessionSummary {
        let _ = stream.set_nodelay(true);
        let mut conn = Connection::new(stream);
        let mut samples = 0;
        let end = |end, samples| SessionSummary { end, samples };
        if let Err(e) = conn.send(Message::Hello(self.executor.hello())) {
            warn!("cannot send HELLO: {e}");
            return end(SessionEnd::Lost, 0);
        }
        loop {
            let msg = match conn.recv() {
                Ok(m) => m,
                Err(ProtocolError::Closed | ProtocolError::Io(_) | ProtocolError::IncompleteFrame { .. }) => {
                    return end(SessionEnd::Lost, samples);
                }
                Err(e) => {
                    warn!("protocol error from host: {e}");
                    let _ = conn.send(Message::Err(ErrPayload { message: e.to_string() }));
                    return end(SessionEnd::ProtocolError, samples);
                }
            };
            match msg {
                Message::Config(cfg) => {
                    if self.crash_after.is_some_and(|n| self.completed_total >= n) {
                        warn!("client {}: injected crash before sample {}", self.executor.client_id(), cfg.sample_id);
                        let _ = conn.into_inner().shutdown(std::net::Shutdown::Both);
                        return end(SessionEnd::Crashed, samples);
                    }
                    debug!("sample {}: {}", cfg.sample_id, cfg.config);
                    let result = self.executor.execute(&cfg);
                    if let Err(e) = conn.send(Message::Result(result)) {
                        warn!("cannot send RESULT: {e}");
                        return end(SessionEnd::Lost, samples);
                    }
                    samples += 1;
                    self.completed_total += 1;
                }
                Message::Bye => return end(SessionEnd::Bye, samples),
                Message::Err(e) => {
                    warn!("host reported error: {}", e.message);
                    return end(SessionEnd::ProtocolError, samples);
                }
                other => {
                    let message = format!("unexpected {} from host", other.kind());
                    warn!("{message}");
                    let _ = conn.send(Message::Err(ErrPayload { message }));
                    return end(SessionEnd::ProtocolError, samples);
                }
            }
        }
    }
}

/// Binds and serves until the run ends.
pub fn serve(settings: &ClientSettings) -> Result<RunSummary, ClientError> {
    ClientDaemon::bind(settings)?.serve()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{Metrics, WorkloadSpec};

    fn payload(config: crate::configspace::Configuration) -> ConfigPayload {
        ConfigPayload { sample_id: "000000".into(), config, workload: WorkloadSpec::named("llama") }
    }

    #[test]
    fn all_max_llama_result() {
        let mut exec = SampleExecutor::new(&ClientSettings::sim("c", "127.0.0.1:0")).unwrap();
        let r = exec.execute(&payload(ConfigSpace::orin().max_config()));
        assert_eq!(r.status, SampleStatus::Ok);
        let m = r.metrics.unwrap();
        assert_eq!(m.time_s, Some(20.0));
        assert!((m.power_w.unwrap() - 42.0).abs() < 1e-12);
        assert_eq!(m.memory_mb, Some(26000.0));
    }

    #[test]
    fn off_grid_gives_error_result() {
        let mut exec = SampleExecutor::new(&ClientSettings::sim("c", "127.0.0.1:0")).unwrap();
        let mut c = ConfigSpace::orin().max_config();
        c.emc_freq_khz = 3_000_000;
        let r = exec.execute(&payload(c));
        assert_eq!(r.status, SampleStatus::Error);
        assert!(r.error_msg.unwrap().contains("emc_freq_khz"));
        let ok = exec.execute(&payload(ConfigSpace::orin().max_config()));
        assert_eq!(ok.status, SampleStatus::Ok);
    }

    #[test]
    fn timeout_status() {
        let mut settings = ClientSettings::sim("c", "127.0.0.1:0");
        settings.timeout_s = 10.0;
        let mut exec = SampleExecutor::new(&settings).unwrap();
        let r = exec.execute(&payload(ConfigSpace::orin().max_config()));
        assert_eq!(r.status, SampleStatus::Timeout);
        assert!(r.error_msg.is_some());
    }

    #[test]
    fn unknown_workload_and_stub_backend() {
        let mut exec = SampleExecutor::new(&ClientSettings::sim("c", "127.0.0.1:0")).unwrap();
        let mut p = payload(ConfigSpace::orin().max_config());
        p.workload.name = "resnet".into();
        assert_eq!(exec.execute(&p).status, SampleStatus::Error);
        p.workload.name.clear();
        assert_eq!(exec.execute(&p).status, SampleStatus::Ok);

        let mut settings = ClientSettings::sim("orin", "127.0.0.1:0");
        settings.device = DeviceKind::JetsonOrin;
        let mut exec = SampleExecutor::new(&settings).unwrap();
        let r = exec.execute(&payload(ConfigSpace::orin().max_config()));
        assert_eq!(r.status, SampleStatus::Error);
        assert!(r.error_msg.unwrap().contains("not implemented"));
    }

    #[test]
    fn disabled_meters_are_absent() {
        let mut settings = ClientSettings::sim("c", "127.0.0.1:0");
        settings.meters = "time".parse().unwrap();
        let mut exec = SampleExecutor::new(&settings).unwrap();
        let r = exec.execute(&payload(ConfigSpace::orin().max_config()));
        assert_eq!(r.metrics, Some(Metrics { time_s: Some(20.0), power_w: None, memory_mb: None }));
    }

    #[test]
    fn settings_validation() {
        let mut s = ClientSettings::sim("", "127.0.0.1:0");
        assert!(SampleExecutor::new(&s).is_err());
        s.client_id = "x".into();
        s.timeout_s = 0.0;
        assert!(SampleExecutor::new(&s).is_err());
        s.timeout_s = 1.0;
        s.preset = "nope".into();
        assert!(SampleExecutor::new(&s).is_err());
    }
}
