//! Host-side handles to clients.

use std::net::{TcpStream, ToSocketAddrs};
use std::thread;
use std::time::{Duration, Instant};

use log::warn;

use super::HostError;
use crate::client::SampleExecutor;
use crate::measurement::MeterSet;
use crate::protocol::{ConfigPayload, Connection, ErrPayload, HelloPayload, Message, ProtocolError, ResultPayload};

/// One client as seen by the coordinator.
pub trait ClientLink: Send {
    fn client_id(&self) -> &str;

    /// Runs one sample to completion. An error means the link is unusable.
    fn execute(&mut self, cfg: &ConfigPayload) -> Result<ResultPayload, HostError>;

    /// Ends the session politely.
    fn close(&mut self);
}

/// A client daemon reached over TCP.
pub struct TcpLink {
    conn: Connection<TcpStream>,
    hello: HelloPayload,
    address: String,
}

impl TcpLink {
    /// Connects (retrying until `timeout` elapses), reads the client's HELLO
    /// and checks it offers every meter in `required`.
    pub fn connect(address: &str, required: &MeterSet, timeout: Duration) -> Result<Self, HostError> {
        let deadline = Instant::now() + timeout;
        let stream = loop {
            let attempt = address
                .to_socket_addrs()
                .and_then(|mut addrs| addrs.next().ok_or_else(|| std::io::Error::other("no address")))
                .and_then(|addr| TcpStream::connect_timeout(&addr, Duration::from_millis(500)));
            match attempt {
                Ok(s) => break s,
                Err(e) if Instant::now() >= deadline => {
                    return Err(HostError::Connect { address: address.to_string(), reason: e.to_string() });
                }
                Err(_) => thread::sleep(Duration::from_millis(50)),
            }
        };
        let _ = stream.set_nodelay(true);
        let mut conn = Connection::new(stream);
        let hello = match conn.recv() {
            Ok(Message::Hello(h)) => h,
            Ok(other) => {
                let message = format!("expected HELLO, got {}", other.kind());
                let _ = conn.send(Message::Err(ErrPayload { message: message.clone() }));
                return Err(HostError::Handshake { address: address.to_string(), reason: message });
            }
            Err(e) => {
                if matches!(e, ProtocolError::VersionMismatch { .. } | ProtocolError::Parse(_)) {
                    let _ = conn.send(Message::Err(ErrPayload { message: e.to_string() }));
                }
                return Err(HostError::Handshake { address: address.to_string(), reason: e.to_string() });
            }
        };
        let missing: Vec<_> = required.meters().into_iter().filter(|m| !hello.meters.contains(m)).collect();
        if !missing.is_empty() {
            let message = format!("client lacks meters {missing:?}");
            let _ = conn.send(Message::Err(ErrPayload { message: message.clone() }));
            return Err(HostError::Handshake { address: address.to_string(), reason: message });
        }
        Ok(Self { conn, hello, address: address.to_string() })
    }

    pub fn hello(&self) -> &HelloPayload {
        &self.hello
    }
}

impl ClientLink for TcpLink {
    fn client_id(&self) -> &str {
        &self.hello.client_id
    }

    fn execute(&mut self, cfg: &ConfigPayload) -> Result<ResultPayload, HostError> {
        let lost = |e: ProtocolError| HostError::Link { client: self.hello.client_id.clone(), reason: e.to_string() };
        self.conn.send(Message::Config(cfg.clone())).map_err(lost)?;
        let lost = |e: ProtocolError| HostError::Link { client: self.hello.client_id.clone(), reason: e.to_string() };
        match self.conn.recv().map_err(lost)? {
            Message::Result(r) if r.sample_id == cfg.sample_id => {
                r.check_against(&self.hello.meters).map_err(lost)?;
                Ok(r)
            }
            Message::Result(r) => Err(HostError::Link {
                client: self.hello.client_id.clone(),
                reason: format!("RESULT for {} while {} was outstanding", r.sample_id, cfg.sample_id),
            }),
            Message::Err(e) => Err(HostError::Link { client: self.hello.client_id.clone(), reason: e.message }),
            other => Err(HostError::Link {
                client: self.hello.client_id.clone(),
                reason: format!("unexpected {} from client", other.kind()),
            }),
        }
    }

    fn close(&mut self) {
        if let Err(e) = self.conn.send(Message::Bye) {
            warn!("BYE to {} ({}) failed: {e}", self.hello.client_id, self.address);
        }
    }
}

/// An in-process client: no sockets, same execution path as the daemon.
pub struct LocalLink {
    executor: SampleExecutor,
}

impl LocalLink {
    pub fn new(executor: SampleExecutor) -> Self {
        Self { executor }
    }
}

impl ClientLink for LocalLink {
    fn client_id(&self) -> &str {
        self.executor.client_id()
    }

    fn execute(&mut self, cfg: &ConfigPayload) -> Result<ResultPayload, HostError> {
        Ok(self.executor.execute(cfg))
    }

    fn close(&mut self) {}
}
