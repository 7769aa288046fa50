//! Host/client wire protocol.
//!
//! Every message is one frame: a 4-byte big-endian body length followed by a
//! compact UTF-8 JSON body `{"type":..,"seq":..,"payload":..}` with keys in
//! exactly that order. The host pushes `CONFIG`/`BYE`; the client sends
//! `HELLO`, `RESULT` and `ERR`. Both directions share one stream.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::configspace::Configuration;

pub const PROTOCOL_VERSION: u32 = 1;

/// Largest admissible body, in bytes (inclusive).
pub const MAX_BODY_LEN: usize = 1 << 24;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("frame body of {len} bytes exceeds the {MAX_BODY_LEN}-byte limit")]
    FrameTooLarge { len: usize },
    #[error("incomplete frame: expected {expected} bytes, stream ended after {received}")]
    IncompleteFrame { expected: usize, received: usize },
    #[error("connection closed")]
    Closed,
    #[error("malformed message body: {0}")]
    Parse(String),
    #[error("unknown message type `{0}`")]
    UnknownType(String),
    #[error("unsupported protocol version {found} (expected {PROTOCOL_VERSION})")]
    VersionMismatch { found: u32 },
    #[error("protocol violation: {0}")]
    Violation(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MessageType {
    #[serde(rename = "HELLO")]
    Hello,
    #[serde(rename = "CONFIG")]
    Config,
    #[serde(rename = "RESULT")]
    Result,
    #[serde(rename = "BYE")]
    Bye,
    #[serde(rename = "ERR")]
    Err,
}

impl MessageType {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Hello => "HELLO",
            Self::Config => "CONFIG",
            Self::Result => "RESULT",
            Self::Bye => "BYE",
            Self::Err => "ERR",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "HELLO" => Self::Hello,
            "CONFIG" => Self::Config,
            "RESULT" => Self::Result,
            "BYE" => Self::Bye,
            "ERR" => Self::Err,
            _ => return None,
        })
    }
}

impl fmt::Display for MessageType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Meter {
    Time,
    Power,
    Memory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DeviceKind {
    #[serde(rename = "sim")]
    Sim,
    #[serde(rename = "jetson-orin")]
    JetsonOrin,
}

impl DeviceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Sim => "sim",
            Self::JetsonOrin => "jetson-orin",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HelloPayload {
    pub client_id: String,
    pub protocol_version: u32,
    pub device: DeviceKind,
    pub meters: Vec<Meter>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, String>,
}

impl WorkloadSpec {
    pub fn named(name: impl Into<String>) -> Self {
        Self { name: name.into(), params: BTreeMap::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigPayload {
    pub sample_id: String,
    pub config: Configuration,
    pub workload: WorkloadSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleStatus {
    Ok,
    Error,
    Timeout,
}

impl SampleStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Ok => "ok",
            Self::Error => "error",
            Self::Timeout => "timeout",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ok" => Some(Self::Ok),
            "error" => Some(Self::Error),
            "timeout" => Some(Self::Timeout),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power_w: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory_mb: Option<f64>,
}

impl Metrics {
    pub fn get(&self, meter: Meter) -> Option<f64> {
        match meter {
            Meter::Time => self.time_s,
            Meter::Power => self.power_w,
            Meter::Memory => self.memory_mb,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultPayload {
    pub sample_id: String,
    pub status: SampleStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<Metrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_msg: Option<String>,
}

impl ResultPayload {
    pub fn ok(sample_id: impl Into<String>, metrics: Metrics) -> Self {
        Self { sample_id: sample_id.into(), status: SampleStatus::Ok, metrics: Some(metrics), error_msg: None }
    }

    pub fn failed(sample_id: impl Into<String>, status: SampleStatus, msg: impl Into<String>) -> Self {
        debug_assert!(status != SampleStatus::Ok);
        let mut msg = msg.into();
        if msg.is_empty() {
            msg = status.as_str().to_string();
        }
        Self { sample_id: sample_id.into(), status, metrics: None, error_msg: Some(msg) }
    }

    /// Checks the status/metrics contract against the meters the client
    /// advertised.
    pub fn check_against(&self, meters: &[Meter]) -> Result<(), ProtocolError> {
        match self.status {
            SampleStatus::Ok => {
                let metrics = self.metrics.unwrap_or_default();
                for &m in meters {
                    if metrics.get(m).is_none() {
                        return Err(ProtocolError::Violation(format!(
                            "result {} is ok but lacks the {m:?} metric",
                            self.sample_id
                        )));
                    }
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrPayload {
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ByePayload {}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Hello(HelloPayload),
    Config(ConfigPayload),
    Result(ResultPayload),
    Bye,
    Err(ErrPayload),
}

impl Message {
    pub fn kind(&self) -> MessageType {
        match self {
            Self::Hello(_) => MessageType::Hello,
            Self::Config(_) => MessageType::Config,
            Self::Result(_) => MessageType::Result,
            Self::Bye => MessageType::Bye,
            Self::Err(_) => MessageType::Err,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MessageEnvelope {
    pub seq: u64,
    pub message: Message,
}

#[derive(Serialize)]
#[serde(untagged)]
enum PayloadRef<'a> {
    Hello(&'a HelloPayload),
    Config(&'a ConfigPayload),
    Result(&'a ResultPayload),
    Bye(ByePayload),
    Err(&'a ErrPayload),
}

#[derive(Serialize)]
struct WireOut<'a> {
    #[serde(rename = "type")]
    kind: &'static str,
    seq: u64,
    payload: PayloadRef<'a>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WireIn {
    #[serde(rename = "type")]
    kind: String,
    seq: u64,
    payload: serde_json::Value,
}

impl MessageEnvelope {
    pub fn new(seq: u64, message: Message) -> Self {
        Self { seq, message }
    }

    /// Validates the payload-level invariants.
    pub fn validate(&self) -> Result<(), ProtocolError> {
        match &self.message {
            Message::Hello(h) => {
                if h.protocol_version != PROTOCOL_VERSION {
                    return Err(ProtocolError::VersionMismatch { found: h.protocol_version });
                }
                if h.client_id.is_empty() {
                    return Err(ProtocolError::Violation("HELLO with empty client_id".into()));
                }
            }
            Message::Config(c) if c.sample_id.is_empty() => {
                return Err(ProtocolError::Violation("CONFIG with empty sample_id".into()));
            }
            Message::Result(r) => {
                if r.sample_id.is_empty() {
                    return Err(ProtocolError::Violation("RESULT with empty sample_id".into()));
                }
                if r.status != SampleStatus::Ok && r.error_msg.as_deref().is_none_or(str::is_empty) {
                    return Err(ProtocolError::Violation("failed RESULT without error_msg".into()));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Canonical JSON body.
    pub fn to_body(&self) -> Vec<u8> {
        let payload = match &self.message {
            Message::Hello(p) => PayloadRef::Hello(p),
            Message::Config(p) => PayloadRef::Config(p),
            Message::Result(p) => PayloadRef::Result(p),
            Message::Bye => PayloadRef::Bye(ByePayload {}),
            Message::Err(p) => PayloadRef::Err(p),
        };
        let wire = WireOut { kind: self.message.kind().as_str(), seq: self.seq, payload };
        serde_json::to_vec(&wire).expect("envelope serializes")
    }

    pub fn from_body(body: &[u8]) -> Result<Self, ProtocolError> {
        let wire: WireIn = serde_json::from_slice(body).map_err(|e| ProtocolError::Parse(e.to_string()))?;
        let kind = MessageType::parse(&wire.kind).ok_or(ProtocolError::UnknownType(wire.kind))?;
        fn payload<T: serde::de::DeserializeOwned>(v: serde_json::Value) -> Result<T, ProtocolError> {
            serde_json::from_value(v).map_err(|e| ProtocolError::Parse(e.to_string()))
        }
        let message = match kind {
            MessageType::Hello => Message::Hello(payload(wire.payload)?),
            MessageType::Config => Message::Config(payload(wire.payload)?),
            MessageType::Result => Message::Result(payload(wire.payload)?),
            MessageType::Bye => {
                let _: ByePayload = payload(wire.payload)?;
                Message::Bye
            }
            MessageType::Err => Message::Err(payload(wire.payload)?),
        };
        let env = Self { seq: wire.seq, message };
        env.validate()?;
        Ok(env)
    }
}

/// Prefixes `body` with its 4-byte big-endian length.
pub fn frame_body(body: &[u8]) -> Result<Vec<u8>, ProtocolError> {
    if body.len() > MAX_BODY_LEN {
        return Err(ProtocolError::FrameTooLarge { len: body.len() });
    }
    let mut out = Vec::with_capacity(4 + body.len());
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(body);
    Ok(out)
}

pub fn encode_frame(envelope: &MessageEnvelope) -> Result<Vec<u8>, ProtocolError> {
    envelope.validate()?;
    frame_body(&envelope.to_body())
}

/// Fills `buf` from `reader`, returning how many bytes arrived before EOF.
fn read_full<R: Read>(reader: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match reader.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

/// Reads exactly one frame body. A clean end of stream at a frame boundary
/// yields [`ProtocolError::Closed`].
pub fn read_frame<R: Read>(reader: &mut R) -> Result<Vec<u8>, ProtocolError> {
    let mut header = [0u8; 4];
    let got = read_full(reader, &mut header)?;
    if got == 0 {
        return Err(ProtocolError::Closed);
    }
    if got < header.len() {
        return Err(ProtocolError::IncompleteFrame { expected: 4, received: got });
    }
    let len = u32::from_be_bytes(header) as usize;
    if len > MAX_BODY_LEN {
        return Err(ProtocolError::FrameTooLarge { len });
    }
    let mut body = vec![0u8; len];
    let got = read_full(reader, &mut body)?;
    if got < len {
        return Err(ProtocolError::IncompleteFrame { expected: len, received: got });
    }
    Ok(body)
}

pub fn decode_frame<R: Read>(reader: &mut R) -> Result<MessageEnvelope, ProtocolError> {
    let body = read_frame(reader)?;
    MessageEnvelope::from_body(&body)
}

/// A framed, sequence-checked duplex connection.
///
/// Outgoing envelopes are numbered from 0; incoming envelopes must arrive
/// numbered from 0 without gaps.
pub struct Connection<S> {
    stream: S,
    send_seq: u64,
    recv_seq: u64,
}

impl<S: Read + Write> Connection<S> {
    pub fn new(stream: S) -> Self {
        Self { stream, send_seq: 0, recv_seq: 0 }
    }

    pub fn send(&mut self, message: Message) -> Result<(), ProtocolError> {
        let frame = encode_frame(&MessageEnvelope::new(self.send_seq, message))?;
        self.stream.write_all(&frame)?;
        self.stream.flush()?;
        self.send_seq += 1;
        Ok(())
    }

    pub fn recv(&mut self) -> Result<Message, ProtocolError> {
        let env = decode_frame(&mut self.stream)?;
        if env.seq != self.recv_seq {
            return Err(ProtocolError::Violation(format!("expected seq {}, received {}", self.recv_seq, env.seq)));
        }
        self.recv_seq += 1;
        Ok(env.message)
    }

    pub fn get_ref(&self) -> &S {
        &self.stream
    }

    pub fn into_inner(self) -> S {
        self.stream
    }
}
