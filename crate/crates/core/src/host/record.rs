use serde::Serialize;

use crate::configspace::Configuration;
use crate::protocol::{Metrics, ResultPayload, SampleStatus};

/// One measured sample as persisted to CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleRecord {
    pub sample_id: String,
    pub client_id: String,
    pub config: Configuration,
    pub time_s: Option<f64>,
    pub power_w: Option<f64>,
    pub memory_mb: Option<f64>,
    pub status: SampleStatus,
    pub timestamp: String,
}

impl SampleRecord {
    /// Joins a RESULT with the configuration it was dispatched for. Metric
    /// values are quantized to their CSV representation so that a record
    /// read back from disk compares equal to the one that was written.
    pub fn from_result(result: &ResultPayload, client_id: &str, config: Configuration, timestamp: String) -> Self {
        let m = match result.status {
            SampleStatus::Ok => result.metrics.unwrap_or_default(),
            _ => Metrics::default(),
        };
        Self {
            sample_id: result.sample_id.clone(),
            client_id: client_id.to_string(),
            config,
            time_s: m.time_s.map(quantize),
            power_w: m.power_w.map(quantize),
            memory_mb: m.memory_mb.map(quantize),
            status: result.status,
            timestamp,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == SampleStatus::Ok
    }
}

/// Renders a metric with at most six decimals, no exponent, trailing zeros
/// trimmed but at least one fractional digit (`20.0`, `14.487331`).
pub fn format_metric(v: f64) -> String {
    let mut s = format!("{v:.6}");
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.push('0');
        }
    }
    if s == "-0.0" {
        s = "0.0".to_string();
    }
    s
}

/// Rounds `v` to the value its CSV rendering parses back to.
pub fn quantize(v: f64) -> f64 {
    if !v.is_finite() {
        return v;
    }
    format_metric(v).parse().expect("formatted metric parses")
}
