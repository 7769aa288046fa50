//! Meters wrapped around one workload run.
//!
//! [`measure_run`] times the run, samples the instantaneous power probe
//! periodically while it executes, and reads the peak-memory probe once it
//! finishes. Workloads backed by a virtual clock report their own duration,
//! and the power sampling schedule is replayed against that clock instead of
//! wall time.

use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::protocol::{Meter, Metrics};

pub const DEFAULT_POWER_INTERVAL_MS: u64 = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeasureError {
    #[error("no meter enabled")]
    NoMeters,
    #[error("power sample interval must be at least 1 ms")]
    BadInterval,
    #[error("unknown meter `{0}` (expected time, power or memory)")]
    UnknownMeter(String),
    #[error("workload failed: {0}")]
    Workload(#[from] WorkloadError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorkloadError {
    #[error("{0}")]
    Failed(String),
    #[error("run exceeded the {0:.3} s timeout")]
    Timeout(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeterSet {
    pub time_enabled: bool,
    pub power_enabled: bool,
    pub memory_enabled: bool,
    pub power_sample_interval_ms: u64,
}

impl Default for MeterSet {
    fn default() -> Self {
        Self::all()
    }
}

impl MeterSet {
    pub fn all() -> Self {
        Self {
            time_enabled: true,
            power_enabled: true,
            memory_enabled: true,
            power_sample_interval_ms: DEFAULT_POWER_INTERVAL_MS,
        }
    }

    pub fn from_meters(meters: &[Meter]) -> Result<Self, MeasureError> {
        let set = Self {
            time_enabled: meters.contains(&Meter::Time),
            power_enabled: meters.contains(&Meter::Power),
            memory_enabled: meters.contains(&Meter::Memory),
            power_sample_interval_ms: DEFAULT_POWER_INTERVAL_MS,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn with_interval_ms(mut self, ms: u64) -> Self {
        self.power_sample_interval_ms = ms;
        self
    }

    pub fn validate(&self) -> Result<(), MeasureError> {
        if !(self.time_enabled || self.power_enabled || self.memory_enabled) {
            return Err(MeasureError::NoMeters);
        }
        if self.power_sample_interval_ms < 1 {
            return Err(MeasureError::BadInterval);
        }
        Ok(())
    }

    pub fn is_enabled(&self, meter: Meter) -> bool {
        match meter {
            Meter::Time => self.time_enabled,
            Meter::Power => self.power_enabled,
            Meter::Memory => self.memory_enabled,
        }
    }

    /// Enabled meters in canonical order.
    pub fn meters(&self) -> Vec<Meter> {
        [Meter::Time, Meter::Power, Meter::Memory].into_iter().filter(|&m| self.is_enabled(m)).collect()
    }

    pub fn contains(&self, other: &MeterSet) -> bool {
        other.meters().iter().all(|&m| self.is_enabled(m))
    }
}

impl FromStr for MeterSet {
    type Err = MeasureError;

    /// Parses a comma-separated list such as `time,power,memory`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let meters = s
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(|t| match t {
                "time" => Ok(Meter::Time),
                "power" => Ok(Meter::Power),
                "memory" => Ok(Meter::Memory),
                other => Err(MeasureError::UnknownMeter(other.to_string())),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_meters(&meters)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MeasurementSet {
    pub time_s: Option<f64>,
    pub power_w: Option<f64>,
    pub power_peak_w: Option<f64>,
    pub memory_mb: Option<f64>,
}

impl MeasurementSet {
    pub fn metrics(&self) -> Metrics {
        Metrics { time_s: self.time_s, power_w: self.power_w, memory_mb: self.memory_mb }
    }
}

/// A unit of work plus the probes a device backend exposes while it runs.
pub trait Workload: Sync {
    /// Executes the work once.
    fn run(&self) -> Result<(), WorkloadError>;

    /// Instantaneous board power in watts. `elapsed_s` is the time since the
    /// run started on whichever clock the run uses.
    fn power_probe_w(&self, elapsed_s: f64) -> f64;

    /// Peak memory observed so far, in megabytes.
    fn peak_memory_mb(&self) -> f64;

    /// Duration of the run on a virtual clock, or `None` to time it with
    /// the wall clock.
    fn virtual_duration_s(&self) -> Option<f64> {
        None
    }
}

#[derive(Debug, Default)]
struct PowerStats {
    sum: f64,
    count: u64,
    peak: f64,
}

impl PowerStats {
    fn add(&mut self, w: f64) {
        self.sum += w;
        self.count += 1;
        if self.count == 1 || w > self.peak {
            self.peak = w;
        }
    }

    fn mean(&self) -> f64 {
        self.sum / self.count as f64
    }
}

pub fn measure_run<W: Workload + ?Sized>(workload: &W, meters: &MeterSet) -> Result<MeasurementSet, MeasureError> {
    meters.validate()?;
    let interval_s = meters.power_sample_interval_ms as f64 / 1000.0;

    let (elapsed_s, power) = match workload.virtual_duration_s() {
        Some(duration) => {
            workload.run()?;
            let mut stats = PowerStats::default();
            if meters.power_enabled {
                let mut k = 0u64;
                loop {
                    let t = k as f64 * interval_s;
                    if k > 0 && t >= duration {
                        break;
                    }
                    stats.add(workload.power_probe_w(t));
                    k += 1;
                }
            }
            (duration, stats)
        }
        None => run_wall_clock(workload, meters, interval_s)?,
    };

    let mut out = MeasurementSet::default();
    if meters.time_enabled {
        out.time_s = Some(elapsed_s);
    }
    if meters.power_enabled {
        out.power_w = Some(power.mean());
        out.power_peak_w = Some(power.peak);
    }
    if meters.memory_enabled {
        out.memory_mb = Some(workload.peak_memory_mb());
    }
    Ok(out)
}

fn run_wall_clock<W: Workload + ?Sized>(
    workload: &W,
    meters: &MeterSet,
    interval_s: f64,
) -> Result<(f64, PowerStats), MeasureError> {
    let stats = Mutex::new(PowerStats::default());
    let done = AtomicBool::new(false);
    let interval = Duration::from_millis(meters.power_sample_interval_ms);
    let start = Instant::now();

    if meters.power_enabled {
        stats.lock().unwrap().add(workload.power_probe_w(0.0));
    }
    let result = thread::scope(|scope| {
        if meters.power_enabled {
            scope.spawn(|| {
                let mut k = 1u32;
                loop {
                    let next = start + interval * k;
                    while Instant::now() < next {
                        if done.load(Ordering::Acquire) {
                            return;
                        }
                        thread::sleep((next - Instant::now()).min(Duration::from_millis(5)));
                    }
                    if done.load(Ordering::Acquire) {
                        return;
                    }
                    let w = workload.power_probe_w(k as f64 * interval_s);
                    stats.lock().unwrap().add(w);
                    k += 1;
                }
            });
        }
        let r = workload.run();
        done.store(true, Ordering::Release);
        r
    });
    let elapsed = start.elapsed().as_secs_f64();
    result?;
    Ok((elapsed, stats.into_inner().unwrap()))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Constant {
        watts: f64,
        virtual_s: Option<f64>,
        sleep: Duration,
    }

    impl Workload for Constant {
        fn run(&self) -> Result<(), WorkloadError> {
            thread::sleep(self.sleep);
            Ok(())
        }
        fn power_probe_w(&self, _: f64) -> f64 {
            self.watts
        }
        fn peak_memory_mb(&self) -> f64 {
            512.0
        }
        fn virtual_duration_s(&self) -> Option<f64> {
            self.virtual_s
        }
    }

    /// Power ramps linearly with elapsed time.
    struct Ramp;

    impl Workload for Ramp {
        fn run(&self) -> Result<(), WorkloadError> {
            Ok(())
        }
        fn power_probe_w(&self, t: f64) -> f64 {
            10.0 + t
        }
        fn peak_memory_mb(&self) -> f64 {
            1.0
        }
        fn virtual_duration_s(&self) -> Option<f64> {
            Some(1.0)
        }
    }

    struct Failing;

    impl Workload for Failing {
        fn run(&self) -> Result<(), WorkloadError> {
            Err(WorkloadError::Failed("boom".into()))
        }
        fn power_probe_w(&self, _: f64) -> f64 {
            1.0
        }
        fn peak_memory_mb(&self) -> f64 {
            1.0
        }
    }

    #[test]
    fn constant_power_mean_and_peak() {
        let w = Constant { watts: 42.0, virtual_s: Some(20.0), sleep: Duration::ZERO };
        let m = measure_run(&w, &MeterSet::all()).unwrap();
        assert_eq!(m.power_w, Some(42.0));
        assert_eq!(m.power_peak_w, Some(42.0));
        assert_eq!(m.time_s, Some(20.0));
        assert_eq!(m.memory_mb, Some(512.0));
    }

    #[test]
    fn wall_clock_constant_power() {
        let w = Constant { watts: 42.0, virtual_s: None, sleep: Duration::from_millis(25) };
        let meters = MeterSet::all().with_interval_ms(5);
        let m = measure_run(&w, &meters).unwrap();
        assert_eq!(m.power_w, Some(42.0));
        assert!(m.time_s.unwrap() >= 0.025);
    }

    #[test]
    fn time_only_instant_workload() {
        let w = Constant { watts: 1.0, virtual_s: None, sleep: Duration::ZERO };
        let meters: MeterSet = "time".parse().unwrap();
        let m = measure_run(&w, &meters).unwrap();
        assert!(m.time_s.unwrap() >= 0.0);
        assert_eq!((m.power_w, m.power_peak_w, m.memory_mb), (None, None, None));
    }

    #[test]
    fn ramp_mean_within_sample_bounds() {
        let m = measure_run(&Ramp, &MeterSet::all()).unwrap();
        // samples at 0.0, 0.1, ..., 0.9
        let p = m.power_w.unwrap();
        assert!((p - 10.45).abs() < 1e-12, "{p}");
        assert!((m.power_peak_w.unwrap() - 10.9).abs() < 1e-12);
        assert!(m.power_peak_w.unwrap() >= p);
    }

    #[test]
    fn toggling_meters_does_not_change_others() {
        let all = measure_run(&Ramp, &MeterSet::all()).unwrap();
        let power_only = measure_run(&Ramp, &"power".parse().unwrap()).unwrap();
        let no_power = measure_run(&Ramp, &"time,memory".parse().unwrap()).unwrap();
        assert_eq!(all.power_w, power_only.power_w);
        assert_eq!(all.time_s, no_power.time_s);
        assert_eq!(all.memory_mb, no_power.memory_mb);
    }

    #[test]
    fn failure_propagates() {
        assert_eq!(
            measure_run(&Failing, &MeterSet::all()),
            Err(MeasureError::Workload(WorkloadError::Failed("boom".into())))
        );
    }

    #[test]
    fn meter_set_validation() {
        assert_eq!("".parse::<MeterSet>(), Err(MeasureError::NoMeters));
        assert_eq!("time,volts".parse::<MeterSet>(), Err(MeasureError::UnknownMeter("volts".into())));
        assert_eq!(MeterSet::all().with_interval_ms(0).validate(), Err(MeasureError::BadInterval));
        let tp: MeterSet = "power, time".parse().unwrap();
        assert_eq!(tp.meters(), vec![Meter::Time, Meter::Power]);
        assert!(MeterSet::all().contains(&tp));
        assert!(!tp.contains(&MeterSet::all()));
    }
}
