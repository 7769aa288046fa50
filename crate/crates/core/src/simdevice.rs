//! Deterministic stand-in for a Jetson Orin board.
//!
//! Latency, power and memory are closed-form functions of the applied
//! [`Configuration`], expressed through normalized rates in `[0, 1]`:
//!
//! ```text
//! G  = gpu / gpu_max
//! C  = sum(cores_i * freq_i) / (total_cores_max * cpu_freq_max)
//! C' = c_floor + (1 - c_floor) * C
//! E  = emc / emc_max
//! E' = e_floor + (1 - e_floor) * E
//!
//! latency = t_ref * (alpha / G + beta / E' + gamma / C') * (kappa if emc is the lowest grid value else 1)
//! power   = p_min + (p_max - p_min) * (w_g * G + w_e * E + w_c * C)
//! memory  = mem_base
//! ```
//!
//! The lowest-EMC multiplier produces a latency cluster that is disjoint
//! from every other configuration's latency; [`DeviceModel::validate`]
//! enforces that separation against the space it is used with.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use log::info;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::configspace::{ConfigSpace, Configuration, SpaceError};
use crate::measurement::{Workload, WorkloadError};
use crate::rng::SplitMix64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeviceError {
    #[error(transparent)]
    Membership(#[from] SpaceError),
    #[error("jetson-orin backend is not implemented; intended writes: {}", .writes.join("; "))]
    NotImplemented { writes: Vec<String> },
    #[error("invalid device model: {0}")]
    InvalidModel(String),
    #[error("unknown workload preset `{0}`")]
    UnknownPreset(String),
    #[error("no configuration has been applied")]
    NotConfigured,
    #[error("cannot load model file: {0}")]
    ModelFile(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadPreset {
    pub name: String,
    /// Latency at the all-maximum configuration, seconds.
    pub t_ref_s: f64,
    pub mem_base_mb: f64,
}

impl WorkloadPreset {
    pub fn llama() -> Self {
        Self { name: "llama".into(), t_ref_s: 20.0, mem_base_mb: 26_000.0 }
    }

    pub fn llava() -> Self {
        Self { name: "llava".into(), t_ref_s: 15.0, mem_base_mb: 28_000.0 }
    }

    pub fn builtin() -> Vec<Self> {
        vec![Self::llama(), Self::llava()]
    }

    fn validate(&self) -> Result<(), DeviceError> {
        if self.name.is_empty()
            || self.t_ref_s.is_nan()
            || self.t_ref_s <= 0.0
            || self.mem_base_mb.is_nan()
            || self.mem_base_mb <= 0.0
        {
            return Err(DeviceError::InvalidModel(format!(
                "preset `{}` needs a name and positive constants",
                self.name
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceModel {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub kappa: f64,
    pub c_floor: f64,
    pub e_floor: f64,
    pub p_min_w: f64,
    pub p_max_w: f64,
    pub w_g: f64,
    pub w_e: f64,
    pub w_c: f64,
    /// Relative standard deviation of multiplicative Gaussian noise on
    /// latency and power. Zero disables noise.
    pub noise_std: f64,
    pub noise_seed: u64,
}

impl Default for DeviceModel {
    fn default() -> Self {
        Self {
            alpha: 0.50,
            beta: 0.25,
            gamma: 0.25,
            kappa: 3.5,
            c_floor: 0.15,
            e_floor: 0.35,
            p_min_w: 10.0,
            p_max_w: 42.0,
            w_g: 0.55,
            w_e: 0.15,
            w_c: 0.30,
            noise_std: 0.0,
            noise_seed: 0,
        }
    }
}

/// Normalized rates of one configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rates {
    pub gpu: f64,
    pub cpu: f64,
    pub cpu_floored: f64,
    pub emc: f64,
    pub emc_floored: f64,
    pub lowest_emc: bool,
}

/// Space-derived normalizers.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Scale {
    gpu_max: f64,
    cpu_capacity: f64,
    emc_max: f64,
    emc_min: u64,
}

impl Scale {
    fn of(space: &ConfigSpace) -> Result<Self, DeviceError> {
        if space.params().len() != crate::configspace::PARAM_COUNT {
            return Err(DeviceError::InvalidModel("space must have 8 parameters".into()));
        }
        let total_cores: u64 = (0..3).map(|i| space.param(i).max()).sum();
        let cpu_max = (3..6).map(|i| space.param(i).max()).max().unwrap_or(0);
        let capacity = (total_cores * cpu_max) as f64;
        if capacity <= 0.0 {
            return Err(DeviceError::InvalidModel("space has no CPU capacity".into()));
        }
        Ok(Self {
            gpu_max: space.param(6).max() as f64,
            cpu_capacity: capacity,
            emc_max: space.param(7).max() as f64,
            emc_min: space.param(7).min(),
        })
    }
}

impl DeviceModel {
    pub fn from_json(text: &str) -> Result<ModelFile, DeviceError> {
        serde_json::from_str(text).map_err(|e| DeviceError::ModelFile(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<ModelFile, DeviceError> {
        let text = fs::read_to_string(path).map_err(|e| DeviceError::ModelFile(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    fn rates_with(&self, scale: &Scale, c: &Configuration) -> Rates {
        let gpu = f64::from(c.gpu_freq_khz) / scale.gpu_max;
        let busy: f64 = c.clusters().iter().map(|&(n, f)| f64::from(n) * f64::from(f)).sum();
        let cpu = busy / scale.cpu_capacity;
        let emc = f64::from(c.emc_freq_khz) / scale.emc_max;
        Rates {
            gpu,
            cpu,
            cpu_floored: self.c_floor + (1.0 - self.c_floor) * cpu,
            emc,
            emc_floored: self.e_floor + (1.0 - self.e_floor) * emc,
            lowest_emc: u64::from(c.emc_freq_khz) == scale.emc_min,
        }
    }

    fn latency_factor(&self, r: &Rates) -> f64 {
        let base = self.alpha / r.gpu + self.beta / r.emc_floored + self.gamma / r.cpu_floored;
        if r.lowest_emc {
            base * self.kappa
        } else {
            base
        }
    }

    fn power_of(&self, r: &Rates) -> f64 {
        self.p_min_w + (self.p_max_w - self.p_min_w) * (self.w_g * r.gpu + self.w_e * r.emc + self.w_c * r.cpu)
    }

    /// Largest latency factor over configurations whose EMC is above the
    /// lowest grid value (GPU, CPU and EMC each at their slowest admissible
    /// setting).
    pub fn fast_cluster_bound(&self, space: &ConfigSpace) -> Result<f64, DeviceError> {
        let scale = Scale::of(space)?;
        let mut slow = space.min_config();
        let emc = &space.param(7).values;
        if emc.len() < 2 {
            return Err(DeviceError::InvalidModel("EMC grid needs at least two values".into()));
        }
        slow.emc_freq_khz = emc[1] as u32;
        Ok(self.latency_factor(&self.rates_with(&scale, &slow)))
    }

    /// Smallest latency factor over configurations at the lowest EMC value.
    pub fn cutoff_cluster_bound(&self, space: &ConfigSpace) -> Result<f64, DeviceError> {
        let scale = Scale::of(space)?;
        let mut fast = space.max_config();
        fast.emc_freq_khz = scale.emc_min as u32;
        Ok(self.latency_factor(&self.rates_with(&scale, &fast)))
    }

    /// Checks weight sums, ranges and the EMC separation condition.
    pub fn validate(&self, space: &ConfigSpace) -> Result<(), DeviceError> {
        let bad = |m: &str| Err(DeviceError::InvalidModel(m.to_string()));
        let weights = [self.alpha, self.beta, self.gamma, self.w_g, self.w_e, self.w_c];
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return bad("weights must be finite and non-negative");
        }
        if ((self.alpha + self.beta + self.gamma) - 1.0).abs() > 1e-9 {
            return bad("alpha + beta + gamma must equal 1");
        }
        if ((self.w_g + self.w_e + self.w_c) - 1.0).abs() > 1e-9 {
            return bad("w_g + w_e + w_c must equal 1");
        }
        if !(0.0..1.0).contains(&self.c_floor) || !(0.0..1.0).contains(&self.e_floor) {
            return bad("rate floors must lie in [0, 1)");
        }
        if !(self.p_min_w > 0.0 && self.p_max_w > self.p_min_w) {
            return bad("need 0 < p_min_w < p_max_w");
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad("noise_std must be finite and non-negative");
        }
        if !(space.param(6).min() > 0 && self.kappa.is_finite()) {
            return bad("gpu grid must be positive and kappa finite");
        }
        let fast = self.fast_cluster_bound(space)?;
        let cutoff_unit = self.cutoff_cluster_bound(space)? / self.kappa;
        if self.kappa <= fast / cutoff_unit {
            return Err(DeviceError::InvalidModel(format!(
                "kappa {} does not separate the lowest-EMC cluster (needs > {:.6})",
                self.kappa,
                fast / cutoff_unit
            )));
        }
        Ok(())
    }
}

/// JSON model file: optional overrides of the model constants and presets.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    #[serde(default)]
    pub model: DeviceModel,
    #[serde(default)]
    pub presets: Vec<WorkloadPreset>,
}

/// Model bound to a space and a preset table.
#[derive(Debug, Clone)]
pub struct Simulator {
    model: DeviceModel,
    space: ConfigSpace,
    scale: Scale,
    presets: BTreeMap<String, WorkloadPreset>,
}

impl Simulator {
    pub fn new(model: DeviceModel, space: ConfigSpace) -> Result<Self, DeviceError> {
        model.validate(&space)?;
        let scale = Scale::of(&space)?;
        let presets = WorkloadPreset::builtin().into_iter().map(|p| (p.name.clone(), p)).collect();
        Ok(Self { model, space, scale, presets })
    }

    pub fn orin() -> Self {
        Self::new(DeviceModel::default(), ConfigSpace::orin()).expect("default model is valid")
    }

    /// Applies a model file: its model replaces the defaults and its presets
    /// are added to (or replace) the built-ins.
    pub fn with_model_file(file: ModelFile, space: ConfigSpace) -> Result<Self, DeviceError> {
        let mut sim = Self::new(file.model, space)?;
        for p in file.presets {
            p.validate()?;
            sim.presets.insert(p.name.clone(), p);
        }
        Ok(sim)
    }

    pub fn model(&self) -> &DeviceModel {
        &self.model
    }

    pub fn space(&self) -> &ConfigSpace {
        &self.space
    }

    pub fn preset(&self, name: &str) -> Result<&WorkloadPreset, DeviceError> {
        self.presets.get(name).ok_or_else(|| DeviceError::UnknownPreset(name.to_string()))
    }

    pub fn rates(&self, config: &Configuration) -> Result<Rates, DeviceError> {
        self.space.validate(config)?;
        Ok(self.model.rates_with(&self.scale, config))
    }

    pub fn sim_latency(&self, preset: &WorkloadPreset, config: &Configuration) -> Result<f64, DeviceError> {
        let r = self.rates(config)?;
        Ok(preset.t_ref_s * self.model.latency_factor(&r))
    }

    pub fn sim_power(&self, config: &Configuration) -> Result<f64, DeviceError> {
        let r = self.rates(config)?;
        Ok(self.model.power_of(&r))
    }

    pub fn sim_memory(&self, preset: &WorkloadPreset, _config: &Configuration) -> f64 {
        preset.mem_base_mb
    }
}

/// The JConfig role: puts a configuration into effect on a board.
pub trait ConfigApplier: Send {
    fn apply(&mut self, config: &Configuration) -> Result<(), DeviceError>;
}

/// Applier backed by the simulator; remembers the applied configuration.
#[derive(Debug)]
pub struct SimApplier {
    sim: Simulator,
    current: Option<Configuration>,
    noise: Mutex<SplitMix64>,
}

impl SimApplier {
    pub fn new(sim: Simulator) -> Self {
        let noise = Mutex::new(SplitMix64::new(sim.model.noise_seed));
        Self { sim, current: None, noise }
    }

    pub fn simulator(&self) -> &Simulator {
        &self.sim
    }

    pub fn current(&self) -> Option<&Configuration> {
        self.current.as_ref()
    }

    pub fn current_power(&self) -> Result<f64, DeviceError> {
        self.sim.sim_power(self.current.as_ref().ok_or(DeviceError::NotConfigured)?)
    }

    /// Builds the runnable workload for the current configuration.
    ///
    /// Recognized params: `time_scale` (positive float multiplying latency).
    pub fn workload(
        &self,
        preset: &WorkloadPreset,
        params: &BTreeMap<String, String>,
        timing: Timing,
        timeout_s: f64,
    ) -> Result<SimWorkload, WorkloadError> {
        let config = self.current.ok_or_else(|| WorkloadError::Failed("no configuration applied".into()))?;
        let mut latency = self.sim.sim_latency(preset, &config).map_err(|e| WorkloadError::Failed(e.to_string()))?;
        let mut power = self.sim.sim_power(&config).map_err(|e| WorkloadError::Failed(e.to_string()))?;
        if let Some(scale) = params.get("time_scale") {
            let s: f64 = scale
                .parse()
                .ok()
                .filter(|s: &f64| *s > 0.0 && s.is_finite())
                .ok_or_else(|| WorkloadError::Failed(format!("invalid time_scale `{scale}`")))?;
            latency *= s;
        }
        let std = self.sim.model.noise_std;
        if std > 0.0 {
            let mut rng = self.noise.lock().unwrap();
            latency = (latency * (1.0 + std * rng.next_gaussian())).max(latency * 0.01);
            power = (power * (1.0 + std * rng.next_gaussian())).clamp(self.sim.model.p_min_w, self.sim.model.p_max_w);
        }
        Ok(SimWorkload { latency_s: latency, power_w: power, memory_mb: preset.mem_base_mb, timing, timeout_s })
    }
}

impl ConfigApplier for SimApplier {
    fn apply(&mut self, config: &Configuration) -> Result<(), DeviceError> {
        self.sim.space.validate(config)?;
        self.current = Some(*config);
        Ok(())
    }
}

/// Placeholder for real Orin hardware control. Validates and reports the
/// sysfs writes it would perform, then refuses.
#[derive(Debug)]
pub struct JetsonOrinStub {
    space: ConfigSpace,
}

impl JetsonOrinStub {
    pub fn new(space: ConfigSpace) -> Self {
        Self { space }
    }

    pub fn intended_writes(config: &Configuration) -> Vec<String> {
        let mut writes = Vec::new();
        for (cluster, (cores, freq)) in config.clusters().iter().enumerate() {
            let first = cluster * 4;
            for cpu in first..first + 4 {
                // cpu0 cannot be taken offline
                if cpu == 0 {
                    continue;
                }
                let online = u32::from(cpu - first < *cores as usize);
                writes.push(format!("/sys/devices/system/cpu/cpu{cpu}/online <- {online}"));
            }
            writes.push(format!("/sys/devices/system/cpu/cpufreq/policy{first}/scaling_max_freq <- {freq}"));
            writes.push(format!("/sys/devices/system/cpu/cpufreq/policy{first}/scaling_min_freq <- {freq}"));
        }
        let gpu_hz = u64::from(config.gpu_freq_khz) * 1000;
        writes.push(format!("/sys/devices/17000000.ga10b/devfreq/17000000.ga10b/max_freq <- {gpu_hz}"));
        writes.push(format!("/sys/devices/17000000.ga10b/devfreq/17000000.ga10b/min_freq <- {gpu_hz}"));
        let emc_hz = u64::from(config.emc_freq_khz) * 1000;
        writes.push(format!("/sys/kernel/debug/bpmp/debug/clk/emc/rate <- {emc_hz}"));
        writes
    }
}

impl ConfigApplier for JetsonOrinStub {
    fn apply(&mut self, config: &Configuration) -> Result<(), DeviceError> {
        self.space.validate(config)?;
        let writes = Self::intended_writes(config);
        for w in &writes {
            info!("jetson-orin (not applied): {w}");
        }
        Err(DeviceError::NotImplemented { writes })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Timing {
    /// Latency comes from the model; nothing sleeps.
    Virtual,
    /// The run sleeps for the modelled latency.
    Realtime,
}

/// One simulated inference run.
#[derive(Debug, Clone)]
pub struct SimWorkload {
    pub latency_s: f64,
    pub power_w: f64,
    pub memory_mb: f64,
    pub timing: Timing,
    pub timeout_s: f64,
}

impl Workload for SimWorkload {
    fn run(&self) -> Result<(), WorkloadError> {
        if self.timing == Timing::Realtime {
            thread::sleep(Duration::from_secs_f64(self.latency_s.min(self.timeout_s)));
        }
        if self.latency_s > self.timeout_s {
            return Err(WorkloadError::Timeout(self.timeout_s));
        }
        Ok(())
    }

    fn power_probe_w(&self, _elapsed_s: f64) -> f64 {
        self.power_w
    }

    fn peak_memory_mb(&self) -> f64 {
        self.memory_mb
    }

    fn virtual_duration_s(&self) -> Option<f64> {
        match self.timing {
            Timing::Virtual => Some(self.latency_s),
            Timing::Realtime => None,
        }
    }
}
