//! The Jetson Orin hardware configuration space.
//!
//! A [`ConfigSpace`] is an ordered list of discrete parameters. Each point in
//! the space is addressed either by a [`Configuration`] (named values) or by
//! its mixed-radix index, where the first parameter is the most significant
//! digit and the last (EMC frequency) the least significant.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SplitMix64;

/// Number of tunable parameters in a [`Configuration`].
pub const PARAM_COUNT: usize = 8;

/// Field names in space order; also the CSV and wire field names.
pub const FIELD_NAMES: [&str; PARAM_COUNT] =
    ["cores_c1", "cores_c2", "cores_c3", "freq_c1_khz", "freq_c2_khz", "freq_c3_khz", "gpu_freq_khz", "emc_freq_khz"];

pub const CPU_FREQ_MIN_KHZ: u64 = 115_000;
pub const CPU_FREQ_MAX_KHZ: u64 = 2_200_000;
pub const CPU_FREQ_STEPS: usize = 29;
pub const GPU_FREQ_MIN_KHZ: u64 = 306_000;
pub const GPU_FREQ_MAX_KHZ: u64 = 1_300_000;
pub const GPU_FREQ_STEPS: usize = 11;
pub const EMC_FREQ_MIN_KHZ: u64 = 204_000;
pub const EMC_FREQ_MAX_KHZ: u64 = 3_200_000;
pub const EMC_FREQ_STEPS: usize = 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SpaceError {
    #[error("parameter `{field}` has value {value}, which is not on its grid")]
    NotOnGrid { field: String, value: u64 },
    #[error("index {index} is out of range for a space of cardinality {cardinality}")]
    IndexOutOfRange { index: u64, cardinality: u64 },
    #[error("digit {digit} of parameter `{field}` exceeds its radix {radix}")]
    DigitOutOfRange { field: String, digit: u64, radix: u64 },
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },
    #[error("space has {found} parameters; configurations need exactly {PARAM_COUNT}")]
    WrongArity { found: usize },
    #[error("space cardinality overflows 64 bits")]
    CardinalityOverflow,
    #[error("cannot read space file: {0}")]
    Io(String),
    #[error("malformed space file: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamKind {
    CoreCount,
    Frequency,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterDef {
    pub name: String,
    pub kind: ParamKind,
    /// Admissible values, strictly increasing. Frequencies are in kHz.
    pub values: Vec<u64>,
}

impl ParameterDef {
    pub fn new(name: impl Into<String>, kind: ParamKind, values: Vec<u64>) -> Result<Self, SpaceError> {
        let def = Self { name: name.into(), kind, values };
        def.validate()?;
        Ok(def)
    }

    /// Linearly spaced frequency grid between `lo` and `hi` inclusive,
    /// each value rounded to the nearest kHz (halves away from zero).
    pub fn linear_frequency(name: &str, lo: u64, hi: u64, count: usize) -> Self {
        assert!(count >= 2 && hi > lo);
        let steps = (count - 1) as u64;
        let values = (0..count as u64).map(|i| (2 * (lo * steps + i * (hi - lo)) + steps) / (2 * steps)).collect();
        Self { name: name.to_string(), kind: ParamKind::Frequency, values }
    }

    pub fn core_range(name: &str, lo: u64, hi: u64) -> Self {
        Self { name: name.to_string(), kind: ParamKind::CoreCount, values: (lo..=hi).collect() }
    }

    pub fn radix(&self) -> u64 {
        self.values.len() as u64
    }

    pub fn min(&self) -> u64 {
        self.values[0]
    }

    pub fn max(&self) -> u64 {
        self.values[self.values.len() - 1]
    }

    /// Grid position of `value`, if it is on the grid.
    pub fn position(&self, value: u64) -> Option<u64> {
        self.values.binary_search(&value).ok().map(|p| p as u64)
    }

    fn validate(&self) -> Result<(), SpaceError> {
        let invalid =
            |reason: &str| SpaceError::InvalidParameter { name: self.name.clone(), reason: reason.to_string() };
        if self.name.is_empty() {
            return Err(invalid("empty name"));
        }
        if self.values.is_empty() {
            return Err(invalid("no values"));
        }
        if self.values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("values must be strictly increasing"));
        }
        if self.kind == ParamKind::Frequency && self.values[0] == 0 {
            return Err(invalid("frequencies must be positive"));
        }
        Ok(())
    }
}

/// One point of the 8-parameter space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Configuration {
    pub cores_c1: u32,
    pub cores_c2: u32,
    pub cores_c3: u32,
    pub freq_c1_khz: u32,
    pub freq_c2_khz: u32,
    pub freq_c3_khz: u32,
    pub gpu_freq_khz: u32,
    pub emc_freq_khz: u32,
}

impl Configuration {
    /// Values in space order.
    pub fn values(&self) -> [u64; PARAM_COUNT] {
        [
            self.cores_c1,
            self.cores_c2,
            self.cores_c3,
            self.freq_c1_khz,
            self.freq_c2_khz,
            self.freq_c3_khz,
            self.gpu_freq_khz,
            self.emc_freq_khz,
        ]
        .map(u64::from)
    }

    /// Builds a configuration from values in space order. Values that do not
    /// fit in 32 bits cannot be on any grid and are rejected.
    pub fn from_values(values: [u64; PARAM_COUNT]) -> Result<Self, SpaceError> {
        let mut v = [0u32; PARAM_COUNT];
        for (i, (&value, slot)) in values.iter().zip(v.iter_mut()).enumerate() {
            *slot =
                u32::try_from(value).map_err(|_| SpaceError::NotOnGrid { field: FIELD_NAMES[i].to_string(), value })?;
        }
        Ok(Self {
            cores_c1: v[0],
            cores_c2: v[1],
            cores_c3: v[2],
            freq_c1_khz: v[3],
            freq_c2_khz: v[4],
            freq_c3_khz: v[5],
            gpu_freq_khz: v[6],
            emc_freq_khz: v[7],
        })
    }

    /// Pairs of (online cores, frequency kHz) per CPU cluster.
    pub fn clusters(&self) -> [(u32, u32); 3] {
        [(self.cores_c1, self.freq_c1_khz), (self.cores_c2, self.freq_c2_khz), (self.cores_c3, self.freq_c3_khz)]
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "cores=({},{},{}) cpu_khz=({},{},{}) gpu_khz={} emc_khz={}",
            self.cores_c1,
            self.cores_c2,
            self.cores_c3,
            self.freq_c1_khz,
            self.freq_c2_khz,
            self.freq_c3_khz,
            self.gpu_freq_khz,
            self.emc_freq_khz
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfigSpace {
    params: Vec<ParameterDef>,
    #[serde(skip)]
    cardinality: u64,
}

#[derive(Deserialize)]
struct SpaceFile {
    params: Vec<ParameterDef>,
}

impl ConfigSpace {
    /// Validates every parameter and the total cardinality.
    pub fn new(params: Vec<ParameterDef>) -> Result<Self, SpaceError> {
        let mut cardinality: u64 = 1;
        for p in &params {
            p.validate()?;
            cardinality = cardinality.checked_mul(p.radix()).ok_or(SpaceError::CardinalityOverflow)?;
        }
        Ok(Self { params, cardinality })
    }

    /// The canonical Jetson Orin space.
    pub fn orin() -> Self {
        let params = vec![
            ParameterDef::core_range("cores_c1", 1, 4),
            ParameterDef::core_range("cores_c2", 0, 4),
            ParameterDef::core_range("cores_c3", 0, 4),
            ParameterDef::linear_frequency("freq_c1_khz", CPU_FREQ_MIN_KHZ, CPU_FREQ_MAX_KHZ, CPU_FREQ_STEPS),
            ParameterDef::linear_frequency("freq_c2_khz", CPU_FREQ_MIN_KHZ, CPU_FREQ_MAX_KHZ, CPU_FREQ_STEPS),
            ParameterDef::linear_frequency("freq_c3_khz", CPU_FREQ_MIN_KHZ, CPU_FREQ_MAX_KHZ, CPU_FREQ_STEPS),
            ParameterDef::linear_frequency("gpu_freq_khz", GPU_FREQ_MIN_KHZ, GPU_FREQ_MAX_KHZ, GPU_FREQ_STEPS),
            ParameterDef::linear_frequency("emc_freq_khz", EMC_FREQ_MIN_KHZ, EMC_FREQ_MAX_KHZ, EMC_FREQ_STEPS),
        ];
        Self::new(params).expect("built-in Orin space is valid")
    }

    /// Loads `{"params":[{"name":..,"kind":..,"values":[..]}]}`.
    pub fn from_json(text: &str) -> Result<Self, SpaceError> {
        let file: SpaceFile = serde_json::from_str(text).map_err(|e| SpaceError::Parse(e.to_string()))?;
        Self::new(file.params)
    }

    pub fn from_file(path: &Path) -> Result<Self, SpaceError> {
        let text = fs::read_to_string(path).map_err(|e| SpaceError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("space serializes")
    }

    pub fn params(&self) -> &[ParameterDef] {
        &self.params
    }

    pub fn param(&self, i: usize) -> &ParameterDef {
        &self.params[i]
    }

    pub fn radices(&self) -> Vec<u64> {
        self.params.iter().map(ParameterDef::radix).collect()
    }

    pub fn cardinality(&self) -> u64 {
        self.cardinality
    }

    fn require_arity(&self) -> Result<(), SpaceError> {
        if self.params.len() != PARAM_COUNT {
            return Err(SpaceError::WrongArity { found: self.params.len() });
        }
        Ok(())
    }

    /// Checks grid membership of every field.
    pub fn validate(&self, config: &Configuration) -> Result<(), SpaceError> {
        self.digits_of(config).map(|_| ())
    }

    /// Grid positions of each field of `config`.
    pub fn digits_of(&self, config: &Configuration) -> Result<Vec<u64>, SpaceError> {
        self.require_arity()?;
        config
            .values()
            .iter()
            .zip(&self.params)
            .enumerate()
            .map(|(i, (&value, p))| {
                p.position(value).ok_or_else(|| SpaceError::NotOnGrid { field: FIELD_NAMES[i].to_string(), value })
            })
            .collect()
    }

    /// Configuration for a vector of grid positions.
    pub fn config_of(&self, digits: &[u64]) -> Result<Configuration, SpaceError> {
        self.require_arity()?;
        self.check_digits(digits)?;
        let mut values = [0u64; PARAM_COUNT];
        for (slot, (p, &d)) in values.iter_mut().zip(self.params.iter().zip(digits)) {
            *slot = p.values[d as usize];
        }
        Configuration::from_values(values)
    }

    fn check_digits(&self, digits: &[u64]) -> Result<(), SpaceError> {
        if digits.len() != self.params.len() {
            return Err(SpaceError::WrongArity { found: digits.len() });
        }
        for (p, &d) in self.params.iter().zip(digits) {
            if d >= p.radix() {
                return Err(SpaceError::DigitOutOfRange { field: p.name.clone(), digit: d, radix: p.radix() });
            }
        }
        Ok(())
    }

    /// Mixed-radix index of a digit vector (first parameter most significant).
    pub fn index_of_digits(&self, digits: &[u64]) -> Result<u64, SpaceError> {
        self.check_digits(digits)?;
        Ok(self.params.iter().zip(digits).fold(0u64, |acc, (p, &d)| acc * p.radix() + d))
    }

    pub fn digits_of_index(&self, index: u64) -> Result<Vec<u64>, SpaceError> {
        if index >= self.cardinality {
            return Err(SpaceError::IndexOutOfRange { index, cardinality: self.cardinality });
        }
        let mut rest = index;
        let mut digits = vec![0u64; self.params.len()];
        for (slot, p) in digits.iter_mut().zip(&self.params).rev() {
            *slot = rest % p.radix();
            rest /= p.radix();
        }
        Ok(digits)
    }

    pub fn encode_index(&self, config: &Configuration) -> Result<u64, SpaceError> {
        let digits = self.digits_of(config)?;
        self.index_of_digits(&digits)
    }

    pub fn decode_index(&self, index: u64) -> Result<Configuration, SpaceError> {
        self.require_arity()?;
        let digits = self.digits_of_index(index)?;
        self.config_of(&digits)
    }

    /// Configuration with every parameter at its smallest grid value.
    pub fn min_config(&self) -> Configuration {
        self.decode_index(0).expect("space has 8 parameters")
    }

    pub fn max_config(&self) -> Configuration {
        self.decode_index(self.cardinality - 1).expect("space has 8 parameters")
    }

    /// Draws one configuration uniformly over indices from `rng`.
    pub fn draw(&self, rng: &mut SplitMix64) -> Configuration {
        self.decode_index(rng.below(self.cardinality)).expect("space has 8 parameters")
    }

    /// `n` configurations drawn uniformly with replacement from a SplitMix64
    /// stream seeded with `seed`.
    pub fn random_sample(&self, seed: u64, n: usize) -> Vec<Configuration> {
        let mut rng = SplitMix64::new(seed);
        (0..n).map(|_| self.draw(&mut rng)).collect()
    }
}
