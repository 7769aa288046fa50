//! Search algorithms driven by the host.
//!
//! An algorithm proposes configurations in batches and is told about
//! completed samples afterwards. The host serializes every call, so
//! implementations need no internal synchronization, but they must accept
//! completions in any order.

mod evolutionary;
mod pareto;
mod random;

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

pub use evolutionary::Evolutionary;
pub use pareto::{crowding_distance, dominates, hypervolume_2d, nondominated_sort};
pub use random::RandomSearch;

use crate::configspace::{ConfigSpace, Configuration};
use crate::host::SampleRecord;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SearchError {
    #[error("unknown algorithm `{0}`")]
    UnknownAlgorithm(String),
    #[error("population size must be even and at least 4 (got {0})")]
    BadPopulation(usize),
}

pub trait SearchAlgorithm {
    fn name(&self) -> &str;

    /// Up to `n` new configurations to evaluate. Fewer (or none) may be
    /// returned while the algorithm waits for outstanding results.
    fn propose(&mut self, n: usize) -> Vec<Configuration>;

    /// Completed samples, in any order relative to proposal.
    fn notify(&mut self, completed: &[SampleRecord]);
}

/// Objectives minimized by multi-objective algorithms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Objectives {
    #[default]
    PowerTime,
    PowerTimeMemory,
}

impl Objectives {
    pub fn extract(&self, record: &SampleRecord) -> Option<ObjectiveVector> {
        if !record.is_ok() {
            return None;
        }
        let mut v = vec![record.power_w?, record.time_s?];
        if *self == Self::PowerTimeMemory {
            v.push(record.memory_mb?);
        }
        ObjectiveVector::new(v)
    }
}

/// A point in objective space; every component finite and minimized.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveVector(Vec<f64>);

impl ObjectiveVector {
    pub fn new(values: Vec<f64>) -> Option<Self> {
        (!values.is_empty() && values.iter().all(|v| v.is_finite())).then_some(Self(values))
    }

    pub fn power_time(power_w: f64, time_s: f64) -> Option<Self> {
        Self::new(vec![power_w, time_s])
    }
}

impl AsRef<[f64]> for ObjectiveVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone)]
pub struct AlgorithmOptions {
    pub seed: u64,
    pub population_size: usize,
    pub objectives: Objectives,
}

impl Default for AlgorithmOptions {
    fn default() -> Self {
        Self { seed: 0, population_size: 20, objectives: Objectives::PowerTime }
    }
}

pub type AlgorithmFactory =
    Box<dyn Fn(&ConfigSpace, &AlgorithmOptions) -> Result<Box<dyn SearchAlgorithm>, SearchError> + Send + Sync>;

/// Name-to-constructor table for search algorithms.
pub struct Registry {
    factories: BTreeMap<String, AlgorithmFactory>,
}

impl Registry {
    pub fn empty() -> Self {
        Self { factories: BTreeMap::new() }
    }

    pub fn register(&mut self, name: &str, factory: AlgorithmFactory) {
        self.factories.insert(name.to_string(), factory);
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn create(
        &self,
        name: &str,
        space: &ConfigSpace,
        options: &AlgorithmOptions,
    ) -> Result<Box<dyn SearchAlgorithm>, SearchError> {
        let factory = self.factories.get(name).ok_or_else(|| SearchError::UnknownAlgorithm(name.to_string()))?;
        factory(space, options)
    }
}

impl Default for Registry {
    /// `random` and `evolutionary`.
    fn default() -> Self {
        let mut r = Self::empty();
        r.register(
            "random",
            Box::new(|space, o| Ok(Box::new(RandomSearch::new(space.clone(), o.seed)) as Box<dyn SearchAlgorithm>)),
        );
        r.register(
            "evolutionary",
            Box::new(|space, o| {
                Ok(Box::new(Evolutionary::new(space.clone(), o.seed, o.population_size)?.with_objectives(o.objectives))
                    as Box<dyn SearchAlgorithm>)
            }),
        );
        r
    }
}

impl fmt::Debug for Registry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry").field("algorithms", &self.names()).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_builds_known_algorithms() {
        let reg = Registry::default();
        assert_eq!(reg.names(), vec!["evolutionary", "random"]);
        let space = ConfigSpace::orin();
        let mut a = reg.create("random", &space, &AlgorithmOptions::default()).unwrap();
        assert_eq!(a.propose(3).len(), 3);
        assert!(matches!(
            reg.create("annealing", &space, &AlgorithmOptions::default()),
            Err(SearchError::UnknownAlgorithm(_))
        ));
        let bad = AlgorithmOptions { population_size: 5, ..Default::default() };
        assert!(matches!(reg.create("evolutionary", &space, &bad), Err(SearchError::BadPopulation(5))));
    }

    #[test]
    fn objective_vectors_must_be_finite() {
        assert!(ObjectiveVector::power_time(1.0, f64::NAN).is_none());
        assert!(ObjectiveVector::new(vec![]).is_none());
        assert!(ObjectiveVector::power_time(1.0, 2.0).is_some());
    }
}
