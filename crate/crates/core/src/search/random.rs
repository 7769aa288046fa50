use super::SearchAlgorithm;
use crate::configspace::{ConfigSpace, Configuration};
use crate::host::SampleRecord;
use crate::rng::SplitMix64;

/// Uniform random sampling over the space, continuing one SplitMix64 stream
/// across `propose` calls.
#[derive(Debug, Clone)]
pub struct RandomSearch {
    space: ConfigSpace,
    rng: SplitMix64,
}

impl RandomSearch {
    pub fn new(space: ConfigSpace, seed: u64) -> Self {
        Self { space, rng: SplitMix64::new(seed) }
    }
}

impl SearchAlgorithm for RandomSearch {
    fn name(&self) -> &str {
        "random"
    }

    fn propose(&mut self, n: usize) -> Vec<Configuration> {
        (0..n).map(|_| self.space.draw(&mut self.rng)).collect()
    }

    fn notify(&mut self, _completed: &[SampleRecord]) {}
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn propose_zero_is_empty() {
        assert!(RandomSearch::new(ConfigSpace::orin(), 1).propose(0).is_empty());
    }

    #[test]
    fn split_stream_equals_single_draw() {
        let space = ConfigSpace::orin();
        let mut r = RandomSearch::new(space.clone(), 42);
        let mut got = r.propose(100);
        got.extend(r.propose(100));
        assert_eq!(got, space.random_sample(42, 200));
    }

    #[test]
    fn same_seed_same_stream() {
        let space = ConfigSpace::orin();
        let mut a = RandomSearch::new(space.clone(), 9);
        let mut b = RandomSearch::new(space, 9);
        for n in [1, 7, 0, 30] {
            assert_eq!(a.propose(n), b.propose(n));
        }
    }
}
