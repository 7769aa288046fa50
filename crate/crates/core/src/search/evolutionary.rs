//! Generational multi-objective evolutionary search (NSGA-II style).
//!
//! Genomes are the mixed-radix digit vectors of the space. Generation 0 is
//! drawn exactly like [`RandomSearch`](super::RandomSearch). Each later
//! generation is bred from the survivors by binary tournament on
//! (rank, crowding distance), uniform crossover and per-gene reset
//! mutation; once it has been evaluated, parents and offspring compete in a
//! (mu + lambda) selection by rank, then crowding distance.

use std::collections::{HashMap, VecDeque};

use log::warn;

use super::pareto::{crowding_distance, nondominated_sort};
use super::{ObjectiveVector, Objectives, SearchAlgorithm, SearchError};
use crate::configspace::{ConfigSpace, Configuration};
use crate::host::SampleRecord;
use crate::rng::SplitMix64;

const CROSSOVER_SWAP_P: f64 = 0.5;

#[derive(Debug, Clone)]
struct Individual {
    genome: Vec<u64>,
    objectives: ObjectiveVector,
    rank: usize,
    crowding: f64,
}

#[derive(Debug)]
pub struct Evolutionary {
    space: ConfigSpace,
    radices: Vec<u64>,
    rng: SplitMix64,
    population_size: usize,
    mutation_p: f64,
    objectives: Objectives,
    population: Vec<Individual>,
    evaluated: Vec<Individual>,
    queue: VecDeque<Vec<u64>>,
    /// Outstanding proposals keyed by space index, with multiplicity.
    pending: HashMap<u64, usize>,
    generation: usize,
    unknown_notifications: usize,
}

impl Evolutionary {
    pub fn new(space: ConfigSpace, seed: u64, population_size: usize) -> Result<Self, SearchError> {
        if population_size < 4 || !population_size.is_multiple_of(2) {
            return Err(SearchError::BadPopulation(population_size));
        }
        let radices = space.radices();
        let mutation_p = 1.0 / radices.len() as f64;
        Ok(Self {
            space,
            radices,
            rng: SplitMix64::new(seed),
            population_size,
            mutation_p,
            objectives: Objectives::PowerTime,
            population: Vec::new(),
            evaluated: Vec::new(),
            queue: VecDeque::new(),
            pending: HashMap::new(),
            generation: 0,
            unknown_notifications: 0,
        })
    }

    pub fn with_objectives(mut self, objectives: Objectives) -> Self {
        self.objectives = objectives;
        self
    }

    /// Generations bred so far (generation 0 counts once proposed).
    pub fn generation(&self) -> usize {
        self.generation
    }

    /// Notifications that matched no outstanding proposal.
    pub fn unknown_notifications(&self) -> usize {
        self.unknown_notifications
    }

    /// Objective vectors of the current surviving population.
    pub fn population_objectives(&self) -> Vec<ObjectiveVector> {
        self.population.iter().map(|i| i.objectives.clone()).collect()
    }

    fn random_genome(&mut self) -> Vec<u64> {
        let index = self.rng.below(self.space.cardinality());
        self.space.digits_of_index(index).expect("index below cardinality")
    }

    /// Keeps the best `population_size` of parents and offspring and
    /// refreshes their rank and crowding distance.
    fn select_survivors(&mut self) {
        let mut combined = std::mem::take(&mut self.population);
        combined.append(&mut self.evaluated);
        let points: Vec<&ObjectiveVector> = combined.iter().map(|i| &i.objectives).collect();
        let fronts = nondominated_sort(&points);

        let mut survivors = Vec::with_capacity(self.population_size);
        for (rank, front) in fronts.iter().enumerate() {
            if survivors.len() >= self.population_size {
                break;
            }
            let dist = crowding_distance(&points, front);
            let mut members: Vec<(usize, f64)> = front.iter().copied().zip(dist).collect();
            let room = self.population_size - survivors.len();
            if members.len() > room {
                members.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                members.truncate(room);
            }
            for (i, d) in members {
                let mut ind = combined[i].clone();
                ind.rank = rank;
                ind.crowding = d;
                survivors.push(ind);
            }
        }
        self.population = survivors;
    }

    fn tournament(&mut self) -> usize {
        let n = self.population.len() as u64;
        let a = self.rng.below(n) as usize;
        let b = self.rng.below(n) as usize;
        let (pa, pb) = (&self.population[a], &self.population[b]);
        if pb.rank < pa.rank || (pb.rank == pa.rank && pb.crowding > pa.crowding) {
            b
        } else {
            a
        }
    }

    fn mutate(&mut self, genome: &mut [u64]) {
        for (gene, &radix) in genome.iter_mut().zip(&self.radices) {
            if self.rng.next_f64() < self.mutation_p {
                *gene = self.rng.below(radix);
            }
        }
    }

    fn breed(&mut self) {
        while self.queue.len() < self.population_size {
            let p1 = self.tournament();
            let p2 = self.tournament();
            let mut c1 = self.population[p1].genome.clone();
            let mut c2 = self.population[p2].genome.clone();
            for g in 0..c1.len() {
                if self.rng.next_f64() < CROSSOVER_SWAP_P {
                    std::mem::swap(&mut c1[g], &mut c2[g]);
                }
            }
            self.mutate(&mut c1);
            self.mutate(&mut c2);
            self.queue.push_back(c1);
            self.queue.push_back(c2);
        }
    }

    fn next_generation(&mut self) {
        if self.generation > 0 {
            self.select_survivors();
        }
        if self.population.is_empty() {
            // Nothing evaluated successfully yet: (re)seed randomly.
            for _ in 0..self.population_size {
                let g = self.random_genome();
                self.queue.push_back(g);
            }
        } else {
            self.breed();
        }
        self.generation += 1;
    }
}

impl SearchAlgorithm for Evolutionary {
    fn name(&self) -> &str {
        "evolutionary"
    }

    fn propose(&mut self, n: usize) -> Vec<Configuration> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            if self.queue.is_empty() {
                if !self.pending.is_empty() {
                    break;
                }
                self.next_generation();
            }
            let Some(genome) = self.queue.pop_front() else { break };
            let index = self.space.index_of_digits(&genome).expect("genome within radices");
            *self.pending.entry(index).or_default() += 1;
            out.push(self.space.config_of(&genome).expect("genome within radices"));
        }
        out
    }

    fn notify(&mut self, completed: &[SampleRecord]) {
        for record in completed {
            let Ok(index) = self.space.encode_index(&record.config) else {
                self.unknown_notifications += 1;
                warn!("evolutionary: sample {} has an off-grid configuration", record.sample_id);
                continue;
            };
            match self.pending.get_mut(&index) {
                Some(count) => {
                    *count -= 1;
                    if *count == 0 {
                        self.pending.remove(&index);
                    }
                }
                None => {
                    self.unknown_notifications += 1;
                    warn!("evolutionary: ignoring unknown sample {}", record.sample_id);
                    continue;
                }
            }
            if let Some(objectives) = self.objectives.extract(record) {
                let genome = self.space.digits_of_index(index).expect("encoded index is valid");
                self.evaluated.push(Individual { genome, objectives, rank: 0, crowding: 0.0 });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::SampleStatus;
    use crate::search::RandomSearch;

    fn record(id: usize, config: Configuration, power: f64, time: f64) -> SampleRecord {
        SampleRecord {
            sample_id: format!("{id:06}"),
            client_id: "t".into(),
            config,
            time_s: Some(time),
            power_w: Some(power),
            memory_mb: Some(1.0),
            status: SampleStatus::Ok,
            timestamp: id.to_string(),
        }
    }

    /// Synthetic objective: power grows with the digit sum, time shrinks.
    fn evaluate(space: &ConfigSpace, c: &Configuration) -> (f64, f64) {
        let d: u64 = space.digits_of(c).unwrap().iter().sum();
        (1.0 + d as f64, 100.0 / (1.0 + d as f64))
    }

    #[test]
    fn rejects_bad_population() {
        let space = ConfigSpace::orin();
        assert!(Evolutionary::new(space.clone(), 0, 2).is_err());
        assert!(Evolutionary::new(space.clone(), 0, 7).is_err());
        assert!(Evolutionary::new(space, 0, 4).is_ok());
    }

    #[test]
    fn generation_zero_matches_random_search() {
        let space = ConfigSpace::orin();
        let mut evo = Evolutionary::new(space.clone(), 42, 20).unwrap();
        let mut rnd = RandomSearch::new(space, 42);
        assert_eq!(evo.propose(20), rnd.propose(20));
    }

    #[test]
    fn waits_for_outstanding_results() {
        let space = ConfigSpace::orin();
        let mut evo = Evolutionary::new(space, 1, 4).unwrap();
        assert_eq!(evo.propose(10).len(), 4);
        assert!(evo.propose(1).is_empty());
    }

    #[test]
    fn offspring_stay_valid_and_notify_order_is_free() {
        let space = ConfigSpace::orin();
        let mut evo = Evolutionary::new(space.clone(), 7, 8).unwrap();
        let mut id = 0;
        let mut ops = 0;
        while ops < 10_000 {
            let batch = evo.propose(8);
            assert!(!batch.is_empty());
            let mut records: Vec<_> = batch
                .iter()
                .map(|c| {
                    space.validate(c).unwrap();
                    let (p, t) = evaluate(&space, c);
                    id += 1;
                    record(id, *c, p, t)
                })
                .collect();
            ops += records.len();
            records.reverse();
            evo.notify(&records);
        }
        assert_eq!(evo.unknown_notifications(), 0);
        assert!(evo.generation() > 100);
    }

    #[test]
    fn unknown_and_failed_samples() {
        let space = ConfigSpace::orin();
        let mut evo = Evolutionary::new(space.clone(), 3, 4).unwrap();
        let batch = evo.propose(4);
        let mut stray = space.max_config();
        if batch.contains(&stray) {
            stray = space.min_config();
        }
        evo.notify(&[record(99, stray, 1.0, 1.0)]);
        assert_eq!(evo.unknown_notifications(), 1);

        // Every sample of generation 0 fails: the next generation reseeds.
        let failed: Vec<_> = batch
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let mut r = record(i, *c, 0.0, 0.0);
                r.status = SampleStatus::Error;
                r.time_s = None;
                r.power_w = None;
                r
            })
            .collect();
        evo.notify(&failed);
        assert_eq!(evo.propose(4).len(), 4);
        assert!(evo.population_objectives().is_empty());
    }

    #[test]
    fn deterministic_under_seed() {
        let space = ConfigSpace::orin();
        let run = || {
            let mut evo = Evolutionary::new(space.clone(), 11, 6).unwrap();
            let mut all = Vec::new();
            for g in 0..5 {
                let batch = evo.propose(6);
                let records: Vec<_> = batch
                    .iter()
                    .enumerate()
                    .map(|(i, c)| {
                        let (p, t) = evaluate(&space, c);
                        record(g * 10 + i, *c, p, t)
                    })
                    .collect();
                evo.notify(&records);
                all.extend(batch);
            }
            all
        };
        assert_eq!(run(), run());
    }
}
