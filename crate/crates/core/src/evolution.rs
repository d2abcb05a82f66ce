//! Evolutionary search for similarity genomes.
//!
//! A (mu + lambda) scheme: every parent produces a fixed number of children
//! by uniform crossover with a random partner followed by Gaussian mutation,
//! and the best `population_size` of parents and children survive. Fitness
//! is the MAPE of leave-one-out predictions over a sample of training
//! properties that stays fixed for the whole run. When the best fitness seen
//! so far stalls for `restart_threshold` generations the population is
//! re-drawn at random; the best genome is kept in an archive.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::io::Write;

use rand::seq::index;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Scaler;
use crate::geo_index::{Neighbor, PreselectMode};
use crate::metrics::relative_error;
use crate::predictor::{aggregate, aggregate_scored, CaseBase, Method, Scratch};
use crate::similarity::{PostSelect, SimilarityGenome, K_MAX, Q_MAX, Q_MIN, R_MAX_M};

/// Upper end of the post-selection search range when `m` is uncapped.
pub const M_SEARCH_MAX: u32 = 2000;
const INIT_Q: (f64, f64) = (0.1, 3.0);
const INIT_M_MAX: u32 = 200;
const WEIGHT_MAX: f64 = 1.0;

#[derive(Debug, Error, PartialEq)]
pub enum EvolutionError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("invalid EA config: {0}")]
    InvalidConfig(String),
}

/// EA parameters. Config files use the long names of the parameter table
/// (`number_of_generations`, `offsprings_per_parent`, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EaConfig {
    #[serde(rename = "number_of_generations", alias = "generations")]
    pub generations: usize,
    pub restart_threshold: usize,
    pub population_size: usize,
    pub sample_size: usize,
    pub mutation_rate: f64,
    #[serde(rename = "type_switch_probability", alias = "type_switch_prob")]
    pub type_switch_prob: f64,
    #[serde(rename = "offsprings_per_parent", alias = "offspring_per_parent")]
    pub offspring_per_parent: usize,
    pub rng_seed: u64,
    pub sigma_fraction: f64,
}

impl Default for EaConfig {
    fn default() -> Self {
        Self {
            generations: 200,
            restart_threshold: 10,
            population_size: 20,
            sample_size: 10_000,
            mutation_rate: 0.2,
            type_switch_prob: 0.05,
            offspring_per_parent: 5,
            rng_seed: 0,
            sigma_fraction: 0.1,
        }
    }
}

impl EaConfig {
    pub fn validate(&self) -> Result<(), EvolutionError> {
        let fail = |m: &str| Err(EvolutionError::InvalidConfig(m.to_string()));
        if self.generations == 0
            || self.restart_threshold == 0
            || self.population_size == 0
            || self.sample_size == 0
            || self.offspring_per_parent == 0
        {
            return fail("all counts must be positive");
        }
        if !(0.0..=1.0).contains(&self.mutation_rate) {
            return fail("mutation_rate must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.type_switch_prob) {
            return fail("type_switch_probability must lie in [0, 1]");
        }
        if !(self.sigma_fraction >= 0.0 && self.sigma_fraction.is_finite()) {
            return fail("sigma_fraction must be nonnegative");
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, EvolutionError> {
        let cfg: EaConfig = toml::from_str(text).map_err(|e| EvolutionError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Parameter ranges explored by the search.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    pub m_max: u32,
    /// Raw span of each attribute in the training data; filters live in
    /// `[0, span]` or are disabled.
    pub filter_span: Vec<f64>,
}

impl SearchSpace {
    /// `m_cap = None` searches `m` up to [`M_SEARCH_MAX`].
    pub fn new(scaler: &Scaler, m_cap: Option<u32>) -> Self {
        Self {
            m_max: m_cap.unwrap_or(M_SEARCH_MAX).clamp(1, M_SEARCH_MAX),
            filter_span: (0..scaler.len()).map(|i| scaler.span(i)).collect(),
        }
    }

    pub fn n_attrs(&self) -> usize {
        self.filter_span.len()
    }
}

fn gaussian(rng: &mut ChaCha8Rng, mean: f64, sd: f64) -> f64 {
    if sd > 0.0 {
        Normal::new(mean, sd).expect("finite sd").sample(rng)
    } else {
        mean
    }
}

fn random_k(rng: &mut ChaCha8Rng) -> u32 {
    rng.gen_range(1..=K_MAX)
}

fn random_r(rng: &mut ChaCha8Rng) -> f64 {
    rng.gen_range(0.0..=R_MAX_M)
}

pub fn random_genome(space: &SearchSpace, rng: &mut ChaCha8Rng) -> SimilarityGenome {
    let n = space.n_attrs();
    let q = rng.gen_range(INIT_Q.0..INIT_Q.1);
    let mut weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..WEIGHT_MAX)).collect();
    if n > 0 && weights.iter().all(|&w| w == 0.0) {
        weights[0] = WEIGHT_MAX;
    }
    let filters = space
        .filter_span
        .iter()
        .map(|&span| {
            let disabled = rng.gen_bool(0.5);
            if disabled || span <= 0.0 {
                f64::INFINITY
            } else {
                rng.gen_range(0.0..=span)
            }
        })
        .collect();
    let m = PostSelect::Top(rng.gen_range(1..=INIT_M_MAX.min(space.m_max)));
    let preselect = if rng.gen_bool(0.5) {
        PreselectMode::KNearest { k: random_k(rng) }
    } else {
        PreselectMode::Radius { r_m: random_r(rng) }
    };
    SimilarityGenome {
        q,
        weights,
        filters,
        m,
        preselect,
    }
}

pub fn init_population(config: &EaConfig, space: &SearchSpace, rng: &mut ChaCha8Rng) -> Vec<SimilarityGenome> {
    (0..config.population_size).map(|_| random_genome(space, rng)).collect()
}

/// Gaussian mutation of every parameter with probability `mutation_rate`,
/// plus a pre-selection type switch with probability `type_switch_prob`.
pub fn mutate(genome: &SimilarityGenome, config: &EaConfig, space: &SearchSpace, rng: &mut ChaCha8Rng) -> SimilarityGenome {
    let rate = config.mutation_rate;
    let frac = config.sigma_fraction;
    let mut g = genome.clone();

    if rng.gen_bool(rate) {
        g.q = gaussian(rng, g.q, frac * (Q_MAX - Q_MIN)).clamp(Q_MIN, Q_MAX);
    }
    for w in g.weights.iter_mut() {
        if rng.gen_bool(rate) {
            *w = gaussian(rng, *w, frac * WEIGHT_MAX).clamp(0.0, WEIGHT_MAX);
        }
    }
    if !g.weights.iter().any(|&w| w > 0.0) {
        g.weights = genome.weights.clone();
    }
    for (f, &span) in g.filters.iter_mut().zip(&space.filter_span) {
        if !rng.gen_bool(rate) || span <= 0.0 {
            continue;
        }
        // A disabled filter sits just above the top of its range.
        let current = if f.is_finite() { *f } else { span };
        let next = gaussian(rng, current, frac * span);
        *f = if next >= span { f64::INFINITY } else { next.max(0.0) };
    }
    if let PostSelect::Top(m) = g.m {
        if rng.gen_bool(rate) {
            let sd = frac * (space.m_max - 1) as f64;
            g.m = PostSelect::Top(gaussian(rng, m as f64, sd).round().clamp(1.0, space.m_max as f64) as u32);
        }
    }
    let mutate_k = |k: u32, rng: &mut ChaCha8Rng| {
        if rng.gen_bool(rate) {
            gaussian(rng, k as f64, frac * (K_MAX - 1) as f64).round().clamp(1.0, K_MAX as f64) as u32
        } else {
            k
        }
    };
    let mutate_r = |r: f64, rng: &mut ChaCha8Rng| {
        if r.is_finite() && rng.gen_bool(rate) {
            gaussian(rng, r, frac * R_MAX_M).clamp(0.0, R_MAX_M)
        } else {
            r
        }
    };
    g.preselect = match g.preselect {
        PreselectMode::KNearest { k } => PreselectMode::KNearest { k: mutate_k(k, rng) },
        PreselectMode::Radius { r_m } => PreselectMode::Radius { r_m: mutate_r(r_m, rng) },
        PreselectMode::Both { k, r_m } => {
            let k = mutate_k(k, rng);
            PreselectMode::Both {
                k,
                r_m: mutate_r(r_m, rng),
            }
        }
    };
    if rng.gen_bool(config.type_switch_prob) {
        g.preselect = match g.preselect {
            PreselectMode::KNearest { .. } => PreselectMode::Radius { r_m: random_r(rng) },
            PreselectMode::Radius { .. } | PreselectMode::Both { .. } => PreselectMode::KNearest { k: random_k(rng) },
        };
    }
    g
}

/// Uniform crossover; vectors cross element-wise, the pre-selection mode
/// and its parameters travel as one unit.
pub fn crossover(a: &SimilarityGenome, b: &SimilarityGenome, rng: &mut ChaCha8Rng) -> SimilarityGenome {
    let mut pick = |x: f64, y: f64| if rng.gen_bool(0.5) { x } else { y };
    let q = pick(a.q, b.q);
    let mut weights: Vec<f64> = a.weights.iter().zip(&b.weights).map(|(&x, &y)| pick(x, y)).collect();
    let filters = a.filters.iter().zip(&b.filters).map(|(&x, &y)| pick(x, y)).collect();
    if !weights.iter().any(|&w| w > 0.0) {
        weights = a.weights.clone();
    }
    let m = if rng.gen_bool(0.5) { a.m } else { b.m };
    let preselect = if rng.gen_bool(0.5) { a.preselect } else { b.preselect };
    SimilarityGenome {
        q,
        weights,
        filters,
        m,
        preselect,
    }
}

/// The fixed leave-one-out targets of a run, with their neighbor lists
/// precomputed up to the widest pre-selection the search can produce.
///
/// Attribute differences to every cached neighbor are stored up front, the
/// scaled ones as logarithms so a power sum costs one `exp` per term. Fitness therefore agrees with
/// the predictor to rounding, not bit for bit.
#[derive(Debug)]
pub struct FitnessContext<'a> {
    base: &'a CaseBase,
    sample: Vec<usize>,
    neighbors: Vec<Vec<Neighbor>>,
    /// Per neighbor and attribute, row-major: the raw absolute difference
    /// (for filters) and `ln` of the scaled absolute difference.
    deltas: Vec<Vec<[f64; 2]>>,
}

impl<'a> FitnessContext<'a> {
    pub fn new(base: &'a CaseBase, sample_size: usize, seed: u64) -> Result<Self, EvolutionError> {
        if base.is_empty() {
            return Err(EvolutionError::EmptyTrainingSet);
        }
        let mut rng = stream(seed, STREAM_SAMPLE, 0, 0);
        let amount = sample_size.min(base.len());
        let mut sample = index::sample(&mut rng, base.len(), amount).into_vec();
        sample.sort_unstable();
        Ok(Self::with_sample(base, sample))
    }

    /// Uses the given slots as targets, in order.
    pub fn with_sample(base: &'a CaseBase, sample: Vec<usize>) -> Self {
        let neighbors: Vec<Vec<Neighbor>> = sample
            .iter()
            .map(|&slot| {
                let t = base.target(slot);
                let by_k = base.index().knn(t.location, K_MAX as usize, Some(t.id));
                let by_r = base.index().within_radius(t.location, R_MAX_M, Some(t.id));
                // both are prefixes of the same order; keep the longer one
                if by_k.len() >= by_r.len() {
                    by_k
                } else {
                    by_r
                }
            })
            .collect();
        let deltas = sample
            .iter()
            .zip(&neighbors)
            .map(|(&slot, list)| {
                let t = base.target(slot);
                list.iter()
                    .flat_map(|n| {
                        let raw = t.raw.iter().zip(base.raw(n.slot)).map(|(a, b)| (a - b).abs());
                        let scaled = t.scaled.iter().zip(base.scaled(n.slot)).map(|(a, b)| (a - b).abs().ln());
                        raw.zip(scaled).map(|(r, l)| [r, l])
                    })
                    .collect()
            })
            .collect();
        Self {
            base,
            sample,
            neighbors,
            deltas,
        }
    }

    pub fn sample_ids(&self) -> Vec<u64> {
        self.sample.iter().map(|&s| self.base.id(s)).collect()
    }

    pub fn len(&self) -> usize {
        self.sample.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample.is_empty()
    }

    /// Prefix of the cached list, or `None` when the mode reaches past it.
    fn cached_prefix(&self, i: usize, mode: PreselectMode) -> Option<usize> {
        let list = &self.neighbors[i];
        let below = |r: f64| list.partition_point(|n| n.distance_m < r);
        match mode {
            PreselectMode::KNearest { k } if k <= K_MAX => Some(list.len().min(k as usize)),
            PreselectMode::Radius { r_m } if r_m <= R_MAX_M => Some(below(r_m)),
            PreselectMode::Both { k, r_m } if k <= K_MAX => Some(list.len().min(k as usize).min(below(r_m))),
            _ => None,
        }
    }

    /// Leave-one-out MAPE over the sample. Targets without comparables are
    /// scored with the fallback mean.
    pub fn fitness(&self, genome: &SimilarityGenome) -> f64 {
        self.fitness_below(genome, f64::INFINITY).expect("unbounded")
    }

    /// Like [`fitness`](Self::fitness), but gives up with `None` as soon as
    /// the result is certain to exceed `bound`.
    pub fn fitness_below(&self, genome: &SimilarityGenome, bound: f64) -> Option<f64> {
        // Terms are nonnegative, so a partial sum past this limit is final.
        let limit_total = bound * self.sample.len() as f64 * (1.0 + 1e-12);
        let method = Method::Genome(genome.clone());
        let n = self.base.n_attrs();
        let limit = genome.m.limit();
        let exponent = 1.0 / genome.q;
        let mut scratch = Scratch::default();
        let mut total = 0.0;
        for (i, &slot) in self.sample.iter().enumerate() {
            let target = self.base.target(slot);
            let aggregate = match self.cached_prefix(i, genome.preselect) {
                Some(end) => {
                    let deltas = &self.deltas[i];
                    let score = |j: usize, _: &Neighbor, bound: f64| {
                        let row = &deltas[j * n..(j + 1) * n];
                        if !genome.filters.iter().zip(row).all(|(&f, d)| d[0] < f) {
                            return None;
                        }
                        let mut sum = 0.0;
                        for (&w, &[_, l]) in genome.weights.iter().zip(row) {
                            if w > 0.0 && l > f64::NEG_INFINITY {
                                sum += w * (genome.q * l).exp();
                                if sum > bound {
                                    return None;
                                }
                            }
                        }
                        Some(sum)
                    };
                    aggregate_scored(limit, exponent, self.base, &self.neighbors[i][..end], &mut scratch, score)
                }
                None => {
                    let candidates = self.base.index().preselect(target.location, genome.preselect, Some(target.id));
                    aggregate(&method, target, self.base, &candidates, &mut scratch)
                }
            };
            let predicted = match aggregate {
                Some(agg) => agg.value,
                None => self.base.fallback().for_region(target.region),
            };
            total += relative_error(self.base.value(slot), predicted).abs();
            if total > limit_total {
                return None;
            }
        }
        Some(total / self.sample.len() as f64)
    }
}

const STREAM_SAMPLE: u64 = 1;
const STREAM_INIT: u64 = 2;
const STREAM_OFFSPRING: u64 = 3;
const STREAM_RESTART: u64 = 4;

/// Independent RNG stream for one (purpose, generation, individual).
fn stream(seed: u64, purpose: u64, generation: u64, individual: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 60) ^ (generation << 24) ^ individual);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub genome: SimilarityGenome,
    pub fitness: f64,
}

/// Lower fitness first; ties prefer smaller post-selection, then smaller
/// pre-selection.
pub fn selection_order(a: &Scored, b: &Scored) -> Ordering {
    let mode_key = |g: &SimilarityGenome| match g.preselect {
        PreselectMode::KNearest { k } => (0u8, k as f64),
        PreselectMode::Radius { r_m } => (1, r_m),
        PreselectMode::Both { k, .. } => (2, k as f64),
    };
    let (ma, mb) = (mode_key(&a.genome), mode_key(&b.genome));
    a.fitness
        .total_cmp(&b.fitness)
        .then(a.genome.m.limit().cmp(&b.genome.m.limit()))
        .then(ma.0.cmp(&mb.0))
        .then(ma.1.total_cmp(&mb.1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: usize,
    /// Best fitness seen so far in the run.
    pub best_fitness: f64,
    /// Mean fitness of the surviving population.
    pub mean_fitness: f64,
    pub restarts_so_far: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionTrace {
    pub generations: Vec<GenerationRecord>,
    pub initial_best_fitness: f64,
    pub best_fitness: f64,
    /// Generations after which the population was re-drawn.
    pub restart_generations: Vec<usize>,
    pub evaluations: usize,
    pub sample_ids: Vec<u64>,
}

impl EvolutionTrace {
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "generation,best_fitness,mean_fitness,restarts_so_far")?;
        for r in &self.generations {
            writeln!(out, "{},{},{},{}", r.generation, r.best_fitness, r.mean_fitness, r.restarts_so_far)?;
        }
        Ok(())
    }
}

/// Bit pattern of a genome; equal keys mean equal fitness.
fn genome_key(g: &SimilarityGenome) -> Vec<u64> {
    let mut key = Vec::with_capacity(4 + 2 * g.weights.len());
    key.push(g.q.to_bits());
    key.extend(g.weights.iter().map(|w| w.to_bits()));
    key.extend(g.filters.iter().map(|f| f.to_bits()));
    key.push(g.m.limit() as u64);
    match g.preselect {
        PreselectMode::KNearest { k } => key.extend([0, k as u64]),
        PreselectMode::Radius { r_m } => key.extend([1, r_m.to_bits()]),
        PreselectMode::Both { k, r_m } => key.extend([2, k as u64, r_m.to_bits()]),
    }
    key
}

struct Run<'a, 'b> {
    config: &'a EaConfig,
    space: &'a SearchSpace,
    ctx: &'a FitnessContext<'b>,
    evaluations: usize,
    memo: HashMap<Vec<u64>, f64>,
}

impl Run<'_, '_> {
    fn score(&mut self, genome: SimilarityGenome) -> Scored {
        self.score_below(genome, f64::INFINITY)
    }

    /// Genomes that cannot beat `bound` are returned with infinite fitness.
    fn score_below(&mut self, genome: SimilarityGenome, bound: f64) -> Scored {
        self.evaluations += 1;
        let key = genome_key(&genome);
        let fitness = match self.memo.get(&key) {
            Some(&f) => f,
            None => match self.ctx.fitness_below(&genome, bound) {
                Some(f) => {
                    self.memo.insert(key, f);
                    f
                }
                None => f64::INFINITY,
            },
        };
        Scored { genome, fitness }
    }

    fn fresh_population(&mut self, purpose: u64, generation: usize) -> Vec<Scored> {
        (0..self.config.population_size)
            .map(|i| {
                let mut rng = stream(self.config.rng_seed, purpose, generation as u64, i as u64);
                let g = random_genome(self.space, &mut rng);
                self.score(g)
            })
            .collect()
    }
}

/// Runs the full search and returns the best genome ever evaluated.
pub fn evolve(
    config: &EaConfig,
    space: &SearchSpace,
    training: &CaseBase,
) -> Result<(SimilarityGenome, EvolutionTrace), EvolutionError> {
    config.validate()?;
    if training.is_empty() {
        return Err(EvolutionError::EmptyTrainingSet);
    }
    if space.n_attrs() != training.n_attrs() {
        return Err(EvolutionError::InvalidConfig(format!(
            "search space has {} attributes, training data {}",
            space.n_attrs(),
            training.n_attrs()
        )));
    }
    let ctx = FitnessContext::new(training, config.sample_size, config.rng_seed)?;
    evolve_with_context(config, space, &ctx)
}

pub fn evolve_with_context(
    config: &EaConfig,
    space: &SearchSpace,
    ctx: &FitnessContext<'_>,
) -> Result<(SimilarityGenome, EvolutionTrace), EvolutionError> {
    config.validate()?;
    let mut run = Run {
        config,
        space,
        ctx,
        evaluations: 0,
        memo: HashMap::new(),
    };
    let pop_size = config.population_size;

    let mut population = run.fresh_population(STREAM_INIT, 0);
    population.sort_by(selection_order);
    let mut archive = population[0].clone();
    let initial_best_fitness = archive.fitness;

    let mut records = Vec::with_capacity(config.generations);
    let mut restart_generations = Vec::new();
    let mut stagnant = 0;

    for generation in 1..=config.generations {
        let mut pool = population.clone();
        // Children worse than every parent are truncated anyway.
        let survival_bound = population[pop_size - 1].fitness;
        for (p, parent) in population.iter().enumerate() {
            for c in 0..config.offspring_per_parent {
                let id = (p * config.offspring_per_parent + c) as u64;
                let mut rng = stream(config.rng_seed, STREAM_OFFSPRING, generation as u64, id);
                let partner = if pop_size > 1 {
                    let j = rng.gen_range(0..pop_size - 1);
                    if j >= p {
                        j + 1
                    } else {
                        j
                    }
                } else {
                    p
                };
                let child = crossover(&parent.genome, &population[partner].genome, &mut rng);
                let child = mutate(&child, config, space, &mut rng);
                pool.push(run.score_below(child, survival_bound));
            }
        }
        pool.sort_by(selection_order);
        pool.truncate(pop_size);
        population = pool;

        if selection_order(&population[0], &archive) == Ordering::Less {
            let improved = population[0].fitness < archive.fitness;
            archive = population[0].clone();
            stagnant = if improved { 0 } else { stagnant + 1 };
        } else {
            stagnant += 1;
        }

        let mean = population.iter().map(|s| s.fitness).sum::<f64>() / pop_size as f64;
        records.push(GenerationRecord {
            generation,
            best_fitness: archive.fitness,
            mean_fitness: mean,
            restarts_so_far: restart_generations.len(),
        });

        if stagnant >= config.restart_threshold && generation < config.generations {
            population = run.fresh_population(STREAM_RESTART, generation);
            population.sort_by(selection_order);
            restart_generations.push(generation);
            stagnant = 0;
        }
    }

    let trace = EvolutionTrace {
        generations: records,
        initial_best_fitness,
        best_fitness: archive.fitness,
        restart_generations,
        evaluations: run.evaluations,
        sample_ids: ctx.sample_ids(),
    };
    Ok((archive.genome, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{AttributeSchema, GeoPoint, Property};
    use crate::predictor::predict_or_fallback;
    use chrono::NaiveDate;

    fn space(n: usize) -> SearchSpace {
        SearchSpace {
            m_max: M_SEARCH_MAX,
            filter_span: vec![10.0; n],
        }
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn assert_valid(g: &SimilarityGenome, space: &SearchSpace) {
        g.validate(space.n_attrs()).unwrap();
        assert!(g.weights.iter().all(|&w| (0.0..=WEIGHT_MAX).contains(&w)));
        assert!(g.m.limit() <= space.m_max as usize);
        for (f, s) in g.filters.iter().zip(&space.filter_span) {
            assert!(f.is_infinite() || (0.0..=*s).contains(f));
        }
    }

    #[test]
    fn init_population_valid_and_deterministic() {
        let cfg = EaConfig::default();
        let sp = space(7);
        let a = init_population(&cfg, &sp, &mut rng(3));
        assert_eq!(a.len(), 20);
        for g in &a {
            assert_valid(g, &sp);
            assert!(g.q >= 0.1 && g.q <= 3.0);
            assert!(g.m.limit() <= 200);
            assert!(g.preselect.k().map_or(true, |k| k <= 2000));
            assert!(g.preselect.radius_m().map_or(true, |r| r <= 50_000.0));
        }
        assert_eq!(a, init_population(&cfg, &sp, &mut rng(3)));
    }

    #[test]
    fn m_cap_respected() {
        let sp = SearchSpace {
            m_max: 10,
            filter_span: vec![1.0; 3],
        };
        let cfg = EaConfig {
            mutation_rate: 1.0,
            ..EaConfig::default()
        };
        let mut r = rng(1);
        for _ in 0..500 {
            let g = random_genome(&sp, &mut r);
            assert!(g.m.limit() <= 10);
            assert!(mutate(&g, &cfg, &sp, &mut r).m.limit() <= 10);
        }
    }

    #[test]
    fn zero_rates_are_identity() {
        let cfg = EaConfig {
            mutation_rate: 0.0,
            type_switch_prob: 0.0,
            ..EaConfig::default()
        };
        let sp = space(5);
        let mut r = rng(9);
        for _ in 0..100 {
            let g = random_genome(&sp, &mut r);
            assert_eq!(mutate(&g, &cfg, &sp, &mut r), g);
        }
    }

    #[test]
    fn mutation_stays_in_bounds() {
        let cfg = EaConfig {
            mutation_rate: 1.0,
            sigma_fraction: 0.5,
            ..EaConfig::default()
        };
        let sp = space(4);
        let mut r = rng(5);
        let mut g = random_genome(&sp, &mut r);
        for _ in 0..100_000 {
            g = mutate(&g, &cfg, &sp, &mut r);
            assert!((Q_MIN..=Q_MAX).contains(&g.q));
        }
        for _ in 0..2_000 {
            g = mutate(&g, &cfg, &sp, &mut r);
            assert_valid(&g, &sp);
        }
    }

    #[test]
    fn type_switch_always_toggles() {
        let cfg = EaConfig {
            mutation_rate: 0.0,
            type_switch_prob: 1.0,
            ..EaConfig::default()
        };
        let sp = space(2);
        let mut r = rng(2);
        for _ in 0..200 {
            let g = random_genome(&sp, &mut r);
            let m = mutate(&g, &cfg, &sp, &mut r);
            assert_ne!(
                std::mem::discriminant(&g.preselect),
                std::mem::discriminant(&m.preselect)
            );
            assert_valid(&m, &sp);
        }
    }

    #[test]
    fn crossover_identity_and_provenance() {
        let sp = space(6);
        let mut r = rng(4);
        let a = random_genome(&sp, &mut r);
        assert_eq!(crossover(&a, &a, &mut r), a);
        for _ in 0..500 {
            let a = random_genome(&sp, &mut r);
            let b = random_genome(&sp, &mut r);
            let c = crossover(&a, &b, &mut r);
            assert_valid(&c, &sp);
            assert!(c.q == a.q || c.q == b.q);
            assert!(c.m == a.m || c.m == b.m);
            assert!(c.preselect == a.preselect || c.preselect == b.preselect);
            for i in 0..6 {
                assert!(c.weights[i] == a.weights[i] || c.weights[i] == b.weights[i]);
                let same = |x: f64, y: f64| x == y || (x.is_infinite() && y.is_infinite());
                assert!(same(c.filters[i], a.filters[i]) || same(c.filters[i], b.filters[i]));
            }
        }
    }

    #[test]
    fn crossover_is_fair() {
        // Chi-square with one degree of freedom per gene; 10.83 is the
        // p = 0.001 critical value.
        let n = 4;
        let mut a = random_genome(&space(n), &mut rng(1));
        let mut b = a.clone();
        a.q = 1.0;
        b.q = 2.0;
        a.weights = vec![0.1; n];
        b.weights = vec![0.9; n];
        a.m = PostSelect::Top(1);
        b.m = PostSelect::Top(2);
        a.preselect = PreselectMode::KNearest { k: 5 };
        b.preselect = PreselectMode::Radius { r_m: 5.0 };
        let trials = 4000;
        let mut from_a = vec![0usize; 3 + n];
        let mut r = rng(77);
        for _ in 0..trials {
            let c = crossover(&a, &b, &mut r);
            from_a[0] += (c.q == a.q) as usize;
            from_a[1] += (c.m == a.m) as usize;
            from_a[2] += (c.preselect == a.preselect) as usize;
            for i in 0..n {
                from_a[3 + i] += (c.weights[i] == a.weights[i]) as usize;
            }
        }
        let expected = trials as f64 / 2.0;
        for count in from_a {
            let chi2 = 2.0 * (count as f64 - expected).powi(2) / expected;
            assert!(chi2 < 10.83, "count {count}, chi2 {chi2}");
        }
    }

    #[test]
    fn config_toml() {
        let cfg = EaConfig::from_toml(
            "number_of_generations = 3\nrestart_threshold = 10\npopulation_size = 4\nsample_size = 100\nmutation_rate = 0.2\ntype_switch_probability = 0.05\nofferings = 1\n",
        );
        assert!(cfg.is_err());
        let cfg = EaConfig::from_toml("number_of_generations = 3\nofferings_per_parent = 1").unwrap_err();
        assert!(matches!(cfg, EvolutionError::InvalidConfig(_)));
        let cfg = EaConfig::from_toml("number_of_generations = 3\noffsprings_per_parent = 2\nrng_seed = 9").unwrap();
        assert_eq!((cfg.generations, cfg.offspring_per_parent, cfg.rng_seed), (3, 2, 9));
        assert_eq!(cfg.population_size, 20);
        assert_eq!(EaConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert!(EaConfig::from_toml("mutation_rate = 1.5").is_err());
        assert!(EaConfig::from_toml("population_size = 0").is_err());
    }

    fn dataset(n: usize, seed: u64) -> (Vec<Property>, Scaler) {
        let mut r = rng(seed);
        let props: Vec<Property> = (0..n)
            .map(|i| {
                let a: f64 = r.gen_range(0.0..10.0);
                let b: f64 = r.gen_range(0.0..10.0);
                Property {
                    id: i as u64 + 1,
                    location: GeoPoint::new(35.0 + r.gen_range(0.0..0.3), 139.0 + r.gen_range(0.0..0.3)),
                    offer_date: NaiveDate::from_ymd_opt(2016, 1, 1).unwrap(),
                    attributes: vec![a, b],
                    value: Some(1000.0 * (1.0 + a) * r.gen_range(0.95..1.05)),
                    region: Some(if i % 2 == 0 { "x" } else { "y" }.into()),
                }
            })
            .collect();
        let schema = AttributeSchema::continuous(&["a", "b"]).unwrap();
        let scaler = Scaler::fit(&props, &schema).unwrap();
        (props, scaler)
    }

    #[test]
    fn cached_fitness_matches_predictor() {
        let (props, scaler) = dataset(400, 1);
        let base = CaseBase::new(&props, &scaler).unwrap();
        let ctx = FitnessContext::new(&base, 150, 7).unwrap();
        assert_eq!(ctx.len(), 150);
        let sp = SearchSpace::new(&scaler, None);
        let mut r = rng(8);
        let mut genomes: Vec<SimilarityGenome> = (0..30).map(|_| random_genome(&sp, &mut r)).collect();
        let mut wide = genomes[0].clone();
        wide.preselect = PreselectMode::Radius { r_m: f64::INFINITY };
        genomes.push(wide);
        let mut both = genomes[1].clone();
        both.preselect = PreselectMode::Both { k: 30, r_m: 3000.0 };
        genomes.push(both);
        for g in &genomes {
            let mut scratch = Scratch::default();
            let method = Method::Genome(g.clone());
            let mut total = 0.0;
            for id in ctx.sample_ids() {
                let slot = base.slot_of(id).unwrap();
                let w = predict_or_fallback(base.target(slot), &method, &base, &mut scratch);
                total += relative_error(base.value(slot), w.predicted_value).abs();
            }
            let reference = total / ctx.len() as f64;
            assert!((ctx.fitness(g) - reference).abs() <= 1e-12 * reference, "{} vs {reference}", ctx.fitness(g));
            assert_eq!(ctx.fitness(g), ctx.fitness(g));
        }
    }

    #[test]
    fn bounded_fitness_agrees() {
        let (props, scaler) = dataset(300, 4);
        let base = CaseBase::new(&props, &scaler).unwrap();
        let ctx = FitnessContext::new(&base, 120, 3).unwrap();
        let sp = SearchSpace::new(&scaler, None);
        let mut r = rng(12);
        for _ in 0..40 {
            let g = random_genome(&sp, &mut r);
            let f = ctx.fitness(&g);
            assert_eq!(ctx.fitness_below(&g, f), Some(f));
            assert_eq!(ctx.fitness_below(&g, f * 2.0), Some(f));
            assert_eq!(ctx.fitness_below(&g, f * 0.9), None);
        }
    }

    #[test]
    fn fitness_edge_cases() {
        let (props, scaler) = dataset(100, 2);
        let base = CaseBase::new(&props, &scaler).unwrap();
        let ctx = FitnessContext::new(&base, 50, 1).unwrap();
        let mut g = SimilarityGenome::unweighted(2, PostSelect::All, PreselectMode::KNearest { k: 10 });
        g.filters = vec![0.0, 0.0];
        let fallback_mape = ctx
            .sample_ids()
            .iter()
            .map(|&id| {
                let slot = base.slot_of(id).unwrap();
                relative_error(base.value(slot), base.fallback().for_region(base.region(slot))).abs()
            })
            .sum::<f64>()
            / ctx.len() as f64;
        assert_eq!(ctx.fitness(&g), fallback_mape);

        // identical values everywhere give a perfect fit
        let flat: Vec<Property> = props
            .iter()
            .map(|p| Property {
                value: Some(500.0),
                ..p.clone()
            })
            .collect();
        let base = CaseBase::new(&flat, &scaler).unwrap();
        let ctx = FitnessContext::new(&base, 50, 1).unwrap();
        g.filters = vec![f64::INFINITY; 2];
        assert!(ctx.fitness(&g) < 1e-12);
    }

    #[test]
    fn evolve_small_runs() {
        let (props, scaler) = dataset(300, 3);
        let base = CaseBase::new(&props, &scaler).unwrap();
        let sp = SearchSpace::new(&scaler, None);
        let cfg = EaConfig {
            generations: 1,
            population_size: 2,
            offspring_per_parent: 1,
            sample_size: 100,
            rng_seed: 11,
            ..EaConfig::default()
        };
        let (best, trace) = evolve(&cfg, &sp, &base).unwrap();
        assert_eq!(trace.generations.len(), 1);
        assert!(trace.best_fitness <= trace.initial_best_fitness);
        assert_valid(&best, &sp);

        let cfg = EaConfig {
            generations: 25,
            population_size: 4,
            restart_threshold: 3,
            sample_size: 100,
            rng_seed: 5,
            ..EaConfig::default()
        };
        let (best, trace) = evolve(&cfg, &sp, &base).unwrap();
        assert_eq!(trace.generations.len(), 25);
        assert!(trace
            .generations
            .windows(2)
            .all(|w| w[1].best_fitness <= w[0].best_fitness));
        assert!(trace.evaluations <= cfg.generations * cfg.population_size * (1 + cfg.offspring_per_parent));
        let ctx = FitnessContext::new(&base, 100, 5).unwrap();
        assert_eq!(ctx.fitness(&best), trace.best_fitness);
        let (best2, trace2) = evolve(&cfg, &sp, &base).unwrap();
        assert_eq!(best, best2);
        assert_eq!(trace, trace2);
        let mut buf = Vec::new();
        trace.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 26);
    }

    #[test]
    fn evolve_rejects_bad_input() {
        let (props, scaler) = dataset(10, 3);
        let base = CaseBase::new(&props, &scaler).unwrap();
        let sp = space(3);
        assert!(matches!(
            evolve(&EaConfig::default(), &sp, &base),
            Err(EvolutionError::InvalidConfig(_))
        ));
        let cfg = EaConfig {
            population_size: 0,
            ..EaConfig::default()
        };
        assert!(evolve(&cfg, &SearchSpace::new(&scaler, None), &base).is_err());
    }
}
