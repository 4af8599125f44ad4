//! Adaptive genetic algorithm shared by the block mapper and the RS shield.
//!
//! Crossover and mutation probabilities react to population stagnation: when
//! the best and mean fitness draw together, mutation is doubled (up to a cap)
//! and crossover is eased off, otherwise the base rates apply.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Genome {
    /// A permutation of `1..=n`.
    Permutation(Vec<u16>),
    /// Three adjacent pixel values.
    BitTriple([u8; 3]),
}

impl Genome {
    pub fn identity(n: usize) -> Self {
        Genome::Permutation((1..=n as u16).collect())
    }

    pub fn random_permutation(n: usize, rng: &mut impl Rng) -> Self {
        let mut p: Vec<u16> = (1..=n as u16).collect();
        p.shuffle(rng);
        Genome::Permutation(p)
    }

    pub fn is_valid(&self) -> bool {
        match self {
            Genome::Permutation(p) => is_permutation(p),
            Genome::BitTriple(_) => true,
        }
    }

    pub fn as_permutation(&self) -> Option<&[u16]> {
        match self {
            Genome::Permutation(p) => Some(p),
            Genome::BitTriple(_) => None,
        }
    }
}

pub fn is_permutation(p: &[u16]) -> bool {
    let mut seen = vec![false; p.len()];
    p.iter().all(|&v| {
        let i = v as usize;
        (1..=p.len()).contains(&i) && !std::mem::replace(&mut seen[i - 1], true)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgaParams {
    pub population_size: usize,
    pub base_pc: f64,
    pub base_pm: f64,
    pub pm_max: f64,
    pub stagnation_epsilon: f64,
    pub max_generations: usize,
    pub elitism_count: usize,
    pub seed: u64,
}

impl Default for AgaParams {
    fn default() -> Self {
        Self {
            population_size: 32,
            base_pc: 0.8,
            base_pm: 0.05,
            pm_max: 0.4,
            stagnation_epsilon: 0.01,
            max_generations: 100,
            elitism_count: 1,
            seed: 0,
        }
    }
}

impl AgaParams {
    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !prob(self.base_pc) || !prob(self.base_pm) || !prob(self.pm_max) {
            return Err(Error::InvalidParam("probabilities must lie in [0, 1]".into()));
        }
        if self.pm_max < self.base_pm {
            return Err(Error::InvalidParam("pm_max must be >= base_pm".into()));
        }
        if self.population_size < 2 {
            return Err(Error::InvalidParam("population_size must be >= 2".into()));
        }
        if self.elitism_count > self.population_size {
            return Err(Error::InvalidParam("elitism_count exceeds population".into()));
        }
        if !(self.stagnation_epsilon >= 0.0) {
            return Err(Error::InvalidParam("stagnation_epsilon must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvolutionTrace {
    pub best: Vec<f64>,
    pub mean: Vec<f64>,
    /// `(pc, pm)` used to breed each generation after the first.
    pub rates: Vec<(f64, f64)>,
}

/// Whether the population has collapsed onto similar fitness values.
pub fn is_stagnant(fitness: &[f64], epsilon: f64) -> bool {
    let finite: Vec<f64> = fitness.iter().copied().filter(|f| f.is_finite()).collect();
    if finite.is_empty() {
        return true;
    }
    let best = finite.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean = finite.iter().sum::<f64>() / finite.len() as f64;
    let spread = best - mean;
    if best.abs() > 0.0 {
        spread / best.abs() < epsilon
    } else {
        spread < epsilon
    }
}

/// Next `(pc, pm)` given the current population fitness and the rates in force.
pub fn adapt_rates(fitness: &[f64], params: &AgaParams, current: (f64, f64)) -> (f64, f64) {
    if is_stagnant(fitness, params.stagnation_epsilon) {
        let pc = (current.0 - 0.1).max(0.5).min(params.base_pc.max(0.5));
        let pm = (current.1 * 2.0).min(params.pm_max);
        (pc, pm)
    } else {
        (params.base_pc, params.base_pm)
    }
}

/// Order crossover: the child keeps `a[start..end]` in place and fills the
/// remaining positions, starting after `end` and wrapping, with the other
/// genes in the cyclic order they appear in `b` from `end`.
pub fn order_crossover(a: &[u16], b: &[u16], start: usize, end: usize) -> Result<Vec<u16>> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len();
    if start > end || end > n {
        return Err(Error::InvalidParam(format!("segment [{start}, {end}) outside 0..{n}")));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut child = vec![0u16; n];
    let mut taken = vec![false; n + 1];
    for i in start..end {
        child[i] = a[i];
        taken[a[i] as usize] = true;
    }
    let mut pos = end % n;
    for k in 0..n {
        let gene = b[(end + k) % n];
        if taken[gene as usize] {
            continue;
        }
        while (start..end).contains(&pos) {
            pos = (pos + 1) % n;
        }
        child[pos] = gene;
        pos = (pos + 1) % n;
    }
    Ok(child)
}

/// Order crossover with a random segment.
pub fn crossover_permutation(a: &[u16], b: &[u16], rng: &mut impl Rng) -> Result<Vec<u16>> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Ok(Vec::new());
    }
    let i = rng.gen_range(0..a.len());
    let j = rng.gen_range(0..a.len());
    let (s, e) = if i <= j { (i, j + 1) } else { (j, i + 1) };
    order_crossover(a, b, s, e)
}

fn crossover(a: &Genome, b: &Genome, rng: &mut impl Rng) -> Result<Genome> {
    match (a, b) {
        (Genome::Permutation(x), Genome::Permutation(y)) => Ok(Genome::Permutation(crossover_permutation(x, y, rng)?)),
        (Genome::BitTriple(x), Genome::BitTriple(y)) => {
            let mut c = *x;
            for (ci, yi) in c.iter_mut().zip(y) {
                if rng.gen_bool(0.5) {
                    *ci = *yi;
                }
            }
            Ok(Genome::BitTriple(c))
        }
        _ => Err(Error::InvalidParam("cannot cross different genome variants".into())),
    }
}

/// Permutations: swap two random positions with probability `pm`.
/// Pixel triples: flip each value's second-lowest bit with probability `pm`.
pub fn mutate(genome: &Genome, pm: f64, rng: &mut impl Rng) -> Genome {
    match genome {
        Genome::Permutation(p) => {
            let mut p = p.clone();
            if p.len() >= 2 && rng.gen_bool(pm.clamp(0.0, 1.0)) {
                let i = rng.gen_range(0..p.len());
                let j = rng.gen_range(0..p.len());
                p.swap(i, j);
            }
            Genome::Permutation(p)
        }
        Genome::BitTriple(t) => {
            let mut t = *t;
            for v in &mut t {
                if rng.gen_bool(pm.clamp(0.0, 1.0)) {
                    *v ^= 2;
                }
            }
            Genome::BitTriple(t)
        }
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn mean(values: &[f64]) -> f64 {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        f64::NEG_INFINITY
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    }
}

/// Result of an [`evolve`] run.
#[derive(Debug, Clone, PartialEq)]
pub struct Evolved {
    pub best: Genome,
    pub fitness: f64,
    pub trace: EvolutionTrace,
}

/// Runs the adaptive GA and returns the fittest genome ever evaluated.
///
/// Selection is a size-2 tournament; the better of the two wins and ties go
/// to the lower population index. The top `elitism_count` genomes survive
/// unchanged. Deterministic for a given seed.
pub fn evolve<F>(initial: Vec<Genome>, fitness: F, params: &AgaParams) -> Result<Evolved>
where
    F: Fn(&Genome) -> f64,
{
    params.validate()?;
    if initial.is_empty() {
        return Err(Error::EmptyPopulation);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut population = initial;
    let mut scores: Vec<f64> = population.iter().map(&fitness).collect();
    let first = argmax(&scores);
    let mut best = (population[first].clone(), scores[first]);
    let mut trace = EvolutionTrace { best: vec![scores[first]], mean: vec![mean(&scores)], rates: Vec::new() };
    let mut rates = (params.base_pc, params.base_pm);
    let size = params.population_size.max(population.len());

    for _ in 0..params.max_generations {
        rates = adapt_rates(&scores, params, rates);
        let (pc, pm) = rates;
        let mut order: Vec<usize> = (0..population.len()).collect();
        order.sort_by(|&i, &j| scores[j].partial_cmp(&scores[i]).unwrap_or(std::cmp::Ordering::Equal).then(i.cmp(&j)));

        let mut next: Vec<Genome> = order.iter().take(params.elitism_count).map(|&i| population[i].clone()).collect();
        let mut next_scores: Vec<f64> = order.iter().take(params.elitism_count).map(|&i| scores[i]).collect();
        let n = population.len();
        let tournament = |rng: &mut ChaCha8Rng| {
            let (i, j) = (rng.gen_range(0..n), rng.gen_range(0..n));
            let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
            if scores[hi] > scores[lo] {
                hi
            } else {
                lo
            }
        };
        while next.len() < size {
            let a = tournament(&mut rng);
            let b = tournament(&mut rng);
            let child = if rng.gen_bool(pc.clamp(0.0, 1.0)) {
                crossover(&population[a], &population[b], &mut rng)?
            } else {
                population[a].clone()
            };
            let child = mutate(&child, pm, &mut rng);
            next_scores.push(fitness(&child));
            next.push(child);
        }
        population = next;
        scores = next_scores;
        let g = argmax(&scores);
        if scores[g] > best.1 {
            best = (population[g].clone(), scores[g]);
        }
        trace.best.push(scores[g]);
        trace.mean.push(mean(&scores));
        trace.rates.push(rates);
    }
    Ok(Evolved { best: best.0, fitness: best.1, trace })
}
