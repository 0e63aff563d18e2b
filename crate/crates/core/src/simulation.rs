//! Seeded simulation of capture tables from a latent class model.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::Binomial;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{cell_probabilities, ContingencyTable, LatentClassModel};
use crate::rng::{stream, StreamRng};

/// Per-individual sampling draws `N * K` Bernoulli variables; cap `K` there.
pub const PER_INDIVIDUAL_MAX_SOURCES: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSpec {
    pub model: LatentClassModel,
    pub population: u64,
    pub seed: u64,
}

impl SimulationSpec {
    pub fn new(model: LatentClassModel, population: u64, seed: u64) -> Result<Self> {
        if population < 1 {
            return Err(Error::Domain("population size N must be at least 1".into()));
        }
        Ok(SimulationSpec {
            model,
            population,
            seed,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SamplingMode {
    /// One multinomial draw of size `N` over all `2^K` cells.
    #[default]
    Multinomial,
    /// A class and `K` Bernoulli captures for each of the `N` individuals.
    PerIndividual,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimulatedTable {
    pub table: ContingencyTable,
    /// Realized all-zero count `N - n`. Ground truth only; never part of the table.
    pub true_missing: u64,
}

/// One multinomial table from stream 0 of `spec.seed`.
pub fn simulate_table(spec: &SimulationSpec) -> SimulatedTable {
    simulate_with_rng(spec, SamplingMode::Multinomial, &mut stream(spec.seed, 0))
        .expect("multinomial sampling has no mode restrictions")
}

/// Draws one table with `mode` from `rng`.
pub fn simulate_with_rng(spec: &SimulationSpec, mode: SamplingMode, rng: &mut StreamRng) -> Result<SimulatedTable> {
    let full = match mode {
        SamplingMode::Multinomial => sample_multinomial(spec, rng),
        SamplingMode::PerIndividual => sample_individuals(spec, rng)?,
    };
    Ok(SimulatedTable {
        true_missing: full[0],
        table: ContingencyTable::new(full[1..].to_vec()).expect("length is 2^K - 1"),
    })
}

/// Replicate `r` uses stream `r` of `spec.seed`; output is in replicate order
/// whatever the thread count.
pub fn simulate_replicates(spec: &SimulationSpec, replicates: usize, mode: SamplingMode) -> Result<Vec<SimulatedTable>> {
    if replicates < 1 {
        return Err(Error::Domain("at least one replicate is required".into()));
    }
    if mode == SamplingMode::PerIndividual {
        check_per_individual(spec)?;
    }
    (0..replicates as u64)
        .into_par_iter()
        .map(|r| simulate_with_rng(spec, mode, &mut stream(spec.seed, r)))
        .collect()
}

/// Sequential conditional binomials over `H` in canonical order.
fn sample_multinomial(spec: &SimulationSpec, rng: &mut StreamRng) -> Vec<u64> {
    let pi = cell_probabilities(&spec.model);
    let probs = pi.full();
    // suffix sums keep the conditional probabilities accurate near the tail
    let mut tail = vec![0.0; probs.len() + 1];
    for i in (0..probs.len()).rev() {
        tail[i] = tail[i + 1] + probs[i];
    }
    let mut remaining = spec.population;
    let mut counts = vec![0u64; probs.len()];
    for i in 0..probs.len() {
        if remaining == 0 {
            break;
        }
        if i + 1 == probs.len() {
            counts[i] = remaining;
            break;
        }
        let p = if tail[i] > 0.0 { (probs[i] / tail[i]).clamp(0.0, 1.0) } else { 0.0 };
        let draw = Binomial::new(remaining, p).expect("p in [0, 1]").sample(rng);
        counts[i] = draw;
        remaining -= draw;
    }
    counts
}

fn check_per_individual(spec: &SimulationSpec) -> Result<()> {
    if spec.model.sources() > PER_INDIVIDUAL_MAX_SOURCES {
        return Err(Error::Domain(format!(
            "per-individual sampling supports K <= {PER_INDIVIDUAL_MAX_SOURCES}, got K={}",
            spec.model.sources()
        )));
    }
    Ok(())
}

fn sample_individuals(spec: &SimulationSpec, rng: &mut StreamRng) -> Result<Vec<u64>> {
    check_per_individual(spec)?;
    let model = &spec.model;
    let classes = WeightedIndex::new(model.weights()).map_err(|e| Error::DegenerateModel(e.to_string()))?;
    let mut counts = vec![0u64; model.order().full_len()];
    for _ in 0..spec.population {
        let j = classes.sample(rng);
        let h = model
            .class_probs(j)
            .iter()
            .fold(0usize, |acc, &p| (acc << 1) | usize::from(rng.random::<f64>() < p));
        counts[h] += 1;
    }
    Ok(counts)
}
