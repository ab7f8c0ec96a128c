use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TuneError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaConfig {
    pub population_size: usize,
    pub generations: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub elitism: usize,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population_size: 16,
            generations: 20,
            crossover_rate: 0.8,
            mutation_rate: 0.1,
            elitism: 1,
            seed: 0,
        }
    }
}

impl GaConfig {
    fn validate(&self) -> Result<(), TuneError> {
        let bad = |m: &str| Err(TuneError::Config(m.into()));
        if self.population_size == 0 || self.generations == 0 {
            return bad("population_size and generations must be positive");
        }
        if self.elitism == 0 || self.elitism > self.population_size {
            return bad("elitism must be in 1..=population_size");
        }
        if !(0.0..=1.0).contains(&self.crossover_rate) || !(0.0..=1.0).contains(&self.mutation_rate) {
            return bad("rates must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaResult {
    pub best: Vec<usize>,
    pub best_fitness: f64,
    /// Best fitness seen up to and including each generation.
    pub history: Vec<f64>,
    /// Distinct chromosomes evaluated.
    pub evaluations: usize,
    /// Every evaluated chromosome, best first; ties broken by chromosome.
    pub ranked: Vec<(Vec<usize>, f64)>,
}

/// Minimizes `fitness` over chromosomes whose gene `k` lies in
/// `0..space[k]`. Tournament selection of size 2, single-point crossover,
/// per-gene uniform mutation and elitism; fitness values are memoized.
pub fn ga_search(
    space: &[usize],
    cfg: &GaConfig,
    mut fitness: impl FnMut(&[usize]) -> f64,
) -> Result<GaResult, TuneError> {
    if space.is_empty() || space.contains(&0) {
        return Err(TuneError::EmptySpace);
    }
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut memo: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    let mut population: Vec<Vec<usize>> = (0..cfg.population_size)
        .map(|_| space.iter().map(|&n| rng.gen_range(0..n)).collect())
        .collect();

    let mut best: Option<(Vec<usize>, f64)> = None;
    let mut history = Vec::with_capacity(cfg.generations);
    for generation in 0..cfg.generations {
        let mut scored: Vec<(Vec<usize>, f64)> = population
            .drain(..)
            .map(|c| {
                let f = *memo.entry(c.clone()).or_insert_with(|| fitness(&c));
                (c, f)
            })
            .collect();
        scored.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
        if best.as_ref().is_none_or(|(_, f)| scored[0].1 < *f) {
            best = Some(scored[0].clone());
        }
        history.push(best.as_ref().expect("set above").1);
        if generation + 1 == cfg.generations {
            break;
        }

        let pick = |rng: &mut ChaCha8Rng| -> &Vec<usize> {
            let a = rng.gen_range(0..scored.len());
            let b = rng.gen_range(0..scored.len());
            // `scored` is sorted, so the smaller index is the fitter one.
            &scored[a.min(b)].0
        };
        population.extend(scored.iter().take(cfg.elitism).map(|(c, _)| c.clone()));
        while population.len() < cfg.population_size {
            let p1 = pick(&mut rng).clone();
            let mut child = if space.len() > 1 && rng.gen_bool(cfg.crossover_rate) {
                let p2 = pick(&mut rng);
                let cut = rng.gen_range(1..space.len());
                p1[..cut].iter().chain(&p2[cut..]).copied().collect()
            } else {
                p1
            };
            for (gene, &n) in child.iter_mut().zip(space) {
                if rng.gen_bool(cfg.mutation_rate) {
                    *gene = rng.gen_range(0..n);
                }
            }
            population.push(child);
        }
    }
    let (best, best_fitness) = best.expect("at least one generation");
    let mut ranked: Vec<(Vec<usize>, f64)> = memo.into_iter().collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    Ok(GaResult {
        best,
        best_fitness,
        history,
        evaluations: ranked.len(),
        ranked,
    })
}
