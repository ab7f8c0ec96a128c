use std::collections::BTreeMap;
use std::io::{self, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::controller::{ControllerState, Trajectory, DEFAULT_HIDDEN_WIDTH};
use super::feedback::{CompilerFeedback, Feedback};
use super::reward::{baseline_update, compute_reward, RewardMode, INVALID_REWARD};
use super::space::SearchSpace;
use super::trainer::Trainer;
use super::NasError;
use crate::graph::ArchSample;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub episodes_per_update: usize,
    pub updates_phase1: usize,
    pub updates_phase2: usize,
    pub learning_rate: f64,
    pub beta: f64,
    pub seed: u64,
    pub hidden_width: usize,
    /// Half-width of the uniform initial weight distribution.
    pub init_scale: f64,
    pub reward_mode: RewardMode,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            episodes_per_update: 8,
            updates_phase1: 200,
            updates_phase2: 200,
            learning_rate: 0.1,
            beta: 0.9,
            seed: 0,
            hidden_width: DEFAULT_HIDDEN_WIDTH,
            init_scale: 0.1,
            reward_mode: RewardMode::AsWritten,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), NasError> {
        let bad = |m: &str| Err(NasError::Config(m.into()));
        if self.episodes_per_update == 0 {
            return bad("episodes_per_update must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return bad("beta must lie in (0, 1)");
        }
        if self.hidden_width == 0 {
            return bad("hidden_width must be positive");
        }
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) {
            return bad("init_scale must be finite and non-negative");
        }
        Ok(())
    }
}

/// One sampled architecture and everything observed about it. Accuracy is
/// absent when the trainer was skipped; latency is absent for samples that
/// violate the architecture invariants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub arch: ArchSample,
    #[serde(rename = "A")]
    pub accuracy: Option<f64>,
    #[serde(rename = "L")]
    pub latency_ms: Option<f64>,
    #[serde(rename = "R")]
    pub reward: f64,
    /// Baseline at sampling time.
    #[serde(rename = "b")]
    pub baseline: f64,
    pub phase: u8,
    pub update: usize,
    pub actions: Vec<usize>,
    pub trained: Vec<bool>,
    pub log_probs: Vec<f64>,
    pub fused_layer_count: Option<usize>,
    pub computation_count: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SearchResult {
    Found {
        arch: ArchSample,
        /// Reward with the baseline term removed, comparable across episodes.
        score: f64,
        accuracy: f64,
        latency_ms: f64,
    },
    Exhausted {
        best_infeasible: Option<ArchSample>,
        latency_ms: Option<f64>,
    },
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub result: SearchResult,
    pub history: Vec<Episode>,
    pub controller: ControllerState,
    /// Index into the layer choices frozen after phase one.
    pub layer_choice: usize,
}

impl SearchOutcome {
    /// Most frequent architecture in `samples` draws from the final policy
    /// with the layer count frozen, and its frequency.
    pub fn policy_mode(&self, space: &SearchSpace, samples: usize, seed: u64) -> Result<(ArchSample, f64), NasError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut counts: BTreeMap<ArchSample, usize> = BTreeMap::new();
        for _ in 0..samples {
            let s = self.controller.sample(&mut rng, &[Some(self.layer_choice), None, None])?;
            *counts.entry(space.arch(&s.actions)).or_default() += 1;
        }
        let (arch, n) = counts
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
            .ok_or_else(|| NasError::Config("samples must be positive".into()))?;
        Ok((arch, n as f64 / samples as f64))
    }
}

/// Ascends `mean over episodes of (R - b) * sum of trained log-probs`.
pub fn reinforce_update(state: &ControllerState, batch: &[Episode], learning_rate: f64) -> Result<ControllerState, NasError> {
    let trajectories: Vec<Trajectory> = batch
        .iter()
        .map(|e| Trajectory {
            actions: e.actions.clone(),
            trained: e.trained.clone(),
            advantage: e.reward - e.baseline,
        })
        .collect();
    state.updated(&trajectories, learning_rate)
}

/// Two-phase search. Phase one samples the layer count with hidden and FFN
/// sizes pinned to their midpoints; phase two freezes the most probable
/// layer count and samples sizes. Over-budget samples get the penalty
/// reward without training; samples that are not valid encoders get
/// [`INVALID_REWARD`] without compiling. Feedback and accuracy are cached
/// per architecture. The returned best is the feasible sample with the
/// highest `R + b`.
pub fn search(
    space: &SearchSpace,
    mut trainer: impl Trainer,
    mut feedback: impl CompilerFeedback,
    cfg: &SearchConfig,
) -> Result<SearchOutcome, NasError> {
    space.validate()?;
    cfg.validate()?;
    let budget = space.latency_budget_ms;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut controller = ControllerState::random(&space.choice_counts(), cfg.hidden_width, cfg.init_scale, &mut rng)?;
    let mut baseline = 0.0;
    let mut measured: BTreeMap<ArchSample, Feedback> = BTreeMap::new();
    let mut scored: BTreeMap<ArchSample, f64> = BTreeMap::new();
    let mut history = Vec::new();
    let mut best: Option<(f64, ArchSample, f64, f64)> = None;
    let mut best_infeasible: Option<(f64, ArchSample)> = None;

    let mid = [
        SearchSpace::midpoint(space.hidden_choices.len()),
        SearchSpace::midpoint(space.ffn_choices.len()),
    ];
    let mut layer_choice = 0;
    for phase in [1u8, 2] {
        let (updates, forced) = if phase == 1 {
            (cfg.updates_phase1, [None, Some(mid[0]), Some(mid[1])])
        } else {
            layer_choice = argmax(&controller.probabilities(&[])?);
            log::info!("phase 2: layers frozen at {}", space.layer_choices[layer_choice]);
            (cfg.updates_phase2, [Some(layer_choice), None, None])
        };
        let trained: Vec<bool> = forced.iter().map(Option::is_none).collect();
        for update in 0..updates {
            let mut batch = Vec::with_capacity(cfg.episodes_per_update);
            for _ in 0..cfg.episodes_per_update {
                let sample = controller.sample(&mut rng, &forced)?;
                let arch = space.arch(&sample.actions);
                let b = baseline;
                let mut episode = Episode {
                    arch,
                    accuracy: None,
                    latency_ms: None,
                    reward: INVALID_REWARD,
                    baseline: b,
                    phase,
                    update,
                    actions: sample.actions,
                    trained: trained.clone(),
                    log_probs: sample.log_probs,
                    fused_layer_count: None,
                    computation_count: None,
                };
                if arch.validate().is_ok() {
                    let fb = match measured.get(&arch) {
                        Some(fb) => *fb,
                        None => *measured.entry(arch).or_insert(feedback.measure(&arch)?),
                    };
                    let latency = fb.latency_ms;
                    episode.latency_ms = Some(latency);
                    episode.fused_layer_count = Some(fb.fused_layer_count);
                    episode.computation_count = Some(fb.computation_count);
                    if latency > budget {
                        episode.reward = compute_reward(0.0, latency, budget, b, cfg.reward_mode)?;
                        if best_infeasible.is_none_or(|(l, _)| latency < l) {
                            best_infeasible = Some((latency, arch));
                        }
                    } else {
                        let accuracy = match scored.get(&arch) {
                            Some(&a) => a,
                            None => *scored.entry(arch).or_insert(trainer.evaluate(&arch)?),
                        };
                        episode.accuracy = Some(accuracy);
                        episode.reward = compute_reward(accuracy, latency, budget, b, cfg.reward_mode)?;
                        baseline = baseline_update(b, accuracy, cfg.beta);
                        let score = episode.reward + b;
                        if best.is_none_or(|(s, ..)| score > s) {
                            best = Some((score, arch, accuracy, latency));
                        }
                    }
                }
                log::debug!(
                    "phase {phase} update {update}: {arch:?} R={:.4} b={b:.4}",
                    episode.reward
                );
                batch.push(episode);
            }
            controller = reinforce_update(&controller, &batch, cfg.learning_rate)?;
            history.extend(batch);
        }
    }

    let result = match best {
        Some((score, arch, accuracy, latency_ms)) => SearchResult::Found {
            arch,
            score,
            accuracy,
            latency_ms,
        },
        None => SearchResult::Exhausted {
            best_infeasible: best_infeasible.map(|(_, a)| a),
            latency_ms: best_infeasible.map(|(l, _)| l),
        },
    };
    Ok(SearchOutcome {
        result,
        history,
        controller,
        layer_choice,
    })
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = k;
        }
    }
    best
}

/// One JSON object per episode, newline terminated.
pub fn write_history(history: &[Episode], mut out: impl Write) -> io::Result<()> {
    for episode in history {
        serde_json::to_writer(&mut out, episode)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use std::cell::Cell;

    use super::*;
    use crate::nas::{PeakedTrainer, SurrogateTrainer, SyntheticFeedback};

    struct Counting<'a>(&'a Cell<usize>);

    impl Trainer for Counting<'_> {
        fn evaluate(&mut self, arch: &ArchSample) -> Result<f64, NasError> {
            self.0.set(self.0.get() + 1);
            Ok(crate::nas::surrogate_accuracy(arch))
        }
    }

    fn small_space(budget: f64) -> SearchSpace {
        SearchSpace {
            layer_choices: vec![1, 2, 3],
            hidden_choices: vec![64, 128],
            ffn_choices: vec![128, 256],
            latency_budget_ms: budget,
            seq_len: 8,
        }
    }

    fn synthetic() -> SyntheticFeedback {
        SyntheticFeedback {
            intercept_ms: 1.0,
            ms_per_gflop: 1000.0,
            seq_len: 8,
        }
    }

    fn quick() -> SearchConfig {
        SearchConfig {
            updates_phase1: 3,
            updates_phase2: 3,
            hidden_width: 8,
            ..SearchConfig::default()
        }
    }

    #[test]
    fn infeasible_budget_exhausts_without_training() {
        let calls = Cell::new(0);
        let out = search(&small_space(0.5), Counting(&calls), synthetic(), &quick()).unwrap();
        assert_eq!(calls.get(), 0);
        assert!(matches!(out.result, SearchResult::Exhausted { best_infeasible: Some(_), .. }));
        assert!(out.history.iter().all(|e| e.reward < 0.0 && e.accuracy.is_none()));
        assert_eq!(out.history.len(), 6 * 8);
    }

    #[test]
    fn found_best_is_feasible_and_history_deterministic() {
        let space = small_space(1e9);
        let run = || search(&space, SurrogateTrainer, synthetic(), &quick()).unwrap();
        let (a, b) = (run(), run());
        let mut la = Vec::new();
        let mut lb = Vec::new();
        write_history(&a.history, &mut la).unwrap();
        write_history(&b.history, &mut lb).unwrap();
        assert_eq!(la, lb);
        let SearchResult::Found { latency_ms, .. } = a.result else {
            panic!("expected a feasible result");
        };
        assert!(latency_ms <= space.latency_budget_ms);
        let first = String::from_utf8(la).unwrap();
        assert!(first.starts_with(r#"{"arch":{"#), "{first}");
    }

    #[test]
    fn phases_pin_the_right_decisions() {
        let space = small_space(1e9);
        let out = search(&space, SurrogateTrainer, synthetic(), &quick()).unwrap();
        for e in &out.history {
            if e.phase == 1 {
                assert_eq!(&e.actions[1..], &[0, 0]);
                assert_eq!(e.trained, [true, false, false]);
            } else {
                assert_eq!(e.actions[0], out.layer_choice);
                assert_eq!(e.trained, [false, true, true]);
            }
        }
    }

    #[test]
    fn invalid_archs_are_not_compiled() {
        let space = SearchSpace {
            layer_choices: vec![1],
            hidden_choices: vec![256],
            ffn_choices: vec![64],
            latency_budget_ms: 1e9,
            seq_len: 4,
        };
        let out = search(&space, SurrogateTrainer, synthetic(), &quick()).unwrap();
        assert!(out.history.iter().all(|e| e.reward == INVALID_REWARD && e.latency_ms.is_none()));
        assert_eq!(out.result, SearchResult::Exhausted { best_infeasible: None, latency_ms: None });
    }

    #[test]
    fn peaked_landscape_is_reachable() {
        let space = small_space(1e9);
        let target = space.arch(&[2, 1, 1]);
        let trainer = PeakedTrainer { target, peak: 0.95, slope: 0.3 };
        let out = search(&space, trainer, synthetic(), &SearchConfig { hidden_width: 8, ..SearchConfig::default() }).unwrap();
        assert!(matches!(out.result, SearchResult::Found { arch, .. } if arch == target));
    }
}
