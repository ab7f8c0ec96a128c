mod common;

use std::sync::{Mutex, MutexGuard};

use common::{elementwise_chain, fuse_add_graph, random_bindings};
use fusekit_core::autotune::{
    ga_search, measure_interleaved, tune_graph, worker_choices, GaConfig, LatencyConfig,
};
use fusekit_core::codegen::CodegenError;
use fusekit_core::graph::Bindings;
use fusekit_core::codegen::UNROLL_FACTORS;
use fusekit_core::{fuse_graph, CompiledGraph, ScheduleVariant};

/// Serializes the tests in this binary.
fn serial() -> MutexGuard<'static, ()> {
    static SERIAL: Mutex<()> = Mutex::new(());
    SERIAL.lock().unwrap_or_else(|p| p.into_inner())
}

fn one_max(c: &[usize]) -> f64 {
    c.iter().filter(|&&g| g != 0).count() as f64
}

#[test]
fn ga_solves_one_max_in_nearly_every_seed() {
    let _serial = serial();
    let hits = (0..20)
        .filter(|&seed| {
            let cfg = GaConfig {
                generations: 50,
                seed,
                ..GaConfig::default()
            };
            ga_search(&[2; 12], &cfg, one_max).unwrap().best_fitness == 0.0
        })
        .count();
    assert!(hits >= 19, "{hits}/20");
}

#[test]
fn ga_matches_exhaustive_on_separable_model() {
    let _serial = serial();
    let space = [4, 2, 4, 4, 2, 2];
    let model = |c: &[usize]| {
        let centers = [2.0, 1.0, 1.0, 3.0, 0.0, 1.0];
        let weights = [1.0, 3.0, 0.5, 2.0, 1.5, 0.7];
        10.0 + c
            .iter()
            .zip(centers.iter().zip(weights))
            .map(|(&x, (&m, w))| w * (x as f64 - m).powi(2))
            .sum::<f64>()
    };
    let mut exhaustive = f64::INFINITY;
    let total: usize = space.iter().product();
    assert!(total <= 512);
    for mut code in 0..total {
        let c: Vec<usize> = space
            .iter()
            .map(|&n| {
                let g = code % n;
                code /= n;
                g
            })
            .collect();
        exhaustive = exhaustive.min(model(&c));
    }
    for seed in 0..10 {
        let found = ga_search(&space, &GaConfig { seed, ..GaConfig::default() }, model).unwrap();
        assert!(found.best_fitness <= 1.05 * exhaustive, "seed {seed}: {}", found.best_fitness);
    }
}

fn searched_variants() -> Vec<ScheduleVariant> {
    let mut out = Vec::new();
    for base in ScheduleVariant::base_variants() {
        for u in UNROLL_FACTORS {
            for &w in worker_choices() {
                out.push(base.with_unroll(u).with_workers(w));
            }
        }
    }
    out
}

fn interleaved_medians(
    compiled: &CompiledGraph,
    block: usize,
    bindings: &Bindings,
    variants: &[ScheduleVariant],
) -> Vec<f64> {
    let graphs: Vec<CompiledGraph> = variants
        .iter()
        .map(|v| {
            let mut c = compiled.clone();
            c.set_variant(block, *v).unwrap();
            c
        })
        .collect();
    let mut runners: Vec<_> = graphs.iter().map(|c| || c.execute(bindings).map(drop)).collect();
    let mut fs: Vec<&mut dyn FnMut() -> Result<(), CodegenError>> =
        runners.iter_mut().map(|r| r as &mut dyn FnMut() -> Result<(), CodegenError>).collect();
    let cfg = LatencyConfig { runs: 41, warmup: 2 };
    measure_interleaved(&cfg, &mut fs)
        .unwrap()
        .into_iter()
        .map(|s| s.median_ms)
        .collect()
}

#[test]
fn tuned_variant_dominates_rejected_ones() {
    let _serial = serial();
    let latency = LatencyConfig { runs: 15, warmup: 3 };
    for (m, n) in [(2048, 64), (64, 2048)] {
        let g = fuse_add_graph(m, n);
        let fused = fuse_graph(&g).unwrap().graph;
        let mut compiled = CompiledGraph::compile(&fused).unwrap();
        let bindings = random_bindings(&fused, 3);
        let ga = GaConfig {
            population_size: 16,
            generations: 6,
            seed: 1,
            ..GaConfig::default()
        };
        let report = tune_graph(&mut compiled, &bindings, &ga, &latency).unwrap();
        assert!(report.history.windows(2).all(|w| w[1] <= w[0]));
        let (&block, &selected) = report.assignment.iter().next().unwrap();
        let variants = searched_variants();
        assert!(variants.contains(&selected));
        let medians = interleaved_medians(&compiled, block, &bindings, &variants);
        let chosen = medians[variants.iter().position(|v| *v == selected).unwrap()];
        for (v, median) in variants.iter().zip(&medians) {
            assert!(
                chosen <= median * 1.10,
                "{m}x{n}: selected {selected:?} at {chosen} ms, {v:?} at {median} ms"
            );
        }
    }
}

#[test]
fn tuned_graph_is_not_slower_than_unfused() {
    let _serial = serial();
    let g = elementwise_chain(512, 512);
    let bindings = random_bindings(&g, 5);
    let latency = LatencyConfig { runs: 15, warmup: 3 };
    let unfused = CompiledGraph::compile(&g).unwrap();
    let fused = fuse_graph(&g).unwrap().graph;
    let mut compiled = CompiledGraph::compile(&fused).unwrap();
    let fused_bindings = fused
        .input_ids()
        .into_iter()
        .zip(g.input_ids())
        .map(|(f, r)| (f, bindings[&r].clone()))
        .collect();
    let ga = GaConfig {
        population_size: 8,
        generations: 4,
        ..GaConfig::default()
    };
    tune_graph(&mut compiled, &fused_bindings, &ga, &latency).unwrap();
    let mut run_unfused = || unfused.execute(&bindings).map(drop);
    let mut run_tuned = || compiled.execute(&fused_bindings).map(drop);
    let cfg = LatencyConfig { runs: 31, warmup: 2 };
    let stats = measure_interleaved(&cfg, &mut [&mut run_unfused, &mut run_tuned]).unwrap();
    let ratio = stats[1].median_ms / stats[0].median_ms;
    assert!(ratio <= 1.10, "tuned {} ms vs unfused {} ms", stats[1].median_ms, stats[0].median_ms);
}

#[test]
fn graph_without_blocks_gets_empty_assignment() {
    let _serial = serial();
    let g = elementwise_chain(4, 4);
    let mut compiled = CompiledGraph::compile(&g).unwrap();
    let bindings = random_bindings(&g, 1);
    let report = tune_graph(&mut compiled, &bindings, &GaConfig::default(), &LatencyConfig { runs: 3, warmup: 0 }).unwrap();
    assert!(report.assignment.is_empty());
    assert_eq!(report.stats.samples_ms.len(), 3);
}
