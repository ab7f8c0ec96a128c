use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{ensure, Context, Result};
use fusekit_core::autotune::{
    measure_interleaved, tune_graph, GaConfig, LatencyConfig, LatencyStats,
};
use fusekit_core::codegen::CodegenError;
use fusekit_core::fusion::{fuse_report, FuseReport};
use fusekit_core::graph::{count_metrics, seeded_bindings, Bindings, NodeId};
use fusekit_core::nas::{search, write_history, NasError, SearchResult};
use fusekit_core::{
    fuse_graph, infer_shapes, parse_graph, CompiledGraph, Graph, GraphMetrics, ScheduleVariant,
};
use serde::Serialize;

use crate::config::SearchFile;
use crate::error::{ensure_user, UserContext, UserError};
use crate::report::{emit, Report};
use crate::{Cli, Command, Status};

pub fn run(cli: &Cli) -> Result<Status> {
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::Compile { graph, no_fuse, report } => compile(graph, *no_fuse, report.as_deref()),
        Command::FuseReport { graph, report } => fusion(graph, report.as_deref()),
        Command::Bench {
            graph,
            runs,
            warmup,
            fused,
            unfused,
            report,
        } => {
            let both = !fused && !unfused;
            let cfg = LatencyConfig {
                runs: *runs,
                warmup: *warmup,
            };
            bench(graph, cfg, *fused || both, *unfused || both, seed, report.as_deref())
        }
        Command::Tune {
            graph,
            runs,
            warmup,
            generations,
            population,
            report,
        } => {
            let latency = LatencyConfig {
                runs: *runs,
                warmup: *warmup,
            };
            let ga = GaConfig {
                population_size: *population,
                generations: *generations,
                seed,
                ..GaConfig::default()
            };
            tune(graph, &ga, latency, seed, report.as_deref())
        }
        Command::Search { config, history, report } => run_search(config, history, cli.seed, report.as_deref()),
    }
}

fn load_graph(path: &Path) -> Result<(Vec<u8>, Graph)> {
    let shown = path.display();
    let bytes = std::fs::read(path).user(format!("reading {shown}"))?;
    let text = std::str::from_utf8(&bytes).user(format!("{shown} is not UTF-8"))?;
    let g = parse_graph(text).user(format!("{shown}"))?;
    let g = infer_shapes(g).user(format!("{shown}"))?;
    Ok((bytes, g))
}

/// Bindings for a rewritten graph, matching inputs by position.
fn rebind(original: &Graph, fused: &Graph, bindings: &Bindings) -> Bindings {
    fused
        .input_ids()
        .into_iter()
        .zip(original.input_ids())
        .map(|(f, o)| (f, bindings[&o].clone()))
        .collect()
}

#[derive(Debug, Serialize)]
struct BlockReport {
    node: NodeId,
    expression: String,
    /// Initial or tuned schedule; absent when the block runs per op.
    variant: Option<ScheduleVariant>,
}

fn block_reports(compiled: &CompiledGraph) -> Vec<BlockReport> {
    compiled
        .graph()
        .nodes()
        .iter()
        .filter_map(|n| {
            n.fused().map(|b| BlockReport {
                node: n.id,
                expression: b.expr.to_string(),
                variant: compiled.kernel(n.id).map(|k| k.selected),
            })
        })
        .collect()
}

struct Fused {
    graph: Graph,
    before: GraphMetrics,
    after: GraphMetrics,
}

fn fuse_checked(g: &Graph) -> Result<Fused> {
    let out = fuse_graph(g).context("fusion pass")?;
    let recount = count_metrics(&out.graph)?;
    ensure!(
        recount == out.after,
        "fused graph metrics {recount:?} disagree with the fusion pass {:?}",
        out.after
    );
    Ok(Fused {
        graph: out.graph,
        before: out.before,
        after: out.after,
    })
}

#[derive(Debug, Serialize)]
struct CompileBody {
    fused: bool,
    before: GraphMetrics,
    after: GraphMetrics,
    blocks: Vec<BlockReport>,
}

fn compile(path: &Path, no_fuse: bool, report: Option<&Path>) -> Result<Status> {
    let (bytes, g) = load_graph(path)?;
    let f = if no_fuse {
        let m = count_metrics(&g)?;
        Fused {
            graph: g,
            before: m,
            after: m,
        }
    } else {
        fuse_checked(&g)?
    };
    let compiled = CompiledGraph::compile(&f.graph).context("lowering")?;
    log::info!(
        "layers {} -> {}, computations {} -> {}",
        f.before.layer_count,
        f.after.layer_count,
        f.before.computation_count,
        f.after.computation_count
    );
    let body = CompileBody {
        fused: !no_fuse,
        before: f.before,
        after: f.after,
        blocks: block_reports(&compiled),
    };
    emit(&Report::<_, ()>::new("compile", &bytes, body, None), report)?;
    Ok(Status::Done)
}

#[derive(Debug, Serialize)]
struct FusionBody {
    fusion: FuseReport,
}

fn fusion(path: &Path, report: Option<&Path>) -> Result<Status> {
    let (bytes, g) = load_graph(path)?;
    let out = fuse_graph(&g).context("fusion pass")?;
    let body = FusionBody {
        fusion: fuse_report(&out),
    };
    emit(&Report::<_, ()>::new("fuse-report", &bytes, body, None), report)?;
    Ok(Status::Done)
}

#[derive(Debug, Serialize)]
struct BenchBody {
    seed: u64,
    latency: LatencyConfig,
    before: GraphMetrics,
    after: GraphMetrics,
}

#[derive(Debug, Serialize)]
struct BenchTiming {
    unfused: Option<LatencyStats>,
    fused: Option<LatencyStats>,
    /// Unfused median over fused median.
    speedup: Option<f64>,
}

type Runner<'a> = Box<dyn FnMut() -> Result<(), CodegenError> + 'a>;

fn bench(path: &Path, cfg: LatencyConfig, fused: bool, unfused: bool, seed: u64, report: Option<&Path>) -> Result<Status> {
    ensure_user(cfg.runs > 0, "--runs must be at least 1")?;
    let (bytes, g) = load_graph(path)?;
    let f = fuse_checked(&g)?;
    let bindings = seeded_bindings(&g, seed)?;
    let fused_bindings = rebind(&g, &f.graph, &bindings);
    let plain = CompiledGraph::compile(&g).context("lowering unfused graph")?;
    let compiled = CompiledGraph::compile(&f.graph).context("lowering fused graph")?;

    let mut runners: Vec<Runner<'_>> = Vec::new();
    if unfused {
        runners.push(Box::new(|| plain.execute(&bindings).map(drop)));
    }
    if fused {
        runners.push(Box::new(|| compiled.execute(&fused_bindings).map(drop)));
    }
    let mut fs: Vec<&mut dyn FnMut() -> Result<(), CodegenError>> =
        runners.iter_mut().map(|r| r.as_mut() as &mut dyn FnMut() -> Result<(), CodegenError>).collect();
    let mut stats = measure_interleaved(&cfg, &mut fs).context("measuring")?.into_iter();
    let unfused_stats = if unfused { stats.next() } else { None };
    let fused_stats = if fused { stats.next() } else { None };
    let speedup = match (&unfused_stats, &fused_stats) {
        (Some(u), Some(f)) => Some(u.median_ms / f.median_ms),
        _ => None,
    };
    for (name, s) in [("unfused", &unfused_stats), ("fused", &fused_stats)] {
        if let Some(s) = s {
            log::info!("{name}: median {:.4} ms, p90 {:.4} ms", s.median_ms, s.p90_ms);
        }
    }
    if let Some(r) = speedup {
        log::info!("speedup {r:.3}");
    }
    let body = BenchBody {
        seed,
        latency: cfg,
        before: f.before,
        after: f.after,
    };
    let timing = BenchTiming {
        unfused: unfused_stats,
        fused: fused_stats,
        speedup,
    };
    emit(&Report::new("bench", &bytes, body, Some(timing)), report)?;
    Ok(Status::Done)
}

#[derive(Debug, Serialize)]
struct TuneBody {
    seed: u64,
    ga: GaConfig,
    latency: LatencyConfig,
    before: GraphMetrics,
    after: GraphMetrics,
    blocks: Vec<BlockReport>,
}

#[derive(Debug, Serialize)]
struct TuneTiming {
    /// Best median latency (ms) after each generation.
    history_ms: Vec<f64>,
    evaluations: usize,
    assignment: BTreeMap<NodeId, ScheduleVariant>,
    stats: LatencyStats,
}

fn tune(path: &Path, ga: &GaConfig, latency: LatencyConfig, seed: u64, report: Option<&Path>) -> Result<Status> {
    ensure_user(latency.runs > 0, "--runs must be at least 1")?;
    ensure_user(ga.generations > 0, "--generations must be at least 1")?;
    ensure_user(ga.population_size > 0, "--population must be at least 1")?;
    let (bytes, g) = load_graph(path)?;
    let f = fuse_checked(&g)?;
    let bindings = rebind(&g, &f.graph, &seeded_bindings(&g, seed)?);
    let mut compiled = CompiledGraph::compile(&f.graph).context("lowering")?;
    let tuned = tune_graph(&mut compiled, &bindings, ga, &latency).context("tuning")?;
    log::info!(
        "tuned {} blocks in {} evaluations, median {:.4} ms",
        tuned.assignment.len(),
        tuned.evaluations,
        tuned.stats.median_ms
    );
    let body = TuneBody {
        seed,
        ga: *ga,
        latency,
        before: f.before,
        after: f.after,
        blocks: block_reports(&compiled),
    };
    let timing = TuneTiming {
        history_ms: tuned.history,
        evaluations: tuned.evaluations,
        assignment: tuned.assignment,
        stats: tuned.stats,
    };
    emit(&Report::new("tune", &bytes, body, Some(timing)), report)?;
    Ok(Status::Done)
}

#[derive(Debug, Serialize)]
struct BestMetrics {
    fused_layer_count: Option<usize>,
    computation_count: Option<u64>,
}

#[derive(Debug, Serialize)]
struct SearchBody {
    seed: u64,
    result: SearchResult,
    best_metrics: Option<BestMetrics>,
    /// Layer count frozen after the first phase.
    frozen_layers: usize,
    episodes: usize,
    history: PathBuf,
}

fn run_search(path: &Path, history: &Path, seed: Option<u64>, report: Option<&Path>) -> Result<Status> {
    let shown = path.display();
    let bytes = std::fs::read(path).user(format!("reading {shown}"))?;
    let file: SearchFile = serde_json::from_slice(&bytes).user(format!("{shown}"))?;
    let mut cfg = file.search;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    file.space.validate().user(format!("{shown}: space"))?;
    cfg.validate().user(format!("{shown}: search"))?;

    let trainer = file.trainer.build();
    let feedback = file.latency.build(file.space.seq_len, cfg.seed);
    let outcome = search(&file.space, trainer, feedback, &cfg).map_err(|e| match e {
        NasError::Trainer(_) => anyhow::Error::new(e).context(UserError("trainer failed".into())),
        other => anyhow::Error::new(other).context("search"),
    })?;

    let out = File::create(history).user(format!("creating {}", history.display()))?;
    write_history(&outcome.history, BufWriter::new(out)).user(format!("writing {}", history.display()))?;

    let (status, best) = match &outcome.result {
        SearchResult::Found { arch, .. } => (Status::Done, Some(*arch)),
        SearchResult::Exhausted { best_infeasible, .. } => (Status::Exhausted, *best_infeasible),
    };
    let best_metrics = best.and_then(|arch| {
        outcome.history.iter().find(|e| e.arch == arch).map(|e| BestMetrics {
            fused_layer_count: e.fused_layer_count,
            computation_count: e.computation_count,
        })
    });
    match &outcome.result {
        SearchResult::Found { arch, latency_ms, accuracy, .. } => {
            log::info!("best {arch:?}: accuracy {accuracy:.4}, latency {latency_ms:.3} ms")
        }
        SearchResult::Exhausted { .. } => log::warn!("no sampled architecture met the latency budget"),
    }
    let body = SearchBody {
        seed: cfg.seed,
        result: outcome.result.clone(),
        best_metrics,
        frozen_layers: file.space.layer_choices[outcome.layer_choice],
        episodes: outcome.history.len(),
        history: history.to_path_buf(),
    };
    emit(&Report::<_, ()>::new("search", &bytes, body, None), report)?;
    Ok(status)
}
