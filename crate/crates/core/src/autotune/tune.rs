use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ga::{ga_search, GaConfig};
use super::measure::{measure_interleaved, measure_latency, LatencyConfig, LatencyStats};
use super::TuneError;
use crate::codegen::{CompiledGraph, ScheduleVariant, UNROLL_FACTORS};
use crate::graph::{Bindings, NodeId};

pub const WORKER_CHOICES: [usize; 4] = [1, 2, 4, 8];

/// Leading GA candidates re-measured side by side before one is installed.
pub const CONFIRM_CANDIDATES: usize = 4;

/// Genes per block: base schedule, unroll factor, worker count.
const GENES: [usize; 3] = [2, UNROLL_FACTORS.len(), WORKER_CHOICES.len()];

/// Worker counts the host can run in parallel, always including 1.
pub fn worker_choices() -> &'static [usize] {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let n = WORKER_CHOICES.iter().filter(|&&w| w <= cores).count().max(1);
    &WORKER_CHOICES[..n]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningReport {
    /// Best median latency (ms) after each generation.
    pub history: Vec<f64>,
    pub assignment: BTreeMap<NodeId, ScheduleVariant>,
    pub stats: LatencyStats,
    pub evaluations: usize,
}

/// Maps a chromosome with three genes per block onto schedule variants.
pub fn decode_assignment(blocks: &[NodeId], chromosome: &[usize]) -> BTreeMap<NodeId, ScheduleVariant> {
    blocks
        .iter()
        .zip(chromosome.chunks_exact(GENES.len()))
        .map(|(&id, genes)| {
            let v = ScheduleVariant::base_variants()[genes[0]]
                .with_unroll(UNROLL_FACTORS[genes[1]])
                .with_workers(WORKER_CHOICES[genes[2]]);
            (id, v)
        })
        .collect()
}

fn apply(compiled: &mut CompiledGraph, assignment: &BTreeMap<NodeId, ScheduleVariant>) -> Result<(), TuneError> {
    for (&id, &v) in assignment {
        compiled.set_variant(id, v)?;
    }
    Ok(())
}

/// Searches per-block schedules by measured median latency and leaves the
/// best assignment installed in `compiled`. The leading GA candidates are
/// re-measured round-robin and the fastest of them is kept, so a single
/// lucky measurement cannot decide the result. Worker counts beyond the
/// host's parallelism are not searched. A graph without lowered blocks is
/// only measured.
pub fn tune_graph(
    compiled: &mut CompiledGraph,
    bindings: &Bindings,
    ga: &GaConfig,
    latency: &LatencyConfig,
) -> Result<TuningReport, TuneError> {
    let blocks = compiled.blocks();
    let run = |c: &CompiledGraph| measure_latency(latency, || c.execute(bindings).map(drop));
    if blocks.is_empty() {
        let stats = run(compiled)?;
        return Ok(TuningReport {
            history: vec![stats.median_ms],
            assignment: BTreeMap::new(),
            stats,
            evaluations: 1,
        });
    }

    let genes = [GENES[0], GENES[1], worker_choices().len()];
    let space: Vec<usize> = blocks.iter().flat_map(|_| genes).collect();
    let mut failure = None;
    let result = ga_search(&space, ga, |chromosome| {
        let assignment = decode_assignment(&blocks, chromosome);
        let measured = apply(compiled, &assignment).and_then(|()| run(compiled));
        match measured {
            Ok(stats) => {
                log::debug!("tune: {chromosome:?} -> {:.4} ms", stats.median_ms);
                stats.median_ms
            }
            Err(e) => {
                failure.get_or_insert(e);
                f64::INFINITY
            }
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    let finalists: Vec<BTreeMap<NodeId, ScheduleVariant>> = result
        .ranked
        .iter()
        .take(CONFIRM_CANDIDATES)
        .map(|(c, _)| decode_assignment(&blocks, c))
        .collect();
    let mut graphs = Vec::with_capacity(finalists.len());
    for assignment in &finalists {
        let mut c = compiled.clone();
        apply(&mut c, assignment)?;
        graphs.push(c);
    }
    let mut runners: Vec<_> = graphs
        .iter()
        .map(|c| move || c.execute(bindings).map(drop))
        .collect();
    let mut fs: Vec<&mut dyn FnMut() -> Result<(), crate::codegen::CodegenError>> = runners
        .iter_mut()
        .map(|r| r as &mut dyn FnMut() -> Result<(), crate::codegen::CodegenError>)
        .collect();
    let confirmed = measure_interleaved(latency, &mut fs)?;
    let (k, stats) = confirmed
        .into_iter()
        .enumerate()
        .min_by(|a, b| a.1.median_ms.total_cmp(&b.1.median_ms).then(a.0.cmp(&b.0)))
        .expect("at least one finalist");
    let assignment = finalists[k].clone();
    apply(compiled, &assignment)?;
    log::info!(
        "tune: {} evaluations, finalist {k} of {} at {:.4} ms",
        result.evaluations,
        finalists.len(),
        stats.median_ms
    );
    Ok(TuningReport {
        history: result.history,
        assignment,
        stats,
        evaluations: result.evaluations,
    })
}
