use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::TuneError;

/// Serializes timed regions process-wide.
static MEASURE_LOCK: Mutex<()> = Mutex::new(());

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencyConfig {
    pub runs: usize,
    pub warmup: usize,
}

impl Default for LatencyConfig {
    fn default() -> Self {
        Self {
            runs: 100,
            warmup: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub runs: usize,
    pub warmup: usize,
    pub samples_ms: Vec<f64>,
    pub median_ms: f64,
    pub p90_ms: f64,
}

impl LatencyStats {
    /// Median (mean of the middle pair for even counts) and nearest-rank
    /// 90th percentile.
    pub fn from_samples(samples_ms: Vec<f64>, warmup: usize) -> Self {
        let mut sorted = samples_ms.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median_ms = if n == 0 {
            f64::NAN
        } else if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        };
        let rank = ((0.9 * n as f64).ceil() as usize).clamp(1, n.max(1));
        let p90_ms = sorted.get(rank - 1).copied().unwrap_or(f64::NAN);
        Self {
            runs: n,
            warmup,
            samples_ms,
            median_ms,
            p90_ms,
        }
    }
}

/// Runs `f` `warmup` times untimed, then `runs` timed times, holding the
/// global measurement lock throughout.
pub fn measure_latency<E: std::fmt::Display>(
    cfg: &LatencyConfig,
    mut f: impl FnMut() -> Result<(), E>,
) -> Result<LatencyStats, TuneError> {
    if cfg.runs == 0 {
        return Err(TuneError::ZeroRuns);
    }
    let _guard = MEASURE_LOCK.lock().unwrap_or_else(|poisoned| poisoned.into_inner());
    let fail = |run: usize, e: E| TuneError::RunFailed {
        run,
        message: e.to_string(),
    };
    for run in 0..cfg.warmup {
        f().map_err(|e| fail(run, e))?;
    }
    let mut samples = Vec::with_capacity(cfg.runs);
    for run in 0..cfg.runs {
        let start = Instant::now();
        f().map_err(|e| fail(cfg.warmup + run, e))?;
        samples.push(start.elapsed().as_secs_f64() * 1e3);
    }
    Ok(LatencyStats::from_samples(samples, cfg.warmup))
}

/// Measures several executables round-robin: each warmup and timed round
/// runs every executable once, in order, so slow drift on the host affects
/// all of them alike. Returns one [`LatencyStats`] per executable.
pub fn measure_interleaved<E: std::fmt::Display>(
    cfg: &LatencyConfig,
    fs: &mut [&mut dyn FnMut() -> Result<(), E>],
) -> Result<Vec<LatencyStats>, TuneError> {
    if cfg.runs == 0 {
        return Err(TuneError::ZeroRuns);
    }
    let _guard = MEASURE_LOCK.lock().unwrap_or_else(|poisoned| poisoned.into_inner());
    let fail = |run: usize, e: E| TuneError::RunFailed {
        run,
        message: e.to_string(),
    };
    for run in 0..cfg.warmup {
        for f in fs.iter_mut() {
            f().map_err(|e| fail(run, e))?;
        }
    }
    let mut samples = vec![Vec::with_capacity(cfg.runs); fs.len()];
    for run in 0..cfg.runs {
        for (f, out) in fs.iter_mut().zip(samples.iter_mut()) {
            let start = Instant::now();
            f().map_err(|e| fail(cfg.warmup + run, e))?;
            out.push(start.elapsed().as_secs_f64() * 1e3);
        }
    }
    Ok(samples
        .into_iter()
        .map(|s| LatencyStats::from_samples(s, cfg.warmup))
        .collect())
}
