use std::process::Command;

use serde::{Deserialize, Serialize};

use super::NasError;
use crate::graph::ArchSample;

/// Scores an architecture with an accuracy in `[0, 1]`.
pub trait Trainer {
    fn evaluate(&mut self, arch: &ArchSample) -> Result<f64, NasError>;
}

impl<T: Trainer + ?Sized> Trainer for &mut T {
    fn evaluate(&mut self, arch: &ArchSample) -> Result<f64, NasError> {
        (**self).evaluate(arch)
    }
}

pub const SURROGATE_MAX_ACCURACY: f64 = 0.87;
pub const SURROGATE_SCALE: f64 = 221.184;

/// `0.87 - 221.184 / sqrt(p)` clamped to `[0, 1]`, where `p` is the
/// encoder weight count. A 12-layer, 768-wide, 3072-FFN encoder maps to
/// 0.846.
pub fn surrogate_accuracy(arch: &ArchSample) -> f64 {
    let p = arch.param_count() as f64;
    if p <= 0.0 {
        return 0.0;
    }
    (SURROGATE_MAX_ACCURACY - SURROGATE_SCALE / p.sqrt()).clamp(0.0, 1.0)
}

/// Closed-form accuracy from the parameter count.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurrogateTrainer;

impl Trainer for SurrogateTrainer {
    fn evaluate(&mut self, arch: &ArchSample) -> Result<f64, NasError> {
        Ok(surrogate_accuracy(arch))
    }
}

/// Accuracy that peaks at `target` and falls linearly with the summed
/// relative distance of layers, hidden size and FFN size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakedTrainer {
    pub target: ArchSample,
    pub peak: f64,
    pub slope: f64,
}

impl PeakedTrainer {
    pub fn distance(&self, arch: &ArchSample) -> f64 {
        let rel = |a: usize, t: usize| (a as f64 - t as f64).abs() / t as f64;
        rel(arch.num_layers, self.target.num_layers)
            + rel(arch.hidden_size, self.target.hidden_size)
            + rel(arch.ffn_size, self.target.ffn_size)
    }
}

impl Trainer for PeakedTrainer {
    fn evaluate(&mut self, arch: &ArchSample) -> Result<f64, NasError> {
        Ok((self.peak - self.slope * self.distance(arch)).clamp(0.0, 1.0))
    }
}

/// Runs a command built from `template`, substituting `{layers}`,
/// `{hidden}`, `{ffn}` and `{heads}`, and parses a single real number from
/// its standard output. The template is split on whitespace; no shell is
/// involved.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalCommandTrainer {
    pub template: String,
}

impl ExternalCommandTrainer {
    pub fn new(template: impl Into<String>) -> Self {
        Self {
            template: template.into(),
        }
    }

    pub fn argv(&self, arch: &ArchSample) -> Vec<String> {
        self.template
            .split_whitespace()
            .map(|part| {
                part.replace("{layers}", &arch.num_layers.to_string())
                    .replace("{hidden}", &arch.hidden_size.to_string())
                    .replace("{ffn}", &arch.ffn_size.to_string())
                    .replace("{heads}", &arch.num_heads.to_string())
            })
            .collect()
    }
}

impl Trainer for ExternalCommandTrainer {
    fn evaluate(&mut self, arch: &ArchSample) -> Result<f64, NasError> {
        let argv = self.argv(arch);
        let (program, args) = argv
            .split_first()
            .ok_or_else(|| NasError::Trainer("empty command template".into()))?;
        let output = Command::new(program)
            .args(args)
            .output()
            .map_err(|e| NasError::Trainer(format!("{program}: {e}")))?;
        if !output.status.success() {
            return Err(NasError::Trainer(format!("{program} exited with {}", output.status)));
        }
        let text = String::from_utf8_lossy(&output.stdout);
        let value: f64 = text
            .trim()
            .parse()
            .map_err(|_| NasError::Trainer(format!("{program} printed {:?}, expected a number", text.trim())))?;
        if !(0.0..=1.0).contains(&value) {
            return Err(NasError::Trainer(format!("accuracy {value} outside [0, 1]")));
        }
        Ok(value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch(l: usize, h: usize, f: usize) -> ArchSample {
        ArchSample {
            num_layers: l,
            hidden_size: h,
            ffn_size: f,
            num_heads: 1,
        }
    }

    #[test]
    fn surrogate_calibration() {
        let a = surrogate_accuracy(&arch(12, 768, 3072));
        assert!((a - 0.846).abs() < 1e-12, "{a}");
        assert_eq!(surrogate_accuracy(&arch(1, 1, 1)), 0.0);
    }

    #[test]
    fn surrogate_monotone_in_layers() {
        let acc = |l| surrogate_accuracy(&arch(l, 256, 1024));
        assert!(acc(12) >= acc(6) && acc(6) >= acc(2));
    }

    #[test]
    fn peaked_maximum_at_target() {
        let mut t = PeakedTrainer {
            target: arch(6, 384, 1536),
            peak: 0.9,
            slope: 0.5,
        };
        let best = t.evaluate(&arch(6, 384, 1536)).unwrap();
        assert_eq!(best, 0.9);
        assert!(t.evaluate(&arch(4, 384, 1536)).unwrap() < best);
    }

    #[test]
    fn external_command_substitution() {
        let t = ExternalCommandTrainer::new("echo {layers} {hidden}-{ffn} {heads}");
        assert_eq!(t.argv(&arch(2, 128, 512)), ["echo", "2", "128-512", "1"]);
    }

    #[cfg(unix)]
    #[test]
    fn external_command_runs() {
        let mut t = ExternalCommandTrainer::new("echo 0.75");
        assert_eq!(t.evaluate(&arch(2, 128, 512)).unwrap(), 0.75);
        let mut bad = ExternalCommandTrainer::new("echo nope");
        assert!(bad.evaluate(&arch(2, 128, 512)).is_err());
        let mut out_of_range = ExternalCommandTrainer::new("echo 3");
        assert!(out_of_range.evaluate(&arch(2, 128, 512)).is_err());
    }
}
