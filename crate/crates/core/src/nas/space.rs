use serde::{Deserialize, Serialize};

use super::NasError;
use crate::graph::ArchSample;

/// Candidate values for each decision, the latency budget `rL` and the
/// sequence length used to build and measure graphs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub layer_choices: Vec<usize>,
    pub hidden_choices: Vec<usize>,
    pub ffn_choices: Vec<usize>,
    pub latency_budget_ms: f64,
    pub seq_len: usize,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            layer_choices: (2..=12).collect(),
            hidden_choices: vec![128, 192, 256, 384, 512, 768],
            ffn_choices: vec![256, 512, 1024, 2048, 3072],
            latency_budget_ms: 50.0,
            seq_len: 128,
        }
    }
}

/// `hidden / 64` heads when that divides evenly, otherwise one head.
pub fn default_heads(hidden: usize) -> usize {
    if hidden >= 64 && hidden.is_multiple_of(64) {
        hidden / 64
    } else {
        1
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<(), NasError> {
        let lists = [&self.layer_choices, &self.hidden_choices, &self.ffn_choices];
        if lists.iter().any(|l| l.is_empty()) {
            return Err(NasError::Space("every choice list must be non-empty".into()));
        }
        if lists.iter().any(|l| l.contains(&0)) {
            return Err(NasError::Space("choices must be positive".into()));
        }
        if !(self.latency_budget_ms.is_finite() && self.latency_budget_ms > 0.0) {
            return Err(NasError::Space("latency budget must be positive".into()));
        }
        if self.seq_len == 0 {
            return Err(NasError::Space("seq_len must be positive".into()));
        }
        Ok(())
    }

    /// Choice counts in decision order: layers, hidden, ffn.
    pub fn choice_counts(&self) -> Vec<usize> {
        vec![
            self.layer_choices.len(),
            self.hidden_choices.len(),
            self.ffn_choices.len(),
        ]
    }

    /// Lower middle index of a list of length `n`.
    pub fn midpoint(n: usize) -> usize {
        n.saturating_sub(1) / 2
    }

    pub fn arch(&self, actions: &[usize]) -> ArchSample {
        let hidden = self.hidden_choices[actions[1]];
        ArchSample {
            num_layers: self.layer_choices[actions[0]],
            hidden_size: hidden,
            ffn_size: self.ffn_choices[actions[2]],
            num_heads: default_heads(hidden),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heads_and_midpoints() {
        assert_eq!(default_heads(768), 12);
        assert_eq!(default_heads(192), 3);
        assert_eq!(default_heads(100), 1);
        assert_eq!(SearchSpace::midpoint(6), 2);
        assert_eq!(SearchSpace::midpoint(5), 2);
        assert_eq!(SearchSpace::midpoint(1), 0);
    }

    #[test]
    fn validation() {
        assert!(SearchSpace::default().validate().is_ok());
        let s = SearchSpace { latency_budget_ms: 0.0, ..SearchSpace::default() };
        assert!(s.validate().is_err());
        let mut s = SearchSpace::default();
        s.ffn_choices.clear();
        assert!(s.validate().is_err());
    }

    #[test]
    fn arch_decoding() {
        let s = SearchSpace::default();
        let a = s.arch(&[10, 5, 4]);
        assert_eq!((a.num_layers, a.hidden_size, a.ffn_size, a.num_heads), (12, 768, 3072, 12));
    }
}
