//! Weighted multi-factor suitability scores for candidate exploration agents.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ExplorationError;
use crate::ids::AgentId;

pub const AVAILABILITY: &str = "availability";
pub const PROXIMITY: &str = "proximity";
pub const UTILIZATION: &str = "utilization";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    /// Raw value.
    Identity,
    /// `x / max` over the candidate set.
    MaxNormalize,
    /// `(x - min) / (max - min)` over the candidate set.
    MinMax,
}

/// `f_j`: a scaling followed by an optional `1 - x`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Normalizer {
    pub scale: Scale,
    #[serde(default)]
    pub complement: bool,
}

impl Normalizer {
    pub const IDENTITY: Normalizer = Normalizer { scale: Scale::Identity, complement: false };
    pub const COMPLEMENT: Normalizer = Normalizer { scale: Scale::Identity, complement: true };

    fn apply(&self, x: f64, min: f64, max: f64) -> f64 {
        let v = match self.scale {
            Scale::Identity => x,
            Scale::MaxNormalize => {
                if max > 0.0 {
                    x / max
                } else {
                    0.0
                }
            }
            Scale::MinMax => {
                if max > min {
                    (x - min) / (max - min)
                } else {
                    0.0
                }
            }
        };
        if self.complement {
            1.0 - v
        } else {
            v
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub weights: BTreeMap<String, f64>,
    pub normalizers: BTreeMap<String, Normalizer>,
}

impl Default for ScoringConfig {
    /// Equal weights; proximity enters as the complement of its max-normalized
    /// hop count, availability and utilization unscaled.
    fn default() -> Self {
        let w = 1.0 / 3.0;
        Self {
            weights: BTreeMap::from([
                (AVAILABILITY.to_string(), w),
                (PROXIMITY.to_string(), w),
                (UTILIZATION.to_string(), w),
            ]),
            normalizers: BTreeMap::from([
                (AVAILABILITY.to_string(), Normalizer::IDENTITY),
                (
                    PROXIMITY.to_string(),
                    Normalizer { scale: Scale::MaxNormalize, complement: true },
                ),
                (UTILIZATION.to_string(), Normalizer::IDENTITY),
            ]),
        }
    }
}

impl ScoringConfig {
    pub fn check(&self) -> Result<(), ExplorationError> {
        if !self.weights.values().any(|w| *w > 0.0) || self.weights.values().any(|w| w.is_nan() || *w < 0.0) {
            return Err(ExplorationError::InvalidConfig("weights must be non-negative with one positive".into()));
        }
        if let Some(f) = self.weights.keys().find(|f| !self.normalizers.contains_key(*f)) {
            return Err(ExplorationError::InvalidConfig(format!("no normalizer for factor {f}")));
        }
        Ok(())
    }

    /// Scores reported by utilization as `1 - U` instead of `U`.
    pub fn with_utilization_complement(mut self) -> Self {
        if let Some(n) = self.normalizers.get_mut(UTILIZATION) {
            n.complement = !n.complement;
        }
        self
    }
}

pub type Factors = BTreeMap<String, f64>;

/// `S_i = sum_j w_j f_j(x_ij) / sum_j w_j`, ranked by descending score with
/// ties going to the smaller agent id. Scores are compared on a 1e-9 grid so
/// rescaling every weight by the same factor cannot reorder candidates
/// through rounding noise.
pub fn score_candidates(
    candidates: &[(AgentId, Factors)],
    config: &ScoringConfig,
) -> Result<Vec<(AgentId, f64)>, ExplorationError> {
    config.check()?;
    for (id, factors) in candidates {
        for f in config.weights.keys() {
            if !factors.contains_key(f) {
                return Err(ExplorationError::MissingFactor { agent: id.clone(), factor: f.clone() });
            }
        }
    }
    let mut ranges: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
    for f in config.weights.keys() {
        let values = candidates.iter().map(|(_, x)| x[f]);
        let min = values.clone().fold(f64::INFINITY, f64::min);
        let max = values.fold(f64::NEG_INFINITY, f64::max);
        ranges.insert(f, (min, max));
    }
    let total: f64 = config.weights.values().sum();
    let mut scored: Vec<(AgentId, f64)> = candidates
        .iter()
        .map(|(id, x)| {
            let s = config
                .weights
                .iter()
                .map(|(f, w)| {
                    let (min, max) = ranges[f.as_str()];
                    w * config.normalizers[f].apply(x[f], min, max)
                })
                .sum::<f64>();
            (id.clone(), s / total)
        })
        .collect();
    let key = |s: f64| (s * 1e9).round() as i64;
    scored.sort_by(|a, b| key(b.1).cmp(&key(a.1)).then_with(|| a.0.cmp(&b.0)));
    Ok(scored)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn factors(a: f64, p: f64, u: f64) -> Factors {
        BTreeMap::from([
            (AVAILABILITY.to_string(), a),
            (PROXIMITY.to_string(), p),
            (UTILIZATION.to_string(), u),
        ])
    }

    #[test]
    fn worked_pair() {
        let ranked = score_candidates(
            &[("R2".into(), factors(1.0, 6.0, 0.35)), ("R1".into(), factors(1.0, 2.0, 0.92))],
            &ScoringConfig::default(),
        )
        .unwrap();
        assert_eq!(ranked[0].0, AgentId::new("R1"));
        // (1 + (1 - 2/6) + 0.92) / 3 and (1 + 0 + 0.35) / 3
        assert!((ranked[0].1 - 0.862_222).abs() < 1e-5);
        assert!((ranked[1].1 - 0.45).abs() < 1e-12);
    }

    #[test]
    fn single_candidate_ranks_first() {
        let ranked = score_candidates(&[("R9".into(), factors(0.0, 0.0, 0.0))], &ScoringConfig::default()).unwrap();
        assert_eq!(ranked.len(), 1);
    }

    #[test]
    fn missing_factor() {
        let mut f = factors(1.0, 1.0, 1.0);
        f.remove(UTILIZATION);
        assert!(matches!(
            score_candidates(&[("R1".into(), f)], &ScoringConfig::default()),
            Err(ExplorationError::MissingFactor { .. })
        ));
    }

    #[test]
    fn ties_break_by_id() {
        let ranked = score_candidates(
            &[("B".into(), factors(1.0, 2.0, 0.5)), ("A".into(), factors(1.0, 2.0, 0.5))],
            &ScoringConfig::default(),
        )
        .unwrap();
        assert_eq!(ranked[0].0, AgentId::new("A"));
    }

    #[test]
    fn complement_flag_flips_utilization() {
        let cfg = ScoringConfig::default().with_utilization_complement();
        let ranked = score_candidates(
            &[("R1".into(), factors(1.0, 2.0, 0.9)), ("R2".into(), factors(1.0, 2.0, 0.1))],
            &cfg,
        )
        .unwrap();
        assert_eq!(ranked[0].0, AgentId::new("R2"));
    }
}
