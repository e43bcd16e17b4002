use serde::{Deserialize, Serialize};

use super::GrpoError;

pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Which rewards an advantage is normalized against.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdvantageScope {
    /// Sibling rollouts of the same scenario.
    #[default]
    Group,
    /// Every rollout of the iteration.
    Batch,
}

impl std::str::FromStr for AdvantageScope {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "group" => Ok(AdvantageScope::Group),
            "batch" => Ok(AdvantageScope::Batch),
            other => Err(format!("unknown advantage scope {other:?} (expected group or batch)")),
        }
    }
}

/// `A_i = (R_i - mean) / (sd + epsilon)` with the population sd.
pub fn group_advantages(rewards: &[f64], epsilon: f64) -> Result<Vec<f64>, GrpoError> {
    if rewards.is_empty() {
        return Err(GrpoError::EmptyGroup);
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(GrpoError::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    if rewards.iter().any(|r| !r.is_finite()) {
        return Err(GrpoError::NonFinite("reward"));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    if rewards.iter().all(|&r| r == rewards[0]) {
        return Ok(vec![0.0; rewards.len()]);
    }
    let sd = (rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n).sqrt();
    Ok(rewards.iter().map(|r| (r - mean) / (sd + epsilon)).collect())
}
