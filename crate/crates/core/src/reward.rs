//! Terminal reward and scenario classification.
//!
//! A completed deal at price `P` earns `(B - P) / |B - C|`, clipped to
//! `[-1, 1]`. Deadlocks and quits earn exactly `0.0`; a buyer boundary
//! violation earns exactly `-1.0`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::money::Money;

pub const DEADLOCK_REWARD: f64 = 0.0;
pub const BOUNDARY_PENALTY: f64 = -1.0;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RewardError {
    #[error("budget and cost are both {0}; the reward is undefined")]
    EqualLimits(Money),
    #[error("final price {0} must be positive")]
    NonPositivePrice(Money),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioClass {
    /// Budget above cost: a mutually acceptable price exists.
    #[serde(rename = "MI")]
    MutualInterest,
    /// Budget below cost: walking away is the rational outcome.
    #[serde(rename = "CI")]
    ConflictOfInterest,
}

impl ScenarioClass {
    pub fn label(self) -> &'static str {
        match self {
            ScenarioClass::MutualInterest => "MI",
            ScenarioClass::ConflictOfInterest => "CI",
        }
    }
}

pub fn classify(budget: Money, cost: Money) -> Result<ScenarioClass, RewardError> {
    match budget.cmp(&cost) {
        std::cmp::Ordering::Greater => Ok(ScenarioClass::MutualInterest),
        std::cmp::Ordering::Less => Ok(ScenarioClass::ConflictOfInterest),
        std::cmp::Ordering::Equal => Err(RewardError::EqualLimits(budget)),
    }
}

pub fn surplus_reward(budget: Money, cost: Money, price_final: Money) -> Result<f64, RewardError> {
    if budget == cost {
        return Err(RewardError::EqualLimits(budget));
    }
    if !price_final.is_positive() {
        return Err(RewardError::NonPositivePrice(price_final));
    }
    let gap = (budget.as_f64() - cost.as_f64()).abs();
    let raw = (budget.as_f64() - price_final.as_f64()) / gap;
    Ok(raw.clamp(-1.0, 1.0))
}

/// How an episode ended, as far as the reward is concerned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Terminal {
    Deal { price_final: Money },
    Deadlock,
    Quit,
    BoundaryViolation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RewardInputs {
    pub budget: Money,
    pub cost: Money,
    pub terminal: Terminal,
}

pub fn terminal_reward(inputs: RewardInputs) -> Result<f64, RewardError> {
    if inputs.budget == inputs.cost {
        return Err(RewardError::EqualLimits(inputs.budget));
    }
    match inputs.terminal {
        Terminal::Deal { price_final } => surplus_reward(inputs.budget, inputs.cost, price_final),
        Terminal::Deadlock | Terminal::Quit => Ok(DEADLOCK_REWARD),
        Terminal::BoundaryViolation => Ok(BOUNDARY_PENALTY),
    }
}
