//! Group-relative policy gradient for a small categorical buyer.
//!
//! Each iteration draws `batch_size` scenarios, plays `group_size` rollouts
//! of each against a scripted seller, normalizes rewards within each group
//! and moves the policy along the advantage-weighted score function. There
//! is no KL term and no reference policy.

mod advantage;
mod policy;

pub use advantage::{group_advantages, AdvantageScope, DEFAULT_EPSILON};
pub use policy::{softmax, Adam, Decision, Plan, PlanUsage, ToyBuyerAgent, ToyBuyerPolicy, ANCHOR_BINS, STEP_BINS};

use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{ScriptedAgent, ScriptedPolicy};
use crate::catalog::Scenario;
use crate::engine::{mix_seed, run_episode, EngineConfig, EngineError, EpisodeRecord};
use crate::metrics::{aggregate, export_curves, MetricsError, MetricsSummary, OutcomeRow};

#[derive(Debug, Error)]
pub enum GrpoError {
    #[error("advantages need at least one reward")]
    EmptyGroup,
    #[error("no batches to learn from")]
    EmptyBatches,
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("policy table line {line}: {message}")]
    Table { line: usize, message: String },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    #[default]
    Adam,
}

impl std::str::FromStr for Optimizer {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::Adam),
            other => Err(format!("unknown optimizer {other:?} (expected sgd or adam)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub group_size: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub max_turns: u32,
    pub advantage_scope: AdvantageScope,
    pub optimizer: Optimizer,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            group_size: 8,
            iterations: 60,
            learning_rate: 3e-5,
            seed: 0,
            max_turns: 6,
            advantage_scope: AdvantageScope::Group,
            optimizer: Optimizer::Adam,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), GrpoError> {
        if self.batch_size == 0 || self.group_size == 0 || self.max_turns == 0 {
            return Err(GrpoError::Config("batch_size, group_size and max_turns must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(GrpoError::Config(format!("learning_rate must be >= 0, got {}", self.learning_rate)));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(GrpoError::Config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// `G` sibling rollouts of one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupBatch {
    pub scenario: Scenario,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    pub trajectories: Vec<EpisodeRecord>,
    pub plans: Vec<Plan>,
    pub usage: Vec<PlanUsage>,
}

pub fn rollout_group(
    policy: &ToyBuyerPolicy,
    seller: &ScriptedPolicy,
    scenario: &Scenario,
    group_size: usize,
    seed: u64,
    epsilon: f64,
) -> Result<GroupBatch, GrpoError> {
    if group_size == 0 {
        return Err(GrpoError::Config("group_size must be at least 1".into()));
    }
    let seller = ScriptedAgent::new(seller.clone());
    let config = EngineConfig::default();
    let mut batch = GroupBatch {
        scenario: scenario.clone(),
        rewards: Vec::with_capacity(group_size),
        advantages: Vec::new(),
        trajectories: Vec::with_capacity(group_size),
        plans: Vec::with_capacity(group_size),
        usage: Vec::with_capacity(group_size),
    };
    for i in 0..group_size {
        let episode_seed = mix_seed(seed, i as u64);
        let plan = policy.sample(&mut ChaCha8Rng::seed_from_u64(episode_seed));
        let buyer = ToyBuyerAgent::new(plan);
        let record = run_episode(&buyer, &seller, scenario, &config, episode_seed)?;
        batch.rewards.push(record.reward);
        batch.trajectories.push(record);
        batch.usage.push(buyer.usage());
        batch.plans.push(buyer.plan().clone());
    }
    batch.advantages = group_advantages(&batch.rewards, epsilon)?;
    Ok(batch)
}

/// Mean advantage-weighted score over every trajectory in `batches`.
pub fn policy_gradient(policy: &ToyBuyerPolicy, batches: &[GroupBatch]) -> Result<Vec<f64>, GrpoError> {
    let total: usize = batches.iter().map(|b| b.plans.len()).sum();
    if total == 0 {
        return Err(GrpoError::EmptyBatches);
    }
    let mut grad = vec![0.0; policy.len()];
    for b in batches {
        for ((plan, usage), a) in b.plans.iter().zip(&b.usage).zip(&b.advantages) {
            if *a != 0.0 {
                policy.accumulate_score(plan, usage, *a, &mut grad);
            }
        }
    }
    for g in &mut grad {
        *g /= total as f64;
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(GrpoError::NonFinite("gradient"));
    }
    Ok(grad)
}

/// One plain gradient-ascent step. All-zero advantages leave the policy
/// bit-identical.
pub fn policy_update(
    policy: &ToyBuyerPolicy,
    batches: &[GroupBatch],
    learning_rate: f64,
) -> Result<ToyBuyerPolicy, GrpoError> {
    let grad = policy_gradient(policy, batches)?;
    if learning_rate == 0.0 || grad.iter().all(|g| *g == 0.0) {
        return Ok(policy.clone());
    }
    let mut params = policy.params();
    for (p, g) in params.iter_mut().zip(&grad) {
        *p += learning_rate * g;
    }
    let mut next = policy.clone();
    next.set_params(&params);
    Ok(next)
}

fn renormalize_batch(batches: &mut [GroupBatch], epsilon: f64) -> Result<(), GrpoError> {
    let all: Vec<f64> = batches.iter().flat_map(|b| b.rewards.iter().copied()).collect();
    let advantages = group_advantages(&all, epsilon)?;
    let mut it = advantages.into_iter();
    for b in batches {
        b.advantages = it.by_ref().take(b.rewards.len()).collect();
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// One summary per iteration, computed before that iteration's update.
    pub summaries: Vec<MetricsSummary>,
    pub policy: ToyBuyerPolicy,
}

/// Runs `config.iterations` rollout/update cycles from the initial policy.
pub fn train(config: &TrainConfig, scenarios: &[Scenario], seller: &ScriptedPolicy) -> Result<TrainReport, GrpoError> {
    train_from(ToyBuyerPolicy::initial(config.max_turns), config, scenarios, seller)
}

pub fn train_from(
    mut policy: ToyBuyerPolicy,
    config: &TrainConfig,
    scenarios: &[Scenario],
    seller: &ScriptedPolicy,
) -> Result<TrainReport, GrpoError> {
    config.validate()?;
    seller.validate().map_err(GrpoError::Config)?;
    if scenarios.is_empty() {
        return Err(GrpoError::Config("no training scenarios".into()));
    }
    let scenarios: Vec<Scenario> = scenarios
        .iter()
        .map(|s| s.with_max_turns(config.max_turns))
        .collect::<Result<_, _>>()
        .map_err(|e| GrpoError::Config(e.to_string()))?;
    let mut adam = Adam::new(policy.len());
    let mut summaries = Vec::with_capacity(config.iterations);

    for iteration in 0..config.iterations {
        let iteration_seed = mix_seed(config.seed, iteration as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(iteration_seed);
        let picks: Vec<usize> = if config.batch_size <= scenarios.len() {
            sample(&mut rng, scenarios.len(), config.batch_size).into_vec()
        } else {
            (0..config.batch_size).map(|i| i % scenarios.len()).collect()
        };
        let mut batches = picks
            .par_iter()
            .enumerate()
            .map(|(j, &k)| {
                rollout_group(
                    &policy,
                    seller,
                    &scenarios[k],
                    config.group_size,
                    mix_seed(iteration_seed, j as u64 + 1),
                    config.epsilon,
                )
            })
            .collect::<Result<Vec<_>, _>>()?;
        if config.advantage_scope == AdvantageScope::Batch {
            renormalize_batch(&mut batches, config.epsilon)?;
        }

        let rows: Vec<OutcomeRow> =
            batches.iter().flat_map(|b| b.trajectories.iter().map(OutcomeRow::from_record)).collect();
        summaries.push(aggregate(&rows)?);

        match config.optimizer {
            Optimizer::Sgd => policy = policy_update(&policy, &batches, config.learning_rate)?,
            Optimizer::Adam => {
                let grad = policy_gradient(&policy, &batches)?;
                let mut params = policy.params();
                adam.step(&mut params, &grad, config.learning_rate);
                if params.iter().any(|p| !p.is_finite()) {
                    return Err(GrpoError::NonFinite("policy parameter"));
                }
                policy.set_params(&params);
            }
        }
    }
    Ok(TrainReport { summaries, policy })
}

pub const CONFIG_SNAPSHOT: &str = "config.snapshot";
pub const CURVES_FILE: &str = "curves.csv";
pub const POLICY_FILE: &str = "policy.txt";
pub const SEED_FILE: &str = "seed.txt";

/// Writes the config snapshot, curves, final policy table and seed record.
pub fn write_run_dir<S: Serialize>(dir: &Path, snapshot: &S, seed: u64, report: &TrainReport) -> Result<(), GrpoError> {
    fs::create_dir_all(dir)?;
    let snapshot = serde_json::to_string_pretty(snapshot).map_err(|e| GrpoError::Config(e.to_string()))?;
    fs::write(dir.join(CONFIG_SNAPSHOT), snapshot + "\n")?;
    fs::write(dir.join(CURVES_FILE), export_curves(&report.summaries, true)?)?;
    fs::write(dir.join(POLICY_FILE), report.policy.to_table())?;
    fs::write(dir.join(SEED_FILE), format!("seed {seed}\n"))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::synth_scenarios;
    use crate::money::Money;

    fn scenarios(n: usize) -> Vec<Scenario> {
        synth_scenarios(11, n, (Money::from_dollars(20), Money::from_dollars(200)), 0.0).unwrap()
    }

    #[test]
    fn group_rollouts() {
        let s = &scenarios(1)[0];
        let p = ToyBuyerPolicy::initial(6);
        let b = rollout_group(&p, &ScriptedPolicy::seller(), s, 8, 4, DEFAULT_EPSILON).unwrap();
        assert_eq!(b.trajectories.len(), 8);
        assert_eq!(b.advantages.len(), 8);
        assert_eq!(b, rollout_group(&p, &ScriptedPolicy::seller(), s, 8, 4, DEFAULT_EPSILON).unwrap());
        let single = rollout_group(&p, &ScriptedPolicy::seller(), s, 1, 4, DEFAULT_EPSILON).unwrap();
        assert_eq!(single.advantages, vec![0.0]);
    }

    #[test]
    fn zero_advantages_and_zero_rate_are_fixed_points() {
        let s = &scenarios(1)[0];
        let p = ToyBuyerPolicy::initial(6);
        let mut b = rollout_group(&p, &ScriptedPolicy::seller(), s, 8, 4, DEFAULT_EPSILON).unwrap();
        assert_eq!(policy_update(&p, std::slice::from_ref(&b), 0.0).unwrap(), p);
        b.advantages = vec![0.0; 8];
        assert_eq!(policy_update(&p, &[b], 1.0).unwrap(), p);
        assert!(policy_update(&p, &[], 1.0).is_err());
    }

    #[test]
    fn positive_advantage_raises_the_chosen_anchor() {
        let s = &scenarios(1)[0];
        let p = ToyBuyerPolicy::initial(6);
        let mut b = rollout_group(&p, &ScriptedPolicy::seller(), s, 1, 9, DEFAULT_EPSILON).unwrap();
        b.advantages = vec![1.0];
        b.usage[0].anchor = true;
        let k = b.plans[0].anchor;
        let q = policy_update(&p, &[b], 0.5).unwrap();
        assert!(q.anchor_probs()[k] > p.anchor_probs()[k]);
    }

    #[test]
    fn train_counts_episodes() {
        let config =
            TrainConfig { batch_size: 2, group_size: 2, iterations: 1, learning_rate: 0.1, ..TrainConfig::default() };
        let report = train(&config, &scenarios(5), &ScriptedPolicy::seller()).unwrap();
        assert_eq!(report.summaries.len(), 1);
        assert_eq!(report.summaries[0].all.reward.count, 4);
        let none =
            train(&TrainConfig { iterations: 0, ..config.clone() }, &scenarios(5), &ScriptedPolicy::seller()).unwrap();
        assert!(none.summaries.is_empty());
        assert!(train(&config, &[], &ScriptedPolicy::seller()).is_err());
    }

    #[test]
    fn training_is_deterministic_and_batch_scope_works() {
        let config =
            TrainConfig { batch_size: 4, group_size: 4, iterations: 3, learning_rate: 0.2, ..TrainConfig::default() };
        let a = train(&config, &scenarios(10), &ScriptedPolicy::seller()).unwrap();
        let b = train(&config, &scenarios(10), &ScriptedPolicy::seller()).unwrap();
        assert_eq!(a, b);
        let batch = TrainConfig { advantage_scope: AdvantageScope::Batch, optimizer: Optimizer::Sgd, ..config };
        let c = train(&batch, &scenarios(10), &ScriptedPolicy::seller()).unwrap();
        assert_eq!(c.summaries.len(), 3);
    }

    #[test]
    fn run_directory_contents() {
        let dir = tempfile::tempdir().unwrap();
        let config =
            TrainConfig { batch_size: 2, group_size: 2, iterations: 2, learning_rate: 0.1, ..TrainConfig::default() };
        let report = train(&config, &scenarios(4), &ScriptedPolicy::seller()).unwrap();
        write_run_dir(dir.path(), &config, config.seed, &report).unwrap();
        let curves = fs::read_to_string(dir.path().join(CURVES_FILE)).unwrap();
        assert_eq!(curves.lines().count(), 3);
        let table = fs::read_to_string(dir.path().join(POLICY_FILE)).unwrap();
        assert_eq!(ToyBuyerPolicy::from_table(&table).unwrap(), report.policy);
        let snap: TrainConfig =
            serde_json::from_str(&fs::read_to_string(dir.path().join(CONFIG_SNAPSHOT)).unwrap()).unwrap();
        assert_eq!(snap, config);
        assert!(fs::read_to_string(dir.path().join(SEED_FILE)).unwrap().contains("seed 0"));
    }
}
