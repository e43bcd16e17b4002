//! Bilateral price-negotiation environment.
//!
//! A buyer and a seller alternate turns over one product. Each turn carries
//! private reasoning, public dialogue and one structured action. The episode
//! ends on a deal, a quit, a buyer boundary violation or the turn limit, and
//! the buyer is scored by a verifiable surplus reward.

pub mod agents;
pub mod catalog;
pub mod engine;
pub mod grpo_lab;
pub mod metrics;
pub mod money;
pub mod protocol;
pub mod reward;

pub use agents::{Agent, AgentError, Persona, RemoteAgent, RemoteModelConfig, ScriptedAgent, ScriptedPolicy};
pub use catalog::{build_scenario, CatalogError, FieldMap, Product, Scenario, SplitSpec};
pub use engine::{run_episode, EngineConfig, EngineError, EpisodeLog, EpisodeRecord, Outcome, OutcomeKind};
pub use grpo_lab::{train, GroupBatch, ToyBuyerPolicy, TrainConfig, TrainReport};
pub use metrics::{aggregate, MetricsSummary, OutcomeRow};
pub use money::{Money, MoneyError};
pub use protocol::{ActionKind, Grammar, Offer, Role, TurnMessage};
pub use reward::{ScenarioClass, Terminal};
