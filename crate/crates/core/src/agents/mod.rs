//! Turn-producing agents.
//!
//! Every agent implements [`Agent`]: given the public history and its own
//! private view of the scenario it returns raw reply text, which the engine
//! parses. Agents never see the opponent's reasoning; the engine only hands
//! them [`PublicTurn`]s.

mod prompts;
mod remote;
mod scripted;

pub use prompts::{assemble_buyer_prompt, assemble_seller_prompt, Persona, Prompt, DEFAULT_DESCRIPTION_CHARS};
pub use remote::{
    build_messages, remote_next_turn, ChatMessage, RemoteAgent, RemoteModelConfig, ENV_API_KEY, ENV_ENDPOINT, ENV_MODEL,
};
pub use scripted::{AcceptRule, ScriptedAgent, ScriptedPolicy};

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::Scenario;
use crate::money::Money;
use crate::protocol::{ActionKind, Grammar, Role};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgentError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint answered with status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("unusable response: {0}")]
    BadResponse(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("no scripted reply left for turn {0}")]
    Exhausted(usize),
}

/// One turn as the other side sees it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicTurn {
    pub role: Role,
    pub text: String,
    pub action: ActionKind,
}

/// What one side privately knows about the scenario.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoleView {
    pub role: Role,
    pub codename: String,
    pub list_price: Money,
    pub quantity: u32,
    pub max_turns: u32,
    /// Budget for the buyer, cost for the seller.
    pub limit: Money,
}

impl RoleView {
    pub fn for_role(scenario: &Scenario, role: Role) -> RoleView {
        RoleView {
            role,
            codename: scenario.codename().to_string(),
            list_price: scenario.list_price(),
            quantity: scenario.quantity(),
            max_turns: scenario.max_turns(),
            limit: match role {
                Role::Buyer => scenario.budget(),
                Role::Seller => scenario.cost(),
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct TurnRequest<'a> {
    pub view: &'a RoleView,
    pub prompt: &'a Prompt,
    pub visible_history: &'a [PublicTurn],
    /// Zero-based negotiation round.
    pub round: u32,
    /// Zero-based resample attempt within this turn.
    pub attempt: u32,
    pub episode_seed: u64,
    pub rng_seed: u64,
}

pub trait Agent: Send + Sync {
    fn next_turn(&self, request: &TurnRequest<'_>) -> Result<String, AgentError>;

    /// Grammar this agent writes and expects to read.
    fn grammar(&self) -> Grammar {
        Grammar::Labeled
    }
}

impl<T: Agent + ?Sized> Agent for &T {
    fn next_turn(&self, request: &TurnRequest<'_>) -> Result<String, AgentError> {
        (**self).next_turn(request)
    }
    fn grammar(&self) -> Grammar {
        (**self).grammar()
    }
}

impl<T: Agent + ?Sized> Agent for Box<T> {
    fn next_turn(&self, request: &TurnRequest<'_>) -> Result<String, AgentError> {
        (**self).next_turn(request)
    }
    fn grammar(&self) -> Grammar {
        (**self).grammar()
    }
}

/// Plays back a fixed list of raw replies, one per call.
#[derive(Debug)]
pub struct ReplayAgent {
    replies: Vec<String>,
    cursor: AtomicUsize,
    grammar: Grammar,
}

impl ReplayAgent {
    pub fn new(replies: Vec<String>, grammar: Grammar) -> Self {
        Self { replies, cursor: AtomicUsize::new(0), grammar }
    }

    pub fn consumed(&self) -> usize {
        self.cursor.load(Ordering::SeqCst)
    }

    pub fn remaining(&self) -> usize {
        self.replies.len().saturating_sub(self.consumed())
    }
}

impl Agent for ReplayAgent {
    fn next_turn(&self, _request: &TurnRequest<'_>) -> Result<String, AgentError> {
        let i = self.cursor.fetch_add(1, Ordering::SeqCst);
        self.replies.get(i).cloned().ok_or(AgentError::Exhausted(i))
    }

    fn grammar(&self) -> Grammar {
        self.grammar
    }
}
