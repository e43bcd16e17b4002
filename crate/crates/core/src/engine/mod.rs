//! The negotiation loop.
//!
//! Buyer and seller alternate, buyer first. A round is complete once the
//! seller has answered; a terminal buyer action ends the episode at once.
//! Seller turns pass through regulation (resampled when malformed or priced
//! below cost, then replaced by a canonical `REJECT`). Buyer format, sequence
//! and over-budget violations end the episode with the boundary penalty.

mod log;
mod replay;

pub use log::{read_log, write_log, EpisodeLog, LoggedInterception, LoggedTurn, LoggedViolation};
pub use replay::{parse_transcript, replay_log, replay_transcript, ReplayError, TextTranscript};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    assemble_buyer_prompt, assemble_seller_prompt, Agent, AgentError, Persona, Prompt, PublicTurn, RoleView,
    TurnRequest, DEFAULT_DESCRIPTION_CHARS,
};
use crate::catalog::Scenario;
use crate::money::Money;
use crate::protocol::{
    parse_turn, render_public, validate_item, validate_sequence, ActionKind, FormatViolation, Grammar, Role,
    TurnMessage,
};
use crate::reward::{classify, terminal_reward, RewardError, RewardInputs, ScenarioClass, Terminal};

/// Dialogue of the turn substituted when every seller attempt is intercepted.
pub const REFUSAL_DIALOGUE: &str = "I can't accept that.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub seller_max_attempts: u32,
    /// Resample malformed buyer turns instead of penalizing them. Off for
    /// training; useful for fair zero-shot evaluation.
    pub resample_buyer: bool,
    pub buyer_max_attempts: u32,
    pub persona: Persona,
    pub description_chars: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            seller_max_attempts: 3,
            resample_buyer: false,
            buyer_max_attempts: 3,
            persona: Persona::Default,
            description_chars: DEFAULT_DESCRIPTION_CHARS,
        }
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("engine misuse: {0}")]
    Usage(String),
    /// Infrastructure failure; the episode is not scored.
    #[error("{role} agent failed: {source}")]
    Agent {
        role: Role,
        #[source]
        source: AgentError,
    },
    #[error(transparent)]
    Reward(#[from] RewardError),
}

impl EngineError {
    pub fn is_infrastructure(&self) -> bool {
        matches!(self, EngineError::Agent { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryReason {
    Format,
    OverBudget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutcomeKind {
    Deal { price_final: Money },
    DeadlockTurnLimit,
    Quit { by: Role },
    BuyerBoundaryViolation { reason: BoundaryReason },
}

impl OutcomeKind {
    pub fn label(&self) -> &'static str {
        match self {
            OutcomeKind::Deal { .. } => "deal",
            OutcomeKind::DeadlockTurnLimit => "deadlock_turn_limit",
            OutcomeKind::Quit { .. } => "quit",
            OutcomeKind::BuyerBoundaryViolation { .. } => "buyer_boundary_violation",
        }
    }

    pub fn price_final(&self) -> Option<Money> {
        match self {
            OutcomeKind::Deal { price_final } => Some(*price_final),
            _ => None,
        }
    }

    fn terminal(&self) -> Terminal {
        match *self {
            OutcomeKind::Deal { price_final } => Terminal::Deal { price_final },
            OutcomeKind::DeadlockTurnLimit => Terminal::Deadlock,
            OutcomeKind::Quit { .. } => Terminal::Quit,
            OutcomeKind::BuyerBoundaryViolation { .. } => Terminal::BoundaryViolation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    pub kind: OutcomeKind,
    /// Completed rounds, i.e. rounds the seller answered.
    pub turns_used: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Running,
    Done(Outcome),
}

/// A reply that failed to parse.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MalformedTurn {
    pub raw: String,
    pub violation: FormatViolation,
}

/// A seller attempt the environment refused.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interception {
    pub attempt: u32,
    pub raw: String,
    pub reason: String,
}

/// The buyer reply that ended the episode with a boundary violation, when it
/// could not be recorded as a turn.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub raw: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub message: TurnMessage,
    /// At least one attempt for this turn was intercepted.
    pub regulated: bool,
    /// The message is the canonical refusal, not the agent's own text.
    pub substituted: bool,
    pub interceptions: Vec<Interception>,
}

impl TranscriptEntry {
    fn plain(message: TurnMessage) -> Self {
        Self { message, regulated: false, substituted: false, interceptions: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub scenario: Scenario,
    pub outcome: Outcome,
    pub reward: f64,
    pub first_buyer_offer: Option<Money>,
    pub overshoot: bool,
    pub transcript: Vec<TranscriptEntry>,
    pub violation: Option<Violation>,
    pub seed: u64,
}

impl EpisodeRecord {
    pub fn class(&self) -> ScenarioClass {
        classify(self.scenario.budget(), self.scenario.cost()).expect("scenario limits differ")
    }

    pub fn turns(&self) -> impl Iterator<Item = &TurnMessage> {
        self.transcript.iter().map(|e| &e.message)
    }

    pub fn is_deal(&self) -> bool {
        matches!(self.outcome.kind, OutcomeKind::Deal { .. })
    }
}

#[derive(Debug, Clone)]
pub struct RegulatedTurn {
    pub message: TurnMessage,
    pub substituted: bool,
    pub interceptions: Vec<Interception>,
}

/// Returns the first seller attempt that parses, follows the move rules and
/// does not price below cost. After `max_attempts` refusals a canonical
/// `REJECT` is substituted.
pub fn regulate_seller<F>(
    history: &[TurnMessage],
    scenario: &Scenario,
    grammar: Grammar,
    max_attempts: u32,
    mut attempt: F,
) -> Result<RegulatedTurn, AgentError>
where
    F: FnMut(u32) -> Result<Result<TurnMessage, MalformedTurn>, AgentError>,
{
    let mut interceptions = Vec::new();
    for n in 0..max_attempts.max(1) {
        let reason = match attempt(n)? {
            Err(bad) => Interception { attempt: n, raw: bad.raw, reason: bad.violation.to_string() },
            Ok(turn) => match seller_check(history, scenario, &turn) {
                Ok(()) => return Ok(RegulatedTurn { message: turn, substituted: false, interceptions }),
                Err(reason) => Interception { attempt: n, raw: turn.raw, reason },
            },
        };
        interceptions.push(reason);
    }
    let message =
        TurnMessage::compose(Role::Seller, grammar, "", REFUSAL_DIALOGUE, ActionKind::Reject, scenario.codename());
    Ok(RegulatedTurn { message, substituted: true, interceptions })
}

fn seller_check(history: &[TurnMessage], scenario: &Scenario, turn: &TurnMessage) -> Result<(), String> {
    if turn.role != Role::Seller {
        return Err("turn is not a seller turn".into());
    }
    validate_sequence(history, turn).map_err(|e| e.to_string())?;
    validate_item(&turn.action, scenario.codename(), scenario.quantity()).map_err(|e| e.to_string())?;
    match &turn.action {
        ActionKind::Sell(o) | ActionKind::Deal(o) if o.amount < scenario.cost() => {
            Err(format!("{} {} is below cost {}", turn.action.verb(), o.amount, scenario.cost()))
        }
        _ => Ok(()),
    }
}

fn buyer_check(history: &[TurnMessage], scenario: &Scenario, turn: &TurnMessage) -> Result<(), String> {
    if turn.role != Role::Buyer {
        return Err("turn is not a buyer turn".into());
    }
    validate_sequence(history, turn).map_err(|e| e.to_string())?;
    validate_item(&turn.action, scenario.codename(), scenario.quantity()).map_err(|e| e.to_string())
}

/// Live negotiation state.
#[derive(Debug, Clone)]
pub struct EpisodeState {
    scenario: Scenario,
    transcript: Vec<TranscriptEntry>,
    history: Vec<TurnMessage>,
    turn_index: u32,
    last_buyer_offer: Option<Money>,
    last_seller_offer: Option<Money>,
    status: Status,
    violation: Option<Violation>,
}

impl EpisodeState {
    pub fn new(scenario: Scenario) -> Self {
        Self {
            scenario,
            transcript: Vec::new(),
            history: Vec::new(),
            turn_index: 0,
            last_buyer_offer: None,
            last_seller_offer: None,
            status: Status::Running,
            violation: None,
        }
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }
    pub fn history(&self) -> &[TurnMessage] {
        &self.history
    }
    pub fn transcript(&self) -> &[TranscriptEntry] {
        &self.transcript
    }
    pub fn turn_index(&self) -> u32 {
        self.turn_index
    }
    pub fn last_buyer_offer(&self) -> Option<Money> {
        self.last_buyer_offer
    }
    pub fn last_seller_offer(&self) -> Option<Money> {
        self.last_seller_offer
    }
    pub fn status(&self) -> Status {
        self.status
    }

    /// Whose move it is, or `None` once the episode is over.
    pub fn to_move(&self) -> Option<Role> {
        match self.status {
            Status::Done(_) => None,
            Status::Running if self.history.len().is_multiple_of(2) => Some(Role::Buyer),
            Status::Running => Some(Role::Seller),
        }
    }

    /// History as `viewer_grammar` renders it for either side: reasoning removed.
    pub fn public_history(&self, viewer_grammar: Grammar) -> Vec<PublicTurn> {
        self.history
            .iter()
            .map(|t| PublicTurn { role: t.role, text: render_public(t, viewer_grammar), action: t.action.clone() })
            .collect()
    }

    fn expect_move(&self, role: Role) -> Result<(), EngineError> {
        match self.to_move() {
            Some(r) if r == role => Ok(()),
            Some(r) => Err(EngineError::Usage(format!("{role} moved but it is the {r}'s turn"))),
            None => Err(EngineError::Usage(format!("{role} moved after the episode ended"))),
        }
    }

    fn finish(&mut self, kind: OutcomeKind, turns_used: u32) {
        self.status = Status::Done(Outcome { kind, turns_used });
    }

    fn push(&mut self, entry: TranscriptEntry) {
        self.history.push(entry.message.clone());
        self.transcript.push(entry);
    }

    /// Applies a buyer reply.
    pub fn step_buyer(&mut self, turn: Result<TurnMessage, MalformedTurn>) -> Result<(), EngineError> {
        self.expect_move(Role::Buyer)?;
        let format_violation = BoundaryReason::Format;
        let turn = match turn {
            Err(bad) => {
                self.violation = Some(Violation { raw: bad.raw, reason: bad.violation.to_string() });
                self.finish(OutcomeKind::BuyerBoundaryViolation { reason: format_violation }, self.turn_index);
                return Ok(());
            }
            Ok(turn) => turn,
        };
        if let Err(reason) = buyer_check(&self.history, &self.scenario, &turn) {
            self.violation = Some(Violation { raw: turn.raw, reason });
            self.finish(OutcomeKind::BuyerBoundaryViolation { reason: format_violation }, self.turn_index);
            return Ok(());
        }
        let budget = self.scenario.budget();
        let action = turn.action.clone();
        self.push(TranscriptEntry::plain(turn));
        match action {
            ActionKind::Buy(o) if o.amount > budget => {
                self.last_buyer_offer = Some(o.amount);
                self.finish(
                    OutcomeKind::BuyerBoundaryViolation { reason: BoundaryReason::OverBudget },
                    self.turn_index,
                );
            }
            ActionKind::Buy(o) => self.last_buyer_offer = Some(o.amount),
            ActionKind::Quit => self.finish(OutcomeKind::Quit { by: Role::Buyer }, self.turn_index),
            ActionKind::Deal(o) => self.finish(OutcomeKind::Deal { price_final: o.amount }, self.turn_index),
            ActionKind::Reject | ActionKind::Sell(_) => {}
        }
        Ok(())
    }

    /// Applies an already regulated seller turn.
    pub fn step_seller(&mut self, turn: RegulatedTurn) -> Result<(), EngineError> {
        self.expect_move(Role::Seller)?;
        if let Err(reason) = seller_check(&self.history, &self.scenario, &turn.message) {
            return Err(EngineError::Usage(format!("unregulated seller turn: {reason}")));
        }
        let action = turn.message.action.clone();
        self.push(TranscriptEntry {
            regulated: !turn.interceptions.is_empty(),
            substituted: turn.substituted,
            interceptions: turn.interceptions,
            message: turn.message,
        });
        let round = self.turn_index + 1;
        match action {
            ActionKind::Deal(o) => self.finish(OutcomeKind::Deal { price_final: o.amount }, round),
            ActionKind::Quit => self.finish(OutcomeKind::Quit { by: Role::Seller }, round),
            other => {
                if let ActionKind::Sell(o) = other {
                    self.last_seller_offer = Some(o.amount);
                }
                self.turn_index = round;
                if round >= self.scenario.max_turns() {
                    self.finish(OutcomeKind::DeadlockTurnLimit, round);
                }
            }
        }
        Ok(())
    }

    /// Regulates and applies one seller move drawn from `produce`.
    pub fn step_seller_with<F>(&mut self, grammar: Grammar, max_attempts: u32, produce: F) -> Result<(), EngineError>
    where
        F: FnMut(u32) -> Result<Result<TurnMessage, MalformedTurn>, AgentError>,
    {
        self.expect_move(Role::Seller)?;
        let turn = regulate_seller(&self.history, &self.scenario, grammar, max_attempts, produce)
            .map_err(|source| EngineError::Agent { role: Role::Seller, source })?;
        self.step_seller(turn)
    }

    pub fn into_record(self, seed: u64) -> Result<EpisodeRecord, EngineError> {
        let outcome = match self.status {
            Status::Done(o) => o,
            Status::Running => return Err(EngineError::Usage("episode is still running".into())),
        };
        let budget = self.scenario.budget();
        let reward =
            terminal_reward(RewardInputs { budget, cost: self.scenario.cost(), terminal: outcome.kind.terminal() })?;
        let buyer_turns = || self.transcript.iter().filter(|e| e.message.role == Role::Buyer);
        let first_buyer_offer = buyer_turns().next().and_then(|e| match &e.message.action {
            ActionKind::Buy(o) => Some(o.amount),
            _ => None,
        });
        let overshoot = buyer_turns().any(|e| e.message.action.amount().is_some_and(|a| a > budget));
        Ok(EpisodeRecord {
            scenario: self.scenario,
            outcome,
            reward,
            first_buyer_offer,
            overshoot,
            transcript: self.transcript,
            violation: self.violation,
            seed,
        })
    }
}

/// SplitMix64 finalizer, used to derive per-turn seeds.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Side<'a> {
    agent: &'a dyn Agent,
    view: RoleView,
    prompt: Prompt,
}

impl Side<'_> {
    fn ask(
        &self,
        state: &EpisodeState,
        attempt: u32,
        seed: u64,
    ) -> Result<Result<TurnMessage, MalformedTurn>, AgentError> {
        let grammar = self.agent.grammar();
        let visible = state.public_history(grammar);
        let turn_number = state.history().len() as u64;
        let request = TurnRequest {
            view: &self.view,
            prompt: &self.prompt,
            visible_history: &visible,
            round: state.turn_index(),
            attempt,
            episode_seed: seed,
            rng_seed: mix_seed(seed, (turn_number << 8) | u64::from(attempt.min(255))),
        };
        let raw = self.agent.next_turn(&request)?;
        Ok(parse_turn(&raw, self.view.role, grammar, &self.view.codename)
            .map_err(|violation| MalformedTurn { raw, violation }))
    }
}

/// Plays one episode to termination.
pub fn run_episode(
    buyer: &dyn Agent,
    seller: &dyn Agent,
    scenario: &Scenario,
    config: &EngineConfig,
    seed: u64,
) -> Result<EpisodeRecord, EngineError> {
    let buyer_side = Side {
        agent: buyer,
        view: RoleView::for_role(scenario, Role::Buyer),
        prompt: assemble_buyer_prompt(scenario, config.description_chars),
    };
    let seller_side = Side {
        agent: seller,
        view: RoleView::for_role(scenario, Role::Seller),
        prompt: assemble_seller_prompt(scenario, config.persona, config.description_chars),
    };
    let mut state = EpisodeState::new(scenario.clone());
    while let Some(role) = state.to_move() {
        match role {
            Role::Buyer => {
                let attempts = if config.resample_buyer { config.buyer_max_attempts.max(1) } else { 1 };
                let mut reply = None;
                for attempt in 0..attempts {
                    let r =
                        buyer_side.ask(&state, attempt, seed).map_err(|source| EngineError::Agent { role, source })?;
                    let acceptable = match &r {
                        Ok(t) => buyer_check(state.history(), scenario, t).is_ok(),
                        Err(_) => false,
                    };
                    reply = Some(r);
                    if acceptable {
                        break;
                    }
                }
                state.step_buyer(reply.expect("at least one buyer attempt"))?;
            }
            Role::Seller => {
                let snapshot = state.clone();
                state.step_seller_with(seller.grammar(), config.seller_max_attempts, |attempt| {
                    seller_side.ask(&snapshot, attempt, seed)
                })?;
            }
        }
    }
    state.into_record(seed)
}
