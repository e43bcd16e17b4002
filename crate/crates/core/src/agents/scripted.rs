use serde::{Deserialize, Serialize};

use super::{Agent, AgentError, PublicTurn, RoleView, TurnRequest};
use crate::money::Money;
use crate::protocol::{ActionKind, Grammar, Offer, Role, TurnMessage};

/// When a scripted side accepts the counterparty's standing offer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", content = "margin", rename_all = "snake_case")]
pub enum AcceptRule {
    /// Accept once the offer crosses this round's own position.
    MeetsCurrent,
    /// Also accept any offer at least this fraction better than the private
    /// limit (seller: `>= cost * (1 + m)`, buyer: `<= budget * (1 - m)`).
    Margin(f64),
    /// Accept any standing offer.
    Always,
    Never,
}

/// Deterministic concession policy.
///
/// The buyer opens at `opening_ratio * budget` and raises by
/// `concession_step * budget` per round; the seller opens at
/// `opening_ratio * list_price` and lowers by `concession_step * list_price`.
/// Neither concedes during the first `stubbornness` rounds. Prices are
/// rounded to `tick` toward the policy's own advantage (buyers down, sellers
/// up). With `respect_limit` set, prices and acceptances never cross the
/// private limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedPolicy {
    pub role: Role,
    pub opening_ratio: f64,
    pub concession_step: f64,
    pub stubbornness: u32,
    pub accept: AcceptRule,
    pub tick: Money,
    /// Added to every computed price. Non-zero only for adversarial tests.
    pub price_offset: Money,
    pub respect_limit: bool,
    /// Round (zero-based) at which to quit if nothing was settled.
    pub walk_away_round: Option<u32>,
    pub grammar: Grammar,
}

impl ScriptedPolicy {
    pub fn buyer() -> Self {
        Self {
            role: Role::Buyer,
            opening_ratio: 0.6,
            concession_step: 0.08,
            stubbornness: 0,
            accept: AcceptRule::MeetsCurrent,
            tick: Money::from_dollars(1),
            price_offset: Money::ZERO,
            respect_limit: true,
            walk_away_round: None,
            grammar: Grammar::Labeled,
        }
    }

    pub fn seller() -> Self {
        Self {
            role: Role::Seller,
            opening_ratio: 1.0,
            concession_step: 0.08,
            stubbornness: 0,
            accept: AcceptRule::Margin(0.25),
            tick: Money::from_dollars(1),
            price_offset: Money::ZERO,
            respect_limit: true,
            walk_away_round: None,
            grammar: Grammar::Labeled,
        }
    }

    /// Seller that tries to close on any buyer bid and asks below cost.
    pub fn adversarial_seller() -> Self {
        Self { opening_ratio: 0.2, accept: AcceptRule::Always, respect_limit: false, ..Self::seller() }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.opening_ratio.is_finite() && self.opening_ratio > 0.0) {
            return Err(format!("opening_ratio must be positive, got {}", self.opening_ratio));
        }
        if !(self.concession_step.is_finite() && self.concession_step >= 0.0) {
            return Err(format!("concession_step must be non-negative, got {}", self.concession_step));
        }
        if !self.tick.is_positive() {
            return Err("tick must be positive".into());
        }
        if let AcceptRule::Margin(m) = self.accept {
            if !(m.is_finite() && m >= 0.0) {
                return Err(format!("accept margin must be non-negative, got {m}"));
            }
        }
        Ok(())
    }

    fn round_price(&self, dollars: f64) -> Money {
        let rounded = match self.role {
            Role::Buyer => Money::floor_to(dollars, self.tick),
            Role::Seller => Money::ceil_to(dollars, self.tick),
        };
        // A coarse tick must not round a small price to zero.
        let rounded =
            if rounded.is_positive() { rounded } else { Money::ceil_to(dollars, Money::CENT).max(Money::CENT) };
        rounded + self.price_offset
    }

    /// This policy's own price for zero-based `round`.
    pub fn position(&self, view: &RoleView, round: u32) -> Money {
        let concessions = round.saturating_sub(self.stubbornness) as f64;
        match self.role {
            Role::Buyer => {
                let b = view.limit.as_f64();
                let price = self.round_price(b * (self.opening_ratio + self.concession_step * concessions));
                if self.respect_limit {
                    price.min(view.limit)
                } else {
                    price
                }
            }
            Role::Seller => {
                let l = view.list_price.as_f64();
                let ratio = (self.opening_ratio - self.concession_step * concessions).max(0.0);
                let price = self.round_price(l * ratio);
                if self.respect_limit {
                    price.max(view.limit)
                } else {
                    price.max(Money::CENT)
                }
            }
        }
    }

    fn accepts(&self, offered: Money, current: Money, limit: Money) -> bool {
        let within_limit = match self.role {
            Role::Buyer => offered <= limit,
            Role::Seller => offered >= limit,
        };
        if self.respect_limit && !within_limit {
            return false;
        }
        let crosses = match self.role {
            Role::Buyer => offered <= current,
            Role::Seller => offered >= current,
        };
        match self.accept {
            AcceptRule::MeetsCurrent => crosses,
            AcceptRule::Margin(m) => {
                let l = limit.as_f64();
                let margin_ok = match self.role {
                    Role::Buyer => offered.as_f64() <= l * (1.0 - m),
                    Role::Seller => offered.as_f64() >= l * (1.0 + m),
                };
                crosses || margin_ok
            }
            AcceptRule::Always => true,
            AcceptRule::Never => false,
        }
    }

    /// Decides the next turn from the public history and own private view.
    pub fn next_turn(&self, view: &RoleView, history: &[PublicTurn]) -> TurnMessage {
        let round = history.iter().filter(|t| t.role == self.role).count() as u32;
        let current = self.position(view, round);
        let opponent = self.role.opponent();
        let standing = history.iter().rev().filter(|t| t.role == opponent).find_map(|t| match (&t.action, opponent) {
            (ActionKind::Sell(o), Role::Seller) | (ActionKind::Buy(o), Role::Buyer) => Some(o.clone()),
            _ => None,
        });
        // The seller only closes on the bid the buyer just made.
        let standing = match self.role {
            Role::Seller => standing.filter(|_| matches!(history.last().map(|t| &t.action), Some(ActionKind::Buy(_)))),
            Role::Buyer => standing,
        };

        let compose = |reasoning: String, dialogue: String, action: ActionKind| {
            TurnMessage::compose(self.role, self.grammar, reasoning, dialogue, action, &view.codename)
        };
        let private = match self.role {
            Role::Buyer => format!("My budget is {}; this round I will go up to {current}.", view.limit),
            Role::Seller => format!("My cost is {}; this round I will not go below {current}.", view.limit),
        };

        if self.walk_away_round == Some(round) {
            return compose(private, "I don't think we can make this work. Goodbye.".into(), ActionKind::Quit);
        }
        if let Some(offer) = standing {
            if self.accepts(offer.amount, current, view.limit) {
                let dialogue = format!("Alright, {} it is.", offer.amount);
                return compose(private, dialogue, ActionKind::Deal(offer));
            }
        }
        let offer = Offer::new(current, view.quantity, view.codename.clone());
        match self.role {
            Role::Buyer => compose(private, format!("Would you take {current}?"), ActionKind::Buy(offer)),
            Role::Seller => compose(private, format!("I can let it go for {current}."), ActionKind::Sell(offer)),
        }
    }
}

/// [`ScriptedPolicy`] behind the [`Agent`] interface.
#[derive(Debug, Clone)]
pub struct ScriptedAgent {
    pub policy: ScriptedPolicy,
}

impl ScriptedAgent {
    pub fn new(policy: ScriptedPolicy) -> Self {
        Self { policy }
    }
}

impl Agent for ScriptedAgent {
    fn next_turn(&self, request: &TurnRequest<'_>) -> Result<String, AgentError> {
        if request.view.role != self.policy.role {
            return Err(AgentError::Config(format!("{} policy asked to play {}", self.policy.role, request.view.role)));
        }
        Ok(self.policy.next_turn(request.view, request.visible_history).raw)
    }

    fn grammar(&self) -> Grammar {
        self.policy.grammar
    }
}
