//! Turn grammar and the five-move action language.
//!
//! Every agent turn has three parts: private reasoning, public dialogue and
//! one structured action. Two surface grammars are understood:
//!
//! ```text
//! Labeled:  Thought: <reasoning>
//!           Talk: <dialogue>
//!           Action: BUY $10.00 (1x beauty_29)
//!
//! Tagged:   <REASONING>...</REASONING>
//!           <DIALOGUE>...</DIALOGUE>
//!           <ACTION>[BUY] $35.00</ACTION>
//! ```
//!
//! Parsing tolerates surrounding whitespace, optional `[ ]` around the verb,
//! case-insensitive verbs, optional `$` and thousands separators in amounts.
//! Anything else is a format violation.

use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::money::Money;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Buyer,
    Seller,
}

impl Role {
    pub fn opponent(self) -> Role {
        match self {
            Role::Buyer => Role::Seller,
            Role::Seller => Role::Buyer,
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Buyer => "buyer",
            Role::Seller => "seller",
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grammar {
    #[default]
    Labeled,
    Tagged,
}

impl std::str::FromStr for Grammar {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "labeled" => Ok(Grammar::Labeled),
            "tagged" => Ok(Grammar::Tagged),
            other => Err(format!("unknown grammar {other:?} (expected labeled or tagged)")),
        }
    }
}

/// A priced commitment: `$amount` for `quantity` units of `codename`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Offer {
    pub amount: Money,
    pub quantity: u32,
    pub codename: String,
}

impl Offer {
    pub fn new(amount: Money, quantity: u32, codename: impl Into<String>) -> Self {
        Self { amount, quantity, codename: codename.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActionKind {
    Buy(Offer),
    Sell(Offer),
    Deal(Offer),
    Reject,
    Quit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Verb {
    Buy,
    Sell,
    Deal,
    Reject,
    Quit,
}

impl Verb {
    pub fn as_str(self) -> &'static str {
        match self {
            Verb::Buy => "BUY",
            Verb::Sell => "SELL",
            Verb::Deal => "DEAL",
            Verb::Reject => "REJECT",
            Verb::Quit => "QUIT",
        }
    }

    fn from_word(word: &str) -> Option<Verb> {
        match word.to_ascii_uppercase().as_str() {
            "BUY" => Some(Verb::Buy),
            "SELL" => Some(Verb::Sell),
            "DEAL" => Some(Verb::Deal),
            "REJECT" => Some(Verb::Reject),
            "QUIT" => Some(Verb::Quit),
            _ => None,
        }
    }
}

impl fmt::Display for Verb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl ActionKind {
    pub fn verb(&self) -> Verb {
        match self {
            ActionKind::Buy(_) => Verb::Buy,
            ActionKind::Sell(_) => Verb::Sell,
            ActionKind::Deal(_) => Verb::Deal,
            ActionKind::Reject => Verb::Reject,
            ActionKind::Quit => Verb::Quit,
        }
    }

    pub fn offer(&self) -> Option<&Offer> {
        match self {
            ActionKind::Buy(o) | ActionKind::Sell(o) | ActionKind::Deal(o) => Some(o),
            ActionKind::Reject | ActionKind::Quit => None,
        }
    }

    pub fn amount(&self) -> Option<Money> {
        self.offer().map(|o| o.amount)
    }

    /// Canonical action text for `grammar`. The tagged form omits the
    /// `(Nx codename)` suffix when it matches the defaults a parser would
    /// fill in.
    pub fn to_text(&self, grammar: Grammar, default_codename: &str) -> String {
        let verb = self.verb();
        let head = match grammar {
            Grammar::Labeled => verb.to_string(),
            Grammar::Tagged => format!("[{verb}]"),
        };
        match self.offer() {
            None => head,
            Some(o) => {
                let omit_suffix = grammar == Grammar::Tagged && o.quantity == 1 && o.codename == default_codename;
                if omit_suffix {
                    format!("{head} {}", o.amount)
                } else {
                    format!("{head} {} ({}x {})", o.amount, o.quantity, o.codename)
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ActionError {
    #[error("empty action")]
    Empty,
    #[error("unknown verb {0:?}")]
    UnknownVerb(String),
    #[error("{verb} needs a price")]
    MissingAmount { verb: Verb },
    #[error("malformed amount {0:?}")]
    BadAmount(String),
    #[error("amount must be positive")]
    NonPositiveAmount,
    #[error("quantity must be at least 1")]
    ZeroQuantity,
    #[error("unexpected text after {verb}: {rest:?}")]
    Trailing { verb: Verb, rest: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Segment {
    Reasoning,
    Dialogue,
    Action,
}

impl fmt::Display for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Segment::Reasoning => "reasoning",
            Segment::Dialogue => "dialogue",
            Segment::Action => "action",
        })
    }
}

/// A turn that could not be read. Carries the segment that failed.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormatViolation {
    #[error("missing {0} segment")]
    MissingSegment(Segment),
    #[error("action segment {text:?}: {source}")]
    BadAction { text: String, source: ActionError },
}

impl FormatViolation {
    pub fn segment(&self) -> Segment {
        match self {
            FormatViolation::MissingSegment(s) => *s,
            FormatViolation::BadAction { .. } => Segment::Action,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnMessage {
    pub role: Role,
    pub grammar: Grammar,
    pub reasoning: String,
    pub dialogue: String,
    pub action: ActionKind,
    /// Action segment as written by the agent (canonical when composed).
    pub action_text: String,
    pub raw: String,
}

impl TurnMessage {
    /// Builds a turn from its parts with canonical action text and raw form.
    pub fn compose(
        role: Role,
        grammar: Grammar,
        reasoning: impl Into<String>,
        dialogue: impl Into<String>,
        action: ActionKind,
        default_codename: &str,
    ) -> TurnMessage {
        let reasoning = reasoning.into();
        let dialogue = dialogue.into();
        let action_text = action.to_text(grammar, default_codename);
        let raw = join_segments(grammar, &reasoning, &dialogue, &action_text);
        TurnMessage { role, grammar, reasoning, dialogue, action, action_text, raw }
    }
}

fn join_segments(grammar: Grammar, reasoning: &str, dialogue: &str, action: &str) -> String {
    match grammar {
        Grammar::Labeled => format!("Thought: {reasoning}\nTalk: {dialogue}\nAction: {action}"),
        Grammar::Tagged => {
            format!("<REASONING>{reasoning}</REASONING>\n<DIALOGUE>{dialogue}</DIALOGUE>\n<ACTION>{action}</ACTION>")
        }
    }
}

/// Canonical serialization of a turn in `grammar`.
pub fn serialize_turn(turn: &TurnMessage, grammar: Grammar, default_codename: &str) -> String {
    join_segments(grammar, &turn.reasoning, &turn.dialogue, &turn.action.to_text(grammar, default_codename))
}

fn action_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\[?\s*([A-Za-z]+)\s*\]?(.*)$").expect("valid action regex"))
}

fn priced_tail_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^\s*(\S+?)\s*(?:\(\s*([0-9]+)(?:\s*[xX])?\s+([A-Za-z0-9_.\-]+)\s*\))?\s*$")
            .expect("valid tail regex")
    })
}

/// Parses one action. `default_codename` fills in a missing `(Nx codename)`
/// suffix, with quantity 1.
pub fn parse_action(text: &str, default_codename: &str) -> Result<ActionKind, ActionError> {
    let text = text.trim();
    if text.is_empty() {
        return Err(ActionError::Empty);
    }
    let caps = action_regex()
        .captures(text)
        .ok_or_else(|| ActionError::UnknownVerb(text.split_whitespace().next().unwrap_or("").into()))?;
    let word = caps.get(1).map_or("", |m| m.as_str());
    let verb = Verb::from_word(word).ok_or_else(|| ActionError::UnknownVerb(word.to_string()))?;
    let rest = caps.get(2).map_or("", |m| m.as_str()).trim();

    match verb {
        Verb::Reject | Verb::Quit => {
            if rest.is_empty() {
                Ok(if verb == Verb::Reject { ActionKind::Reject } else { ActionKind::Quit })
            } else {
                Err(ActionError::Trailing { verb, rest: rest.to_string() })
            }
        }
        Verb::Buy | Verb::Sell | Verb::Deal => {
            if rest.is_empty() {
                return Err(ActionError::MissingAmount { verb });
            }
            let tail = priced_tail_regex().captures(rest).ok_or_else(|| ActionError::BadAmount(rest.to_string()))?;
            let amount_text = tail.get(1).map_or("", |m| m.as_str());
            let amount = Money::parse(amount_text).map_err(|_| ActionError::BadAmount(amount_text.to_string()))?;
            if !amount.is_positive() {
                return Err(ActionError::NonPositiveAmount);
            }
            let quantity = match tail.get(2) {
                Some(q) => q.as_str().parse::<u32>().map_err(|_| ActionError::BadAmount(q.as_str().to_string()))?,
                None => 1,
            };
            if quantity == 0 {
                return Err(ActionError::ZeroQuantity);
            }
            let codename = tail.get(3).map_or_else(|| default_codename.to_string(), |m| m.as_str().to_string());
            let offer = Offer { amount, quantity, codename };
            Ok(match verb {
                Verb::Buy => ActionKind::Buy(offer),
                Verb::Sell => ActionKind::Sell(offer),
                _ => ActionKind::Deal(offer),
            })
        }
    }
}

struct Segments {
    reasoning: String,
    dialogue: String,
    action: String,
}

fn split_labeled(raw: &str) -> Result<Segments, FormatViolation> {
    let lines: Vec<&str> = raw.lines().collect();
    let label_at = |label: &str, from: usize, to: usize| (from..to).find(|&i| lines[i].trim_start().starts_with(label));
    let strip = |i: usize, label: &str| lines[i].trim_start()[label.len()..].to_string();

    let action_idx = label_at("Action:", 0, lines.len()).ok_or(FormatViolation::MissingSegment(Segment::Action))?;
    let thought_idx = label_at("Thought:", 0, action_idx).ok_or(FormatViolation::MissingSegment(Segment::Reasoning))?;
    let talk_idx =
        label_at("Talk:", thought_idx + 1, action_idx).ok_or(FormatViolation::MissingSegment(Segment::Dialogue))?;

    let gather = |start: usize, label: &str, end: usize| {
        let mut parts = vec![strip(start, label)];
        parts.extend(lines[start + 1..end].iter().map(|l| l.to_string()));
        parts.join("\n").trim().to_string()
    };
    Ok(Segments {
        reasoning: gather(thought_idx, "Thought:", talk_idx),
        dialogue: gather(talk_idx, "Talk:", action_idx),
        action: strip(action_idx, "Action:").trim().to_string(),
    })
}

fn tagged_span<'a>(
    raw: &'a str,
    tag: &str,
    from: usize,
    segment: Segment,
) -> Result<(&'a str, usize), FormatViolation> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let start =
        raw[from..].find(&open).map(|i| from + i + open.len()).ok_or(FormatViolation::MissingSegment(segment))?;
    let end = raw[start..].find(&close).map(|i| start + i).ok_or(FormatViolation::MissingSegment(segment))?;
    Ok((&raw[start..end], end + close.len()))
}

fn split_tagged(raw: &str) -> Result<Segments, FormatViolation> {
    let (reasoning, next) = tagged_span(raw, "REASONING", 0, Segment::Reasoning)?;
    let (dialogue, next) = tagged_span(raw, "DIALOGUE", next, Segment::Dialogue)?;
    let (action, _) = tagged_span(raw, "ACTION", next, Segment::Action)?;
    Ok(Segments {
        reasoning: reasoning.trim().to_string(),
        dialogue: dialogue.trim().to_string(),
        action: action.trim().to_string(),
    })
}

/// Parses a raw agent reply. When several `Action:` lines appear, the first
/// one wins.
pub fn parse_turn(
    raw: &str,
    role: Role,
    grammar: Grammar,
    default_codename: &str,
) -> Result<TurnMessage, FormatViolation> {
    let seg = match grammar {
        Grammar::Labeled => split_labeled(raw)?,
        Grammar::Tagged => split_tagged(raw)?,
    };
    let action = parse_action(&seg.action, default_codename)
        .map_err(|source| FormatViolation::BadAction { text: seg.action.clone(), source })?;
    Ok(TurnMessage {
        role,
        grammar,
        reasoning: seg.reasoning,
        dialogue: seg.dialogue,
        action,
        action_text: seg.action,
        raw: raw.to_string(),
    })
}

/// The opponent's view of a turn: dialogue and action, reasoning removed.
pub fn render_public(turn: &TurnMessage, grammar: Grammar) -> String {
    let action = if turn.grammar == grammar {
        turn.action_text.clone()
    } else {
        let default = turn.action.offer().map_or("", |o| o.codename.as_str());
        turn.action.to_text(grammar, default)
    };
    match grammar {
        Grammar::Labeled => format!("Talk: {}\nAction: {action}", turn.dialogue),
        Grammar::Tagged => format!("<DIALOGUE>{}</DIALOGUE>\n<ACTION>{action}</ACTION>", turn.dialogue),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum ProtocolViolation {
    #[error("it is the {expected}'s turn")]
    OutOfTurn { expected: Role },
    #[error("{role} may not use {verb}")]
    VerbNotAllowed { role: Role, verb: Verb },
    #[error("the buyer's first action must be BUY or REJECT, got {verb}")]
    FirstBuyerAction { verb: Verb },
    #[error("{role} chose DEAL with no prior {} on the table", .role.opponent())]
    DealWithoutOffer { role: Role },
    #[error("DEAL {deal:?} does not copy the standing offer {standing:?}")]
    DealMismatch { deal: Offer, standing: Offer },
    #[error("offer names {found_quantity}x {found:?} but the scenario is {expected_quantity}x {expected:?}")]
    WrongItem { expected: String, expected_quantity: u32, found: String, found_quantity: u32 },
}

/// Checks that a priced action names the scenario's product and quantity.
pub fn validate_item(action: &ActionKind, codename: &str, quantity: u32) -> Result<(), ProtocolViolation> {
    match action.offer() {
        Some(o) if o.codename != codename || o.quantity != quantity => Err(ProtocolViolation::WrongItem {
            expected: codename.to_string(),
            expected_quantity: quantity,
            found: o.codename.clone(),
            found_quantity: o.quantity,
        }),
        _ => Ok(()),
    }
}

/// Most recent priced proposal (`BUY` for the buyer, `SELL` for the seller)
/// made by `role` in `history`.
pub fn standing_offer(history: &[TurnMessage], role: Role) -> Option<&Offer> {
    history.iter().rev().filter(|t| t.role == role).find_map(|t| match (&t.action, role) {
        (ActionKind::Buy(o), Role::Buyer) | (ActionKind::Sell(o), Role::Seller) => Some(o),
        _ => None,
    })
}

/// Checks the move-ordering rules for `next` given the prior turns.
///
/// `QUIT` is honored from either side at any point, including the buyer's
/// opening move.
pub fn validate_sequence(history: &[TurnMessage], next: &TurnMessage) -> Result<(), ProtocolViolation> {
    let expected = if history.len().is_multiple_of(2) { Role::Buyer } else { Role::Seller };
    if next.role != expected {
        return Err(ProtocolViolation::OutOfTurn { expected });
    }
    let verb = next.action.verb();
    match (next.role, verb) {
        (Role::Buyer, Verb::Sell) | (Role::Seller, Verb::Buy) => {
            return Err(ProtocolViolation::VerbNotAllowed { role: next.role, verb })
        }
        _ => {}
    }
    if next.role == Role::Buyer && history.is_empty() && !matches!(verb, Verb::Buy | Verb::Reject | Verb::Quit) {
        return Err(ProtocolViolation::FirstBuyerAction { verb });
    }
    if let ActionKind::Deal(deal) = &next.action {
        let standing = standing_offer(history, next.role.opponent())
            .ok_or(ProtocolViolation::DealWithoutOffer { role: next.role })?;
        if standing != deal {
            return Err(ProtocolViolation::DealMismatch { deal: deal.clone(), standing: standing.clone() });
        }
    }
    Ok(())
}
