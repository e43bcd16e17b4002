use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{EpisodeRecord, Interception, OutcomeKind};
use crate::money::Money;
use crate::protocol::{Grammar, Role};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedInterception {
    pub attempt: u32,
    pub raw: String,
    pub reason: String,
}

impl From<&Interception> for LoggedInterception {
    fn from(i: &Interception) -> Self {
        Self { attempt: i.attempt, raw: i.raw.clone(), reason: i.reason.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedTurn {
    pub role: Role,
    pub reasoning: String,
    pub dialogue: String,
    /// Canonical labeled action text.
    pub action: String,
    pub grammar: Grammar,
    pub raw: String,
    pub regulated: bool,
    pub substituted: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub interceptions: Vec<LoggedInterception>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedViolation {
    pub raw: String,
    pub reason: String,
}

/// One line of `transcripts.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub seed: u64,
    pub codename: String,
    pub title: String,
    pub list_price: Money,
    pub budget: Money,
    pub cost: Money,
    pub quantity: u32,
    pub max_turns: u32,
    pub class: String,
    pub turns: Vec<LoggedTurn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub violation: Option<LoggedViolation>,
    pub outcome: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quit_by: Option<Role>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub violation_reason: Option<super::BoundaryReason>,
    pub price_final: Option<Money>,
    pub reward: f64,
    pub turns_used: u32,
    pub overshoot: bool,
    pub first_buyer_offer: Option<Money>,
}

impl From<&EpisodeRecord> for EpisodeLog {
    fn from(r: &EpisodeRecord) -> Self {
        let s = &r.scenario;
        EpisodeLog {
            seed: r.seed,
            codename: s.codename().to_string(),
            title: s.product().title.clone(),
            list_price: s.list_price(),
            budget: s.budget(),
            cost: s.cost(),
            quantity: s.quantity(),
            max_turns: s.max_turns(),
            class: r.class().label().to_string(),
            turns: r
                .transcript
                .iter()
                .map(|e| LoggedTurn {
                    role: e.message.role,
                    reasoning: e.message.reasoning.clone(),
                    dialogue: e.message.dialogue.clone(),
                    action: e.message.action.to_text(Grammar::Labeled, s.codename()),
                    grammar: e.message.grammar,
                    raw: e.message.raw.clone(),
                    regulated: e.regulated,
                    substituted: e.substituted,
                    interceptions: e.interceptions.iter().map(Into::into).collect(),
                })
                .collect(),
            violation: r.violation.as_ref().map(|v| LoggedViolation { raw: v.raw.clone(), reason: v.reason.clone() }),
            outcome: r.outcome.kind.label().to_string(),
            quit_by: match r.outcome.kind {
                OutcomeKind::Quit { by } => Some(by),
                _ => None,
            },
            violation_reason: match r.outcome.kind {
                OutcomeKind::BuyerBoundaryViolation { reason } => Some(reason),
                _ => None,
            },
            price_final: r.outcome.kind.price_final(),
            reward: r.reward,
            turns_used: r.outcome.turns_used,
            overshoot: r.overshoot,
            first_buyer_offer: r.first_buyer_offer,
        }
    }
}

/// Writes one JSON object per record, newline terminated.
pub fn write_log<W: Write>(mut out: W, records: &[EpisodeRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, &EpisodeLog::from(r))?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Reads a JSONL log; blank lines are skipped. Errors carry the 1-based line.
pub fn read_log<R: BufRead>(input: R) -> Result<Vec<EpisodeLog>, (usize, String)> {
    let mut logs = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| (i + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        logs.push(serde_json::from_str(&line).map_err(|e| (i + 1, e.to_string()))?);
    }
    Ok(logs)
}
