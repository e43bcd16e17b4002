//! Re-running recorded negotiations through the engine.
//!
//! Text transcripts look like:
//!
//! ```text
//! codename: beauty_29
//! list_price: 70.00
//! budget: 56.00
//! cost: 23.24
//!
//! --- buyer
//! Thought: ...
//! Talk: ...
//! Action: BUY $10 (1x beauty_29)
//! --- seller
//! ...
//! ```
//!
//! Header keys `title`, `quantity` (1), `max_turns` (6) and `grammar`
//! (labeled) are optional.

use thiserror::Error;

use super::{run_episode, EngineConfig, EngineError, EpisodeLog, EpisodeRecord};
use crate::agents::{AgentError, ReplayAgent};
use crate::catalog::{build_scenario, CatalogError, Product, Scenario, DEFAULT_MAX_TURNS};
use crate::money::Money;
use crate::protocol::{parse_turn, FormatViolation, Grammar, Role};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("transcript is empty")]
    Empty,
    #[error("line {line}: {message}")]
    Header { line: usize, message: String },
    #[error("line {line}: unparseable {role} turn: {violation}")]
    Turn { line: usize, role: Role, violation: FormatViolation },
    #[error("transcript ends before the negotiation does")]
    Incomplete,
    #[error("line {line}: turn after the negotiation ended")]
    Trailing { line: usize },
    #[error(transparent)]
    Scenario(#[from] CatalogError),
    #[error(transparent)]
    Engine(EngineError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextTranscript {
    pub scenario: Scenario,
    pub grammar: Grammar,
    /// Role, raw reply and the 1-based line of its `---` marker.
    pub turns: Vec<(Role, String, usize)>,
}

fn header_error(line: usize, message: impl Into<String>) -> ReplayError {
    ReplayError::Header { line, message: message.into() }
}

fn bare_product(codename: &str, title: &str, list_price: Money) -> Product {
    Product {
        codename: codename.to_string(),
        title: title.to_string(),
        category: String::new(),
        description: String::new(),
        features: String::new(),
        list_price,
        price_history: None,
        buyer_budget: None,
        seller_cost: None,
    }
}

pub fn parse_transcript(text: &str) -> Result<TextTranscript, ReplayError> {
    if text.trim().is_empty() {
        return Err(ReplayError::Empty);
    }
    let lines: Vec<&str> = text.lines().collect();
    let first_block = lines.iter().position(|l| l.starts_with("---")).unwrap_or(lines.len());

    let mut fields: Vec<(&str, &str, usize)> = Vec::new();
    for (i, line) in lines[..first_block].iter().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (key, value) = trimmed
            .split_once(':')
            .ok_or_else(|| header_error(line_no, format!("expected `key: value`, got {trimmed:?}")))?;
        fields.push((key.trim(), value.trim(), line_no));
    }
    let get = |key: &str| fields.iter().find(|(k, _, _)| *k == key);
    let need = |key: &str| get(key).ok_or_else(|| header_error(first_block.max(1), format!("missing `{key}` header")));
    let money = |key: &str| -> Result<Money, ReplayError> {
        let (_, v, line) = need(key)?;
        Money::parse(v).map_err(|e| header_error(*line, e.to_string()))
    };
    let number = |key: &str, default: u32| -> Result<u32, ReplayError> {
        match get(key) {
            None => Ok(default),
            Some((_, v, line)) => v.parse().map_err(|_| header_error(*line, format!("{key} must be an integer"))),
        }
    };

    let codename = need("codename")?.1;
    let title = get("title").map_or(codename, |f| f.1);
    let grammar = match get("grammar") {
        None => Grammar::Labeled,
        Some((_, v, line)) => v.parse().map_err(|e: String| header_error(*line, e))?,
    };
    let scenario = build_scenario(
        bare_product(codename, title, money("list_price")?),
        money("budget")?,
        money("cost")?,
        number("quantity", 1)?,
        number("max_turns", DEFAULT_MAX_TURNS)?,
    )?;

    let mut turns = Vec::new();
    let mut i = first_block;
    while i < lines.len() {
        let marker_line = i + 1;
        let role = match lines[i].trim_start_matches('-').trim().to_ascii_lowercase().as_str() {
            "buyer" => Role::Buyer,
            "seller" => Role::Seller,
            other => return Err(header_error(marker_line, format!("unknown turn marker {other:?}"))),
        };
        let end = lines[i + 1..].iter().position(|l| l.starts_with("---")).map_or(lines.len(), |p| i + 1 + p);
        let raw = lines[i + 1..end].join("\n").trim().to_string();
        parse_turn(&raw, role, grammar, scenario.codename()).map_err(|violation| ReplayError::Turn {
            line: marker_line,
            role,
            violation,
        })?;
        turns.push((role, raw, marker_line));
        i = end;
    }
    Ok(TextTranscript { scenario, grammar, turns })
}

fn replay_raw(
    scenario: &Scenario,
    buyer: (Vec<String>, Grammar),
    seller: (Vec<String>, Grammar),
    seed: u64,
) -> Result<(EpisodeRecord, usize, usize), ReplayError> {
    let buyer = ReplayAgent::new(buyer.0, buyer.1);
    let seller = ReplayAgent::new(seller.0, seller.1);
    let config = EngineConfig { seller_max_attempts: 1, ..EngineConfig::default() };
    match run_episode(&buyer, &seller, scenario, &config, seed) {
        Ok(record) => Ok((record, buyer.remaining(), seller.remaining())),
        Err(EngineError::Agent { source: AgentError::Exhausted(_), .. }) => Err(ReplayError::Incomplete),
        Err(e) => Err(ReplayError::Engine(e)),
    }
}

/// Recomputes the outcome of a text transcript from its raw turns.
pub fn replay_transcript(transcript: &TextTranscript) -> Result<EpisodeRecord, ReplayError> {
    let side = |role: Role| -> Vec<String> {
        transcript.turns.iter().filter(|(r, _, _)| *r == role).map(|(_, raw, _)| raw.clone()).collect()
    };
    let (record, _, _) = replay_raw(
        &transcript.scenario,
        (side(Role::Buyer), transcript.grammar),
        (side(Role::Seller), transcript.grammar),
        0,
    )?;
    let used = record.transcript.len() + usize::from(record.violation.is_some());
    if let Some((_, _, line)) = transcript.turns.get(used) {
        return Err(ReplayError::Trailing { line: *line });
    }
    Ok(record)
}

/// Recomputes a logged episode from the raw text of its turns.
pub fn replay_log(log: &EpisodeLog) -> Result<EpisodeRecord, ReplayError> {
    let scenario = build_scenario(
        bare_product(&log.codename, &log.title, log.list_price),
        log.budget,
        log.cost,
        log.quantity,
        log.max_turns,
    )?;
    let side = |role: Role| {
        let turns: Vec<_> = log.turns.iter().filter(|t| t.role == role).collect();
        let grammar = turns.first().map_or(Grammar::Labeled, |t| t.grammar);
        (turns.into_iter().map(|t| t.raw.clone()).collect::<Vec<_>>(), grammar)
    };
    let mut buyer = side(Role::Buyer);
    if let Some(v) = &log.violation {
        buyer.0.push(v.raw.clone());
    }
    let (record, buyer_left, seller_left) = replay_raw(&scenario, buyer, side(Role::Seller), log.seed)?;
    if buyer_left + seller_left > 0 {
        return Err(ReplayError::Trailing { line: 0 });
    }
    Ok(record)
}
