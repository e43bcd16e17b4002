use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::catalog::Scenario;

const BUYER_SYSTEM: &str = include_str!("templates/buyer_system.txt");
const SELLER_SYSTEM: &str = include_str!("templates/seller_system.txt");
const BUYER_CONTEXT: &str = include_str!("templates/buyer_context.txt");
const SELLER_CONTEXT: &str = include_str!("templates/seller_context.txt");
const PERSONA_BEGGING: &str = include_str!("templates/persona_begging.txt");
const PERSONA_INSULTING: &str = include_str!("templates/persona_insulting.txt");
const PERSONA_UNYIELDING: &str = include_str!("templates/persona_unyielding.txt");

const PERSONA_PLACEHOLDER: &str = "{persona_block}";

pub const DEFAULT_DESCRIPTION_CHARS: usize = 600;

/// Seller behavioral persona injected into the seller system prompt.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Persona {
    #[default]
    Default,
    Begging,
    Insulting,
    Unyielding,
}

impl Persona {
    pub const ALL: [Persona; 4] = [Persona::Default, Persona::Begging, Persona::Insulting, Persona::Unyielding];

    /// Paragraph substituted for the placeholder; empty for the default persona.
    pub fn block_text(self) -> &'static str {
        match self {
            Persona::Default => "",
            Persona::Begging => PERSONA_BEGGING.trim_end(),
            Persona::Insulting => PERSONA_INSULTING.trim_end(),
            Persona::Unyielding => PERSONA_UNYIELDING.trim_end(),
        }
    }
}

impl fmt::Display for Persona {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Persona::Default => "default",
            Persona::Begging => "begging",
            Persona::Insulting => "insulting",
            Persona::Unyielding => "unyielding",
        })
    }
}

impl FromStr for Persona {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "default" => Ok(Persona::Default),
            "begging" => Ok(Persona::Begging),
            "insulting" => Ok(Persona::Insulting),
            "unyielding" => Ok(Persona::Unyielding),
            other => Err(format!("unknown persona {other:?}")),
        }
    }
}

/// Fixed instructions plus the per-episode context block.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Prompt {
    pub system: String,
    pub context: String,
}

/// Single-pass `{key}` substitution; substituted values are never rescanned.
fn fill(template: &str, values: &[(&str, String)]) -> String {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}').and_then(|close| {
            let key = &after[..close];
            values.iter().find(|(k, _)| *k == key).map(|(_, v)| (close, v))
        }) {
            Some((close, value)) => {
                out.push_str(value);
                rest = &after[close + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

fn truncate_chars(text: &str, limit: usize) -> String {
    match text.char_indices().nth(limit) {
        None => text.to_string(),
        Some((cut, _)) => format!("{} ...", text[..cut].trim_end()),
    }
}

fn shared_values(scenario: &Scenario, description_chars: usize) -> Vec<(&'static str, String)> {
    let product = scenario.product();
    vec![
        ("codename", product.codename.clone()),
        ("title", product.title.clone()),
        ("description", truncate_chars(&product.description, description_chars)),
        ("list_price", product.list_price.to_short_decimal()),
        ("quantity", scenario.quantity().to_string()),
        ("max_turns", scenario.max_turns().to_string()),
    ]
}

/// Buyer prompt. The seller's cost never appears in it.
pub fn assemble_buyer_prompt(scenario: &Scenario, description_chars: usize) -> Prompt {
    let mut values = shared_values(scenario, description_chars);
    values.push(("budget", scenario.budget().to_string()));
    Prompt { system: BUYER_SYSTEM.trim_end().to_string(), context: fill(BUYER_CONTEXT, &values).trim_end().to_string() }
}

/// Seller prompt with `persona` substituted at the placeholder. The buyer's
/// budget never appears in it.
pub fn assemble_seller_prompt(scenario: &Scenario, persona: Persona, description_chars: usize) -> Prompt {
    let mut values = shared_values(scenario, description_chars);
    values.push(("cost", scenario.cost().to_string()));
    Prompt {
        system: SELLER_SYSTEM.trim_end().replacen(PERSONA_PLACEHOLDER, persona.block_text(), 1),
        context: fill(SELLER_CONTEXT, &values).trim_end().to_string(),
    }
}
