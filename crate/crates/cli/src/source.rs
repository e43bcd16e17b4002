//! Scenario and opponent selection shared by the subcommands.

use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, ValueEnum};
use serde::Serialize;

use haggle_core::agents::ScriptedPolicy;
use haggle_core::catalog::{load_catalog, read_split_manifest, scenarios_from_catalog, synth_scenarios, FieldMap};
use haggle_core::{Money, Role, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Train,
    Test,
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(rename_all = "snake_case")]
pub struct FieldArgs {
    /// Record key holding the product codename.
    #[arg(long, default_value = "codename")]
    pub codename_field: String,
    /// Record key holding the buyer budget.
    #[arg(long, default_value = "buyer_budget")]
    pub budget_field: String,
    /// Record key holding the seller cost.
    #[arg(long, default_value = "seller_cost")]
    pub cost_field: String,
}

impl FieldArgs {
    pub fn field_map(&self) -> FieldMap {
        FieldMap {
            codename: self.codename_field.clone(),
            budget: self.budget_field.clone(),
            cost: self.cost_field.clone(),
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
#[command(rename_all = "snake_case")]
pub struct ScenarioArgs {
    /// Product catalog (JSON array or JSON lines).
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// Split manifest written by `haggle split`.
    #[arg(long, requires = "catalog")]
    pub manifest: Option<PathBuf>,
    /// Manifest section to use.
    #[arg(long, value_enum)]
    pub split: Option<Part>,
    /// Generate this many synthetic scenarios instead of reading a catalog.
    #[arg(long, conflicts_with = "catalog")]
    pub synth: Option<usize>,
    /// Seed for synthetic scenarios and for economics drawn for catalog records.
    #[arg(long, default_value_t = 0)]
    pub scenario_seed: u64,
    /// Share of conflict-of-interest draws.
    #[arg(long, default_value_t = 0.0)]
    pub ci_fraction: f64,
    /// Synthetic list price range in dollars.
    #[arg(long, default_value = "10.00")]
    pub min_price: Money,
    #[arg(long, default_value = "500.00")]
    pub max_price: Money,
    #[arg(long, default_value_t = 1)]
    pub quantity: u32,
    /// Keep only the first N scenarios.
    #[arg(long)]
    pub limit: Option<usize>,
    #[command(flatten)]
    pub fields: FieldArgs,
}

impl ScenarioArgs {
    pub fn resolve(&self, max_turns: u32, default_part: Part, default_synth: Option<usize>) -> Result<Vec<Scenario>> {
        let mut scenarios = match (&self.catalog, self.synth.or(default_synth)) {
            (Some(path), _) => {
                let products = load_catalog(path, &self.fields.field_map())
                    .with_context(|| format!("reading catalog {}", path.display()))?;
                let products = match &self.manifest {
                    None => products,
                    Some(manifest) => {
                        let text = fs::read_to_string(manifest)
                            .with_context(|| format!("reading manifest {}", manifest.display()))?;
                        let (train, test) = read_split_manifest(&text)?;
                        let wanted = match self.split.unwrap_or(default_part) {
                            Part::Train => train,
                            Part::Test => test,
                        };
                        let by_name: HashMap<&str, _> = products.iter().map(|p| (p.codename.as_str(), p)).collect();
                        wanted
                            .iter()
                            .map(|c| {
                                by_name
                                    .get(c.as_str())
                                    .map(|p| (*p).clone())
                                    .with_context(|| format!("manifest codename {c} is not in the catalog"))
                            })
                            .collect::<Result<Vec<_>>>()?
                    }
                };
                scenarios_from_catalog(&products, self.scenario_seed, self.ci_fraction, self.quantity, max_turns)?
            }
            (None, Some(count)) => {
                let range = (self.min_price, self.max_price);
                synth_scenarios(self.scenario_seed, count, range, self.ci_fraction)?
                    .iter()
                    .map(|s| s.with_max_turns(max_turns))
                    .collect::<Result<Vec<_>, _>>()?
            }
            (None, None) => bail!("pass --catalog or --synth to choose scenarios"),
        };
        if let Some(limit) = self.limit {
            scenarios.truncate(limit);
        }
        ensure!(!scenarios.is_empty(), "no scenarios selected");
        Ok(scenarios)
    }
}

/// Named scripted policies; anything else is read as a JSON policy file.
pub const PRESETS: [&str; 4] = ["buyer", "seller", "adversarial-seller", "over-budget-buyer"];

pub fn scripted_policy(spec: &str, role: Role) -> Result<ScriptedPolicy> {
    let policy = match spec {
        "buyer" => ScriptedPolicy::buyer(),
        "seller" => ScriptedPolicy::seller(),
        "adversarial-seller" => ScriptedPolicy::adversarial_seller(),
        "over-budget-buyer" => ScriptedPolicy {
            opening_ratio: 1.0,
            tick: Money::CENT,
            price_offset: Money::CENT,
            respect_limit: false,
            ..ScriptedPolicy::buyer()
        },
        path => {
            let text = fs::read_to_string(path).with_context(|| {
                format!("{path:?} is neither a preset ({}) nor a readable file", PRESETS.join(", "))
            })?;
            serde_json::from_str(&text).with_context(|| format!("parsing policy file {path}"))?
        }
    };
    ensure!(policy.role == role, "policy {spec:?} plays the {} but a {role} is needed", policy.role);
    policy.validate().map_err(anyhow::Error::msg).with_context(|| format!("policy {spec:?}"))?;
    Ok(policy)
}
