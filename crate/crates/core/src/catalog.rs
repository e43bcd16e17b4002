//! Product ingestion, scenario construction and deterministic splits.
//!
//! Catalog files are JSON arrays or JSON-lines of listing records. Every money
//! field is text of the form `"$469.99"`. Records may carry the private
//! economics (`buyer_budget`, `seller_cost`) and a `codename`; the names of
//! those extension fields are configurable through [`FieldMap`].

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::money::Money;

pub const DEFAULT_MAX_TURNS: u32 = 6;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("reading catalog: {0}")]
    Io(#[from] io::Error),
    #[error("catalog is not valid JSON: {0}")]
    Json(String),
    #[error("record {index}: field `{field}`: {reason}")]
    Record { index: usize, field: String, reason: String },
    #[error("record {index}: duplicate codename {codename:?}")]
    DuplicateCodename { index: usize, codename: String },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("split asks for {requested} products but the catalog holds {available}")]
    SplitTooLarge { requested: usize, available: usize },
    #[error("price range {lo}..{hi} is degenerate")]
    DegenerateRange { lo: Money, hi: Money },
    #[error("fraction {0} is outside [0, 1]")]
    InvalidFraction(f64),
    #[error("malformed split manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
}

/// Historical price extrema carried as context only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriceHistory {
    pub current: Money,
    pub average: Money,
    pub lowest: Money,
    pub highest: Money,
    pub current_date: Option<String>,
    pub lowest_date: Option<String>,
    pub highest_date: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Product {
    pub codename: String,
    pub title: String,
    pub category: String,
    pub description: String,
    pub features: String,
    pub list_price: Money,
    pub price_history: Option<PriceHistory>,
    /// Buyer budget, when the source record carries one.
    pub buyer_budget: Option<Money>,
    /// Seller cost, when the source record carries one.
    pub seller_cost: Option<Money>,
}

/// Record keys for the fields that vary between dataset releases.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldMap {
    pub codename: String,
    pub budget: String,
    pub cost: String,
}

impl Default for FieldMap {
    fn default() -> Self {
        Self { codename: "codename".into(), budget: "buyer_budget".into(), cost: "seller_cost".into() }
    }
}

/// One negotiation instance: a product plus both parties' private limits.
///
/// `budget` and `cost` are totals for the whole ordered quantity. The
/// constructor rejects `budget == cost`, so every value of this type has a
/// well-defined reward denominator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ScenarioFields", into = "ScenarioFields")]
pub struct Scenario {
    product: Product,
    budget: Money,
    cost: Money,
    quantity: u32,
    max_turns: u32,
}

#[derive(Serialize, Deserialize)]
struct ScenarioFields {
    product: Product,
    budget: Money,
    cost: Money,
    quantity: u32,
    max_turns: u32,
}

impl TryFrom<ScenarioFields> for Scenario {
    type Error = CatalogError;

    fn try_from(f: ScenarioFields) -> Result<Self, Self::Error> {
        build_scenario(f.product, f.budget, f.cost, f.quantity, f.max_turns)
    }
}

impl From<Scenario> for ScenarioFields {
    fn from(s: Scenario) -> Self {
        ScenarioFields {
            product: s.product,
            budget: s.budget,
            cost: s.cost,
            quantity: s.quantity,
            max_turns: s.max_turns,
        }
    }
}

impl Scenario {
    pub fn product(&self) -> &Product {
        &self.product
    }
    pub fn codename(&self) -> &str {
        &self.product.codename
    }
    pub fn list_price(&self) -> Money {
        self.product.list_price
    }
    pub fn budget(&self) -> Money {
        self.budget
    }
    pub fn cost(&self) -> Money {
        self.cost
    }
    pub fn quantity(&self) -> u32 {
        self.quantity
    }
    pub fn max_turns(&self) -> u32 {
        self.max_turns
    }
    /// Mutual interest: a price in `[cost, budget]` exists.
    pub fn is_mutual_interest(&self) -> bool {
        self.budget > self.cost
    }

    pub fn with_max_turns(&self, max_turns: u32) -> Result<Scenario, CatalogError> {
        build_scenario(self.product.clone(), self.budget, self.cost, self.quantity, max_turns)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub train_count: usize,
    pub test_count: usize,
}

pub fn build_scenario(
    product: Product,
    budget: Money,
    cost: Money,
    quantity: u32,
    max_turns: u32,
) -> Result<Scenario, CatalogError> {
    if budget == cost {
        return Err(CatalogError::InvalidScenario(format!(
            "budget and cost are both {budget}; the reward is undefined when they coincide"
        )));
    }
    if !budget.is_positive() || !cost.is_positive() {
        return Err(CatalogError::InvalidScenario(format!("budget {budget} and cost {cost} must both be positive")));
    }
    if quantity == 0 {
        return Err(CatalogError::InvalidScenario("quantity must be at least 1".into()));
    }
    if max_turns == 0 {
        return Err(CatalogError::InvalidScenario("max_turns must be at least 1".into()));
    }
    if product.codename.is_empty() {
        return Err(CatalogError::InvalidScenario("product codename is empty".into()));
    }
    Ok(Scenario { product, budget, cost, quantity, max_turns })
}

/// Loads a catalog from a JSON array or JSON-lines file.
pub fn load_catalog(path: &Path, field_map: &FieldMap) -> Result<Vec<Product>, CatalogError> {
    let text = fs::read_to_string(path)?;
    parse_catalog(&text, field_map)
}

pub fn parse_catalog(text: &str, field_map: &FieldMap) -> Result<Vec<Product>, CatalogError> {
    let trimmed = text.trim_start();
    let records: Vec<Value> = if trimmed.is_empty() {
        Vec::new()
    } else if trimmed.starts_with('[') {
        serde_json::from_str(trimmed).map_err(|e| CatalogError::Json(e.to_string()))?
    } else {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(n, l)| serde_json::from_str(l).map_err(|e| CatalogError::Json(format!("line {}: {e}", n + 1))))
            .collect::<Result<_, _>>()?
    };

    let mut seen = HashSet::new();
    let mut per_category: BTreeMap<String, usize> = BTreeMap::new();
    let mut products = Vec::with_capacity(records.len());
    for (index, record) in records.iter().enumerate() {
        let mut product = product_from_record(index, record, field_map)?;
        if product.codename.is_empty() {
            let slot = per_category.entry(product.category.clone()).or_insert(0);
            product.codename = format!("{}_{}", category_slug(&product.category), slot);
            *slot += 1;
        }
        if !seen.insert(product.codename.clone()) {
            return Err(CatalogError::DuplicateCodename { index, codename: product.codename });
        }
        products.push(product);
    }
    Ok(products)
}

fn category_slug(category: &str) -> String {
    let slug: String =
        category.chars().map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' }).collect();
    if slug.is_empty() {
        "item".into()
    } else {
        slug
    }
}

fn product_from_record(index: usize, record: &Value, map: &FieldMap) -> Result<Product, CatalogError> {
    let obj = record.as_object().ok_or_else(|| CatalogError::Record {
        index,
        field: "<record>".into(),
        reason: "expected a JSON object".into(),
    })?;
    let err = |field: &str, reason: String| CatalogError::Record { index, field: field.to_string(), reason };
    let text = |field: &str, required: bool| -> Result<Option<String>, CatalogError> {
        match obj.get(field) {
            None | Some(Value::Null) if required => Err(err(field, "missing".into())),
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(other) => Err(err(field, format!("expected text, found {other}"))),
        }
    };
    let money = |field: &str, required: bool| -> Result<Option<Money>, CatalogError> {
        match obj.get(field) {
            None | Some(Value::Null) if required => Err(err(field, "missing".into())),
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Money::parse(s).map(Some).map_err(|e| err(field, e.to_string())),
            Some(Value::Number(n)) => Money::parse(&n.to_string()).map(Some).map_err(|e| err(field, e.to_string())),
            Some(other) => Err(err(field, format!("expected a price, found {other}"))),
        }
    };

    let title = text("title", true)?.unwrap_or_default();
    let category = text("category", true)?.unwrap_or_default();
    let list_price = money("list_price", true)?.unwrap_or_default();
    if !list_price.is_positive() {
        return Err(err("list_price", "must be positive".into()));
    }
    let description = text("description", false)?.unwrap_or_default();
    let features = text("features", false)?.unwrap_or_default();
    let codename = text(&map.codename, false)?.unwrap_or_default();

    let history = match (
        money("current_price", false)?,
        money("average_price", false)?,
        money("lowest_price", false)?,
        money("highest_price", false)?,
    ) {
        (Some(current), Some(average), Some(lowest), Some(highest)) => Some(PriceHistory {
            current,
            average,
            lowest,
            highest,
            current_date: text("current_price_date", false)?,
            lowest_date: text("lowest_price_date", false)?,
            highest_date: text("highest_price_date", false)?,
        }),
        _ => None,
    };

    Ok(Product {
        codename,
        title,
        category,
        description,
        features,
        list_price,
        price_history: history,
        buyer_budget: money(&map.budget, false)?,
        seller_cost: money(&map.cost, false)?,
    })
}

/// Catalog record layout used when writing products back out.
#[derive(Serialize)]
struct RecordOut<'a> {
    codename: &'a str,
    title: &'a str,
    category: &'a str,
    list_price: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    current_price: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    average_price: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lowest_price: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    highest_price: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lowest_price_date: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    highest_price_date: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    current_price_date: Option<&'a str>,
    description: &'a str,
    features: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    buyer_budget: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seller_cost: Option<String>,
}

/// Serializes products as a JSON array in the ingestion layout, using the
/// default [`FieldMap`] names for extension fields.
pub fn catalog_to_json(products: &[Product]) -> String {
    let records: Vec<RecordOut<'_>> = products
        .iter()
        .map(|p| {
            let h = p.price_history.as_ref();
            RecordOut {
                codename: &p.codename,
                title: &p.title,
                category: &p.category,
                list_price: p.list_price.to_string(),
                current_price: h.map(|h| h.current.to_string()),
                average_price: h.map(|h| h.average.to_string()),
                lowest_price: h.map(|h| h.lowest.to_string()),
                highest_price: h.map(|h| h.highest.to_string()),
                lowest_price_date: h.and_then(|h| h.lowest_date.as_deref()),
                highest_price_date: h.and_then(|h| h.highest_date.as_deref()),
                current_price_date: h.and_then(|h| h.current_date.as_deref()),
                description: &p.description,
                features: &p.features,
                buyer_budget: p.buyer_budget.map(|m| m.to_string()),
                seller_cost: p.seller_cost.map(|m| m.to_string()),
            }
        })
        .collect();
    serde_json::to_string_pretty(&records).expect("catalog records always serialize")
}

/// Deterministic disjoint partition of the catalog.
pub fn split(catalog: &[Product], spec: SplitSpec) -> Result<(Vec<Product>, Vec<Product>), CatalogError> {
    let requested = spec.train_count + spec.test_count;
    if requested > catalog.len() {
        return Err(CatalogError::SplitTooLarge { requested, available: catalog.len() });
    }
    let mut order: Vec<usize> = (0..catalog.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let pick = |idx: &[usize]| idx.iter().map(|&i| catalog[i].clone()).collect::<Vec<_>>();
    let train = pick(&order[..spec.train_count]);
    let test = pick(&order[spec.train_count..requested]);
    Ok((train, test))
}

/// Split manifest: a `# train` section and a `# test` section, one codename
/// per line.
pub fn write_split_manifest(train: &[Product], test: &[Product]) -> String {
    let mut out = String::from("# train\n");
    for p in train {
        out.push_str(&p.codename);
        out.push('\n');
    }
    out.push_str("# test\n");
    for p in test {
        out.push_str(&p.codename);
        out.push('\n');
    }
    out
}

pub fn read_split_manifest(text: &str) -> Result<(Vec<String>, Vec<String>), CatalogError> {
    let (mut train, mut test) = (Vec::new(), Vec::new());
    let mut section: Option<&mut Vec<String>> = None;
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        match line {
            "" => continue,
            "# train" => section = Some(&mut train),
            "# test" => section = Some(&mut test),
            codename => match section.as_deref_mut() {
                Some(list) => list.push(codename.to_string()),
                None => {
                    return Err(CatalogError::Manifest {
                        line: n + 1,
                        reason: "codename before any section header".into(),
                    })
                }
            },
        }
    }
    Ok((train, test))
}

fn check_fraction(f: f64) -> Result<(), CatalogError> {
    if (0.0..=1.0).contains(&f) {
        Ok(())
    } else {
        Err(CatalogError::InvalidFraction(f))
    }
}

/// Draws budget and cost for a product from its list price. Mutual-interest
/// draws put cost below budget; conflict draws put cost above it.
fn draw_economics(list_price: Money, conflict: bool, rng: &mut ChaCha8Rng) -> (Money, Money) {
    let list = list_price.as_f64();
    let (mut budget, mut cost) = if conflict {
        let budget = Money::floor_to(list * rng.gen_range(0.30..0.60), Money::CENT);
        let cost = Money::ceil_to(list * rng.gen_range(0.65..0.95), Money::CENT);
        (budget, cost)
    } else {
        let budget = Money::floor_to(list * rng.gen_range(0.60..0.95), Money::CENT);
        let cost = Money::ceil_to(budget.as_f64() * rng.gen_range(0.30..0.85), Money::CENT);
        (budget, cost)
    };
    budget = budget.max(Money::CENT);
    cost = cost.max(Money::CENT);
    if conflict && cost <= budget {
        cost = budget + Money::CENT;
    }
    if !conflict && cost >= budget {
        if budget > Money::CENT {
            cost = budget - Money::CENT;
        } else {
            budget = cost + Money::CENT;
        }
    }
    (budget, cost)
}

/// Picks exactly `round(count * ci_fraction)` indices for conflict scenarios.
fn conflict_mask(count: usize, ci_fraction: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let n_ci = (count as f64 * ci_fraction).round() as usize;
    let mut mask: Vec<bool> = (0..count).map(|i| i < n_ci).collect();
    mask.shuffle(rng);
    mask
}

/// Synthetic scenarios for tests and desk-scale training.
pub fn synth_scenarios(
    seed: u64,
    count: usize,
    price_range: (Money, Money),
    ci_fraction: f64,
) -> Result<Vec<Scenario>, CatalogError> {
    let (lo, hi) = price_range;
    if lo < Money::from_dollars(1) || hi <= lo {
        return Err(CatalogError::DegenerateRange { lo, hi });
    }
    check_fraction(ci_fraction)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mask = conflict_mask(count, ci_fraction, &mut rng);
    mask.into_iter()
        .enumerate()
        .map(|(i, conflict)| {
            let list_price = Money::from_cents(rng.gen_range(lo.cents()..=hi.cents()));
            let (budget, cost) = draw_economics(list_price, conflict, &mut rng);
            let product = Product {
                codename: format!("synth_{i}"),
                title: format!("Synthetic item {i}"),
                category: "synthetic".into(),
                description: String::new(),
                features: String::new(),
                list_price,
                price_history: None,
                buyer_budget: Some(budget),
                seller_cost: Some(cost),
            };
            build_scenario(product, budget, cost, 1, DEFAULT_MAX_TURNS)
        })
        .collect()
}

/// Turns catalog products into scenarios. Economics carried by a record are
/// used as-is; records without them get seeded draws, with exactly
/// `round(n_missing * ci_fraction)` conflict draws among them.
pub fn scenarios_from_catalog(
    products: &[Product],
    seed: u64,
    ci_fraction: f64,
    quantity: u32,
    max_turns: u32,
) -> Result<Vec<Scenario>, CatalogError> {
    check_fraction(ci_fraction)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let missing = products.iter().filter(|p| p.buyer_budget.is_none() || p.seller_cost.is_none()).count();
    let mut mask = conflict_mask(missing, ci_fraction, &mut rng).into_iter();
    products
        .iter()
        .map(|p| {
            let (budget, cost) = match (p.buyer_budget, p.seller_cost) {
                (Some(b), Some(c)) => (b, c),
                _ => draw_economics(p.list_price, mask.next().unwrap_or(false), &mut rng),
            };
            build_scenario(p.clone(), budget, cost, quantity, max_turns)
        })
        .collect()
}
