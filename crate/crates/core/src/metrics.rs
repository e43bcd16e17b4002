//! Episode metrics: reward, deal rate, bargained ratio, first-offer ratio,
//! price overshoot and episode length, with mean and standard error and an
//! MI/CI split.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::EpisodeRecord;
use crate::money::Money;
use crate::reward::ScenarioClass;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("no rows to aggregate{0}")]
    Empty(&'static str),
    #[error("bargained ratio needs a completed deal")]
    NotADeal,
    #[error("budget equals cost ({0})")]
    EqualLimits(Money),
    #[error("csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRow {
    pub scenario_class: ScenarioClass,
    pub reward: f64,
    pub dealt: bool,
    pub price_final: Option<Money>,
    pub bargained_ratio: Option<f64>,
    pub first_offer_ratio: Option<f64>,
    pub overshoot: bool,
    pub turns_used: u32,
}

impl OutcomeRow {
    pub fn from_record(record: &EpisodeRecord) -> OutcomeRow {
        let s = &record.scenario;
        let price_final = record.outcome.kind.price_final();
        OutcomeRow {
            scenario_class: record.class(),
            reward: record.reward,
            dealt: price_final.is_some(),
            price_final,
            bargained_ratio: price_final
                .map(|p| bargained_ratio(s.budget(), s.cost(), p).expect("scenario limits differ")),
            first_offer_ratio: first_offer_ratio(record),
            overshoot: record.overshoot,
            turns_used: record.outcome.turns_used,
        }
    }
}

/// `(B - P) / (B - C)`, unclipped, with a signed denominator.
pub fn bargained_ratio(budget: Money, cost: Money, price_final: Money) -> Result<f64, MetricsError> {
    if budget == cost {
        return Err(MetricsError::EqualLimits(budget));
    }
    Ok((budget.as_f64() - price_final.as_f64()) / (budget.as_f64() - cost.as_f64()))
}

/// Bargained ratio of a recorded episode; errors unless it ended in a deal.
pub fn record_bargained_ratio(record: &EpisodeRecord) -> Result<f64, MetricsError> {
    let price = record.outcome.kind.price_final().ok_or(MetricsError::NotADeal)?;
    bargained_ratio(record.scenario.budget(), record.scenario.cost(), price)
}

/// `Offer1 / B` when the buyer opened with a priced `BUY`.
pub fn first_offer_ratio(record: &EpisodeRecord) -> Option<f64> {
    record.first_buyer_offer.map(|o| o.as_f64() / record.scenario.budget().as_f64())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DealRateMode {
    All,
    MiOnly,
}

pub fn deal_rate(rows: &[OutcomeRow], mode: DealRateMode) -> Result<f64, MetricsError> {
    let population: Vec<&OutcomeRow> = rows
        .iter()
        .filter(|r| mode == DealRateMode::All || r.scenario_class == ScenarioClass::MutualInterest)
        .collect();
    if population.is_empty() {
        return Err(MetricsError::Empty(match mode {
            DealRateMode::All => "",
            DealRateMode::MiOnly => " (no MI rows)",
        }));
    }
    Ok(population.iter().filter(|r| r.dealt).count() as f64 / population.len() as f64)
}

pub fn overshoot_rate(rows: &[OutcomeRow]) -> Result<f64, MetricsError> {
    if rows.is_empty() {
        return Err(MetricsError::Empty(""));
    }
    Ok(rows.iter().filter(|r| r.overshoot).count() as f64 / rows.len() as f64)
}

/// Mean with standard error `sd / sqrt(n)` (sample sd, `n - 1`); zero SE
/// below two observations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub standard_error: f64,
    pub count: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let standard_error = if values.len() < 2 {
            0.0
        } else {
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
            var.sqrt() / n.sqrt()
        };
        Some(Stat { mean, standard_error, count: values.len() })
    }

    fn indicator(flags: impl Iterator<Item = bool>) -> Option<Stat> {
        Stat::of(&flags.map(|b| if b { 1.0 } else { 0.0 }).collect::<Vec<_>>())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricBlock {
    pub reward: Stat,
    pub deal_rate: Stat,
    /// Over deals only.
    pub bargained_ratio: Option<Stat>,
    /// Over episodes whose first buyer action carried a price.
    pub first_offer_ratio: Option<Stat>,
    pub overshoot_rate: Stat,
    pub episode_length: Stat,
}

impl MetricBlock {
    fn of(rows: &[&OutcomeRow]) -> Option<MetricBlock> {
        if rows.is_empty() {
            return None;
        }
        let values = |f: &dyn Fn(&OutcomeRow) -> Option<f64>| rows.iter().filter_map(|r| f(r)).collect::<Vec<_>>();
        Some(MetricBlock {
            reward: Stat::of(&values(&|r| Some(r.reward)))?,
            deal_rate: Stat::indicator(rows.iter().map(|r| r.dealt))?,
            bargained_ratio: Stat::of(&values(&|r| r.bargained_ratio)),
            first_offer_ratio: Stat::of(&values(&|r| r.first_offer_ratio)),
            overshoot_rate: Stat::indicator(rows.iter().map(|r| r.overshoot))?,
            episode_length: Stat::of(&values(&|r| Some(f64::from(r.turns_used))))?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub all: MetricBlock,
    /// Deal rate over MI episodes only.
    pub deal_rate_mi: Option<Stat>,
    pub mi: Option<MetricBlock>,
    pub ci: Option<MetricBlock>,
    /// Episodes dropped for infrastructure failures; not in any denominator.
    pub excluded: usize,
}

pub fn aggregate(rows: &[OutcomeRow]) -> Result<MetricsSummary, MetricsError> {
    let all: Vec<&OutcomeRow> = rows.iter().collect();
    let of_class = |c| rows.iter().filter(|r| r.scenario_class == c).collect::<Vec<_>>();
    let mi = MetricBlock::of(&of_class(ScenarioClass::MutualInterest));
    Ok(MetricsSummary {
        all: MetricBlock::of(&all).ok_or(MetricsError::Empty(""))?,
        deal_rate_mi: mi.as_ref().map(|b| b.deal_rate),
        mi,
        ci: MetricBlock::of(&of_class(ScenarioClass::ConflictOfInterest)),
        excluded: 0,
    })
}

const CURVE_METRICS: [&str; 6] =
    ["reward", "deal_rate", "bargained_ratio", "first_offer_ratio", "overshoot_rate", "episode_length"];

fn block_cells(block: Option<&MetricBlock>) -> Vec<String> {
    let stat = |s: Option<Stat>| match s {
        Some(s) => vec![s.mean.to_string(), s.standard_error.to_string()],
        None => vec![String::new(), String::new()],
    };
    let b = block;
    [
        b.map(|b| b.reward),
        b.map(|b| b.deal_rate),
        b.and_then(|b| b.bargained_ratio),
        b.and_then(|b| b.first_offer_ratio),
        b.map(|b| b.overshoot_rate),
        b.map(|b| b.episode_length),
    ]
    .into_iter()
    .flat_map(stat)
    .collect()
}

/// Curve header: `iteration`, then `<metric>` and `<metric>_se` per metric
/// (`reward_mean` for the reward), `deal_rate_mi_only`, and with `split` the same
/// block again suffixed `_mi` and `_ci`.
pub fn curve_header(split: bool) -> Vec<String> {
    let block = |suffix: &str| -> Vec<String> {
        CURVE_METRICS
            .iter()
            .flat_map(|m| {
                let mean = if *m == "reward" { "reward_mean".to_string() } else { m.to_string() };
                [format!("{mean}{suffix}"), format!("{m}_se{suffix}")]
            })
            .collect()
    };
    let mut header = vec!["iteration".to_string()];
    header.extend(block(""));
    header.push("deal_rate_mi_only".to_string());
    if split {
        header.extend(block("_mi"));
        header.extend(block("_ci"));
    }
    header
}

/// One CSV row per iteration summary.
pub fn export_curves(summaries: &[MetricsSummary], split: bool) -> Result<String, MetricsError> {
    let csv_err = |e: csv::Error| MetricsError::Csv(e.to_string());
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(curve_header(split)).map_err(csv_err)?;
    for (i, s) in summaries.iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(block_cells(Some(&s.all)));
        row.push(s.deal_rate_mi.map_or(String::new(), |d| d.mean.to_string()));
        if split {
            row.extend(block_cells(s.mi.as_ref()));
            row.extend(block_cells(s.ci.as_ref()));
        }
        w.write_record(row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| MetricsError::Csv(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Markdown,
}

pub const REPORT_COLUMNS: [&str; 7] =
    ["Model", "Reward", "Deal Rate (all)", "Deal Rate (MI)", "Bargained Ratio", "Price Overshoot Rate", "Episodes"];

fn pm(stat: Option<Stat>) -> String {
    stat.map_or_else(|| "n/a".to_string(), |s| format!("{:.4} ± {:.4}", s.mean, s.standard_error))
}

/// Report table with one row per model, each cell `mean ± SE`.
pub fn render_report(rows: &[(String, MetricsSummary)], format: ReportFormat) -> Result<String, MetricsError> {
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|(model, s)| {
            vec![
                model.clone(),
                pm(Some(s.all.reward)),
                pm(Some(s.all.deal_rate)),
                pm(s.deal_rate_mi),
                pm(s.all.bargained_ratio),
                pm(Some(s.all.overshoot_rate)),
                s.all.reward.count.to_string(),
            ]
        })
        .collect();
    match format {
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(REPORT_COLUMNS).map_err(|e| MetricsError::Csv(e.to_string()))?;
            for row in &cells {
                w.write_record(row).map_err(|e| MetricsError::Csv(e.to_string()))?;
            }
            let bytes = w.into_inner().map_err(|e| MetricsError::Csv(e.to_string()))?;
            Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
        }
        ReportFormat::Markdown => {
            let mut out = format!("| {} |\n", REPORT_COLUMNS.join(" | "));
            out.push_str(&format!("|{}\n", "---|".repeat(REPORT_COLUMNS.len())));
            for row in &cells {
                out.push_str(&format!("| {} |\n", row.join(" | ")));
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn row(class: ScenarioClass, reward: f64, dealt: bool) -> OutcomeRow {
        OutcomeRow {
            scenario_class: class,
            reward,
            dealt,
            price_final: dealt.then(|| Money::from_dollars(30)),
            bargained_ratio: dealt.then_some(reward),
            first_offer_ratio: Some(0.5),
            overshoot: false,
            turns_used: 3,
        }
    }

    const MI: ScenarioClass = ScenarioClass::MutualInterest;
    const CI: ScenarioClass = ScenarioClass::ConflictOfInterest;

    #[test]
    fn bargained_ratio_examples() {
        let (b, c) = (Money::from_cents(5600), Money::from_cents(2324));
        assert_abs_diff_eq!(bargained_ratio(b, c, Money::from_dollars(30)).unwrap(), 26.0 / 32.76, epsilon = 1e-12);
        assert_eq!(bargained_ratio(b, c, b).unwrap(), 0.0);
        assert_eq!(bargained_ratio(b, c, c).unwrap(), 1.0);
        assert!(bargained_ratio(b, b, c).is_err());
    }

    #[test]
    fn deal_rate_examples() {
        let rows =
            vec![row(MI, 1.0, true), row(MI, 1.0, true), row(MI, 1.0, true), row(MI, 0.0, false), row(CI, -1.0, true)];
        assert_eq!(deal_rate(&rows, DealRateMode::MiOnly).unwrap(), 0.75);
        assert_eq!(deal_rate(&rows, DealRateMode::All).unwrap(), 0.8);
        assert!(deal_rate(&rows[4..], DealRateMode::MiOnly).is_err());
        assert!(deal_rate(&[], DealRateMode::All).is_err());
    }

    #[test]
    fn overshoot_examples() {
        let mut rows = vec![row(MI, 0.0, false); 4];
        assert_eq!(overshoot_rate(&rows).unwrap(), 0.0);
        rows[2].overshoot = true;
        assert_eq!(overshoot_rate(&rows).unwrap(), 0.25);
        assert!(overshoot_rate(&[]).is_err());
    }

    #[test]
    fn standard_error_conventions() {
        let s = Stat::of(&[1.0, 0.0]).unwrap();
        assert_eq!(s.mean, 0.5);
        assert_eq!(s.standard_error, 0.5);
        assert_eq!(Stat::of(&[0.3]).unwrap().standard_error, 0.0);
        assert_eq!(Stat::of(&[0.3, 0.3, 0.3]).unwrap().standard_error, 0.0);
        assert!(Stat::of(&[]).is_none());
    }

    #[test]
    fn aggregate_splits_by_class() {
        let rows = vec![row(MI, 1.0, true), row(MI, 0.0, false), row(CI, 0.0, false)];
        let s = aggregate(&rows).unwrap();
        assert_eq!(s.all.reward.count, 3);
        assert_eq!(s.mi.as_ref().unwrap().reward.count, 2);
        assert_eq!(s.ci.as_ref().unwrap().deal_rate.mean, 0.0);
        assert_eq!(s.deal_rate_mi.unwrap().mean, 0.5);
        assert_eq!(s.all.bargained_ratio.unwrap().count, 1);
        assert!(aggregate(&[]).is_err());
        let only_ci = aggregate(&rows[2..]).unwrap();
        assert!(only_ci.mi.is_none() && only_ci.deal_rate_mi.is_none());
    }

    #[test]
    fn removing_undealt_ci_rows_never_lowers_the_deal_rate() {
        let rows = vec![row(MI, 1.0, true), row(MI, 0.0, false), row(CI, 0.0, false), row(CI, 0.0, false)];
        let all = deal_rate(&rows, DealRateMode::All).unwrap();
        let mi = deal_rate(&rows, DealRateMode::MiOnly).unwrap();
        assert!(mi >= all);
    }

    #[test]
    fn curves_have_one_row_per_iteration() {
        assert_eq!(export_curves(&[], false).unwrap().lines().count(), 1);
        let s = aggregate(&[row(MI, 1.0, true), row(CI, 0.0, false)]).unwrap();
        let csv = export_curves(&vec![s; 60], true).unwrap();
        assert_eq!(csv.lines().count(), 61);
        let header = csv.lines().next().unwrap();
        for col in [
            "iteration",
            "reward_mean",
            "reward_se",
            "deal_rate",
            "bargained_ratio",
            "first_offer_ratio",
            "overshoot_rate",
            "episode_length",
            "reward_mean_mi",
            "overshoot_rate_ci",
        ] {
            assert!(header.split(',').any(|c| c == col), "missing {col}");
        }
        let unsplit = export_curves(&[], false).unwrap();
        assert!(!unsplit.contains("_ci"));
    }

    #[test]
    fn report_cells_are_mean_plus_minus_se() {
        let s = aggregate(&[row(MI, 1.0, true), row(MI, 0.0, false)]).unwrap();
        let md = render_report(&[("toy".into(), s.clone())], ReportFormat::Markdown).unwrap();
        assert!(md.starts_with("| Model | Reward |"));
        assert!(md.contains("| toy | 0.5000 ± 0.5000 |"));
        let csv = render_report(&[("toy".into(), s)], ReportFormat::Csv).unwrap();
        assert_eq!(csv.lines().count(), 2);
    }
}
