//! Inputs shared by the benchmarks.

use haggle_core::catalog::synth_scenarios;
use haggle_core::protocol::{serialize_turn, ActionKind, Offer};
use haggle_core::{Grammar, Money, Role, Scenario, TurnMessage};

pub fn scenarios(count: usize, ci_fraction: f64) -> Vec<Scenario> {
    synth_scenarios(42, count, (Money::from_dollars(10), Money::from_dollars(500)), ci_fraction)
        .expect("valid synthetic range")
}

/// One serialized buyer turn per grammar, in the shape models produce.
pub fn raw_turns() -> Vec<(Grammar, String)> {
    let offer = Offer::new(Money::from_cents(5_000), 1, "beauty_29".to_string());
    [Grammar::Labeled, Grammar::Tagged]
        .into_iter()
        .map(|g| {
            let turn = TurnMessage::compose(
                Role::Buyer,
                g,
                "The list price is $70 and my budget is $56, so I will open well below both.",
                "I'm interested in beauty_29, but $70 is too high. How about $50 for one?",
                ActionKind::Buy(offer.clone()),
                "beauty_29",
            );
            (g, serialize_turn(&turn, g, "beauty_29"))
        })
        .collect()
}
