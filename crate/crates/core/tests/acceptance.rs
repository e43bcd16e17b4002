//! Acceptance suite. Runs every criterion, prints one line each and exits
//! non-zero if any fails.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use haggle_core::agents::{
    assemble_buyer_prompt, assemble_seller_prompt, AcceptRule, Persona, ScriptedAgent, ScriptedPolicy,
};
use haggle_core::catalog::{build_scenario, synth_scenarios, Product, Scenario};
use haggle_core::engine::{
    parse_transcript, read_log, replay_transcript, run_episode, write_log, EngineConfig, OutcomeKind,
};
use haggle_core::grpo_lab::{group_advantages, train, TrainConfig, DEFAULT_EPSILON};
use haggle_core::metrics::{
    aggregate, deal_rate, first_offer_ratio, record_bargained_ratio, DealRateMode, OutcomeRow, Stat,
};
use haggle_core::money::Money;
use haggle_core::protocol::{parse_turn, render_public, serialize_turn, ActionKind, Grammar, Offer, Role, TurnMessage};
use haggle_core::reward::{surplus_reward, ScenarioClass};

type Check = fn() -> Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !($cond) {
            return Err(format!($($msg)+));
        }
    };
}

fn synth(seed: u64, count: usize, ci_fraction: f64) -> Vec<Scenario> {
    synth_scenarios(seed, count, (Money::from_dollars(10), Money::from_dollars(500)), ci_fraction).unwrap()
}

#[allow(clippy::manual_clamp)]
fn brute_force_reward(b: i64, c: i64, p: i64) -> f64 {
    let gap = if b > c { b - c } else { c - b };
    let raw = (b - p) as f64 / gap as f64;
    if raw > 1.0 {
        1.0
    } else if raw < -1.0 {
        -1.0
    } else {
        raw
    }
}

fn reward_oracle() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let triples: Vec<(i64, i64, i64)> = (0..10_000)
        .map(|_| loop {
            let b = rng.gen_range(1..2_000_000);
            let c = rng.gen_range(1..2_000_000);
            if b != c {
                break (b, c, rng.gen_range(1..3_000_000));
            }
        })
        .collect();
    let start = Instant::now();
    let mut worst = 0.0f64;
    for &(b, c, p) in &triples {
        let got = surplus_reward(Money::from_cents(b), Money::from_cents(c), Money::from_cents(p))
            .map_err(|e| e.to_string())?;
        worst = worst.max((got - brute_force_reward(b, c, p)).abs());
    }
    let elapsed = start.elapsed();
    ensure!(worst <= 1e-9, "max deviation {worst:e}");
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(format!("10000 triples, max deviation {worst:e}, {elapsed:?}"))
}

fn close(label: &str, got: f64, want: f64) -> Result<(), String> {
    ensure!((got - want).abs() <= 1e-6, "{label}: got {got}, want {want}");
    Ok(())
}

fn check_fixture(text: &str, price: i64, reward: f64, bargained: f64, first: f64, rounds: u32) -> Result<(), String> {
    let transcript = parse_transcript(text).map_err(|e| e.to_string())?;
    let r = replay_transcript(&transcript).map_err(|e| e.to_string())?;
    ensure!(
        r.outcome.kind == OutcomeKind::Deal { price_final: Money::from_dollars(price) },
        "outcome {:?}",
        r.outcome.kind
    );
    close("reward", r.reward, reward)?;
    close("bargained_ratio", record_bargained_ratio(&r).map_err(|e| e.to_string())?, bargained)?;
    close("first_offer_ratio", first_offer_ratio(&r).ok_or("no first offer")?, first)?;
    ensure!(r.outcome.turns_used == rounds, "rounds {} != {rounds}", r.outcome.turns_used);
    ensure!(!r.overshoot, "unexpected overshoot");
    Ok(())
}

fn fixture_replay() -> Result<String, String> {
    let baseline = include_str!("fixtures/baseline_beauty_29.txt");
    let trained = include_str!("fixtures/trained_beauty_29.txt");
    check_fixture(baseline, 56, 0.0, 0.0, 0.892857, 2).map_err(|e| format!("baseline: {e}"))?;
    check_fixture(trained, 30, 0.793651, 0.793651, 0.178571, 3).map_err(|e| format!("trained: {e}"))?;
    Ok("baseline deal $56.00 reward 0 in 2 rounds; trained deal $30.00 reward 0.793651 in 3 rounds".into())
}

fn regulation_guarantee() -> Result<String, String> {
    let scenarios = synth(3, 1000, 0.25);
    let seller = ScriptedAgent::new(ScriptedPolicy::adversarial_seller());
    let config = EngineConfig::default();
    let mut records = Vec::new();
    for (i, s) in scenarios.iter().enumerate() {
        let buyer = ScriptedAgent::new(ScriptedPolicy {
            opening_ratio: 0.3 + 0.05 * (i % 8) as f64,
            concession_step: 0.05 + 0.01 * (i % 5) as f64,
            ..ScriptedPolicy::buyer()
        });
        records.push(run_episode(&buyer, &seller, s, &config, i as u64).map_err(|e| e.to_string())?);
    }
    let deals = records.iter().filter(|r| r.is_deal()).count();
    let below = records.iter().filter(|r| r.outcome.kind.price_final().is_some_and(|p| p < r.scenario.cost())).count();
    ensure!(below == 0, "{below} deals below cost");

    let mut log = Vec::new();
    write_log(&mut log, &records).map_err(|e| e.to_string())?;
    let logs = read_log(&log[..]).map_err(|(line, e)| format!("log line {line}: {e}"))?;
    let mut intercepted = 0;
    for turn in logs.iter().flat_map(|l| &l.turns) {
        if !turn.interceptions.is_empty() || turn.substituted {
            intercepted += 1;
            ensure!(turn.regulated, "intercepted turn logged without regulated=true");
        }
    }
    ensure!(intercepted > 0, "the adversarial seller was never intercepted");
    Ok(format!("1000 episodes, {deals} deals, 0 below cost, {intercepted} regulated turns flagged"))
}

fn budget_penalty() -> Result<String, String> {
    let scenarios = synth(4, 1000, 0.5);
    let buyer = ScriptedAgent::new(ScriptedPolicy {
        opening_ratio: 1.0,
        tick: Money::CENT,
        price_offset: Money::CENT,
        respect_limit: false,
        ..ScriptedPolicy::buyer()
    });
    let seller = ScriptedAgent::new(ScriptedPolicy::seller());
    for (i, s) in scenarios.iter().enumerate() {
        let r = run_episode(&buyer, &seller, s, &EngineConfig::default(), i as u64).map_err(|e| e.to_string())?;
        let bid = r.transcript.first().and_then(|e| e.message.action.amount());
        ensure!(bid == Some(s.budget() + Money::CENT), "episode {i}: first bid {bid:?}");
        ensure!(r.transcript.len() == 1 && r.outcome.turns_used == 0, "episode {i} continued after the bid");
        ensure!(r.reward == -1.0 && r.overshoot, "episode {i}: reward {} overshoot {}", r.reward, r.overshoot);
    }
    Ok("1000/1000 episodes ended at once with reward -1.0 and overshoot".into())
}

fn ci_rationality() -> Result<String, String> {
    let scenarios = synth(5, 500, 1.0);
    let mut outcomes = [0usize; 2];
    for (i, s) in scenarios.iter().enumerate() {
        ensure!(s.budget() < s.cost(), "scenario {i} is not CI");
        let buyer = ScriptedAgent::new(ScriptedPolicy {
            opening_ratio: 0.4 + 0.1 * (i % 5) as f64,
            walk_away_round: (i % 3 == 0).then_some(3),
            ..ScriptedPolicy::buyer()
        });
        let seller = ScriptedAgent::new(ScriptedPolicy {
            accept: if i % 2 == 0 { AcceptRule::Always } else { AcceptRule::Margin(0.1) },
            ..ScriptedPolicy::seller()
        });
        let r = run_episode(&buyer, &seller, s, &EngineConfig::default(), i as u64).map_err(|e| e.to_string())?;
        match r.outcome.kind {
            OutcomeKind::DeadlockTurnLimit => outcomes[0] += 1,
            OutcomeKind::Quit { .. } => outcomes[1] += 1,
            other => return Err(format!("episode {i} ended with {other:?}")),
        }
        ensure!(r.reward == 0.0, "episode {i}: reward {}", r.reward);
    }
    Ok(format!("500 CI episodes: {} deadlocks, {} quits, no deals", outcomes[0], outcomes[1]))
}

const WORDS: [&str; 16] = [
    "price", "budget", "$42.50", "deal?", "I'll", "think", "offer", "low", "high", "(maybe)", "50%", "ok,", "—",
    "fair", "quality", "ship",
];

fn random_text<R: Rng>(rng: &mut R, max_words: usize) -> String {
    let n = rng.gen_range(0..=max_words);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        out.push(WORDS[rng.gen_range(0..WORDS.len())].to_string());
        if i + 1 < n && rng.gen_bool(0.1) {
            out.push("\n".into());
        }
    }
    out.join(" ").replace(" \n ", "\n")
}

fn random_action<R: Rng>(rng: &mut R, role: Role, codename: &str) -> ActionKind {
    let offer = Offer::new(
        Money::from_cents(rng.gen_range(1..100_000_000)),
        rng.gen_range(1..4),
        if rng.gen_bool(0.7) { codename.to_string() } else { format!("item_{}", rng.gen_range(0..1000)) },
    );
    match rng.gen_range(0..4) {
        0 if role == Role::Buyer => ActionKind::Buy(offer),
        0 => ActionKind::Sell(offer),
        1 => ActionKind::Deal(offer),
        2 => ActionKind::Reject,
        _ => ActionKind::Quit,
    }
}

fn protocol_round_trip() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let codename = "beauty_29";
    let mut checked = 0;
    for i in 0..10_000 {
        let role = if i % 2 == 0 { Role::Buyer } else { Role::Seller };
        let reasoning = format!("secret-{} {}", rng.gen::<u64>(), random_text(&mut rng, 12)).trim().to_string();
        let dialogue = random_text(&mut rng, 12).trim().to_string();
        let action = random_action(&mut rng, role, codename);
        for grammar in [Grammar::Labeled, Grammar::Tagged] {
            let turn =
                TurnMessage::compose(role, grammar, reasoning.clone(), dialogue.clone(), action.clone(), codename);
            let text = serialize_turn(&turn, grammar, codename);
            let back = parse_turn(&text, role, grammar, codename).map_err(|e| format!("turn {i}: {e}\n{text}"))?;
            ensure!(back == turn, "turn {i} did not round-trip in {grammar:?}:\n{text}");
            for view in [Grammar::Labeled, Grammar::Tagged] {
                let public = render_public(&turn, view);
                ensure!(!public.contains(&reasoning), "turn {i} leaked reasoning");
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} turns round-tripped, no reasoning leaked"))
}

fn advantage_properties() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for g in 0..1000 {
        let n = rng.gen_range(2..=16);
        let rewards: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let a = group_advantages(&rewards, DEFAULT_EPSILON).map_err(|e| e.to_string())?;
        let sum: f64 = a.iter().sum();
        ensure!(sum.abs() < 1e-9, "group {g}: sum {sum:e}");
        let shift = rng.gen_range(-10.0..10.0);
        let shifted: Vec<f64> = rewards.iter().map(|r| r + shift).collect();
        let b = group_advantages(&shifted, DEFAULT_EPSILON).map_err(|e| e.to_string())?;
        let mean = rewards.iter().sum::<f64>() / n as f64;
        let sd = (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        if sd >= 0.1 {
            for (x, y) in a.iter().zip(&b) {
                ensure!((x - y).abs() < 1e-9, "group {g}: shift changed {x} to {y}");
            }
        }
        let flat = vec![rewards[0]; n];
        ensure!(group_advantages(&flat, DEFAULT_EPSILON).unwrap().iter().all(|a| *a == 0.0), "group {g}: flat");
    }
    let a = group_advantages(&[1.0, 0.0, -1.0], DEFAULT_EPSILON).unwrap();
    for (got, want) in a.iter().zip([1.2247, 0.0, -1.2247]) {
        ensure!((got - want).abs() < 1e-3, "[1,0,-1] gave {a:?}");
    }
    Ok(format!("1000 groups centered and shift invariant; [1,0,-1] -> [{:.4}, {:.4}, {:.4}]", a[0], a[1], a[2]))
}

/// Learning rate of the toy trainer; the logits need far larger steps than a
/// fine-tuned language model does.
const TOY_LEARNING_RATE: f64 = 0.3;

fn toy_emergence() -> Result<String, String> {
    let scenarios = synth(0, 256, 0.0);
    let config = TrainConfig {
        batch_size: 16,
        group_size: 8,
        iterations: 200,
        learning_rate: TOY_LEARNING_RATE,
        seed: 0,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let report = train(&config, &scenarios, &ScriptedPolicy::seller()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let s = &report.summaries;
    ensure!(s.len() == 200, "{} summaries", s.len());
    let mean = |xs: &[haggle_core::MetricsSummary], f: &dyn Fn(&haggle_core::MetricsSummary) -> f64| {
        xs.iter().map(f).sum::<f64>() / xs.len() as f64
    };
    let reward = |m: &haggle_core::MetricsSummary| m.all.reward.mean;
    let first = |m: &haggle_core::MetricsSummary| m.all.first_offer_ratio.map_or(f64::NAN, |x| x.mean);
    let (r0, r1) = (mean(&s[..10], &reward), mean(&s[190..], &reward));
    ensure!(r1 - r0 >= 0.2, "(a) reward rose only {r0:.3} -> {r1:.3}");
    let last_overshoot = s.iter().rposition(|m| m.all.overshoot_rate.mean > 0.0);
    ensure!(last_overshoot.is_none_or(|i| i < 40), "(b) overshoot seen at iteration {last_overshoot:?}");
    let (f0, f1) = (mean(&s[..10], &first), mean(&s[190..], &first));
    ensure!(f1 < f0, "(c) first-offer ratio {f0:.3} -> {f1:.3}");
    ensure!(elapsed < Duration::from_secs(300), "took {elapsed:?}");
    Ok(format!(
        "reward {r0:.3} -> {r1:.3}, overshoot zero from iteration {}, first offer {f0:.3} -> {f1:.3}, {elapsed:.1?}",
        last_overshoot.map_or(0, |i| i + 1)
    ))
}

fn random_rows<R: Rng>(rng: &mut R) -> Vec<OutcomeRow> {
    (0..rng.gen_range(1..60))
        .map(|_| {
            let dealt = rng.gen_bool(0.6);
            let reward = if dealt {
                rng.gen_range(-1.0..=1.0)
            } else if rng.gen_bool(0.2) {
                -1.0
            } else {
                0.0
            };
            OutcomeRow {
                scenario_class: if rng.gen_bool(0.7) {
                    ScenarioClass::MutualInterest
                } else {
                    ScenarioClass::ConflictOfInterest
                },
                reward,
                dealt,
                price_final: dealt.then(|| Money::from_cents(rng.gen_range(1..100_000))),
                bargained_ratio: dealt.then(|| rng.gen_range(-2.0..2.0)),
                first_offer_ratio: rng.gen_bool(0.8).then(|| rng.gen_range(0.0..1.5)),
                overshoot: rng.gen_bool(0.1),
                turns_used: rng.gen_range(0..=6),
            }
        })
        .collect()
}

fn oracle_stat(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let se = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt()
    };
    Some((mean, se))
}

fn compare(label: &str, got: Option<Stat>, want: Option<(f64, f64)>) -> Result<(), String> {
    match (got, want) {
        (None, None) => Ok(()),
        (Some(g), Some((m, se))) => {
            ensure!(
                (g.mean - m).abs() <= 1e-12 && (g.standard_error - se).abs() <= 1e-12,
                "{label}: {g:?} vs ({m}, {se})"
            );
            Ok(())
        }
        (g, w) => Err(format!("{label}: presence differs ({g:?} vs {w:?})")),
    }
}

fn metrics_oracle() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for set in 0..1000 {
        let rows = random_rows(&mut rng);
        let s = aggregate(&rows).map_err(|e| e.to_string())?;
        let col = |f: &dyn Fn(&OutcomeRow) -> Option<f64>| oracle_stat(&rows.iter().filter_map(f).collect::<Vec<_>>());
        let flag = |b: bool| if b { 1.0 } else { 0.0 };
        let tag = |m: &str| format!("set {set} {m}");
        compare(&tag("reward"), Some(s.all.reward), col(&|r| Some(r.reward)))?;
        compare(&tag("deal rate"), Some(s.all.deal_rate), col(&|r| Some(flag(r.dealt))))?;
        compare(&tag("bargained"), s.all.bargained_ratio, col(&|r| r.bargained_ratio))?;
        compare(&tag("first offer"), s.all.first_offer_ratio, col(&|r| r.first_offer_ratio))?;
        compare(&tag("overshoot"), Some(s.all.overshoot_rate), col(&|r| Some(flag(r.overshoot))))?;
        compare(&tag("length"), Some(s.all.episode_length), col(&|r| Some(r.turns_used as f64)))?;
        let mi = col(&|r| (r.scenario_class == ScenarioClass::MutualInterest).then(|| flag(r.dealt)));
        compare(&tag("deal rate mi"), s.deal_rate_mi, mi)?;
        if let Ok(all) = deal_rate(&rows, DealRateMode::All) {
            ensure!((all - s.all.deal_rate.mean).abs() <= 1e-12, "{}", tag("deal_rate(all)"));
        }
    }
    let s = aggregate(&random_rows(&mut rng)[..1]).unwrap();
    ensure!(s.all.reward.standard_error == 0.0, "single row SE");
    let pair = Stat::of(&[1.0, 0.0]).unwrap();
    ensure!(pair.mean == 0.5 && pair.standard_error == 0.5, "{{1,0}} gave {pair:?}");
    Ok("1000 row sets match the oracle; {1,0} -> SE 0.5".into())
}

fn persona_assembly() -> Result<String, String> {
    let product = Product {
        codename: "beauty_29".into(),
        title: "Happy By Clinique For Men. Cologne Spray 1.7 Oz.".into(),
        category: "beauty".into(),
        description: "Cologne spray.".into(),
        features: String::new(),
        list_price: Money::from_dollars(70),
        price_history: None,
        buyer_budget: None,
        seller_cost: None,
    };
    let s =
        build_scenario(product, Money::from_cents(5600), Money::from_cents(2324), 1, 6).map_err(|e| e.to_string())?;
    let texts = [
        (Persona::Begging, "BEG — Act extremely SAD and DESPERATE. Beg for a better deal at every turn, using very melancholic and pleading language."),
        (Persona::Insulting, "Insult — Act extremely MEAN and AGGRESSIVE."),
        (Persona::Unyielding, "Unyielding — Act OVERLY STUBBORN and UNYIELDING."),
    ];
    let buyer = assemble_buyer_prompt(&s, 600);
    let default = assemble_seller_prompt(&s, Persona::Default, 600);
    for (persona, text) in texts {
        let seller = assemble_seller_prompt(&s, persona, 600);
        ensure!(seller.system.contains(text), "{persona} text missing");
        ensure!(seller.system.contains(persona.block_text()), "{persona} block not verbatim");
        ensure!(
            !buyer.system.contains(persona.block_text()) && !buyer.context.contains(text),
            "{persona} in buyer prompt"
        );
        ensure!(!default.system.contains(persona.block_text()), "{persona} in default prompt");
        ensure!(
            seller.system.len() == default.system.len() + persona.block_text().len(),
            "{persona} injected extra text"
        );
    }
    ensure!(!default.system.contains("{persona_block}"), "placeholder left in default prompt");
    Ok("three persona blocks verbatim in seller prompts only; default injects nothing".into())
}

fn main() {
    let checks: [(&str, Check); 10] = [
        ("reward oracle equivalence", reward_oracle),
        ("transcript fixture replay", fixture_replay),
        ("regulation guarantee", regulation_guarantee),
        ("budget penalty", budget_penalty),
        ("CI rationality", ci_rationality),
        ("protocol round-trip", protocol_round_trip),
        ("GRPO advantage properties", advantage_properties),
        ("toy emergence", toy_emergence),
        ("metrics oracle", metrics_oracle),
        ("persona assembly", persona_assembly),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{:.2?}]", i + 1, start.elapsed()),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why} [{:.2?}]", i + 1, start.elapsed());
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", checks.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
