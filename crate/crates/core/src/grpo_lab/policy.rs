use std::fmt::Write as _;
use std::sync::Mutex;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::GrpoError;
use crate::agents::{Agent, AgentError, TurnRequest};
use crate::money::Money;
use crate::protocol::{ActionKind, Grammar, Offer, Role, TurnMessage};

/// Opening bid as a fraction of budget. The last bin overbids.
pub const ANCHOR_BINS: [f64; 11] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.1];
/// Fraction of the remaining gap to budget closed per round.
pub const STEP_BINS: [f64; 5] = [0.1, 0.2, 0.35, 0.5, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Decision {
    /// Bid this round's willingness, or close if the seller already asks less.
    Counter,
    /// Close on any standing ask within budget.
    Accept,
    Quit,
}

impl Decision {
    pub const ALL: [Decision; 3] = [Decision::Counter, Decision::Accept, Decision::Quit];

    fn index(self) -> usize {
        self as usize
    }

    fn key(self) -> &'static str {
        match self {
            Decision::Counter => "counter",
            Decision::Accept => "accept",
            Decision::Quit => "quit",
        }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}

fn sample_index<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Categorical buyer policy over anchor, concession step and a per-round
/// decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyBuyerPolicy {
    pub anchor_logits: Vec<f64>,
    pub step_logits: Vec<f64>,
    pub decision_logits: Vec<[f64; 3]>,
}

/// One sampled episode plan.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub anchor: usize,
    pub step: usize,
    pub decisions: Vec<Decision>,
}

/// Which parts of a plan actually shaped the episode.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PlanUsage {
    pub anchor: bool,
    pub step: bool,
    pub rounds: usize,
}

impl ToyBuyerPolicy {
    /// Untrained prior: anchors near 90% of budget, mostly counters.
    pub fn initial(max_turns: u32) -> Self {
        Self {
            anchor_logits: ANCHOR_BINS.iter().map(|a| -8.0 * (a - 0.9) * (a - 0.9)).collect(),
            step_logits: vec![0.0; STEP_BINS.len()],
            decision_logits: vec![[1.0, 0.5, -2.0]; max_turns.max(1) as usize],
        }
    }

    pub fn anchor_probs(&self) -> Vec<f64> {
        softmax(&self.anchor_logits)
    }

    pub fn step_probs(&self) -> Vec<f64> {
        softmax(&self.step_logits)
    }

    pub fn decision_probs(&self, round: usize) -> Vec<f64> {
        softmax(&self.decision_logits[round.min(self.decision_logits.len() - 1)])
    }

    /// Expected opening ratio conditioned on opening with a bid.
    pub fn mean_anchor(&self) -> f64 {
        self.anchor_probs().iter().zip(ANCHOR_BINS).map(|(p, a)| p * a).sum()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Plan {
        let anchor = sample_index(&self.anchor_probs(), rng);
        let step = sample_index(&self.step_probs(), rng);
        let decisions = (0..self.decision_logits.len())
            .map(|r| Decision::ALL[sample_index(&self.decision_probs(r), rng)])
            .collect();
        Plan { anchor, step, decisions }
    }

    pub fn len(&self) -> usize {
        self.anchor_logits.len() + self.step_logits.len() + 3 * self.decision_logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat parameter vector: anchor, step, then decisions round by round.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.len());
        p.extend(&self.anchor_logits);
        p.extend(&self.step_logits);
        for row in &self.decision_logits {
            p.extend(row);
        }
        p
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.len(), "parameter vector length");
        let (a, rest) = params.split_at(self.anchor_logits.len());
        let (s, d) = rest.split_at(self.step_logits.len());
        self.anchor_logits.copy_from_slice(a);
        self.step_logits.copy_from_slice(s);
        for (row, chunk) in self.decision_logits.iter_mut().zip(d.chunks(3)) {
            row.copy_from_slice(chunk);
        }
    }

    /// Score-function gradient of `log pi(plan)` over the used parts, scaled
    /// by `weight` and added into `grad`.
    pub fn accumulate_score(&self, plan: &Plan, usage: &PlanUsage, weight: f64, grad: &mut [f64]) {
        let mut add = |offset: usize, probs: &[f64], chosen: usize| {
            for (k, p) in probs.iter().enumerate() {
                let indicator = if k == chosen { 1.0 } else { 0.0 };
                grad[offset + k] += weight * (indicator - p);
            }
        };
        let n_anchor = self.anchor_logits.len();
        let n_step = self.step_logits.len();
        if usage.anchor {
            add(0, &self.anchor_probs(), plan.anchor);
        }
        if usage.step {
            add(n_anchor, &self.step_probs(), plan.step);
        }
        for r in 0..usage.rounds.min(self.decision_logits.len()) {
            add(n_anchor + n_step + 3 * r, &self.decision_probs(r), plan.decisions[r].index());
        }
    }

    /// Plain-text `key value` table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        for (a, l) in ANCHOR_BINS.iter().zip(&self.anchor_logits) {
            let _ = writeln!(out, "anchor.{a:.2} {l:?}");
        }
        for (s, l) in STEP_BINS.iter().zip(&self.step_logits) {
            let _ = writeln!(out, "step.{s:.2} {l:?}");
        }
        for (r, row) in self.decision_logits.iter().enumerate() {
            for d in Decision::ALL {
                let _ = writeln!(out, "decision.{r}.{} {:?}", d.key(), row[d.index()]);
            }
        }
        out
    }

    pub fn from_table(text: &str) -> Result<Self, GrpoError> {
        let mut anchor = vec![None; ANCHOR_BINS.len()];
        let mut step = vec![None; STEP_BINS.len()];
        let mut decisions: Vec<[Option<f64>; 3]> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let bad = |why: &str| GrpoError::Table { line: i + 1, message: why.to_string() };
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once(char::is_whitespace).ok_or_else(|| bad("expected `key value`"))?;
            let value: f64 = value.trim().parse().map_err(|_| bad("value is not a number"))?;
            let parts: Vec<&str> = key.split('.').collect();
            match parts.as_slice() {
                ["anchor", whole, frac] | ["step", whole, frac] => {
                    let bin: f64 = format!("{whole}.{frac}").parse().map_err(|_| bad("bad bin"))?;
                    let (bins, slots): (&[f64], &mut Vec<Option<f64>>) =
                        if parts[0] == "anchor" { (&ANCHOR_BINS, &mut anchor) } else { (&STEP_BINS, &mut step) };
                    let k = bins.iter().position(|b| (b - bin).abs() < 1e-9).ok_or_else(|| bad("unknown bin"))?;
                    slots[k] = Some(value);
                }
                ["decision", round, name] => {
                    let r: usize = round.parse().map_err(|_| bad("bad round"))?;
                    let d = Decision::ALL.iter().find(|d| d.key() == *name).ok_or_else(|| bad("unknown decision"))?;
                    if decisions.len() <= r {
                        decisions.resize(r + 1, [None; 3]);
                    }
                    decisions[r][d.index()] = Some(value);
                }
                _ => return Err(bad("unknown key")),
            }
        }
        let missing = |what: &str| GrpoError::Table { line: 0, message: format!("missing {what} entries") };
        let anchor_logits = anchor.into_iter().collect::<Option<Vec<_>>>().ok_or_else(|| missing("anchor"))?;
        let step_logits = step.into_iter().collect::<Option<Vec<_>>>().ok_or_else(|| missing("step"))?;
        let decision_logits = decisions
            .into_iter()
            .map(|row| Some([row[0]?, row[1]?, row[2]?]))
            .collect::<Option<Vec<_>>>()
            .filter(|rows| !rows.is_empty())
            .ok_or_else(|| missing("decision"))?;
        Ok(Self { anchor_logits, step_logits, decision_logits })
    }
}

/// Buyer that follows one sampled [`Plan`] and records which parts of it it
/// consulted.
#[derive(Debug)]
pub struct ToyBuyerAgent {
    plan: Plan,
    usage: Mutex<PlanUsage>,
}

impl ToyBuyerAgent {
    pub fn new(plan: Plan) -> Self {
        Self { plan, usage: Mutex::new(PlanUsage::default()) }
    }

    pub fn plan(&self) -> &Plan {
        &self.plan
    }

    pub fn usage(&self) -> PlanUsage {
        self.usage.lock().expect("usage lock").clone()
    }

    /// Price the buyer is willing to bid in `round`.
    pub fn willingness(&self, budget: Money, round: u32) -> Money {
        let a = ANCHOR_BINS[self.plan.anchor];
        let s = STEP_BINS[self.plan.step];
        let progress = (f64::from(round) * s).min(1.0);
        let ratio = a + (1.0 - a) * progress;
        Money::floor_to(budget.as_f64() * ratio, Money::CENT).max(Money::CENT)
    }
}

impl Agent for ToyBuyerAgent {
    fn next_turn(&self, request: &TurnRequest<'_>) -> Result<String, AgentError> {
        let view = request.view;
        let round = request.visible_history.iter().filter(|t| t.role == Role::Buyer).count();
        let decision = self.plan.decisions.get(round).copied().unwrap_or(Decision::Counter);
        let standing = request.visible_history.iter().rev().find_map(|t| match &t.action {
            ActionKind::Sell(o) if t.role == Role::Seller => Some(o.clone()),
            _ => None,
        });
        let mut usage = self.usage.lock().expect("usage lock");
        usage.rounds = round + 1;

        let mut bid = || {
            usage.anchor = true;
            usage.step |= round > 0;
            self.willingness(view.limit, round as u32)
        };
        let action = match decision {
            Decision::Quit => ActionKind::Quit,
            Decision::Accept => match standing {
                Some(o) if o.amount <= view.limit => ActionKind::Deal(o),
                _ => ActionKind::Buy(Offer::new(bid(), view.quantity, view.codename.clone())),
            },
            Decision::Counter => {
                let w = bid();
                match standing {
                    Some(o) if o.amount <= w => ActionKind::Deal(o),
                    _ => ActionKind::Buy(Offer::new(w, view.quantity, view.codename.clone())),
                }
            }
        };
        let reasoning = format!(
            "Plan: anchor {:.2}, step {:.2}, {:?} in round {round}.",
            ANCHOR_BINS[self.plan.anchor], STEP_BINS[self.plan.step], decision
        );
        let dialogue = match &action {
            ActionKind::Quit => "This isn't working for me.".to_string(),
            ActionKind::Deal(o) => format!("Deal at {}.", o.amount),
            other => format!("I can offer {}.", other.amount().unwrap_or_default()),
        };
        Ok(TurnMessage::compose(Role::Buyer, Grammar::Labeled, reasoning, dialogue, action, &view.codename).raw)
    }
}

/// Adam state over the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Self { beta1: 0.9, beta2: 0.999, epsilon: 1e-8, m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    /// Ascent step along `grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], learning_rate: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] += learning_rate * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.epsilon);
        }
    }
}
