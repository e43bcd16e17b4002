//! `haggle`: run scripted and model-driven negotiations, train the toy
//! buyer, replay transcripts and tabulate results.

mod output;
mod source;

use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use haggle_core::agents::{RemoteAgent, RemoteModelConfig, ScriptedAgent, ScriptedPolicy};
use haggle_core::catalog::{load_catalog, split, write_split_manifest};
use haggle_core::engine::{mix_seed, parse_transcript, read_log, replay_log, replay_transcript};
use haggle_core::grpo_lab::{train, write_run_dir, AdvantageScope, Optimizer, CURVES_FILE};
use haggle_core::metrics::render_report;
use haggle_core::{
    run_episode, Agent, EngineConfig, EpisodeRecord, Grammar, OutcomeRow, Persona, Role, Scenario, SplitSpec,
    TrainConfig,
};

use output::{summarize, write_episode_run, Exclusion, Format, TRANSCRIPTS_FILE};
use source::{scripted_policy, FieldArgs, Part, ScenarioArgs};

#[derive(Parser)]
#[command(name = "haggle", version, about = "Buyer-seller negotiation arena")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Partition a catalog into train and test codenames.
    Split(SplitArgs),
    /// Play scripted buyers against scripted sellers.
    Simulate(SimulateArgs),
    /// Play a remote model as buyer against a regulated seller.
    Evaluate(EvaluateArgs),
    /// Train the toy buyer policy with group-relative policy gradients.
    TrainToy(TrainArgs),
    /// Recompute outcomes and metrics from a transcript file.
    Replay(ReplayArgs),
    /// Tabulate the transcripts of one or more run directories.
    Report(ReportArgs),
}

#[derive(Debug, Args, Serialize)]
#[command(rename_all = "snake_case")]
struct SplitArgs {
    #[arg(long)]
    catalog: PathBuf,
    #[arg(long)]
    train_count: usize,
    #[arg(long)]
    test_count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Manifest path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    fields: FieldArgs,
}

#[derive(Debug, Args, Serialize)]
#[command(rename_all = "snake_case")]
struct EngineArgs {
    #[arg(long, default_value_t = 6)]
    max_turns: u32,
    /// Seller generations tried before a Reject is substituted.
    #[arg(long, default_value_t = 3)]
    seller_max_attempts: u32,
    /// Resample malformed buyer turns instead of ending the episode.
    #[arg(long)]
    resample_buyer: bool,
    #[arg(long, default_value_t = 3)]
    buyer_max_attempts: u32,
    /// Seller persona: default, begging, insulting or unyielding.
    #[arg(long, default_value = "default")]
    persona: Persona,
    /// Product description characters shown in prompts.
    #[arg(long, default_value_t = haggle_core::agents::DEFAULT_DESCRIPTION_CHARS)]
    description_chars: usize,
}

impl EngineArgs {
    fn config(&self) -> Result<EngineConfig> {
        ensure!(self.max_turns > 0, "--max_turns must be positive");
        ensure!(self.seller_max_attempts > 0, "--seller_max_attempts must be positive");
        ensure!(self.buyer_max_attempts > 0, "--buyer_max_attempts must be positive");
        Ok(EngineConfig {
            seller_max_attempts: self.seller_max_attempts,
            resample_buyer: self.resample_buyer,
            buyer_max_attempts: self.buyer_max_attempts,
            persona: self.persona,
            description_chars: self.description_chars,
        })
    }
}

#[derive(Debug, Args, Serialize)]
#[command(rename_all = "snake_case")]
struct SimulateArgs {
    /// Buyer policy: a preset (buyer, over-budget-buyer) or a JSON policy file.
    #[arg(long, default_value = "buyer")]
    buyer: String,
    /// Seller policy: a preset (seller, adversarial-seller) or a JSON policy file.
    #[arg(long, default_value = "seller")]
    seller: String,
    /// Episodes per scenario.
    #[arg(long, default_value_t = 1)]
    group_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    scenarios: ScenarioArgs,
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Debug, Args, Serialize)]
#[command(rename_all = "snake_case")]
struct EvaluateArgs {
    /// Episodes per scenario.
    #[arg(long, default_value_t = 4)]
    group_size: usize,
    #[arg(long, default_value_t = 4000)]
    max_tokens: u32,
    #[arg(long, default_value_t = 1.0)]
    buyer_temperature: f64,
    #[arg(long, default_value_t = 0.7)]
    seller_temperature: f64,
    /// Episodes in flight at once.
    #[arg(long, default_value_t = 8)]
    concurrency: usize,
    /// Seller: `remote` for a model, otherwise a scripted preset or policy file.
    #[arg(long, default_value = "remote")]
    seller: String,
    /// Seller model name; defaults to the buyer model.
    #[arg(long)]
    seller_model: Option<String>,
    /// Turn grammar requested from the models: labeled or tagged.
    #[arg(long, default_value = "labeled")]
    grammar: Grammar,
    #[arg(long, default_value_t = 120)]
    timeout_secs: u64,
    #[arg(long, default_value_t = 3)]
    max_retries: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    scenarios: ScenarioArgs,
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Debug, Args, Serialize)]
#[command(rename_all = "snake_case")]
struct TrainArgs {
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 8)]
    group_size: usize,
    #[arg(long, default_value_t = 60)]
    iterations: usize,
    #[arg(long, default_value_t = 3e-5)]
    learning_rate: f64,
    #[arg(long, default_value_t = 6)]
    max_turns: u32,
    /// Recorded in the snapshot; the toy policy does not generate text.
    #[arg(long, default_value_t = 300)]
    max_tokens: u32,
    #[arg(long, default_value_t = 1.0)]
    buyer_temperature: f64,
    #[arg(long, default_value_t = 0.7)]
    seller_temperature: f64,
    /// Advantage normalization: group or batch.
    #[arg(long, default_value = "group")]
    advantage_scope: AdvantageScope,
    /// adam or sgd.
    #[arg(long, default_value = "adam")]
    optimizer: Optimizer,
    #[arg(long, default_value_t = haggle_core::grpo_lab::DEFAULT_EPSILON)]
    epsilon: f64,
    /// Scripted seller: a preset or a JSON policy file.
    #[arg(long, default_value = "seller")]
    seller: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    scenarios: ScenarioArgs,
}

#[derive(Debug, Args)]
#[command(rename_all = "snake_case")]
struct ReplayArgs {
    /// A text transcript or a transcripts.jsonl file.
    path: PathBuf,
    /// Also write the recomputed summary.csv here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(rename_all = "snake_case")]
struct ReportArgs {
    /// Run directories containing transcripts.jsonl.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "markdown")]
    format: Format,
}

#[derive(Serialize)]
struct Snapshot<'a, A: Serialize> {
    command: &'static str,
    version: &'static str,
    args: &'a A,
    engine: Option<&'a EngineConfig>,
    buyer: Option<&'a ScriptedPolicy>,
    seller: Option<&'a ScriptedPolicy>,
    scenarios: &'a [Scenario],
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Split(args) => cmd_split(&args),
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Evaluate(args) => cmd_evaluate(&args),
        Command::TrainToy(args) => cmd_train_toy(&args),
        Command::Replay(args) => cmd_replay(&args),
        Command::Report(args) => cmd_report(&args),
    }
}

fn cmd_split(args: &SplitArgs) -> Result<()> {
    let catalog = load_catalog(&args.catalog, &args.fields.field_map())
        .with_context(|| format!("reading catalog {}", args.catalog.display()))?;
    let spec = SplitSpec { seed: args.seed, train_count: args.train_count, test_count: args.test_count };
    let (train, test) = split(&catalog, spec)?;
    let manifest = write_split_manifest(&train, &test);
    match &args.out {
        Some(path) => fs::write(path, manifest).with_context(|| format!("writing {}", path.display()))?,
        None => io::stdout().write_all(manifest.as_bytes())?,
    }
    Ok(())
}

/// Seeds for `group` episodes of each scenario, in output order.
fn episode_plan(scenarios: &[Scenario], group: usize, seed: u64) -> Vec<(&Scenario, u64)> {
    scenarios
        .iter()
        .flat_map(|s| std::iter::repeat_n(s, group))
        .enumerate()
        .map(|(i, s)| (s, mix_seed(seed, i as u64)))
        .collect()
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    ensure!(args.group_size > 0, "--group_size must be positive");
    let engine = args.engine.config()?;
    let buyer_policy = scripted_policy(&args.buyer, Role::Buyer)?;
    let seller_policy = scripted_policy(&args.seller, Role::Seller)?;
    let scenarios = args.scenarios.resolve(args.engine.max_turns, Part::Test, None)?;
    let buyer = ScriptedAgent::new(buyer_policy.clone());
    let seller = ScriptedAgent::new(seller_policy.clone());

    let records = episode_plan(&scenarios, args.group_size, args.seed)
        .into_par_iter()
        .map(|(s, seed)| run_episode(&buyer, &seller, s, &engine, seed))
        .collect::<Result<Vec<_>, _>>()?;

    let snapshot = Snapshot {
        command: "simulate",
        version: env!("CARGO_PKG_VERSION"),
        args,
        engine: Some(&engine),
        buyer: Some(&buyer_policy),
        seller: Some(&seller_policy),
        scenarios: &scenarios,
    };
    let table = write_episode_run(&args.out, &snapshot, &records, &[])?;
    print!("{table}");
    Ok(())
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    ensure!(args.group_size > 0, "--group_size must be positive");
    ensure!(args.concurrency > 0, "--concurrency must be positive");
    let engine = args.engine.config()?;

    let mut buyer_config = RemoteModelConfig::from_env()?;
    buyer_config.temperature = args.buyer_temperature;
    buyer_config.max_tokens = args.max_tokens;
    buyer_config.timeout = Duration::from_secs(args.timeout_secs);
    buyer_config.max_retries = args.max_retries;
    let buyer = RemoteAgent::new(buyer_config.clone(), args.grammar)?;

    let mut seller_policy = None;
    let seller: Box<dyn Agent> = if args.seller == "remote" {
        let mut config = buyer_config.clone();
        config.temperature = args.seller_temperature;
        if let Some(model) = &args.seller_model {
            config.model_name = model.clone();
        }
        Box::new(RemoteAgent::new(config, args.grammar)?)
    } else {
        let policy = scripted_policy(&args.seller, Role::Seller)?;
        seller_policy = Some(policy.clone());
        Box::new(ScriptedAgent::new(policy))
    };

    let scenarios = args.scenarios.resolve(args.engine.max_turns, Part::Test, None)?;
    let plan = episode_plan(&scenarios, args.group_size, args.seed);
    eprintln!(
        "evaluating {} on {} scenarios x {} = {} episodes",
        buyer_config.model_name,
        scenarios.len(),
        args.group_size,
        plan.len()
    );

    let pool = rayon::ThreadPoolBuilder::new().num_threads(args.concurrency).build()?;
    let results: Vec<_> = pool.install(|| {
        plan.par_iter().map(|&(s, seed)| (s, seed, run_episode(&buyer, seller.as_ref(), s, &engine, seed))).collect()
    });

    let mut records = Vec::new();
    let mut excluded = Vec::new();
    for (s, seed, result) in results {
        match result {
            Ok(record) => records.push(record),
            Err(e) if e.is_infrastructure() => {
                eprintln!("excluded {} (seed {seed}): {e}", s.codename());
                excluded.push(Exclusion { codename: s.codename().to_string(), seed, error: e.to_string() });
            }
            Err(e) => return Err(e.into()),
        }
    }
    if records.is_empty() {
        bail!("every episode failed; see the messages above");
    }

    let snapshot = Snapshot {
        command: "evaluate",
        version: env!("CARGO_PKG_VERSION"),
        args,
        engine: Some(&engine),
        buyer: None,
        seller: seller_policy.as_ref(),
        scenarios: &scenarios,
    };
    let table = write_episode_run(&args.out, &snapshot, &records, &excluded)?;
    print!("{table}");
    if !excluded.is_empty() {
        eprintln!("{} episodes excluded", excluded.len());
    }
    Ok(())
}

fn cmd_train_toy(args: &TrainArgs) -> Result<()> {
    let seller = scripted_policy(&args.seller, Role::Seller)?;
    let scenarios = args.scenarios.resolve(args.max_turns, Part::Train, Some(256))?;
    let config = TrainConfig {
        batch_size: args.batch_size,
        group_size: args.group_size,
        iterations: args.iterations,
        learning_rate: args.learning_rate,
        seed: args.seed,
        max_turns: args.max_turns,
        advantage_scope: args.advantage_scope,
        optimizer: args.optimizer,
        epsilon: args.epsilon,
    };
    config.validate()?;
    eprintln!(
        "training on {} scenarios: {} iterations of {} x {} episodes",
        scenarios.len(),
        config.iterations,
        config.batch_size,
        config.group_size
    );
    let report = train(&config, &scenarios, &seller)?;

    #[derive(Serialize)]
    struct TrainSnapshot<'a> {
        command: &'static str,
        version: &'static str,
        args: &'a TrainArgs,
        train: &'a TrainConfig,
        seller: &'a ScriptedPolicy,
        scenarios: &'a [Scenario],
    }
    let snapshot = TrainSnapshot {
        command: "train-toy",
        version: env!("CARGO_PKG_VERSION"),
        args,
        train: &config,
        seller: &seller,
        scenarios: &scenarios,
    };
    write_run_dir(&args.out, &snapshot, args.seed, &report)?;

    let first = report.summaries.first().context("no iterations ran")?;
    let last = report.summaries.last().context("no iterations ran")?;
    let table = [("first".to_string(), first.clone()), ("last".to_string(), last.clone())];
    print!("{}", render_report(&table, Format::Markdown.into())?);
    eprintln!("curves written to {}", args.out.join(CURVES_FILE).display());
    Ok(())
}

/// Rebuilds records from a transcript file of either kind.
fn replay_file(path: &Path) -> Result<Vec<EpisodeRecord>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if text.trim().is_empty() {
        bail!("{} is empty", path.display());
    }
    if !text.trim_start().starts_with('{') {
        let transcript = parse_transcript(&text).with_context(|| format!("parsing {}", path.display()))?;
        return Ok(vec![replay_transcript(&transcript)?]);
    }
    let logs = read_log(BufReader::new(text.as_bytes()))
        .map_err(|(line, msg)| anyhow::anyhow!("{}:{line}: {msg}", path.display()))?;
    let mut records = Vec::with_capacity(logs.len());
    for (i, log) in logs.iter().enumerate() {
        let record = replay_log(log).with_context(|| format!("{}: episode {}", path.display(), i + 1))?;
        let same = record.outcome.kind.label() == log.outcome
            && record.reward == log.reward
            && record.outcome.turns_used == log.turns_used
            && record.overshoot == log.overshoot;
        ensure!(same, "{}: episode {} replays differently from its record", path.display(), i + 1);
        records.push(record);
    }
    Ok(records)
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.6}")).unwrap_or_default()
}

fn cmd_replay(args: &ReplayArgs) -> Result<()> {
    let records = replay_file(&args.path)?;
    let mut out = io::stdout().lock();
    writeln!(
        out,
        "codename,seed,class,outcome,price_final,reward,bargained_ratio,first_offer_ratio,overshoot,turns_used"
    )?;
    for r in &records {
        let row = OutcomeRow::from_record(r);
        writeln!(
            out,
            "{},{},{},{},{},{:.6},{},{},{},{}",
            r.scenario.codename(),
            r.seed,
            if r.scenario.is_mutual_interest() { "mi" } else { "ci" },
            r.outcome.kind.label(),
            row.price_final.map(|p| format!("{:.2}", p.as_f64())).unwrap_or_default(),
            row.reward,
            opt(row.bargained_ratio),
            opt(row.first_offer_ratio),
            row.overshoot,
            row.turns_used,
        )?;
    }
    let summary = summarize(&records, 0)?;
    let table = [("replay".to_string(), summary)];
    writeln!(out)?;
    write!(out, "{}", render_report(&table, Format::Markdown.into())?)?;
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(output::SUMMARY_FILE), render_report(&table, Format::Csv.into())?)?;
    }
    Ok(())
}

fn cmd_report(args: &ReportArgs) -> Result<()> {
    let mut table = Vec::new();
    for dir in &args.runs {
        let records = replay_file(&dir.join(TRANSCRIPTS_FILE))?;
        let label =
            dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| dir.display().to_string());
        table.push((label, summarize(&records, 0)?));
    }
    print!("{}", render_report(&table, args.format.into())?);
    Ok(())
}
