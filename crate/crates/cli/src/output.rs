use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use clap::ValueEnum;
use serde::Serialize;

use haggle_core::engine::write_log;
use haggle_core::grpo_lab::CONFIG_SNAPSHOT;
use haggle_core::metrics::{render_report, ReportFormat};
use haggle_core::{aggregate, EpisodeRecord, MetricsSummary, OutcomeRow};

pub const TRANSCRIPTS_FILE: &str = "transcripts.jsonl";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const EXCLUDED_FILE: &str = "excluded.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Markdown,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => ReportFormat::Csv,
            Format::Markdown => ReportFormat::Markdown,
        }
    }
}

/// An episode dropped because the model endpoint failed.
#[derive(Debug, Clone, Serialize)]
pub struct Exclusion {
    pub codename: String,
    pub seed: u64,
    pub error: String,
}

pub fn summarize(records: &[EpisodeRecord], excluded: usize) -> Result<MetricsSummary> {
    let rows: Vec<OutcomeRow> = records.iter().map(OutcomeRow::from_record).collect();
    let mut summary = aggregate(&rows).context("no scored episodes")?;
    summary.excluded = excluded;
    Ok(summary)
}

pub fn write_snapshot<S: Serialize>(dir: &Path, snapshot: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(snapshot)?;
    fs::write(dir.join(CONFIG_SNAPSHOT), text + "\n").context("writing config snapshot")?;
    Ok(())
}

/// Writes transcripts, the summary table, exclusions and the config snapshot,
/// and returns the summary rendered for the terminal.
pub fn write_episode_run<S: Serialize>(
    dir: &Path,
    snapshot: &S,
    records: &[EpisodeRecord],
    excluded: &[Exclusion],
) -> Result<String> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_snapshot(dir, snapshot)?;

    let mut out = BufWriter::new(File::create(dir.join(TRANSCRIPTS_FILE))?);
    write_log(&mut out, records)?;
    out.flush()?;

    if !excluded.is_empty() {
        let mut out = BufWriter::new(File::create(dir.join(EXCLUDED_FILE))?);
        for e in excluded {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
    }

    let summary = summarize(records, excluded.len())?;
    let table = [("all".to_string(), summary)];
    fs::write(dir.join(SUMMARY_FILE), render_report(&table, ReportFormat::Csv)?)?;
    Ok(render_report(&table, ReportFormat::Markdown)?)
}
