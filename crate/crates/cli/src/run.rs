//! Experiment execution and the metrics / summary artifacts.
//!
//! `metrics.jsonl` holds one object per line:
//!
//! * `scope = "round"`: client means for one round (`acc` is the mean of the
//!   local-model accuracies, `acc_global` that of the aggregated model);
//! * `scope = "client"`: the same fields for one client (`client` is set);
//! * `scope = "robust"`: final clean / FGSM / PGD accuracy, per client and as
//!   a client mean, only when `eval_eps` is set.
//!
//! `summary.csv` has the header [`SUMMARY_HEADER`]: one row per seed, then a
//! `mean` row. Accuracies are percentages; `final_acc` is the mean of the
//! round-scope `acc` over the last five rounds.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use fedccl::datagen::build_scenario;
use fedccl::federation::{run_training, RobustAccuracy, RoundMetrics, TrainingOutcome};
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::ExperimentConfig;

/// Environment variable that overrides the configured output directory.
pub const OUT_DIR_ENV: &str = "FEDCCL_OUT_DIR";

pub const SUMMARY_HEADER: [&str; 8] = [
    "seed",
    "method",
    "scenario",
    "final_acc",
    "final_global_acc",
    "clean_acc",
    "fgsm_acc",
    "pgd_acc",
];

/// Rounds averaged into the final accuracy.
pub const FINAL_WINDOW: usize = 5;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Core(#[from] fedccl::Error),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("csv error in {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {reason}")]
    Schema { path: PathBuf, reason: String },
    #[error("scenario mismatch: {first} is {a}, {other} is {b}")]
    ScenarioMismatch {
        first: PathBuf,
        a: String,
        other: PathBuf,
        b: String,
    },
    #[error("compare needs at least two summaries")]
    TooFewRuns,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Serialize)]
struct MetricsLine<'a> {
    seed: u64,
    round: usize,
    scope: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    client: Option<usize>,
    acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    acc_global: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    acc_fgsm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    acc_pgd: Option<f64>,
    loss_ce: f64,
    loss_local: f64,
    loss_global: f64,
    skipped_samples: usize,
}

impl<'a> MetricsLine<'a> {
    fn new(seed: u64, round: usize, scope: &'a str) -> Self {
        Self {
            seed,
            round,
            scope,
            client: None,
            acc: None,
            acc_global: None,
            acc_fgsm: None,
            acc_pgd: None,
            loss_ce: 0.0,
            loss_local: 0.0,
            loss_global: 0.0,
            skipped_samples: 0,
        }
    }
}

fn round_lines(seed: u64, m: &RoundMetrics) -> Vec<MetricsLine<'static>> {
    let mut out = Vec::with_capacity(m.clients.len() + 1);
    out.push(MetricsLine {
        acc: Some(m.mean_acc),
        acc_global: Some(m.mean_global_acc),
        loss_ce: m.mean_loss_ce(),
        loss_local: m.mean_loss_local(),
        loss_global: m.mean_loss_global(),
        skipped_samples: m.skipped_samples(),
        ..MetricsLine::new(seed, m.round, "round")
    });
    for c in &m.clients {
        out.push(MetricsLine {
            client: Some(c.client),
            acc: c.acc,
            acc_global: c.global_acc,
            loss_ce: c.stats.loss_ce,
            loss_local: c.stats.loss_local,
            loss_global: c.stats.loss_global,
            skipped_samples: c.stats.skipped_samples,
            ..MetricsLine::new(seed, m.round, "client")
        });
    }
    out
}

fn robust_line(seed: u64, round: usize, client: Option<usize>, r: &RobustAccuracy) -> MetricsLine<'static> {
    MetricsLine {
        client,
        acc: Some(r.clean),
        acc_fgsm: Some(r.fgsm),
        acc_pgd: Some(r.pgd),
        ..MetricsLine::new(seed, round, "robust")
    }
}

/// Final metrics of one seed.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedResult {
    pub seed: u64,
    /// Fractions in `[0, 1]`.
    pub final_acc: f64,
    pub final_global_acc: f64,
    pub robust: Option<RobustAccuracy>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub method: String,
    pub scenario: String,
    pub seeds: Vec<SeedResult>,
    pub out_dir: PathBuf,
}

impl RunSummary {
    pub fn mean_final_acc(&self) -> f64 {
        self.seeds.iter().map(|s| s.final_acc).sum::<f64>() / self.seeds.len().max(1) as f64
    }

    pub fn mean_robust(&self) -> Option<RobustAccuracy> {
        let rs: Vec<RobustAccuracy> = self.seeds.iter().filter_map(|s| s.robust).collect();
        if rs.is_empty() {
            return None;
        }
        let n = rs.len() as f64;
        Some(RobustAccuracy {
            clean: rs.iter().map(|r| r.clean).sum::<f64>() / n,
            fgsm: rs.iter().map(|r| r.fgsm).sum::<f64>() / n,
            pgd: rs.iter().map(|r| r.pgd).sum::<f64>() / n,
        })
    }
}

/// Mean of `f` over the last [`FINAL_WINDOW`] rounds.
pub fn final_mean(rounds: &[RoundMetrics], f: impl Fn(&RoundMetrics) -> f64) -> f64 {
    let tail = &rounds[rounds.len().saturating_sub(FINAL_WINDOW)..];
    if tail.is_empty() {
        return 0.0;
    }
    tail.iter().map(f).sum::<f64>() / tail.len() as f64
}

/// Short hex digest identifying the data and protocol of a run.
pub fn scenario_hash(cfg: &ExperimentConfig) -> String {
    let digest = Sha256::digest(cfg.scenario_text().as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Output directory after applying the environment override.
pub fn resolve_out_dir(cfg: &ExperimentConfig) -> PathBuf {
    std::env::var_os(OUT_DIR_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| cfg.out.clone())
}

/// Trains one seed of the experiment.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<TrainingOutcome<f64>, RunError> {
    let clients = build_scenario::<f64>(&cfg.scenario(seed))?;
    log::info!(
        "seed {seed}: {} clients, train sizes {:?}",
        clients.len(),
        clients.iter().map(|c| c.train.len()).collect::<Vec<_>>()
    );
    Ok(run_training(&clients, &cfg.federation(seed))?)
}

fn pct(v: f64) -> String {
    format!("{:.4}", v * 100.0)
}

fn summary_row(seed: &str, method: &str, scenario: &str, acc: f64, global: f64, r: Option<RobustAccuracy>) -> Vec<String> {
    let mut row = vec![seed.to_string(), method.to_string(), scenario.to_string(), pct(acc), pct(global)];
    match r {
        Some(r) => row.extend([pct(r.clean), pct(r.fgsm), pct(r.pgd)]),
        None => row.extend([String::new(), String::new(), String::new()]),
    }
    row
}

/// Runs every seed of `cfg` and writes `metrics.jsonl`, `summary.csv` and the
/// resolved `config.txt` into `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunSummary, RunError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let config_path = out_dir.join("config.txt");
    fs::write(&config_path, cfg.serialize()).map_err(io_err(&config_path))?;

    let metrics_path = out_dir.join("metrics.jsonl");
    let file = fs::File::create(&metrics_path).map_err(io_err(&metrics_path))?;
    let mut metrics = BufWriter::new(file);
    let mut emit = |line: &MetricsLine<'_>| -> Result<(), RunError> {
        let text = serde_json::to_string(line).expect("metrics serialize");
        writeln!(metrics, "{text}").map_err(io_err(&metrics_path))
    };

    let scenario = scenario_hash(cfg);
    let mut seeds = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let outcome = run_seed(cfg, seed)?;
        for m in &outcome.rounds {
            for line in round_lines(seed, m) {
                emit(&line)?;
            }
        }
        if let Some(per_client) = &outcome.robust {
            for (i, r) in per_client.iter().enumerate() {
                emit(&robust_line(seed, cfg.rounds, Some(i), r))?;
            }
            if let Some(mean) = outcome.mean_robust() {
                emit(&robust_line(seed, cfg.rounds, None, &mean))?;
            }
        }
        seeds.push(SeedResult {
            seed,
            final_acc: final_mean(&outcome.rounds, |m| m.mean_acc),
            final_global_acc: final_mean(&outcome.rounds, |m| m.mean_global_acc),
            robust: outcome.mean_robust(),
        });
    }
    drop(emit);
    metrics.flush().map_err(io_err(&metrics_path))?;

    let summary = RunSummary {
        method: cfg.method.to_string(),
        scenario,
        seeds,
        out_dir: out_dir.to_path_buf(),
    };
    write_summary(&summary, &out_dir.join("summary.csv"))?;
    Ok(summary)
}

fn write_summary(s: &RunSummary, path: &Path) -> Result<(), RunError> {
    let csv_err = |source| RunError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(SUMMARY_HEADER).map_err(csv_err)?;
    for r in &s.seeds {
        w.write_record(summary_row(
            &r.seed.to_string(),
            &s.method,
            &s.scenario,
            r.final_acc,
            r.final_global_acc,
            r.robust,
        ))
        .map_err(csv_err)?;
    }
    let n = s.seeds.len().max(1) as f64;
    let global = s.seeds.iter().map(|r| r.final_global_acc).sum::<f64>() / n;
    w.write_record(summary_row(
        "mean",
        &s.method,
        &s.scenario,
        s.mean_final_acc(),
        global,
        s.mean_robust(),
    ))
    .map_err(csv_err)?;
    w.flush().map_err(io_err(path))
}

/// The `mean` row of a summary file.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryMean {
    pub path: PathBuf,
    pub method: String,
    pub scenario: String,
    pub final_acc: f64,
}

pub fn read_summary_mean(path: &Path) -> Result<SummaryMean, RunError> {
    let csv_err = |source| RunError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let schema = |reason: String| RunError::Schema {
        path: path.to_path_buf(),
        reason,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let headers = r.headers().map_err(csv_err)?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| schema(format!("missing column `{name}`")))
    };
    let (seed, method, scenario, acc) = (col("seed")?, col("method")?, col("scenario")?, col("final_acc")?);
    for record in r.records() {
        let record = record.map_err(csv_err)?;
        if record.get(seed) == Some("mean") {
            let final_acc = record[acc]
                .parse()
                .map_err(|_| schema(format!("final_acc `{}` is not a number", &record[acc])))?;
            return Ok(SummaryMean {
                path: path.to_path_buf(),
                method: record[method].to_string(),
                scenario: record[scenario].to_string(),
                final_acc,
            });
        }
    }
    Err(schema("no `mean` row".into()))
}

/// Formats a signed difference with two decimals, never printing `-0.00`.
pub fn format_delta(delta: f64) -> String {
    let s = format!("{delta:+.2}");
    if s == "-0.00" {
        "+0.00".into()
    } else {
        s
    }
}

/// Table of mean final accuracies and their deltas against the first run.
pub fn compare_runs(paths: &[PathBuf]) -> Result<String, RunError> {
    if paths.len() < 2 {
        return Err(RunError::TooFewRuns);
    }
    let runs = paths
        .iter()
        .map(|p| read_summary_mean(p))
        .collect::<Result<Vec<_>, _>>()?;
    let base = &runs[0];
    for r in &runs[1..] {
        if r.scenario != base.scenario {
            return Err(RunError::ScenarioMismatch {
                first: base.path.clone(),
                a: base.scenario.clone(),
                other: r.path.clone(),
                b: r.scenario.clone(),
            });
        }
    }
    let width = runs.iter().map(|r| r.method.len()).max().unwrap_or(6).max(6);
    let mut out = format!("{:<width$}  {:>9}  {:>7}\n", "method", "final_acc", "delta");
    for r in &runs {
        out.push_str(&format!(
            "{:<width$}  {:>9.2}  {:>7}\n",
            r.method,
            r.final_acc,
            format_delta(r.final_acc - base.final_acc)
        ));
    }
    Ok(out)
}
