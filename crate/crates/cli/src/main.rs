use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use fedccl_cli::config::{AttackKind, ExperimentConfig};
use fedccl_cli::run::{compare_runs, resolve_out_dir, run_experiment};

#[derive(Parser)]
#[command(name = "fedccl", version, about = "Federated training with dual clustered feature contrast")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        config: PathBuf,
        /// Run clients sequentially (bitwise reproducible output).
        #[arg(long)]
        deterministic: bool,
        /// Output directory; overrides the config and the FEDCCL_OUT_DIR variable.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Training attack.
        #[arg(long, value_parser = ["none", "fgsm", "pgd"])]
        attack: Option<String>,
        #[arg(long)]
        eps: Option<f64>,
        /// Attack step size.
        #[arg(long)]
        alpha: Option<f64>,
        /// Attack steps.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Print mean final accuracies and deltas against the first summary.
    Compare {
        #[arg(required = true, num_args = 2..)]
        summaries: Vec<PathBuf>,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run {
            config,
            deterministic,
            out,
            attack,
            eps,
            alpha,
            steps,
        } => {
            let mut cfg = ExperimentConfig::from_path(&config)?;
            cfg.deterministic |= deterministic;
            if let Some(a) = attack {
                cfg.attack = a.parse::<AttackKind>().map_err(anyhow::Error::msg)?;
            }
            if let Some(e) = eps {
                cfg.eps = e;
            }
            if let Some(a) = alpha {
                cfg.attack_alpha = a;
            }
            if let Some(s) = steps {
                cfg.attack_steps = s;
            }
            cfg.validate()?;
            let out_dir = out.unwrap_or_else(|| resolve_out_dir(&cfg));
            let summary = run_experiment(&cfg, &out_dir)
                .with_context(|| format!("running {}", config.display()))?;
            println!(
                "{}: mean final accuracy {:.2}% over {} seed(s); results in {}",
                summary.method,
                summary.mean_final_acc() * 100.0,
                summary.seeds.len(),
                out_dir.display()
            );
        }
        Command::Compare { summaries } => print!("{}", compare_runs(&summaries)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
