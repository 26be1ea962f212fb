use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aiig_core::env::AgentType;
use aiig_core::experiment::{
    cmd_evaluate, cmd_meta, cmd_report, cmd_trace, cmd_train, run_matrix, ExperimentConfig, OpponentSpec, Report, Run,
    Variant,
};
use aiig_core::learner::Mode;
use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "aiig", version, about = "Belief-space self-play against opponent ensembles")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Force single-threaded execution.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run and write its directory.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        /// full, no_EO, no_EO_no_CE or single_gamma
        #[arg(long)]
        variant: Option<Variant>,
        /// belief or recurrent
        #[arg(long)]
        mode: Option<Mode>,
        /// Discount for the single-model variants.
        #[arg(long)]
        gamma: Option<f64>,
        /// Output root (falls back to AIIG_OUT, then the config's output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Anneal the active member set of a trained run.
    Meta {
        run: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Score a trained protagonist against a freshly trained evaluation opponent.
    Evaluate {
        run: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Play one logged episode and write it as JSON lines.
    Trace {
        run: PathBuf,
        #[command(flatten)]
        common: Common,
        /// scripted:<rush|deceive|random> or member:<id>
        #[arg(long, default_value = "scripted:rush")]
        opponent: OpponentSpec,
        /// ally or enemy; drawn from the seed when omitted.
        #[arg(long = "type")]
        opponent_type: Option<AgentType>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file (default: traces/ inside the run).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize runs into the (mode x variant) table.
    Report {
        /// Run directories, or directories containing runs.
        runs: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
        /// Train and evaluate every (mode, variant) cell first.
        #[arg(long)]
        matrix: bool,
        /// Seeds for --matrix.
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seed: Vec<u64>,
        /// Where the summary goes (with --matrix: the output root).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => Ok(ExperimentConfig::load(p)?),
        None => Ok(ExperimentConfig::default()),
    }
}

fn output_root(flag: Option<PathBuf>, cfg: &ExperimentConfig) -> PathBuf {
    flag.or_else(|| std::env::var_os("AIIG_OUT").map(PathBuf::from)).unwrap_or_else(|| cfg.output_dir.clone())
}

fn open_run(dir: &Path, config: Option<&Path>) -> Result<Run> {
    let mut run = Run::open(dir).with_context(|| format!("opening run {}", dir.display()))?;
    if let Some(p) = config {
        run.config = ExperimentConfig::load(p)?;
    }
    Ok(run)
}

fn print_report(report: &Report, out: &Path) {
    for r in &report.rows {
        let cell = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.3}"));
        println!("{:<10} {:<20} runs={} train={} eval={}", r.mode, r.variant, r.runs, cell(r.train_reward), cell(r.eval_reward));
    }
    println!("summary written to {}", out.display());
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common, seed, variant, mode, gamma, out } => {
            let mut cfg = load_config(common.config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(v) = variant {
                cfg.variant = v;
            }
            if let Some(m) = mode {
                cfg.mode = m;
            }
            if gamma.is_some() {
                cfg.gamma = gamma;
            }
            cfg.validate()?;
            let root = output_root(out, &cfg);
            let outcome = cmd_train(&cfg, &root, common.deterministic)?;
            if let Some(last) = outcome.metrics.last() {
                println!("final epoch {}: protagonist {:.3}, opponent {:.3}", last.epoch, last.protagonist_return, last.opponent_return);
            }
            println!("{}", outcome.run_dir.display());
        }
        Command::Meta { run, common } => {
            let run = open_run(&run, common.config.as_deref())?;
            let outcome = cmd_meta(&run, common.deterministic)?;
            let accepted = outcome.trace.iter().filter(|r| r.accepted).count();
            println!("{} proposals, {accepted} accepted; active members {:?}", outcome.trace.len(), outcome.active);
        }
        Command::Evaluate { run, common, seed } => {
            let run = open_run(&run, common.config.as_deref())?;
            let r = cmd_evaluate(&run, seed, common.deterministic)?;
            println!("r_p={} r_o={} K={} rho={}", r.report.r_p, r.report.r_o, r.report.k, r.report.rho);
        }
        Command::Trace { run, common, opponent, opponent_type, seed, out } => {
            let run = open_run(&run, common.config.as_deref())?;
            let (path, steps) = cmd_trace(&run, opponent, opponent_type, seed, out.as_deref())?;
            println!("{} steps written to {}", steps.len(), path.display());
        }
        Command::Report { runs, common, matrix, seed, out } => {
            if matrix {
                let cfg = load_config(common.config.as_deref())?;
                let root = output_root(out, &cfg);
                let report = run_matrix(&cfg, &root, &seed, common.deterministic)?;
                print_report(&report, &root.join("report"));
            } else {
                let out = out.unwrap_or_else(|| PathBuf::from("report"));
                let report = cmd_report(&runs, &out)?;
                print_report(&report, &out);
            }
        }
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
