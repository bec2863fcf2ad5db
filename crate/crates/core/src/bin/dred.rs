use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dred::cli::{self, RunConfig};

#[derive(Parser)]
#[command(name = "dred", version, about = "Deep-redundancy coding experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// key=value config file; flags given on the command line override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra key=value setting (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic feature file
    Synth {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Train quantizer tables; writes the table and a JSON-lines log
    Train {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<usize>,
        /// Directory of feature files; a synthetic corpus is used otherwise
        #[arg(long)]
        corpus_dir: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Rate and distortion of every λ index as CSV
    RdSweep {
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long)]
        corpus_dir: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Encode features into packets carrying redundancy (JSON lines)
    BuildStream {
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
        /// default, shaped, or a comma list of λ indices by age
        #[arg(long)]
        schedule: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Play a packet stream through a loss trace or a loss-rate sweep
    Simulate {
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long)]
        stream: Option<PathBuf>,
        /// Trace file of '1' (arrived) and '0' (lost) characters
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Comma-separated loss rates for a Gilbert sweep
        #[arg(long)]
        loss_rates: Option<String>,
        #[arg(long)]
        schedule: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Compare analytic and finite-difference gradients of the soft loss
    GradCheck {
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        points: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

fn build_config(common: &Common, flags: &[(&str, Option<String>)]) -> dred::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::new(),
    };
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| dred::Error::InvalidArgument(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim());
    }
    for (k, v) in flags {
        if let Some(v) = v {
            cfg.set(k, v.clone());
        }
    }
    Ok(cfg)
}

fn s<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(T::to_string)
}

fn p(v: &Option<PathBuf>) -> Option<String> {
    v.as_ref().map(|p| p.to_string_lossy().into_owned())
}

fn run(command: Command) -> dred::Result<()> {
    match command {
        Command::Synth { seed, frames, out, common } => {
            let cfg = build_config(&common, &[("seed", s(&seed)), ("frames", s(&frames)), ("out", p(&out))])?;
            let path = cli::cmd_synth(&cfg)?;
            eprintln!("wrote {}", path.display());
        }
        Command::Train { seed, steps, corpus_dir, out, log, common } => {
            let cfg = build_config(
                &common,
                &[
                    ("seed", s(&seed)),
                    ("steps", s(&steps)),
                    ("corpus_dir", p(&corpus_dir)),
                    ("out", p(&out)),
                    ("log", p(&log)),
                ],
            )?;
            let outcome = cli::cmd_train(&cfg)?;
            print!("{}", cli::rd_csv(&outcome.points));
        }
        Command::RdSweep { table, corpus_dir, out, common } => {
            let cfg = build_config(
                &common,
                &[("table", p(&table)), ("corpus_dir", p(&corpus_dir)), ("out", p(&out))],
            )?;
            cli::cmd_rd_sweep(&cfg)?;
        }
        Command::BuildStream { table, features, schedule, out, common } => {
            let cfg = build_config(
                &common,
                &[
                    ("table", p(&table)),
                    ("features", p(&features)),
                    ("schedule", schedule),
                    ("out", p(&out)),
                ],
            )?;
            let n = cli::cmd_build_stream(&cfg)?;
            eprintln!("wrote {n} packets");
        }
        Command::Simulate { table, stream, trace, loss_rates, schedule, out, common } => {
            let cfg = build_config(
                &common,
                &[
                    ("table", p(&table)),
                    ("stream", p(&stream)),
                    ("trace", p(&trace)),
                    ("loss_rates", loss_rates),
                    ("schedule", schedule),
                    ("out", p(&out)),
                ],
            )?;
            cli::cmd_simulate(&cfg)?;
        }
        Command::GradCheck { seed, points, out, common } => {
            let cfg = build_config(&common, &[("seed", s(&seed)), ("points", s(&points)), ("out", p(&out))])?;
            let report = cli::cmd_grad_check(&cfg)?;
            if report.max_rel_err() >= 1e-4 {
                return Err(dred::Error::InvalidArgument(format!(
                    "gradient check failed: max relative error {:.3e}",
                    report.max_rel_err()
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
