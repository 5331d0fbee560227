use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use weaksupcon_cli::{error_line, run, Command, Overrides, RunConfig};
use weaksupcon_core::milmodels::MilKind;
use weaksupcon_core::representation::PretrainMode;

#[derive(Parser)]
#[command(name = "weaksupcon", version, about = "Weakly supervised contrastive pretraining and MIL on synthetic bags")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic benchmark feature stores
    GenData(Common),
    /// Contrastive pretraining; writes a checkpoint and loss log
    Pretrain(Common),
    /// Frozen embeddings for every split
    Extract(Common),
    /// Train a MIL head on extracted embeddings
    TrainMil(Common),
    /// Test metrics over the repeat seeds
    Eval(Common),
    /// Anchor, histogram and PCA diagnostics on projected features
    Analyze(Common),
    /// Similarity Loss weight sweep
    Ablate(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<PretrainMode>,
    #[arg(long = "mil-kind", value_parser = parse_kind)]
    mil_kind: Option<MilKind>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_mode(s: &str) -> Result<PretrainMode, String> {
    s.parse().map_err(|e: weaksupcon_core::Error| e.to_string())
}

fn parse_kind(s: &str) -> Result<MilKind, String> {
    s.parse().map_err(|e: weaksupcon_core::Error| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let (command, common) = match cli.command {
        Cmd::GenData(c) => (Command::GenData, c),
        Cmd::Pretrain(c) => (Command::Pretrain, c),
        Cmd::Extract(c) => (Command::Extract, c),
        Cmd::TrainMil(c) => (Command::TrainMil, c),
        Cmd::Eval(c) => (Command::Eval, c),
        Cmd::Analyze(c) => (Command::Analyze, c),
        Cmd::Ablate(c) => (Command::Ablate, c),
    };
    let overrides = Overrides {
        seed: common.seed,
        alpha: common.alpha,
        tau: common.tau,
        mode: common.mode,
        mil_kind: common.mil_kind,
        out: common.out,
    };
    let result = RunConfig::load(common.config.as_deref())
        .map(|c| c.apply(&overrides))
        .and_then(|cfg| run(command, &cfg));
    match result {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::FAILURE
        }
    }
}
