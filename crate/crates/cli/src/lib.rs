//! Pipeline commands behind the `weaksupcon` binary.

pub mod config;
pub mod pipeline;
pub mod report;

use std::path::PathBuf;
use std::time::Instant;

use anyhow::Result;

pub use config::{Overrides, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    GenData,
    Pretrain,
    Extract,
    TrainMil,
    Eval,
    Analyze,
    Ablate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Pretrain => "pretrain",
            Command::Extract => "extract",
            Command::TrainMil => "train-mil",
            Command::Eval => "eval",
            Command::Analyze => "analyze",
            Command::Ablate => "ablate",
        }
    }
}

/// Runs one command and writes its manifest. Returns the artifact paths.
pub fn run(command: Command, cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let start = Instant::now();
    let seed = cfg.seed;
    let (artifacts, seeds) = match command {
        Command::GenData => (pipeline::gen_data(cfg)?, vec![cfg.data.seed]),
        Command::Pretrain => (pipeline::pretrain_stage(cfg, seed)?, vec![seed]),
        Command::Extract => (pipeline::extract_stage(cfg, seed)?, vec![seed]),
        Command::TrainMil => (pipeline::train_mil_stage(cfg, seed)?, vec![seed]),
        Command::Eval => (pipeline::eval_stage(cfg)?.0, cfg.seeds()),
        Command::Analyze => (pipeline::analyze_stage(cfg, seed)?.0, vec![seed]),
        Command::Ablate => (pipeline::ablate_stage(cfg)?, cfg.seeds()),
    };
    report::write_manifest(cfg, command.name(), seeds, &artifacts, start.elapsed())?;
    Ok(artifacts)
}

/// Short category for an error, used in the one-line diagnostic.
pub fn error_kind(err: &anyhow::Error) -> &'static str {
    use weaksupcon_core::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Format { .. } => "format",
                E::Io(_) => "io",
                E::InvalidConfig(_) => "config",
                E::ArchitectureMismatch(_) => "architecture",
                E::MetricUndefined(_) => "metric",
                E::ShapeMismatch { .. } | E::InvalidShape { .. } => "shape",
                _ => "compute",
            };
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return "config";
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return "io";
        }
    }
    let msg = err.to_string();
    if msg.starts_with("missing input") {
        "missing-input"
    } else {
        "config"
    }
}

/// `{"error": kind, "message": ...}` on one line.
pub fn error_line(err: &anyhow::Error) -> String {
    serde_json::json!({ "error": error_kind(err), "message": format!("{err:#}") }).to_string()
}
