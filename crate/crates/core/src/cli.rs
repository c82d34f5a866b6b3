//! Command-line front end.

use std::path::PathBuf;

use clap::Parser;

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::harness::{run_experiment, write_outputs, ExperimentReport};

/// Run plurality-consensus trials and write CSV and JSON results.
///
/// Values come from defaults, then `--config`, then the flags below.
#[derive(Debug, Clone, Default, Parser)]
#[command(name = "plurality", version)]
pub struct Args {
    /// Flat `key = value` file using the flag names as keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// sync, async-single or async-multi.
    #[arg(long)]
    pub protocol: Option<String>,
    #[arg(long)]
    pub n: Option<String>,
    #[arg(long)]
    pub k: Option<String>,
    /// Initial bias between the two largest opinions.
    #[arg(long)]
    pub alpha: Option<String>,
    #[arg(long)]
    pub gamma: Option<String>,
    /// Channel latency rate.
    #[arg(long)]
    pub lambda: Option<String>,
    #[arg(long)]
    pub epsilon: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub trials: Option<String>,
    #[arg(long)]
    pub gen_cap: Option<String>,
    /// Rounds for sync, time units for the asynchronous protocols.
    #[arg(long)]
    pub budget: Option<String>,
    #[arg(long)]
    pub snapshot_interval: Option<String>,
    #[arg(long)]
    pub leader_prob: Option<String>,
    #[arg(long)]
    pub cluster_size: Option<String>,
    #[arg(long)]
    pub wait1: Option<String>,
    #[arg(long)]
    pub wait2: Option<String>,
    #[arg(long)]
    pub broadcast_window: Option<String>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Also write a text event trace per trial.
    #[arg(long)]
    pub trace: bool,
}

impl Args {
    pub fn to_config(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        let flags = [
            ("protocol", &self.protocol),
            ("n", &self.n),
            ("k", &self.k),
            ("alpha", &self.alpha),
            ("gamma", &self.gamma),
            ("lambda", &self.lambda),
            ("epsilon", &self.epsilon),
            ("seed", &self.seed),
            ("trials", &self.trials),
            ("gen-cap", &self.gen_cap),
            ("budget", &self.budget),
            ("snapshot-interval", &self.snapshot_interval),
            ("leader-prob", &self.leader_prob),
            ("cluster-size", &self.cluster_size),
            ("wait1", &self.wait1),
            ("wait2", &self.wait2),
            ("broadcast-window", &self.broadcast_window),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        if let Some(dir) = &self.out_dir {
            cfg.out_dir = dir.clone();
        }
        if self.trace {
            cfg.trace = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Runs the experiment described by `args` and writes its outputs.
pub fn run(args: &Args) -> Result<ExperimentReport> {
    let cfg = args.to_config()?;
    let report = run_experiment(&cfg)?;
    write_outputs(&report, &cfg.out_dir)?;
    Ok(report)
}
