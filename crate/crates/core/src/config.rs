//! Experiment configuration.
//!
//! A configuration is built from defaults, then an optional flat `key = value`
//! file, then command-line flags. Keys are the long flag names without dashes
//! (`n`, `alpha`, `gen-cap`, ...).

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    Sync,
    AsyncSingle,
    AsyncMulti,
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sync" => Ok(Protocol::Sync),
            "async-single" => Ok(Protocol::AsyncSingle),
            "async-multi" => Ok(Protocol::AsyncMulti),
            other => Err(Error::Config(format!(
                "unknown protocol `{other}` (expected sync, async-single or async-multi)"
            ))),
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Sync => "sync",
            Protocol::AsyncSingle => "async-single",
            Protocol::AsyncMulti => "async-multi",
        })
    }
}

/// Clustering overrides. `None` means "derive from `n`".
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ClusterSettings {
    pub leader_probability: Option<f64>,
    pub size_cap: Option<u32>,
    pub wait1: Option<u64>,
    pub wait2: Option<u64>,
    /// In time units.
    pub broadcast_window: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub protocol: Protocol,
    pub n: u64,
    pub k: u32,
    pub alpha0: f64,
    pub gamma: f64,
    pub lambda: f64,
    /// Defaults to `1 / log^2 n`.
    pub epsilon: Option<f64>,
    pub seed: u64,
    pub trials: u64,
    pub generation_cap: Option<u32>,
    /// Rounds (sync) or time units (async).
    pub budget: Option<f64>,
    /// Snapshot spacing in time steps for the asynchronous engines.
    pub snapshot_interval: f64,
    pub cluster: ClusterSettings,
    pub out_dir: PathBuf,
    /// Write a per-trial event trace next to the CSV files.
    pub trace: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            protocol: Protocol::Sync,
            n: 10_000,
            k: 2,
            alpha0: 1.5,
            gamma: 0.5,
            lambda: 1.0,
            epsilon: None,
            seed: 0,
            trials: 1,
            generation_cap: None,
            budget: None,
            snapshot_interval: 0.25,
            cluster: ClusterSettings::default(),
            out_dir: PathBuf::from("out"),
            trace: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse `{value}` for `{key}`")))
}

impl ExperimentConfig {
    /// Sets one key. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "protocol" => self.protocol = v.parse()?,
            "n" => self.n = parse(key, v)?,
            "k" => self.k = parse(key, v)?,
            "alpha" => self.alpha0 = parse(key, v)?,
            "gamma" => self.gamma = parse(key, v)?,
            "lambda" => self.lambda = parse(key, v)?,
            "epsilon" => self.epsilon = Some(parse(key, v)?),
            "seed" => self.seed = parse(key, v)?,
            "trials" => self.trials = parse(key, v)?,
            "gen-cap" => self.generation_cap = Some(parse(key, v)?),
            "budget" => self.budget = Some(parse(key, v)?),
            "snapshot-interval" => self.snapshot_interval = parse(key, v)?,
            "leader-prob" => self.cluster.leader_probability = Some(parse(key, v)?),
            "cluster-size" => self.cluster.size_cap = Some(parse(key, v)?),
            "wait1" => self.cluster.wait1 = Some(parse(key, v)?),
            "wait2" => self.cluster.wait2 = Some(parse(key, v)?),
            "broadcast-window" => self.cluster.broadcast_window = Some(parse(key, v)?),
            "out-dir" => self.out_dir = PathBuf::from(v),
            "trace" => self.trace = parse(key, v)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Applies a flat `key = value` text. Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        self.apply_text(&text)
    }

    /// Checks every cross-field constraint, naming the first one violated.
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::param("k", "k must be at least 1"));
        }
        if u64::from(self.k) > self.n {
            return Err(Error::param("k", format!("k > n ({} > {})", self.k, self.n)));
        }
        if !(self.alpha0 >= 1.0 && self.alpha0.is_finite()) {
            return Err(Error::param("alpha", format!("alpha must be >= 1, got {}", self.alpha0)));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::param(
                "gamma",
                format!("gamma must lie in (0, 1), got {}", self.gamma),
            ));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::param("lambda", format!("lambda must be > 0, got {}", self.lambda)));
        }
        if let Some(e) = self.epsilon {
            if !(0.0..1.0).contains(&e) {
                return Err(Error::param("epsilon", format!("epsilon must lie in [0, 1), got {e}")));
            }
        }
        if let Some(b) = self.budget {
            if !(b > 0.0) {
                return Err(Error::param("budget", format!("budget must be > 0, got {b}")));
            }
        }
        if self.generation_cap == Some(0) {
            return Err(Error::param("gen-cap", "generation cap must be at least 1"));
        }
        if !(self.snapshot_interval > 0.0) {
            return Err(Error::param("snapshot-interval", "must be > 0"));
        }
        let c = &self.cluster;
        if let Some(p) = c.leader_probability {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::param("leader-prob", format!("must lie in (0, 1], got {p}")));
            }
        }
        if c.size_cap == Some(0) || c.wait1 == Some(0) || c.wait2 == Some(0) {
            return Err(Error::param("cluster", "cluster size and wait thresholds must be positive"));
        }
        if let Some(w) = c.broadcast_window {
            if !(w > 0.0) {
                return Err(Error::param("broadcast-window", "must be > 0"));
            }
        }
        Ok(())
    }

    /// `epsilon`, or `1 / log^2 n` when unset.
    pub fn resolved_epsilon(&self) -> f64 {
        self.epsilon.unwrap_or_else(|| {
            let l = (self.n as f64).log2();
            if l > 0.0 { (1.0 / (l * l)).min(0.5) } else { 0.5 }
        })
    }
}
