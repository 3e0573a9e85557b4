//! Strict JSON experiment configuration.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use isogauss_core::sigreg::SigregConfig;
use isogauss_core::tracking::Signal;
use isogauss_core::train::{DatasetConfig, TrainConfig};
use isogauss_core::Distribution;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    SimulateTracking,
    Train,
    SigregEval,
    BoundsSweep,
    SteinVariance,
}

impl Command {
    pub const ALL: [Command; 5] = [
        Command::SimulateTracking,
        Command::Train,
        Command::SigregEval,
        Command::BoundsSweep,
        Command::SteinVariance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::SimulateTracking => "simulate-tracking",
            Command::Train => "train",
            Command::SigregEval => "sigreg-eval",
            Command::BoundsSweep => "bounds-sweep",
            Command::SteinVariance => "stein-variance",
        }
    }

    /// Key of the sub-configuration object belonging to this command.
    pub fn section(self) -> &'static str {
        match self {
            Command::SimulateTracking => "simulate_tracking",
            Command::Train => "train",
            Command::SigregEval => "sigreg_eval",
            Command::BoundsSweep => "bounds_sweep",
            Command::SteinVariance => "stein_variance",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::field("command", format!("unknown command '{s}'")))
    }
}

/// How the feature covariance of a tracking scenario is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SigmaSpec {
    /// Explicit symmetric positive definite matrix.
    Matrix { rows: Vec<Vec<f64>> },
    /// These eigenvalues in a random basis drawn from the run seed.
    Spectrum { eigenvalues: Vec<f64> },
}

impl Default for SigmaSpec {
    fn default() -> Self {
        // Condition number 100 in d = 8.
        SigmaSpec::Spectrum {
            eigenvalues: (0..8).map(|i| 0.1 * 100f64.powf(i as f64 / 7.0)).collect(),
        }
    }
}

impl SigmaSpec {
    pub fn dim(&self) -> usize {
        match self {
            SigmaSpec::Matrix { rows } => rows.len(),
            SigmaSpec::Spectrum { eigenvalues } => eigenvalues.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SigmaDriftSpec {
    pub delta: Vec<Vec<f64>>,
    pub omega: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackingCommand {
    pub sigma: SigmaSpec,
    /// Unit-amplitude sinusoid along a seeded random direction when absent.
    pub signal: Option<Signal>,
    pub w0: Option<Vec<f64>>,
    pub horizon: f64,
    pub dt: Option<f64>,
    pub drift_sigma: Option<SigmaDriftSpec>,
    /// Also run the equal-trace isotropic scenario.
    pub compare_isotropic: bool,
    /// Start of the window over which the summary averages `gamma`.
    pub burn_in: f64,
}

impl Default for TrackingCommand {
    fn default() -> Self {
        Self {
            sigma: SigmaSpec::default(),
            signal: None,
            w0: None,
            horizon: 20.0,
            dt: None,
            drift_sigma: None,
            compare_isotropic: true,
            burn_in: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainCommand {
    pub data: DatasetConfig,
    pub train: TrainConfig,
    /// Also train without the auxiliary loss on the same seed.
    pub compare_baseline: bool,
}

impl Default for TrainCommand {
    fn default() -> Self {
        Self {
            data: DatasetConfig::default(),
            train: TrainConfig::default(),
            compare_baseline: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SigregEvalCommand {
    pub sigreg: SigregConfig,
    pub n: usize,
    pub d: usize,
    /// Laws sampled with unit variance per coordinate.
    pub distributions: Vec<Distribution>,
    /// Constant added to every coordinate.
    pub shifts: Vec<f64>,
    /// Multiplier applied before the shift.
    pub scales: Vec<f64>,
}

impl Default for SigregEvalCommand {
    fn default() -> Self {
        Self {
            sigreg: SigregConfig::default(),
            n: 4096,
            d: 16,
            distributions: Distribution::ALL.to_vec(),
            shifts: vec![0.0, 1.0],
            scales: vec![1.0, 2.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsSweepCommand {
    pub dims: Vec<usize>,
    pub per_dim: usize,
    pub min_eig: f64,
    pub max_eig: f64,
}

impl Default for BoundsSweepCommand {
    fn default() -> Self {
        Self {
            dims: vec![2, 4, 8, 16],
            per_dim: 125,
            min_eig: 0.05,
            max_eig: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SteinVarianceCommand {
    pub d: usize,
    pub n: usize,
    pub sigma_scale: f64,
    pub distributions: Vec<Distribution>,
    /// Readout generating the regression target; first basis vector when absent.
    pub target_weights: Option<Vec<f64>>,
}

impl Default for SteinVarianceCommand {
    fn default() -> Self {
        Self {
            d: 8,
            n: 100_000,
            sigma_scale: 1.0,
            distributions: Distribution::ALL.to_vec(),
            target_weights: None,
        }
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Command,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Render SVG line plots next to the CSVs.
    #[serde(default)]
    pub plot: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate_tracking: Option<TrackingCommand>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainCommand>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigreg_eval: Option<SigregEvalCommand>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds_sweep: Option<BoundsSweepCommand>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stein_variance: Option<SteinVarianceCommand>,
}

impl ExperimentConfig {
    /// Default configuration for `command`.
    pub fn new(command: Command) -> Self {
        let mut cfg = Self {
            command,
            seeds: default_seeds(),
            output_dir: default_output_dir(),
            plot: false,
            simulate_tracking: None,
            train: None,
            sigreg_eval: None,
            bounds_sweep: None,
            stein_variance: None,
        };
        cfg.fill_defaults();
        cfg
    }

    fn fill_defaults(&mut self) {
        match self.command {
            Command::SimulateTracking => {
                self.simulate_tracking.get_or_insert_with(Default::default);
            }
            Command::Train => {
                self.train.get_or_insert_with(Default::default);
            }
            Command::SigregEval => {
                self.sigreg_eval.get_or_insert_with(Default::default);
            }
            Command::BoundsSweep => {
                self.bounds_sweep.get_or_insert_with(Default::default);
            }
            Command::SteinVariance => {
                self.stein_variance.get_or_insert_with(Default::default);
            }
        }
    }

    fn present_sections(&self) -> Vec<Command> {
        let present = [
            self.simulate_tracking.is_some(),
            self.train.is_some(),
            self.sigreg_eval.is_some(),
            self.bounds_sweep.is_some(),
            self.stein_variance.is_some(),
        ];
        Command::ALL
            .into_iter()
            .zip(present)
            .filter(|(_, p)| *p)
            .map(|(c, _)| c)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(other) = self.present_sections().into_iter().find(|&c| c != self.command) {
            return Err(Error::field(
                other.section(),
                format!("section does not belong to command '{}'", self.command),
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::field("seeds", "at least one seed is required"));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::field("seeds", "seeds must be distinct"));
        }
        let core = |section: &str, r: isogauss_core::Result<()>| r.map_err(|e| Error::field(section, e.to_string()));
        if let Some(t) = &self.simulate_tracking {
            if t.sigma.dim() == 0 {
                return Err(Error::field("simulate_tracking.sigma", "must be non-empty"));
            }
            if !(t.burn_in >= 0.0 && t.burn_in < t.horizon) {
                return Err(Error::field("simulate_tracking.burn_in", "must lie in [0, horizon)"));
            }
        }
        if let Some(t) = &self.train {
            core("train.data", t.data.validate())?;
            core("train.train", t.train.validate())?;
        }
        if let Some(s) = &self.sigreg_eval {
            core("sigreg_eval.sigreg", s.sigreg.validate())?;
            if s.n < 2 || s.d == 0 {
                return Err(Error::field("sigreg_eval", "needs n >= 2 and d >= 1"));
            }
            if s.distributions.is_empty() || s.shifts.is_empty() || s.scales.is_empty() {
                return Err(Error::field(
                    "sigreg_eval",
                    "distributions, shifts and scales must be non-empty",
                ));
            }
        }
        if let Some(b) = &self.bounds_sweep {
            if b.dims.is_empty() || b.dims.contains(&0) {
                return Err(Error::field("bounds_sweep.dims", "must list positive dimensions"));
            }
            if !(b.min_eig > 0.0 && b.min_eig <= b.max_eig && b.max_eig.is_finite()) {
                return Err(Error::field("bounds_sweep", "needs 0 < min_eig <= max_eig"));
            }
        }
        if let Some(s) = &self.stein_variance {
            if s.d == 0 || s.distributions.is_empty() {
                return Err(Error::field(
                    "stein_variance",
                    "needs d >= 1 and at least one distribution",
                ));
            }
            if let Some(w) = &s.target_weights {
                if w.len() != s.d {
                    return Err(Error::field("stein_variance.target_weights", "length must equal d"));
                }
            }
        }
        Ok(())
    }

    /// Canonical pretty-printed JSON, the form stored next to run outputs.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let start: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    (start + column.saturating_sub(1)).min(text.len())
}

/// Parses and validates a configuration. `command` comes from the command
/// line; it fills a missing `"command"` key and must agree with a present one.
pub fn parse_config_str(text: &str, command: Option<Command>) -> Result<ExperimentConfig> {
    if text.trim().is_empty() {
        return Err(Error::Usage("empty config".into()));
    }
    let mut value: Value = serde_json::from_str(text).map_err(|e| Error::Syntax {
        offset: byte_offset(text, e.line(), e.column()),
        message: e.to_string(),
    })?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| Error::field("<root>", "config must be a JSON object"))?;
    if let Some(cmd) = command {
        match obj.get("command") {
            None => {
                obj.insert("command".into(), Value::String(cmd.name().into()));
            }
            Some(given) if given.as_str() != Some(cmd.name()) => {
                return Err(Error::field(
                    "command",
                    format!("config says {given} but '{cmd}' was requested"),
                ));
            }
            Some(_) => {}
        }
    }
    let mut cfg: ExperimentConfig = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        Error::field(if path == "." { "<root>" } else { &path }, e.into_inner().to_string())
    })?;
    cfg.validate()?;
    cfg.fill_defaults();
    Ok(cfg)
}

pub fn parse_config(path: &Path, command: Option<Command>) -> Result<ExperimentConfig> {
    let text = if path == Path::new("-") {
        std::io::read_to_string(std::io::stdin()).map_err(|e| Error::io(path, e))?
    } else {
        std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?
    };
    parse_config_str(&text, command)
}

/// `"3"`, `"0..4"` (inclusive) or `"1,5,9"`.
pub fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    let bad = || Error::field("--seeds", format!("cannot parse '{spec}'"));
    let num = |s: &str| s.trim().parse::<u64>().map_err(|_| bad());
    if let Some((a, b)) = spec.split_once("..") {
        let (a, b) = (num(a)?, num(b.strip_prefix('=').unwrap_or(b))?);
        if a > b {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    spec.split(',').map(num).collect()
}
