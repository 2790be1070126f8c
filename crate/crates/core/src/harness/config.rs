//! Declarative experiment configuration, accepted as TOML or JSON and
//! validated before any computation.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonians::{self, HermitianSymbol};
use crate::harness::metrics::Bump;
use crate::harness::rules::RuleKind;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub name: String,
    pub hamiltonian: HamiltonianSpec,
    pub eps: Vec<f64>,
    pub initial: InitialData,
    pub time: TimeWindow,
    #[serde(default)]
    pub method: Method,
    #[serde(default)]
    pub rule: RuleSpec,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub metric: MetricSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HamiltonianSpec {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

fn one() -> f64 {
    1.0
}

/// A Gaussian packet `g^{Gamma, eps}_{(q, p)}`; for two-level Hamiltonians it
/// is placed on eigenvector `level` (`0` is the lower level).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialData {
    pub q: f64,
    pub p: f64,
    #[serde(default)]
    pub width_re: f64,
    #[serde(default = "one")]
    pub width_im: f64,
    #[serde(default)]
    pub level: usize,
}

fn two() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeWindow {
    pub t0: f64,
    pub t1: f64,
    /// Number of uniformly spaced output times, endpoints included.
    #[serde(default = "two")]
    pub outputs: usize,
}

impl TimeWindow {
    pub fn times(&self) -> Vec<f64> {
        let n = self.outputs.max(2);
        (0..n).map(|i| self.t0 + (self.t1 - self.t0) * i as f64 / (n - 1) as f64).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Frozen Herman–Kluk sum.
    #[default]
    Hk,
    /// One thawed Gaussian.
    Thawed,
    /// Thawed Gaussians from the frame decomposition.
    ThawedSum,
    /// Herman–Kluk sum with parallel-transported eigenvectors.
    AdiabaticHk,
    /// Two-branch thawed packet through a crossing.
    WavePacketCrossing,
    /// Two-branch Herman–Kluk sum through a crossing.
    HkCrossing,
}

impl Method {
    pub fn is_scalar(self) -> bool {
        matches!(self, Method::Hk | Method::Thawed | Method::ThawedSum)
    }
}

fn half() -> f64 {
    0.5
}

fn default_nodes() -> usize {
    4000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSpec {
    #[serde(default = "default_kind")]
    pub kind: RuleKind,
    /// Grid spacing in units of `sqrt(eps)`.
    #[serde(default = "half")]
    pub spacing_factor: f64,
    /// Monte-Carlo sample size.
    #[serde(default = "default_nodes")]
    pub nodes: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_kind() -> RuleKind {
    RuleKind::Grid
}

impl Default for RuleSpec {
    fn default() -> Self {
        Self { kind: RuleKind::Grid, spacing_factor: 0.5, nodes: default_nodes(), seed: 0 }
    }
}

fn default_points() -> usize {
    4096
}

fn default_half_width() -> f64 {
    8.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default = "default_points")]
    pub points: usize,
    #[serde(default = "default_half_width")]
    pub half_width: f64,
    /// Defaults to the initial position.
    #[serde(default)]
    pub center: Option<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { points: default_points(), half_width: default_half_width(), center: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricKind {
    /// L2 error at the last output time.
    #[default]
    Final,
    /// Largest L2 error over the output times.
    MaxOverTime,
    /// L2 norm of the bump-weighted time integral of the difference.
    TimeAveraged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct MetricSpec {
    #[serde(default)]
    pub kind: MetricKind,
    #[serde(default)]
    pub bump: Option<Bump>,
    /// Accepted window for the fitted slope of error against eps.
    #[serde(default)]
    pub target_slope: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub dir: Option<PathBuf>,
    /// Also write the final states as CSV.
    #[serde(default)]
    pub write_states: bool,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config_err(e.to_string()))
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Reads `.toml` or `.json` by extension.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => Self::from_toml_str(&text),
            Some("json") => Self::from_json_str(&text),
            _ => Err(config_err(format!("{}: expected a .toml or .json file", path.display()))),
        }
    }

    pub fn symbol(&self) -> Result<HermitianSymbol> {
        hamiltonians::build(&self.hamiltonian.name, &self.hamiltonian.params).map_err(|e| match e {
            Error::UnknownHamiltonian(n) => config_err(format!("unknown Hamiltonian `{n}`")),
            other => config_err(other.to_string()),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(config_err(format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version)));
        }
        if self.eps.is_empty() || self.eps.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
            return Err(config_err("eps must be a non-empty list of positive numbers"));
        }
        if !(self.time.t1 > self.time.t0) || self.time.outputs < 2 {
            return Err(config_err("time window needs t1 > t0 and at least two outputs"));
        }
        if !(self.initial.width_im > 0.0) {
            return Err(config_err("initial width must have positive imaginary part"));
        }
        let symbol = self.symbol()?;
        match (&symbol, self.method) {
            (HermitianSymbol::Scalar(_), m) if !m.is_scalar() => {
                return Err(config_err("two-level methods need a two-level Hamiltonian"));
            }
            (HermitianSymbol::Scalar(h), _) if h.potential(0.0).is_none() => {
                return Err(config_err("the split-step reference needs a Hamiltonian of the form p^2/2 + V(q)"));
            }
            (HermitianSymbol::Toy(_), m) if m.is_scalar() => {
                return Err(config_err("scalar methods need a scalar Hamiltonian"));
            }
            (HermitianSymbol::Diagonal(_), _) => {
                return Err(config_err("no reference solver is available for the diagonal pair"));
            }
            _ => {}
        }
        if self.initial.level >= symbol.levels() {
            return Err(config_err("initial level out of range"));
        }
        if self.rule.kind == RuleKind::MonteCarlo && (self.rule.nodes == 0 || self.method != Method::Hk) {
            return Err(config_err("Monte-Carlo rules need at least one node and the hk method"));
        }
        if !(self.rule.spacing_factor > 0.0) {
            return Err(config_err("spacing_factor must be positive"));
        }
        if self.grid.points < 16 || !(self.grid.half_width > 0.0) {
            return Err(config_err("grid needs at least 16 points and a positive half width"));
        }
        if self.metric.kind == MetricKind::TimeAveraged {
            let Some(b) = self.metric.bump else {
                return Err(config_err("time-averaged metric needs a bump"));
            };
            if b.center - b.half_width < self.time.t0 || b.center + b.half_width > self.time.t1 {
                return Err(config_err("bump support escapes the time window"));
            }
            if self.time.outputs % 2 == 0 {
                return Err(config_err("time-averaged metric needs an odd number of outputs"));
            }
        }
        if let Some((lo, hi)) = self.metric.target_slope {
            if !(lo <= hi) {
                return Err(config_err("target slope window is empty"));
            }
            if self.eps.len() < 3 {
                return Err(config_err("a slope target needs at least three eps values"));
            }
        }
        Ok(())
    }
}
