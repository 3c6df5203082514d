//! Run configuration and the TOML configuration file.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{ByzantineKind, MovementPolicy};
use crate::rules::RuleKind;
use crate::schedule::{ActivationUnit, SchedulerKind};

pub const DEFAULT_DELTA: f64 = 0.01;
pub const DEFAULT_EPSILON: f64 = 1e-3;
pub const DEFAULT_MAX_STEPS: u64 = 100_000;

/// One field-level problem with a configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("invalid configuration:\n{}", format_fields(.0))]
    Invalid(Vec<FieldError>),
    #[error("cannot parse configuration: {0}")]
    Parse(String),
}

fn format_fields(errors: &[FieldError]) -> String {
    errors
        .iter()
        .map(|e| format!("  - {e}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Initial placement of the correct robots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialPositions {
    /// Explicit coordinates, one per correct robot, in robot-id order.
    Explicit { positions: Vec<f64> },
    /// Independent uniform draws from `[lo, hi]`.
    Uniform { lo: f64, hi: f64 },
}

impl Default for InitialPositions {
    fn default() -> Self {
        InitialPositions::Uniform { lo: 0.0, hi: 100.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrameMode {
    Identity,
    /// A fresh random frame at every Look: origin uniform in
    /// `[-1000, 1000]`, scale uniform in `[-2, -0.5] ∪ [0.5, 2]`.
    #[default]
    RandomPerLook,
}

/// Everything that determines a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub n: usize,
    pub f: usize,
    #[serde(default = "default_k")]
    pub k: u32,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub rule: RuleKind,
    #[serde(default)]
    pub scheduler: SchedulerKind,
    #[serde(default)]
    pub byzantine: ByzantineKind,
    #[serde(default)]
    pub movement: MovementPolicy,
    #[serde(default)]
    pub initial: InitialPositions,
    #[serde(default)]
    pub frame_mode: FrameMode,
    #[serde(default)]
    pub activation_unit: ActivationUnit,
}

fn default_k() -> u32 {
    1
}
fn default_delta() -> f64 {
    DEFAULT_DELTA
}
fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}
fn default_max_steps() -> u64 {
    DEFAULT_MAX_STEPS
}

impl SimConfig {
    /// A configuration with every optional field at its default.
    pub fn new(n: usize, f: usize) -> Self {
        Self {
            n,
            f,
            k: default_k(),
            delta: DEFAULT_DELTA,
            epsilon: DEFAULT_EPSILON,
            max_steps: DEFAULT_MAX_STEPS,
            seed: 0,
            rule: RuleKind::default(),
            scheduler: SchedulerKind::default(),
            byzantine: ByzantineKind::default(),
            movement: MovementPolicy::default(),
            initial: InitialPositions::default(),
            frame_mode: FrameMode::default(),
            activation_unit: ActivationUnit::default(),
        }
    }

    pub fn byzantine_count(&self) -> usize {
        self.byzantine.byzantine_count(self.f)
    }

    pub fn correct_count(&self) -> usize {
        self.n.saturating_sub(self.byzantine_count())
    }

    /// Checks every invariant and reports all failures at once.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errs = Vec::new();
        let mut bad = |field: &str, message: String| {
            errs.push(FieldError {
                field: field.to_owned(),
                message,
            })
        };
        let rule = self.rule.rule();
        let required = rule.min_robots(self.f);
        if self.n < required {
            let constraint = match self.rule {
                RuleKind::Paper3f1 => "n > 3f",
                RuleKind::NaiveTrim => "n > 2f",
            };
            bad(
                "n",
                format!(
                    "rule `{}` requires {constraint}: got n = {}, f = {} (need n >= {required})",
                    rule.name(),
                    self.n,
                    self.f
                ),
            );
        }
        if self.n == 0 {
            bad("n", "at least one robot is required".into());
        }
        if self.k < 1 {
            bad("k", "k must be >= 1".into());
        }
        if !(self.delta.is_finite() && self.delta > 0.0) {
            bad(
                "delta",
                format!("delta must be finite and > 0, got {}", self.delta),
            );
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            bad(
                "epsilon",
                format!("epsilon must be finite and > 0, got {}", self.epsilon),
            );
        }
        if let Err(e) = self.byzantine.validate() {
            bad("byzantine", e);
        }
        if let Err(e) = self.movement.validate() {
            bad("movement", e);
        }
        let correct = self.correct_count();
        if correct == 0 {
            bad("n", "there must be at least one correct robot".into());
        } else if let Err(e) = self.scheduler.validate(correct) {
            bad("scheduler", e);
        }
        match &self.initial {
            InitialPositions::Explicit { positions } => {
                if positions.len() != correct {
                    bad(
                        "initial.positions",
                        format!(
                            "expected {correct} positions (one per correct robot), got {}",
                            positions.len()
                        ),
                    );
                }
                if positions.iter().any(|p| !p.is_finite()) {
                    bad("initial.positions", "positions must be finite".into());
                }
            }
            InitialPositions::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                    bad(
                        "initial",
                        format!("uniform bounds must be finite with lo <= hi, got [{lo}, {hi}]"),
                    );
                }
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(errs))
        }
    }
}

/// Sweep section of a configuration file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiments {
    /// Number of seeds per grid point; overridden by `--seeds`.
    #[serde(default)]
    pub seeds: Option<u64>,
    /// Parameter grid: a dotted field path (e.g. `k`, `scheduler`,
    /// `movement.kind`) mapped to the values it takes.
    #[serde(default)]
    pub grid: BTreeMap<String, Vec<toml::Value>>,
}

/// A configuration file: a [`SimConfig`] plus an optional `[experiments]`
/// table.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigFile {
    pub sim: SimConfig,
    pub experiments: Experiments,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let experiments = match table.remove("experiments") {
            Some(v) => v
                .try_into()
                .map_err(|e: toml::de::Error| ConfigError::Parse(format!("experiments: {e}")))?,
            None => Experiments::default(),
        };
        let sim: SimConfig = toml::Value::Table(table.clone())
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        reject_unknown_keys(&table, &sim)?;
        sim.validate()?;
        Ok(Self { sim, experiments })
    }
}

/// Serde ignores stray keys next to a unit variant's tag, so compare the
/// input against what the parsed value writes back out.
fn reject_unknown_keys(input: &toml::Table, sim: &SimConfig) -> Result<(), ConfigError> {
    let echo = toml::Table::try_from(sim).map_err(|e| ConfigError::Parse(e.to_string()))?;
    match unknown_key(input, &echo, "") {
        Some(path) => Err(ConfigError::Parse(format!("unknown field `{path}`"))),
        None => Ok(()),
    }
}

fn unknown_key(input: &toml::Table, echo: &toml::Table, prefix: &str) -> Option<String> {
    for (key, value) in input {
        let path = if prefix.is_empty() {
            key.clone()
        } else {
            format!("{prefix}.{key}")
        };
        match (value, echo.get(key)) {
            (_, None) => return Some(path),
            (toml::Value::Table(inner), Some(toml::Value::Table(out))) => {
                if let Some(p) = unknown_key(inner, out, &path) {
                    return Some(p);
                }
            }
            _ => {}
        }
    }
    None
}

/// One point of a parameter grid: the overrides applied and the resulting
/// configuration (or why it is invalid).
#[derive(Debug, Clone)]
pub struct GridPoint {
    pub key: String,
    pub config: Result<SimConfig, ConfigError>,
}

fn set_path(table: &mut toml::Table, path: &str, value: toml::Value) {
    match path.split_once('.') {
        None => {
            table.insert(path.to_owned(), value);
        }
        Some((head, rest)) => {
            let entry = table
                .entry(head.to_owned())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            if !entry.is_table() {
                *entry = toml::Value::Table(toml::Table::new());
            }
            if let toml::Value::Table(t) = entry {
                set_path(t, rest, value);
            }
        }
    }
}

fn render_value(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        toml::Value::Table(t) => t
            .get("kind")
            .and_then(toml::Value::as_str)
            .map(str::to_owned)
            .unwrap_or_else(|| v.to_string()),
        other => other.to_string(),
    }
}

/// Expands the cartesian product of `grid` over `base`. An empty grid yields
/// the base configuration alone.
pub fn expand_grid(base: &SimConfig, grid: &BTreeMap<String, Vec<toml::Value>>) -> Vec<GridPoint> {
    let mut points: Vec<Vec<(&str, &toml::Value)>> = vec![Vec::new()];
    for (path, values) in grid {
        points = points
            .into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push((path.as_str(), v));
                    p
                })
            })
            .collect();
    }
    let base_table = match toml::Value::try_from(base) {
        Ok(toml::Value::Table(t)) => t,
        _ => unreachable!("SimConfig serializes to a table"),
    };
    points
        .into_iter()
        .map(|overrides| {
            let key = if overrides.is_empty() {
                "base".to_owned()
            } else {
                overrides
                    .iter()
                    .map(|(p, v)| format!("{p}={}", render_value(v)))
                    .collect::<Vec<_>>()
                    .join(",")
            };
            let mut table = base_table.clone();
            for (path, value) in &overrides {
                // A whole-table override replaces the old table outright.
                if value.is_table() {
                    table.remove(*path);
                }
                set_path(&mut table, path, (*value).clone());
            }
            let config = toml::Value::Table(table.clone())
                .try_into::<SimConfig>()
                .map_err(|e| ConfigError::Parse(e.to_string()))
                .and_then(|c| reject_unknown_keys(&table, &c).map(|()| c))
                .and_then(|c| c.validate().map(|()| c));
            GridPoint { key, config }
        })
        .collect()
}
