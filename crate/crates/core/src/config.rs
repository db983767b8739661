//! Pipeline configuration: a TOML file with one table per stage, overridden
//! by command-line flags.
//!
//! ```toml
//! [step]
//! jerk_init = 1.0
//!
//! [heading]
//! corr_gate = 0.8
//!
//! [floor]
//! eps_hpa = 0.1
//! floors = "auto"      # or a fixed count such as 3
//!
//! [turn]
//! epsilon_rad = 1.0
//! window_min = 4
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::featurize::TurningConfig;
use crate::floors::FloorConfig;
use crate::heading::HeadingConfig;
use crate::stepdetect::StepConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Read { path: String, message: String },
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("config key {key}: {message}")]
    Invalid { key: String, message: String },
}

/// Number of floors to cluster into: found automatically from the linkage
/// cut, or fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FloorCount {
    #[default]
    Auto,
    Fixed(usize),
}

impl FromStr for FloorCount {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(FloorCount::Auto);
        }
        match s.parse::<usize>() {
            Ok(k) if k >= 1 => Ok(FloorCount::Fixed(k)),
            _ => Err(format!("expected \"auto\" or a positive floor count, got {s:?}")),
        }
    }
}

impl fmt::Display for FloorCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FloorCount::Auto => f.write_str("auto"),
            FloorCount::Fixed(k) => write!(f, "{k}"),
        }
    }
}

impl Serialize for FloorCount {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            FloorCount::Auto => s.serialize_str("auto"),
            FloorCount::Fixed(k) => s.serialize_u64(*k as u64),
        }
    }
}

impl<'de> Deserialize<'de> for FloorCount {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(i64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Count(k) if k >= 1 => Ok(FloorCount::Fixed(k as usize)),
            Raw::Count(k) => Err(serde::de::Error::custom(format!("floor count must be positive, got {k}"))),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FloorSection {
    pub eps_hpa: f64,
    pub min_pts: usize,
    pub cut: f64,
    pub max_clusters: usize,
    pub floors: FloorCount,
}

impl Default for FloorSection {
    fn default() -> Self {
        let c = FloorConfig::default();
        Self {
            eps_hpa: c.eps_hpa,
            min_pts: c.min_pts,
            cut: c.cut,
            max_clusters: c.max_clusters,
            floors: FloorCount::Auto,
        }
    }
}

impl FloorSection {
    pub fn clustering(&self) -> FloorConfig {
        FloorConfig {
            eps_hpa: self.eps_hpa,
            min_pts: self.min_pts,
            cut: self.cut,
            max_clusters: self.max_clusters,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub match_radius_m: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { match_radius_m: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub gait_model: Option<PathBuf>,
    pub seed: u64,
    pub step: StepConfig,
    pub heading: HeadingConfig,
    pub floor: FloorSection,
    pub turn: TurningConfig,
    pub eval: EvalConfig,
}

fn check(ok: bool, key: &str, message: &str) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::Invalid {
            key: key.into(),
            message: message.into(),
        })
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration is representable as TOML")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let s = &self.step;
        let pos = |v: f64| v > 0.0 && v.is_finite();
        check(pos(s.jerk_init), "step.jerk_init", "must be positive")?;
        check(pos(s.jerk_floor), "step.jerk_floor", "must be positive")?;
        check(pos(s.pace_init), "step.pace_init", "must be positive")?;
        check(pos(s.pace_floor), "step.pace_floor", "must be positive")?;
        check(
            pos(s.pace_ceiling) && s.pace_ceiling >= s.pace_floor,
            "step.pace_ceiling",
            "must be positive and at least step.pace_floor",
        )?;
        check(s.buffer_capacity >= 1, "step.buffer_capacity", "must be at least 1")?;
        check(
            s.update_ratio > 0.0 && s.update_ratio <= 1.0,
            "step.update_ratio",
            "must be in (0, 1]",
        )?;
        check(s.smooth_window >= 1, "step.smooth_window", "must be at least 1")?;
        check(
            s.min_prominence >= 0.0 && s.min_prominence.is_finite(),
            "step.min_prominence",
            "must be non-negative",
        )?;

        let h = &self.heading;
        check(pos(h.g_tol), "heading.g_tol", "must be positive")?;
        check(
            h.corr_gate > -1.0 && h.corr_gate < 1.0,
            "heading.corr_gate",
            "must be in (-1, 1)",
        )?;
        check(pos(h.corr_window_s), "heading.corr_window_s", "must be positive")?;
        check(
            h.pca_min_ratio >= 1.0 && h.pca_min_ratio.is_finite(),
            "heading.pca_min_ratio",
            "must be at least 1",
        )?;

        let f = &self.floor;
        check(pos(f.eps_hpa), "floor.eps_hpa", "must be positive")?;
        check(f.min_pts >= 1, "floor.min_pts", "must be at least 1")?;
        check(f.cut > 0.0 && f.cut <= 1.0, "floor.cut", "must be in (0, 1]")?;
        check(f.max_clusters >= 1, "floor.max_clusters", "must be at least 1")?;

        let t = &self.turn;
        check(
            pos(t.epsilon) && t.epsilon <= std::f64::consts::PI,
            "turn.epsilon_rad",
            "must be in (0, pi]",
        )?;
        check(t.window_min >= 1, "turn.window_min", "must be at least 1")?;
        check(pos(t.min_subtraj_len), "turn.min_len_m", "must be positive")?;

        check(pos(self.eval.match_radius_m), "eval.match_radius_m", "must be positive")?;
        Ok(())
    }
}
