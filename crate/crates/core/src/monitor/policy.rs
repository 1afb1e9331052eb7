//! Threat tiers and the policy file.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Predator,
    WildHerbivore,
    Domestic,
    Unknown,
}

impl Tier {
    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Predator => "predator",
            Tier::WildHerbivore => "wild_herbivore",
            Tier::Domestic => "domestic",
            Tier::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    DeterHigh,
    DeterLow,
    LogOnly,
    Ignore,
}

impl Action {
    pub fn as_str(self) -> &'static str {
        match self {
            Action::DeterHigh => "deter_high",
            Action::DeterLow => "deter_low",
            Action::LogOnly => "log_only",
            Action::Ignore => "ignore",
        }
    }

    /// Deterrent length in seconds, for the two deterring actions.
    pub fn deterrent_duration_s(self) -> Option<f64> {
        match self {
            Action::DeterHigh => Some(10.0),
            Action::DeterLow => Some(3.0),
            Action::LogOnly | Action::Ignore => None,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Label to tier; labels not listed are [`Tier::Unknown`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Taxonomy(pub BTreeMap<String, Tier>);

impl Taxonomy {
    pub fn tier(&self, label: &str) -> Tier {
        self.0.get(label).copied().unwrap_or(Tier::Unknown)
    }
}

impl Default for Taxonomy {
    fn default() -> Self {
        Self(BTreeMap::from([
            ("lion".to_string(), Tier::Predator),
            ("cheetah".to_string(), Tier::Predator),
            ("cat".to_string(), Tier::Domestic),
        ]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TierActions {
    pub predator: Action,
    pub wild_herbivore: Action,
    pub domestic: Action,
    pub unknown: Action,
}

impl Default for TierActions {
    fn default() -> Self {
        Self {
            predator: Action::DeterHigh,
            wild_herbivore: Action::DeterLow,
            domestic: Action::Ignore,
            unknown: Action::LogOnly,
        }
    }
}

impl TierActions {
    pub fn get(&self, tier: Tier) -> Action {
        match tier {
            Tier::Predator => self.predator,
            Tier::WildHerbivore => self.wild_herbivore,
            Tier::Domestic => self.domestic,
            Tier::Unknown => self.unknown,
        }
    }
}

/// K-of-M opening rule plus the number of consecutive misses that closes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HysteresisParams {
    pub k: usize,
    pub m: usize,
    pub m_clear: usize,
}

impl Default for HysteresisParams {
    fn default() -> Self {
        Self { k: 3, m: 5, m_clear: 5 }
    }
}

impl HysteresisParams {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.k < 1 {
            v.push("hysteresis.k must be at least 1".to_string());
        }
        if self.k > self.m {
            v.push(format!("hysteresis.k ({}) must not exceed hysteresis.m ({})", self.k, self.m));
        }
        if self.m_clear < 1 {
            v.push("hysteresis.m_clear must be at least 1".to_string());
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub taxonomy: Taxonomy,
    pub tier_actions: TierActions,
    pub score_threshold: f64,
    pub hysteresis: HysteresisParams,
    pub cooldown_s: f64,
    pub deterrent_modes: Vec<String>,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            taxonomy: Taxonomy::default(),
            tier_actions: TierActions::default(),
            score_threshold: 0.5,
            hysteresis: HysteresisParams::default(),
            cooldown_s: 60.0,
            deterrent_modes: vec!["siren".into(), "strobe".into(), "ultrasonic".into()],
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("{line}:{column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid policy: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("{0}")]
    Io(String),
}

impl PolicyConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = self.hysteresis.violations();
        if !(0.0..=1.0).contains(&self.score_threshold) {
            v.push(format!("score_threshold ({}) must lie in [0, 1]", self.score_threshold));
        }
        if !(self.cooldown_s >= 0.0 && self.cooldown_s.is_finite()) {
            v.push(format!("cooldown_s ({}) must be a finite value >= 0", self.cooldown_s));
        }
        if self.deterrent_modes.is_empty() {
            v.push("deterrent_modes must list at least one mode".to_string());
        }
        if self.deterrent_modes.iter().any(|m| m.trim().is_empty()) {
            v.push("deterrent_modes must not contain empty names".to_string());
        }
        v
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(PolicyError::Invalid(v))
        }
    }

    pub fn from_json(text: &str) -> Result<Self, PolicyError> {
        let policy: PolicyConfig = serde_json::from_str(text).map_err(|e| PolicyError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        policy.validate()?;
        Ok(policy)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PolicyError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| PolicyError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn tier(&self, label: &str) -> Tier {
        self.taxonomy.tier(label)
    }
}

/// Taxonomy lookup followed by the tier's action.
pub fn decide_action(policy: &PolicyConfig, label: &str) -> (Tier, Action) {
    let tier = policy.tier(label);
    (tier, policy.tier_actions.get(tier))
}
